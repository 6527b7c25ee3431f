#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;

use cwaug::idx;
use cwaug::{GrayImage, ImageSet, LabelSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IMAGES: &str = "mnist5k-images-idx3-ubyte.gz";
pub const LABELS: &str = "mnist5k-labels-idx1-ubyte.gz";

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn fixture() -> (ImageSet, LabelSet) {
    let images = idx::read_images(File::open(data_path(IMAGES)).unwrap()).unwrap();
    let labels = idx::read_labels(File::open(data_path(LABELS)).unwrap(), true).unwrap();
    (images, labels)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.random())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
