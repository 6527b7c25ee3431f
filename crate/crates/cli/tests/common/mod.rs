#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cwaug::idx;
use cwaug::{ImageSet, LabelSet};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn fixture() -> (ImageSet, LabelSet) {
    let images = idx::read_images(File::open(data_path("mnist5k-images-idx3-ubyte.gz")).unwrap()).unwrap();
    let labels = idx::read_labels(File::open(data_path("mnist5k-labels-idx1-ubyte.gz")).unwrap(), true).unwrap();
    (images, labels)
}

/// Every `stride`-th fixture image, `n` of them, written as raw IDX files.
pub fn write_subset(dir: &Path, name: &str, n: usize, stride: usize, offset: usize) -> (PathBuf, PathBuf) {
    let (images, labels) = fixture();
    let idx: Vec<usize> = (0..n).map(|i| (offset + i * stride) % images.len()).collect();
    write_sets(dir, name, &images.select(&idx), &labels.select(&idx))
}

pub fn write_sets(dir: &Path, name: &str, images: &ImageSet, labels: &LabelSet) -> (PathBuf, PathBuf) {
    let ip = dir.join(format!("{name}-images.idx"));
    let lp = dir.join(format!("{name}-labels.idx"));
    idx::write_images(images, BufWriter::new(File::create(&ip).unwrap())).unwrap();
    idx::write_labels(labels, BufWriter::new(File::create(&lp).unwrap())).unwrap();
    (ip, lp)
}

pub fn cwaug<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_cwaug")).args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
