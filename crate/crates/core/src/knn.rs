//! k-nearest-neighbour classifier used to compare augmented training sets.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cwssim::{Cwssim, CwssimParams};
use crate::error::{Error, Result};
use crate::idx::{ImageSet, LabelSet};
use crate::image::GrayImage;
use crate::pyramid::SubbandSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    EuclideanPixel,
    OneMinusCwssim,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::EuclideanPixel => "euclidean-pixel",
            Metric::OneMinusCwssim => "one-minus-cwssim",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub metric: Metric,
    /// Used by [`Metric::OneMinusCwssim`] only.
    pub cwssim: CwssimParams,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub subset_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 3,
            metric: Metric::EuclideanPixel,
            cwssim: CwssimParams::default(),
            train_subset: None,
            test_subset: None,
            subset_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.k.is_multiple_of(2) {
            return Err(Error::invalid("k must be odd and >= 1"));
        }
        if self.metric == Metric::OneMinusCwssim {
            self.cwssim.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: Metric,
    pub k: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub error_rate: f64,
}

/// `size` distinct indices from `0..n` (all of them if `size >= n`), drawn
/// by a seeded shuffle and returned in ascending order.
pub fn subsample(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(size);
    idx.sort_unstable();
    idx
}

/// Two disjoint index sets of the requested sizes, from one seeded shuffle.
pub fn split_indices(n: usize, first: usize, second: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if first + second > n {
        return Err(Error::invalid(format!(
            "cannot draw {first} + {second} disjoint items from {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut a = idx[..first].to_vec();
    let mut b = idx[first..first + second].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

fn squared_distance(a: &GrayImage, b: &GrayImage) -> f64 {
    a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote over `(distance, label)` pairs already limited to the k
/// nearest. Ties go to the smaller mean distance, then the lower label.
fn vote(neighbours: &[(f64, u8)]) -> u8 {
    let mut tally: BTreeMap<u8, (usize, f64)> = BTreeMap::new();
    for &(d, label) in neighbours {
        let e = tally.entry(label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let mut best: Option<(u8, usize, f64)> = None;
    for (&label, &(count, sum)) in &tally {
        let mean = sum / count as f64;
        let better = match best {
            None => true,
            Some((_, bc, bm)) => count > bc || (count == bc && mean < bm),
        };
        if better {
            best = Some((label, count, mean));
        }
    }
    best.map(|b| b.0).expect("at least one neighbour")
}

/// Picks the k nearest by `(distance, training index)`.
fn nearest(distances: impl Iterator<Item = f64>, labels: &[u8], k: usize) -> Vec<(f64, u8)> {
    let mut all: Vec<(f64, usize)> = distances.enumerate().map(|(i, d)| (d, i)).collect();
    let k = k.min(all.len());
    all.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d, i)| (d, labels[i])).collect()
}

/// Training data prepared for repeated queries.
pub struct Classifier<'a> {
    images: &'a ImageSet,
    labels: &'a [u8],
    cfg: EvalConfig,
    cwssim: Option<(Cwssim, Vec<SubbandSet>)>,
}

impl<'a> Classifier<'a> {
    pub fn new(images: &'a ImageSet, labels: &'a LabelSet, cfg: &EvalConfig) -> Result<Self> {
        cfg.validate()?;
        if images.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if images.len() != labels.len() {
            return Err(Error::LabelCountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        let cwssim = match cfg.metric {
            Metric::EuclideanPixel => None,
            Metric::OneMinusCwssim => {
                let scorer = Cwssim::new(cfg.cwssim.clone(), images.rows(), images.cols())?;
                let bands = images
                    .images()
                    .par_iter()
                    .map(|img| scorer.decompose(img))
                    .collect::<Result<Vec<_>>>()?;
                Some((scorer, bands))
            }
        };
        Ok(Self {
            images,
            labels: labels.labels(),
            cfg: cfg.clone(),
            cwssim,
        })
    }

    /// Distance between a query and training item `i`.
    pub fn distances(&self, query: &GrayImage) -> Result<Vec<f64>> {
        if query.dims() != (self.images.rows(), self.images.cols()) {
            return Err(Error::DimMismatch {
                left: (self.images.rows(), self.images.cols()),
                right: query.dims(),
            });
        }
        match &self.cwssim {
            None => Ok(self
                .images
                .images()
                .iter()
                .map(|t| squared_distance(query, t).sqrt())
                .collect()),
            Some((scorer, bands)) => {
                let q = scorer.decompose(query)?;
                bands
                    .iter()
                    .map(|b| scorer.score_subbands(&q, b).map(|s| 1.0 - s))
                    .collect()
            }
        }
    }

    pub fn classify(&self, query: &GrayImage) -> Result<u8> {
        let d = self.distances(query)?;
        Ok(vote(&nearest(d.into_iter(), self.labels, self.cfg.k)))
    }
}

pub fn knn_classify(images: &ImageSet, labels: &LabelSet, query: &GrayImage, cfg: &EvalConfig) -> Result<u8> {
    Classifier::new(images, labels, cfg)?.classify(query)
}

/// Fraction of misclassified test items. Subset sizes in `cfg` are applied
/// to each set independently with `cfg.subset_seed`.
pub fn evaluate(
    train_images: &ImageSet,
    train_labels: &LabelSet,
    test_images: &ImageSet,
    test_labels: &LabelSet,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    if test_images.len() != test_labels.len() {
        return Err(Error::LabelCountMismatch {
            images: test_images.len(),
            labels: test_labels.len(),
        });
    }
    let (train_images, train_labels) = match cfg.train_subset {
        Some(n) => {
            let idx = subsample(train_images.len(), n, cfg.subset_seed);
            (train_images.select(&idx), train_labels.select(&idx))
        }
        None => (train_images.clone(), train_labels.clone()),
    };
    let (test_images, test_labels) = match cfg.test_subset {
        Some(n) => {
            let idx = subsample(test_images.len(), n, cfg.subset_seed ^ 0x7465_7374);
            (test_images.select(&idx), test_labels.select(&idx))
        }
        None => (test_images.clone(), test_labels.clone()),
    };
    let classifier = Classifier::new(&train_images, &train_labels, cfg)?;
    let errors = test_images
        .images()
        .par_iter()
        .zip(test_labels.labels().par_iter())
        .map(|(img, &label)| classifier.classify(img).map(|p| usize::from(p != label)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    let error_rate = if test_images.is_empty() {
        log::warn!("empty test set; reporting error rate 0");
        0.0
    } else {
        errors as f64 / test_images.len() as f64
    };
    Ok(EvalResult {
        metric: cfg.metric,
        k: cfg.k,
        train_size: train_images.len(),
        test_size: test_images.len(),
        error_rate,
    })
}
