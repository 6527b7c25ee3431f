//! Quality-gated augmentation.
//!
//! Every synthetic slot `(image_index, slot)` draws up to `max_attempts`
//! elastic deformations of its source. The first candidate whose CW-SSIM
//! against the source is strictly greater than the threshold is appended to
//! the dataset; a slot with no passing candidate is dropped. Each candidate's
//! field seed comes from [`derive_seed`], so a candidate never depends on
//! what happened to any other candidate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cwssim::{Cwssim, CwssimParams};
use crate::elastic::{elastic_deform, ElasticParams, NormMode};
use crate::error::{Error, Result};
use crate::idx::{ImageSet, LabelSet};
use crate::image::GrayImage;

pub const HISTOGRAM_BINS: usize = 100;
pub const REPORT_SCHEMA: &str = "cwaug.augment-report/1";

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const ATTEMPT_MULTIPLIER: u64 = 0xd1b5_4a32_d192_ed03;
const SEED_DOMAIN: u64 = 0x6377_6175_672d_7631; // "cwaug-v1"

/// SplitMix64 finalizer; a bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one candidate. With any two arguments fixed the map is a
/// bijection in the third, so distinct masters (or distinct attempts)
/// never collide. These constants are part of the reproducibility
/// contract and must not change.
pub fn derive_seed(master: u64, slot_index: u64, attempt: u64) -> u64 {
    let h = mix64(master ^ SEED_DOMAIN);
    let h = mix64(h ^ slot_index.wrapping_mul(GOLDEN_GAMMA));
    mix64(h ^ attempt.wrapping_mul(ATTEMPT_MULTIPLIER))
}

/// Elastic parameters minus the seed, which is derived per candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformParams {
    pub alpha: f64,
    pub sigma: f64,
    #[serde(default)]
    pub norm: NormMode,
}

impl DeformParams {
    pub fn with_seed(&self, seed: u64) -> ElasticParams {
        ElasticParams {
            alpha: self.alpha,
            sigma: self.sigma,
            seed,
            norm: self.norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub elastic: DeformParams,
    pub cwssim: CwssimParams,
    /// Candidates must score strictly above this to be kept.
    pub threshold: f64,
    pub multiplier: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl AugmentConfig {
    /// Default threshold. Chosen by sweeping, not taken from any reference
    /// result.
    pub const DEFAULT_THRESHOLD: f64 = 0.7;

    pub fn new(alpha: f64, sigma: f64) -> Self {
        Self {
            elastic: DeformParams {
                alpha,
                sigma,
                norm: NormMode::PerPixel,
            },
            cwssim: CwssimParams::default(),
            threshold: Self::DEFAULT_THRESHOLD,
            multiplier: 1,
            max_attempts: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.elastic.with_seed(0).validate()?;
        self.cwssim.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
        if self.max_attempts < 1 {
            return Err(Error::invalid("max_attempts must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub image_index: usize,
    pub slot: usize,
    pub attempt: usize,
    pub score: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SlotOutcome {
    Accepted {
        image: GrayImage,
        score: f64,
        attempts: Vec<CandidateRecord>,
    },
    Rejected {
        attempts: Vec<CandidateRecord>,
    },
}

impl SlotOutcome {
    pub fn attempts(&self) -> &[CandidateRecord] {
        match self {
            SlotOutcome::Accepted { attempts, .. } | SlotOutcome::Rejected { attempts } => attempts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub schema: String,
    pub config: AugmentConfig,
    pub originals: usize,
    pub requested: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub exhausted_slots: usize,
    /// `(image_index, slot)` of every slot that ran out of attempts.
    pub exhausted: Vec<(usize, usize)>,
    pub scores: Vec<CandidateRecord>,
    pub histogram: Vec<u64>,
}

impl AugmentReport {
    pub fn candidates(&self) -> usize {
        self.scores.len()
    }

    pub fn accepted_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.accepted as f64 / self.requested as f64
        }
    }

    pub fn mean_score(&self) -> f64 {
        if self.scores.is_empty() {
            0.0
        } else {
            self.scores.iter().map(|r| r.score).sum::<f64>() / self.scores.len() as f64
        }
    }

    pub fn rejected_candidates(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.scores.iter().filter(|r| !r.accepted)
    }
}

pub fn histogram_bin(score: f64) -> usize {
    ((score * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn score_histogram<'a>(scores: impl IntoIterator<Item = &'a f64>) -> Vec<u64> {
    let mut hist = vec![0u64; HISTOGRAM_BINS];
    for &s in scores {
        hist[histogram_bin(s)] += 1;
    }
    hist
}

/// Output of [`augment_dataset`].
#[derive(Clone, Debug)]
pub struct Augmented {
    pub images: ImageSet,
    pub labels: LabelSet,
    pub report: AugmentReport,
}

/// Config plus a CW-SSIM evaluator prepared for one image size.
#[derive(Clone, Debug)]
pub struct Augmenter {
    cfg: AugmentConfig,
    scorer: Cwssim,
}

impl Augmenter {
    pub fn new(cfg: AugmentConfig, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        let scorer = Cwssim::new(cfg.cwssim.clone(), height, width)?;
        Ok(Self { cfg, scorer })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    pub fn scorer(&self) -> &Cwssim {
        &self.scorer
    }

    fn slot_index(&self, image_index: usize, slot: usize) -> u64 {
        (image_index as u64)
            .wrapping_mul(self.cfg.multiplier as u64)
            .wrapping_add(slot as u64)
    }

    /// The deterministic candidate for `(image_index, slot, attempt)`.
    pub fn candidate(&self, img: &GrayImage, image_index: usize, slot: usize, attempt: usize) -> Result<GrayImage> {
        let seed = derive_seed(self.cfg.seed, self.slot_index(image_index, slot), attempt as u64);
        elastic_deform(img, &self.cfg.elastic.with_seed(seed))
    }

    pub fn try_augment_one(&self, img: &GrayImage, image_index: usize, slot: usize) -> Result<SlotOutcome> {
        let source = self.scorer.decompose(img)?;
        let mut attempts = Vec::new();
        for attempt in 0..self.cfg.max_attempts {
            let candidate = self.candidate(img, image_index, slot, attempt)?;
            let score = self
                .scorer
                .score_subbands(&source, &self.scorer.decompose(&candidate)?)?;
            let accepted = score > self.cfg.threshold;
            attempts.push(CandidateRecord {
                image_index,
                slot,
                attempt,
                score,
                accepted,
            });
            if accepted {
                return Ok(SlotOutcome::Accepted {
                    image: candidate,
                    score,
                    attempts,
                });
            }
        }
        Ok(SlotOutcome::Rejected { attempts })
    }

    pub fn augment_dataset(&self, images: &ImageSet, labels: &LabelSet) -> Result<Augmented> {
        if images.len() != labels.len() {
            return Err(Error::LabelCountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if !images.is_empty() && (images.rows(), images.cols()) != self.scorer.dims() {
            return Err(Error::DimMismatch {
                left: self.scorer.dims(),
                right: (images.rows(), images.cols()),
            });
        }
        let multiplier = self.cfg.multiplier;
        let outcomes: Vec<SlotOutcome> = (0..images.len() * multiplier)
            .into_par_iter()
            .map(|k| {
                let (i, s) = (k / multiplier, k % multiplier);
                self.try_augment_one(&images.images()[i], i, s)
            })
            .collect::<Result<_>>()?;

        let mut out_images = images.images().to_vec();
        let mut out_labels = labels.labels().to_vec();
        let mut scores = Vec::new();
        let mut exhausted = Vec::new();
        for (k, outcome) in outcomes.into_iter().enumerate() {
            let (i, s) = (k / multiplier, k % multiplier);
            match outcome {
                SlotOutcome::Accepted { image, attempts, .. } => {
                    out_images.push(image);
                    out_labels.push(labels.labels()[i]);
                    scores.extend(attempts);
                }
                SlotOutcome::Rejected { attempts } => {
                    exhausted.push((i, s));
                    scores.extend(attempts);
                }
            }
        }
        let accepted = scores.iter().filter(|r| r.accepted).count();
        let report = AugmentReport {
            schema: REPORT_SCHEMA.to_string(),
            config: self.cfg.clone(),
            originals: images.len(),
            requested: images.len() * multiplier,
            accepted,
            rejected: scores.len() - accepted,
            exhausted_slots: exhausted.len(),
            exhausted,
            histogram: score_histogram(scores.iter().map(|r| &r.score)),
            scores,
        };
        Ok(Augmented {
            images: ImageSet::new(images.rows(), images.cols(), out_images)?,
            labels: LabelSet::new(out_labels),
            report,
        })
    }
}

pub fn try_augment_one(img: &GrayImage, cfg: &AugmentConfig, image_index: usize, slot: usize) -> Result<SlotOutcome> {
    let (h, w) = img.dims();
    Augmenter::new(cfg.clone(), h, w)?.try_augment_one(img, image_index, slot)
}

/// Runs the gate over every `(image, slot)` pair. Uses the ambient rayon
/// pool; results do not depend on its size.
pub fn augment_dataset(images: &ImageSet, labels: &LabelSet, cfg: &AugmentConfig) -> Result<Augmented> {
    Augmenter::new(cfg.clone(), images.rows(), images.cols())?.augment_dataset(images, labels)
}
