//! Elastic-deformation data augmentation with a complex wavelet structural
//! similarity (CW-SSIM) quality gate.
//!
//! * [`image`]: grayscale rasters, quantization and bilinear sampling.
//! * [`idx`]: MNIST IDX image/label files (raw or gzipped).
//! * [`elastic`]: smoothed random displacement fields and warping.
//! * [`pyramid`]: FFT-based complex steerable pyramid.
//! * [`cwssim`]: the CW-SSIM index over pyramid subbands.
//! * [`pipeline`]: deform, score, and keep candidates above a threshold.
//! * [`knn`]: a small k-NN evaluator to compare augmented training sets.

pub mod cwssim;
pub mod elastic;
pub mod error;
pub mod idx;
pub mod image;
pub mod knn;
pub mod pipeline;
pub mod pyramid;

pub use cwssim::{cwssim_index, cwssim_window, Cwssim, CwssimParams};
pub use elastic::{elastic_deform, DisplacementField, ElasticParams, NormMode};
pub use error::{Error, Result};
pub use idx::{ImageSet, LabelSet};
pub use image::GrayImage;
pub use knn::{evaluate, knn_classify, EvalConfig, EvalResult, Metric};
pub use pipeline::{augment_dataset, derive_seed, AugmentConfig, AugmentReport, Augmented, Augmenter};
pub use pyramid::{build_pyramid, PadMode, Pyramid, PyramidParams, SubbandSet};
