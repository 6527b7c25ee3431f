//! Complex wavelet structural similarity.
//!
//! For two co-located windows of complex coefficients `cx`, `cy`:
//!
//! ```text
//!            2 |sum cx_i conj(cy_i)| + K
//! score = ---------------------------------
//!          sum |cx_i|^2 + sum |cy_i|^2 + K
//! ```
//!
//! The image-level index is the unweighted mean of the window scores over
//! every full window position, every orientation and every selected level.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::pyramid::{CoeffMap, Pyramid, PyramidParams, SubbandSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CwssimParams {
    pub k: f64,
    /// Odd side of the square window, in coefficient samples.
    pub window: usize,
    pub step: usize,
    /// 1-based pyramid levels included in the mean.
    pub levels_used: Vec<usize>,
    pub pyramid: PyramidParams,
}

impl Default for CwssimParams {
    fn default() -> Self {
        Self {
            k: 0.03,
            window: 7,
            step: 1,
            levels_used: vec![2],
            pyramid: PyramidParams::default(),
        }
    }
}

impl CwssimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::invalid("K must be > 0"));
        }
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::invalid("window must be odd and >= 3"));
        }
        if self.step < 1 {
            return Err(Error::invalid("step must be >= 1"));
        }
        if self.levels_used.is_empty() {
            return Err(Error::invalid("at least one pyramid level must be selected"));
        }
        if let Some(l) = self.levels_used.iter().find(|&&l| l < 1 || l > self.pyramid.levels) {
            return Err(Error::invalid(format!(
                "level {l} is outside 1..={}",
                self.pyramid.levels
            )));
        }
        Ok(())
    }
}

#[inline]
fn score_from_sums(cross: Complex64, energy_x: f64, energy_y: f64, k: f64) -> f64 {
    ((2.0 * cross.norm() + k) / (energy_x + energy_y + k)).min(1.0)
}

/// The window formula on two coefficient vectors.
pub fn cwssim_window(cx: &[Complex64], cy: &[Complex64], k: f64) -> Result<f64> {
    if cx.len() != cy.len() {
        return Err(Error::LengthMismatch(cx.len(), cy.len()));
    }
    if cx.is_empty() {
        return Err(Error::invalid("coefficient vectors must not be empty"));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid("K must be > 0"));
    }
    let mut cross = Complex64::new(0.0, 0.0);
    let (mut ex, mut ey) = (0.0, 0.0);
    for (a, b) in cx.iter().zip(cy) {
        cross += a * b.conj();
        ex += a.norm_sqr();
        ey += b.norm_sqr();
    }
    Ok(score_from_sums(cross, ex, ey, k))
}

/// Sum of window scores over all full window positions of one band pair,
/// plus the number of windows.
fn band_scores(x: &CoeffMap, y: &CoeffMap, window: usize, step: usize, k: f64) -> (f64, usize) {
    let side = x.side;
    let mut total = 0.0;
    let mut count = 0;
    let mut top = 0;
    while top + window <= side {
        let mut left = 0;
        while left + window <= side {
            let mut cross = Complex64::new(0.0, 0.0);
            let (mut ex, mut ey) = (0.0, 0.0);
            for row in top..top + window {
                let base = row * side;
                for i in base + left..base + left + window {
                    let (a, b) = (x.data[i], y.data[i]);
                    cross += a * b.conj();
                    ex += a.norm_sqr();
                    ey += b.norm_sqr();
                }
            }
            total += score_from_sums(cross, ex, ey, k);
            count += 1;
            left += step;
        }
        top += step;
    }
    (total, count)
}

/// A CW-SSIM evaluator with its filter bank built once for a fixed image size.
#[derive(Clone, Debug)]
pub struct Cwssim {
    params: CwssimParams,
    pyramid: Pyramid,
    dims: (usize, usize),
}

impl Cwssim {
    /// Evaluator for `height x width` images.
    pub fn new(params: CwssimParams, height: usize, width: usize) -> Result<Self> {
        params.validate()?;
        let pyramid = Pyramid::new(params.pyramid, height, width)?;
        let usable = params
            .levels_used
            .iter()
            .filter(|&&l| pyramid.pad() >> l >= params.window)
            .count();
        if usable == 0 {
            return Err(Error::ConfigUnusable { window: params.window });
        }
        Ok(Self {
            params,
            pyramid,
            dims: (height, width),
        })
    }

    pub fn params(&self) -> &CwssimParams {
        &self.params
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn check_dims(&self, img: &GrayImage) -> Result<()> {
        if img.dims() != self.dims {
            return Err(Error::DimMismatch {
                left: self.dims,
                right: img.dims(),
            });
        }
        Ok(())
    }

    pub fn decompose(&self, img: &GrayImage) -> Result<SubbandSet> {
        self.check_dims(img)?;
        self.pyramid.decompose(img)
    }

    pub fn score(&self, a: &GrayImage, b: &GrayImage) -> Result<f64> {
        if a.dims() != b.dims() {
            return Err(Error::DimMismatch {
                left: a.dims(),
                right: b.dims(),
            });
        }
        let (sa, sb) = (self.decompose(a)?, self.decompose(b)?);
        self.score_subbands(&sa, &sb)
    }

    /// Index from two decompositions produced by this evaluator.
    pub fn score_subbands(&self, a: &SubbandSet, b: &SubbandSet) -> Result<f64> {
        if a.source_dims != b.source_dims {
            return Err(Error::DimMismatch {
                left: a.source_dims,
                right: b.source_dims,
            });
        }
        let p = &self.params;
        let mut total = 0.0;
        let mut count = 0usize;
        for &level in &p.levels_used {
            let side = a.band(level, 1).side;
            if side < p.window {
                log::warn!(
                    "skipping level {level}: {side}x{side} map is smaller than the {w}x{w} window",
                    w = p.window
                );
                continue;
            }
            for m in 1..=a.orientations() {
                let (t, c) = band_scores(a.band(level, m), b.band(level, m), p.window, p.step, p.k);
                total += t;
                count += c;
            }
        }
        if count == 0 {
            return Err(Error::ConfigUnusable { window: p.window });
        }
        Ok((total / count as f64).clamp(0.0, 1.0))
    }
}

pub fn cwssim_index(a: &GrayImage, b: &GrayImage, params: &CwssimParams) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let (h, w) = a.dims();
    Cwssim::new(params.clone(), h, w)?.score(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn hand_evaluated_window() {
        let s = cwssim_window(&[c(2.0, 0.0)], &[c(1.0, 0.0)], 0.03).unwrap();
        assert!((s - 4.03 / 5.03).abs() < 1e-15);
        assert!((s - 0.801193).abs() < 1e-6);
    }

    #[test]
    fn identical_and_phase_rotated_windows_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<Complex64> = (0..49)
            .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        assert!((cwssim_window(&v, &v, 0.03).unwrap() - 1.0).abs() < 1e-12);
        for phi in [0.3, 1.0, 2.5, -3.0] {
            let rot: Vec<Complex64> = v.iter().map(|z| z * Complex64::from_polar(1.0, phi)).collect();
            assert!((cwssim_window(&rot, &v, 0.03).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_errors() {
        assert!(matches!(
            cwssim_window(&[c(1.0, 0.0)], &[], 0.03),
            Err(Error::LengthMismatch(1, 0))
        ));
        assert!(cwssim_window(&[], &[], 0.03).is_err());
        assert!(cwssim_window(&[c(1.0, 0.0)], &[c(1.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn constant_images_are_indistinguishable() {
        let a = GrayImage::filled(28, 28, 0.2);
        let b = GrayImage::filled(28, 28, 0.9);
        let s = cwssim_index(&a, &b, &CwssimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = GrayImage::from_fn(28, 28, |_, _| rng.random());
        let s = cwssim_index(&img, &img, &CwssimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unusable_configurations() {
        let img = GrayImage::filled(28, 28, 0.5);
        // level 3 of a 32 grid is 4x4
        let p = CwssimParams {
            levels_used: vec![3],
            ..CwssimParams::default()
        };
        assert!(matches!(
            cwssim_index(&img, &img, &p),
            Err(Error::ConfigUnusable { window: 7 })
        ));
        // a usable level keeps the index defined
        let p = CwssimParams {
            levels_used: vec![2, 3],
            ..CwssimParams::default()
        };
        assert!(cwssim_index(&img, &img, &p).is_ok());
        let p = CwssimParams {
            window: 4,
            ..CwssimParams::default()
        };
        assert!(matches!(cwssim_index(&img, &img, &p), Err(Error::InvalidParams(_))));
        let p = CwssimParams {
            levels_used: vec![4],
            ..CwssimParams::default()
        };
        assert!(cwssim_index(&img, &img, &p).is_err());
        let other = GrayImage::filled(27, 28, 0.5);
        assert!(matches!(
            cwssim_index(&img, &other, &CwssimParams::default()),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn window_count_and_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Complex64> = (0..256).map(|_| c(rng.random(), rng.random())).collect();
        let m = CoeffMap { side: 16, data };
        assert_eq!(band_scores(&m, &m, 7, 1, 0.03).1, 100);
        assert_eq!(band_scores(&m, &m, 7, 3, 0.03).1, 16);
        assert_eq!(band_scores(&m, &m, 7, 4, 0.03).1, 9);
        assert_eq!(band_scores(&m, &m, 17, 1, 0.03).1, 0);
    }
}
