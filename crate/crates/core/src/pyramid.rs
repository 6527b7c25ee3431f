//! Complex steerable pyramid computed in the Fourier domain.
//!
//! The padded image spectrum is split by a tight frame of filters:
//!
//! * a highpass residual `H0(r)`, equal to 1 for `r >= pi/2`;
//! * bandpass levels `l = 1..=L`, each a raised-cosine (in log radius) band
//!   peaking at `pi / 2^(l+1)` with support inside `r < pi / 2^l`, times an
//!   angular factor `2 a_M cos^(M-1)(theta - theta_m)` restricted to the half
//!   plane where the cosine is positive (one-sided support gives complex,
//!   analytic coefficients);
//! * a lowpass residual supported inside `r < pi / 2^(L+1)`.
//!
//! Band `l` is decimated by `2^l` per axis and the lowpass residual by `2^L`.
//! Because every band lives inside the Nyquist disk of its decimated grid, the
//! decimation folds no energy, and the weighted energy
//! `|H0|^2 + sum_l 4^l |B_l|^2 / 2 + 4^L |L|^2` equals the energy of the
//! padded image (see [`SubbandSet::weighted_energy`]).

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// How the image is extended to the square FFT grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    /// Repeat the nearest border pixel. Identical to zero padding on images
    /// with a black border, and keeps constant images constant.
    #[default]
    Replicate,
    /// Fill with 0.0.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidParams {
    pub levels: usize,
    pub orientations: usize,
    /// Side of the padded square; `None` means the next power of two that
    /// covers the image.
    pub pad_to: Option<usize>,
    #[serde(default)]
    pub pad_mode: PadMode,
}

impl Default for PyramidParams {
    fn default() -> Self {
        Self {
            levels: 3,
            orientations: 6,
            pad_to: None,
            pad_mode: PadMode::Replicate,
        }
    }
}

impl PyramidParams {
    /// Padded side used for an image of the given dims.
    pub fn resolve_pad(&self, height: usize, width: usize) -> usize {
        self.pad_to.unwrap_or_else(|| height.max(width).next_power_of_two())
    }

    fn validate_structure(&self, pad: usize) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::invalid("pyramid needs at least one level"));
        }
        if self.orientations < 2 {
            return Err(Error::invalid("pyramid needs at least two orientations"));
        }
        let decimation = 1usize
            .checked_shl(self.levels as u32)
            .ok_or_else(|| Error::invalid("too many pyramid levels"))?;
        if !pad.is_multiple_of(decimation) || pad / decimation < 4 {
            return Err(Error::invalid(format!(
                "pad size {pad} must be a multiple of 2^levels = {decimation} with at least 4 samples left"
            )));
        }
        Ok(())
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let pad = self.resolve_pad(height, width);
        let extent = height.max(width);
        if pad < extent {
            return Err(Error::PadTooSmall { pad_to: pad, extent });
        }
        self.validate_structure(pad)
    }
}

/// Square map of complex coefficients, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffMap {
    pub side: usize,
    pub data: Vec<Complex64>,
}

impl CoeffMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[y * self.side + x]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// Magnitude map rescaled to its own maximum, for inspection dumps.
    pub fn magnitude_image(&self) -> GrayImage {
        let mags = self.magnitudes();
        let max = mags.iter().cloned().fold(0.0, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        GrayImage::from_fn(self.side, self.side, |x, y| mags[y * self.side + x] * scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    /// `bands[l - 1][m - 1]` holds level `l`, orientation `m`.
    pub bands: Vec<Vec<CoeffMap>>,
    pub highpass_residual: CoeffMap,
    pub lowpass_residual: CoeffMap,
    /// `(height, width)` of the source image.
    pub source_dims: (usize, usize),
    pub pad_to: usize,
}

impl SubbandSet {
    pub fn levels(&self) -> usize {
        self.bands.len()
    }

    pub fn orientations(&self) -> usize {
        self.bands.first().map_or(0, Vec::len)
    }

    /// 1-based lookup.
    pub fn band(&self, level: usize, orientation: usize) -> &CoeffMap {
        &self.bands[level - 1][orientation - 1]
    }

    /// Energy with each map weighted by its decimation area and the complex
    /// bands halved; equals the padded image energy for this filter bank.
    pub fn weighted_energy(&self) -> f64 {
        let levels = self.levels();
        let bands: f64 = self
            .bands
            .iter()
            .enumerate()
            .map(|(i, level)| {
                let area = (1u64 << (2 * (i + 1))) as f64;
                0.5 * area * level.iter().map(CoeffMap::energy).sum::<f64>()
            })
            .sum();
        self.highpass_residual.energy() + bands + (1u64 << (2 * levels)) as f64 * self.lowpass_residual.energy()
    }
}

/// Normalization so that `sum_m a^2 cos^(2(M-1))(theta - pi m / M) == 1`.
pub fn steering_constant(orientations: usize) -> f64 {
    let n = orientations - 1;
    // a^2 = 4^n (n!)^2 / (M (2n)!), evaluated in log space
    let ln_fact = |k: usize| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let ln_a2 = n as f64 * 4f64.ln() + 2.0 * ln_fact(n) - (orientations as f64).ln() - ln_fact(2 * n);
    (0.5 * ln_a2).exp()
}

/// Raised-cosine highpass with transition over `[edge/2, edge]`.
fn highpass_window(r: f64, edge: f64) -> f64 {
    if r >= edge {
        1.0
    } else if r <= edge / 2.0 {
        0.0
    } else {
        (0.5 * PI * (edge / r).log2()).cos()
    }
}

/// Complement of [`highpass_window`]: `hi^2 + lo^2 == 1`.
fn lowpass_window(r: f64, edge: f64) -> f64 {
    if r <= edge / 2.0 {
        1.0
    } else if r >= edge {
        0.0
    } else {
        (0.5 * PI * (edge / r).log2()).sin()
    }
}

/// Signed angular frequency of DFT bin `k` on an `n`-point grid.
fn bin_frequency(k: usize, n: usize) -> f64 {
    let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * PI * signed / n as f64
}

/// Precomputed Fourier-domain filter bank for one grid size.
#[derive(Clone, Debug)]
pub struct Pyramid {
    params: PyramidParams,
    pad: usize,
    highpass: Vec<f64>,
    /// `[level][orientation]` full filters (radial times angular).
    bands: Vec<Vec<Vec<f64>>>,
    lowpass: Vec<f64>,
}

impl Pyramid {
    /// Filter bank for images of the given dims.
    pub fn new(params: PyramidParams, height: usize, width: usize) -> Result<Self> {
        params.validate(height, width)?;
        Ok(Self::for_pad(params, params.resolve_pad(height, width)))
    }

    fn for_pad(params: PyramidParams, pad: usize) -> Self {
        let (levels, orients) = (params.levels, params.orientations);
        let n = pad;
        let gain = 2.0 * steering_constant(orients);
        let power = (orients - 1) as i32;

        let mut highpass = vec![0.0; n * n];
        let mut lowpass = vec![0.0; n * n];
        let mut bands = vec![vec![vec![0.0; n * n]; orients]; levels];

        for ky in 0..n {
            let wy = bin_frequency(ky, n);
            for kx in 0..n {
                let wx = bin_frequency(kx, n);
                let idx = ky * n + kx;
                let r = wx.hypot(wy);
                let theta = wy.atan2(wx);

                highpass[idx] = highpass_window(r, PI / 2.0);
                let mut low = lowpass_window(r, PI / 2.0);
                for (l, level) in bands.iter_mut().enumerate() {
                    let edge = PI / (1u64 << (l + 2)) as f64;
                    let radial = low * highpass_window(r, edge);
                    low *= lowpass_window(r, edge);
                    if radial == 0.0 {
                        continue;
                    }
                    for (m, filter) in level.iter_mut().enumerate() {
                        let c = (theta - PI * m as f64 / orients as f64).cos();
                        if c > 0.0 {
                            filter[idx] = radial * gain * c.powi(power);
                        }
                    }
                }
                lowpass[idx] = low;
            }
        }

        Self {
            params,
            pad,
            highpass,
            bands,
            lowpass,
        }
    }

    pub fn params(&self) -> &PyramidParams {
        &self.params
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Places the image in the center of the padded grid.
    fn padded(&self, img: &GrayImage) -> Vec<Complex64> {
        let n = self.pad;
        let (h, w) = img.dims();
        let (oy, ox) = ((n - h) / 2, (n - w) / 2);
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for y in 0..n {
            for x in 0..n {
                let inside = (oy..oy + h).contains(&y) && (ox..ox + w).contains(&x);
                let v = match (inside, self.params.pad_mode) {
                    (true, _) => img.get(x - ox, y - oy),
                    (false, PadMode::Zero) => 0.0,
                    (false, PadMode::Replicate) => {
                        let sx = x.clamp(ox, ox + w - 1) - ox;
                        let sy = y.clamp(oy, oy + h - 1) - oy;
                        img.get(sx, sy)
                    }
                };
                out[y * n + x] = Complex64::new(v, 0.0);
            }
        }
        out
    }

    /// Energy of the padded image, the reference for
    /// [`SubbandSet::weighted_energy`].
    pub fn padded_energy(&self, img: &GrayImage) -> f64 {
        self.padded(img).iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn decompose(&self, img: &GrayImage) -> Result<SubbandSet> {
        let extent = img.height().max(img.width());
        if self.pad < extent {
            return Err(Error::PadTooSmall {
                pad_to: self.pad,
                extent,
            });
        }
        let n = self.pad;
        let mut spectrum = self.padded(img);
        fft2(&mut spectrum, n, false);

        let levels = self.params.levels;
        let bands = self
            .bands
            .iter()
            .enumerate()
            .map(|(l, level)| {
                let factor = 1usize << (l + 1);
                level
                    .iter()
                    .map(|filter| filter_and_decimate(&spectrum, filter, n, factor))
                    .collect()
            })
            .collect();

        Ok(SubbandSet {
            bands,
            highpass_residual: filter_and_decimate(&spectrum, &self.highpass, n, 1),
            lowpass_residual: filter_and_decimate(&spectrum, &self.lowpass, n, 1 << levels),
            source_dims: img.dims(),
            pad_to: n,
        })
    }
}

pub fn build_pyramid(img: &GrayImage, params: &PyramidParams) -> Result<SubbandSet> {
    let (h, w) = img.dims();
    Pyramid::new(*params, h, w)?.decompose(img)
}

/// Multiplies the spectrum by `filter`, then produces the spatial samples at
/// every `factor`-th position by folding the spectrum onto the coarse grid
/// and inverting there. Equivalent to a full-size inverse transform followed
/// by plain decimation.
fn filter_and_decimate(spectrum: &[Complex64], filter: &[f64], n: usize, factor: usize) -> CoeffMap {
    let side = n / factor;
    let mut folded = vec![Complex64::new(0.0, 0.0); side * side];
    for ky in 0..n {
        let row = (ky % side) * side;
        for kx in 0..n {
            let g = filter[ky * n + kx];
            if g != 0.0 {
                folded[row + kx % side] += spectrum[ky * n + kx] * g;
            }
        }
    }
    fft2(&mut folded, side, true);
    let scale = 1.0 / (n * n) as f64;
    folded.iter_mut().for_each(|c| *c *= scale);
    CoeffMap { side, data: folded }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Unnormalized in-place 2-D DFT of a square row-major grid.
pub(crate) fn fft2(data: &mut [Complex64], side: usize, inverse: bool) {
    let fft = plan(side, inverse);
    for row in data.chunks_exact_mut(side) {
        fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); side];
    for x in 0..side {
        for y in 0..side {
            column[y] = data[y * side + x];
        }
        fft.process(&mut column);
        for y in 0..side {
            data[y * side + x] = column[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    /// Direct O(n^4) DFT, independent of rustfft.
    fn naive_dft2(data: &[Complex64], n: usize, inverse: bool) -> Vec<Complex64> {
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for ky in 0..n {
            for kx in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let phase = sign * 2.0 * PI * ((kx * x + ky * y) % n) as f64 / n as f64;
                        acc += data[y * n + x] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[ky * n + kx] = acc;
            }
        }
        out
    }

    #[test]
    fn fft2_matches_direct_dft() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Complex64> = (0..n * n).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        for inverse in [false, true] {
            let mut fast = data.clone();
            fft2(&mut fast, n, inverse);
            let slow = naive_dft2(&data, n, inverse);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn steering_constant_makes_orientations_sum_to_one() {
        for m in [2usize, 3, 4, 6, 8] {
            let a2 = steering_constant(m).powi(2);
            for step in 0..37 {
                let theta = step as f64 * 0.17;
                let s: f64 = (0..m)
                    .map(|k| (theta - PI * k as f64 / m as f64).cos().powi(2 * (m as i32 - 1)))
                    .sum();
                assert!((a2 * s - 1.0).abs() < 1e-12, "M={m}");
            }
        }
    }

    #[test]
    fn radial_windows_tile_the_spectrum() {
        let p = Pyramid::new(PyramidParams::default(), 28, 28).unwrap();
        let n = p.pad();
        for idx in 0..n * n {
            let mut total = p.highpass[idx].powi(2) + p.lowpass[idx].powi(2);
            let ky = idx / n;
            let kx = idx % n;
            let (wx, wy) = (bin_frequency(kx, n), bin_frequency(ky, n));
            let mirror = ((n - ky) % n) * n + (n - kx) % n;
            for level in &p.bands {
                for f in level {
                    // a band and its mirror image together carry 4x the energy
                    total += 0.25 * (f[idx].powi(2) + f[mirror].powi(2));
                }
            }
            assert!((total - 1.0).abs() < 1e-12, "bin ({wx}, {wy}) sums to {total}");
        }
    }

    #[test]
    fn band_shapes_follow_dyadic_decimation() {
        let s = build_pyramid(&random_image(28, 28, 3), &PyramidParams::default()).unwrap();
        assert_eq!(s.pad_to, 32);
        assert_eq!(s.levels(), 3);
        assert_eq!(s.orientations(), 6);
        for l in 1..=3 {
            for m in 1..=6 {
                assert_eq!(s.band(l, m).side, 32 >> l);
            }
        }
        assert_eq!(s.highpass_residual.side, 32);
        assert_eq!(s.lowpass_residual.side, 4);
        assert_eq!(s.source_dims, (28, 28));
    }

    #[test]
    fn folded_inverse_equals_full_inverse_then_decimation() {
        let p = Pyramid::new(PyramidParams::default(), 28, 28).unwrap();
        let img = random_image(28, 28, 5);
        let n = p.pad();
        let mut spectrum = p.padded(&img);
        fft2(&mut spectrum, n, false);
        for (l, level) in p.bands.iter().enumerate() {
            let factor = 1 << (l + 1);
            for filter in level {
                let fast = filter_and_decimate(&spectrum, filter, n, factor);
                let masked: Vec<Complex64> = spectrum.iter().zip(filter).map(|(s, g)| s * g).collect();
                let full = naive_dft2(&masked, n, true);
                let side = n / factor;
                for y in 0..side {
                    for x in 0..side {
                        let reference = full[y * factor * n + x * factor] / (n * n) as f64;
                        assert!((fast.get(x, y) - reference).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_images_have_no_bandpass_energy() {
        for v in [0.0, 0.37, 1.0] {
            let s = build_pyramid(&GrayImage::filled(28, 28, v), &PyramidParams::default()).unwrap();
            for level in &s.bands {
                for band in level {
                    assert!(band.data.iter().all(|c| c.norm() < 1e-8));
                }
            }
            assert!(s.highpass_residual.data.iter().all(|c| c.norm() < 1e-8));
            assert!(s.lowpass_residual.data.iter().all(|c| (c.re - v).abs() < 1e-9));
        }
    }

    #[test]
    fn zero_padding_exposes_the_image_border() {
        let params = PyramidParams {
            pad_mode: PadMode::Zero,
            ..PyramidParams::default()
        };
        let s = build_pyramid(&GrayImage::filled(28, 28, 0.5), &params).unwrap();
        assert!(s.band(1, 1).energy() > 1e-3);
    }

    #[test]
    fn decomposition_is_linear() {
        let params = PyramidParams::default();
        let x = random_image(28, 28, 10);
        let y = random_image(28, 28, 11);
        let (a, b) = (0.3, 0.6);
        let mix = GrayImage::from_fn(28, 28, |i, j| a * x.get(i, j) + b * y.get(i, j));
        let (px, py, pm) = (
            build_pyramid(&x, &params).unwrap(),
            build_pyramid(&y, &params).unwrap(),
            build_pyramid(&mix, &params).unwrap(),
        );
        let check = |m: &CoeffMap, mx: &CoeffMap, my: &CoeffMap| {
            for i in 0..m.data.len() {
                assert!((m.data[i] - (mx.data[i] * a + my.data[i] * b)).norm() < 1e-10);
            }
        };
        for l in 1..=3 {
            for o in 1..=6 {
                check(pm.band(l, o), px.band(l, o), py.band(l, o));
            }
        }
        check(&pm.highpass_residual, &px.highpass_residual, &py.highpass_residual);
        check(&pm.lowpass_residual, &px.lowpass_residual, &py.lowpass_residual);
    }

    #[test]
    fn weighted_energy_matches_padded_energy() {
        for (seed, params) in [
            (20, PyramidParams::default()),
            (
                21,
                PyramidParams {
                    levels: 2,
                    orientations: 4,
                    pad_to: Some(64),
                    pad_mode: PadMode::Zero,
                },
            ),
        ] {
            let img = random_image(28, 28, seed);
            let p = Pyramid::new(params, 28, 28).unwrap();
            let s = p.decompose(&img).unwrap();
            let ratio = s.weighted_energy() / p.padded_energy(&img);
            assert!((ratio - 1.0).abs() < 1e-9, "ratio {ratio}");
        }
    }

    #[test]
    fn decomposition_is_deterministic() {
        let img = random_image(28, 28, 30);
        let params = PyramidParams::default();
        assert_eq!(
            build_pyramid(&img, &params).unwrap(),
            build_pyramid(&img, &params).unwrap()
        );
    }

    #[test]
    fn parameter_validation() {
        let img = random_image(28, 28, 0);
        let small = PyramidParams {
            pad_to: Some(16),
            ..PyramidParams::default()
        };
        assert!(matches!(
            build_pyramid(&img, &small),
            Err(Error::PadTooSmall { pad_to: 16, extent: 28 })
        ));
        let deep = PyramidParams {
            levels: 4,
            ..PyramidParams::default()
        };
        assert!(matches!(build_pyramid(&img, &deep), Err(Error::InvalidParams(_))));
        let one = PyramidParams {
            orientations: 1,
            ..PyramidParams::default()
        };
        assert!(build_pyramid(&img, &one).is_err());
        let odd = PyramidParams {
            pad_to: Some(36),
            ..PyramidParams::default()
        };
        assert!(build_pyramid(&img, &odd).is_err());
    }
}
