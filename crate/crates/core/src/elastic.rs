//! Elastic deformation driven by a smoothed random displacement field.
//!
//! A field of i.i.d. uniform vectors is convolved with a Gaussian, normalized,
//! scaled by `alpha` and applied by backward warping: the output pixel at
//! `(x, y)` samples the source at `(x + alpha*ux, y + alpha*uy)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Per-pixel magnitudes below this are treated as zero by the normalizer.
pub const DEGENERATE_MAGNITUDE: f64 = 1e-12;

/// How the smoothed field is normalized before scaling by `alpha`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Every pixel gets a unit vector, so each pixel moves exactly `alpha`.
    #[default]
    PerPixel,
    /// One scale for the whole field so that the RMS vector magnitude is 1.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    pub alpha: f64,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub norm: NormMode,
}

impl ElasticParams {
    pub fn new(alpha: f64, sigma: f64, seed: u64) -> Self {
        Self {
            alpha,
            sigma,
            seed,
            norm: NormMode::PerPixel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid("alpha must be >= 0"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be > 0"));
        }
        Ok(())
    }
}

/// Row-major `(dx, dy)` vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    pub fn magnitude(&self, i: usize) -> f64 {
        self.dx[i].hypot(self.dy[i])
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.dx.iter_mut().chain(self.dy.iter_mut()).for_each(|v| *v *= factor);
        self
    }

    /// Anisotropic total variation: sum of absolute forward differences of
    /// both components along both axes.
    pub fn total_variation(&self) -> f64 {
        let (w, h) = (self.width, self.height);
        let mut tv = 0.0;
        for comp in [&self.dx, &self.dy] {
            for y in 0..h {
                for x in 0..w {
                    let v = comp[y * w + x];
                    if x + 1 < w {
                        tv += (comp[y * w + x + 1] - v).abs();
                    }
                    if y + 1 < h {
                        tv += (comp[(y + 1) * w + x] - v).abs();
                    }
                }
            }
        }
        tv
    }
}

/// I.i.d. uniform `[-1, 1)` components from a ChaCha8 stream keyed by `seed`.
/// All `dx` values are drawn first, then all `dy` values.
pub fn gen_raw_field(height: usize, width: usize, seed: u64) -> DisplacementField {
    let n = width * height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || 2.0 * rng.random::<f64>() - 1.0;
    let dx = (0..n).map(|_| draw()).collect();
    let dy = (0..n).map(|_| draw()).collect();
    DisplacementField { width, height, dx, dy }
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / denom).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Correlates each row (`stride == 1`) or column with the kernel,
/// treating everything outside the field as zero.
fn convolve_axis(src: &[f64], width: usize, height: usize, kernel: &[f64], along_x: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    let (len, lines) = if along_x { (width, height) } else { (height, width) };
    let at = |line: usize, pos: usize| {
        if along_x {
            line * width + pos
        } else {
            pos * width + line
        }
    };
    for line in 0..lines {
        for pos in 0..len {
            let lo = (pos as isize - radius).max(0) as usize;
            let hi = ((pos as isize + radius) as usize).min(len - 1);
            let mut acc = 0.0;
            for q in lo..=hi {
                acc += kernel[(q as isize - pos as isize + radius) as usize] * src[at(line, q)];
            }
            out[at(line, pos)] = acc;
        }
    }
    out
}

/// Separable Gaussian blur of both components with zero padding.
pub fn gaussian_smooth(field: &DisplacementField, sigma: f64) -> Result<DisplacementField> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid("sigma must be > 0"));
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (field.width, field.height);
    let smooth = |c: &[f64]| {
        let rows = convolve_axis(c, w, h, &kernel, true);
        convolve_axis(&rows, w, h, &kernel, false)
    };
    Ok(DisplacementField {
        width: w,
        height: h,
        dx: smooth(&field.dx),
        dy: smooth(&field.dy),
    })
}

/// Rescales every vector to unit length; vectors shorter than
/// [`DEGENERATE_MAGNITUDE`] become `(0, 0)`.
pub fn normalize_field(field: &DisplacementField) -> DisplacementField {
    let mut out = field.clone();
    for i in 0..out.dx.len() {
        let m = field.magnitude(i);
        if m < DEGENERATE_MAGNITUDE {
            out.dx[i] = 0.0;
            out.dy[i] = 0.0;
        } else {
            out.dx[i] = field.dx[i] / m;
            out.dy[i] = field.dy[i] / m;
        }
    }
    out
}

/// Scales the whole field so the root-mean-square vector length is 1.
pub fn normalize_field_global(field: &DisplacementField) -> DisplacementField {
    let n = field.dx.len().max(1) as f64;
    let energy: f64 = (0..field.dx.len())
        .map(|i| field.dx[i].powi(2) + field.dy[i].powi(2))
        .sum();
    let rms = (energy / n).sqrt();
    if rms < DEGENERATE_MAGNITUDE {
        DisplacementField::zeros(field.height, field.width)
    } else {
        field.clone().scaled(1.0 / rms)
    }
}

/// The normalized field `u` (before scaling by `alpha`).
pub fn unit_field(height: usize, width: usize, params: &ElasticParams) -> Result<DisplacementField> {
    params.validate()?;
    let smoothed = gaussian_smooth(&gen_raw_field(height, width, params.seed), params.sigma)?;
    Ok(match params.norm {
        NormMode::PerPixel => normalize_field(&smoothed),
        NormMode::Global => normalize_field_global(&smoothed),
    })
}

/// The applied displacement `alpha * u`.
pub fn displacement(height: usize, width: usize, params: &ElasticParams) -> Result<DisplacementField> {
    Ok(unit_field(height, width, params)?.scaled(params.alpha))
}

/// Backward-warps `img` through a displacement field of matching shape.
pub fn warp(img: &GrayImage, field: &DisplacementField) -> Result<GrayImage> {
    if (field.height, field.width) != img.dims() {
        return Err(Error::DimMismatch {
            left: img.dims(),
            right: (field.height, field.width),
        });
    }
    let w = img.width();
    Ok(GrayImage::from_fn(w, img.height(), |x, y| {
        let i = y * w + x;
        img.bilinear_sample(x as f64 + field.dx[i], y as f64 + field.dy[i])
    }))
}

pub fn elastic_deform(img: &GrayImage, params: &ElasticParams) -> Result<GrayImage> {
    let (h, w) = img.dims();
    warp(img, &displacement(h, w, params)?)
}
