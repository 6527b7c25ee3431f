//! Grayscale raster model.
//!
//! Pixels are `f64` intensities in `[0, 1]`, stored row-major. Coordinates are
//! `(x = column, y = row)` with the origin at the top-left pixel center and
//! pixel centers at integer positions.

use std::io::{self, BufRead, Read, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels supplied for a {}x{} image",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, pixels })
    }

    /// Image with every pixel set to `value`, clamped into `[0, 1]`.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![clamp_unit(value); width * height],
        }
    }

    /// Builds an image from `f(x, y)`, clamping each value into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clamp_unit(f(x, y)));
            }
        }
        Self { width, height, pixels }
    }

    /// `pixel = byte / 255`.
    pub fn from_bytes(width: usize, height: usize, raw: &[u8]) -> Result<Self> {
        if raw.len() != width * height {
            return Err(Error::invalid(format!(
                "{} bytes supplied for a {}x{} image",
                raw.len(),
                width,
                height
            )));
        }
        Self::new(width, height, raw.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    /// Quantizes with round-half-up; inverse of [`GrayImage::from_bytes`].
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize(p)).collect()
    }

    /// Interleaved 8-bit RGB converted with Rec. 601 luma weights.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "{} bytes supplied for a {}x{} RGB image",
                rgb.len(),
                width,
                height
            )));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|c| {
                let luma = 0.299 * f64::from(c[0]) + 0.587 * f64::from(c[1]) + 0.114 * f64::from(c[2]);
                clamp_unit(luma / 255.0)
            })
            .collect();
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    fn get_or_zero(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.pixels[y as usize * self.width + x as usize]
        }
    }

    /// Bilinear interpolation at a real position. Neighbors outside the
    /// raster read as 0.0.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> f64 {
        if !x.is_finite() || !y.is_finite() {
            return 0.0;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        // Far outside: avoid i64 overflow on huge coordinates.
        if x0 < -2.0 || y0 < -2.0 || x0 > self.width as f64 + 1.0 || y0 > self.height as f64 + 1.0 {
            return 0.0;
        }
        let (xi, yi) = (x0 as i64, y0 as i64);
        let p00 = self.get_or_zero(xi, yi);
        let p10 = self.get_or_zero(xi + 1, yi);
        let p01 = self.get_or_zero(xi, yi + 1);
        let p11 = self.get_or_zero(xi + 1, yi + 1);
        let top = p00 * (1.0 - fx) + p10 * fx;
        let bottom = p01 * (1.0 - fx) + p11 * fx;
        clamp_unit(top * (1.0 - fy) + bottom * fy)
    }

    /// Circular shift: output(x, y) = input(x - dx, y - dy) modulo the raster.
    pub fn circshift(&self, dx: isize, dy: isize) -> Self {
        let (w, h) = (self.width as isize, self.height as isize);
        Self::from_fn(self.width, self.height, |x, y| {
            let sx = (x as isize - dx).rem_euclid(w) as usize;
            let sy = (y as isize - dy).rem_euclid(h) as usize;
            self.get(sx, sy)
        })
    }

    /// Writes a binary portable graymap (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.to_bytes())?;
        w.flush()
    }

    /// Reads a P5 (binary) or P2 (ASCII) graymap with maxval ≤ 255.
    pub fn read_pgm<R: Read>(r: R) -> Result<Self> {
        let mut reader = io::BufReader::new(r);
        let mut buf = Vec::new();
        reader
            .read_to_end(&mut buf)
            .map_err(|e| Error::invalid(format!("reading graymap: {e}")))?;
        parse_pgm(&buf)
    }
}

fn parse_pgm(buf: &[u8]) -> Result<GrayImage> {
    let bad = |m: &str| Error::invalid(format!("malformed graymap: {m}"));
    let mut pos = 0usize;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        // skip whitespace and comments
        while pos < buf.len() {
            if buf[pos].is_ascii_whitespace() {
                pos += 1;
            } else if buf[pos] == b'#' {
                let mut line = &buf[pos..];
                let mut skipped = Vec::new();
                let _ = line.read_until(b'\n', &mut skipped);
                pos += skipped.len();
            } else {
                break;
            }
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        header.push(std::str::from_utf8(&buf[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    let magic = header[0];
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(header[1])?, num(header[2])?, num(header[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    let n = width * height;
    let values: Vec<u8> = match magic {
        "P5" => {
            pos += 1;
            if buf.len() < pos + n {
                return Err(bad("truncated payload"));
            }
            buf[pos..pos + n].to_vec()
        }
        "P2" => {
            let text = std::str::from_utf8(&buf[pos..]).map_err(|_| bad("non-ASCII payload"))?;
            let vals = text
                .split_ascii_whitespace()
                .take(n)
                .map(|t| t.parse::<u8>().map_err(|_| bad("bad sample")))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != n {
                return Err(bad("truncated payload"));
            }
            vals
        }
        _ => return Err(bad("expected P2 or P5")),
    };
    if maxval == 255 {
        GrayImage::from_bytes(width, height, &values)
    } else {
        GrayImage::new(
            width,
            height,
            values
                .iter()
                .map(|&v| clamp_unit(f64::from(v) / maxval as f64))
                .collect(),
        )
    }
}

#[inline]
fn quantize(p: f64) -> u8 {
    (p * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[inline]
fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_conversion_endpoints() {
        let img = GrayImage::from_bytes(3, 1, &[0, 255, 128]).unwrap();
        assert_eq!(img.pixels()[0], 0.0);
        assert_eq!(img.pixels()[1], 1.0);
        assert!((img.pixels()[2] - 128.0 / 255.0).abs() < 1e-15);
        assert!((img.pixels()[2] - 0.50196).abs() < 1e-5);
        assert_eq!(img.to_bytes(), vec![0, 255, 128]);
    }

    #[test]
    fn every_byte_round_trips() {
        let raw: Vec<u8> = (0..=255).collect();
        let img = GrayImage::from_bytes(16, 16, &raw).unwrap();
        assert_eq!(img.to_bytes(), raw);
    }

    #[test]
    fn quantization_rounds_half_up() {
        // 0.5/255 above a level rounds up
        let img = GrayImage::new(2, 1, vec![0.5 / 255.0, 1.5 / 255.0]).unwrap();
        assert_eq!(img.to_bytes(), vec![1, 2]);
    }

    #[test]
    fn rejects_bad_pixels() {
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn luminance_conversion() {
        let img = GrayImage::from_rgb(2, 1, &[255, 255, 255, 255, 0, 0]).unwrap();
        assert!((img.pixels()[0] - 1.0).abs() < 1e-12);
        assert!((img.pixels()[1] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn bilinear_grid_points_are_exact() {
        let img = GrayImage::from_fn(5, 4, |x, y| (x * 7 + y * 3) as f64 / 40.0);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(img.bilinear_sample(x as f64, y as f64), img.get(x, y));
            }
        }
    }

    #[test]
    fn bilinear_midpoint_and_out_of_bounds() {
        let img = GrayImage::new(2, 1, vec![0.2, 0.6]).unwrap();
        assert!((img.bilinear_sample(0.5, 0.0) - 0.4).abs() < 1e-15);
        assert_eq!(img.bilinear_sample(-10.0, -10.0), 0.0);
        // half a pixel past the right edge blends with black
        assert!((img.bilinear_sample(1.5, 0.0) - 0.3).abs() < 1e-15);
        assert_eq!(img.bilinear_sample(f64::NAN, 0.0), 0.0);
        assert_eq!(img.bilinear_sample(1e300, 0.0), 0.0);
    }

    #[test]
    fn circshift_wraps() {
        let img = GrayImage::new(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(img.circshift(1, 0).pixels(), &[0.3, 0.1, 0.2]);
        assert_eq!(img.circshift(-1, 5).pixels(), &[0.2, 0.3, 0.1]);
    }

    #[test]
    fn pgm_round_trip() {
        let raw: Vec<u8> = (0..12).map(|i| i * 20).collect();
        let img = GrayImage::from_bytes(4, 3, &raw).unwrap();
        let mut out = Vec::new();
        img.write_pgm(&mut out).unwrap();
        assert!(out.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(GrayImage::read_pgm(&out[..]).unwrap(), img);

        let ascii = b"P2\n# comment\n2 2\n255\n0 255\n128 1\n";
        let img = GrayImage::read_pgm(&ascii[..]).unwrap();
        assert_eq!(img.to_bytes(), vec![0, 255, 128, 1]);
        assert!(GrayImage::read_pgm(&b"P6\n1 1\n255\n\0\0\0"[..]).is_err());
    }

    fn small_image() -> impl Strategy<Value = GrayImage> {
        (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..=1.0, w * h).prop_map(move |px| GrayImage::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn bilinear_is_bounded_by_its_neighbors(img in small_image(), x in -3.0f64..8.0, y in -3.0f64..8.0) {
            let (x0, y0) = (x.floor() as i64, y.floor() as i64);
            let n = [
                img.get_or_zero(x0, y0),
                img.get_or_zero(x0 + 1, y0),
                img.get_or_zero(x0, y0 + 1),
                img.get_or_zero(x0 + 1, y0 + 1),
            ];
            let lo = n.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = img.bilinear_sample(x, y);
            prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }

        #[test]
        fn bilinear_is_continuous(img in small_image(), x in -2.0f64..7.0, y in -2.0f64..7.0, d in -1e-6f64..1e-6) {
            let a = img.bilinear_sample(x, y);
            prop_assert!((img.bilinear_sample(x + d, y) - a).abs() <= 2e-6);
            prop_assert!((img.bilinear_sample(x, y + d) - a).abs() <= 2e-6);
        }

        #[test]
        fn byte_grids_round_trip(raw in proptest::collection::vec(any::<u8>(), 20)) {
            let img = GrayImage::from_bytes(5, 4, &raw).unwrap();
            prop_assert_eq!(img.to_bytes(), raw);
        }
    }
}
