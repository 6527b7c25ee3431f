mod common;

use cwaug::pyramid::{Pyramid, PyramidParams};
use cwaug::{cwssim_window, Cwssim, CwssimParams, GrayImage};
use num_complex::Complex64;
use rand::Rng;

/// The window formula written out over real and imaginary parts.
fn direct(cx: &[(f64, f64)], cy: &[(f64, f64)], k: f64) -> f64 {
    let (mut re, mut im, mut ex, mut ey) = (0.0, 0.0, 0.0, 0.0);
    for (&(a, b), &(c, d)) in cx.iter().zip(cy) {
        // (a + bi)(c - di)
        re += a * c + b * d;
        im += b * c - a * d;
        ex += a * a + b * b;
        ey += c * c + d * d;
    }
    (2.0 * (re * re + im * im).sqrt() + k) / (ex + ey + k)
}

#[test]
fn window_matches_direct_evaluation() {
    let mut rng = common::rng(3);
    for trial in 0..1000 {
        let n = rng.random_range(1..=64);
        let scale = [0.01, 1.0, 10.0][trial % 3];
        let mut draw = || -> Vec<(f64, f64)> {
            (0..n)
                .map(|_| {
                    (
                        scale * (rng.random::<f64>() * 2.0 - 1.0),
                        scale * (rng.random::<f64>() * 2.0 - 1.0),
                    )
                })
                .collect()
        };
        let (x, y) = (draw(), draw());
        let k = 0.03;
        let cx: Vec<Complex64> = x.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        let cy: Vec<Complex64> = y.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        let got = cwssim_window(&cx, &cy, k).unwrap();
        assert!((got - direct(&x, &y, k)).abs() < 1e-12, "trial {trial}");
    }
    let hand = cwssim_window(&[Complex64::new(2.0, 0.0)], &[Complex64::new(1.0, 0.0)], 0.03).unwrap();
    assert!((hand - 4.03 / 5.03).abs() < 1e-12);
}

#[test]
fn symmetric_and_bounded() {
    let scorer = Cwssim::new(CwssimParams::default(), 28, 28).unwrap();
    let mut rng = common::rng(5);
    for _ in 0..50 {
        let a = common::random_image(&mut rng, 28, 28);
        let b = common::random_image(&mut rng, 28, 28);
        let ab = scorer.score(&a, &b).unwrap();
        let ba = scorer.score(&b, &a).unwrap();
        assert!((0.0..=1.0).contains(&ab));
        assert!((ab - ba).abs() < 1e-12);
    }
}

#[test]
fn noise_lowers_the_mean_index() {
    let (images, _) = common::fixture();
    let scorer = Cwssim::new(CwssimParams::default(), 28, 28).unwrap();
    let mut means = vec![];
    for eps in [0.05, 0.1, 0.2, 0.4] {
        let mut total = 0.0;
        for trial in 0..20u64 {
            let x = &images.images()[(trial as usize) * 250];
            let mut rng = common::rng(1000 + trial);
            let noisy = GrayImage::from_fn(28, 28, |c, r| x.get(c, r) + eps * (2.0 * rng.random::<f64>() - 1.0));
            total += scorer.score(x, &noisy).unwrap();
        }
        means.push(total / 20.0);
    }
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
}

fn relative_magnitude_change(pyramid: &Pyramid, x: &GrayImage, level: usize) -> f64 {
    let a = pyramid.decompose(x).unwrap();
    let b = pyramid.decompose(&x.circshift(1, 0)).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for m in 1..=a.orientations() {
        let (ma, mb) = (a.band(level, m).magnitudes(), b.band(level, m).magnitudes());
        for (p, q) in ma.iter().zip(&mb) {
            num += (p - q).powi(2);
            den += p * p;
        }
    }
    (num / den).sqrt()
}

#[test]
fn shift_mostly_rotates_phase() {
    let (images, _) = common::fixture();
    let pyramid = Pyramid::new(PyramidParams::default(), 28, 28).unwrap();
    let x = &images.images()[cwaug::knn::subsample(5000, 50, 1)[0]];
    let changes: Vec<f64> = (1..=3).map(|l| relative_magnitude_change(&pyramid, x, l)).collect();
    // coarse bands barely move; finer bands are only partially shift-invariant
    assert!(changes[2] < 0.05, "{changes:?}");
    for (got, pinned) in changes.iter().zip([0.150, 0.095, 0.028]) {
        assert!((got - pinned).abs() < 0.01, "{changes:?}");
    }
}

#[test]
fn shifted_digit_beats_other_class() {
    let (images, labels) = common::fixture();
    let scorer = Cwssim::new(CwssimParams::default(), 28, 28).unwrap();
    let mut rng = common::rng(50);
    let mut wins = 0;
    for &i in &cwaug::knn::subsample(5000, 50, 7) {
        let x = &images.images()[i];
        let other = loop {
            let j = rng.random_range(0..5000);
            if labels.labels()[j] != labels.labels()[i] {
                break j;
            }
        };
        let shifted = scorer.score(x, &x.circshift(1, 1)).unwrap();
        let different = scorer.score(x, &images.images()[other]).unwrap();
        wins += usize::from(shifted > different);
    }
    assert!(wins >= 45, "{wins}/50");
}
