//! Rendering a disk set into a summed Gaussian field, tanh normalization,
//! and inference-time thresholding.
//!
//! Each disk contributes `exp(-((x-xi)^2 + (y-yi)^2) / (2 sigma^2))` at every
//! pixel center. The isotropic kernel is separable, so a disk is evaluated as
//! the outer product of one column profile and one row profile; the field is
//! accumulated disk by disk in index order, which fixes the summation order.

use crate::error::{Error, Result};
use crate::types::{BinaryMask, DiskSet, ScalarField};

/// Output grid size and inference threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub width: usize,
    pub height: usize,
    pub alpha: f64,
}

impl RenderParams {
    pub fn new(width: usize, height: usize, alpha: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("render grid must be nonempty"));
        }
        check_alpha(alpha)?;
        Ok(RenderParams {
            width,
            height,
            alpha,
        })
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Per-disk separable profiles: `cols[c] = exp(-(c+0.5-x)^2 / 2s^2)` and the
/// same along rows.
#[derive(Debug, Clone)]
pub(crate) struct Profiles {
    pub cols: Vec<f64>,
    pub rows: Vec<f64>,
}

pub(crate) fn profiles(disks: &DiskSet, width: usize, height: usize) -> Result<Vec<Profiles>> {
    if let Some(what) = disks.first_non_finite() {
        return Err(Error::non_finite(what));
    }
    if width == 0 || height == 0 {
        return Err(Error::contract("render grid must be nonempty"));
    }
    let profile = |len: usize, mu: f64, inv_two_var: f64| -> Vec<f64> {
        (0..len)
            .map(|k| {
                let d = k as f64 + 0.5 - mu;
                (-d * d * inv_two_var).exp()
            })
            .collect()
    };
    Ok(disks
        .centers()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let s = disks.sigma_of(i);
            let inv = 1.0 / (2.0 * s * s);
            Profiles {
                cols: profile(width, c.x, inv),
                rows: profile(height, c.y, inv),
            }
        })
        .collect())
}

pub(crate) fn accumulate(profiles: &[Profiles], width: usize, height: usize) -> Vec<f64> {
    let mut data = vec![0.0; width * height];
    for p in profiles {
        for (row, &ey) in data.chunks_exact_mut(width).zip(&p.rows) {
            for (v, &ex) in row.iter_mut().zip(&p.cols) {
                *v += ey * ex;
            }
        }
    }
    data
}

/// Sum of the disks' Gaussian bumps sampled at pixel centers.
pub fn gaussian_field(disks: &DiskSet, width: usize, height: usize) -> Result<ScalarField> {
    let p = profiles(disks, width, height)?;
    Ok(ScalarField::from_raw(width, height, accumulate(&p, width, height)))
}

/// Squash every value through `tanh`, mapping `[0, inf)` onto `[0, 1)`.
pub fn normalize_tanh(field: &ScalarField) -> ScalarField {
    let data = field.data().iter().map(|v| v.tanh()).collect();
    ScalarField::from_raw(field.width(), field.height(), data)
}

/// Foreground wherever the (raw) field reaches `alpha`.
pub fn threshold_mask(field: &ScalarField, alpha: f64) -> Result<BinaryMask> {
    check_alpha(alpha)?;
    let data = field.data().iter().map(|&v| u8::from(v >= alpha)).collect();
    BinaryMask::new(field.width(), field.height(), data)
}

/// Render and threshold in one step.
pub fn render_mask(disks: &DiskSet, params: &RenderParams) -> Result<BinaryMask> {
    let field = gaussian_field(disks, params.width, params.height)?;
    threshold_mask(&field, params.alpha)
}

/// Radius at which an isolated disk's bump falls to `alpha`:
/// `sigma * sqrt(2 ln(1/alpha))`.
pub fn effective_radius(sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!("sigma must be positive, got {sigma}")));
    }
    check_alpha(alpha)?;
    Ok(sigma * (2.0 * (1.0 / alpha).ln()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AssocKind, Point};
    use proptest::prelude::*;

    /// Direct evaluation of the summed kernel, no separability.
    fn direct_field(disks: &DiskSet, w: usize, h: usize) -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for row in 0..h {
            for col in 0..w {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                out[row * w + col] = disks
                    .centers()
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let s = disks.sigma_of(i);
                        (-((x - c.x).powi(2) + (y - c.y).powi(2)) / (2.0 * s * s)).exp()
                    })
                    .sum();
            }
        }
        out
    }

    fn random_disks(seed: u64, n: usize, m: usize, w: usize) -> DiskSet {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..n)
            .map(|_| Point::new(rng.gen_range(0.0..w as f64), rng.gen_range(0.0..w as f64)))
            .collect();
        let sigmas = (0..m).map(|_| rng.gen_range(1.0..8.0)).collect();
        DiskSet::with_kind(centers, sigmas, AssocKind::for_counts(n, m)).unwrap()
    }

    #[test]
    fn peak_is_one_at_center_pixel() {
        let d = DiskSet::single(Point::new(10.5, 7.5), 3.0).unwrap();
        let f = gaussian_field(&d, 20, 20).unwrap();
        assert_eq!(f.get(10, 7), 1.0);
    }

    #[test]
    fn half_value_radius() {
        let sigma = 4.0;
        let r = sigma * (2.0 * 2f64.ln()).sqrt();
        // place the disk so that pixel (20, 10) sits exactly r to its right
        let d = DiskSet::single(Point::new(20.5 - r, 10.5), sigma).unwrap();
        let f = gaussian_field(&d, 32, 21).unwrap();
        assert!((f.get(20, 10) - 0.5).abs() < 1e-12, "{}", f.get(20, 10));
    }

    #[test]
    fn coincident_disks_double_the_field() {
        let c = Point::new(12.3, 9.7);
        let one = gaussian_field(&DiskSet::single(c, 2.5).unwrap(), 24, 24).unwrap();
        let two = DiskSet::new(vec![c, c], vec![2.5], vec![0, 0]).unwrap();
        let two = gaussian_field(&two, 24, 24).unwrap();
        for (a, b) in one.data().iter().zip(two.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn matches_direct_evaluation() {
        for seed in 0..5 {
            let d = random_disks(seed, 7, 3, 40);
            let f = gaussian_field(&d, 40, 33).unwrap();
            let direct = direct_field(&d, 40, 33);
            for (a, b) in f.data().iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-14 * b.max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn field_bounded_by_disk_count() {
        let d = random_disks(9, 6, 6, 30);
        let f = gaussian_field(&d, 30, 30).unwrap();
        assert!(f.data().iter().all(|&v| v > 0.0 && v <= 6.0));
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let d = DiskSet::single(Point::new(f64::NAN, 1.0), 1.0).unwrap();
        match gaussian_field(&d, 4, 4) {
            Err(Error::NonFinite { what, .. }) => assert_eq!(what, "center 0 x"),
            other => panic!("unexpected {other:?}"),
        }
        let d = DiskSet::single(Point::new(1.0, 1.0), f64::INFINITY).unwrap();
        assert!(gaussian_field(&d, 4, 4).is_err());
    }

    #[test]
    fn tanh_values() {
        let f = ScalarField::new(3, 1, vec![0.0, 1.0, 20.0]).unwrap();
        let t = normalize_tanh(&f);
        assert_eq!(t.data()[0], 0.0);
        assert!((t.data()[1] - 0.761594).abs() < 1e-6);
        assert!((t.data()[2] - 1.0).abs() < 1e-12);
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v) || v == 1.0));
    }

    #[test]
    fn threshold_single_disk_radius() {
        let sigma = 5.0;
        let c = Point::new(32.0, 32.0);
        let d = DiskSet::single(c, sigma).unwrap();
        let mask = render_mask(&d, &RenderParams::new(64, 64, 0.5).unwrap()).unwrap();
        let r = effective_radius(sigma, 0.5).unwrap();
        for row in 0..64 {
            for col in 0..64 {
                let dist = Point::new(col as f64 + 0.5, row as f64 + 0.5).dist(c);
                if dist < r - 0.5 {
                    assert!(mask.get(col, row));
                } else if dist > r + 0.5 {
                    assert!(!mask.get(col, row));
                }
            }
        }
    }

    #[test]
    fn threshold_area_matches_brute_force_count() {
        // Oracle: count pixel centers inside the analytic disk radius.
        let sigma = 5.0;
        let c = Point::new(32.0, 32.0);
        let r = sigma * (2.0 * 2f64.ln()).sqrt();
        let mut oracle = 0usize;
        for row in 0..64 {
            for col in 0..64 {
                if Point::new(col as f64 + 0.5, row as f64 + 0.5).dist(c) <= r {
                    oracle += 1;
                }
            }
        }
        let d = DiskSet::single(c, sigma).unwrap();
        let area = render_mask(&d, &RenderParams::new(64, 64, 0.5).unwrap()).unwrap().area();
        let analytic = std::f64::consts::PI * r * r;
        assert!((analytic - 108.9).abs() < 0.05);
        assert!((area as f64 - analytic).abs() / analytic < 0.05, "{area} vs {analytic}");
        assert!((area as isize - oracle as isize).abs() <= 4, "{area} vs {oracle}");
    }

    #[test]
    fn threshold_above_max_is_empty() {
        let d = random_disks(3, 4, 4, 32);
        let f = gaussian_field(&d, 32, 32).unwrap();
        let max = f.data().iter().cloned().fold(0.0, f64::max);
        assert!(max <= 4.0);
        let m = threshold_mask(&f, (max * 1.000001).min(1.0)).unwrap();
        if max < 1.0 {
            assert!(m.is_empty());
        }
        let f4 = ScalarField::new(2, 1, vec![4.0, 4.0]).unwrap();
        assert!(threshold_mask(&f4, 4.0 + 1e-9).is_err(), "alpha outside (0,1]");
        assert!(threshold_mask(&ScalarField::new(2, 1, vec![0.9, 0.99]).unwrap(), 1.0).unwrap().is_empty());
    }

    #[test]
    fn effective_radius_values() {
        assert!((effective_radius(1.0, 0.5).unwrap() - 1.177410).abs() < 1e-6);
        assert_eq!(effective_radius(7.0, 1.0).unwrap(), 0.0);
        assert!((effective_radius(3.0, 0.1).unwrap() - 6.4378).abs() < 1e-4);
        assert!(effective_radius(1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn translation_equivariance(seed in 0u64..1000, dx in -5i32..5, dy in -5i32..5) {
            let d = random_disks(seed, 3, 2, 24);
            let shifted: Vec<Point> = d.centers().iter()
                .map(|c| Point::new(c.x + dx as f64, c.y + dy as f64)).collect();
            let s = DiskSet::new(shifted, d.sigmas().to_vec(), d.assoc().to_vec()).unwrap();
            let (w, h) = (30usize, 30usize);
            let a = gaussian_field(&d, w, h).unwrap();
            let b = gaussian_field(&s, w, h).unwrap();
            for row in 0..h as i32 {
                for col in 0..w as i32 {
                    let (c2, r2) = (col + dx, row + dy);
                    if c2 < 0 || r2 < 0 || c2 >= w as i32 || r2 >= h as i32 { continue; }
                    let va = a.get(col as usize, row as usize);
                    let vb = b.get(c2 as usize, r2 as usize);
                    prop_assert!((va - vb).abs() <= 1e-12 * va.max(1e-300).max(1.0));
                }
            }
        }

        #[test]
        fn growing_sigma_never_lowers_field(seed in 0u64..1000, j in 0usize..3, factor in 1.0f64..3.0) {
            let d = random_disks(seed, 5, 3, 24);
            let mut sigmas = d.sigmas().to_vec();
            sigmas[j] *= factor;
            let g = DiskSet::new(d.centers().to_vec(), sigmas, d.assoc().to_vec()).unwrap();
            let a = gaussian_field(&d, 24, 24).unwrap();
            let b = gaussian_field(&g, 24, 24).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn area_non_increasing_in_alpha(seed in 0u64..1000, a1 in 0.01f64..1.0, a2 in 0.01f64..1.0) {
            let d = random_disks(seed, 4, 4, 24);
            let f = gaussian_field(&d, 24, 24).unwrap();
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(threshold_mask(&f, lo).unwrap().area() >= threshold_mask(&f, hi).unwrap().area());
        }

        #[test]
        fn tanh_preserves_argmax(seed in 0u64..1000) {
            let d = random_disks(seed, 3, 3, 16);
            let f = gaussian_field(&d, 16, 16).unwrap();
            let t = normalize_tanh(&f);
            let argmax = |v: &[f64]| {
                let m = v.iter().cloned().fold(f64::MIN, f64::max);
                v.iter().enumerate().filter(|(_, &x)| x == m).map(|(k, _)| k).collect::<Vec<_>>()
            };
            // tanh is strictly monotone; equal-after-rounding ties only widen the set
            let raw = argmax(f.data());
            let squashed = argmax(t.data());
            for k in &raw { prop_assert!(squashed.contains(k)); }
            prop_assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        }
    }
}
