//! Dice and binary cross-entropy losses on the tanh-normalized field, with
//! their exact gradients with respect to the disk parameters.
//!
//! Centers are differentiated in pixel units; standard deviations in log
//! space (`d/d log s = s d/ds`), which is also the space the fitter steps in.

use crate::error::{Error, Result};
use crate::projection::{accumulate, profiles};
use crate::types::{BinaryMask, DiskSet, LossKind, Point, ScalarField};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Gradient of a loss with respect to every disk parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    /// `(dL/dx_i, dL/dy_i)` per center.
    pub d_centers: Vec<[f64; 2]>,
    /// `dL/d log sigma_j` per radius slot.
    pub d_log_sigmas: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(n: usize, m: usize) -> Self {
        GradientVector {
            d_centers: vec![[0.0; 2]; n],
            d_log_sigmas: vec![0.0; m],
        }
    }

    /// Flattened as `[x0, y0, x1, y1, ..., log s0, log s1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.d_centers
            .iter()
            .flat_map(|c| c.iter().copied())
            .chain(self.d_log_sigmas.iter().copied())
            .collect()
    }

    fn from_flat(flat: &[f64], n: usize) -> Self {
        GradientVector {
            d_centers: (0..n).map(|i| [flat[2 * i], flat[2 * i + 1]]).collect(),
            d_log_sigmas: flat[2 * n..].to_vec(),
        }
    }

    /// Largest per-coordinate relative error against `other`, measured as
    /// `|a - b| / max(|a|, |b|, floor)`.
    pub fn max_relative_error(&self, other: &GradientVector, floor: f64) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

fn check_dims(pred: &ScalarField, gt: &BinaryMask) -> Result<()> {
    gt.same_shape(pred.width(), pred.height())
}

/// Pixel-averaged binary cross-entropy.
pub fn bce_loss(pred: &ScalarField, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let k = pred.data().len() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &z)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if z == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / k)
}

/// `1 - 2 sum(z p) / (sum(z) + sum(p) + epsilon)`.
pub fn dice_loss(pred: &ScalarField, gt: &BinaryMask, epsilon: f64) -> Result<f64> {
    check_dims(pred, gt)?;
    if !(epsilon > 0.0) {
        return Err(Error::contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let (inter, zsum, psum) = dice_sums(pred.data(), gt.data());
    Ok(1.0 - 2.0 * inter / (zsum + psum + epsilon))
}

fn dice_sums(pred: &[f64], gt: &[u8]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut zsum = 0.0;
    let mut psum = 0.0;
    for (&p, &z) in pred.iter().zip(gt) {
        if z == 1 {
            inter += p;
            zsum += 1.0;
        }
        psum += p;
    }
    (inter, zsum, psum)
}

pub fn loss(pred: &ScalarField, gt: &BinaryMask, kind: LossKind, epsilon: f64) -> Result<f64> {
    match kind {
        LossKind::Dice => dice_loss(pred, gt, epsilon),
        LossKind::Bce => bce_loss(pred, gt),
    }
}

/// Loss of a disk set against a mask: render, squash, compare.
pub fn evaluate_loss(disks: &DiskSet, gt: &BinaryMask, kind: LossKind, epsilon: f64) -> Result<f64> {
    let field = crate::projection::gaussian_field(disks, gt.width(), gt.height())?;
    loss(&crate::projection::normalize_tanh(&field), gt, kind, epsilon)
}

/// Exact gradient of `loss(tanh(field(disks)), gt)`.
pub fn loss_gradient(
    disks: &DiskSet,
    gt: &BinaryMask,
    kind: LossKind,
    epsilon: f64,
) -> Result<GradientVector> {
    loss_and_gradient(disks, gt, kind, epsilon).map(|(_, g)| g)
}

/// Loss value and its gradient from a single forward pass.
pub fn loss_and_gradient(
    disks: &DiskSet,
    gt: &BinaryMask,
    kind: LossKind,
    epsilon: f64,
) -> Result<(f64, GradientVector)> {
    if kind == LossKind::Dice && !(epsilon > 0.0) {
        return Err(Error::contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let (w, h) = (gt.width(), gt.height());
    let prof = profiles(disks, w, h)?;
    let raw = accumulate(&prof, w, h);
    let pred: Vec<f64> = raw.iter().map(|v| v.tanh()).collect();
    let npix = pred.len() as f64;

    // dL/dp per pixel, then through tanh: dL/df = dL/dp * (1 - p^2)
    let (value, mut upstream): (f64, Vec<f64>) = match kind {
        LossKind::Dice => {
            let (inter, zsum, psum) = dice_sums(&pred, gt.data());
            let denom = zsum + psum + epsilon;
            let value = 1.0 - 2.0 * inter / denom;
            let common = 2.0 * inter / (denom * denom);
            let two_over = 2.0 / denom;
            let g = gt
                .data()
                .iter()
                .map(|&z| if z == 1 { common - two_over } else { common })
                .collect();
            (value, g)
        }
        LossKind::Bce => {
            let mut sum = 0.0;
            let g = pred
                .iter()
                .zip(gt.data())
                .map(|(&p, &z)| {
                    let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    sum += if z == 1 { -pc.ln() } else { -(1.0 - pc).ln() };
                    if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                        0.0
                    } else if z == 1 {
                        -1.0 / (p * npix)
                    } else {
                        1.0 / ((1.0 - p) * npix)
                    }
                })
                .collect();
            (sum / npix, g)
        }
    };
    for (u, &p) in upstream.iter_mut().zip(&pred) {
        *u *= 1.0 - p * p;
    }

    // Per row r and disk i the gradient needs A = sum_c g ex, B = sum_c g ex dx
    // and Q = sum_c g ex dx^2. Columns are interleaved by disk so that one
    // pass over a row updates every disk's sums in column order.
    let n = disks.n_disks();
    let mut ex = vec![0.0; w * n];
    let mut exd = vec![0.0; w * n];
    let mut exd2 = vec![0.0; w * n];
    for (i, (c, p)) in disks.centers().iter().zip(&prof).enumerate() {
        for (col, &e) in p.cols.iter().enumerate() {
            let dx = col as f64 + 0.5 - c.x;
            ex[col * n + i] = e;
            exd[col * n + i] = e * dx;
            exd2[col * n + i] = e * dx * dx;
        }
    }
    let (mut gx, mut gy, mut gs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut a, mut b, mut q) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (r, g_row) in upstream.chunks_exact(w).enumerate() {
        a.fill(0.0);
        b.fill(0.0);
        q.fill(0.0);
        for (col, &g) in g_row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let span = col * n..(col + 1) * n;
            for ((((ai, bi), qi), (&e, &ed)), &ed2) in a
                .iter_mut()
                .zip(b.iter_mut())
                .zip(q.iter_mut())
                .zip(ex[span.clone()].iter().zip(&exd[span.clone()]))
                .zip(&exd2[span])
            {
                *ai += g * e;
                *bi += g * ed;
                *qi += g * ed2;
            }
        }
        for (i, (c, p)) in disks.centers().iter().zip(&prof).enumerate() {
            let ey = p.rows[r];
            let dy = r as f64 + 0.5 - c.y;
            gx[i] += ey * b[i];
            gy[i] += ey * dy * a[i];
            gs[i] += ey * (q[i] + dy * dy * a[i]);
        }
    }
    let mut grad = GradientVector::zeros(n, disks.n_radii());
    for i in 0..n {
        let s = disks.sigma_of(i);
        let inv_var = 1.0 / (s * s);
        grad.d_centers[i] = [gx[i] * inv_var, gy[i] * inv_var];
        grad.d_log_sigmas[disks.assoc()[i]] += gs[i] * inv_var;
    }

    if !value.is_finite() {
        return Err(Error::non_finite("loss value"));
    }
    for (i, d) in grad.d_centers.iter().enumerate() {
        if !d[0].is_finite() {
            return Err(Error::non_finite(format!("gradient of center {i} x")));
        }
        if !d[1].is_finite() {
            return Err(Error::non_finite(format!("gradient of center {i} y")));
        }
    }
    if let Some(j) = grad.d_log_sigmas.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite(format!("gradient of sigma {j}")));
    }
    Ok((value, grad))
}

/// Flatten a disk set into `[x0, y0, ..., log s0, ...]`.
pub(crate) fn to_params(disks: &DiskSet) -> Vec<f64> {
    disks
        .centers()
        .iter()
        .flat_map(|c| [c.x, c.y])
        .chain(disks.sigmas().iter().map(|s| s.ln()))
        .collect()
}

/// Inverse of [`to_params`], keeping `template`'s association.
pub(crate) fn from_params(template: &DiskSet, params: &[f64]) -> Result<DiskSet> {
    let n = template.n_disks();
    let centers = (0..n).map(|i| Point::new(params[2 * i], params[2 * i + 1])).collect();
    let sigmas = params[2 * n..].iter().map(|l| l.exp()).collect();
    DiskSet::new(centers, sigmas, template.assoc().to_vec())
}

/// Central differences `(f(x + h e_k) - f(x - h e_k)) / 2h` for every `k`.
pub fn central_difference(
    params: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        work[k] = params[k] + h;
        let plus = f(&work)?;
        work[k] = params[k] - h;
        let minus = f(&work)?;
        work[k] = params[k];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Numerical gradient by central differences, sigmas perturbed in log space.
pub fn finite_difference_gradient(
    disks: &DiskSet,
    gt: &BinaryMask,
    kind: LossKind,
    epsilon: f64,
    h: f64,
) -> Result<GradientVector> {
    let params = to_params(disks);
    let flat = central_difference(&params, h, |p| {
        evaluate_loss(&from_params(disks, p)?, gt, kind, epsilon)
    })?;
    Ok(GradientVector::from_flat(&flat, disks.n_disks()))
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_error: f64,
    /// Description of the configuration with the largest error.
    pub worst: String,
}

/// Relative-error floor used when comparing gradients.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compare analytic and finite-difference gradients on `trials` random
/// configurations, each under both losses. Trial `t` draws from seed
/// `seed + t`, cycling N through {1, 2, 4, 16} and M through {1, N} on
/// grids of 16 to 96 pixels a side.
pub fn gradient_check(seed: u64, trials: usize, h: f64) -> Result<GradCheckReport> {
    use rand::{Rng, SeedableRng};
    let mut report = GradCheckReport {
        trials,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for t in 0..trials {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let n = [1, 2, 4, 16][t % 4];
        let m = if (t / 4) % 2 == 0 { 1 } else { n };
        let (w, hgt) = (rng.gen_range(16..=96), rng.gen_range(16..=96));
        let (wf, hf) = (w as f64, hgt as f64);
        let blobs: Vec<(Point, f64)> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let c = Point::new(rng.gen_range(0.2 * wf..0.8 * wf), rng.gen_range(0.2 * hf..0.8 * hf));
                (c, rng.gen_range(3.0..wf.min(hf) / 4.0))
            })
            .collect();
        let gt = BinaryMask::from_fn(w, hgt, |c, r| {
            let p = Point::new(c as f64 + 0.5, r as f64 + 0.5);
            blobs.iter().any(|&(b, rad)| p.dist(b) <= rad)
        });
        let centers = (0..n)
            .map(|_| Point::new(rng.gen_range(0.1 * wf..0.9 * wf), rng.gen_range(0.1 * hf..0.9 * hf)))
            .collect();
        let sigmas = (0..m).map(|_| rng.gen_range(1.5..wf.min(hf) / 6.0)).collect();
        let disks = DiskSet::with_kind(centers, sigmas, crate::types::AssocKind::for_counts(n, m))?;
        for kind in [LossKind::Dice, LossKind::Bce] {
            let a = loss_gradient(&disks, &gt, kind, crate::types::DEFAULT_EPSILON)?;
            let f = finite_difference_gradient(&disks, &gt, kind, crate::types::DEFAULT_EPSILON, h)?;
            let err = a.max_relative_error(&f, GRAD_CHECK_FLOOR);
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err;
                report.worst = format!("trial {t}: N={n} M={m} {w}x{hgt} {kind}");
            }
        }
    }
    Ok(report)
}
