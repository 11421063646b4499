//! Direct fitting of a disk set to one binary mask by Adam on the
//! normalized-field loss, plus batch and ablation drivers.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::{from_params, loss_and_gradient, to_params};
use crate::metrics::{dice_coefficient, iou};
use crate::projection::{gaussian_field, threshold_mask};
use crate::types::{BinaryMask, DiskSet, FitConfig, LossKind, Point};

/// Smallest initial standard deviation, in pixels.
pub const MIN_INIT_SIGMA: f64 = 0.5;
/// Half-width of the seeded uniform jitter applied to initial centers.
pub const INIT_JITTER: f64 = 0.5;

/// Outcome of fitting one mask.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Lowest-loss iterate of the selected restart.
    pub disks: DiskSet,
    /// Loss of every evaluated iterate of the selected restart.
    pub loss_trace: Vec<f64>,
    pub final_iou: f64,
    pub iterations_used: usize,
    /// Seed of the selected restart.
    pub seed: u64,
    /// Wall time over all restarts.
    pub wall_time: Duration,
}

impl FitResult {
    /// Minimum of the loss trace, i.e. the loss of `disks`.
    pub fn best_loss(&self) -> f64 {
        self.loss_trace.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// The fitted disks thresholded at `alpha` on the given grid.
    pub fn mask(&self, width: usize, height: usize, alpha: f64) -> Result<BinaryMask> {
        threshold_mask(&gaussian_field(&self.disks, width, height)?, alpha)
    }

    /// Equality of everything except wall time.
    pub fn same_outcome(&self, other: &FitResult) -> bool {
        self.disks == other.disks
            && self.loss_trace.len() == other.loss_trace.len()
            && self
                .loss_trace
                .iter()
                .zip(&other.loss_trace)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.final_iou.to_bits() == other.final_iou.to_bits()
            && self.iterations_used == other.iterations_used
            && self.seed == other.seed
    }
}

/// Farthest-point initialization over the foreground pixels.
///
/// The first center is the foreground pixel nearest the centroid; each next
/// one maximizes its distance to those already chosen (ties go to the first
/// pixel in row-major order). Centers then receive a seeded jitter of at most
/// [`INIT_JITTER`] pixels per axis. All sigmas start at
/// `sqrt(area / (N pi))`, at least [`MIN_INIT_SIGMA`].
pub fn init_disks(gt: &BinaryMask, config: &FitConfig) -> Result<DiskSet> {
    let pixels: Vec<Point> = gt
        .foreground()
        .map(|(c, r)| Point::new(c as f64 + 0.5, r as f64 + 0.5))
        .collect();
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = config.n_disks;
    if n == 0 {
        return Err(Error::InvalidConfig(vec!["N ≥ 1".into()]));
    }
    let count = pixels.len() as f64;
    let centroid = Point::new(
        pixels.iter().map(|p| p.x).sum::<f64>() / count,
        pixels.iter().map(|p| p.y).sum::<f64>() / count,
    );
    let first = argmin_by(&pixels, |p| p.dist2(centroid));
    let mut chosen = vec![pixels[first]];
    let mut min_d2: Vec<f64> = pixels.iter().map(|p| p.dist2(pixels[first])).collect();
    while chosen.len() < n {
        let next = argmin_by(&min_d2, |d| -d);
        let c = pixels[next];
        chosen.push(c);
        for (m, p) in min_d2.iter_mut().zip(&pixels) {
            *m = m.min(p.dist2(c));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = chosen
        .into_iter()
        .map(|c| {
            let jx = rng.gen_range(-INIT_JITTER..=INIT_JITTER);
            let jy = rng.gen_range(-INIT_JITTER..=INIT_JITTER);
            Point::new(c.x + jx, c.y + jy)
        })
        .collect();
    let sigma = (count / (n as f64 * std::f64::consts::PI)).sqrt().max(MIN_INIT_SIGMA);
    DiskSet::with_kind(centers, vec![sigma; config.n_radii], config.assoc_kind)
}

/// Index of the first minimum of `key` over `items`.
fn argmin_by<T>(items: &[T], key: impl Fn(&T) -> f64) -> usize {
    let mut best = 0;
    let mut best_key = f64::INFINITY;
    for (k, item) in items.iter().enumerate() {
        let v = key(item);
        if v < best_key {
            best = k;
            best_key = v;
        }
    }
    best
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    step_size: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(dim: usize, step_size: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            step_size,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.step_size * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

struct Run {
    disks: DiskSet,
    loss_trace: Vec<f64>,
    final_iou: f64,
    seed: u64,
}

fn at_iteration(err: Error, it: usize) -> Error {
    match err {
        Error::NonFinite { what, .. } => Error::NonFinite {
            what,
            iteration: Some(it),
        },
        Error::Contract(what) => Error::NonFinite {
            what,
            iteration: Some(it),
        },
        other => other,
    }
}

fn run_once(gt: &BinaryMask, config: &FitConfig, seed: u64) -> Result<Run> {
    let seeded = FitConfig {
        seed,
        ..config.clone()
    };
    let template = init_disks(gt, &seeded)?;
    let mut params = to_params(&template);
    let mut adam = Adam::new(
        params.len(),
        config.step_size,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );

    let mut trace = Vec::with_capacity(config.max_iters);
    let mut best: Option<(f64, DiskSet)> = None;
    let mut reference = f64::INFINITY;
    let mut stale = 0usize;
    for it in 0..config.max_iters {
        let disks = from_params(&template, &params).map_err(|e| at_iteration(e, it))?;
        let (value, grad) = loss_and_gradient(&disks, gt, config.loss_kind, config.epsilon)
            .map_err(|e| at_iteration(e, it))?;
        trace.push(value);
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, disks));
        }
        if value < reference - config.min_improvement {
            reference = value;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
        if it + 1 < config.max_iters {
            adam.step(&mut params, &grad.to_flat());
        }
    }

    let (_, disks) = best.expect("at least one iteration runs");
    let final_iou = iou(&threshold_mask(&gaussian_field(&disks, gt.width(), gt.height())?, config.alpha)?, gt)?;
    Ok(Run {
        disks,
        loss_trace: trace,
        final_iou,
        seed,
    })
}

/// Fit one mask, keeping the restart with the highest IoU (earliest on ties).
pub fn fit(gt: &BinaryMask, config: &FitConfig) -> Result<FitResult> {
    config.check()?;
    if gt.is_empty() {
        return Err(Error::EmptyMask);
    }
    let start = Instant::now();
    let mut best: Option<Run> = None;
    for r in 0..config.restarts {
        let run = run_once(gt, config, config.seed.wrapping_add(r as u64))?;
        if best.as_ref().is_none_or(|b| run.final_iou > b.final_iou) {
            best = Some(run);
        }
    }
    let best = best.expect("restarts >= 1");
    Ok(FitResult {
        iterations_used: best.loss_trace.len(),
        disks: best.disks,
        loss_trace: best.loss_trace,
        final_iou: best.final_iou,
        seed: best.seed,
        wall_time: start.elapsed(),
    })
}

/// Independent fits of every mask, in input order. Runs on the current
/// rayon pool; the outcome does not depend on its size.
pub fn fit_corpus(masks: &[BinaryMask], config: &FitConfig) -> Vec<Result<FitResult>> {
    masks.par_iter().map(|m| fit(m, config)).collect()
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub n_disks: usize,
    pub n_radii: usize,
    pub loss: LossKind,
    pub mean_iou: f64,
    pub mean_dice: f64,
    /// Mean wall time per fit, in seconds.
    pub mean_time: f64,
    pub n_fits: usize,
    /// Per-mask failures, as `"mask <index>: <error>"`.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// CSV with columns `n_disks,n_radii,loss,mean_iou,mean_dice,mean_time`
    /// plus `n_fits,errors`. Without `timing` the time column reads `NA` so
    /// the file is reproducible byte for byte.
    pub fn to_csv(&self, timing: bool) -> String {
        self.render(',', timing)
    }

    /// Tab-separated variant of [`to_csv`](Self::to_csv) for plotting tools.
    pub fn to_tsv(&self, timing: bool) -> String {
        self.render('\t', timing)
    }

    fn render(&self, sep: char, timing: bool) -> String {
        let header = ["n_disks", "n_radii", "loss", "mean_iou", "mean_dice", "mean_time", "n_fits", "errors"];
        let mut out = header.join(&sep.to_string());
        out.push('\n');
        for r in &self.rows {
            let time = if timing {
                format!("{:.6}", r.mean_time)
            } else {
                "NA".to_string()
            };
            let errors = r.errors.join(" | ").replace([sep, '\n', '"'], " ");
            let fields = [
                r.n_disks.to_string(),
                r.n_radii.to_string(),
                r.loss.to_string(),
                format!("{:.6}", r.mean_iou),
                format!("{:.6}", r.mean_dice),
                time,
                r.n_fits.to_string(),
                errors,
            ];
            out.push_str(&fields.join(&sep.to_string()));
            out.push('\n');
        }
        out
    }
}

/// Fit every mask under every configuration and average per configuration.
pub fn ablate(masks: &[BinaryMask], grid: &[FitConfig]) -> Result<AblationReport> {
    if masks.is_empty() {
        return Err(Error::contract("ablation needs at least one mask"));
    }
    if grid.is_empty() {
        return Err(Error::contract("ablation needs at least one configuration"));
    }
    for cfg in grid {
        cfg.check()?;
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..masks.len()).map(move |m| (c, m)))
        .collect();
    let outcomes: Vec<Result<(FitResult, f64)>> = jobs
        .par_iter()
        .map(|&(c, m)| {
            let cfg = &grid[c];
            let gt = &masks[m];
            let res = fit(gt, cfg)?;
            let dice = dice_coefficient(&res.mask(gt.width(), gt.height(), cfg.alpha)?, gt)?;
            Ok((res, dice))
        })
        .collect();

    let rows = grid
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let mut ious = Vec::new();
            let mut dices = Vec::new();
            let mut times = Vec::new();
            let mut errors = Vec::new();
            for (m, out) in outcomes[c * masks.len()..(c + 1) * masks.len()].iter().enumerate() {
                match out {
                    Ok((res, dice)) => {
                        ious.push(res.final_iou);
                        dices.push(*dice);
                        times.push(res.wall_time.as_secs_f64());
                    }
                    Err(e) => errors.push(format!("mask {m}: {e}")),
                }
            }
            AblationRow {
                n_disks: cfg.n_disks,
                n_radii: cfg.n_radii,
                loss: cfg.loss_kind,
                mean_iou: mean(&ious),
                mean_dice: mean(&dices),
                mean_time: mean(&times),
                n_fits: ious.len(),
                errors,
            }
        })
        .collect();
    Ok(AblationReport { rows })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::evaluate_loss;

    fn disk_mask(w: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, w, |c, rr| {
            Point::new(c as f64 + 0.5, rr as f64 + 0.5).dist(Point::new(cx, cy)) <= r
        })
    }

    fn quick(n: usize, m: usize) -> FitConfig {
        FitConfig {
            max_iters: 120,
            restarts: 1,
            ..FitConfig::with_counts(n, m)
        }
    }

    #[test]
    fn init_single_center_near_centroid() {
        let gt = disk_mask(64, 30.0, 34.0, 12.0);
        let d = init_disks(&gt, &quick(1, 1)).unwrap();
        assert!(d.centers()[0].dist(Point::new(30.0, 34.0)) <= 1.0, "{:?}", d.centers());
        let expected = (gt.area() as f64 / std::f64::consts::PI).sqrt();
        assert_eq!(d.sigmas()[0], expected);
    }

    #[test]
    fn init_two_blobs_gets_one_center_each() {
        let a = disk_mask(64, 14.0, 20.0, 6.0);
        let b = disk_mask(64, 48.0, 44.0, 9.0);
        let gt = BinaryMask::from_fn(64, 64, |c, r| a.get(c, r) || b.get(c, r));
        let d = init_disks(&gt, &quick(2, 2)).unwrap();
        // brute force: which blob is each center nearest to
        let blob = |p: Point| {
            if p.dist(Point::new(14.0, 20.0)) < p.dist(Point::new(48.0, 44.0)) { 0 } else { 1 }
        };
        let mut seen: Vec<_> = d.centers().iter().map(|&p| blob(p)).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1]);
    }

    #[test]
    fn init_and_fit_reject_empty_mask() {
        let gt = BinaryMask::zeros(8, 8);
        assert!(matches!(init_disks(&gt, &quick(2, 2)), Err(Error::EmptyMask)));
        assert!(matches!(fit(&gt, &quick(2, 2)), Err(Error::EmptyMask)));
    }

    #[test]
    fn init_tiny_mask_clamps_sigma_and_repeats_pixels() {
        let mut gt = BinaryMask::zeros(8, 8);
        gt.set(3, 3, true);
        let d = init_disks(&gt, &quick(4, 4)).unwrap();
        assert!(d.sigmas().iter().all(|&s| s == MIN_INIT_SIGMA));
        assert_eq!(d.n_disks(), 4);
    }

    #[test]
    fn single_iteration_returns_initialization() {
        let gt = disk_mask(48, 24.0, 24.0, 10.0);
        let cfg = FitConfig { max_iters: 1, ..quick(3, 3) };
        let res = fit(&gt, &cfg).unwrap();
        assert_eq!(res.loss_trace.len(), 1);
        assert_eq!(res.iterations_used, 1);
        // sigmas pass through log space, so compare to rounding
        let init = init_disks(&gt, &cfg).unwrap();
        assert_eq!(res.disks.centers(), init.centers());
        for (a, b) in res.disks.sigmas().iter().zip(init.sigmas()) {
            assert!((a - b).abs() <= 1e-14 * b);
        }
        assert_eq!(res.loss_trace[0], evaluate_loss(&res.disks, &gt, cfg.loss_kind, cfg.epsilon).unwrap());
    }

    #[test]
    fn best_iterate_reproduces_trace_minimum() {
        let gt = disk_mask(48, 22.0, 25.0, 11.0);
        for kind in [LossKind::Dice, LossKind::Bce] {
            let cfg = FitConfig { loss_kind: kind, ..quick(4, 4) };
            let res = fit(&gt, &cfg).unwrap();
            let again = evaluate_loss(&res.disks, &gt, kind, cfg.epsilon).unwrap();
            assert!((again - res.best_loss()).abs() <= 1e-12);
            assert!(res.disks.sigmas().iter().all(|&s| s > 0.0));
            assert!((0.0..=1.0).contains(&res.final_iou));
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let gt = disk_mask(40, 18.0, 21.0, 9.0);
        let cfg = FitConfig { restarts: 2, ..quick(3, 1) };
        assert!(fit(&gt, &cfg).unwrap().same_outcome(&fit(&gt, &cfg).unwrap()));
    }

    #[test]
    fn more_restarts_never_hurt() {
        let gt = BinaryMask::from_fn(48, 48, |c, r| (8..40).contains(&c) && (18..30).contains(&r));
        let mut prev = 0.0;
        for restarts in 1..=3 {
            let res = fit(&gt, &FitConfig { restarts, ..quick(3, 3) }).unwrap();
            assert!(res.final_iou >= prev);
            prev = res.final_iou;
        }
    }

    #[test]
    fn single_disk_reaches_loss_optimum() {
        // Oracle: 1-D scan of the Dice loss over sigma with the center fixed
        // at the disk center (the optimum by symmetry).
        let gt = disk_mask(64, 32.0, 32.0, 10.0);
        let mut best = (f64::INFINITY, 0.0);
        let mut s = 3.0;
        while s < 15.0 {
            let d = DiskSet::single(Point::new(32.0, 32.0), s).unwrap();
            let l = evaluate_loss(&d, &gt, LossKind::Dice, 1.0).unwrap();
            if l < best.0 {
                best = (l, s);
            }
            s += 0.01;
        }
        let res = fit(&gt, &FitConfig { max_iters: 500, ..quick(1, 1) }).unwrap();
        assert!(res.best_loss() <= best.0 + 1e-4, "{} vs {}", res.best_loss(), best.0);
        assert!((res.disks.sigmas()[0] - best.1).abs() < 0.1, "{:?} vs {}", res.disks, best.1);
    }

    #[test]
    fn invalid_config_rejected() {
        let gt = disk_mask(16, 8.0, 8.0, 4.0);
        let cfg = FitConfig { alpha: 0.0, ..quick(2, 2) };
        assert!(matches!(fit(&gt, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn corpus_order_and_error_aggregation() {
        assert!(fit_corpus(&[], &quick(2, 2)).is_empty());
        let a = disk_mask(32, 16.0, 16.0, 7.0);
        let masks = vec![a.clone(), BinaryMask::zeros(32, 32), a.clone()];
        let cfg = quick(2, 2);
        let out = fit_corpus(&masks, &cfg);
        assert_eq!(out.len(), 3);
        assert!(matches!(out[1], Err(Error::EmptyMask)));
        let r0 = out[0].as_ref().unwrap();
        let r2 = out[2].as_ref().unwrap();
        assert!(r0.same_outcome(r2));
        assert!(r0.same_outcome(&fit(&a, &cfg).unwrap()));
    }

    #[test]
    fn ablation_single_cell_matches_fit() {
        let gt = disk_mask(32, 15.0, 17.0, 8.0);
        let cfg = quick(2, 2);
        let report = ablate(std::slice::from_ref(&gt), std::slice::from_ref(&cfg)).unwrap();
        let res = fit(&gt, &cfg).unwrap();
        let row = &report.rows[0];
        assert_eq!((row.n_disks, row.n_radii, row.loss, row.n_fits), (2, 2, LossKind::Dice, 1));
        assert_eq!(row.mean_iou, res.final_iou);
        let dice = dice_coefficient(&res.mask(32, 32, 0.5).unwrap(), &gt).unwrap();
        assert_eq!(row.mean_dice, dice);
        assert!(report.to_csv(false).starts_with("n_disks,n_radii,loss,mean_iou,mean_dice,mean_time"));
    }

    #[test]
    fn ablation_annotates_failures() {
        let gt = disk_mask(32, 15.0, 17.0, 8.0);
        let report = ablate(&[gt, BinaryMask::zeros(32, 32)], &[quick(2, 2)]).unwrap();
        assert_eq!(report.rows[0].n_fits, 1);
        assert_eq!(report.rows[0].errors.len(), 1);
        assert!(report.rows[0].errors[0].contains("EmptyMask"));
        assert!(ablate(&[], &[quick(2, 2)]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_step_size() {
        let mut adam = Adam::new(2, 0.05, 0.9, 0.999, 1e-8);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.2]);
        // bias-corrected moments are g and g^2, so each coordinate moves by
        // step * |g| / (|g| + eps)
        let moved = |g: f64| 0.05 * g / (g + 1e-8);
        assert!((p[0] - (1.0 - moved(3.0))).abs() < 1e-15);
        assert!((p[1] - (-1.0 + moved(0.2))).abs() < 1e-15);
    }
}
