//! Shared value types: disk sets, masks, scalar fields, polylines and the
//! fitting configuration.
//!
//! Pixel convention: pixel `(col, row)` is sampled at its center
//! `(col + 0.5, row + 0.5)`, origin at the top-left corner, x to the right,
//! y downwards. Radius and center indices are zero-based.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// How disk centers are mapped onto radius slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssocKind {
    /// Every center uses the single radius (`M = 1`).
    Shared,
    /// Contiguous, equal-as-possible blocks of centers share a radius (`M < N`).
    Grouped,
    /// Every center has its own radius (`M = N`).
    Individual,
}

impl AssocKind {
    /// The natural association for a given `(N, M)` pair.
    pub fn for_counts(n: usize, m: usize) -> Self {
        if m == n {
            AssocKind::Individual
        } else if m == 1 {
            AssocKind::Shared
        } else {
            AssocKind::Grouped
        }
    }
}

/// Build the association table for `n` centers and `m` radii.
///
/// Grouped association splits the centers into `m` contiguous blocks of
/// `n / m` centers; the last block absorbs the remainder.
pub fn association(kind: AssocKind, n: usize, m: usize) -> Result<Vec<usize>> {
    if n == 0 || m == 0 || m > n {
        return Err(Error::contract(format!(
            "association needs 1 <= M <= N, got N={n}, M={m}"
        )));
    }
    let table = match kind {
        AssocKind::Shared => {
            if m != 1 {
                return Err(Error::contract(format!("shared association needs M=1, got M={m}")));
            }
            vec![0; n]
        }
        AssocKind::Individual => {
            if m != n {
                return Err(Error::contract(format!(
                    "individual association needs M=N, got N={n}, M={m}"
                )));
            }
            (0..n).collect()
        }
        AssocKind::Grouped => {
            let block = n / m;
            (0..n).map(|i| (i / block).min(m - 1)).collect()
        }
    };
    Ok(table)
}

/// `N` disk centers, `M` standard deviations and the association between them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskSet {
    centers: Vec<Point>,
    sigmas: Vec<f64>,
    assoc: Vec<usize>,
}

impl DiskSet {
    pub fn new(centers: Vec<Point>, sigmas: Vec<f64>, assoc: Vec<usize>) -> Result<Self> {
        let n = centers.len();
        let m = sigmas.len();
        if n == 0 {
            return Err(Error::contract("a disk set needs at least one center"));
        }
        if m == 0 || m > n {
            return Err(Error::contract(format!("need 1 <= M <= N, got N={n}, M={m}")));
        }
        if assoc.len() != n {
            return Err(Error::contract(format!(
                "association has {} entries for {n} centers",
                assoc.len()
            )));
        }
        let mut hit = vec![false; m];
        for (i, &j) in assoc.iter().enumerate() {
            if j >= m {
                return Err(Error::contract(format!(
                    "center {i} maps to radius {j}, but only {m} radii exist"
                )));
            }
            hit[j] = true;
        }
        if let Some(orphan) = hit.iter().position(|h| !h) {
            return Err(Error::contract(format!("radius {orphan} is used by no center")));
        }
        if let Some(j) = sigmas.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::contract(format!(
                "sigma {j} must be strictly positive, got {}",
                sigmas[j]
            )));
        }
        Ok(DiskSet {
            centers,
            sigmas,
            assoc,
        })
    }

    pub fn with_kind(centers: Vec<Point>, sigmas: Vec<f64>, kind: AssocKind) -> Result<Self> {
        let assoc = association(kind, centers.len(), sigmas.len())?;
        DiskSet::new(centers, sigmas, assoc)
    }

    /// A single disk.
    pub fn single(center: Point, sigma: f64) -> Result<Self> {
        DiskSet::new(vec![center], vec![sigma], vec![0])
    }

    pub fn n_disks(&self) -> usize {
        self.centers.len()
    }

    pub fn n_radii(&self) -> usize {
        self.sigmas.len()
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn assoc(&self) -> &[usize] {
        &self.assoc
    }

    /// The radius slot used by center `i`.
    pub fn radius_index(&self, i: usize) -> Result<usize> {
        self.assoc.get(i).copied().ok_or_else(|| {
            Error::contract(format!(
                "center index {i} out of range for {} centers",
                self.centers.len()
            ))
        })
    }

    /// Standard deviation used by center `i`. Panics if `i` is out of range.
    pub fn sigma_of(&self, i: usize) -> f64 {
        self.sigmas[self.assoc[i]]
    }

    /// Whether every center and sigma is a finite number.
    pub fn is_finite(&self) -> bool {
        self.centers.iter().all(|c| c.x.is_finite() && c.y.is_finite())
            && self.sigmas.iter().all(|s| s.is_finite())
    }

    /// Name of the first non-finite parameter, if any.
    pub(crate) fn first_non_finite(&self) -> Option<String> {
        for (i, c) in self.centers.iter().enumerate() {
            if !c.x.is_finite() {
                return Some(format!("center {i} x"));
            }
            if !c.y.is_finite() {
                return Some(format!("center {i} y"));
            }
        }
        self.sigmas
            .iter()
            .position(|s| !s.is_finite())
            .map(|j| format!("sigma {j}"))
    }
}

/// A `width x height` grid of {0, 1} labels, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{} (area {})", self.width, self.height, self.area())?;
        if self.width * self.height <= 1024 {
            for row in self.data.chunks(self.width) {
                let line: String = row.iter().map(|&v| if v == 1 { '#' } else { '.' }).collect();
                writeln!(f, "{line}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("mask dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::contract(format!(
                "mask data has {} values for {width}x{height}",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|&v| v > 1) {
            return Err(Error::contract(format!("mask value {} at index {k} is not 0/1", data[k])));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    /// An all-background mask. Panics on zero dimensions.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        BinaryMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Build a mask from a predicate over `(col, row)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = BinaryMask::zeros(width, height);
        for row in 0..height {
            for col in 0..width {
                mask.data[row * width + col] = u8::from(f(col, row));
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    /// Out-of-range coordinates read as background.
    pub fn get_signed(&self, col: isize, row: isize) -> bool {
        col >= 0
            && row >= 0
            && (col as usize) < self.width
            && (row as usize) < self.height
            && self.get(col as usize, row as usize)
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        self.data[row * self.width + col] = u8::from(value);
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn same_shape(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: width,
                right_h: height,
            })
        }
    }

    /// Iterate foreground pixels as `(col, row)` in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(move |(k, _)| (k % self.width, k / self.width))
    }
}

/// A `width x height` grid of finite, nonnegative reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("field dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::contract(format!(
                "field data has {} values for {width}x{height}",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::contract(format!(
                "field value {} at index {k} is not finite and nonnegative",
                data[k]
            )));
        }
        Ok(ScalarField {
            width,
            height,
            data,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        ScalarField {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: width,
                right_h: height,
            })
        }
    }
}

/// An ordered list of points, optionally closed.
///
/// Closed polylines produced by contour tracing of components with fewer than
/// three border pixels keep their one or two points; everything else holds
/// at least two (open) or three (closed) points with no consecutive repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
    closed: bool,
}

impl Polyline {
    pub fn new(points: Vec<Point>, closed: bool) -> Result<Self> {
        let min = if closed { 3 } else { 2 };
        if points.len() < min {
            return Err(Error::contract(format!(
                "{} polyline needs at least {min} points, got {}",
                if closed { "closed" } else { "open" },
                points.len()
            )));
        }
        if let Some(k) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::contract(format!("consecutive duplicate point at index {k}")));
        }
        Ok(Polyline { points, closed })
    }

    /// Closed contour of a tiny component; may hold only one or two points.
    pub(crate) fn degenerate_contour(points: Vec<Point>) -> Self {
        debug_assert!(!points.is_empty());
        Polyline {
            points,
            closed: true,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Polygonal arc length, including the closing edge for closed lines.
    pub fn perimeter(&self) -> f64 {
        let open: f64 = self.points.windows(2).map(|w| w[0].dist(w[1])).sum();
        if self.closed && self.points.len() > 1 {
            open + self.points[self.points.len() - 1].dist(self.points[0])
        } else {
            open
        }
    }

    /// Shoelace sum over the raw coordinates (twice the signed area).
    /// Positive means counter-clockwise when the coordinates are read in the
    /// usual x-right / y-up sense.
    pub fn signed_area2(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let a = self.points[i];
                let b = self.points[(i + 1) % n];
                a.x * b.y - b.x * a.y
            })
            .sum()
    }
}

/// Loss used to supervise the normalized field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Dice,
    Bce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Dice => "dice",
            LossKind::Bce => "bce",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dice" => Ok(LossKind::Dice),
            "bce" => Ok(LossKind::Bce),
            other => Err(format!("unknown loss `{other}` (expected dice or bce)")),
        }
    }
}

pub const DEFAULT_N_DISKS: usize = 16;
pub const DEFAULT_N_RADII: usize = 16;
pub const DEFAULT_EPSILON: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_STEP_SIZE: f64 = 0.05;
pub const DEFAULT_RESTARTS: usize = 3;
pub const DEFAULT_SEED: u64 = 0;

/// Everything needed to fit one disk set to one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_disks: usize,
    pub n_radii: usize,
    pub assoc_kind: AssocKind,
    pub loss_kind: LossKind,
    /// Dice smoothing term.
    pub epsilon: f64,
    /// Inference threshold on the raw field.
    pub alpha: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Early stop after this many iterations without a `min_improvement` gain.
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_disks: DEFAULT_N_DISKS,
            n_radii: DEFAULT_N_RADII,
            assoc_kind: AssocKind::Individual,
            loss_kind: LossKind::Dice,
            epsilon: DEFAULT_EPSILON,
            alpha: DEFAULT_ALPHA,
            max_iters: DEFAULT_MAX_ITERS,
            step_size: DEFAULT_STEP_SIZE,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: 50,
            min_improvement: 1e-6,
            seed: DEFAULT_SEED,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

impl FitConfig {
    /// Default configuration with `n` disks and `m` radii, association
    /// derived from the counts.
    pub fn with_counts(n: usize, m: usize) -> Self {
        FitConfig {
            n_disks: n,
            n_radii: m,
            assoc_kind: AssocKind::for_counts(n, m),
            ..FitConfig::default()
        }
    }

    /// Check every invariant and report all violations.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut v = Vec::new();
        let (n, m) = (self.n_disks, self.n_radii);
        if n < 1 {
            v.push("N ≥ 1".to_string());
        }
        if m < 1 {
            v.push("M ≥ 1".to_string());
        }
        if m > n {
            v.push(format!("M ≤ N (got M={m}, N={n})"));
        }
        if n >= 1 && m >= 1 && m <= n {
            match self.assoc_kind {
                AssocKind::Shared if m != 1 => v.push("shared association requires M = 1".into()),
                AssocKind::Individual if m != n => {
                    v.push("individual association requires M = N".into())
                }
                AssocKind::Grouped if m == n && n > 1 => {
                    v.push("grouped association requires M < N".into())
                }
                _ => {}
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            v.push("alpha ∈ (0,1]".to_string());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            v.push("epsilon > 0".to_string());
        }
        if self.max_iters < 1 {
            v.push("max_iters ≥ 1".to_string());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            v.push("step_size > 0".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) {
            v.push("beta1 ∈ [0,1)".to_string());
        }
        if !(0.0..1.0).contains(&self.beta2) {
            v.push("beta2 ∈ [0,1)".to_string());
        }
        if !(self.adam_eps > 0.0) {
            v.push("adam_eps > 0".to_string());
        }
        if !(self.min_improvement >= 0.0) {
            v.push("min_improvement ≥ 0".to_string());
        }
        if self.restarts < 1 {
            v.push("restarts ≥ 1".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.validate().map_err(Error::InvalidConfig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disks(n: usize, m: usize, kind: AssocKind) -> DiskSet {
        let centers = (0..n).map(|i| Point::new(i as f64, 0.0)).collect();
        DiskSet::with_kind(centers, vec![1.0; m], kind).unwrap()
    }

    #[test]
    fn radius_index_shared() {
        let d = disks(5, 1, AssocKind::Shared);
        for i in 0..5 {
            assert_eq!(d.radius_index(i).unwrap(), 0);
        }
    }

    #[test]
    fn radius_index_individual_is_identity() {
        let d = disks(6, 6, AssocKind::Individual);
        for i in 0..6 {
            assert_eq!(d.radius_index(i).unwrap(), i);
        }
    }

    #[test]
    fn radius_index_grouped_blocks() {
        let d = disks(4, 2, AssocKind::Grouped);
        let got: Vec<_> = (0..4).map(|i| d.radius_index(i).unwrap()).collect();
        assert_eq!(got, vec![0, 0, 1, 1]);
        // last block absorbs the remainder
        assert_eq!(association(AssocKind::Grouped, 5, 2).unwrap(), vec![0, 0, 1, 1, 1]);
        assert_eq!(association(AssocKind::Grouped, 16, 3).unwrap().iter().filter(|&&j| j == 2).count(), 6);
    }

    #[test]
    fn radius_index_out_of_range() {
        let d = disks(3, 3, AssocKind::Individual);
        assert!(matches!(d.radius_index(3), Err(Error::Contract(_))));
    }

    #[test]
    fn disk_set_rejects_orphan_and_bad_sigma() {
        let c = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)];
        assert!(DiskSet::new(c.clone(), vec![1.0, 1.0], vec![0, 0]).is_err());
        assert!(DiskSet::new(c.clone(), vec![1.0, 0.0], vec![0, 1]).is_err());
        assert!(DiskSet::new(c.clone(), vec![f64::NAN], vec![0, 0]).is_err());
        assert!(DiskSet::new(c, vec![1.0; 3], vec![0, 1]).is_err());
    }

    #[test]
    fn validate_default_operating_point() {
        let cfg = FitConfig::with_counts(16, 16);
        assert_eq!(cfg.alpha, 0.5);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn validate_reports_every_violation() {
        let cfg = FitConfig {
            n_radii: 0,
            alpha: 1.5,
            epsilon: 0.0,
            ..FitConfig::default()
        };
        let v = cfg.validate().unwrap_err();
        assert!(v.contains(&"M ≥ 1".to_string()), "{v:?}");
        assert!(v.contains(&"alpha ∈ (0,1]".to_string()), "{v:?}");
        assert!(v.contains(&"epsilon > 0".to_string()), "{v:?}");
    }

    #[test]
    fn validate_alpha_boundaries() {
        let ok = FitConfig { alpha: 1.0, ..FitConfig::default() };
        assert!(ok.validate().is_ok());
        let zero = FitConfig { alpha: 0.0, ..FitConfig::default() };
        assert_eq!(zero.validate().unwrap_err(), vec!["alpha ∈ (0,1]".to_string()]);
    }

    #[test]
    fn validate_assoc_consistency() {
        let cfg = FitConfig {
            assoc_kind: AssocKind::Shared,
            ..FitConfig::with_counts(4, 2)
        };
        assert!(cfg.validate().is_err());
        assert!(FitConfig::with_counts(4, 2).validate().is_ok());
        assert_eq!(FitConfig::with_counts(4, 2).assoc_kind, AssocKind::Grouped);
    }

    #[test]
    fn polyline_invariants() {
        let p = |x, y| Point::new(x, y);
        assert!(Polyline::new(vec![p(0.0, 0.0)], false).is_err());
        assert!(Polyline::new(vec![p(0.0, 0.0), p(1.0, 0.0)], true).is_err());
        assert!(Polyline::new(vec![p(0.0, 0.0), p(0.0, 0.0), p(1.0, 0.0)], false).is_err());
        let sq = Polyline::new(vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)], true).unwrap();
        assert_eq!(sq.perimeter(), 4.0);
        assert_eq!(sq.signed_area2(), 2.0);
    }

    #[test]
    fn mask_and_field_validation() {
        assert!(BinaryMask::new(2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(BinaryMask::new(2, 2, vec![0, 1, 1]).is_err());
        assert!(ScalarField::new(1, 2, vec![0.0, -1.0]).is_err());
        assert!(ScalarField::new(1, 2, vec![0.0, f64::INFINITY]).is_err());
        assert!(ScalarField::new(1, 2, vec![0.0, 3.0]).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn association_is_surjective(n in 1usize..64, m_frac in 0.0f64..1.0) {
            let m = 1 + ((n - 1) as f64 * m_frac) as usize;
            let kind = AssocKind::for_counts(n, m);
            let table = association(kind, n, m).unwrap();
            let mut hit = vec![false; m];
            for &j in &table {
                proptest::prop_assert!(j < m);
                hit[j] = true;
            }
            proptest::prop_assert!(hit.iter().all(|&h| h));
            // contiguous blocks
            proptest::prop_assert!(table.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        }
    }
}
