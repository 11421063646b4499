//! Douglas-Peucker simplification.

use crate::error::{Error, Result};
use crate::types::{Point, Polyline};

/// Tolerance proportional to a contour's perimeter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplifyParams {
    pub beta: f64,
}

impl SimplifyParams {
    pub fn new(beta: f64) -> Result<Self> {
        if beta >= 0.0 && beta.is_finite() {
            Ok(SimplifyParams { beta })
        } else {
            Err(Error::contract(format!("beta must be nonnegative, got {beta}")))
        }
    }

    pub fn tolerance(&self, line: &Polyline) -> f64 {
        self.beta * line.perimeter()
    }
}

/// Distance from `p` to the segment `a`-`b`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2;
    if t <= 0.0 {
        p.dist(a)
    } else if t >= 1.0 {
        p.dist(b)
    } else {
        p.dist(Point::new(a.x + t * vx, a.y + t * vy))
    }
}

/// Indices kept from `pts[lo..=hi]`, exclusive of both ends, in order.
fn keep_inner(pts: &[Point], lo: usize, hi: usize, tol: f64, out: &mut Vec<usize>) {
    if hi <= lo + 1 {
        return;
    }
    let (a, b) = (pts[lo], pts[hi]);
    let mut far = lo;
    let mut far_d = -1.0;
    for (k, &p) in pts.iter().enumerate().take(hi).skip(lo + 1) {
        let d = segment_distance(p, a, b);
        if d > far_d {
            far = k;
            far_d = d;
        }
    }
    if far_d > tol {
        keep_inner(pts, lo, far, tol, out);
        out.push(far);
        keep_inner(pts, far, hi, tol, out);
    }
}

fn simplify_open(pts: &[Point], tol: f64) -> Vec<Point> {
    let mut keep = vec![0];
    keep_inner(pts, 0, pts.len() - 1, tol, &mut keep);
    keep.push(pts.len() - 1);
    keep.into_iter().map(|k| pts[k]).collect()
}

/// Douglas-Peucker with a distance tolerance in pixels.
///
/// Closed lines are first split at their two mutually farthest vertices
/// (lowest index pair on ties); both arcs are simplified and the result
/// starts at the first anchor. A closed result keeps at least three vertices.
/// A zero tolerance returns the input unchanged.
pub fn simplify_dp(line: &Polyline, tolerance: f64) -> Result<Polyline> {
    if !(tolerance >= 0.0) {
        return Err(Error::contract(format!("tolerance must be nonnegative, got {tolerance}")));
    }
    let pts = line.points();
    if tolerance == 0.0 || pts.len() <= 2 || (line.is_closed() && pts.len() <= 3) {
        return Ok(line.clone());
    }
    if !line.is_closed() {
        return Polyline::new(simplify_open(pts, tolerance), false);
    }

    let n = pts.len();
    let (mut ai, mut bi, mut best) = (0, 1, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = pts[i].dist2(pts[j]);
            if d > best {
                (ai, bi, best) = (i, j, d);
            }
        }
    }
    let arc_a: Vec<Point> = pts[ai..=bi].to_vec();
    let arc_b: Vec<Point> = pts[bi..].iter().chain(&pts[..=ai]).copied().collect();
    let kept_a = simplify_open(&arc_a, tolerance);
    let kept_b = simplify_open(&arc_b, tolerance);
    let mut out = kept_a;
    out.extend_from_slice(&kept_b[1..kept_b.len() - 1]);

    if out.len() < 3 {
        // keep the vertex farthest from the anchor chord
        let (a, b) = (pts[ai], pts[bi]);
        let order = arc_a[1..arc_a.len() - 1]
            .iter()
            .map(|&p| (true, p))
            .chain(arc_b[1..arc_b.len() - 1].iter().map(|&p| (false, p)));
        let mut pick: Option<(bool, Point, f64)> = None;
        for (in_a, p) in order {
            let d = segment_distance(p, a, b);
            if pick.is_none_or(|(_, _, best)| d > best) {
                pick = Some((in_a, p, d));
            }
        }
        let (in_a, p, _) = pick.expect("closed line with more than three vertices");
        out = if in_a { vec![a, p, b] } else { vec![a, b, p] };
    }
    Polyline::new(out, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(p: &[(f64, f64)], closed: bool) -> Polyline {
        Polyline::new(p.iter().map(|&(x, y)| Point::new(x, y)).collect(), closed).unwrap()
    }

    /// Distance from `p` to the nearest edge of `chain`.
    fn chain_distance(p: Point, chain: &Polyline) -> f64 {
        let q = chain.points();
        let mut edges: Vec<(Point, Point)> = q.windows(2).map(|w| (w[0], w[1])).collect();
        if chain.is_closed() {
            edges.push((q[q.len() - 1], q[0]));
        }
        edges.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn collinear_points_collapse() {
        let l = line(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)], false);
        let s = simplify_dp(&l, 0.1).unwrap();
        assert_eq!(s.points(), &[Point::new(0.0, 0.0), Point::new(2.0, 2.0)]);
    }

    #[test]
    fn zero_tolerance_is_identity() {
        let l = line(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 3.0)], true);
        assert_eq!(simplify_dp(&l, 0.0).unwrap(), l);
        assert!(simplify_dp(&l, -1.0).is_err());
    }

    #[test]
    fn staircase_collapses_to_endpoints() {
        let mut p = vec![(0.0, 0.0)];
        for k in 0..10 {
            let k = k as f64;
            p.push((k + 1.0, k));
            p.push((k + 1.0, k + 1.0));
        }
        let l = line(&p, false);
        let s = simplify_dp(&l, 1.0).unwrap();
        assert_eq!(s.len(), 2);
        for &q in l.points() {
            assert!(chain_distance(q, &s) <= 1.0);
        }
    }

    #[test]
    fn closed_square_keeps_corners() {
        let mut p = Vec::new();
        for k in 0..4 { p.push((k as f64, 0.0)); }
        for k in 0..4 { p.push((4.0, k as f64)); }
        for k in 0..4 { p.push((4.0 - k as f64, 4.0)); }
        for k in 0..4 { p.push((0.0, 4.0 - k as f64)); }
        let l = line(&p, true);
        let s = simplify_dp(&l, 0.5).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.points()[0], Point::new(0.0, 0.0));
        assert_eq!(simplify_dp(&s, 0.5).unwrap(), s);
    }

    #[test]
    fn closed_line_keeps_three_vertices() {
        let l = line(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (1.0, 0.0)], true);
        let s = simplify_dp(&l, 5.0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(simplify_dp(&s, 5.0).unwrap(), s);
    }

    #[test]
    fn beta_params() {
        assert!(SimplifyParams::new(-0.1).is_err());
        let l = line(&[(0.0, 0.0), (3.0, 0.0), (3.0, 4.0)], true);
        assert!((SimplifyParams::new(0.01).unwrap().tolerance(&l) - 0.12).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn simplification_contract(
            raw in proptest::collection::vec((0i32..40, 0i32..40), 3..40),
            tol in 0.0f64..6.0,
            closed in proptest::bool::ANY,
        ) {
            let mut p: Vec<Point> = raw.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect();
            p.dedup();
            if closed && p.len() > 1 && p[0] == p[p.len() - 1] { p.pop(); }
            let min = if closed { 3 } else { 2 };
            proptest::prop_assume!(p.len() >= min);
            let l = Polyline::new(p, closed).unwrap();
            let s = simplify_dp(&l, tol).unwrap();
            proptest::prop_assert!(s.len() <= l.len());
            for &q in l.points() {
                proptest::prop_assert!(chain_distance(q, &s) <= tol + 1e-12);
            }
            proptest::prop_assert_eq!(simplify_dp(&s, tol).unwrap(), s);
        }
    }
}
