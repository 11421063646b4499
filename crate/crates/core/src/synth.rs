//! Synthetic ground-truth shapes and the fixed evaluation suite.
//!
//! Shapes are rasterized analytically: a pixel is foreground when its center
//! lies inside the shape.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, Point};

/// Shape family and its size parameters, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeKind {
    Disk { radius: f64 },
    Rectangle { width: f64, height: f64 },
    Annulus { outer: f64, inner: f64 },
    /// Two perpendicular arms of the given length and thickness sharing a corner.
    LShape { arm: f64, thickness: f64 },
    /// Head, torso, arms and legs made of capsules; `scale` is roughly the height.
    StickFigure { scale: f64 },
    /// `count` disks scattered within `spread` of the center.
    Blobs { count: usize, radius: f64, spread: f64 },
}

impl ShapeKind {
    /// Category id used by the suite.
    pub fn category(&self) -> u32 {
        match self {
            ShapeKind::Disk { .. } => 0,
            ShapeKind::Rectangle { .. } => 1,
            ShapeKind::Annulus { .. } => 2,
            ShapeKind::LShape { .. } => 3,
            ShapeKind::StickFigure { .. } => 4,
            ShapeKind::Blobs { .. } => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Disk { .. } => "disk",
            ShapeKind::Rectangle { .. } => "rectangle",
            ShapeKind::Annulus { .. } => "annulus",
            ShapeKind::LShape { .. } => "lshape",
            ShapeKind::StickFigure { .. } => "stickfigure",
            ShapeKind::Blobs { .. } => "blobs",
        }
    }
}

/// A shape placed on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub center: Point,
    /// Rotation in radians, counter-clockwise on screen.
    pub angle: f64,
    /// Only used by shapes with random structure.
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, center: Point) -> Self {
        ShapeSpec {
            kind,
            center,
            angle: 0.0,
            seed: 0,
        }
    }
}

enum Primitive {
    Disk(Point, f64),
    Capsule(Point, Point, f64),
    Rect { half_w: f64, half_h: f64, offset: Point },
}

impl Primitive {
    fn contains(&self, p: Point) -> bool {
        match *self {
            Primitive::Disk(c, r) => p.dist2(c) <= r * r,
            Primitive::Capsule(a, b, r) => {
                crate::postprocess::segment_distance(p, a, b) <= r
            }
            Primitive::Rect { half_w, half_h, offset } => {
                (p.x - offset.x).abs() <= half_w && (p.y - offset.y).abs() <= half_h
            }
        }
    }

    fn reach(&self) -> f64 {
        match *self {
            Primitive::Disk(c, r) => c.dist(Point::new(0.0, 0.0)) + r,
            Primitive::Capsule(a, b, r) => a.dist(Point::new(0.0, 0.0)).max(b.dist(Point::new(0.0, 0.0))) + r,
            Primitive::Rect { half_w, half_h, offset } => {
                (offset.x.abs() + half_w).hypot(offset.y.abs() + half_h)
            }
        }
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateShape(format!("{what} must be positive, got {v}")))
    }
}

/// Union of `plus` minus union of `minus`, in shape-local coordinates.
fn primitives(spec: &ShapeSpec) -> Result<(Vec<Primitive>, Vec<Primitive>)> {
    let o = Point::new(0.0, 0.0);
    Ok(match spec.kind {
        ShapeKind::Disk { radius } => {
            positive("radius", radius)?;
            (vec![Primitive::Disk(o, radius)], vec![])
        }
        ShapeKind::Rectangle { width, height } => {
            positive("width", width)?;
            positive("height", height)?;
            let r = Primitive::Rect {
                half_w: width / 2.0,
                half_h: height / 2.0,
                offset: o,
            };
            (vec![r], vec![])
        }
        ShapeKind::Annulus { outer, inner } => {
            positive("outer radius", outer)?;
            positive("inner radius", inner)?;
            if inner >= outer {
                return Err(Error::DegenerateShape(format!("inner radius {inner} ≥ outer radius {outer}")));
            }
            (vec![Primitive::Disk(o, outer)], vec![Primitive::Disk(o, inner)])
        }
        ShapeKind::LShape { arm, thickness } => {
            positive("arm", arm)?;
            positive("thickness", thickness)?;
            if thickness >= arm {
                return Err(Error::DegenerateShape(format!("thickness {thickness} ≥ arm {arm}")));
            }
            // corner at bottom-left of the arm-by-arm bounding square
            let h = arm / 2.0;
            let t = thickness / 2.0;
            let vertical = Primitive::Rect {
                half_w: t,
                half_h: h,
                offset: Point::new(-h + t, 0.0),
            };
            let horizontal = Primitive::Rect {
                half_w: h,
                half_h: t,
                offset: Point::new(0.0, h - t),
            };
            (vec![vertical, horizontal], vec![])
        }
        ShapeKind::StickFigure { scale } => {
            positive("scale", scale)?;
            let s = scale;
            let limb = 0.06 * s;
            let p = |x: f64, y: f64| Point::new(x * s, y * s);
            let neck = p(0.0, -0.5);
            let hip = p(0.0, 0.2);
            let shoulder = p(0.0, -0.32);
            (
                vec![
                    Primitive::Disk(p(0.0, -0.64), 0.14 * s),
                    Primitive::Capsule(neck, hip, limb),
                    Primitive::Capsule(shoulder, p(-0.4, -0.05), limb),
                    Primitive::Capsule(shoulder, p(0.4, -0.05), limb),
                    Primitive::Capsule(hip, p(-0.28, 0.72), limb),
                    Primitive::Capsule(hip, p(0.28, 0.72), limb),
                ],
                vec![],
            )
        }
        ShapeKind::Blobs { count, radius, spread } => {
            if count == 0 {
                return Err(Error::DegenerateShape("blob count must be at least 1".into()));
            }
            positive("blob radius", radius)?;
            if !(spread >= 0.0 && spread.is_finite()) {
                return Err(Error::DegenerateShape(format!("spread must be nonnegative, got {spread}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let blobs = (0..count)
                .map(|_| {
                    let a = rng.gen_range(0.0..2.0 * PI);
                    let d = spread * rng.gen::<f64>().sqrt();
                    Primitive::Disk(Point::new(d * a.cos(), d * a.sin()), radius)
                })
                .collect();
            (blobs, vec![])
        }
    })
}

/// Rasterize a shape at pixel centers.
///
/// The whole shape must fit inside the grid; shapes covering no pixel center
/// are rejected as degenerate.
pub fn generate(spec: &ShapeSpec, width: usize, height: usize) -> Result<BinaryMask> {
    let (plus, minus) = primitives(spec)?;
    let c = spec.center;
    if !(c.x.is_finite() && c.y.is_finite() && spec.angle.is_finite()) {
        return Err(Error::DegenerateShape("pose must be finite".into()));
    }
    let reach = plus.iter().map(Primitive::reach).fold(0.0, f64::max);
    if c.x - reach < 0.0 || c.y - reach < 0.0 || c.x + reach > width as f64 || c.y + reach > height as f64 {
        return Err(Error::DegenerateShape(format!(
            "{} of reach {reach:.2} at ({}, {}) leaves the {width}x{height} grid",
            spec.kind.name(),
            c.x,
            c.y
        )));
    }
    let (sin, cos) = spec.angle.sin_cos();
    let mask = BinaryMask::from_fn(width, height, |col, row| {
        let dx = col as f64 + 0.5 - c.x;
        let dy = row as f64 + 0.5 - c.y;
        // inverse rotation into shape-local coordinates
        let p = Point::new(cos * dx + sin * dy, -sin * dx + cos * dy);
        plus.iter().any(|q| q.contains(p)) && !minus.iter().any(|q| q.contains(p))
    });
    if mask.is_empty() {
        return Err(Error::DegenerateShape(format!("{} covers no pixel center", spec.kind.name())));
    }
    Ok(mask)
}

/// Side of the suite grid.
pub const SUITE_SIZE: usize = 128;

/// One suite member.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteItem {
    pub spec: ShapeSpec,
    pub mask: BinaryMask,
    pub category: u32,
}

/// The fixed 24-instance suite on a 128x128 grid: 6 disks, 6 rectangles
/// with aspect ratios from 1 to 4, 4 annuli, 4 L-shapes and 4 stick figures.
/// `seed` perturbs poses only.
pub fn standard_suite(seed: u64) -> Vec<SuiteItem> {
    let mut kinds = Vec::with_capacity(24);
    for r in [12.0, 16.0, 20.0, 24.0, 28.0, 32.0] {
        kinds.push(ShapeKind::Disk { radius: r });
    }
    for aspect in [1.0, 1.5, 2.0, 2.5, 3.0, 4.0] {
        let area: f64 = 1800.0;
        kinds.push(ShapeKind::Rectangle {
            width: (area * aspect).sqrt(),
            height: (area / aspect).sqrt(),
        });
    }
    for (outer, inner) in [(20.0, 10.0), (24.0, 12.0), (28.0, 14.0), (30.0, 18.0)] {
        kinds.push(ShapeKind::Annulus { outer, inner });
    }
    for (arm, thickness) in [(48.0, 14.0), (56.0, 16.0), (64.0, 18.0), (72.0, 20.0)] {
        kinds.push(ShapeKind::LShape { arm, thickness });
    }
    for scale in [40.0, 48.0, 56.0, 64.0] {
        kinds.push(ShapeKind::StickFigure { scale });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = SUITE_SIZE as f64 / 2.0;
    kinds
        .into_iter()
        .enumerate()
        .map(|(k, kind)| {
            let jitter = Point::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let angle = match kind {
                ShapeKind::Rectangle { .. } | ShapeKind::LShape { .. } => {
                    (k % 4) as f64 * PI / 12.0 + rng.gen_range(-0.05..0.05)
                }
                _ => rng.gen_range(-0.1..0.1),
            };
            let spec = ShapeSpec {
                kind,
                center: Point::new(mid + jitter.x, mid + jitter.y),
                angle,
                seed: seed.wrapping_add(k as u64),
            };
            let mask = generate(&spec, SUITE_SIZE, SUITE_SIZE).expect("suite shapes fit the grid");
            SuiteItem {
                category: kind.category(),
                spec,
                mask,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::extract_contours;

    fn centered(kind: ShapeKind) -> ShapeSpec {
        ShapeSpec::new(kind, Point::new(64.0, 64.0))
    }

    #[test]
    fn disk_area() {
        let m = generate(&centered(ShapeKind::Disk { radius: 20.0 }), 128, 128).unwrap();
        let expected = PI * 400.0;
        assert!((m.area() as f64 - expected).abs() <= 0.01 * expected, "{}", m.area());
    }

    #[test]
    fn annulus_area_and_topology() {
        let m = generate(&centered(ShapeKind::Annulus { outer: 20.0, inner: 10.0 }), 128, 128).unwrap();
        let expected = PI * 300.0;
        assert!((m.area() as f64 - expected).abs() <= 0.01 * expected, "{}", m.area());
        let c = extract_contours(&m);
        assert_eq!(c.iter().filter(|c| !c.is_hole).count(), 1);
        assert_eq!(c.iter().filter(|c| c.is_hole).count(), 1);
    }

    #[test]
    fn rectangle_and_lshape_areas() {
        let r = generate(&centered(ShapeKind::Rectangle { width: 40.0, height: 20.0 }), 128, 128).unwrap();
        assert!((r.area() as f64 - 800.0).abs() <= 0.05 * 800.0);
        let l = generate(&centered(ShapeKind::LShape { arm: 40.0, thickness: 10.0 }), 128, 128).unwrap();
        let expected = 2.0 * 400.0 - 100.0;
        assert!((l.area() as f64 - expected).abs() <= 0.05 * expected, "{}", l.area());
    }

    #[test]
    fn degenerate_and_out_of_bounds() {
        assert!(generate(&centered(ShapeKind::Disk { radius: 0.0 }), 128, 128).is_err());
        assert!(generate(&centered(ShapeKind::Annulus { outer: 10.0, inner: 10.0 }), 128, 128).is_err());
        assert!(generate(&centered(ShapeKind::Disk { radius: 70.0 }), 128, 128).is_err());
        assert!(generate(&centered(ShapeKind::Blobs { count: 0, radius: 3.0, spread: 5.0 }), 128, 128).is_err());
        // too small to cover any pixel center
        let tiny = ShapeSpec::new(ShapeKind::Disk { radius: 0.1 }, Point::new(1.0, 1.0));
        assert!(generate(&tiny, 4, 4).is_err());
    }

    #[test]
    fn blobs_depend_on_seed_only() {
        let mut s = centered(ShapeKind::Blobs { count: 5, radius: 6.0, spread: 20.0 });
        let a = generate(&s, 128, 128).unwrap();
        assert_eq!(generate(&s, 128, 128).unwrap(), a);
        s.seed = 1;
        assert_ne!(generate(&s, 128, 128).unwrap(), a);
    }

    #[test]
    fn suite_composition() {
        let suite = standard_suite(0);
        assert_eq!(suite.len(), 24);
        let count = |c: u32| suite.iter().filter(|s| s.category == c).count();
        assert_eq!([count(0), count(1), count(2), count(3), count(4)], [6, 6, 4, 4, 4]);
        assert!(suite.iter().all(|s| !s.mask.is_empty()));
        for s in &suite {
            assert_eq!(generate(&s.spec, SUITE_SIZE, SUITE_SIZE).unwrap(), s.mask);
        }
        assert_eq!(standard_suite(0), suite);
        assert_ne!(standard_suite(1), suite);
    }

    #[test]
    fn suite_annuli_have_one_hole() {
        for s in standard_suite(5).iter().filter(|s| s.category == 2) {
            let c = extract_contours(&s.mask);
            assert_eq!((c.len(), c.iter().filter(|c| c.is_hole).count()), (2, 1));
        }
    }

    #[test]
    fn stick_figures_are_connected() {
        for s in standard_suite(0).iter().filter(|s| s.category == 4) {
            let outer = extract_contours(&s.mask).iter().filter(|c| !c.is_hole).count();
            assert_eq!(outer, 1);
        }
    }
}
