//! Even-odd polygon fill sampled at pixel centers.
//!
//! A pixel is set when its center lies on any polygon edge or when a ray
//! from it crosses the polygon boundaries an odd number of times. Closed
//! boundaries make contours traced through pixel centers fill back to their
//! own pixels; nested holes subtract by parity.

use crate::error::{Error, Result};
use crate::types::{BinaryMask, Point, Polyline};

const ON_EDGE_EPS: f64 = 1e-9;

fn edges(line: &Polyline) -> impl Iterator<Item = (Point, Point)> + '_ {
    let p = line.points();
    let n = p.len();
    (0..n).map(move |k| (p[k], p[(k + 1) % n]))
}

/// Fill closed polylines into a `width x height` mask.
pub fn rasterize_polygon(polys: &[Polyline], width: usize, height: usize) -> Result<BinaryMask> {
    if let Some(k) = polys.iter().position(|p| !p.is_closed()) {
        return Err(Error::contract(format!("polyline {k} is open; only closed polygons can be filled")));
    }
    let mut mask = BinaryMask::zeros(width, height);

    // interior by parity
    let mut xs = Vec::new();
    for row in 0..height {
        let y = row as f64 + 0.5;
        xs.clear();
        for line in polys {
            for (a, b) in edges(line) {
                if (a.y <= y && y < b.y) || (b.y <= y && y < a.y) {
                    xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
                }
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        let mut k = 0;
        for col in 0..width {
            let x = col as f64 + 0.5;
            while k < xs.len() && xs[k] <= x {
                k += 1;
            }
            if (xs.len() - k) % 2 == 1 {
                mask.set(col, row, true);
            }
        }
    }

    // boundary pixels
    for line in polys {
        for (a, b) in edges(line) {
            mark_segment(&mut mask, a, b);
        }
    }
    Ok(mask)
}

fn mark_segment(mask: &mut BinaryMask, a: Point, b: Point) {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let to_index = |v: f64| (v - 0.5).round() as isize;
    let is_center = |v: f64| (v - 0.5 - (v - 0.5).round()).abs() <= ON_EDGE_EPS;
    let mut put = |col: isize, row: isize| {
        if col >= 0 && row >= 0 && col < w && row < h {
            mask.set(col as usize, row as usize, true);
        }
    };
    if (a.y - b.y).abs() <= ON_EDGE_EPS {
        if !is_center(a.y) {
            return;
        }
        let row = to_index(a.y);
        let (lo, hi) = (a.x.min(b.x), a.x.max(b.x));
        let start = (lo - 0.5 - ON_EDGE_EPS).ceil() as isize;
        let end = (hi - 0.5 + ON_EDGE_EPS).floor() as isize;
        for col in start..=end {
            put(col, row);
        }
        return;
    }
    let (lo, hi) = (a.y.min(b.y), a.y.max(b.y));
    let start = (lo - 0.5 - ON_EDGE_EPS).ceil() as isize;
    let end = (hi - 0.5 + ON_EDGE_EPS).floor() as isize;
    for row in start..=end {
        let y = row as f64 + 0.5;
        let x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
        if is_center(x) {
            put(to_index(x), row);
        }
    }
}
