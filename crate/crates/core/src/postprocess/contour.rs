//! Topological border following over 8-connected foreground.
//!
//! Every outer border and every hole border is traced once, in the order
//! their first pixel is met by a raster scan. Contour vertices are pixel
//! centers.

use crate::types::{BinaryMask, Point, Polyline};

/// A traced border.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub polyline: Polyline,
    /// Border between a component and one of its holes.
    pub is_hole: bool,
}

// Neighbor offsets (drow, dcol), counter-clockwise on screen starting east.
const DIRS: [(isize, isize); 8] = [
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn dir_of(dr: isize, dc: isize) -> usize {
    DIRS.iter()
        .position(|&d| d == (dr, dc))
        .expect("neighbor offset")
}

struct Labels {
    stride: usize,
    data: Vec<i32>,
}

impl Labels {
    fn at(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.stride + c]
    }

    fn set(&mut self, r: usize, c: usize, v: i32) {
        self.data[r * self.stride + c] = v;
    }

    fn step(r: usize, c: usize, d: usize) -> (usize, usize) {
        let (dr, dc) = DIRS[d];
        ((r as isize + dr) as usize, (c as isize + dc) as usize)
    }
}

/// Trace every border of the mask. Outer borders come out counter-clockwise
/// and hole borders clockwise (by the sign of [`Polyline::signed_area2`]),
/// each starting at its top-most, then left-most vertex.
pub fn extract_contours(mask: &BinaryMask) -> Vec<Contour> {
    let (w, h) = (mask.width(), mask.height());
    // one-pixel background frame
    let stride = w + 2;
    let mut f = Labels {
        stride,
        data: vec![0; stride * (h + 2)],
    };
    for (col, row) in mask.foreground() {
        f.set(row + 1, col + 1, 1);
    }

    let mut contours = Vec::new();
    let mut nbd = 1;
    for i in 1..=h {
        for j in 1..=w {
            let v = f.at(i, j);
            if v == 0 {
                continue;
            }
            let from = if v == 1 && f.at(i, j - 1) == 0 {
                Some(((i, j - 1), false))
            } else if v >= 1 && f.at(i, j + 1) == 0 {
                Some(((i, j + 1), true))
            } else {
                None
            };
            if let Some((from, is_hole)) = from {
                nbd += 1;
                let pixels = follow(&mut f, (i, j), from, nbd);
                contours.push(finish(pixels, is_hole));
            }
        }
    }
    contours
}

fn follow(f: &mut Labels, start: (usize, usize), from: (usize, usize), nbd: i32) -> Vec<(usize, usize)> {
    let (i, j) = start;
    // 3.1: clockwise search around the start for a foreground neighbor
    let d0 = dir_of(from.0 as isize - i as isize, from.1 as isize - j as isize);
    let first = (0..8)
        .map(|k| (d0 + 8 - k) % 8)
        .find(|&d| {
            let (r, c) = Labels::step(i, j, d);
            f.at(r, c) != 0
        });
    let Some(d1) = first else {
        f.set(i, j, -nbd);
        return vec![(i, j)];
    };
    let p1 = Labels::step(i, j, d1);

    let mut out = vec![(i, j)];
    let mut p2 = p1;
    let mut p3 = (i, j);
    loop {
        // 3.3: counter-clockwise search around p3, starting after p2
        let back = dir_of(p2.0 as isize - p3.0 as isize, p2.1 as isize - p3.1 as isize);
        let mut east_zero = false;
        let mut p4 = p3;
        for k in 1..=8 {
            let d = (back + k) % 8;
            let (r, c) = Labels::step(p3.0, p3.1, d);
            if f.at(r, c) != 0 {
                p4 = (r, c);
                break;
            }
            if d == 0 {
                east_zero = true;
            }
        }
        // 3.4
        if east_zero {
            f.set(p3.0, p3.1, -nbd);
        } else if f.at(p3.0, p3.1) == 1 {
            f.set(p3.0, p3.1, nbd);
        }
        // 3.5
        if p4 == (i, j) && p3 == p1 {
            break;
        }
        p2 = p3;
        p3 = p4;
        out.push(p3);
    }
    out
}

fn finish(pixels: Vec<(usize, usize)>, is_hole: bool) -> Contour {
    // padded (row, col) -> pixel center
    let mut pts: Vec<Point> = pixels
        .iter()
        .map(|&(r, c)| Point::new(c as f64 - 0.5, r as f64 - 0.5))
        .collect();
    let start = pts
        .iter()
        .enumerate()
        .min_by(|(ka, a), (kb, b)| {
            a.y.total_cmp(&b.y)
                .then(a.x.total_cmp(&b.x))
                .then(ka.cmp(kb))
        })
        .map(|(k, _)| k)
        .unwrap_or(0);
    pts.rotate_left(start);

    let polyline = if pts.len() < 3 {
        Polyline::degenerate_contour(pts)
    } else {
        let mut line = Polyline::new(pts.clone(), true).expect("traced border has no repeats");
        let area = line.signed_area2();
        let want_positive = !is_hole;
        if area != 0.0 && (area > 0.0) != want_positive {
            pts[1..].reverse();
            line = Polyline::new(pts, true).expect("reversal keeps validity");
        }
        line
    };
    Contour { polyline, is_hole }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |c, r| rows[r].as_bytes()[c] == b'#')
    }

    fn pts(c: &Contour) -> Vec<(f64, f64)> {
        c.polyline.points().iter().map(|p| (p.x, p.y)).collect()
    }

    #[test]
    fn empty_mask_has_no_contours() {
        assert!(extract_contours(&BinaryMask::zeros(5, 4)).is_empty());
    }

    #[test]
    fn filled_square_traces_its_border() {
        let m = mask(&[".....", ".###.", ".###.", ".###.", "....."]);
        let c = extract_contours(&m);
        assert_eq!(c.len(), 1);
        assert!(!c[0].is_hole);
        let got = pts(&c[0]);
        assert_eq!(got.len(), 8);
        assert_eq!(got[0], (1.5, 1.5));
        // hand-traced ring of the 8 border pixels; positive area on raw
        // coordinates runs east along the top row first
        let expected = [
            (1.5, 1.5), (2.5, 1.5), (3.5, 1.5), (3.5, 2.5),
            (3.5, 3.5), (2.5, 3.5), (1.5, 3.5), (1.5, 2.5),
        ];
        assert_eq!(got, expected);
        assert!(c[0].polyline.signed_area2() > 0.0);
    }

    #[test]
    fn square_with_hole() {
        let m = mask(&["###", "#.#", "###"]);
        let c = extract_contours(&m);
        assert_eq!(c.len(), 2);
        assert!(!c[0].is_hole && c[1].is_hole);
        assert!(c[0].polyline.signed_area2() > 0.0);
        assert!(c[1].polyline.signed_area2() < 0.0);
        assert_eq!(c[0].polyline.len(), 8);
        // the hole border steps diagonally past the corners
        assert_eq!(c[1].polyline.len(), 4);
        assert_eq!(c[1].polyline.points()[0], Point::new(1.5, 0.5));
    }

    #[test]
    fn components_are_separate_with_8_connectivity() {
        let m = mask(&["#..#", ".#..", "...#"]);
        // (0,0)-(1,1) diagonal join; (3,0) alone; (3,2) alone
        let c = extract_contours(&m);
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].polyline.len(), 2);
        assert_eq!(c[1].polyline.len(), 1);
        assert_eq!(c[2].polyline.len(), 1);
    }

    #[test]
    fn four_connected_background_hole() {
        // a diagonal gap does not let the hole escape under 4-connectivity
        let m = mask(&["####", "#..#", "#.##", "####"]);
        let c = extract_contours(&m);
        assert_eq!(c.iter().filter(|c| c.is_hole).count(), 1);
    }

    #[test]
    fn line_contour_walks_back() {
        let m = mask(&["###"]);
        let c = extract_contours(&m);
        assert_eq!(pts(&c[0]), vec![(0.5, 0.5), (1.5, 0.5), (2.5, 0.5), (1.5, 0.5)]);
    }

    #[test]
    fn nested_component_inside_hole() {
        let m = mask(&[
            "#######",
            "#.....#",
            "#.###.#",
            "#.#.#.#",
            "#.###.#",
            "#.....#",
            "#######",
        ]);
        let c = extract_contours(&m);
        assert_eq!(c.iter().filter(|c| !c.is_hole).count(), 2);
        assert_eq!(c.iter().filter(|c| c.is_hole).count(), 2);
    }
}
