//! Contour extraction, Douglas-Peucker smoothing and polygon fill.

mod contour;
mod raster;
mod simplify;

pub use contour::{extract_contours, Contour};
pub use raster::rasterize_polygon;
pub use simplify::{segment_distance, simplify_dp, SimplifyParams};

use crate::error::Result;
use crate::types::{BinaryMask, Polyline};

/// Simplify every contour at `beta` times its own perimeter.
pub fn simplify_contours(contours: &[Contour], params: SimplifyParams) -> Result<Vec<Contour>> {
    contours
        .iter()
        .map(|c| {
            Ok(Contour {
                polyline: simplify_dp(&c.polyline, params.tolerance(&c.polyline))?,
                is_hole: c.is_hole,
            })
        })
        .collect()
}

/// Trace, simplify and refill a mask.
pub fn smooth_mask(mask: &BinaryMask, params: SimplifyParams) -> Result<BinaryMask> {
    let simplified = simplify_contours(&extract_contours(mask), params)?;
    let polys: Vec<Polyline> = simplified.into_iter().map(|c| c.polyline).collect();
    rasterize_polygon(&polys, mask.width(), mask.height())
}
