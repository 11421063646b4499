//! Shared fixtures for the benchmarks.

use diskcover::fitter::init_disks;
use diskcover::synth::standard_suite;
use diskcover::{BinaryMask, DiskSet, FitConfig};

/// Suite index of the 2:1 rectangle.
pub const RECTANGLE: usize = 8;
/// Suite index of the first annulus.
pub const ANNULUS: usize = 12;

pub fn suite_mask(index: usize) -> BinaryMask {
    standard_suite(0).swap_remove(index).mask
}

/// Fit configuration with N = M = `n` and a single restart.
pub fn config(n: usize) -> FitConfig {
    FitConfig {
        n_disks: n,
        n_radii: n,
        restarts: 1,
        ..FitConfig::default()
    }
}

/// The initial disk set the fitter would start from.
pub fn initial_disks(gt: &BinaryMask, n: usize) -> DiskSet {
    init_disks(gt, &config(n)).expect("suite masks are non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        let gt = suite_mask(ANNULUS);
        assert!(!gt.is_empty());
        assert_eq!(initial_disks(&gt, 16).n_disks(), 16);
        assert!(!suite_mask(RECTANGLE).is_empty());
    }
}
