//! Shared test oracles: central finite differences and deterministic fills.
//!
//! The checker is deliberately independent of the gradient code it verifies:
//! it only ever calls a black-box scalar function of a flat parameter vector.

use denoise_core::rng::Stream;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-3;
pub const FD_FLOOR: f64 = 1e-6;

pub struct FdReport {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl FdReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Relative error with an absolute floor: |a-b| / max(floor, |a|, |b|).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / floor.max(a.abs()).max(b.abs())
}

/// Checks `analytic` against central finite differences of `f` at `x0`,
/// coordinate by coordinate. `coords` selects which coordinates to probe
/// (use `0..x0.len()` for all).
pub fn check_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    coords: impl Iterator<Item = usize>,
) -> FdReport {
    assert_eq!(x0.len(), analytic.len(), "gradient length mismatch");
    let mut x = x0.to_vec();
    let mut checked = 0;
    let mut passed = 0;
    let mut worst: f64 = 0.0;
    for i in coords {
        let saved = x[i];
        x[i] = saved + FD_STEP;
        let up = f(&x);
        x[i] = saved - FD_STEP;
        let down = f(&x);
        x[i] = saved;
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = rel_err(fd, analytic[i], FD_FLOOR);
        checked += 1;
        if err <= FD_REL_TOL {
            passed += 1;
        }
        worst = worst.max(err);
    }
    FdReport {
        checked,
        passed,
        worst,
    }
}

/// Asserts that every probed coordinate matches finite differences.
pub fn assert_gradient_matches(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
) {
    let report = check_gradient(f, x0, analytic, 0..x0.len());
    assert_eq!(
        report.passed, report.checked,
        "finite-difference mismatch: {}/{} coordinates passed, worst relative error {:.3e}",
        report.passed, report.checked, report.worst
    );
}

/// Deterministic fill in [lo, hi) for building test fixtures.
pub fn random_vec(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut s = Stream::keyed(seed, 0xF1, 0);
    (0..n).map(|_| s.range_f64(lo, hi)).collect()
}
