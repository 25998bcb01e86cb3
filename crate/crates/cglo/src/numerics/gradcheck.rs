//! Central-difference gradient verification.

/// Floor for the relative-error denominator so near-zero gradient pairs are
/// compared absolutely instead of amplifying finite-difference noise.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn summary(&self) -> String {
        format!(
            "checked {} coordinates, max relative error {:.3e} (tol {:.1e}): {}",
            self.checks.len(),
            self.max_rel_error,
            self.tol,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compare an analytic gradient against central differences of `f` at `at`.
///
/// `coords` selects which coordinates to probe; pass an empty slice to probe
/// all of them. `h` is the central-difference step, `tol` the relative
/// tolerance each probed coordinate must meet.
pub fn finite_diff_check<F>(
    mut f: F,
    at: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite_diff_check: step must be positive");
    assert_eq!(at.len(), analytic.len());
    let all: Vec<usize>;
    let coords = if coords.is_empty() {
        all = (0..at.len()).collect();
        &all
    } else {
        coords
    };

    let mut point = at.to_vec();
    let mut checks = Vec::with_capacity(coords.len());
    let mut max_rel_error: f64 = 0.0;
    for &i in coords {
        let saved = point[i];
        point[i] = saved + h;
        let plus = f(&point);
        point[i] = saved - h;
        let minus = f(&point);
        point[i] = saved;
        let numeric = (plus - minus) / (2.0 * h);
        let rel_error = relative_error(numeric, analytic[i]);
        max_rel_error = max_rel_error.max(rel_error);
        checks.push(CoordCheck {
            coord: i,
            analytic: analytic[i],
            numeric,
            rel_error,
        });
    }
    GradCheckReport {
        checks,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    }
}
