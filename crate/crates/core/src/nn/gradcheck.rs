/// Denominator floor for relative errors, so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// The relative error of coordinate `i` is
/// `|analytic_i − numeric_i| / max(|numeric_i|, FD_ABS_FLOOR)`, so a gradient
/// scaled by 2 reports an error of 1. `coords` restricts the check to a
/// subset of coordinates.
pub fn finite_diff_check<F>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    coords: Option<&[usize]>,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(
        params.len(),
        analytic.len(),
        "parameter/gradient length mismatch"
    );
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
    };
    for &i in coords {
        let orig = theta[i];
        theta[i] = orig + epsilon;
        let up = loss(&theta);
        theta[i] = orig - epsilon;
        let down = loss(&theta);
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(FD_ABS_FLOOR);
        report.checked += 1;
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}
