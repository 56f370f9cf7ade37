//! Central finite-difference gradient verification.
//!
//! The oracle here only ever calls the forward path: it perturbs inputs and
//! differences the scalar loss, so it stays independent of the backward
//! implementation it is used to check. Run it in f64; f32 differencing is
//! too noisy for the 1e-5 relative tolerance the suites assert.

/// Outcome of one gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares analytic gradients against central finite differences.
///
/// `loss` maps a full set of input buffers to a scalar; `analytic` is the
/// gradient produced by the implementation under test, one buffer per input.
/// The error is `|a - n| / max(1, |a|, |n|)` so near-zero gradients are held
/// to an absolute 1e-5 rather than an unbounded relative one.
pub fn check_grads<F>(
    inputs: &[Vec<f64>],
    analytic: &[Vec<f64>],
    eps: f64,
    loss: F,
) -> GradCheckReport
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len(), "one gradient per input");
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_index: 0,
        checked: 0,
    };
    for p in 0..inputs.len() {
        assert_eq!(
            inputs[p].len(),
            analytic[p].len(),
            "gradient length mismatch on input {p}"
        );
        for j in 0..inputs[p].len() {
            let orig = work[p][j];
            work[p][j] = orig + eps;
            let up = loss(&work);
            work[p][j] = orig - eps;
            let down = loss(&work);
            work[p][j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[p][j];
            let denom = 1.0f64.max(a.abs()).max(numeric.abs());
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = p;
                report.worst_index = j;
            }
        }
    }
    report
}
