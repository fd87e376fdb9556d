//! Central finite-difference verification of analytic gradients.
//!
//! Given a scalar loss as a pure function of a flat parameter vector and the
//! analytic gradient at a point, every coordinate is perturbed both ways and
//! the quotient compared. This is the independent oracle for the reverse-mode
//! implementation; it never calls the tape's backward pass.

/// Worst-case result of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    /// Coordinates checked.
    pub checked: usize,
    /// Largest relative disagreement between analytic and numeric gradient.
    pub max_rel_err: f64,
    /// Coordinate index where the maximum occurred.
    pub worst_index: usize,
}

/// Compare `analytic` against central differences of `loss` at `theta`.
///
/// The per-coordinate step is `step_scale * max(1, |theta_i|)`; relative
/// error uses `max(|numeric|, |analytic|, 1e-6)` as the denominator so a
/// pair of near-zero gradients does not amplify truncation noise.
pub fn central_fd(
    loss: &mut dyn FnMut(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    step_scale: f64,
) -> FdReport {
    assert_eq!(
        theta.len(),
        analytic.len(),
        "parameter and gradient lengths differ"
    );
    let mut work = theta.to_vec();
    let mut report = FdReport {
        checked: theta.len(),
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for i in 0..theta.len() {
        let h = step_scale * theta[i].abs().max(1.0);
        work[i] = theta[i] + h;
        let up = loss(&work);
        work[i] = theta[i] - h;
        let down = loss(&work);
        work[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = numeric.abs().max(analytic[i].abs()).max(1e-6);
        let rel = (numeric - analytic[i]).abs() / denom;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_verifies() {
        // f(x) = sum(x^2), grad 2x
        let theta = [0.5, -1.25, 3.0, 0.0];
        let analytic: Vec<f64> = theta.iter().map(|&x| 2.0 * x).collect();
        let report = central_fd(&mut |x| x.iter().map(|v| v * v).sum(), &theta, &analytic, 1e-5);
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let theta = [1.0, 2.0];
        let wrong = [2.0, 3.0]; // true gradient is [2, 4]
        let report = central_fd(&mut |x| x.iter().map(|v| v * v).sum(), &theta, &wrong, 1e-5);
        assert!(report.max_rel_err > 0.1);
        assert_eq!(report.worst_index, 1);
    }
}
