//! Central-difference gradient checking.
//!
//! The autodiff tape is the one component nothing else can cross-check,
//! so it gets an independent numerical oracle: perturb one coordinate,
//! re-evaluate the loss, compare the slope against the analytic gradient.

/// Central difference `(f(x + h) - f(x - h)) / 2h` for one coordinate.
/// `f` must be a pure function of the perturbed value.
pub fn central_diff<F: FnMut(f64) -> f64>(x: f64, h: f64, mut f: F) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with an absolute floor: exact zeros on both sides
/// compare equal, and tiny gradients are judged against `atol` instead
/// of blowing up the ratio.
pub fn rel_err(analytic: f64, numeric: f64, atol: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs()).max(atol);
    diff / scale
}

/// Worst-coordinate summary of a gradient check sweep.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn record(&mut self, name: &str, index: usize, err: f64) {
        self.checked += 1;
        if err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = Some((name.to_string(), index));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_matches_known_derivative() {
        // d/dx x^3 at 2 is 12.
        let d = central_diff(2.0, 1e-5, |x| x * x * x);
        assert!(rel_err(12.0, d, 1e-12) < 1e-9);
    }

    #[test]
    fn rel_err_handles_zero_gradients() {
        assert_eq!(rel_err(0.0, 0.0, 1e-8), 0.0);
        assert!(rel_err(0.0, 1e-12, 1e-8) < 1e-3);
    }
}
