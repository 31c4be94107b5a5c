//! Finite-difference verification of tape gradients.

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::value::Tensor;
use super::Result;

/// Outcome of a gradient check: worst per-component deviation between the
/// tape gradient and a central finite difference.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_deviation: f64,
    pub max_abs_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative deviation with a unit floor, so tiny gradients compare
/// absolutely and large ones relatively.
pub fn relative_deviation(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Check d(f)/d(point) against central finite differences with the given
/// step. `f` must map the input var to a scalar var and be deterministic.
pub fn gradient_check<F>(f: F, point: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape
        .grad(x)
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), false);
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item())
    };

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let ad = analytic.data()[i];
        max_rel = max_rel.max(relative_deviation(ad, fd));
        max_abs = max_abs.max((ad - fd).abs());
    }
    Ok(GradCheckReport {
        max_rel_deviation: max_rel,
        max_abs_deviation: max_abs,
        tolerance: tol,
        passed: max_rel < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_analytic_slope() {
        // f(x) = x^2 at x = 3: slope 6.
        let report = gradient_check(
            |t, x| {
                let y = t.mul(x, x)?;
                t.sum_all(y)
            },
            &Tensor::scalar(3.0),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }

    #[test]
    fn matmul_chain_passes() {
        let a = Tensor::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap();
        let report = gradient_check(
            |t, x| {
                let w = t.constant(
                    Tensor::matrix(4, 2, (0..8).map(|i| 0.2 * i as f64 - 0.7).collect()).unwrap(),
                );
                let y = t.matmul(x, w)?;
                let y = t.leaky_relu(y, 0.2)?;
                t.sum_all(y)
            },
            &a,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "deviation {}", report.max_rel_deviation);
    }
}
