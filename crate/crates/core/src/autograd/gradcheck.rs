use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing autograd against central finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Relative error with a `max(|a|, |b|, 1e-8)` denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks the gradient of scalar `f` at `x` element by element using
/// `(f(x + h·e) − f(x − h·e)) / 2h`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let xv = tape.leaf(&x.clone().with_requires_grad(true));
        let loss = f(&tape, xv)?;
        let grads = loss.backward()?;
        grads
            .get(xv)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()])
    };

    let eval = |t: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(t);
        f(&tape, v)?.item()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: x.len(),
        pass: true,
    };
    let mut probe = x.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = rel_err(a, numeric);
        if err > report.max_rel_err || err.is_nan() {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.pass = report.max_rel_err <= tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::rand_uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let r = finite_diff_check(|_, v| v.mean_all(), &x, 1e-5, 1e-10).unwrap();
        assert!(r.max_rel_err <= 1e-10, "{r:?}");
        assert!(r.pass);
    }

    #[test]
    fn wrong_backward_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::rand_uniform(&[5], 0.5, 1.5, &mut rng);
        // d/dx x^2 reported as x (should be 2x)
        let r = finite_diff_check(
            |_, v| {
                v.custom_unary(
                    |t| t.map(|a| a * a),
                    Rc::new(|t, g| t.data().iter().zip(g).map(|(a, b)| a * b).collect()),
                )?
                .sum_all()
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.pass);
        assert!((r.max_rel_err - 0.5).abs() < 1e-6);
    }
}
