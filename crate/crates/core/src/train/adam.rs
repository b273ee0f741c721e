use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(self.beta1) || !ok(self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "adam eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .enumerate()
                .all(|(i, (_, t))| self.m[i].len() == t.len() && self.v[i].len() == t.len())
    }

    pub fn bit_eq(&self, other: &AdamState) -> bool {
        let same = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
                })
        };
        self.t == other.t && same(&self.m, &other.m) && same(&self.v, &other.v)
    }
}

/// One bias-corrected Adam update using each parameter's stored `grad`.
///
/// Gradients are checked for non-finite values before anything is
/// modified; the error names the offending parameter.
pub fn adam_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !state.matches(params) {
        return Err(Error::Contract(
            "adam state does not match the parameter set".into(),
        ));
    }
    for (name, t) in params.iter() {
        let g = t
            .grad
            .as_deref()
            .ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {name}"),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let g = p.grad.take().expect("checked above");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p.grad = Some(g);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn single(theta: f64, grad: f64) -> ParamSet {
        let mut t = Tensor::scalar(theta);
        t.grad = Some(vec![grad]);
        ParamSet::from_entries(vec![("theta".into(), t)]).unwrap()
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = single(0.0, 1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, 1e-3, &AdamConfig::default()).unwrap();
        let got = p.tensor(0).data()[0];
        let want = -1e-3 / (1.0 + 1e-8);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert!((got - -9.99999990e-4).abs() < 1e-12);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = single(0.5, 1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &mut s, 1e-3, &cfg).unwrap();
        let (m1, v1) = (s.m[0][0], s.v[0][0]);
        let before = p.tensor(0).data()[0];
        p.tensor_mut(0).grad = Some(vec![0.0]);
        // zero gradient: the bias-corrected moments still push theta, so use lr 0
        adam_step(&mut p, &mut s, 0.0, &cfg).unwrap();
        assert_eq!(p.tensor(0).data()[0], before);
        assert_eq!(s.m[0][0], 0.9 * m1);
        assert_eq!(s.v[0][0], 0.999 * v1);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut p = single(0.25, 0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p.tensor(0).data()[0], 0.25);
        assert_eq!((s.m[0][0], s.v[0][0]), (0.0, 0.0));
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = single(0.0, f64::NAN);
        let mut s = AdamState::new(&p);
        match adam_step(&mut p, &mut s, 1e-3, &AdamConfig::default()) {
            Err(Error::NonFinite { what }) => assert!(what.contains("theta")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.t, 0);
        assert_eq!(p.tensor(0).data()[0], 0.0);
    }
}
