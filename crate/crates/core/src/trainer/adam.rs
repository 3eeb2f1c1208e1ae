//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

use super::config::AdamConfig;

/// First and second moments aligned with a [`ParamSet`]'s order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One update from the gradients accumulated in `params`:
///
/// ```text
/// m ← β1·m + (1 − β1)·g          v ← β2·v + (1 − β2)·g²
/// θ ← θ − lr · (m / (1 − β1ᵗ)) / (sqrt(v / (1 − β2ᵗ)) + ε)
/// ```
///
/// Gradients are checked before anything is modified, so a non-finite
/// gradient leaves parameters and moments untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state holds {} moments for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.grad.shape() != m.shape() {
            return Err(Error::shape("adam_step", p.grad.shape(), m.shape()));
        }
        if !p.grad.all_finite() {
            return Err(Error::NonFiniteGradient {
                parameter: p.name.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let (lr, eps, one) = (T::of(lr), T::of(cfg.epsilon), T::one());
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.data();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::full(&[1], value)).unwrap();
        ps.get_mut("w").unwrap().grad = Tensor::full(&[1], grad);
        ps
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = single(1.0, 0.7);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, 1e-3, &AdamConfig::default()).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        let expect = 1.0 - 1e-3 * 0.7 / (0.7 + 1e-8);
        assert!((ps.value("w").unwrap().data()[0] - expect).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut ps = single(0.25, 0.0);
        let mut st = AdamState::new(&ps);
        st.m[0] = Tensor::full(&[1], 0.5);
        st.v[0] = Tensor::full(&[1], 0.5);
        // with pre-existing moments the parameter would move, so start clean
        let mut fresh = AdamState::new(&ps);
        adam_step(&mut ps, &mut fresh, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(ps.value("w").unwrap().data()[0], 0.25);
        adam_step(&mut ps, &mut st, 1e-3, &AdamConfig::default()).unwrap();
        assert!(st.m[0].data()[0] < 0.5 && st.v[0].data()[0] < 0.5);
    }

    #[test]
    fn nan_names_parameter() {
        let mut ps = single(1.0, f64::NAN);
        let mut st = AdamState::new(&ps);
        match adam_step(&mut ps, &mut st, 1e-3, &AdamConfig::default()) {
            Err(Error::NonFiniteGradient { parameter }) => assert_eq!(parameter, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(st.step, 0);
        assert_eq!(ps.value("w").unwrap().data()[0], 1.0);
    }
}
