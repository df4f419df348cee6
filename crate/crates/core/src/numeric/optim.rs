use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter of a store, aligned by parameter id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Tensor> {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: Real) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if grads.tensors().len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, {} moments",
                    params.len(),
                    grads.tensors().len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, g) in grads.tensors().iter().enumerate() {
            let shape = params
                .iter()
                .nth(i)
                .map(|(_, _, t)| t.shape().to_vec())
                .unwrap();
            if g.shape() != shape.as_slice() || self.first_moment[i].shape() != shape.as_slice() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "parameter {i} has shape {shape:?}, gradient {:?}",
                        g.shape()
                    ),
                ));
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: Real) -> Real {
    let norm = grads.global_norm();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.tensors_mut() {
            g.scale_in_place(factor);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: Real) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("p", Tensor::vector(vec![p])).unwrap();
        s
    }

    fn grad_of(s: &ParamStore, g: Real) -> Gradients {
        let mut grads = Gradients::zeros_like(s);
        grads.get_mut(s.id("p").unwrap()).data_mut()[0] = g;
        grads
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = single(1.0);
        let mut st = AdamState::new(&s, AdamConfig::default());
        {
            let g = grad_of(&s, 0.5);
            st.step(&mut s, &g, 0.001)
        }
        .unwrap();
        let p = s.by_name("p").unwrap().item();
        // m̂ = g, v̂ = g², so the step is lr·|g|/(|g|+ε).
        let expected = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.999).abs() < 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = single(0.3);
        let mut st = AdamState::new(&s, AdamConfig::default());
        for _ in 0..3 {
            {
                let g = grad_of(&s, 0.0);
                st.step(&mut s, &g, 0.01)
            }
            .unwrap();
        }
        assert_eq!(s.by_name("p").unwrap().item(), 0.3);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        // Hand-rolled scalar Adam, written independently of the tensor path.
        let (b1, b2, eps, lr, g): (f64, f64, f64, f64, f64) = (0.9, 0.999, 1e-8, 0.001, 0.7);
        let (mut p, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        let mut s = single(0.25);
        let mut st = AdamState::new(&s, AdamConfig::default());
        for _ in 0..2 {
            {
                let g = grad_of(&s, 0.7);
                st.step(&mut s, &g, 0.001)
            }
            .unwrap();
        }
        assert!((s.by_name("p").unwrap().item() as f64 - p).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_learning_rate_and_shapes() {
        let mut s = single(1.0);
        let mut st = AdamState::new(&s, AdamConfig::default());
        assert!({
            let g = grad_of(&s, 1.0);
            st.step(&mut s, &g, 0.0)
        }
        .is_err());
        let mut other = ParamStore::new();
        other.register("p", Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(st
            .step(&mut s, &Gradients::zeros_like(&other), 0.1)
            .is_err());
    }

    fn two_grads(a: Real, b: Real) -> Gradients {
        let mut s = ParamStore::new();
        s.register("a", Tensor::vector(vec![0.0])).unwrap();
        s.register("b", Tensor::vector(vec![0.0])).unwrap();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(s.id("a").unwrap()).data_mut()[0] = a;
        g.get_mut(s.id("b").unwrap()).data_mut()[0] = b;
        g
    }

    #[test]
    fn clipping_at_and_above_the_boundary() {
        let mut g = two_grads(3.0, 4.0);
        assert_eq!(clip_global_norm(&mut g, 5.0), 5.0);
        assert_eq!(g.by_name("a").unwrap().item(), 3.0);
        assert_eq!(g.by_name("b").unwrap().item(), 4.0);

        let mut g = two_grads(6.0, 8.0);
        clip_global_norm(&mut g, 5.0);
        assert!((g.by_name("a").unwrap().item() - 3.0).abs() < 1e-12);
        assert!((g.by_name("b").unwrap().item() - 4.0).abs() < 1e-12);
    }
}
