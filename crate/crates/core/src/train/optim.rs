//! AdamW with decoupled weight decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer moments, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Element>(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.value(id).numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. `grads[i]` belongs to parameter `i`; `None` means no gradient
    /// reached it (moments still decay, weight decay still applies).
    pub fn update<T: Element>(&mut self, params: &mut ParamStore<T>, grads: &[Option<Vec<f64>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(
                "adamw",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (id, grad) in params.ids().zip(grads) {
            if let Some(index) = grad.as_ref().and_then(|g| g.iter().position(|x| !x.is_finite())) {
                return Err(Error::NonFinite {
                    context: format!("gradient of `{}`", params.info(id).name),
                    index,
                });
            }
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let decay = if params.info(id).kind.decays() { weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = grads[i].as_deref();
            for (j, p) in params.value_mut(id).data_mut().iter_mut().enumerate() {
                let gj = grad.map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mut x = p.as_f64();
                x *= 1.0 - lr * decay;
                x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *p = T::from_f64(x);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{ParamInfo, ParamKind};
    use crate::tensor::Tensor;

    fn store(kind: ParamKind, value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::default();
        s.push(
            ParamInfo {
                name: "p".into(),
                kind,
                routed: None,
            },
            Tensor::new(vec![1], vec![value]).unwrap(),
        );
        s
    }

    fn value(s: &ParamStore<f64>) -> f64 {
        s.value(s.ids().next().unwrap()).data()[0]
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(ParamKind::Bias, 0.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.update(&mut s, &[Some(vec![1.0])], 0.1).unwrap();
        assert!((value(&s) + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(ParamKind::Norm, 1.5);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.update(&mut s, &[Some(vec![0.0])], 0.1).unwrap();
        assert_eq!(value(&s), 1.5);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut s = store(ParamKind::Weight, 2.0);
        let cfg = AdamWConfig { weight_decay: 0.5, ..Default::default() };
        let mut opt = AdamW::new(cfg, &s);
        opt.update(&mut s, &[Some(vec![0.0])], 0.1).unwrap();
        assert!((value(&s) - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn router_and_norms_do_not_decay() {
        for kind in [ParamKind::Router, ParamKind::Norm, ParamKind::Bias] {
            let mut s = store(kind, 2.0);
            let cfg = AdamWConfig { weight_decay: 0.5, ..Default::default() };
            let mut opt = AdamW::new(cfg, &s);
            opt.update(&mut s, &[None], 0.1).unwrap();
            assert_eq!(value(&s), 2.0);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store(ParamKind::Weight, 2.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        let err = opt.update(&mut s, &[Some(vec![f64::NAN])], 0.1).unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
        assert_eq!(value(&s), 2.0);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = vec![Some(vec![3.0]), None, Some(vec![4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        assert!((g[0].as_ref().unwrap()[0] - 0.6).abs() < 1e-12);
        assert!((g[2].as_ref().unwrap()[0] - 0.8).abs() < 1e-12);
        let mut small = vec![Some(vec![0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].as_ref().unwrap()[0], 0.1);
    }
}
