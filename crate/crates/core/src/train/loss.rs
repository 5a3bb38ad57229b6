//! Prediction and load-balance objectives.

use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, ForwardOutput, MoHets, MoheTrace, RouterAssignment};
use crate::model::params::Binding;
use crate::tensor::{Element, Graph, Tensor, Var};

/// How per-layer balance losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceAggregation {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub huber_delta: f64,
    pub alpha: f64,
    pub aggregation: BalanceAggregation,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            huber_delta: 2.0,
            alpha: 0.02,
            aggregation: BalanceAggregation::Mean,
        }
    }
}

/// Mean Huber loss of `target - pred`.
pub fn huber(target: &[f64], pred: &[f64], delta: f64) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::shape(
            "huber",
            format!("target has {} elements, prediction {}", target.len(), pred.len()),
        ));
    }
    let sum: f64 = target
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            let e = (t - p).abs();
            if e <= delta {
                0.5 * e * e
            } else {
                delta * (e - 0.5 * delta)
            }
        })
        .sum();
    Ok(sum / target.len().max(1) as f64)
}

/// Balance loss over MoHE layers; 0 when there are none.
pub fn balance(assignments: &[RouterAssignment], aggregation: BalanceAggregation) -> f64 {
    if assignments.is_empty() {
        return 0.0;
    }
    let sum: f64 = assignments.iter().map(RouterAssignment::balance).sum();
    match aggregation {
        BalanceAggregation::Mean => sum / assignments.len() as f64,
        BalanceAggregation::Sum => sum,
    }
}

pub fn total(huber: f64, balance: f64, alpha: f64) -> f64 {
    huber + alpha * balance
}

/// Differentiable balance loss: selection fractions are constants, mean scores
/// carry gradient back into the routers.
pub fn balance_graph<T: Element>(g: &mut Graph<T>, traces: &[MoheTrace], aggregation: BalanceAggregation) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for t in traces {
        let a = &t.assignment;
        let f = g.constant(Tensor::from_f64(vec![a.experts], &a.fraction)?);
        let r = g.mean_axis(t.scores, 0, false);
        let fr = g.mul(r, f);
        let layer = g.sum_all(fr);
        let layer = g.scale(layer, a.experts as f64);
        acc = Some(match acc {
            Some(s) => g.add(s, layer),
            None => layer,
        });
    }
    let Some(sum) = acc else {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    };
    Ok(match aggregation {
        BalanceAggregation::Mean => g.scale(sum, 1.0 / traces.len() as f64),
        BalanceAggregation::Sum => sum,
    })
}

/// Graph nodes of one batch objective.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: Var,
    pub huber: Var,
    pub balance: Var,
    pub forward: ForwardOutput,
}

/// Records forward pass and objective for `batch`, whose targets must span H_o.
pub fn batch_loss<T: Element>(
    model: &MoHets<T>,
    g: &mut Graph<T>,
    p: &Binding,
    batch: &WindowBatch,
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    let h = model.config.horizon;
    if batch.horizon != h {
        return Err(Error::shape(
            "loss",
            format!("targets span {} steps, model predicts H_o = {h}", batch.horizon),
        ));
    }
    let forward = model.forward(g, p, batch, &ForwardOptions::default())?;
    let target = g.constant(Tensor::from_f64(vec![batch.rows(), h], &batch.targets)?);
    let huber = g.huber(forward.pred, target, cfg.huber_delta)?;
    let balance = balance_graph(g, &forward.mohe, cfg.aggregation)?;
    let weighted = g.scale(balance, cfg.alpha);
    let total = g.add(huber, weighted);
    Ok(BatchLoss {
        total,
        huber,
        balance,
        forward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_branches() {
        assert_eq!(huber(&[0.0], &[0.0], 2.0).unwrap(), 0.0);
        assert_eq!(huber(&[1.0], &[0.0], 2.0).unwrap(), 0.5);
        assert_eq!(huber(&[4.0], &[0.0], 2.0).unwrap(), 6.0);
        assert!(huber(&[1.0], &[], 2.0).is_err());
    }

    #[test]
    fn total_is_weighted_sum() {
        assert!((total(0.5, 1.0, 0.02) - 0.52).abs() < 1e-15);
        assert_eq!(total(0.3, 7.0, 0.0), 0.3);
    }

    #[test]
    fn collapse_on_four_experts() {
        let scores = [0.5, 0.5, 0.0, 0.0].repeat(10);
        let a = RouterAssignment::from_scores(&scores, 4, 2);
        assert_eq!(a.fraction, vec![0.5, 0.5, 0.0, 0.0]);
        assert!((balance(&[a], BalanceAggregation::Mean) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_expert_is_always_one() {
        let a = RouterAssignment::from_scores(&[1.0; 5], 1, 1);
        assert!((a.balance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_modes() {
        let a = RouterAssignment::from_scores(&[0.25; 8], 4, 2);
        let b = RouterAssignment::from_scores(&[0.5, 0.5, 0.0, 0.0], 4, 2);
        let both = [a, b];
        let expected_sum = both[0].balance() + both[1].balance();
        assert!((balance(&both, BalanceAggregation::Sum) - expected_sum).abs() < 1e-12);
        assert!((balance(&both, BalanceAggregation::Mean) - expected_sum / 2.0).abs() < 1e-12);
    }
}
