//! Mixture of heterogeneous experts: top-K routed experts plus a gated shared expert.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::experts::{RoutedNet, SharedNet};
use super::layers::{Norm, NormKind};
use super::params::{Binding, Builder, ParamId, ParamKind};
use crate::error::Result;
use crate::tensor::{softmax_lastdim, topk_indices, Element, Graph, Tensor, Var};

/// Routing decisions of one MoHE layer over a set of patches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouterAssignment {
    pub experts: usize,
    pub top_k: usize,
    pub tokens: usize,
    /// `[tokens, K]` expert indices, highest score first.
    pub selected: Vec<usize>,
    /// `[tokens, N]` softmax scores masked to the selected experts.
    pub gates: Vec<f64>,
    /// `[tokens]` sigmoid gate of the shared expert; empty without one.
    pub shared_gate: Vec<f64>,
    /// Fraction of selections that went to each expert, `f_i`.
    pub fraction: Vec<f64>,
    /// Mean softmax score of each expert, `r_i`.
    pub mean_score: Vec<f64>,
}

impl RouterAssignment {
    /// Routes each row of `scores` (`[tokens, N]` softmax probabilities) to its
    /// `k` largest entries; ties go to the lowest index.
    pub fn from_scores(scores: &[f64], experts: usize, k: usize) -> Self {
        let tokens = scores.len() / experts.max(1);
        let mut selected = Vec::with_capacity(tokens * k);
        let mut gates = vec![0.0; tokens * experts];
        let mut counts = vec![0usize; experts];
        let mut score_sum = vec![0.0; experts];
        for (t, row) in scores.chunks(experts).enumerate() {
            for &i in &topk_indices(row, k) {
                selected.push(i);
                gates[t * experts + i] = row[i];
                counts[i] += 1;
            }
            for (acc, &s) in score_sum.iter_mut().zip(row) {
                *acc += s;
            }
        }
        let denom = (tokens * k).max(1) as f64;
        Self {
            experts,
            top_k: k,
            tokens,
            selected,
            gates,
            shared_gate: Vec::new(),
            fraction: counts.iter().map(|&c| c as f64 / denom).collect(),
            mean_score: score_sum.iter().map(|s| s / tokens.max(1) as f64).collect(),
        }
    }

    /// Tokens routed to each expert, in token order.
    pub fn tokens_per_expert(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.experts];
        for (t, sel) in self.selected.chunks(self.top_k).enumerate() {
            for &i in sel {
                out[i].push(t);
            }
        }
        out
    }

    /// `N·Σ f_i r_i`.
    pub fn balance(&self) -> f64 {
        self.experts as f64
            * self
                .fraction
                .iter()
                .zip(&self.mean_score)
                .map(|(f, r)| f * r)
                .sum::<f64>()
    }
}

/// Softmax of router logits followed by top-K masking (no renormalization).
pub fn router_topk(logits: &[f64], k: usize) -> RouterAssignment {
    let scores = softmax_lastdim(&Tensor::from_parts(vec![logits.len()], logits.to_vec()))
        .expect("finite router logits");
    RouterAssignment::from_scores(scores.data(), logits.len(), k)
}

#[derive(Debug, Clone)]
pub struct Mohe {
    pub norm: Norm,
    /// `[d, N]`
    pub router: ParamId,
    pub experts: Vec<RoutedNet>,
    pub shared: Option<SharedNet>,
    /// `[d, 1]` projection feeding the shared expert's sigmoid gate.
    pub shared_gate: Option<ParamId>,
}

/// Output of one MoHE layer.
#[derive(Debug, Clone)]
pub struct MoheOut {
    /// Residual branch `[R, S, d]` (the input is not added).
    pub out: Var,
    /// Router probabilities `[R·S, N]`.
    pub scores: Var,
    pub assignment: RouterAssignment,
    /// Number of (token, routed expert) evaluations performed.
    pub expert_evaluations: usize,
}

impl Mohe {
    pub(crate) fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig, block: usize) -> Self {
        let norm = Norm::new(b, "norm", cfg.d_model, NormKind::inner(cfg.norm));
        let router = b.xavier("router", &[cfg.d_model, cfg.experts], cfg.d_model, cfg.experts, ParamKind::Router);
        let experts = (0..cfg.experts)
            .map(|e| b.routed_scope(&format!("expert{e}"), block, e, |b| RoutedNet::new(b, cfg)))
            .collect();
        let shared = b.scope("shared", |b| SharedNet::new(b, cfg));
        let shared_gate = shared.as_ref().map(|_| b.linear("shared_gate", cfg.d_model, 1));
        Self {
            norm,
            router,
            experts,
            shared,
            shared_gate,
        }
    }

    fn prologue<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Binding,
        cfg: &ModelConfig,
        v: Var,
    ) -> Result<(Var, Var, Var, RouterAssignment)> {
        let (r, s, d) = (g.shape(v)[0], g.shape(v)[1], g.shape(v)[2]);
        let normed = self.norm.forward(g, p, v, cfg.norm_eps);
        let flat = g.reshape(normed, &[r * s, d]);
        let logits = g.matmul(flat, p.var(self.router));
        let scores = g.softmax_last(logits)?;
        let assignment = RouterAssignment::from_scores(&g.value(scores).to_f64_vec(), cfg.experts, cfg.top_k);
        Ok((normed, flat, scores, assignment))
    }

    /// Gated shared-expert branch `[R, S, d]`, if the layer has one.
    fn shared_branch<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Binding,
        cfg: &ModelConfig,
        normed: Var,
        assignment: &mut RouterAssignment,
    ) -> Result<Option<Var>> {
        let (Some(net), Some(gate)) = (&self.shared, self.shared_gate) else {
            return Ok(None);
        };
        let y = net.forward(g, p, cfg, normed)?;
        let logit = g.matmul(normed, p.var(gate));
        let gate = g.sigmoid(logit);
        assignment.shared_gate = g.value(gate).to_f64_vec();
        Ok(Some(g.mul(y, gate)))
    }

    /// Sparse dispatch: each expert sees only the tokens routed to it.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, cfg: &ModelConfig, v: Var) -> Result<MoheOut> {
        let shape = g.shape(v).to_vec();
        let tokens = shape[0] * shape[1];
        let (normed, flat, scores, mut assignment) = self.prologue(g, p, cfg, v)?;
        let routes = assignment.tokens_per_expert();
        let mut parts = Vec::new();
        let mut indices = Vec::new();
        let mut evaluations = 0;
        for (e, idx) in routes.into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            evaluations += idx.len();
            let x = g.gather_rows(flat, &idx);
            let y = self.experts[e].forward(g, p, cfg, x);
            let at: Vec<(usize, usize)> = idx.iter().map(|&t| (t, e)).collect();
            let gate = g.gather_elems(scores, &at);
            let gate = g.reshape(gate, &[idx.len(), 1]);
            parts.push(g.mul(y, gate));
            indices.push(idx);
        }
        let routed = g.scatter_rows_sum(tokens, &parts, &indices);
        let mut out = g.reshape(routed, &shape);
        if let Some(shared) = self.shared_branch(g, p, cfg, normed, &mut assignment)? {
            out = g.add(out, shared);
        }
        Ok(MoheOut {
            out,
            scores,
            assignment,
            expert_evaluations: evaluations,
        })
    }

    /// Dense reference: every expert on every token, weighted by the masked gates.
    pub fn forward_dense<T: Element>(&self, g: &mut Graph<T>, p: &Binding, cfg: &ModelConfig, v: Var) -> Result<Var> {
        let shape = g.shape(v).to_vec();
        let tokens = shape[0] * shape[1];
        let (normed, flat, _scores, mut assignment) = self.prologue(g, p, cfg, v)?;
        let mut out: Option<Var> = None;
        for (e, expert) in self.experts.iter().enumerate() {
            let y = expert.forward(g, p, cfg, flat);
            let column: Vec<f64> = (0..tokens).map(|t| assignment.gates[t * cfg.experts + e]).collect();
            let gate = g.constant(Tensor::from_f64(vec![tokens, 1], &column)?);
            let term = g.mul(y, gate);
            out = Some(match out {
                Some(acc) => g.add(acc, term),
                None => term,
            });
        }
        let routed = out.expect("at least one expert");
        let mut out = g.reshape(routed, &shape);
        if let Some(shared) = self.shared_branch(g, p, cfg, normed, &mut assignment)? {
            out = g.add(out, shared);
        }
        Ok(out)
    }
}
