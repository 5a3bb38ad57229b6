//! The forecasting network: patch embedding, RoPE/GQA self-attention, covariate
//! cross-attention, MoHE layers and the patch decoder.

pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod experts;
pub mod layers;
pub mod mohe;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{DatasetDefaults, ExpertMix, HeadKind, ModelConfig, NormScheme, RoutedExpert, SharedExpert};
pub use mohe::{router_topk, RouterAssignment};
pub use params::{Binding, ParamId, ParamKind, ParamStore};

use crate::data::{WindowBatch, NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};
use decoder::Decoder;
use layers::{AttnOptions, Attention, Fusion, Norm, NormKind, PatchEmbed};
use mohe::Mohe;
use params::Builder;

#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub norm: Norm,
    pub attn: Attention,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub attn_norm: Norm,
    pub attn: Attention,
    pub cross: Option<CrossAttention>,
    pub mohe: Mohe,
}

/// Covariate path: fusion of endogenous and calendar inputs plus its own patch embedding.
#[derive(Debug, Clone)]
pub struct Exogenous {
    pub fusion: Fusion,
    pub embed: PatchEmbed,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub embed: PatchEmbed,
    pub exogenous: Option<Exogenous>,
    pub blocks: Vec<Block>,
    pub decoder: Decoder,
}

#[derive(Debug, Clone)]
pub struct MoHets<T: Element> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub layout: Layout,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Shift applied to every rotary position.
    pub position_offset: usize,
    /// Evaluate every routed expert on every token (reference path).
    pub dense_experts: bool,
    /// Drop all attention and MoHE branches, leaving embed → decode.
    pub residual_only: bool,
}

#[derive(Debug, Clone)]
pub struct MoheTrace {
    pub scores: Var,
    pub assignment: RouterAssignment,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[R, H_o]` predictions on the scale of the window inputs.
    pub pred: Var,
    /// `[R, H_o]` predictions before instance denormalization.
    pub normalized: Var,
    pub mohe: Vec<MoheTrace>,
    pub expert_evaluations: usize,
}

impl<T: Element> MoHets<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let mut b = Builder::new(&mut store, &mut rng);
        let cfg = &config;
        let embed = b.scope("embed", |b| PatchEmbed::new(b, cfg));
        let exogenous = cfg.uses_covariates().then(|| {
            b.scope("exo", |b| Exogenous {
                fusion: b.scope("fusion", |b| Fusion::new(b, cfg)),
                embed: b.scope("embed", |b| PatchEmbed::new(b, cfg)),
            })
        });
        let inner = NormKind::inner(cfg.norm);
        let blocks = (0..cfg.blocks)
            .map(|i| {
                b.scope(&format!("blocks.{i}"), |b| Block {
                    attn_norm: Norm::new(b, "attn_norm", cfg.d_model, inner),
                    attn: b.scope("attn", |b| Attention::new(b, cfg)),
                    cross: cfg.uses_covariates().then(|| {
                        b.scope("cross", |b| CrossAttention {
                            norm: Norm::new(b, "norm", cfg.d_model, inner),
                            attn: Attention::new(b, cfg),
                        })
                    }),
                    mohe: b.scope("mohe", |b| Mohe::new(b, cfg, i)),
                })
            })
            .collect();
        let decoder = b.scope("decoder", |b| Decoder::new(b, cfg));
        Ok(Self {
            config,
            params: store,
            layout: Layout {
                embed,
                exogenous,
                blocks,
                decoder,
            },
        })
    }

    pub fn cast<U: Element>(&self) -> MoHets<U> {
        MoHets {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn total_params(&self) -> usize {
        self.params.total_count()
    }

    pub fn activated_params(&self) -> usize {
        self.params.activated_count(self.config.experts, self.config.top_k)
    }

    fn check_batch(&self, batch: &WindowBatch) -> Result<()> {
        let cfg = &self.config;
        if batch.lookback != cfg.lookback {
            return Err(Error::shape(
                "forward",
                format!("window length {} but model expects L = {}", batch.lookback, cfg.lookback),
            ));
        }
        if cfg.uses_covariates() {
            if batch.variates != cfg.variates {
                return Err(Error::shape(
                    "forward",
                    format!(
                        "data has {} variates but covariate fusion was built for D = {}",
                        batch.variates, cfg.variates
                    ),
                ));
            }
            if batch.covariate_channels != cfg.covariates {
                return Err(Error::shape(
                    "forward",
                    format!(
                        "batch has {} covariate channels, model expects {}",
                        batch.covariate_channels, cfg.covariates
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Records the forward pass of `batch` into `g`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &Binding,
        batch: &WindowBatch,
        opts: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let rows = batch.rows();
        let x = g.constant(Tensor::from_f64(vec![rows, cfg.lookback], &batch.inputs)?);
        let mut h = self.layout.embed.forward(g, p, cfg, x);

        let kv = match &self.layout.exogenous {
            Some(exo) => {
                let xw = g.reshape(x, &[batch.windows, batch.variates, cfg.lookback]);
                let z = g.constant(Tensor::from_f64(
                    vec![batch.windows, cfg.covariates, cfg.lookback],
                    &batch.covariates,
                )?);
                let fused = exo.fusion.forward(g, p, xw, z);
                Some(exo.embed.forward(g, p, cfg, fused))
            }
            None => None,
        };

        let self_opts = AttnOptions {
            rope: true,
            position_offset: opts.position_offset,
        };
        let cross_opts = AttnOptions {
            rope: cfg.cross_attn_rope,
            ..self_opts
        };
        let mut traces = Vec::with_capacity(cfg.blocks);
        let mut evaluations = 0;
        for (i, block) in self.layout.blocks.iter().enumerate() {
            if opts.residual_only {
                continue;
            }
            let rate = cfg.drop_path_rate(i);
            let n = block.attn_norm.forward(g, p, h, cfg.norm_eps);
            let a = block.attn.forward(g, p, cfg, n, n, self_opts)?.out;
            let a = g.dropout(a, cfg.dropout);
            let a = g.drop_path(a, rate);
            h = g.add(h, a);

            if let (Some(cross), Some(kv)) = (&block.cross, kv) {
                let n = cross.norm.forward(g, p, h, cfg.norm_eps);
                let c = cross.attn.forward(g, p, cfg, n, kv, cross_opts)?.out;
                let c = g.dropout(c, cfg.dropout);
                let c = g.drop_path(c, rate);
                h = g.add(h, c);
            }

            let m = if opts.dense_experts {
                let out = block.mohe.forward_dense(g, p, cfg, h)?;
                let sparse_free = block.mohe.forward(g, p, cfg, h)?;
                traces.push(MoheTrace {
                    scores: sparse_free.scores,
                    assignment: sparse_free.assignment,
                });
                out
            } else {
                let out = block.mohe.forward(g, p, cfg, h)?;
                evaluations += out.expert_evaluations;
                traces.push(MoheTrace {
                    scores: out.scores,
                    assignment: out.assignment,
                });
                out.out
            };
            let m = g.drop_path(m, rate);
            h = g.add(h, m);
        }

        let normalized = self.layout.decoder.forward(g, p, cfg, h)?;
        let (scale, shift): (Vec<f64>, Vec<f64>) = batch.stats.iter().map(|s| (s.std + NORM_EPS, s.mean)).unzip();
        let scale = g.constant(Tensor::from_f64(vec![rows, 1], &scale)?);
        let shift = g.constant(Tensor::from_f64(vec![rows, 1], &shift)?);
        let pred = g.mul(normalized, scale);
        let pred = g.add(pred, shift);
        Ok(ForwardOutput {
            pred,
            normalized,
            mohe: traces,
            expert_evaluations: evaluations,
        })
    }

    /// Inference-mode predictions, `[R·H_o]` row-major.
    pub fn predict(&self, batch: &WindowBatch) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let p = self.params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, batch, &ForwardOptions::default())?;
        let pred = g.value(out.pred);
        if let Some(index) = pred.first_non_finite() {
            return Err(Error::NonFinite {
                context: "model prediction".into(),
                index,
            });
        }
        Ok(pred.to_f64_vec())
    }
}

impl<T: Element> MoHets<T> {
    /// Parameters belonging to Fourier layers (gate and frequency weights).
    pub fn fourier_params(&self) -> usize {
        [".wp", ".wg", ".bg"].iter().map(|f| self.params.count_matching(f)).sum()
    }
}
