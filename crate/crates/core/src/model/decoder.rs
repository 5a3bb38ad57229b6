//! Output heads mapping patch embeddings to an `H_o` chunk.

use rand::Rng;

use super::config::{HeadKind, ModelConfig, NormScheme};
use super::layers::{normalize_last, Norm, NormKind};
use super::params::{Binding, Builder, ParamId, ParamKind};
use crate::error::Result;
use crate::tensor::{Element, Graph, Var};

/// Unpatching decoder: linear map, transpose conv over the trailing `H_o/P`
/// tokens, depthwise conv, single-group norm, pointwise bottleneck to one channel.
#[derive(Debug, Clone)]
pub struct ConvHead {
    pub mlp: ParamId,
    /// `[d, d, P]`
    pub unpatch: ParamId,
    /// `[d, k]`
    pub depthwise: ParamId,
    /// Per-channel scale of the norm, `[d, 1]`.
    pub norm_scale: ParamId,
    /// `[d/4, d]`
    pub reduce: ParamId,
    /// `[1, d/4]`
    pub project: ParamId,
}

#[derive(Debug, Clone)]
pub enum Head {
    Conv(ConvHead),
    /// `[S·d, H_o]`
    Linear(ParamId),
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub final_norm: Norm,
    pub head: Head,
}

impl Decoder {
    pub(crate) fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let final_norm = Norm::new(b, "final_norm", d, NormKind::inner(cfg.norm));
        let head = match cfg.head {
            HeadKind::Conv => {
                let (p, k, q) = (cfg.patch_len, cfg.decoder_kernel, d / 4);
                Head::Conv(ConvHead {
                    mlp: b.linear("mlp", d, d),
                    unpatch: b.xavier("unpatch", &[d, d, p], d * p, d * p, ParamKind::Weight),
                    depthwise: b.xavier("depthwise", &[d, k], k, k, ParamKind::Weight),
                    norm_scale: b.ones("norm", &[d, 1], ParamKind::Norm),
                    reduce: b.xavier("reduce", &[q, d], d, q, ParamKind::Weight),
                    project: b.xavier("project", &[1, q], q, 1, ParamKind::Weight),
                })
            }
            HeadKind::Linear => Head::Linear(b.linear("linear", cfg.patches() * d, cfg.horizon)),
        };
        Self { final_norm, head }
    }

    /// `[R, S, d]` to normalized-scale predictions `[R, H_o]`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, cfg: &ModelConfig, h: Var) -> Result<Var> {
        let (r, s, d) = (g.shape(h)[0], g.shape(h)[1], g.shape(h)[2]);
        let h = self.final_norm.forward(g, p, h, cfg.norm_eps);
        match &self.head {
            Head::Linear(w) => {
                let flat = g.reshape(h, &[r, s * d]);
                Ok(g.matmul(flat, p.var(*w)))
            }
            Head::Conv(c) => {
                let h = g.matmul(h, p.var(c.mlp));
                let so = cfg.output_patches();
                let tail = g.narrow(h, 1, s - so, so);
                let cf = g.permute(tail, &[0, 2, 1]);
                let up = g.conv_transpose1d(cf, p.var(c.unpatch), cfg.patch_len)?;
                let conv = g.depthwise_conv1d(up, p.var(c.depthwise))?;
                let normed = match cfg.norm {
                    NormScheme::Mixed => {
                        // One group: statistics over all channels and positions of a row.
                        let flat = g.reshape(conv, &[r, d * cfg.horizon]);
                        let n = normalize_last(g, flat, NormKind::Layer, cfg.norm_eps);
                        g.reshape(n, &[r, d, cfg.horizon])
                    }
                    scheme => {
                        // Per position over channels.
                        let cl = g.permute(conv, &[0, 2, 1]);
                        let n = normalize_last(g, cl, NormKind::group(scheme), cfg.norm_eps);
                        g.permute(n, &[0, 2, 1])
                    }
                };
                let normed = g.mul(normed, p.var(c.norm_scale));
                let z = g.pointwise_conv1d(normed, p.var(c.reduce));
                let z = g.gelu(z);
                let y = g.pointwise_conv1d(z, p.var(c.project));
                Ok(g.reshape(y, &[r, cfg.horizon]))
            }
        }
    }
}
