//! Normalization, attention, patch embedding and covariate fusion.

use rand::Rng;

use super::config::{ModelConfig, NormScheme};
use super::params::{Binding, Builder, ParamId, ParamKind};
use crate::error::Result;
use crate::tensor::{Element, Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Rms,
    /// Mean-centred, scale only.
    Layer,
}

impl NormKind {
    /// Kind used at the sub-layer and final sites under `scheme`.
    pub fn inner(scheme: NormScheme) -> Self {
        match scheme {
            NormScheme::AllLayerNorm => NormKind::Layer,
            NormScheme::Mixed | NormScheme::AllRmsNorm => NormKind::Rms,
        }
    }

    /// Kind used for the single-group sites (patch embedding, decoder) under `scheme`.
    pub fn group(scheme: NormScheme) -> Self {
        match scheme {
            NormScheme::AllRmsNorm => NormKind::Rms,
            NormScheme::Mixed | NormScheme::AllLayerNorm => NormKind::Layer,
        }
    }
}

/// Normalizes over the last axis without a scale.
pub fn normalize_last<T: Element>(g: &mut Graph<T>, x: Var, kind: NormKind, eps: f64) -> Var {
    match kind {
        NormKind::Rms => {
            let sq = g.square(x);
            let ms = g.mean_axis(sq, g.shape(x).len() - 1, true);
            let ms = g.add_scalar(ms, eps);
            let rms = g.sqrt(ms);
            g.div(x, rms)
        }
        NormKind::Layer => {
            let axis = g.shape(x).len() - 1;
            let mean = g.mean_axis(x, axis, true);
            let centred = g.sub(x, mean);
            let var = g.var_lastdim(x);
            let var = g.add_scalar(var, eps);
            let std = g.sqrt(var);
            g.div(centred, std)
        }
    }
}

/// Last-axis norm with a learned per-feature scale.
#[derive(Debug, Clone)]
pub struct Norm {
    pub kind: NormKind,
    pub scale: ParamId,
}

impl Norm {
    pub(crate) fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, dim: usize, kind: NormKind) -> Self {
        Self {
            kind,
            scale: b.ones(name, &[dim], ParamKind::Norm),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, x: Var, eps: f64) -> Var {
        let n = normalize_last(g, x, self.kind, eps);
        g.mul(n, p.var(self.scale))
    }
}

/// Grouped-query attention with optional rotary embedding.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnOptions {
    pub rope: bool,
    /// Added to every patch position before rotation.
    pub position_offset: usize,
}

/// Attention result with its intermediate tensors.
#[derive(Debug, Clone, Copy)]
pub struct AttnOut {
    /// `[R, S, d_model]`
    pub out: Var,
    /// Scaled scores `[R, kv_heads, group·S, S]`; query head `h` is group row block `h % group` of kv head `h / group`.
    pub logits: Var,
    pub probs: Var,
}

impl Attention {
    pub(crate) fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let kv = cfg.kv_heads * cfg.head_dim();
        Self {
            wq: b.linear("wq", d, d),
            bq: b.zeros("bq", &[d], ParamKind::Bias),
            wk: b.linear("wk", d, kv),
            bk: b.zeros("bk", &[kv], ParamKind::Bias),
            wv: b.linear("wv", d, kv),
            bv: b.zeros("bv", &[kv], ParamKind::Bias),
            wo: b.linear("wo", d, d),
        }
    }

    /// `q_src` supplies queries and `kv_src` keys and values, both `[R, S, d]`.
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Binding,
        cfg: &ModelConfig,
        q_src: Var,
        kv_src: Var,
        opts: AttnOptions,
    ) -> Result<AttnOut> {
        let (r, s) = (g.shape(q_src)[0], g.shape(q_src)[1]);
        let sk = g.shape(kv_src)[1];
        let (hq, hkv, dh) = (cfg.q_heads, cfg.kv_heads, cfg.head_dim());
        let group = hq / hkv;

        let project = |g: &mut Graph<T>, x: Var, w: ParamId, bias: ParamId, heads: usize, len: usize| {
            let y = g.matmul(x, p.var(w));
            let y = g.add(y, p.var(bias));
            let y = g.reshape(y, &[r, len, heads, dh]);
            g.permute(y, &[0, 2, 1, 3])
        };
        let mut q = project(g, q_src, self.wq, self.bq, hq, s);
        let mut k = project(g, kv_src, self.wk, self.bk, hkv, sk);
        let v = project(g, kv_src, self.wv, self.bv, hkv, sk);
        if opts.rope {
            q = g.rope(q, cfg.rope_base, opts.position_offset)?;
            k = g.rope(k, cfg.rope_base, opts.position_offset)?;
        }
        // Query heads of one group share a kv head: fold them into the row axis.
        let q = g.reshape(q, &[r, hkv, group * s, dh]);
        let scores = g.matmul_t(q, k, false, true);
        let logits = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = g.softmax_last(logits)?;
        let dropped = g.dropout(probs, cfg.dropout);
        let ctx = g.matmul(dropped, v);
        let ctx = g.reshape(ctx, &[r, hq, s, dh]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[r, s, hq * dh]);
        let out = g.matmul(ctx, p.var(self.wo));
        Ok(AttnOut { out, logits, probs })
    }
}

/// Repeats the last column so the width becomes a multiple of `patch`.
pub fn pad_last_value<T: Element>(g: &mut Graph<T>, x: Var, patch: usize) -> Var {
    let len = g.shape(x)[1];
    let pad = len.div_ceil(patch) * patch - len;
    if pad == 0 {
        return x;
    }
    let last = g.narrow(x, 1, len - 1, 1);
    let mut parts = vec![x];
    parts.extend(std::iter::repeat_n(last, pad));
    g.concat(&parts, 1)
}

/// Single-group norm over each patch's values followed by a bias-free `P → d` map.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub norm: Norm,
    pub proj: ParamId,
}

impl PatchEmbed {
    pub(crate) fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        Self {
            norm: Norm::new(b, "norm", cfg.patch_len, NormKind::group(cfg.norm)),
            proj: b.linear("proj", cfg.patch_len, cfg.d_model),
        }
    }

    /// `[R, L]` series to `[R, S, d]` tokens.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, cfg: &ModelConfig, series: Var) -> Var {
        let r = g.shape(series)[0];
        let padded = pad_last_value(g, series, cfg.patch_len);
        let patches = g.reshape(padded, &[r, cfg.patches(), cfg.patch_len]);
        let normed = self.norm.forward(g, p, patches, cfg.norm_eps);
        g.matmul(normed, p.var(self.proj))
    }
}

/// Per-time-step fusion of endogenous values and covariates back to `D` channels.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub wx: ParamId,
    pub wz: ParamId,
    pub wf: ParamId,
}

impl Fusion {
    pub(crate) fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            wx: b.linear("wx", cfg.variates, d),
            wz: b.linear("wz", cfg.covariates, d),
            wf: b.linear("wf", 2 * d, cfg.variates),
        }
    }

    /// `x: [W, D, L]`, `z: [W, C, L]` to the fused series `[W·D, L]`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, x: Var, z: Var) -> Var {
        let (w, d, l) = (g.shape(x)[0], g.shape(x)[1], g.shape(x)[2]);
        let xt = g.permute(x, &[0, 2, 1]);
        let zt = g.permute(z, &[0, 2, 1]);
        let hx = g.matmul(xt, p.var(self.wx));
        let hz = g.matmul(zt, p.var(self.wz));
        let h = g.concat(&[hx, hz], 2);
        let fused = g.matmul(h, p.var(self.wf));
        let fused = g.permute(fused, &[0, 2, 1]);
        g.reshape(fused, &[w * d, l])
    }
}
