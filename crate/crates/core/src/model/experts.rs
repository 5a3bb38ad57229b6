//! Routed and shared expert networks.

use rand::Rng;

use super::config::{ModelConfig, RoutedExpert, SharedExpert};
use super::params::{Binding, Builder, ParamId, ParamKind};
use crate::error::Result;
use crate::tensor::{Element, Graph, Var};

/// `[cos(xWp) ‖ sin(xWp) ‖ gelu(xW̄ + b̄)]`
#[derive(Debug, Clone)]
pub struct FourierLayer {
    pub wp: ParamId,
    pub wg: ParamId,
    pub bg: ParamId,
}

impl FourierLayer {
    fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, input: usize, output: usize) -> Self {
        Self {
            wp: b.standard_normal("wp", &[input, output / 4]),
            wg: b.linear("wg", input, output / 2),
            bg: b.zeros("bg", &[output / 2], ParamKind::Bias),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, x: Var) -> Var {
        let proj = g.matmul(x, p.var(self.wp));
        let c = g.cos(proj);
        let s = g.sin(proj);
        let lin = g.matmul(x, p.var(self.wg));
        let lin = g.add(lin, p.var(self.bg));
        let act = g.gelu(lin);
        let axis = g.shape(x).len() - 1;
        g.concat(&[c, s, act], axis)
    }
}

/// Two stacked Fourier layers, `d → d_ff → d`.
#[derive(Debug, Clone)]
pub struct FourierFfn {
    pub l1: FourierLayer,
    pub l2: FourierLayer,
}

/// Plain `d → d_ff → d` GELU network.
#[derive(Debug, Clone)]
pub struct MlpFfn {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl MlpFfn {
    fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        Self {
            w1: b.linear("w1", cfg.d_model, cfg.d_ff),
            w2: b.linear("w2", cfg.d_ff, cfg.d_model),
        }
    }

    fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, cfg: &ModelConfig, x: Var) -> Var {
        let h = g.matmul(x, p.var(self.w1));
        let h = g.gelu(h);
        let h = g.dropout(h, cfg.dropout);
        g.matmul(h, p.var(self.w2))
    }
}

/// Token-wise expert selected by the router.
#[derive(Debug, Clone)]
pub enum RoutedNet {
    Fourier(FourierFfn),
    Mlp(MlpFfn),
}

impl RoutedNet {
    pub(crate) fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        match cfg.expert_mix.routed {
            RoutedExpert::Fourier => RoutedNet::Fourier(FourierFfn {
                l1: b.scope("l1", |b| FourierLayer::new(b, cfg.d_model, cfg.d_ff)),
                l2: b.scope("l2", |b| FourierLayer::new(b, cfg.d_ff, cfg.d_model)),
            }),
            RoutedExpert::Mlp => RoutedNet::Mlp(MlpFfn::new(b, cfg)),
        }
    }

    /// `[n, d]` tokens to `[n, d]`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, cfg: &ModelConfig, x: Var) -> Var {
        match self {
            RoutedNet::Fourier(f) => {
                let h = f.l1.forward(g, p, x);
                let h = g.dropout(h, cfg.dropout);
                f.l2.forward(g, p, h)
            }
            RoutedNet::Mlp(m) => m.forward(g, p, cfg, x),
        }
    }
}

/// Sequence-level expert applied to every patch.
#[derive(Debug, Clone)]
pub struct SharedNet {
    /// Depthwise kernel `[d, k]`, absent for the pointwise-only variant.
    pub depthwise: Option<ParamId>,
    pub ffn: MlpFfn,
}

impl SharedNet {
    pub(crate) fn new<T: Element, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Option<Self> {
        let depthwise = match cfg.expert_mix.shared {
            SharedExpert::None => return None,
            SharedExpert::DwConv => {
                let k = cfg.shared_kernel;
                Some(b.xavier("dw", &[cfg.d_model, k], k, k, ParamKind::Weight))
            }
            SharedExpert::Conv => None,
        };
        Some(Self {
            depthwise,
            ffn: MlpFfn::new(b, cfg),
        })
    }

    /// `[R, S, d]` to `[R, S, d]`; the depthwise kernel slides along patches.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Binding, cfg: &ModelConfig, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(k) = self.depthwise {
            let cf = g.permute(x, &[0, 2, 1]);
            let conv = g.depthwise_conv1d(cf, p.var(k))?;
            h = g.permute(conv, &[0, 2, 1]);
        }
        Ok(self.ffn.forward(g, p, cfg, h))
    }
}
