//! Naive attention oracle shared by the attention tests and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mohets::model::layers::AttnOptions;
use mohets::model::{ModelConfig, MoHets};
use mohets::tensor::{Graph, Tensor};

pub fn config(q_heads: usize, kv_heads: usize) -> ModelConfig {
    ModelConfig {
        blocks: 1,
        q_heads,
        kv_heads,
        d_model: 32,
        d_ff: 64,
        lookback: 64,
        ..ModelConfig::tiny()
    }
}

pub fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Plain per-head attention with interleaved-pair rotary positions.
#[allow(clippy::too_many_arguments)]
pub fn reference(
    x: &[f64],
    rows: usize,
    seq: usize,
    cfg: &ModelConfig,
    w: [&[f64]; 7],
    rope: bool,
    offset: usize,
) -> Vec<f64> {
    let [wq, bq, wk, bk, wv, bv, wo] = w;
    let (d, hq, hkv, dh) = (cfg.d_model, cfg.q_heads, cfg.kv_heads, cfg.head_dim());
    let kvd = hkv * dh;
    let lin = |x: &[f64], w: &[f64], b: Option<&[f64]>, out: usize| -> Vec<f64> {
        let inp = x.len();
        (0..out)
            .map(|o| (0..inp).map(|i| x[i] * w[i * out + o]).sum::<f64>() + b.map_or(0.0, |b| b[o]))
            .collect()
    };
    let rot = |v: &mut [f64], pos: usize| {
        for j in 0..dh / 2 {
            let a = (pos + offset) as f64 * cfg.rope_base.powf(-2.0 * j as f64 / dh as f64);
            let (c, s) = (a.cos(), a.sin());
            let (x0, x1) = (v[2 * j], v[2 * j + 1]);
            v[2 * j] = x0 * c - x1 * s;
            v[2 * j + 1] = x0 * s + x1 * c;
        }
    };
    let mut out = Vec::new();
    for r in 0..rows {
        let tok = |t: usize| &x[(r * seq + t) * d..(r * seq + t + 1) * d];
        let q: Vec<Vec<f64>> = (0..seq).map(|t| lin(tok(t), wq, Some(bq), d)).collect();
        let k: Vec<Vec<f64>> = (0..seq).map(|t| lin(tok(t), wk, Some(bk), kvd)).collect();
        let v: Vec<Vec<f64>> = (0..seq).map(|t| lin(tok(t), wv, Some(bv), kvd)).collect();
        let mut ctx = vec![vec![0.0; d]; seq];
        for h in 0..hq {
            let kh = h / (hq / hkv);
            for i in 0..seq {
                let mut qi = q[i][h * dh..(h + 1) * dh].to_vec();
                if rope {
                    rot(&mut qi, i);
                }
                let scores: Vec<f64> = (0..seq)
                    .map(|j| {
                        let mut kj = k[j][kh * dh..(kh + 1) * dh].to_vec();
                        if rope {
                            rot(&mut kj, j);
                        }
                        qi.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..seq {
                    for c in 0..dh {
                        ctx[i][h * dh + c] += e[j] / z * v[j][kh * dh + c];
                    }
                }
            }
        }
        for c in &ctx {
            out.extend(lin(c, wo, None, d));
        }
    }
    out
}

pub fn run(cfg: &ModelConfig, seed: u64, rope: bool, offset: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut m = MoHets::<f64>::new(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let attn = m.layout.blocks[0].attn.clone();
    for id in [attn.bq, attn.bk, attn.bv] {
        let shape = m.params.value(id).shape().to_vec();
        *m.params.value_mut(id) = random(shape, &mut rng);
    }
    let (rows, seq) = (2, 6);
    let x = random(vec![rows, seq, cfg.d_model], &mut rng);
    let mut g = Graph::inference();
    let p = m.params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = attn
        .forward(&mut g, &p, cfg, xv, xv, AttnOptions { rope, position_offset: offset })
        .unwrap();
    let w = [attn.wq, attn.bq, attn.wk, attn.bk, attn.wv, attn.bv, attn.wo].map(|id| m.params.value(id).data());
    let expect = reference(x.data(), rows, seq, cfg, w, rope, offset);
    (g.value(out.out).to_f64_vec(), expect, g.value(out.logits).to_f64_vec())
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
