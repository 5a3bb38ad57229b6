//! Finite-difference verification of adjoints.
//!
//! An operation under test is reduced to a scalar by contracting its output with
//! a fixed random tensor; analytic gradients from [`Graph::backward`] are then
//! compared with central differences coordinate by coordinate.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{BackwardArgs, Graph, Var};
use super::{init, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Central difference of a scalar function of one coordinate.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub h: f64,
    /// Coordinates probed per input; all of them when `None` or when the input is smaller.
    pub max_probes: Option<usize>,
    /// Graphs are built in training mode (stochastic ops active, masks fixed by `seed`).
    pub training: bool,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            h: DEFAULT_STEP,
            max_probes: None,
            training: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub probes: usize,
    pub h: f64,
    /// `(input, coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
}

impl CheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks the adjoint of `build` at `inputs`.
pub fn check_op<F>(name: &str, inputs: &[Tensor<f64>], opts: &CheckOptions, build: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut g = Graph::new(opts.training, opts.seed);
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), with_grad)).collect();
        let out = build(&mut g, &vars)?;
        let mut proj_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0f_9a7d);
        let proj = init::normal::<f64, _>(g.shape(out), 1.0, &mut proj_rng);
        let proj = g.constant(proj);
        let prod = g.mul(out, proj);
        let loss = g.sum_all(prod);
        let value = g.value(loss).item();
        if !with_grad {
            return Ok((value, None));
        }
        let mut grads = g.backward(loss);
        let per_input = vars
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| vec![0.0; g.value(v).numel()]))
            .collect();
        Ok((value, Some(per_input)))
    };

    let (_, analytic) = eval(inputs, true)?;
    let analytic = analytic.expect("requested gradients");
    for (i, g) in analytic.iter().enumerate() {
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{name} gradient of input {i}"),
                index,
            });
        }
    }

    let mut probe_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(17));
    let mut report = CheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        probes: 0,
        h: opts.h,
        worst: None,
    };
    let mut point: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let n = inputs[i].numel();
        let coords: Vec<usize> = match opts.max_probes {
            Some(m) if m < n => sample(&mut probe_rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for j in coords {
            let x0 = inputs[i].data()[j];
            let mut at = |x: f64| -> Result<f64> {
                point[i].data_mut()[j] = x;
                eval(&point, false).map(|(v, _)| v)
            };
            let plus = at(x0 + opts.h)?;
            let minus = at(x0 - opts.h)?;
            point[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let err = relative_error(analytic[i][j], numeric);
            report.probes += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Where random check points for an input are drawn from.
#[derive(Debug, Clone, Copy)]
pub enum Domain {
    /// Standard normal.
    Any,
    /// Uniform on `[0.5, 2]`, for logs, roots and denominators.
    Positive,
}

pub type BuildFn = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// One named primitive with the input shapes and domains it is checked at.
#[derive(Clone)]
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, Domain)>,
    pub training: bool,
    pub build: BuildFn,
}

impl OpCase {
    fn new(name: &'static str, inputs: &[(&[usize], Domain)], build: BuildFn) -> Self {
        Self {
            name,
            inputs: inputs.iter().map(|(s, d)| (s.to_vec(), *d)).collect(),
            training: false,
            build,
        }
    }

    fn training(mut self) -> Self {
        self.training = true;
        self
    }

    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> Vec<Tensor<f64>> {
        self.inputs
            .iter()
            .map(|(shape, domain)| match domain {
                Domain::Any => init::normal(shape, 1.0, rng),
                Domain::Positive => {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
                    Tensor::from_parts(shape.clone(), data)
                }
            })
            .collect()
    }

    /// Runs the check at `points` random points and keeps the worst report.
    pub fn check(&self, points: usize, seed: u64) -> Result<CheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: Option<CheckReport> = None;
        for p in 0..points {
            let inputs = self.sample_point(&mut rng);
            let opts = CheckOptions {
                training: self.training,
                seed: seed.wrapping_add(p as u64),
                ..CheckOptions::default()
            };
            let report = check_op(self.name, &inputs, &opts, self.build)?;
            if worst.as_ref().is_none_or(|w| report.max_rel_error > w.max_rel_error) {
                let probes = worst.as_ref().map_or(0, |w| w.probes);
                worst = Some(CheckReport {
                    probes: report.probes + probes,
                    ..report
                });
            } else if let Some(w) = worst.as_mut() {
                w.probes += report.probes;
            }
        }
        worst.ok_or_else(|| Error::config("gradient check needs at least one point"))
    }
}

use Domain::{Any, Positive};

/// Every differentiable primitive of the engine.
pub fn op_suite() -> Vec<OpCase> {
    vec![
        OpCase::new("add", &[(&[2, 3], Any), (&[3], Any)], |g, v| Ok(g.add(v[0], v[1]))),
        OpCase::new("sub", &[(&[2, 3], Any), (&[2, 1], Any)], |g, v| Ok(g.sub(v[0], v[1]))),
        OpCase::new("mul", &[(&[2, 1, 3], Any), (&[4, 1], Any)], |g, v| Ok(g.mul(v[0], v[1]))),
        OpCase::new("div", &[(&[2, 3], Any), (&[2, 3], Positive)], |g, v| Ok(g.div(v[0], v[1]))),
        OpCase::new("scale", &[(&[5], Any)], |g, v| Ok(g.scale(v[0], -1.7))),
        OpCase::new("add_scalar", &[(&[5], Any)], |g, v| Ok(g.add_scalar(v[0], 0.3))),
        OpCase::new("neg", &[(&[5], Any)], |g, v| Ok(g.neg(v[0]))),
        OpCase::new("square", &[(&[5], Any)], |g, v| Ok(g.square(v[0]))),
        OpCase::new("exp", &[(&[5], Any)], |g, v| Ok(g.exp(v[0]))),
        OpCase::new("log", &[(&[5], Positive)], |g, v| Ok(g.log(v[0]))),
        OpCase::new("sqrt", &[(&[5], Positive)], |g, v| Ok(g.sqrt(v[0]))),
        OpCase::new("sin", &[(&[5], Any)], |g, v| Ok(g.sin(v[0]))),
        OpCase::new("cos", &[(&[5], Any)], |g, v| Ok(g.cos(v[0]))),
        OpCase::new("sigmoid", &[(&[5], Any)], |g, v| Ok(g.sigmoid(v[0]))),
        OpCase::new("gelu", &[(&[6], Any)], |g, v| Ok(g.gelu(v[0]))),
        OpCase::new("reshape", &[(&[2, 6], Any)], |g, v| Ok(g.reshape(v[0], &[3, 4]))),
        OpCase::new("permute", &[(&[2, 3, 4], Any)], |g, v| Ok(g.permute(v[0], &[2, 0, 1]))),
        OpCase::new("transpose", &[(&[2, 3, 4], Any)], |g, v| Ok(g.transpose(v[0]))),
        OpCase::new("narrow", &[(&[3, 5, 2], Any)], |g, v| Ok(g.narrow(v[0], 1, 1, 3))),
        OpCase::new("concat", &[(&[2, 2, 3], Any), (&[2, 1, 3], Any)], |g, v| Ok(g.concat(v, 1))),
        OpCase::new("gather_rows", &[(&[4, 3], Any)], |g, v| Ok(g.gather_rows(v[0], &[3, 0, 3]))),
        OpCase::new("scatter_rows_sum", &[(&[2, 3], Any), (&[3, 3], Any)], |g, v| {
            Ok(g.scatter_rows_sum(4, v, &[vec![1, 3], vec![0, 1, 1]]))
        }),
        OpCase::new("gather_elems", &[(&[3, 4], Any)], |g, v| {
            Ok(g.gather_elems(v[0], &[(0, 1), (2, 3), (0, 1)]))
        }),
        OpCase::new("sum_all", &[(&[2, 3], Any)], |g, v| Ok(g.sum_all(v[0]))),
        OpCase::new("mean_all", &[(&[2, 3], Any)], |g, v| Ok(g.mean_all(v[0]))),
        OpCase::new("sum_axis", &[(&[2, 3, 4], Any)], |g, v| Ok(g.sum_axis(v[0], 1, false))),
        OpCase::new("mean_axis", &[(&[2, 3, 4], Any)], |g, v| Ok(g.mean_axis(v[0], 2, true))),
        OpCase::new("var_lastdim", &[(&[3, 5], Any)], |g, v| Ok(g.var_lastdim(v[0]))),
        OpCase::new("softmax", &[(&[3, 4], Any)], |g, v| g.softmax_last(v[0])),
        OpCase::new("matmul", &[(&[3, 4], Any), (&[4, 2], Any)], |g, v| Ok(g.matmul(v[0], v[1]))),
        OpCase::new("matmul_tt", &[(&[4, 3], Any), (&[2, 4], Any)], |g, v| {
            Ok(g.matmul_t(v[0], v[1], true, true))
        }),
        OpCase::new("batched_matmul", &[(&[2, 3, 4], Any), (&[2, 4, 5], Any)], |g, v| {
            Ok(g.matmul(v[0], v[1]))
        }),
        OpCase::new("batched_matmul_shared_lhs", &[(&[4, 3], Any), (&[2, 4, 5], Any)], |g, v| {
            Ok(g.matmul_t(v[0], v[1], true, false))
        }),
        OpCase::new("batched_matmul_shared_rhs", &[(&[2, 3, 4], Any), (&[5, 4], Any)], |g, v| {
            Ok(g.matmul_t(v[0], v[1], false, true))
        }),
        OpCase::new("batched_matmul_bt", &[(&[2, 3, 4], Any), (&[2, 5, 4], Any)], |g, v| {
            Ok(g.matmul_t(v[0], v[1], false, true))
        }),
        OpCase::new("depthwise_conv1d", &[(&[2, 3, 7], Any), (&[3, 3], Any)], |g, v| {
            g.depthwise_conv1d(v[0], v[1])
        }),
        OpCase::new("conv_transpose1d", &[(&[2, 3, 4], Any), (&[3, 2, 2], Any)], |g, v| {
            g.conv_transpose1d(v[0], v[1], 2)
        }),
        OpCase::new("pointwise_conv1d", &[(&[2, 3, 5], Any), (&[4, 3], Any)], |g, v| {
            Ok(g.pointwise_conv1d(v[0], v[1]))
        }),
        OpCase::new("rope", &[(&[2, 5, 4], Any)], |g, v| g.rope(v[0], 10000.0, 0)),
        OpCase::new("dropout", &[(&[4, 5], Any)], |g, v| Ok(g.dropout(v[0], 0.3))).training(),
        OpCase::new("drop_path", &[(&[4, 5], Any)], |g, v| Ok(g.drop_path(v[0], 0.3))).training(),
        OpCase::new("huber", &[(&[12], Any), (&[12], Any)], |g, v| {
            // Scale apart so both branches are exercised.
            let p = g.scale(v[0], 2.5);
            g.huber(p, v[1], 2.0)
        }),
    ]
}

/// A squaring op whose adjoint is deliberately wrong (`3x` instead of `2x`);
/// the check harness must flag it.
pub fn corrupted_case() -> OpCase {
    OpCase::new("corrupted_square", &[(&[5], Any)], |g, v| {
        let x = g.value(v[0]).clone();
        let y = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|a| a * a).collect());
        Ok(g.custom(
            "corrupted_square",
            &[v[0]],
            y,
            Box::new(|args: &BackwardArgs<'_, f64>| {
                let x = args.inputs[0].data();
                vec![Some(x.iter().zip(args.grad).map(|(a, g)| 3.0 * a * g).collect())]
            }),
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_matches_exactly() {
        let x = Tensor::scalar(2.0);
        let r = check_op("scale3", &[x], &CheckOptions::default(), |g, v| Ok(g.scale(v[0], 3.0))).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.probes, 1);
    }

    #[test]
    fn softmax_at_reference_point() {
        let x = Tensor::from_f64(vec![4], &[2.0, 1.0, 0.0, -1.0]).unwrap();
        let r = check_op("softmax", &[x], &CheckOptions::default(), |g, v| g.softmax_last(v[0])).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn corrupted_adjoint_is_flagged_by_name() {
        let r = corrupted_case().check(1, 0).unwrap();
        assert_eq!(r.name, "corrupted_square");
        assert!(!r.passed(1e-6), "{r:?}");
    }

    #[test]
    fn central_difference_of_cubic() {
        let d = central_difference(|x| x * x * x, 2.0, 1e-5);
        assert!((d - 12.0).abs() < 1e-8);
    }
}
