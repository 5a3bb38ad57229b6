//! Finite-difference check of the full training objective.
//!
//! Dropout and DropPath masks are fixed by seeding every graph identically, so the
//! objective is a deterministic function of the parameters. Probes whose ±h
//! perturbation changes a top-K selection sit on a routing boundary and are
//! redrawn.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{synthetic, DataConfig, Dataset, Segment, WindowBatch};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, MoHets, ParamId};
use crate::tensor::gradcheck::{relative_error, DEFAULT_STEP};
use crate::tensor::Graph;
use crate::train::{batch_loss, LossConfig};

/// Parameter families probed in equal shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeGroup {
    Router,
    FourierFfn,
    SharedGate,
    Decoder,
    Other,
}

impl ProbeGroup {
    pub const ALL: [ProbeGroup; 5] = [
        ProbeGroup::Router,
        ProbeGroup::FourierFfn,
        ProbeGroup::SharedGate,
        ProbeGroup::Decoder,
        ProbeGroup::Other,
    ];

    pub fn of(name: &str) -> Self {
        if name.ends_with(".router") {
            ProbeGroup::Router
        } else if name.contains(".expert") && (name.contains(".l1.") || name.contains(".l2.")) {
            ProbeGroup::FourierFfn
        } else if name.ends_with(".shared_gate") {
            ProbeGroup::SharedGate
        } else if name.starts_with("decoder.") {
            ProbeGroup::Decoder
        } else {
            ProbeGroup::Other
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelCheckOptions {
    pub h: f64,
    /// Probes per group; the total is five times this.
    pub probes_per_group: usize,
    pub seed: u64,
    /// Windows in the probe batch.
    pub windows: usize,
    pub training: bool,
    pub loss: LossConfig,
    pub refine_above: Option<f64>,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        Self {
            h: DEFAULT_STEP,
            probes_per_group: 12,
            seed: 0,
            windows: 1,
            training: true,
            loss: LossConfig::default(),
            refine_above: Some(1e-5),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub group: ProbeGroup,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Error against a central difference at `h / 100`, computed for probes above
    /// `refine_above`; diagnostic only, never used for pass/fail.
    pub refined_rel_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelCheckReport {
    pub probes: Vec<Probe>,
    /// Probes redrawn because they straddled a routing boundary.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub h: f64,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ModelCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    pub fn count(&self, group: ProbeGroup) -> usize {
        self.probes.iter().filter(|p| p.group == group).count()
    }

    /// Largest diagnostic error at the refined step, over probes that were refined.
    pub fn max_refined_error(&self) -> Option<f64> {
        self.probes.iter().filter_map(|p| p.refined_rel_error).reduce(f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// A short synthetic batch matching `cfg` (variates, covariates, L, H_o).
pub fn probe_batch(cfg: &ModelConfig, windows: usize, seed: u64) -> Result<WindowBatch> {
    let len = 4 * (cfg.lookback + cfg.horizon) + 10 * windows;
    let frame = synthetic::multi_sine(cfg.variates, len, 0.1, seed)?;
    let mut data = DataConfig::new(cfg.lookback, cfg.horizon);
    if cfg.covariates == 0 {
        data.covariates = crate::data::CovariateSpec::none();
    }
    let ds = Dataset::prepare("probe", frame, &data)?;
    let starts = ds.window_starts(Segment::Train, 3)?;
    if starts.len() < windows {
        return Err(Error::Dataset(format!("only {} probe windows available", starts.len())));
    }
    ds.batch(&starts[..windows])
}

struct Objective<'a> {
    batch: &'a WindowBatch,
    opts: &'a ModelCheckOptions,
}

impl Objective<'_> {
    /// Loss and the flattened top-K selections of every MoHE layer.
    fn eval(&self, model: &MoHets<f64>) -> Result<(f64, Vec<usize>)> {
        let mut g = Graph::new(self.opts.training, self.opts.seed);
        let p = model.params.bind(&mut g, false);
        let loss = batch_loss(model, &mut g, &p, self.batch, &self.opts.loss)?;
        let selected = loss.forward.mohe.iter().flat_map(|t| t.assignment.selected.clone()).collect();
        Ok((g.value(loss.total).item(), selected))
    }

    /// Central difference along one coordinate; `None` if either side changes routing.
    fn difference(&self, model: &mut MoHets<f64>, id: ParamId, index: usize, h: f64, base: &[usize]) -> Result<Option<f64>> {
        let x0 = model.params.value(id).data()[index];
        model.params.value_mut(id).data_mut()[index] = x0 + h;
        let plus = self.eval(model);
        model.params.value_mut(id).data_mut()[index] = x0 - h;
        let minus = self.eval(model);
        model.params.value_mut(id).data_mut()[index] = x0;
        let ((fp, sp), (fm, sm)) = (plus?, minus?);
        if sp != base || sm != base {
            return Ok(None);
        }
        Ok(Some((fp - fm) / (2.0 * h)))
    }
}

/// Compares analytic and central-difference gradients of the total loss at stratified probes.
pub fn check_model(cfg: &ModelConfig, opts: &ModelCheckOptions) -> Result<ModelCheckReport> {
    let start = Instant::now();
    let mut model = MoHets::<f64>::new(cfg.clone(), opts.seed)?;
    let batch = probe_batch(cfg, opts.windows, opts.seed)?;
    let objective = Objective { batch: &batch, opts };

    let mut g = Graph::new(opts.training, opts.seed);
    let p = model.params.bind(&mut g, true);
    let loss = batch_loss(&model, &mut g, &p, &batch, &opts.loss)?;
    let base_selection: Vec<usize> = loss.forward.mohe.iter().flat_map(|t| t.assignment.selected.clone()).collect();
    let grads = g.backward(loss.total);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut report = ModelCheckReport {
        probes: Vec::new(),
        skipped: 0,
        max_rel_error: 0.0,
        h: opts.h,
        elapsed: Duration::ZERO,
    };
    for group in ProbeGroup::ALL {
        let members: Vec<ParamId> = ids
            .iter()
            .copied()
            .filter(|&id| ProbeGroup::of(&model.params.info(id).name) == group)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut taken = 0;
        let mut attempts = 0;
        while taken < opts.probes_per_group {
            attempts += 1;
            if attempts > 50 * opts.probes_per_group {
                return Err(Error::config(format!("could not place probes in {group:?} away from routing boundaries")));
            }
            let id = members[rng.random_range(0..members.len())];
            let index = rng.random_range(0..model.params.value(id).numel());
            let analytic = grads.get(p.var(id)).map_or(0.0, |g| g[index]);
            let Some(numeric) = objective.difference(&mut model, id, index, opts.h, &base_selection)? else {
                report.skipped += 1;
                continue;
            };
            let rel_error = relative_error(analytic, numeric);
            let refined_rel_error = match opts.refine_above {
                Some(t) if rel_error > t => objective
                    .difference(&mut model, id, index, opts.h / 100.0, &base_selection)?
                    .map(|n| relative_error(analytic, n)),
                _ => None,
            };
            if !rel_error.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient check of `{}`", model.params.info(id).name),
                    index,
                });
            }
            report.max_rel_error = report.max_rel_error.max(rel_error);
            report.probes.push(Probe {
                param: model.params.info(id).name.clone(),
                index,
                group,
                analytic,
                numeric,
                rel_error,
                refined_rel_error,
            });
            taken += 1;
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

