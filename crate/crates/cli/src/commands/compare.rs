//! Ablation and sweep: train and score several variants under one seed.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mohets::data::Dataset;
use mohets::eval::export::{write_metrics_csv, MetricRow};
use mohets::eval::evaluate_horizons;
use mohets::model::{ExpertMix, HeadKind, ModelConfig, MoHets, NormScheme};
use mohets::train::{self, TrainConfig, TrainOutputs, TrainSet};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::eval::print_table;
use super::{slug, CheckpointMeta, Source};
use crate::args::{AblateArgs, AblationAxis, CompareArgs, SweepArgs, SweepAxis};
use crate::config::{resolve, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub total_params: usize,
    pub activated_params: usize,
    pub fourier_params: usize,
    pub steps: usize,
    pub final_huber: Option<f64>,
    pub best_val_mse: Option<f64>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// Short training budget; dataset defaults, the config file and flags override it.
fn budget() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 8,
        max_steps: Some(50),
        max_val_windows: Some(8),
        ..TrainConfig::default()
    }
}

fn write_comparison_csv(path: &Path, manifest: &Path, rows: &[ComparisonRow]) -> CliResult<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# manifest: {}", manifest.display())?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

fn run_variants(command: &str, axis: &str, args: &CompareArgs, variants: impl FnOnce(&RunConfig) -> CliResult<Vec<(String, RunConfig)>>) -> CliResult<()> {
    let seed = args.run.seed;
    let source = Source::from_args(&args.data, seed).unwrap_or(Source::Synthetic {
        variates: args.data.synthetic_variates,
        len: args.data.synthetic_len,
        noise: args.data.synthetic_noise,
        seed,
    });
    let name = args.data.dataset_name.clone().unwrap_or_else(|| source.default_name());
    let mut manifest = RunManifest::begin(command, &args.run.out, seed, args.run.threads)?;
    let frame = source.load()?;
    let base = resolve(&name, frame.variates(), &args.model, &args.training, seed, budget())?;
    let mut opts = args.eval.options()?;
    if opts.max_windows.is_none() {
        opts.max_windows = Some(16);
    }
    let variants = variants(&base)?;

    let mut metric_rows = Vec::new();
    let mut comparison = Vec::new();
    let mut resolved = Vec::new();
    for (label, cfg) in &variants {
        log::info!("{axis} variant `{label}`");
        let data_cfg = cfg.data_config();
        let ds = Dataset::prepare(&name, frame.clone(), &data_cfg)?;
        let set = TrainSet::from_dataset(&ds)?;
        let mut model = MoHets::<f32>::new(cfg.model.clone(), seed)?;
        let meta = CheckpointMeta {
            dataset: name.clone(),
            source: source.clone(),
            data: data_cfg,
            scaler: ds.scaler.clone(),
            train: cfg.train.clone(),
        };
        let dir = format!("variants/{}", slug(label));
        let outputs = TrainOutputs {
            dir: Some(args.run.out.join(&dir)),
            meta: serde_json::to_value(&meta)?,
        };
        let t0 = Instant::now();
        let report = train::train(&mut model, &set, &cfg.train, &outputs)?;
        let train_seconds = t0.elapsed().as_secs_f64();
        manifest.outputs.push(dir);
        let t1 = Instant::now();
        let table = evaluate_horizons(&model, &ds, &opts)?;
        let eval_seconds = t1.elapsed().as_secs_f64();
        print_table(label, &table);
        metric_rows.extend(MetricRow::from_table(&table, &name, label, seed));
        comparison.push(ComparisonRow {
            variant: label.clone(),
            mse: table.average.map(|m| m.mse),
            mae: table.average.map(|m| m.mae),
            total_params: model.total_params(),
            activated_params: model.activated_params(),
            fourier_params: model.fourier_params(),
            steps: report.steps.len(),
            final_huber: report.last().map(|s| s.huber),
            best_val_mse: report.best_val_mse,
            train_seconds,
            eval_seconds,
        });
        resolved.push(json!({ "variant": label, "run": cfg }));
    }

    let metrics = manifest.artifact("metrics.csv");
    write_metrics_csv(&metrics, Some(&manifest.path()), &metric_rows)?;
    let table = manifest.artifact("comparison.csv");
    write_comparison_csv(&table, &manifest.path(), &comparison)?;
    manifest.config = json!({
        "axis": axis,
        "dataset": name,
        "source": source,
        "eval": opts,
        "variants": resolved,
    });
    manifest.summary = json!(comparison);
    manifest.write()?;

    println!("{:<22} {:>10} {:>10} {:>10} {:>10} {:>8}", "variant", "MSE", "MAE", "params", "activated", "fourier");
    for r in &comparison {
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
        println!(
            "{:<22} {:>10} {:>10} {:>10} {:>10} {:>8}",
            r.variant,
            f(r.mse),
            f(r.mae),
            r.total_params,
            r.activated_params,
            r.fourier_params
        );
    }
    println!("comparison written to {}", table.display());
    Ok(())
}

/// The base configuration relabelled with `f` applied.
fn variant(base: &RunConfig, label: &str, f: impl FnOnce(&mut ModelConfig)) -> CliResult<(String, RunConfig)> {
    let mut cfg = base.clone();
    f(&mut cfg.model);
    cfg.model
        .validate()
        .map_err(|e| CliError::usage(format!("variant `{label}`: {e}")))?;
    Ok((label.to_string(), cfg))
}

pub fn ablate(args: &AblateArgs) -> CliResult<()> {
    let axis = args.axis;
    let name = format!("{axis:?}").to_lowercase();
    run_variants("ablate", &name, &args.compare, |base| match axis {
        AblationAxis::Experts => ExpertMix::ablation_rows()
            .into_iter()
            .map(|(label, mix)| variant(base, label, |m| m.expert_mix = mix))
            .collect(),
        AblationAxis::Norm => [
            ("MoHETS", NormScheme::Mixed),
            ("LayerNorm", NormScheme::AllLayerNorm),
            ("RMSNorm", NormScheme::AllRmsNorm),
        ]
        .into_iter()
        .map(|(label, norm)| variant(base, label, |m| m.norm = norm))
        .collect(),
        AblationAxis::Head => [("MoHETS", HeadKind::Conv), ("Linear head", HeadKind::Linear)]
            .into_iter()
            .map(|(label, head)| variant(base, label, |m| m.head = head))
            .collect(),
        AblationAxis::Covariates => {
            let channels = base.data.covariates.count();
            if channels == 0 {
                return Err(CliError::usage("the covariate ablation needs at least one calendar field"));
            }
            Ok(vec![
                variant(base, "MoHETS", |m| m.covariates = channels)?,
                variant(base, "w/o exogenous covs.", |m| m.covariates = 0)?,
            ])
        }
    })
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    let axis = args.axis;
    let values = args.values.clone();
    let name = format!("{axis:?}").to_lowercase();
    run_variants("sweep", &name, &args.compare, |base| match axis {
        SweepAxis::Hout => {
            let values = if values.is_empty() {
                ["8", "16", "24", "32"].map(String::from).to_vec()
            } else {
                values
            };
            values
                .iter()
                .map(|v| {
                    let h: usize = v
                        .parse()
                        .map_err(|_| CliError::usage(format!("H_o value `{v}` is not a positive integer")))?;
                    variant(base, &format!("H_o={h}"), |m| m.horizon = h)
                })
                .collect()
        }
        SweepAxis::Scale => {
            let values = if values.is_empty() {
                ModelConfig::PRESETS.map(String::from).to_vec()
            } else {
                values
            };
            values
                .iter()
                .map(|p| {
                    let dims = ModelConfig::preset(p).map_err(|e| CliError::usage(e.to_string()))?;
                    variant(base, p, |m| {
                        m.blocks = dims.blocks;
                        m.q_heads = dims.q_heads;
                        m.kv_heads = dims.kv_heads;
                        m.d_model = dims.d_model;
                        m.d_ff = dims.d_ff;
                    })
                })
                .collect()
        }
    })
}
