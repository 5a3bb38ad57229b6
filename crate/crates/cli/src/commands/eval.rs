use mohets::data::Dataset;
use mohets::eval::export::{write_metrics_csv, MetricRow};
use mohets::eval::{evaluate_horizons, naive_baseline, Baseline, EvalTable};
use mohets::model::{checkpoint, MoHets};
use mohets::Error;
use serde_json::json;

use super::{pick_source, CheckpointMeta};
use crate::args::EvalArgs;
use crate::error::CliResult;
use crate::manifest::RunManifest;

/// Rejects data whose variate count differs from the model's when covariate
/// fusion (the only D-dependent part) is active.
pub(crate) fn check_variates(model: &MoHets<f32>, variates: usize) -> CliResult<()> {
    let cfg = &model.config;
    if cfg.uses_covariates() && cfg.variates != variates {
        return Err(Error::Dataset(format!(
            "checkpoint fuses covariates for D = {} variates but the data has {variates}",
            cfg.variates
        ))
        .into());
    }
    Ok(())
}

pub(crate) fn print_table(label: &str, table: &EvalTable) {
    for r in &table.rows {
        match (&r.metrics, &r.skipped) {
            (Some(m), _) => println!("{label:>18}  H={:<4} MSE {:.6}  MAE {:.6}  ({} windows)", r.horizon, m.mse, m.mae, r.windows),
            (None, Some(why)) => println!("{label:>18}  H={:<4} skipped: {why}", r.horizon),
            (None, None) => {}
        }
    }
    if let Some(a) = table.average {
        println!("{label:>18}  avg    MSE {:.6}  MAE {:.6}", a.mse, a.mae);
    }
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let seed = args.run.seed;
    let mut manifest = RunManifest::begin("eval", &args.run.out, seed, args.run.threads)?;
    let (model, sidecar) = manifest.timed("load_checkpoint", || checkpoint::load::<f32>(&args.checkpoint))?;
    let meta = CheckpointMeta::from_sidecar(&sidecar.meta, &args.checkpoint)?;
    let (source, name) = pick_source(&args.data, seed, Some(&meta))?;
    let frame = source.load()?;
    check_variates(&model, frame.variates())?;
    let ds = Dataset::prepare(&name, frame, &meta.data)?;
    let opts = args.eval.options()?;

    let table = manifest.timed("evaluate", || evaluate_horizons(&model, &ds, &opts))?;
    print_table("MoHETS", &table);
    let mut rows = MetricRow::from_table(&table, &name, "MoHETS", seed);
    let mut tables = vec![("MoHETS".to_string(), table)];
    if args.baselines {
        if args.season == 0 {
            return Err(crate::error::CliError::usage("--season must be positive"));
        }
        let stride = opts.stride.unwrap_or(model.config.horizon);
        for b in [Baseline::RepeatLast, Baseline::Seasonal(args.season)] {
            let t = naive_baseline(&ds, b, stride, &opts)?;
            print_table(&b.name(), &t);
            rows.extend(MetricRow::from_table(&t, &name, &b.name(), seed));
            tables.push((b.name(), t));
        }
    }
    let csv = manifest.artifact("metrics.csv");
    write_metrics_csv(&csv, Some(&manifest.path()), &rows)?;
    manifest.config = json!({
        "checkpoint": args.checkpoint,
        "model": model.config,
        "dataset": name,
        "source": source,
        "data": meta.data,
        "eval": opts,
        "baselines": args.baselines,
        "season": args.season,
    });
    manifest.summary = json!(tables.into_iter().collect::<std::collections::BTreeMap<_, _>>());
    manifest.write()?;
    println!("metrics written to {}", csv.display());
    Ok(())
}
