use mohets::data::{CovariateSource, Standardizer};
use mohets::eval::export::{svg_plot, write_forecast_csv, ForecastRow};
use mohets::eval::rollout;
use mohets::model::checkpoint;
use mohets::Error;
use serde_json::json;

use super::eval::check_variates;
use super::{pick_source, slug, CheckpointMeta};
use crate::args::ForecastArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn forecast(args: &ForecastArgs) -> CliResult<()> {
    if args.horizon == 0 {
        return Err(CliError::usage("--horizon must be positive"));
    }
    let seed = args.run.seed;
    let mut manifest = RunManifest::begin("forecast", &args.run.out, seed, args.run.threads)?;
    let (model, sidecar) = checkpoint::load::<f32>(&args.checkpoint)?;
    let meta = CheckpointMeta::from_sidecar(&sidecar.meta, &args.checkpoint)?;
    let (source, name) = pick_source(&args.data, seed, Some(&meta))?;
    let frame = source.load()?;
    check_variates(&model, frame.variates())?;

    let (l, h) = (model.config.lookback, args.horizon);
    let len = frame.len();
    let needed = if args.backtest { l + h } else { l };
    if len < needed {
        return Err(Error::Dataset(format!(
            "series has {len} points but the forecast needs {needed} (look-back L = {l}{})",
            if args.backtest { format!(" plus horizon {h}") } else { String::new() }
        ))
        .into());
    }
    let scaler = if meta.scaler.mean.len() == frame.variates() {
        meta.scaler.clone()
    } else {
        log::warn!("checkpoint scaler covers {} variates; refitting on the whole series", meta.scaler.mean.len());
        Standardizer::fit(frame.values(), 0..len)
    };
    let series: Vec<Vec<f64>> = frame
        .values()
        .iter()
        .enumerate()
        .map(|(v, col)| col.iter().map(|&x| scaler.apply(v, x)).collect())
        .collect();
    let start = if args.backtest { len - l - h } else { len - l };
    // Covariates for future timestamps are synthesized from the calendar.
    let cov = model.config.uses_covariates().then(|| CovariateSource {
        start: frame.start(),
        freq: frame.freq(),
        spec: meta.data.covariates.clone(),
        available: None,
    });
    let result = manifest.timed("rollout", || {
        rollout(&model, &series, start, cov.as_ref(), h, args.renorm.into())
    })?;
    log::info!("{} chunks of H_o = {} for H = {h}", result.iterations, model.config.horizon);

    let origin = start + l;
    let names = frame.names();
    let mut rows = Vec::with_capacity(names.len() * h);
    for (v, name_v) in names.iter().enumerate() {
        for j in 0..h {
            rows.push(ForecastRow {
                timestamp: ForecastRow::format_timestamp(&frame.timestamp_at(origin + j)),
                variate: name_v.clone(),
                y_true: result.truth.as_ref().map(|t| scaler.invert(v, t[v][j])),
                y_pred: scaler.invert(v, result.predictions[v][j]),
            });
        }
    }
    let csv = manifest.artifact("forecast.csv");
    write_forecast_csv(&csv, Some(&manifest.path()), &rows)?;

    if args.plot {
        let shown = l.min(4 * h).max(1);
        for (v, name_v) in names.iter().enumerate() {
            let raw = &frame.values()[v];
            let history = &raw[origin - shown..origin];
            let pred: Vec<f64> = rows[v * h..(v + 1) * h].iter().map(|r| r.y_pred).collect();
            let truth: Option<Vec<f64>> = args.backtest.then(|| raw[origin..origin + h].to_vec());
            let svg = svg_plot(&escape_xml(&format!("{name} / {name_v}")), history, truth.as_deref(), &pred);
            let path = manifest.artifact(&format!("forecast_{v}_{}.svg", slug(name_v)));
            std::fs::write(path, svg)?;
        }
    }

    manifest.config = json!({
        "checkpoint": args.checkpoint,
        "model": model.config,
        "dataset": name,
        "source": source,
        "horizon": h,
        "backtest": args.backtest,
        "renorm": mohets::eval::Renorm::from(args.renorm),
        "plot": args.plot,
    });
    manifest.summary = json!({
        "chunks": result.iterations,
        "origin_index": origin,
        "standardized_metrics": result.metrics,
    });
    manifest.write()?;
    if let Some(m) = result.metrics {
        println!("backtest MSE {:.6}  MAE {:.6} (standardized)", m.mse, m.mae);
    }
    println!("{} chunks; forecast written to {}", result.iterations, csv.display());
    Ok(())
}
