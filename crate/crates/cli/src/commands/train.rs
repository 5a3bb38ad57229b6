use mohets::data::Dataset;
use mohets::model::MoHets;
use mohets::train::{self, TrainConfig, TrainOutputs, TrainSet};
use serde_json::json;

use super::{pick_source, CheckpointMeta};
use crate::args::TrainArgs;
use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::RunManifest;

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let seed = args.run.seed;
    let (source, name) = pick_source(&args.data, seed, None)?;
    let mut manifest = RunManifest::begin("train", &args.run.out, seed, args.run.threads)?;
    let frame = manifest.timed("load", || source.load())?;
    let cfg = resolve(&name, frame.variates(), &args.model, &args.training, seed, TrainConfig::default())?;
    let data_cfg = cfg.data_config();
    let ds = Dataset::prepare(&name, frame, &data_cfg)?;
    let set = TrainSet::from_dataset(&ds)?;
    log::info!(
        "{name}: {} variates, {} train / {} val windows, preset d_model {} P {} H_o {}",
        ds.variates(),
        set.train.len(),
        set.val.len(),
        cfg.model.d_model,
        cfg.model.patch_len,
        cfg.model.horizon
    );

    let split_path = manifest.artifact("split.json");
    std::fs::write(&split_path, serde_json::to_string_pretty(&ds.manifest(seed))?)?;

    let meta = CheckpointMeta {
        dataset: name.clone(),
        source: source.clone(),
        data: data_cfg,
        scaler: ds.scaler.clone(),
        train: cfg.train.clone(),
    };
    let mut model = MoHets::<f32>::new(cfg.model.clone(), seed)?;
    log::info!(
        "parameters: {} total, {} activated",
        model.total_params(),
        model.activated_params()
    );
    manifest.config = json!({ "run": cfg, "source": source, "dataset": name });
    let outputs = TrainOutputs {
        dir: Some(args.run.out.clone()),
        meta: serde_json::to_value(&meta)?,
    };
    let result = manifest.timed("train", || train::train(&mut model, &set, &cfg.train, &outputs));
    for f in ["train_log.jsonl", "best.bin", "best.bin.json", "final.bin", "final.bin.json"] {
        manifest.artifact(f);
    }
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            manifest.summary = json!({ "error": e.to_string() });
            manifest.outputs.retain(|o| o == "split.json" || o == "train_log.jsonl");
            manifest.artifact("last_good.bin");
            manifest.write()?;
            return Err(e.into());
        }
    };
    let last = report.last();
    manifest.summary = json!({
        "steps": report.steps.len(),
        "epochs": report.epochs.len(),
        "best_val_mse": report.best_val_mse,
        "best_epoch": report.best_epoch,
        "stopped_early": report.stopped_early,
        "final_huber": last.map(|s| s.huber),
        "final_max_expert_fraction": last.map(|s| s.max_fraction()),
        "total_params": model.total_params(),
        "activated_params": model.activated_params(),
    });
    let path = manifest.write()?;
    println!(
        "trained {} steps over {} epochs; best val MSE {}; manifest {}",
        report.steps.len(),
        report.epochs.len(),
        report.best_val_mse.map_or_else(|| "n/a".into(), |v| format!("{v:.6}")),
        path.display()
    );
    Ok(())
}
