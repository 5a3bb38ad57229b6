use mohets::model::ModelConfig;
use mohets::tensor::gradcheck::{corrupted_case, op_suite};
use mohets::verify::{check_model, ModelCheckOptions, ProbeGroup};
use serde_json::json;

use crate::args::GradcheckArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub fn gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let mut failures = Vec::new();
    let mut ops = Vec::new();
    let mut cases = op_suite();
    if args.corrupt_fixture {
        cases.push(corrupted_case());
    }
    for case in &cases {
        let r = case.check(args.op_points, args.seed)?;
        let ok = r.passed(args.op_tol);
        println!(
            "op {:<22} {}  max rel error {:.3e} over {} probes",
            r.name,
            if ok { "ok  " } else { "FAIL" },
            r.max_rel_error,
            r.probes
        );
        if !ok {
            failures.push(format!("op `{}` (max rel error {:.3e})", r.name, r.max_rel_error));
        }
        ops.push(json!({ "op": r.name, "max_rel_error": r.max_rel_error, "probes": r.probes, "passed": ok }));
    }

    let mut model_report = serde_json::Value::Null;
    if !args.skip_model {
        let cfg = ModelConfig::preset(&args.preset).map_err(|e| CliError::usage(e.to_string()))?;
        let opts = ModelCheckOptions {
            h: args.h,
            probes_per_group: args.probes_per_group,
            seed: args.seed,
            windows: args.windows,
            training: !args.inference,
            ..ModelCheckOptions::default()
        };
        let r = check_model(&cfg, &opts)?;
        let ok = r.passed(args.tol);
        let groups: Vec<String> = ProbeGroup::ALL
            .iter()
            .map(|&g| format!("{g:?} {}", r.count(g)))
            .collect();
        println!(
            "model {} ({} mode): {} probes [{}], h = {:e}, {} redrawn at routing boundaries",
            args.preset,
            if args.inference { "inference" } else { "training" },
            r.probes.len(),
            groups.join(", "),
            r.h,
            r.skipped
        );
        println!(
            "model max rel error {:.3e} (tolerance {:e}) {}; {:.1} s",
            r.max_rel_error,
            args.tol,
            if ok { "PASS" } else { "FAIL" },
            r.elapsed.as_secs_f64()
        );
        if let Some(w) = r.worst() {
            println!(
                "worst probe {}[{}]: analytic {:.6e} numeric {:.6e}",
                w.param, w.index, w.analytic, w.numeric
            );
        }
        if let Some(refined) = r.max_refined_error() {
            println!("diagnostic: largest error at h/100 over refined probes {refined:.3e}");
        }
        if !ok {
            let name = r.worst().map_or("?", |w| w.param.as_str());
            failures.push(format!(
                "model (max rel error {:.3e} at `{name}`)",
                r.max_rel_error
            ));
        }
        model_report = json!({
            "preset": args.preset,
            "training_mode": !args.inference,
            "passed": ok,
            "elapsed_s": r.elapsed.as_secs_f64(),
            "report": r,
        });
    }

    if let Some(out) = &args.out {
        let mut manifest = RunManifest::begin("gradcheck", out, args.seed, 1)?;
        let path = manifest.artifact("gradcheck.json");
        std::fs::write(&path, serde_json::to_string_pretty(&json!({ "ops": ops, "model": model_report }))?)?;
        manifest.config = json!({
            "preset": args.preset,
            "h": args.h,
            "tol": args.tol,
            "op_tol": args.op_tol,
            "op_points": args.op_points,
            "probes_per_group": args.probes_per_group,
            "windows": args.windows,
            "inference": args.inference,
            "corrupt_fixture": args.corrupt_fixture,
        });
        manifest.summary = json!({ "failures": failures });
        manifest.write()?;
    }

    if failures.is_empty() {
        println!("gradcheck PASS");
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradcheck FAIL: {}", failures.join("; "))))
    }
}
