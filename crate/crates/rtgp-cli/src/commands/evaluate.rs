//! `rtgp evaluate`: score fits against ground truth and held-out data, then
//! emit a replicate-aggregated method-by-metric table. Cell values are scaled
//! by 100 (the column names say so); undefined entries are `NA`.

use std::path::PathBuf;

use rtgp_core::error::Result;
use rtgp_core::io::{load_fit, ManifestWriter};
use rtgp_core::metrics::{
    param_error, predictive_metrics, ridge_fit_split, selection_confusion, summarize,
};
use rtgp_core::model::{predict, FitDiagnostics};

use super::{broadcast, ensure_out_dir, parse_penalty_grid, read_column, write_csv};
use crate::cli::EvaluateArgs;
use crate::resolve::{usage, Resolver};

/// One replicate's metric vector; selection entries stay `None` for methods
/// without a selection rule.
#[derive(Debug, Clone, Copy, Default)]
struct ReplicateMetrics {
    beta_bias: Option<f64>,
    beta_mse: Option<f64>,
    r2: Option<f64>,
    mse: Option<f64>,
    tpr: Option<f64>,
    tdr: Option<f64>,
    fpr: Option<f64>,
    fdr: Option<f64>,
}

const METRICS: [(&str, fn(&ReplicateMetrics) -> Option<f64>); 8] = [
    ("beta_bias", |m| m.beta_bias),
    ("beta_mse", |m| m.beta_mse),
    ("r2", |m| m.r2),
    ("mse", |m| m.mse),
    ("tpr", |m| m.tpr),
    ("tdr", |m| m.tdr),
    ("fpr", |m| m.fpr),
    ("fdr", |m| m.fdr),
];

pub fn run(args: EvaluateArgs) -> Result<()> {
    let mut r = Resolver::new(args.common.config.as_ref())?;
    if args.fits.is_empty() {
        return Err(usage("give at least one --fit"));
    }
    let truth_beta_path = r.required_path("truth_beta", args.truth_beta)?;
    let truth_mask_path = r.required_path("truth_mask", args.truth_mask)?;
    let ridge_penalties =
        r.value("ridge_penalties", args.ridge_penalties, "0.01,0.1,1,10,100,1000".to_string())?;
    let ridge_val_fraction = r.value("ridge_val_fraction", args.ridge_val_fraction, 0.2)?;
    let seed = r.value("seed", args.seed, 0u64)?;
    let out = r.required_path("out", args.common.out)?;
    let record_paths = |key: &str, paths: &[PathBuf], r: &mut Resolver| {
        let shown: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
        r.record_value(key, shown);
    };
    record_paths("fit", &args.fits, &mut r);
    record_paths("x_test", &args.x_test, &mut r);
    record_paths("y_test", &args.y_test, &mut r);
    record_paths("x_train", &args.x_train, &mut r);
    record_paths("y_train", &args.y_train, &mut r);
    let params = r.finish()?;

    let n_fits = args.fits.len();
    if args.x_test.is_empty() || args.y_test.is_empty() {
        return Err(usage("evaluation needs --x-test and --y-test"));
    }
    let x_tests = broadcast(&args.x_test, n_fits, "--x-test")?;
    let y_tests = broadcast(&args.y_test, n_fits, "--y-test")?;
    let with_ridge = !args.x_train.is_empty() || !args.y_train.is_empty();
    if with_ridge && (args.x_train.is_empty() || args.y_train.is_empty()) {
        return Err(usage("the ridge baseline needs both --x-train and --y-train"));
    }
    let x_trains = if with_ridge { broadcast(&args.x_train, n_fits, "--x-train")? } else { vec![] };
    let y_trains = if with_ridge { broadcast(&args.y_train, n_fits, "--y-train")? } else { vec![] };
    let penalty_grid = parse_penalty_grid(&ridge_penalties)?;

    let truth_beta = read_column(&truth_beta_path)?;
    let truth_mask_raw = read_column(&truth_mask_path)?;
    let truth_mask: Vec<bool> = truth_mask_raw
        .iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            other => Err(usage(format!("support mask entries must be 0 or 1, got {other}"))),
        })
        .collect::<Result<_>>()?;

    let mut manifest = ManifestWriter::new("evaluate", params);
    manifest.record_input("truth-beta", &truth_beta_path)?;
    manifest.record_input("truth-mask", &truth_mask_path)?;

    // Per-method replicate metrics, keyed in fixed row order.
    let mut by_method: Vec<(String, Vec<ReplicateMetrics>)> = Vec::new();
    let push = |method: &str, m: ReplicateMetrics, rows: &mut Vec<(String, Vec<ReplicateMetrics>)>| {
        match rows.iter_mut().find(|(name, _)| name == method) {
            Some((_, v)) => v.push(m),
            None => rows.push((method.to_string(), vec![m])),
        }
    };

    let mut ridge_seen = Vec::new();
    for (i, fit_path) in args.fits.iter().enumerate() {
        manifest.record_input(&format!("fit-{i}"), fit_path)?;
        let fit = load_fit(fit_path)?.fit_result();
        let engine = match fit.diagnostics {
            FitDiagnostics::Variational { .. } => "vi",
            FitDiagnostics::Chain { .. } => "gibbs",
        };
        let x_test = rtgp_core::io::read_matrix(x_tests[i])?;
        let y_test = read_column(y_tests[i])?;
        manifest.record_input(&format!("x-test-{i}"), x_tests[i])?;
        manifest.record_input(&format!("y-test-{i}"), y_tests[i])?;

        let pe = param_error(truth_beta.view(), fit.beta_map.view())?;
        let y_hat = predict(&fit, x_test.view())?;
        let pm = predictive_metrics(y_test.view(), y_hat.view())?;
        let est_mask: Vec<bool> =
            fit.inclusion_prob.iter().map(|&p| p >= fit.mpm_threshold).collect();
        let sc = selection_confusion(&truth_mask, &est_mask)?;
        push(
            engine,
            ReplicateMetrics {
                beta_bias: Some(pe.bias),
                beta_mse: Some(pe.mse),
                r2: pm.r2,
                mse: Some(pm.mse),
                tpr: sc.tpr,
                tdr: sc.tdr,
                fpr: sc.fpr,
                fdr: sc.fdr,
            },
            &mut by_method,
        );

        // One ridge fit per distinct dataset: fits that share train/test files
        // (broadcast from a single --x-train) share one baseline row.
        let dataset = with_ridge.then(|| (x_trains[i], y_trains[i], x_tests[i], y_tests[i]));
        if let Some(dataset) = dataset.filter(|d| !ridge_seen.contains(d)) {
            ridge_seen.push(dataset);
            let x_train = rtgp_core::io::read_matrix(x_trains[i])?;
            let y_train = read_column(y_trains[i])?;
            manifest.record_input(&format!("x-train-{i}"), x_trains[i])?;
            manifest.record_input(&format!("y-train-{i}"), y_trains[i])?;
            let ridge =
                ridge_fit_split(x_train.view(), y_train.view(), &penalty_grid, ridge_val_fraction, seed)?;
            let pe = param_error(truth_beta.view(), ridge.coefficients.view())?;
            let pm = predictive_metrics(y_test.view(), ridge.predict(x_test.view()).view())?;
            push(
                "ridge",
                ReplicateMetrics {
                    beta_bias: Some(pe.bias),
                    beta_mse: Some(pe.mse),
                    r2: pm.r2,
                    mse: Some(pm.mse),
                    ..Default::default()
                },
                &mut by_method,
            );
        }
    }

    // Fixed row order regardless of the order fits were given in.
    by_method.sort_by_key(|(name, _)| match name.as_str() {
        "vi" => 0,
        "gibbs" => 1,
        _ => 2,
    });

    let mut header: Vec<String> = vec!["method".into(), "replicates".into()];
    for (name, _) in METRICS {
        header.push(format!("{name}_mean_x100"));
        header.push(format!("{name}_se_x100"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

    let mut rows = Vec::new();
    for (method, reps) in &by_method {
        let mut row = vec![method.clone(), reps.len().to_string()];
        for (_, get) in METRICS {
            let values: Vec<Option<f64>> = reps.iter().map(get).collect();
            match summarize(&values) {
                Some(s) => {
                    row.push(super::fmt_f64(100.0 * s.mean));
                    row.push(super::fmt_f64(100.0 * s.se));
                }
                None => {
                    row.push("NA".into());
                    row.push("NA".into());
                }
            }
        }
        rows.push(row);
    }

    ensure_out_dir(&out)?;
    let csv_path = out.join("metrics.csv");
    write_csv(&csv_path, &header_refs, &rows)?;
    manifest.record_output("metrics.csv", &csv_path)?;
    manifest.write(&out.join("manifest.jsonl"))
}
