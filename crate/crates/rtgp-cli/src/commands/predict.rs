//! `rtgp predict`: score new images with a saved fit.

use rtgp_core::error::Result;
use rtgp_core::io::{load_fit, read_matrix, ManifestWriter};
use rtgp_core::model::predict;

use super::{ensure_out_dir, fmt_f64, write_csv};
use crate::cli::PredictArgs;
use crate::resolve::Resolver;

pub fn run(args: PredictArgs) -> Result<()> {
    let mut r = Resolver::new(args.common.config.as_ref())?;
    let fit_path = r.required_path("fit", args.fit)?;
    let x_path = r.required_path("x", args.x)?;
    let out = r.required_path("out", args.common.out)?;
    let params = r.finish()?;

    let container = load_fit(&fit_path)?;
    let fit = container.fit_result();
    let x = read_matrix(&x_path)?;
    let predictions = predict(&fit, x.view())?;

    ensure_out_dir(&out)?;
    let mut manifest = ManifestWriter::new("predict", params);
    manifest.record_input("fit", &fit_path)?;
    manifest.record_input("x", &x_path)?;

    let rows: Vec<Vec<String>> = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| vec![i.to_string(), fmt_f64(*p)])
        .collect();
    let csv_path = out.join("predictions.csv");
    write_csv(&csv_path, &["row", "prediction"], &rows)?;
    manifest.record_output("predictions.csv", &csv_path)?;
    manifest.write(&out.join("manifest.jsonl"))
}
