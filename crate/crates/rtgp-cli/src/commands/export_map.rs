//! `rtgp export-map`: flatten a saved fit into a per-vertex CSV for plotting.

use rtgp_core::error::Result;
use rtgp_core::io::{load_fit, ManifestWriter};

use super::{ensure_out_dir, fmt_f64, write_csv};
use crate::cli::ExportMapArgs;
use crate::resolve::Resolver;

pub fn run(args: ExportMapArgs) -> Result<()> {
    let mut r = Resolver::new(args.common.config.as_ref())?;
    let fit_path = r.required_path("fit", args.fit)?;
    let out = r.required_path("out", args.common.out)?;
    let params = r.finish()?;

    let fit = load_fit(&fit_path)?.fit_result();
    let rows: Vec<Vec<String>> = (0..fit.beta_tilde_mean.len())
        .map(|j| {
            let selected = fit.inclusion_prob[j] >= fit.mpm_threshold;
            vec![
                j.to_string(),
                fmt_f64(fit.beta_tilde_mean[j]),
                fmt_f64(fit.inclusion_prob[j]),
                fmt_f64(fit.beta_map[j]),
                (selected as u8).to_string(),
            ]
        })
        .collect();

    ensure_out_dir(&out)?;
    let mut manifest = ManifestWriter::new("export-map", params);
    manifest.record_input("fit", &fit_path)?;
    let csv_path = out.join("map.csv");
    write_csv(
        &csv_path,
        &["vertex", "beta_tilde", "inclusion_prob", "beta_thresholded", "selected"],
        &rows,
    )?;
    manifest.record_output("map.csv", &csv_path)?;
    manifest.write(&out.join("manifest.jsonl"))
}
