//! `rtgp fit`: fit the model with either engine, then persist the fit
//! container and a convergence trace.

use rtgp_core::error::Result;
use rtgp_core::gibbs::run_chain;
use rtgp_core::io::{read_matrix, sha256_file, sha256_hex, save_fit, FitContainer, ManifestWriter};
use rtgp_core::model::FitDiagnostics;
use rtgp_core::{fit_vi, CaviConfig, ChainConfig, Dataset, Hyperparameters};

use super::{ensure_out_dir, fmt_f64, load_basis, read_column, write_csv};
use crate::cli::FitArgs;
use crate::resolve::{usage, Resolver};

pub fn run(args: FitArgs) -> Result<()> {
    let mut r = Resolver::new(args.common.config.as_ref())?;
    let engine = r.value("engine", args.engine, "vi".to_string())?;
    if engine != "vi" && engine != "gibbs" {
        return Err(usage(format!("--engine must be `vi` or `gibbs`, got `{engine}`")));
    }
    let x_path = r.required_path("x", args.x)?;
    let y_path = r.required_path("y", args.y)?;
    let basis_dir = r.required_path("basis", args.basis)?;

    let hd = Hyperparameters::default();
    let h = Hyperparameters {
        sigma_beta0_sq: r.value("sigma_beta0_sq", args.sigma_beta0_sq, hd.sigma_beta0_sq)?,
        s_beta: r.value("s_beta", args.s_beta, hd.s_beta)?,
        s_eps: r.value("s_eps", args.s_eps, hd.s_eps)?,
        s_alpha: r.value("s_alpha", args.s_alpha, hd.s_alpha)?,
        t_min: r.value("t_min", args.t_min, hd.t_min)?,
        t_max: r.value("t_max", args.t_max, hd.t_max)?,
        n_delta: r.value("n_delta", args.n_delta, hd.n_delta)?,
    };
    let cd = CaviConfig::default();
    let mpm_threshold = r.value("mpm_threshold", args.mpm_threshold, cd.mpm_threshold)?;
    let seed = r.value("seed", args.seed, cd.seed)?;
    let vi_config = CaviConfig {
        max_iter: r.value("max_iter", args.max_iter, cd.max_iter)?,
        elbo_rel_tol: r.value("tol", args.tol, cd.elbo_rel_tol)?,
        ridge_init_penalty: r.value("ridge_init_penalty", args.ridge_init_penalty, cd.ridge_init_penalty)?,
        seed,
        mpm_threshold,
    };
    let gd = ChainConfig::default();
    let chain_config = ChainConfig {
        n_iter: r.value("iterations", args.iterations, gd.n_iter)?,
        burn_in: r.value("burn_in", args.burn_in, gd.burn_in)?,
        thin: r.value("thin", args.thin, gd.thin)?,
        seed,
    };
    let out = r.required_path("out", args.common.out)?;
    let params = r.finish()?;

    let x = read_matrix(&x_path)?;
    let y = read_column(&y_path)?;
    let (basis, basis_meta, basis_hash) = load_basis(&basis_dir)?;
    let data = Dataset::new(y, x, None)?;

    let mut manifest = ManifestWriter::new("fit", params);
    manifest.record_input("x", &x_path)?;
    manifest.record_input("y", &y_path)?;
    for name in [super::BASIS_META_FILE, super::BASIS_EIGENVALUES_FILE, super::BASIS_EIGENVECTORS_FILE] {
        manifest.record_input(name, &basis_dir.join(name))?;
    }

    let (mut fit, trace_header, trace_rows): (_, &[&str], Vec<Vec<String>>) =
        match engine.as_str() {
            "vi" => {
                let fit = fit_vi(&data, &basis, &h, &vi_config)?;
                let FitDiagnostics::Variational { elbo_trace } = &fit.diagnostics else {
                    unreachable!("variational fits carry an objective trace");
                };
                let rows = elbo_trace
                    .iter()
                    .enumerate()
                    .map(|(i, e)| vec![i.to_string(), fmt_f64(*e)])
                    .collect();
                (fit, &["sweep", "elbo"] as &[&str], rows)
            }
            _ => {
                let chain = run_chain(&data, &basis, &h, &chain_config)?;
                let fit = chain.summarize(&basis, &h, mpm_threshold)?;
                let rows = (0..chain.kept())
                    .map(|i| {
                        vec![
                            i.to_string(),
                            fmt_f64(chain.beta0[i]),
                            fmt_f64(chain.delta[i]),
                            fmt_f64(chain.sigma_eps_sq[i]),
                            fmt_f64(chain.sigma_beta_sq[i]),
                            fmt_f64(chain.sigma_alpha_sq[i]),
                        ]
                    })
                    .collect();
                let header: &[&str] =
                    &["sample", "beta0", "delta", "sigma_eps_sq", "sigma_beta_sq", "sigma_alpha_sq"];
                (fit, header, rows)
            }
        };
    fit.basis_ref = format!("sha256:{basis_hash}");

    // Fingerprint ties the container to its inputs and effective settings.
    let fingerprint_src = format!(
        "{}|{}|{}",
        sha256_file(&x_path)?,
        sha256_file(&y_path)?,
        basis_hash,
    );
    let fingerprint = sha256_hex(fingerprint_src.as_bytes());

    ensure_out_dir(&out)?;
    let container = FitContainer::new(&fit, &h, basis_meta.manifest.clone(), fingerprint)?;
    let fit_path = out.join("fit.json");
    save_fit(&fit_path, &container)?;
    manifest.record_output("fit.json", &fit_path)?;

    let trace_path = out.join("trace.csv");
    write_csv(&trace_path, trace_header, &trace_rows)?;
    manifest.record_output("trace.csv", &trace_path)?;
    manifest.write(&out.join("manifest.jsonl"))
}
