//! `rtgp simulate`: generate a replicated synthetic study and persist every
//! artifact needed to fit and evaluate against it.

use ndarray::Array2;
use rtgp_core::error::Result;
use rtgp_core::geometry::fibonacci_sphere;
use rtgp_core::io::{write_matrix, ManifestWriter};
use rtgp_core::simulate::StudyConfig;
use rtgp_core::{replicate_study, KernelParams};

use super::{ensure_out_dir, write_column};
use crate::cli::SimulateArgs;
use crate::resolve::{basis_selector, Resolver};

pub fn run(args: SimulateArgs) -> Result<()> {
    let mut r = Resolver::new(args.common.config.as_ref())?;
    let defaults = StudyConfig::default();
    let m = r.value("m", args.m, defaults.m)?;
    let selector = basis_selector(&mut r, args.l, args.kappa, 0.99)?;
    let phi = r.value("phi", args.phi, defaults.kernel.phi)?;
    let nu = r.value("nu", args.nu, defaults.kernel.nu)?;
    let jitter = r.value("jitter", args.jitter, defaults.jitter)?;
    let sigma_beta_sq = r.value("sigma_beta_sq", args.sigma_beta_sq, defaults.sigma_beta_sq)?;
    let sparsity_q = r.value("sparsity_q", args.sparsity_q, defaults.sparsity_q)?;
    let sigma_x_sq = r.value("sigma_x_sq", args.sigma_x_sq, defaults.sigma_x_sq)?;
    let n_train = r.value("n_train", args.n_train, defaults.n_train)?;
    let n_test = r.value("n_test", args.n_test, defaults.n_test)?;
    let reps = r.value("reps", args.reps, defaults.reps)?;
    let seed = r.value("seed", args.seed, defaults.seed)?;
    let out = r.required_path("out", args.common.out)?;
    let params = r.finish()?;

    let config = StudyConfig {
        m,
        basis: selector,
        kernel: KernelParams::new(phi, nu)?,
        jitter,
        sigma_beta_sq,
        sparsity_q,
        sigma_x_sq,
        n_train,
        n_test,
        reps,
        seed,
    };
    let study = replicate_study(&config)?;
    ensure_out_dir(&out)?;
    let mut manifest = ManifestWriter::new("simulate", params);

    let vertices = fibonacci_sphere(m, 1.0)?;
    let mut emit = |name: &str, write: &dyn Fn(&std::path::Path) -> Result<()>| -> Result<()> {
        let path = out.join(name);
        write(&path)?;
        manifest.record_output(name, &path)
    };

    emit("vertices.rtgp", &|p| write_matrix(p, vertices.coords().view()))?;
    emit("truth-beta.rtgp", &|p| write_column(p, &study.truth.beta_true))?;
    let mask = study
        .truth
        .support_mask
        .iter()
        .map(|&on| if on { 1.0 } else { 0.0 })
        .collect();
    emit("truth-mask.rtgp", &|p| write_column(p, &mask))?;
    let truth_meta = serde_json::json!({
        "beta0_true": study.truth.beta0_true,
        "sigma_eps_sq_true": study.truth.sigma_eps_sq_true,
        "seed": study.truth.meta.seed,
        "sigma_beta_sq": study.truth.meta.sigma_beta_sq,
        "sparsity_q": study.truth.meta.sparsity_q,
        "active_count": study.truth.meta.active_count,
    });
    emit("truth.json", &|p| {
        let mut bytes = serde_json::to_vec_pretty(&truth_meta).expect("truth meta serializes");
        bytes.push(b'\n');
        rtgp_core::io::atomic_write(p, &bytes)
    })?;

    for (rep, replicate) in study.replicates.iter().enumerate() {
        let x_train: &Array2<f64> = &replicate.train.x().to_owned();
        emit(&format!("rep-{rep:03}-x-train.rtgp"), &|p| write_matrix(p, x_train.view()))?;
        emit(&format!("rep-{rep:03}-y-train.rtgp"), &|p| {
            write_column(p, &replicate.train.y().to_owned())
        })?;
        let x_test: &Array2<f64> = &replicate.test.x().to_owned();
        emit(&format!("rep-{rep:03}-x-test.rtgp"), &|p| write_matrix(p, x_test.view()))?;
        emit(&format!("rep-{rep:03}-y-test.rtgp"), &|p| {
            write_column(p, &replicate.test.y().to_owned())
        })?;
    }

    manifest.write(&out.join("manifest.jsonl"))
}
