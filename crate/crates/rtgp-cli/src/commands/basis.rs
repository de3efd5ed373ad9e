//! `rtgp basis`: build the truncated eigenbasis of the kernel on a stored
//! vertex set and persist it for reuse by `fit`.

use rtgp_core::error::Result;
use rtgp_core::geometry::pairwise_distance_matrix;
use rtgp_core::io::{read_matrix, sha256_file, BasisManifest, ManifestWriter};
use rtgp_core::kernel::{gram, truncate_basis};
use rtgp_core::{KernelParams, VertexSet};

use super::{ensure_out_dir, save_basis, BasisMeta, BASIS_EIGENVALUES_FILE, BASIS_EIGENVECTORS_FILE, BASIS_META_FILE};
use crate::cli::BasisArgs;
use crate::resolve::{basis_selector, Resolver};

pub fn run(args: BasisArgs) -> Result<()> {
    let mut r = Resolver::new(args.common.config.as_ref())?;
    let vertices_path = r.required_path("vertices", args.vertices)?;
    let radius = r.value("radius", args.radius, 1.0)?;
    let phi = r.value("phi", args.phi, 1.0)?;
    let nu = r.value("nu", args.nu, 2.0)?;
    let jitter = r.value("jitter", args.jitter, 1e-8)?;
    let selector = basis_selector(&mut r, args.l, args.kappa, 0.99)?;
    let out = r.required_path("out", args.common.out)?;
    let params = r.finish()?;

    let coords = read_matrix(&vertices_path)?;
    let vertices = VertexSet::new(coords, radius)?;
    let kernel = KernelParams::new(phi, nu)?;
    let distances = pairwise_distance_matrix(&vertices);
    let k_mat = gram(distances.view(), &kernel, jitter)?;
    let basis = truncate_basis(k_mat.view(), selector)?;

    let meta = BasisMeta {
        manifest: BasisManifest {
            phi,
            nu,
            jitter,
            vertex_count: basis.vertex_count(),
            basis_count: basis.basis_count(),
            kappa_achieved: basis.kappa_achieved(),
        },
        radius,
        vertices_sha256: sha256_file(&vertices_path)?,
    };

    ensure_out_dir(&out)?;
    let mut manifest = ManifestWriter::new("basis", params);
    manifest.record_input("vertices", &vertices_path)?;
    save_basis(&out, &basis, &meta)?;
    for name in [BASIS_EIGENVALUES_FILE, BASIS_EIGENVECTORS_FILE, BASIS_META_FILE] {
        manifest.record_output(name, &out.join(name))?;
    }
    manifest.write(&out.join("manifest.jsonl"))
}
