//! Spherical vertex sets and great-circle geodesic distances.
//!
//! Analysis locations live on a sphere of radius `R` in template space. The
//! geodesic distance uses the two-argument-arctangent form
//!
//! ```text
//! d(a, b) = R * atan2(|a x b|, a . b)
//! ```
//!
//! which stays accurate both near coincident points and near the antipode,
//! where the bare arccos form loses precision.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Relative radial deviation accepted as "on the sphere".
pub const SPHERE_REL_TOL: f64 = 1e-9;
/// Relative radial deviation repaired by renormalization when constructing a
/// [`VertexSet`]; anything larger is rejected.
pub const RENORMALIZE_REL_TOL: f64 = 1e-6;

/// The M analysis locations on a sphere of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    coords: Array2<f64>,
    radius: f64,
}

impl VertexSet {
    /// Builds a vertex set from raw coordinates.
    ///
    /// Rows deviating from the sphere by at most `RENORMALIZE_REL_TOL * radius`
    /// are renormalized onto it (tolerating file round-off); larger deviations
    /// are rejected so volumetric data cannot slip through silently.
    pub fn new(coords: Array2<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(format!("sphere radius must be positive, got {radius}")));
        }
        if coords.nrows() == 0 {
            return Err(Error::invalid("vertex set must contain at least one vertex"));
        }
        if coords.ncols() != 3 {
            return Err(Error::invalid(format!(
                "vertex coordinates must have 3 columns, got {}",
                coords.ncols()
            )));
        }
        let mut coords = coords;
        for (i, mut row) in coords.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() {
                return Err(Error::invalid(format!("vertex {i} has non-finite coordinates")));
            }
            if (norm - radius).abs() > RENORMALIZE_REL_TOL * radius {
                return Err(Error::invalid(format!(
                    "vertex {i} lies off the sphere: |p| = {norm}, radius = {radius}"
                )));
            }
            row.mapv_inplace(|x| x * radius / norm);
        }
        Ok(Self { coords, radius })
    }

    /// Number of vertices M.
    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // M >= 1 by construction
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// M x 3 coordinate matrix.
    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    /// Coordinates of vertex `j`.
    pub fn vertex(&self, j: usize) -> ArrayView1<'_, f64> {
        self.coords.row(j)
    }
}

/// Great-circle distance between two points on the sphere of radius `radius`.
///
/// Both points must lie on the sphere within `RENORMALIZE_REL_TOL * radius`.
/// The result is in `[0, pi * radius]` and is symmetric in its arguments.
pub fn great_circle_distance(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    radius: f64,
) -> Result<f64> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("sphere radius must be positive, got {radius}")));
    }
    if a.len() != 3 || b.len() != 3 {
        return Err(Error::invalid("points must be 3-dimensional"));
    }
    for p in [&a, &b] {
        let norm = p.dot(p).sqrt();
        if !norm.is_finite() {
            return Err(Error::invalid("non-finite point coordinates"));
        }
        if (norm - radius).abs() > RENORMALIZE_REL_TOL * radius {
            return Err(Error::invalid(format!(
                "point is off the sphere: |p| = {norm}, radius = {radius}"
            )));
        }
    }
    Ok(radius * central_angle(a, b))
}

/// Central angle via atan2 of the cross-product magnitude and the dot product.
/// Scale-free: any common scaling of `a` and `b` cancels.
fn central_angle(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cross_norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let dot = a.dot(&b);
    cross_norm.atan2(dot)
}

/// All pairwise geodesic distances of a vertex set.
///
/// The result is exactly symmetric with a zero diagonal and entries in
/// `[0, pi * R]`.
pub fn pairwise_distance_matrix(v: &VertexSet) -> Array2<f64> {
    let m = v.len();
    let mut d = Array2::zeros((m, m));
    for j in 0..m {
        for k in (j + 1)..m {
            // Vertices are on-sphere by construction, so no per-pair checks.
            let dist = v.radius * central_angle(v.coords.row(j), v.coords.row(k));
            d[[j, k]] = dist;
            d[[k, j]] = dist;
        }
    }
    d
}

/// Deterministic quasi-uniform point set: the Fibonacci (golden-angle)
/// lattice on the sphere of radius `radius`.
///
/// Stands in for a real mesh when simulating; seedless and reproducible.
pub fn fibonacci_sphere(m: usize, radius: f64) -> Result<VertexSet> {
    if m == 0 {
        return Err(Error::invalid("fibonacci_sphere requires at least one point"));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("sphere radius must be positive, got {radius}")));
    }
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut coords = Array2::zeros((m, 3));
    for i in 0..m {
        // Latitudes at the midpoints of m equal-area bands.
        let z = 1.0 - (2.0 * i as f64 + 1.0) / m as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden_angle * i as f64;
        coords[[i, 0]] = radius * r * phi.cos();
        coords[[i, 1]] = radius * r * phi.sin();
        coords[[i, 2]] = radius * z;
    }
    VertexSet::new(coords, radius)
}
