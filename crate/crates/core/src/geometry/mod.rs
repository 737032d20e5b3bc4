//! Rest-pose discretization: neighbor graphs, kernel weights, volumes and the
//! inverted moment matrices used by the deformation-gradient fit.

mod knn;

use std::sync::OnceLock;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

pub use knn::{knn, KnnIndex};

use crate::error::{Error, Result};
use crate::linalg::BlockPattern;
use crate::{Mat3, Vec3};

/// Number of neighbors in every stencil.
pub const NEIGHBORS: usize = 6;
/// Stencil size including the center point.
pub const STENCIL: usize = NEIGHBORS + 1;

const KERNEL_RADIUS_FACTOR: f64 = 1.1;
const DEGENERACY_RATIO: f64 = 1e-8;
const REGULARIZATION: f64 = 1e-6;

/// An ordered set of 3-D points; the id of a point is its index.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
}

impl PointCloud {
    pub const MIN_POINTS: usize = 4;

    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if positions.len() < Self::MIN_POINTS {
            return Err(Error::InsufficientPoints {
                required: Self::MIN_POINTS,
                actual: positions.len(),
            });
        }
        if let Some(point) = positions
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::NonFinitePoint { point });
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<Vec3> {
        self.positions
    }

    pub fn centroid(&self) -> Vec3 {
        self.positions.iter().sum::<Vec3>() / self.positions.len() as f64
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        bounding_diameter(&self.positions)
    }
}

pub(crate) fn bounding_diameter(points: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        0.0
    } else {
        (hi - lo).norm()
    }
}

/// Six-neighbor stencil around one point of the rest cloud.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub center: usize,
    pub neighbors: [usize; NEIGHBORS],
    pub weights: [f64; NEIGHBORS],
    pub volume: f64,
    /// `(X W X^T)^{-1}`, regularized when the stencil is nearly flat.
    pub moment_inverse: Mat3,
    pub regularized: bool,
    /// `F = sum_a y_a * coeffs[a]^T` over `[center, neighbors...]`.
    coeffs: [Vec3; STENCIL],
}

impl Neighborhood {
    /// Global ids of the stencil, center first.
    pub fn nodes(&self) -> [usize; STENCIL] {
        let mut out = [self.center; STENCIL];
        out[1..].copy_from_slice(&self.neighbors);
        out
    }

    /// Coefficients mapping stencil positions linearly onto `F`.
    pub fn coeffs(&self) -> &[Vec3; STENCIL] {
        &self.coeffs
    }

    /// Weighted least-squares deformation gradient for deformed positions `y`.
    pub fn deformation_gradient(&self, y: &[Vec3]) -> Mat3 {
        let yi = y[self.center];
        let mut f = Mat3::zeros();
        for (k, &j) in self.neighbors.iter().enumerate() {
            f += (yi - y[j]) * (-self.coeffs[k + 1]).transpose();
        }
        f
    }
}

/// Kernel weight `(1 - (r/h)^2)^3`, zero outside the support radius.
pub fn kernel_weight(r: f64, h: f64) -> f64 {
    let q = 1.0 - (r / h) * (r / h);
    if q <= 0.0 {
        0.0
    } else {
        q * q * q
    }
}

/// `sum_j w_j d_j d_j^T` for stencil offsets `d_j`.
pub fn moment_matrix(offsets: &[Vec3], weights: &[f64]) -> Mat3 {
    offsets
        .iter()
        .zip(weights)
        .fold(Mat3::zeros(), |acc, (d, w)| acc + *w * d * d.transpose())
}

/// Inverts a symmetric moment matrix, applying a trace-scaled diagonal shift
/// when it is nearly singular. Returns the inverse and whether the shift fired.
pub fn invert_moment(moment: &Mat3, point: usize) -> Result<(Mat3, bool)> {
    let trace = moment.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::DegenerateNeighborhood {
            point,
            reason: format!("moment matrix trace {trace}"),
        });
    }
    let eig = SymmetricEigen::new(*moment);
    let min_eig = eig.eigenvalues.min();
    let mut m = *moment;
    let mut regularized = false;
    if min_eig <= DEGENERACY_RATIO * trace / 3.0 {
        m += Mat3::identity() * (REGULARIZATION * trace / 3.0);
        regularized = true;
    }
    let inv = m.try_inverse().ok_or_else(|| Error::DegenerateNeighborhood {
        point,
        reason: "moment matrix not invertible".into(),
    })?;
    let inv = 0.5 * (inv + inv.transpose());
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateNeighborhood {
            point,
            reason: "non-finite moment inverse".into(),
        });
    }
    Ok((inv, regularized))
}

/// Rest configuration with its precomputed stencils and mass distribution.
#[derive(Debug)]
pub struct ReferenceModel {
    rest: PointCloud,
    neighborhoods: Vec<Neighborhood>,
    total_mass: f64,
    point_masses: Vec<f64>,
    surface_mask: Vec<bool>,
    pattern: OnceLock<BlockPattern>,
}

impl Clone for ReferenceModel {
    fn clone(&self) -> Self {
        Self {
            rest: self.rest.clone(),
            neighborhoods: self.neighborhoods.clone(),
            total_mass: self.total_mass,
            point_masses: self.point_masses.clone(),
            surface_mask: self.surface_mask.clone(),
            pattern: OnceLock::new(),
        }
    }
}

impl ReferenceModel {
    pub fn len(&self) -> usize {
        self.rest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    pub fn rest(&self) -> &PointCloud {
        &self.rest
    }

    pub fn rest_positions(&self) -> &[Vec3] {
        self.rest.positions()
    }

    pub fn neighborhoods(&self) -> &[Neighborhood] {
        &self.neighborhoods
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn point_masses(&self) -> &[f64] {
        &self.point_masses
    }

    pub fn surface_mask(&self) -> &[bool] {
        &self.surface_mask
    }

    pub fn volumes(&self) -> impl Iterator<Item = f64> + '_ {
        self.neighborhoods.iter().map(|n| n.volume)
    }

    pub fn mean_volume(&self) -> f64 {
        self.volumes().sum::<f64>() / self.len() as f64
    }

    pub fn min_volume(&self) -> f64 {
        self.volumes().fold(f64::INFINITY, f64::min)
    }

    pub fn diameter(&self) -> f64 {
        self.rest.diameter()
    }

    /// Mean distance from each rest point to its nearest neighbor.
    pub fn mean_spacing(&self) -> f64 {
        let x = self.rest.positions();
        self.neighborhoods
            .iter()
            .map(|n| (x[n.center] - x[n.neighbors[0]]).norm())
            .sum::<f64>()
            / self.len() as f64
    }

    /// Sparsity layout of the stiffness matrix, built on first use.
    pub fn pattern(&self) -> &BlockPattern {
        self.pattern
            .get_or_init(|| BlockPattern::from_stencils(self.len(), &self.neighborhoods))
    }

    pub fn check_positions(&self, y: &[Vec3], what: &str) -> Result<()> {
        if y.len() != self.len() {
            return Err(Error::size(what, self.len(), y.len()));
        }
        Ok(())
    }
}

fn build_neighborhood(index: &KnnIndex, point: usize) -> Result<Neighborhood> {
    let x = index.points();
    let hits = index.query(&x[point], STENCIL)?;
    let mut neighbors = [0usize; NEIGHBORS];
    let mut dists = [0f64; NEIGHBORS];
    for (slot, (id, d)) in hits
        .into_iter()
        .filter(|(id, _)| *id != point)
        .take(NEIGHBORS)
        .enumerate()
    {
        neighbors[slot] = id;
        dists[slot] = d;
    }

    let h = KERNEL_RADIUS_FACTOR * dists[NEIGHBORS - 1];
    if !(h > 0.0) {
        return Err(Error::DegenerateNeighborhood {
            point,
            reason: "all neighbors coincide with the center".into(),
        });
    }
    let weights = dists.map(|r| kernel_weight(r, h));
    let offsets = neighbors.map(|j| x[point] - x[j]);
    let moment = moment_matrix(&offsets, &weights);
    let (moment_inverse, regularized) = invert_moment(&moment, point)?;

    let mut coeffs = [Vec3::zeros(); STENCIL];
    for k in 0..NEIGHBORS {
        let g = moment_inverse * offsets[k] * weights[k];
        coeffs[0] += g;
        coeffs[k + 1] = -g;
    }
    let spacing = dists.iter().sum::<f64>() / NEIGHBORS as f64;

    Ok(Neighborhood {
        center: point,
        neighbors,
        weights,
        volume: spacing * spacing * spacing,
        moment_inverse,
        regularized,
        coeffs,
    })
}

/// Builds the rest-pose model: exact 6-NN stencils, kernel weights, volumes,
/// moment inverses and volume-proportional point masses.
pub fn build_reference(
    rest: PointCloud,
    total_mass: f64,
    surface_mask: Vec<bool>,
) -> Result<ReferenceModel> {
    let n = rest.len();
    if n < STENCIL {
        return Err(Error::InsufficientPoints {
            required: STENCIL,
            actual: n,
        });
    }
    if !(total_mass > 0.0) || !total_mass.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "total mass must be positive, got {total_mass}"
        )));
    }
    if surface_mask.len() != n {
        return Err(Error::size("surface mask", n, surface_mask.len()));
    }

    let index = KnnIndex::new(rest.positions());
    let neighborhoods = (0..n)
        .into_par_iter()
        .map(|i| build_neighborhood(&index, i))
        .collect::<Result<Vec<_>>>()?;

    let total_volume: f64 = neighborhoods.iter().map(|nb| nb.volume).sum();
    let point_masses = neighborhoods
        .iter()
        .map(|nb| total_mass * nb.volume / total_volume)
        .collect();

    Ok(ReferenceModel {
        rest,
        neighborhoods,
        total_mass,
        point_masses,
        surface_mask,
        pattern: OnceLock::new(),
    })
}
