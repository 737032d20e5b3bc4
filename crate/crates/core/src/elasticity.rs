//! Spatially varying Neo-Hookean energy over the point stencils.
//!
//! Every stencil contributes `V_i * psi(F_i)` where `F_i` is linear in the
//! seven stencil positions. Derivatives are assembled per stencil (21 local
//! coordinates) and reduced in stencil order, so serial and parallel runs give
//! identical results.

use nalgebra::{SMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Neighborhood, ReferenceModel, STENCIL};
use crate::linalg::BlockSparse;
use crate::numeric::neumaier_sum;
use crate::{Mat3, Vec3};

const LOCAL: usize = 3 * STENCIL;
type Mat9 = SMatrix<f64, 9, 9>;
type Local = SMatrix<f64, LOCAL, LOCAL>;
type Shape = SMatrix<f64, 9, LOCAL>;

/// Relative eigenvalue floor for projected stencil Hessians.
pub const PROJECTION_FLOOR: f64 = 1e-8;

/// Per-point Lamé parameters stored as natural logarithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialField {
    pub log_mu: Vec<f64>,
    pub log_lambda: Vec<f64>,
}

impl MaterialField {
    pub fn uniform(n: usize, mu: f64, lambda: f64) -> Self {
        Self {
            log_mu: vec![mu.ln(); n],
            log_lambda: vec![lambda.ln(); n],
        }
    }

    pub fn from_lame(mu: &[f64], lambda: &[f64]) -> Result<Self> {
        if mu.len() != lambda.len() {
            return Err(Error::size("lambda values", mu.len(), lambda.len()));
        }
        if let Some(i) = mu.iter().chain(lambda).position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Lamé parameters must be positive and finite (entry {i})"
            )));
        }
        Ok(Self {
            log_mu: mu.iter().map(|v| v.ln()).collect(),
            log_lambda: lambda.iter().map(|v| v.ln()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.log_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_mu.is_empty()
    }

    pub fn mu(&self, i: usize) -> f64 {
        self.log_mu[i].exp()
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.log_lambda[i].exp()
    }

    pub fn mus(&self) -> Vec<f64> {
        self.log_mu.iter().map(|v| v.exp()).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.log_lambda.iter().map(|v| v.exp()).collect()
    }

    pub fn mean_mu(&self) -> f64 {
        self.log_mu.iter().map(|v| v.exp()).sum::<f64>() / self.len() as f64
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.log_mu.len() != n {
            return Err(Error::size("log_mu", n, self.log_mu.len()));
        }
        if self.log_lambda.len() != n {
            return Err(Error::size("log_lambda", n, self.log_lambda.len()));
        }
        if let Some(i) = self
            .log_mu
            .iter()
            .chain(&self.log_lambda)
            .position(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "non-finite material entry {}",
                i % n
            )));
        }
        Ok(())
    }
}

/// Deformation gradient with its invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationGradient {
    pub f: Mat3,
    /// `tr(F^T F)`
    pub ic: f64,
    /// `det F`
    pub j: f64,
}

impl DeformationGradient {
    pub fn new(f: Mat3) -> Self {
        Self {
            f,
            ic: f.norm_squared(),
            j: f.determinant(),
        }
    }
}

pub fn deformation_gradient(
    model: &ReferenceModel,
    point: usize,
    y: &[Vec3],
) -> Result<DeformationGradient> {
    model.check_positions(y, "deformed positions")?;
    let nb = model
        .neighborhoods()
        .get(point)
        .ok_or_else(|| Error::InvalidIndex {
            what: "point".into(),
            index: point,
            len: model.len(),
        })?;
    Ok(DeformationGradient::new(nb.deformation_gradient(y)))
}

/// `mu/2 (I_c - 3) - mu ln J + lambda/2 (J - 1)^2`; `+inf` when `J <= 0`.
pub fn neo_hookean_density(f: &DeformationGradient, mu: f64, lambda: f64) -> f64 {
    if !(f.j > 0.0) {
        return f64::INFINITY;
    }
    // Expanded in G = F - I so that small strains keep their relative precision.
    let g = f.f - Mat3::identity();
    let tr = g.trace();
    let i2 = 0.5 * (tr * tr - (g * g).trace());
    let det = g.determinant();
    let j1 = tr + i2 + det;
    if !(j1 > -1.0) {
        return f64::INFINITY;
    }
    let log_gap = j1 - j1.ln_1p();
    mu * (0.5 * g.norm_squared() - i2 - det + log_gap) + 0.5 * lambda * j1 * j1
}

/// First Piola-Kirchhoff stress split into the parts multiplying mu and lambda.
fn piola_parts(f: &DeformationGradient) -> (Mat3, Mat3) {
    let f_inv_t = f.f.try_inverse().unwrap_or_else(Mat3::zeros).transpose();
    let p_mu = f.f - f_inv_t;
    let p_lambda = (f.j - 1.0) * f.j * f_inv_t;
    (p_mu, p_lambda)
}

#[inline]
fn vec_index(k: usize, m: usize) -> usize {
    3 * k + m
}

/// `dP/dF` split into mu and lambda parts, indexed by `vec(F)` row-major.
fn tangent_parts(f: &DeformationGradient) -> (Mat9, Mat9) {
    let g = f.f.try_inverse().unwrap_or_else(Mat3::zeros).transpose();
    let j = f.j;
    let mut c_mu = Mat9::zeros();
    let mut c_lambda = Mat9::zeros();
    for k in 0..3 {
        for m in 0..3 {
            for l in 0..3 {
                for n in 0..3 {
                    let r = vec_index(k, m);
                    let c = vec_index(l, n);
                    let cross = g[(l, m)] * g[(k, n)];
                    let outer = g[(k, m)] * g[(l, n)];
                    let ident = if k == l && m == n { 1.0 } else { 0.0 };
                    c_mu[(r, c)] = ident + cross;
                    c_lambda[(r, c)] = (2.0 * j - 1.0) * j * outer + (j * j - j) * (-cross);
                }
            }
        }
    }
    (c_mu, c_lambda)
}

/// Maps the 21 stencil coordinates onto `vec(F)`.
fn shape_matrix(nb: &Neighborhood) -> Shape {
    let mut b = Shape::zeros();
    for (a, coeff) in nb.coeffs().iter().enumerate() {
        for k in 0..3 {
            for m in 0..3 {
                b[(vec_index(k, m), 3 * a + k)] = coeff[m];
            }
        }
    }
    b
}

/// Total elastic energy; `+inf` if any stencil is inverted.
pub fn elastic_energy(model: &ReferenceModel, mat: &MaterialField, y: &[Vec3]) -> Result<f64> {
    model.check_positions(y, "deformed positions")?;
    mat.validate(model.len())?;
    Ok(neumaier_sum(elastic_terms(model, mat, y)))
}

/// Per-stencil energies `V_i psi_i`, in stencil order.
pub fn elastic_terms(model: &ReferenceModel, mat: &MaterialField, y: &[Vec3]) -> Vec<f64> {
    model
        .neighborhoods()
        .par_iter()
        .map(|nb| {
            let f = DeformationGradient::new(nb.deformation_gradient(y));
            nb.volume * neo_hookean_density(&f, mat.mu(nb.center), mat.lambda(nb.center))
        })
        .collect()
}

/// Energy value, gradient and assembled (optionally projected) Hessian.
pub struct EnergyReport<'p> {
    pub value: f64,
    pub gradient: Vec<Vec3>,
    pub hessian: BlockSparse<'p>,
    /// Eigenvalue floor used when projecting; zero if no projection.
    pub epsilon: f64,
    /// Number of stencils whose Hessian was modified by projection.
    pub projected_blocks: usize,
}

struct StencilDerivatives {
    energy: f64,
    gradient: [Vec3; STENCIL],
    hessian: Local,
}

fn stencil_derivatives(nb: &Neighborhood, mat: &MaterialField, y: &[Vec3]) -> Result<StencilDerivatives> {
    let f = DeformationGradient::new(nb.deformation_gradient(y));
    if !(f.j > 0.0) {
        return Err(Error::Inverted {
            point: nb.center,
            det: f.j,
        });
    }
    let (mu, lambda) = (mat.mu(nb.center), mat.lambda(nb.center));
    let (p_mu, p_lambda) = piola_parts(&f);
    let p = mu * p_mu + lambda * p_lambda;
    let mut gradient = [Vec3::zeros(); STENCIL];
    for (a, coeff) in nb.coeffs().iter().enumerate() {
        gradient[a] = nb.volume * p * coeff;
    }
    let (c_mu, c_lambda) = tangent_parts(&f);
    let c = mu * c_mu + lambda * c_lambda;
    let b = shape_matrix(nb);
    let mut hessian = b.transpose() * c * b * nb.volume;
    hessian = 0.5 * (hessian + hessian.transpose());
    Ok(StencilDerivatives {
        energy: nb.volume * neo_hookean_density(&f, mu, lambda),
        gradient,
        hessian,
    })
}

/// Clamps eigenvalues below `eps` to `eps`. Returns whether anything changed.
pub fn project_block(h: &mut Local, eps: f64) -> bool {
    let eig = SymmetricEigen::new(*h);
    if eig.eigenvalues.iter().all(|&v| v >= eps) {
        return false;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(eps));
    let q = &eig.eigenvectors;
    let mut out = q * Local::from_diagonal(&clamped) * q.transpose();
    out = 0.5 * (out + out.transpose());
    *h = out;
    true
}

/// Gradient and Hessian of the elastic energy.
pub fn elastic_gradient_hessian<'m>(
    model: &'m ReferenceModel,
    mat: &MaterialField,
    y: &[Vec3],
    project: bool,
) -> Result<EnergyReport<'m>> {
    model.check_positions(y, "deformed positions")?;
    mat.validate(model.len())?;
    let mut locals = model
        .neighborhoods()
        .par_iter()
        .map(|nb| stencil_derivatives(nb, mat, y))
        .collect::<Result<Vec<_>>>()?;

    let mut epsilon = 0.0;
    let mut projected_blocks = 0;
    if project {
        let mean_trace = neumaier_sum(locals.iter().map(|l| l.hessian.trace())) / locals.len() as f64;
        epsilon = PROJECTION_FLOOR * mean_trace / LOCAL as f64;
        projected_blocks = locals
            .par_iter_mut()
            .map(|l| project_block(&mut l.hessian, epsilon) as usize)
            .sum();
    }

    let mut gradient = vec![Vec3::zeros(); model.len()];
    let mut hessian = BlockSparse::zeros(model.pattern());
    for (s, (nb, local)) in model.neighborhoods().iter().zip(&locals).enumerate() {
        for (a, &node) in nb.nodes().iter().enumerate() {
            gradient[node] += local.gradient[a];
        }
        hessian.add_stencil(s, local.hessian.as_slice());
    }
    Ok(EnergyReport {
        value: neumaier_sum(locals.iter().map(|l| l.energy)),
        gradient,
        hessian,
        epsilon,
        projected_blocks,
    })
}

/// Dense per-stencil Hessians, for inspection and tests.
pub fn stencil_hessians(
    model: &ReferenceModel,
    mat: &MaterialField,
    y: &[Vec3],
    project: bool,
) -> Result<(Vec<nalgebra::DMatrix<f64>>, f64)> {
    let mut locals = model
        .neighborhoods()
        .par_iter()
        .map(|nb| stencil_derivatives(nb, mat, y))
        .collect::<Result<Vec<_>>>()?;
    let mut epsilon = 0.0;
    if project {
        let mean_trace = neumaier_sum(locals.iter().map(|l| l.hessian.trace())) / locals.len() as f64;
        epsilon = PROJECTION_FLOOR * mean_trace / LOCAL as f64;
        for l in &mut locals {
            project_block(&mut l.hessian, epsilon);
        }
    }
    Ok((
        locals
            .into_iter()
            .map(|l| nalgebra::DMatrix::from_column_slice(LOCAL, LOCAL, l.hessian.as_slice()))
            .collect(),
        epsilon,
    ))
}

/// Derivatives of the energy with respect to the log-parameters, plus the
/// mixed operator `d(grad E)/d(theta)` at a fixed configuration.
pub struct MaterialPartials {
    /// `dE/d log mu_i`
    pub d_log_mu: Vec<f64>,
    /// `dE/d log lambda_i`
    pub d_log_lambda: Vec<f64>,
    pub mixed: MixedPartial,
}

/// Matrix-free `d(grad E)/d(theta)` with `theta = (log mu, log lambda)`.
pub struct MixedPartial {
    /// Per stencil: `V mu P_mu` and `V lambda P_lambda`.
    stresses: Vec<(Mat3, Mat3)>,
    nodes: Vec<[usize; STENCIL]>,
    coeffs: Vec<[Vec3; STENCIL]>,
    n: usize,
}

impl MixedPartial {
    /// `sum_i (d grad E / d log mu_i) dmu_i + (d grad E / d log lambda_i) dlambda_i`.
    pub fn apply(&self, d_log_mu: &[f64], d_log_lambda: &[f64]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); self.n];
        for (i, ((s_mu, s_lambda), nodes)) in self.stresses.iter().zip(&self.nodes).enumerate() {
            let p = s_mu * d_log_mu[i] + s_lambda * d_log_lambda[i];
            for (a, &node) in nodes.iter().enumerate() {
                out[node] += p * self.coeffs[i][a];
            }
        }
        out
    }

    /// `(d grad E / d theta)^T v`, split into mu and lambda parts.
    pub fn apply_transpose(&self, v: &[Vec3]) -> (Vec<f64>, Vec<f64>) {
        self.stresses
            .iter()
            .zip(&self.nodes)
            .zip(&self.coeffs)
            .map(|(((s_mu, s_lambda), nodes), coeffs)| {
                let g = stencil_linear_map(nodes, coeffs, v);
                (s_mu.dot(&g), s_lambda.dot(&g))
            })
            .unzip()
    }
}

/// `sum_a v_a coeffs_a^T`, the deformation-gradient map applied to `v`.
fn stencil_linear_map(nodes: &[usize; STENCIL], coeffs: &[Vec3; STENCIL], v: &[Vec3]) -> Mat3 {
    nodes
        .iter()
        .zip(coeffs)
        .fold(Mat3::zeros(), |acc, (&node, c)| acc + v[node] * c.transpose())
}

pub fn material_partials(
    model: &ReferenceModel,
    mat: &MaterialField,
    y: &[Vec3],
) -> Result<MaterialPartials> {
    model.check_positions(y, "deformed positions")?;
    mat.validate(model.len())?;
    let per: Vec<(f64, f64, (Mat3, Mat3))> = model
        .neighborhoods()
        .par_iter()
        .map(|nb| {
            let f = DeformationGradient::new(nb.deformation_gradient(y));
            if !(f.j > 0.0) {
                return Err(Error::Inverted {
                    point: nb.center,
                    det: f.j,
                });
            }
            let (mu, lambda) = (mat.mu(nb.center), mat.lambda(nb.center));
            let de_dmu = nb.volume * (0.5 * (f.ic - 3.0) - f.j.ln());
            let de_dlambda = nb.volume * 0.5 * (f.j - 1.0) * (f.j - 1.0);
            let (p_mu, p_lambda) = piola_parts(&f);
            Ok((
                mu * de_dmu,
                lambda * de_dlambda,
                (nb.volume * mu * p_mu, nb.volume * lambda * p_lambda),
            ))
        })
        .collect::<Result<_>>()?;
    let mut d_log_mu = Vec::with_capacity(per.len());
    let mut d_log_lambda = Vec::with_capacity(per.len());
    let mut stresses = Vec::with_capacity(per.len());
    for (a, b, s) in per {
        d_log_mu.push(a);
        d_log_lambda.push(b);
        stresses.push(s);
    }
    Ok(MaterialPartials {
        d_log_mu,
        d_log_lambda,
        mixed: MixedPartial {
            stresses,
            nodes: model.neighborhoods().iter().map(|nb| nb.nodes()).collect(),
            coeffs: model.neighborhoods().iter().map(|nb| *nb.coeffs()).collect(),
            n: model.len(),
        },
    })
}

/// Per-point `z^T (dH/d log mu_i) d` and `z^T (dH/d log lambda_i) d` for the
/// unprojected elastic Hessian.
pub fn hessian_material_contraction(
    model: &ReferenceModel,
    mat: &MaterialField,
    y: &[Vec3],
    z: &[Vec3],
    d: &[Vec3],
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_positions(y, "deformed positions")?;
    let per: Vec<(f64, f64)> = model
        .neighborhoods()
        .par_iter()
        .map(|nb| {
            let f = DeformationGradient::new(nb.deformation_gradient(y));
            if !(f.j > 0.0) {
                return Err(Error::Inverted {
                    point: nb.center,
                    det: f.j,
                });
            }
            let nodes = nb.nodes();
            let gz = stencil_linear_map(&nodes, nb.coeffs(), z);
            let gd = stencil_linear_map(&nodes, nb.coeffs(), d);
            let vz = SMatrix::<f64, 9, 1>::from_fn(|r, _| gz[(r / 3, r % 3)]);
            let vd = SMatrix::<f64, 9, 1>::from_fn(|r, _| gd[(r / 3, r % 3)]);
            let (c_mu, c_lambda) = tangent_parts(&f);
            let scale = nb.volume;
            Ok((
                scale * mat.mu(nb.center) * vz.dot(&(c_mu * vd)),
                scale * mat.lambda(nb.center) * vz.dot(&(c_lambda * vd)),
            ))
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().unzip())
}
