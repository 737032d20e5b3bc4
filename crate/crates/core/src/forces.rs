//! External loading: gravity, point loads, a synthetic air-jet cone, soft
//! attraction targets and signed-distance contact penalties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ReferenceModel;
use crate::numeric::neumaier_sum;
use crate::{Mat3, Vec3};

/// Distance below which the jet falloff is clamped.
pub const JET_MIN_RADIUS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SdfKind {
    Sphere { center: [f64; 3], radius: f64 },
    Plane { point: [f64; 3], normal: [f64; 3] },
    Box { center: [f64; 3], half_extents: [f64; 3] },
}

/// Implicit obstacle with its contact penalty stiffness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfShape {
    #[serde(flatten)]
    pub kind: SdfKind,
    pub penalty: f64,
}

impl SdfShape {
    pub fn sphere(center: Vec3, radius: f64, penalty: f64) -> Self {
        Self {
            kind: SdfKind::Sphere {
                center: center.into(),
                radius,
            },
            penalty,
        }
    }

    pub fn plane(point: Vec3, normal: Vec3, penalty: f64) -> Self {
        Self {
            kind: SdfKind::Plane {
                point: point.into(),
                normal: normal.into(),
            },
            penalty,
        }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3, penalty: f64) -> Self {
        Self {
            kind: SdfKind::Box {
                center: center.into(),
                half_extents: half_extents.into(),
            },
            penalty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty > 0.0) || !self.penalty.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "contact penalty must be positive, got {}",
                self.penalty
            )));
        }
        match self.kind {
            SdfKind::Sphere { radius, .. } if !(radius > 0.0) => Err(Error::InvalidArgument(
                format!("sphere radius must be positive, got {radius}"),
            )),
            SdfKind::Plane { normal, .. } if (Vec3::from(normal).norm() - 1.0).abs() > 1e-9 => {
                Err(Error::InvalidArgument("plane normal must be unit length".into()))
            }
            SdfKind::Box { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => Err(
                Error::InvalidArgument("box half extents must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Signed distance, negative inside.
    pub fn eval(&self, p: &Vec3) -> f64 {
        sdf_eval(self, p)
    }

    /// Spatial gradient of the signed distance.
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        match self.kind {
            SdfKind::Sphere { center, .. } => {
                let v = p - Vec3::from(center);
                let r = v.norm();
                if r > 0.0 {
                    v / r
                } else {
                    Vec3::x()
                }
            }
            SdfKind::Plane { normal, .. } => Vec3::from(normal),
            SdfKind::Box {
                center,
                half_extents,
            } => {
                let v = p - Vec3::from(center);
                let q = v.abs() - Vec3::from(half_extents);
                let sign = v.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
                let outside = q.map(|c| c.max(0.0));
                let len = outside.norm();
                if len > 0.0 {
                    (outside / len).component_mul(&sign)
                } else {
                    let axis = q.imax();
                    let mut g = Vec3::zeros();
                    g[axis] = sign[axis];
                    g
                }
            }
        }
    }

    /// Spatial Hessian of the signed distance (zero where it is piecewise linear).
    pub fn hessian(&self, p: &Vec3) -> Mat3 {
        match self.kind {
            SdfKind::Sphere { center, .. } => {
                let v = p - Vec3::from(center);
                let r = v.norm();
                if r > 0.0 {
                    let n = v / r;
                    (Mat3::identity() - n * n.transpose()) / r
                } else {
                    Mat3::zeros()
                }
            }
            SdfKind::Plane { .. } => Mat3::zeros(),
            SdfKind::Box {
                center,
                half_extents,
            } => {
                let v = p - Vec3::from(center);
                let q = v.abs() - Vec3::from(half_extents);
                let outside = q.map(|c| c.max(0.0));
                let len = outside.norm();
                if len > 0.0 {
                    let mut proj = Mat3::zeros();
                    for a in 0..3 {
                        if q[a] > 0.0 {
                            proj[(a, a)] = 1.0;
                        }
                    }
                    let sign = v.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
                    let n = (outside / len).component_mul(&sign);
                    (proj - n * n.transpose()) / len
                } else {
                    Mat3::zeros()
                }
            }
        }
    }
}

/// Signed distance from `p` to `shape`.
pub fn sdf_eval(shape: &SdfShape, p: &Vec3) -> f64 {
    match shape.kind {
        SdfKind::Sphere { center, radius } => (p - Vec3::from(center)).norm() - radius,
        SdfKind::Plane { point, normal } => (p - Vec3::from(point)).dot(&Vec3::from(normal)),
        SdfKind::Box {
            center,
            half_extents,
        } => {
            let q = (p - Vec3::from(center)).abs() - Vec3::from(half_extents);
            q.map(|c| c.max(0.0)).norm() + q.max().min(0.0)
        }
    }
}

/// Contact energy `sum_i V_i alpha_c d(y_i)^2` over penetrating points and its gradient.
pub fn contact_energy(shape: &SdfShape, model: &ReferenceModel, y: &[Vec3]) -> (f64, Vec<Vec3>) {
    let mut grad = vec![Vec3::zeros(); y.len()];
    let terms = model
        .neighborhoods()
        .iter()
        .map(|nb| {
            let p = y[nb.center];
            let d = shape.eval(&p);
            if d < 0.0 {
                grad[nb.center] = 2.0 * shape.penalty * nb.volume * d * shape.gradient(&p);
                nb.volume * shape.penalty * d * d
            } else {
                0.0
            }
        })
        .collect::<Vec<_>>();
    (neumaier_sum(terms), grad)
}

/// Per-point contact Hessian blocks; `gauss_newton` drops the curvature term.
pub fn contact_hessian(
    shape: &SdfShape,
    model: &ReferenceModel,
    y: &[Vec3],
    gauss_newton: bool,
) -> Vec<(usize, Mat3)> {
    model
        .neighborhoods()
        .iter()
        .filter_map(|nb| {
            let p = y[nb.center];
            let d = shape.eval(&p);
            if d >= 0.0 {
                return None;
            }
            let g = shape.gradient(&p);
            let mut h = g * g.transpose();
            if !gauss_newton {
                h += d * shape.hessian(&p);
            }
            Some((nb.center, 2.0 * shape.penalty * nb.volume * h))
        })
        .collect()
}

/// Cone-shaped air stream acting on surface points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirJet {
    pub nozzle: [f64; 3],
    pub direction: [f64; 3],
    /// Force magnitude at unit distance (N).
    pub strength: f64,
    pub half_angle: f64,
    #[serde(default = "default_falloff")]
    pub falloff_power: f64,
}

fn default_falloff() -> f64 {
    2.0
}

impl AirJet {
    pub fn new(nozzle: Vec3, direction: Vec3, strength: f64, half_angle: f64) -> Self {
        Self {
            nozzle: nozzle.into(),
            direction: direction.normalize().into(),
            strength,
            half_angle,
            falloff_power: default_falloff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dir = Vec3::from(self.direction);
        if (dir.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("jet direction must be unit length".into()));
        }
        if !(self.half_angle > 0.0 && self.half_angle < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!(
                "jet half angle {} outside (0, pi/2)",
                self.half_angle
            )));
        }
        if !(self.strength >= 0.0) || !(self.falloff_power >= 0.0) {
            return Err(Error::InvalidArgument(
                "jet strength and falloff must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Force on a point at `p`; zero behind the nozzle or outside the cone.
    pub fn force_at(&self, p: &Vec3) -> Vec3 {
        let dir = Vec3::from(self.direction);
        let v = p - Vec3::from(self.nozzle);
        let along = v.dot(&dir);
        if along <= 0.0 {
            return Vec3::zeros();
        }
        let r = v.norm();
        if (along / r).min(1.0).acos() > self.half_angle {
            return Vec3::zeros();
        }
        self.strength * dir / r.max(JET_MIN_RADIUS).powf(self.falloff_power)
    }
}

/// Jet forces on the surface points of `model` at positions `y`.
pub fn air_jet_forces(jet: &AirJet, model: &ReferenceModel, y: &[Vec3]) -> Vec<Vec3> {
    y.iter()
        .zip(model.surface_mask())
        .map(|(p, &surface)| if surface { jet.force_at(p) } else { Vec3::zeros() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    pub id: usize,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttractionTarget {
    pub id: usize,
    pub target: [f64; 3],
}

/// Loads and constraints for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceFrame {
    /// External force per point (N), including gravity.
    pub forces: Vec<Vec3>,
    /// Hard position constraints.
    pub pins: Vec<Pin>,
    pub attraction: Vec<AttractionTarget>,
    pub attraction_penalty: f64,
    pub sdfs: Vec<SdfShape>,
    /// Jets whose contribution is already contained in `forces`.
    pub jets: Vec<AirJet>,
}

impl ForceFrame {
    /// A frame with no loads or constraints.
    pub fn empty(n: usize) -> Self {
        Self {
            forces: vec![Vec3::zeros(); n],
            pins: Vec::new(),
            attraction: Vec::new(),
            attraction_penalty: 0.0,
            sdfs: Vec::new(),
            jets: Vec::new(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.forces.len() != n {
            return Err(Error::size("frame forces", n, self.forces.len()));
        }
        if let Some(i) = self.forces.iter().position(|f| !f.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite force at point {i}")));
        }
        let check = |what: &str, id: usize| {
            if id >= n {
                Err(Error::InvalidIndex {
                    what: what.into(),
                    index: id,
                    len: n,
                })
            } else {
                Ok(())
            }
        };
        let mut pinned = vec![false; n];
        for pin in &self.pins {
            check("pin", pin.id)?;
            pinned[pin.id] = true;
        }
        for a in &self.attraction {
            check("attraction", a.id)?;
            if pinned[a.id] {
                return Err(Error::InvalidArgument(format!(
                    "point {} is both pinned and attracted",
                    a.id
                )));
            }
        }
        if !self.attraction.is_empty() && !(self.attraction_penalty > 0.0) {
            return Err(Error::InvalidArgument(
                "attraction targets need a positive penalty".into(),
            ));
        }
        for s in &self.sdfs {
            s.validate()?;
        }
        Ok(())
    }

    /// Sum of force magnitudes.
    pub fn force_scale(&self) -> f64 {
        self.forces.iter().map(|f| f.norm()).sum()
    }
}

/// Inputs to [`assemble_frame`].
#[derive(Debug, Clone, Default)]
pub struct FrameSources {
    pub gravity: Vec3,
    pub jets: Vec<AirJet>,
    pub point_loads: Vec<(usize, Vec3)>,
    pub pins: Vec<Pin>,
    pub attraction: Vec<AttractionTarget>,
    pub attraction_penalty: f64,
    pub sdfs: Vec<SdfShape>,
}

/// Superposes gravity, jets (evaluated at `y`) and point loads into one frame.
pub fn assemble_frame(model: &ReferenceModel, sources: &FrameSources, y: &[Vec3]) -> Result<ForceFrame> {
    let n = model.len();
    model.check_positions(y, "jet evaluation positions")?;
    let mut forces: Vec<Vec3> = model
        .point_masses()
        .iter()
        .map(|m| *m * sources.gravity)
        .collect();
    for jet in &sources.jets {
        jet.validate()?;
        for (f, j) in forces.iter_mut().zip(air_jet_forces(jet, model, y)) {
            *f += j;
        }
    }
    for &(id, f) in &sources.point_loads {
        if id >= n {
            return Err(Error::InvalidIndex {
                what: "point load".into(),
                index: id,
                len: n,
            });
        }
        forces[id] += f;
    }
    let frame = ForceFrame {
        forces,
        pins: sources.pins.clone(),
        attraction: sources.attraction.clone(),
        attraction_penalty: sources.attraction_penalty,
        sdfs: sources.sdfs.clone(),
        jets: sources.jets.clone(),
    };
    frame.validate(n)?;
    Ok(frame)
}

/// `1e4 * mean(mu) * mean(V) / diameter^2`.
pub fn default_attraction_penalty(model: &ReferenceModel, mean_mu: f64) -> f64 {
    let d = model.diameter();
    1e4 * mean_mu * model.mean_volume() / (d * d)
}

/// `1e3 * mean(mu) / s^2` with `s` the mean nearest-neighbor spacing, so a
/// penetrating point is resisted about a thousand times more stiffly than
/// its stencil.
pub fn default_contact_penalty(model: &ReferenceModel, mean_mu: f64) -> f64 {
    let s = model.mean_spacing();
    1e3 * mean_mu / (s * s)
}
