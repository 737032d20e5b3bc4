//! Synthetic objects and load sequences with known ground-truth material.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta};
use crate::elasticity::MaterialField;
use crate::error::{Error, Result};
use crate::forces::{assemble_frame, AirJet, FrameSources, Pin, SdfShape};
use crate::geometry::{build_reference, PointCloud, ReferenceModel};
use crate::solver::{solve_equilibrium, EquilibriumState, SolverConfig};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Full `nx x ny x nz` lattice.
    Bar,
    /// Same lattice, intended for thin `nz`.
    Slab,
    /// Two crossing arms: `dims = [arm length, arm width, thickness]`.
    Cross,
}

/// A point-set predicate on rest positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    All,
    Box { min: [f64; 3], max: [f64; 3] },
    /// `p[axis] >= threshold` (or `<` when `above` is false).
    HalfSpace { axis: usize, threshold: f64, above: bool },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Region {
    pub fn contains(&self, p: &Vec3) -> bool {
        match self {
            Region::All => true,
            Region::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Region::HalfSpace { axis, threshold, above } => (p[*axis] >= *threshold) == *above,
            Region::Sphere { center, radius } => (p - Vec3::from(*center)).norm() <= *radius,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Region::HalfSpace { axis, .. } = self {
            if *axis > 2 {
                return Err(Error::InvalidArgument(format!("region axis {axis} outside 0..=2")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRegion {
    pub region: Region,
    pub mu: f64,
    pub lambda: f64,
}

fn default_jitter() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub dims: [usize; 3],
    /// m
    pub spacing: f64,
    /// Later regions take precedence where they overlap.
    pub regions: Vec<MaterialRegion>,
    /// kg
    pub total_mass: f64,
    pub seed: u64,
    /// Uniform jitter half-width as a fraction of the spacing.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

/// Lattice indices of the shape and which of them lie on the boundary.
fn lattice(shape: Shape, dims: [usize; 3]) -> Result<(Vec<[usize; 3]>, Vec<bool>)> {
    let [a, b, c] = dims;
    let inside: Box<dyn Fn(i64, i64, i64) -> bool> = match shape {
        Shape::Bar | Shape::Slab => Box::new(move |i, j, k| {
            (0..a as i64).contains(&i) && (0..b as i64).contains(&j) && (0..c as i64).contains(&k)
        }),
        Shape::Cross => {
            if b == 0 || b > a {
                return Err(Error::InvalidArgument(format!(
                    "cross arm width {b} must lie in 1..={a}"
                )));
            }
            let lo = ((a - b) / 2) as i64;
            let hi = lo + b as i64;
            Box::new(move |i, j, k| {
                let band = |x: i64| (lo..hi).contains(&x);
                (0..a as i64).contains(&i)
                    && (0..a as i64).contains(&j)
                    && (0..c as i64).contains(&k)
                    && (band(i) || band(j))
            })
        }
    };
    let ny = if shape == Shape::Cross { a } else { b };
    let mut nodes = Vec::new();
    let mut surface = Vec::new();
    for k in 0..c as i64 {
        for j in 0..ny as i64 {
            for i in 0..a as i64 {
                if !inside(i, j, k) {
                    continue;
                }
                nodes.push([i as usize, j as usize, k as usize]);
                let boundary = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                    .iter()
                    .any(|&(di, dj, dk)| !inside(i + di, j + dj, k + dk));
                surface.push(boundary);
            }
        }
    }
    Ok((nodes, surface))
}

/// Jittered lattice object with region-wise constant ground-truth material.
pub fn synth_object(spec: &ObjectSpec) -> Result<(ReferenceModel, MaterialField)> {
    if !(spec.spacing > 0.0 && spec.spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!("spacing must be positive, got {}", spec.spacing)));
    }
    if spec.dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("dims must be positive, got {:?}", spec.dims)));
    }
    if !(0.0..0.5).contains(&spec.jitter) {
        return Err(Error::InvalidArgument(format!("jitter fraction {} outside [0, 0.5)", spec.jitter)));
    }
    if spec.regions.is_empty() {
        return Err(Error::InvalidArgument("at least one material region is required".into()));
    }
    for (r, reg) in spec.regions.iter().enumerate() {
        reg.region.validate()?;
        if !(reg.mu > 0.0 && reg.lambda > 0.0 && reg.mu.is_finite() && reg.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("region {r}: Lamé parameters must be positive")));
        }
    }
    let (nodes, surface) = lattice(spec.shape, spec.dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let amp = spec.jitter * spec.spacing;
    let points: Vec<Vec3> = nodes
        .iter()
        .map(|ijk| {
            let base = Vec3::new(ijk[0] as f64, ijk[1] as f64, ijk[2] as f64) * spec.spacing;
            if amp > 0.0 {
                base + Vec3::from_fn(|_, _| rng.random_range(-amp..=amp))
            } else {
                base
            }
        })
        .collect();

    let mut owner: Vec<Option<usize>> = vec![None; points.len()];
    let mut overlaps = 0usize;
    for (r, reg) in spec.regions.iter().enumerate() {
        let mut count = 0;
        for (o, p) in owner.iter_mut().zip(&points) {
            if reg.region.contains(p) {
                if o.is_some() {
                    overlaps += 1;
                }
                *o = Some(r);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument(format!("material region {r} contains no points")));
        }
    }
    if overlaps > 0 {
        log::info!("{overlaps} point assignments overridden by later overlapping regions");
    }
    if let Some(i) = owner.iter().position(|o| o.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "point {i} is not covered by any material region"
        )));
    }
    let owner: Vec<usize> = owner.into_iter().map(|o| o.expect("checked")).collect();
    let mus: Vec<f64> = owner.iter().map(|&r| spec.regions[r].mu).collect();
    let lambdas: Vec<f64> = owner.iter().map(|&r| spec.regions[r].lambda).collect();
    let model = build_reference(PointCloud::new(points)?, spec.total_mass, surface)?;
    Ok((model, MaterialField::from_lame(&mus, &lambdas)?))
}

/// A load ramped linearly over the frame window `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceEvent {
    Jet {
        frames: [usize; 2],
        nozzle: [f64; 3],
        #[serde(default)]
        nozzle_end: Option<[f64; 3]>,
        direction: [f64; 3],
        #[serde(default)]
        direction_end: Option<[f64; 3]>,
        strength: f64,
        #[serde(default)]
        strength_end: Option<f64>,
        half_angle: f64,
    },
    /// Total force split evenly over the points of `region`.
    Load {
        frames: [usize; 2],
        region: Region,
        force: [f64; 3],
        #[serde(default)]
        force_end: Option<[f64; 3]>,
    },
}

impl ForceEvent {
    fn window(&self) -> [usize; 2] {
        match self {
            ForceEvent::Jet { frames, .. } | ForceEvent::Load { frames, .. } => *frames,
        }
    }

    /// Interpolation parameter at frame `t`, if active.
    fn phase(&self, t: usize) -> Option<f64> {
        let [start, end] = self.window();
        if t < start || t >= end {
            return None;
        }
        let span = end - start;
        Some(if span > 1 { (t - start) as f64 / (span - 1) as f64 } else { 0.0 })
    }
}

fn lerp3(a: [f64; 3], b: Option<[f64; 3]>, s: f64) -> Vec3 {
    let a = Vec3::from(a);
    b.map_or(a, |b| a + (Vec3::from(b) - a) * s)
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceScript {
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    /// Points inside any of these regions are held at their rest positions.
    #[serde(default)]
    pub pins: Vec<Region>,
    #[serde(default)]
    pub events: Vec<ForceEvent>,
    #[serde(default)]
    pub sdfs: Vec<SdfShape>,
}

impl ForceScript {
    pub fn validate(&self) -> Result<()> {
        for r in &self.pins {
            r.validate()?;
        }
        for (k, e) in self.events.iter().enumerate() {
            let [s, t] = e.window();
            if s >= t {
                return Err(Error::InvalidArgument(format!("event {k}: empty frame window [{s}, {t})")));
            }
            if let ForceEvent::Load { region, .. } = e {
                region.validate()?;
            }
        }
        Ok(())
    }

    /// Loads active at frame `t`.
    pub fn sources(&self, model: &ReferenceModel, t: usize) -> Result<FrameSources> {
        let rest = model.rest_positions();
        let pins = rest
            .iter()
            .enumerate()
            .filter(|(_, p)| self.pins.iter().any(|r| r.contains(p)))
            .map(|(id, p)| Pin {
                id,
                position: (*p).into(),
            })
            .collect();
        let mut jets = Vec::new();
        let mut point_loads = Vec::new();
        for (k, e) in self.events.iter().enumerate() {
            let Some(s) = e.phase(t) else { continue };
            match e {
                ForceEvent::Jet {
                    nozzle,
                    nozzle_end,
                    direction,
                    direction_end,
                    strength,
                    strength_end,
                    half_angle,
                    ..
                } => {
                    let strength = strength_end.map_or(*strength, |b| strength + (b - strength) * s);
                    jets.push(AirJet::new(
                        lerp3(*nozzle, *nozzle_end, s),
                        lerp3(*direction, *direction_end, s),
                        strength,
                        *half_angle,
                    ));
                }
                ForceEvent::Load {
                    region,
                    force,
                    force_end,
                    ..
                } => {
                    let ids: Vec<usize> = (0..rest.len()).filter(|&i| region.contains(&rest[i])).collect();
                    if ids.is_empty() {
                        return Err(Error::InvalidArgument(format!("load event {k}: region contains no points")));
                    }
                    let per = lerp3(*force, *force_end, s) / ids.len() as f64;
                    point_loads.extend(ids.into_iter().map(|i| (i, per)));
                }
            }
        }
        Ok(FrameSources {
            gravity: Vec3::from(self.gravity),
            jets,
            point_loads,
            pins,
            sdfs: self.sdfs.clone(),
            ..FrameSources::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub n_frames: usize,
    /// m
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default)]
    pub name: String,
}

fn default_frame_rate() -> f64 {
    40.0
}

/// Forward-simulates the script under the ground truth (warm-started, with a
/// gradient tolerance ten times tighter than `config`) and adds isotropic
/// Gaussian noise to the equilibria.
pub fn synth_sequence(
    model: &ReferenceModel,
    truth: &MaterialField,
    script: &ForceScript,
    spec: &SequenceSpec,
    config: &SolverConfig,
) -> Result<(Dataset, Vec<EquilibriumState>)> {
    script.validate()?;
    if spec.n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be positive".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be non-negative, got {}", spec.noise_sigma)));
    }
    let tight = SolverConfig {
        grad_tol: config.grad_tol / 10.0,
        ..config.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut states: Vec<EquilibriumState> = Vec::with_capacity(spec.n_frames);
    let mut observations = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let warm = states.last().map_or(model.rest_positions(), |s| s.y.as_slice());
        let frame = assemble_frame(model, &script.sources(model, t)?, warm)?;
        let state = solve_equilibrium(model, truth, &frame, warm, &tight)?;
        if !state.converged {
            return Err(Error::Solver(format!(
                "ground-truth frame {t} did not converge: {}",
                state.message.as_deref().unwrap_or("unknown reason")
            )));
        }
        let obs: Vec<Vec3> = if spec.noise_sigma > 0.0 {
            state
                .y
                .iter()
                .map(|p| p + Vec3::from_fn(|_, _| noise.sample(&mut rng)))
                .collect()
        } else {
            state.y.clone()
        };
        observations.push(PointCloud::new(obs)?);
        frames.push(frame);
        states.push(state);
    }
    let data = Dataset {
        rest: model.rest().clone(),
        total_mass: model.total_mass(),
        surface_mask: model.surface_mask().to_vec(),
        frames,
        observations,
        meta: DatasetMeta {
            name: spec.name.clone(),
            frame_rate: spec.frame_rate,
            noise_sigma: spec.noise_sigma,
        },
    };
    Ok((data, states))
}
