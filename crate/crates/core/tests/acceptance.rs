//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --release --test acceptance -- 4 9`.

mod common;

use std::path::Path;
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::*;
use pointsim::elasticity::{elastic_energy, elastic_gradient_hessian, stencil_hessians};
use pointsim::fit::{
    fit_material, fit_material_homogeneous, frame_loss, loss_gradient_ift, loss_gradient_truncated, FitConfig,
};
use pointsim::forces::{contact_energy, default_contact_penalty, Pin, SdfShape};
use pointsim::harness::{evaluate, synth_object, synth_sequence, MaterialRegion, ObjectSpec, Region, Shape};
use pointsim::solver::{solve_equilibrium, solve_equilibrium_traced, NewtonTrace};
use pointsim::warp::{GridSpec, WarpField, WarpGrid, DEFAULT_K};
use pointsim::{build_reference, ForceFrame, MaterialField, PointCloud, ReferenceModel, SolverConfig, Vec3};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn norm(v: &[Vec3]) -> f64 {
    v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn flat_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (flat_norm(a) * flat_norm(b))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_vec(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::from_fn(|_, _| gaussian(rng))
}

/// 200 uniform points in a 10 x 5 x 5 cm box with log-uniform Lamé fields.
fn random_object(rng: &mut ChaCha8Rng) -> (ReferenceModel, MaterialField) {
    let pts: Vec<Vec3> = (0..200)
        .map(|_| Vec3::new(0.1 * rng.random::<f64>(), 0.05 * rng.random::<f64>(), 0.05 * rng.random::<f64>()))
        .collect();
    let model = build_reference(PointCloud::new(pts).unwrap(), 0.1, vec![false; 200]).unwrap();
    let mus: Vec<f64> = (0..200).map(|_| 10f64.powf(rng.random_range(3.0..5.0))).collect();
    let lambdas: Vec<f64> = (0..200).map(|_| 10f64.powf(rng.random_range(3.0..5.0))).collect();
    (model, MaterialField::from_lame(&mus, &lambdas).unwrap())
}

/// Random affine map plus per-point jitter, resampled until no stencil inverts.
fn random_configuration(rng: &mut ChaCha8Rng, model: &ReferenceModel, mat: &MaterialField, strain: f64) -> Vec<Vec3> {
    let jitter = 0.05 * model.mean_spacing();
    loop {
        let a = nalgebra::Matrix3::identity() + nalgebra::Matrix3::from_fn(|_, _| strain * gaussian(rng));
        let c = random_vec(rng) * 0.01;
        let y: Vec<Vec3> = model
            .rest_positions()
            .iter()
            .map(|x| a * x + c + random_vec(rng) * jitter)
            .collect();
        if elastic_energy(model, mat, &y).unwrap().is_finite() {
            return y;
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (model, mat) = random_object(&mut rng);
    let h = 1e-7;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let y = random_configuration(&mut rng, &model, &mat, 0.1);
        let analytic = elastic_gradient_hessian(&model, &mat, &y, false).unwrap().gradient;
        let mut fd = vec![Vec3::zeros(); y.len()];
        for i in 0..y.len() {
            for a in 0..3 {
                let mut p = y.clone();
                let mut m = y.clone();
                p[i][a] += h;
                m[i][a] -= h;
                fd[i][a] = (elastic_energy(&model, &mat, &p).unwrap() - elastic_energy(&model, &mat, &m).unwrap())
                    / (2.0 * h);
            }
        }
        let diff: Vec<Vec3> = analytic.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&analytic));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-5 && secs < 30.0,
        format!("gradient vs central differences, 20 configurations of 200 points: max rel err {worst:.2e} (< 1e-5), {secs:.1} s (< 30 s)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (model, mat) = random_object(&mut rng);
    let y = random_configuration(&mut rng, &model, &mat, 0.1);
    let e = elastic_energy(&model, &mat, &y).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let q = Vector4::from_fn(|_, _| gaussian(&mut rng));
        let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q));
        let c = random_vec(&mut rng);
        let moved: Vec<Vec3> = y.iter().map(|p| r * p + c).collect();
        let em = elastic_energy(&model, &mat, &moved).unwrap();
        worst = worst.max((em - e).abs() / (1.0 + e.abs()));
    }
    let rest = model.rest_positions();
    let e0 = elastic_energy(&model, &mat, rest).unwrap();
    let g0 = norm(&elastic_gradient_hessian(&model, &mat, rest, false).unwrap().gradient);
    outcome(
        worst <= 1e-9 && e0.abs() <= 1e-12 && g0 <= 1e-12,
        format!("10 rigid motions: max |dE|/(1+|E|) {worst:.2e} (<= 1e-9); rest energy {e0:.1e}, rest gradient {g0:.1e} (<= 1e-12)"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (model, mat) = random_object(&mut rng);
    let mut min_margin = f64::INFINITY;
    let mut indefinite = 0;
    let mut worst_sym: f64 = 0.0;
    let mut worst_hv: f64 = 0.0;
    for _ in 0..5 {
        let y = random_configuration(&mut rng, &model, &mat, 0.3);
        let (raw, _) = stencil_hessians(&model, &mat, &y, false).unwrap();
        let (projected, eps) = stencil_hessians(&model, &mat, &y, true).unwrap();
        for (r, p) in raw.iter().zip(&projected) {
            if r.clone().symmetric_eigenvalues().min() < -eps {
                indefinite += 1;
            }
            let lo = p.clone().symmetric_eigenvalues().min();
            // Rounding of the eigen-decomposition used for the check itself.
            let slack = 64.0 * f64::EPSILON * p.norm();
            min_margin = min_margin.min((lo - eps + slack) / eps);
        }

        let report = elastic_gradient_hessian(&model, &mat, &y, false).unwrap();
        for _ in 0..10 {
            let u: Vec<Vec3> = (0..y.len()).map(|_| random_vec(&mut rng)).collect();
            let v: Vec<Vec3> = (0..y.len()).map(|_| random_vec(&mut rng)).collect();
            let dot = |a: &[Vec3], b: &[Vec3]| a.iter().zip(b).map(|(x, y)| x.dot(y)).sum::<f64>();
            let uhv = dot(&u, &report.hessian.mul_vec(&v));
            let vhu = dot(&v, &report.hessian.mul_vec(&u));
            worst_sym = worst_sym.max((uhv - vhu).abs() / uhv.abs().max(vhu.abs()));
        }
        // Hessian-vector product against differences of the analytic gradient.
        let v: Vec<Vec3> = (0..y.len()).map(|_| random_vec(&mut rng)).collect();
        let h = 1e-6 * model.mean_spacing() / (norm(&v) / (y.len() as f64).sqrt());
        let shift = |s: f64| -> Vec<Vec3> { y.iter().zip(&v).map(|(p, d)| p + s * d).collect() };
        let gp = elastic_gradient_hessian(&model, &mat, &shift(h), false).unwrap().gradient;
        let gm = elastic_gradient_hessian(&model, &mat, &shift(-h), false).unwrap().gradient;
        let fd: Vec<Vec3> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let hv = report.hessian.mul_vec(&v);
        let diff: Vec<Vec3> = hv.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst_hv = worst_hv.max(norm(&diff) / norm(&hv));
    }
    outcome(
        min_margin >= 0.0 && indefinite > 0 && worst_sym <= 1e-9,
        format!(
            "{indefinite} indefinite stencils projected, min eigenvalue >= eps: {}; probe asymmetry {worst_sym:.1e} (<= 1e-9); Hv vs gradient differences {worst_hv:.1e}",
            min_margin >= 0.0
        ),
    )
}

fn criterion_4() -> Outcome {
    let spec = ObjectSpec {
        shape: Shape::Bar,
        dims: [20, 5, 5],
        spacing: 0.01,
        regions: vec![MaterialRegion {
            region: Region::All,
            mu: 1e4,
            lambda: 1e4,
        }],
        total_mass: 0.1,
        seed: 4,
        jitter: 0.05,
    };
    let (model, mat) = synth_object(&spec).unwrap();
    let mut frame = ForceFrame::empty(model.len());
    for (i, p) in model.rest_positions().iter().enumerate() {
        if p.x < 0.005 {
            frame.pins.push(Pin {
                id: i,
                position: (*p).into(),
            });
        }
        frame.forces[i] = Vec3::new(0.0, 0.0, -9.81 * model.point_masses()[i]);
    }
    let config = SolverConfig::default();
    let tol = config.tolerance(&frame);
    let state = solve_equilibrium(&model, &mat, &frame, model.rest_positions(), &config).unwrap();
    let monotone = state.energy_trace.windows(2).all(|w| w[1] <= w[0]);
    let sag = state
        .y
        .iter()
        .zip(model.rest_positions())
        .map(|(a, b)| b.z - a.z)
        .fold(0.0, f64::max);
    let again = solve_equilibrium(&model, &mat, &frame, &state.y, &config).unwrap();
    outcome(
        model.len() == 500
            && monotone
            && state.converged
            && state.grad_norm <= tol
            && state.iters <= 50
            && again.converged
            && again.iters <= 1,
        format!(
            "{} points, tip sag {:.1} mm: {} Newton iterations, energy monotone {monotone}, grad {:.2e} <= tol {tol:.2e}; warm repeat {} iterations",
            model.len(),
            sag * 1e3,
            state.iters,
            state.grad_norm,
            again.iters
        ),
    )
}

/// Random pinned bar of at most 200 points with a random load.
fn sensitivity_instance(rng: &mut ChaCha8Rng, k: u64) -> (ReferenceModel, ForceFrame, MaterialField, PointCloud) {
    let nx = rng.random_range(6..13);
    let spec = ObjectSpec {
        shape: Shape::Bar,
        dims: [nx, 4, 4],
        spacing: 0.02,
        regions: vec![MaterialRegion {
            region: Region::All,
            mu: 1e4,
            lambda: 1e4,
        }],
        total_mass: 0.05,
        seed: 100 + k,
        jitter: 0.1,
    };
    let (model, _) = synth_object(&spec).unwrap();
    let n = model.len();
    let mus: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(3.3..4.3))).collect();
    let lambdas: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(3.3..4.3))).collect();
    let mat = MaterialField::from_lame(&mus, &lambdas).unwrap();
    let tip = Vec3::new(0.0, gaussian(rng), gaussian(rng)) * 0.02;
    let mut frame = ForceFrame::empty(n);
    for (i, p) in model.rest_positions().iter().enumerate() {
        if p.x < 0.01 {
            frame.pins.push(Pin {
                id: i,
                position: (*p).into(),
            });
        } else {
            frame.forces[i] = Vec3::new(0.0, 0.0, -9.81 * model.point_masses()[i]) + tip / n as f64;
        }
    }
    let mut truth = mat.clone();
    for v in truth.log_mu.iter_mut().chain(truth.log_lambda.iter_mut()) {
        *v += 0.3 * gaussian(rng);
    }
    let config = SolverConfig {
        grad_tol: 1e-8,
        ..SolverConfig::default()
    };
    let target = solve_equilibrium(&model, &truth, &frame, model.rest_positions(), &config).unwrap();
    let observed = PointCloud::new(target.y.iter().map(|p| p + random_vec(rng) * 1e-5).collect()).unwrap();
    (model, frame, mat, observed)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = SolverConfig {
        grad_tol: 1e-8,
        ..SolverConfig::default()
    };
    let fd_config = SolverConfig {
        grad_tol: 1e-10,
        max_newton_iters: 100,
        ..SolverConfig::default()
    };
    let mut worst_cos: f64 = 1.0;
    let mut worst_fd: f64 = 0.0;
    let mut largest = 0;
    for k in 0..10 {
        let (model, frame, mat, observed) = sensitivity_instance(&mut rng, k);
        largest = largest.max(model.len());
        let mut trace = NewtonTrace::new(FitConfig::default().trace_depth);
        let state =
            solve_equilibrium_traced(&model, &mat, &frame, model.rest_positions(), &config, &mut trace).unwrap();
        let truncated = loss_gradient_truncated(&model, &mat, &observed, &state, &trace).unwrap().flat();
        let ift = loss_gradient_ift(&model, &mat, &frame, &observed, &state).unwrap().flat();
        worst_cos = worst_cos.min(cosine(&truncated, &ift));

        let n = model.len();
        let h = 1e-5;
        let loss = |m: &MaterialField| {
            let s = solve_equilibrium(&model, m, &frame, &state.y, &fd_config).unwrap();
            assert!(s.converged, "{:?}", s.message);
            frame_loss(&model, &observed, &s.y).unwrap()
        };
        let fd: Vec<f64> = (0..2 * n)
            .map(|j| {
                let mut p = mat.clone();
                let mut m = mat.clone();
                let (pv, mv) = if j < n {
                    (&mut p.log_mu[j], &mut m.log_mu[j])
                } else {
                    (&mut p.log_lambda[j - n], &mut m.log_lambda[j - n])
                };
                *pv += h;
                *mv -= h;
                (loss(&p) - loss(&m)) / (2.0 * h)
            })
            .collect();
        let err: Vec<f64> = ift.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst_fd = worst_fd.max(flat_norm(&err) / flat_norm(&fd));
    }
    outcome(
        worst_cos > 0.9 && worst_fd < 0.05,
        format!(
            "10 instances (<= {largest} points): min cosine(truncated, IFT) {worst_cos:.4} (> 0.9); max |IFT - FD|/|FD| {:.2e}% (< 5%)",
            worst_fd * 100.0
        ),
    )
}

struct Recovery {
    model: ReferenceModel,
    data: pointsim::harness::Dataset,
    material: MaterialField,
}

fn criterion_6() -> (Outcome, Option<Recovery>) {
    let start = Instant::now();
    let (model, truth) = synth_object(&two_region_bar(7)).unwrap();
    let (data, _) =
        synth_sequence(&model, &truth, &bar_script(), &bar_sequence(7, 50), &SolverConfig::default()).unwrap();
    let config = FitConfig {
        frames: (0..30).collect(),
        max_epochs: 120,
        ..FitConfig::default()
    };
    let het = match fit_material(&model, &data.frames, &data.observations, &config) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("heterogeneous fit failed: {e}")), None),
    };
    let hom = match fit_material_homogeneous(&model, &data.frames, &data.observations, &config) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("homogeneous fit failed: {e}")), None),
    };
    let secs = start.elapsed().as_secs_f64();
    let mus = het.material.mus();
    let region = |stiff: bool| -> f64 {
        median(
            model
                .rest_positions()
                .iter()
                .zip(&mus)
                .filter(|(p, _)| is_stiff(p) == stiff)
                .map(|(_, m)| *m)
                .collect(),
        )
    };
    let (soft, stiff) = (region(false), region(true));
    let within = |got: f64, want: f64| (0.5..=2.0).contains(&(got / want));
    let het_loss = het.loss_history[het.best_epoch];
    let hom_loss = hom.loss_history[hom.best_epoch];
    let het_final = *het.loss_history.last().unwrap();
    let hom_final = *hom.loss_history.last().unwrap();
    let pass = within(soft, SOFT_MU)
        && within(stiff, STIFF_MU)
        && stiff > soft
        && het_loss < hom_loss
        && het_final < hom_final
        && secs < 900.0;
    let detail = format!(
        "median mu soft {soft:.3e} (truth {SOFT_MU:.0e}), stiff {stiff:.3e} (truth {STIFF_MU:.0e}); best loss {het_loss:.3e} vs homogeneous {hom_loss:.3e} (final {het_final:.3e} vs {hom_final:.3e}); {} + {} epochs in {secs:.0} s (< 900 s)",
        het.loss_history.len(),
        hom.loss_history.len()
    );
    (
        outcome(pass, detail),
        Some(Recovery {
            model,
            data,
            material: het.material,
        }),
    )
}

fn criterion_7(recovered: Option<&Recovery>) -> Outcome {
    let Some(r) = recovered else {
        return outcome(false, "no recovered material".into());
    };
    let config = SolverConfig::default();
    let mut y = r.model.rest_positions().to_vec();
    let mut simulated = Vec::new();
    let mut observed = Vec::new();
    for t in 30..r.data.len() {
        let state = solve_equilibrium(&r.model, &r.material, &r.data.frames[t], &y, &config).unwrap();
        if !state.converged {
            return outcome(false, format!("held-out frame {t} did not converge"));
        }
        y = state.y;
        simulated.push(PointCloud::new(y.clone()).unwrap());
        observed.push(r.data.observations[t].clone());
    }
    let report = evaluate(&simulated, &observed, r.model.surface_mask()).unwrap();
    let limit = 3.0 * NOISE_SIGMA * 1e3;
    outcome(
        report.average_mm <= limit,
        format!("{} held-out frames: {report} (average <= {limit:.1} mm)", simulated.len()),
    )
}

fn criterion_8() -> Outcome {
    let spec = ObjectSpec {
        shape: Shape::Slab,
        dims: [11, 11, 3],
        spacing: 0.01,
        regions: vec![MaterialRegion {
            region: Region::All,
            mu: 1e4,
            lambda: 1e4,
        }],
        total_mass: 0.05,
        seed: 8,
        jitter: 0.05,
    };
    let (model, mat) = synth_object(&spec).unwrap();
    let alpha = default_contact_penalty(&model, mat.mean_mu());
    let top = model.rest_positions().iter().map(|p| p.z).fold(f64::MIN, f64::max);
    let (radius, press) = (0.03, 0.004);
    let frame_with = |sphere: SdfShape| {
        let mut frame = ForceFrame::empty(model.len());
        for (i, p) in model.rest_positions().iter().enumerate() {
            if p.z < 0.005 {
                frame.pins.push(Pin {
                    id: i,
                    position: (*p).into(),
                });
            } else {
                frame.forces[i] = Vec3::new(0.0, 0.0, -9.81 * model.point_masses()[i]);
            }
        }
        frame.sdfs.push(sphere);
        frame
    };
    let sphere = SdfShape::sphere(Vec3::new(0.05, 0.05, top + radius - press), radius, alpha);
    let state =
        solve_equilibrium(&model, &mat, &frame_with(sphere), model.rest_positions(), &SolverConfig::default())
            .unwrap();
    let (e_contact, _) = contact_energy(&sphere, &model, &state.y);
    let bound = 2.0 * (e_contact / (alpha * model.min_volume())).sqrt();
    let depth = state.y.iter().map(|p| (-sphere.eval(p)).max(0.0)).fold(0.0, f64::max);
    let diameter = model.diameter();
    let indent = model
        .rest_positions()
        .iter()
        .zip(&state.y)
        .map(|(a, b)| a.z - b.z)
        .fold(0.0, f64::max);

    let away = SdfShape::sphere(Vec3::new(0.05, 0.05, top + radius + 0.01), radius, alpha);
    let (e_sep, g_sep) = contact_energy(&away, &model, model.rest_positions());
    let free = solve_equilibrium(&model, &mat, &frame_with(away), model.rest_positions(), &SolverConfig::default())
        .unwrap();
    let (e_sep_eq, _) = contact_energy(&away, &model, &free.y);
    let separated = e_sep == 0.0 && e_sep_eq == 0.0 && g_sep.iter().all(|g| *g == Vec3::zeros());
    outcome(
        state.converged && depth <= bound && depth <= 0.01 * diameter && separated,
        format!(
            "{:.0} mm press, indentation {:.2} mm: max penetration {depth:.2e} m <= energy bound {bound:.2e} m and <= 1% diameter {:.2e} m; separated contact energy {e_sep} / {e_sep_eq}",
            press * 1e3,
            indent * 1e3,
            0.01 * diameter
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Dyadic coordinates keep rest + offset exact in floating point.
    let step = 1.0 / 64.0;
    let mut rest = Vec::new();
    for k in 0..4 {
        for j in 0..5 {
            for i in 0..8 {
                let jitter = Vec3::from_fn(|_, _| rng.random_range(-4i32..=4) as f64 / 1024.0);
                rest.push(Vec3::new(i as f64, j as f64, k as f64) * step + jitter);
            }
        }
    }
    let rest = PointCloud::new(rest).unwrap();
    let bend: Vec<Vec3> = rest
        .positions()
        .iter()
        .map(|p| Vec3::new(p.x, p.y + 0.3 * p.x * p.x, p.z + 0.2 * (8.0 * p.x).sin() * p.y))
        .collect();
    let bent = WarpField::new(rest.clone(), PointCloud::new(bend.clone()).unwrap(), DEFAULT_K, None).unwrap();
    let nodes_exact = bend
        .iter()
        .zip(rest.positions())
        .all(|(d, r)| bent.warp_backward(d).point == *r);

    let shift = Vec3::new(3.0, -5.0, 1.0) / 256.0;
    let moved = PointCloud::new(rest.positions().iter().map(|p| p + shift).collect()).unwrap();
    let constant = WarpField::new(rest.clone(), moved, DEFAULT_K, None).unwrap();
    let (mut inside, mut exact) = (0, 0);
    for _ in 0..2000 {
        let q = Vec3::new(
            rng.random_range(-0.02..0.13),
            rng.random_range(-0.02..0.08),
            rng.random_range(-0.02..0.06),
        ) + shift;
        let s = constant.warp_backward(&q);
        if !s.masked {
            inside += 1;
            exact += (s.point == q - shift) as usize;
        }
    }

    let spec = GridSpec {
        min: [-0.01, -0.01, 0.0],
        max: [0.12, 0.09, 0.07],
        resolution: [14, 11, 8],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("warp.bin");
    bent.warp_grid(&spec).unwrap().write(&path).unwrap();
    let grid = WarpGrid::read(&path).unwrap();
    let mut grid_exact = grid.offsets.len() == spec.len();
    for i in (0..spec.len()).rev() {
        let node = spec.node(i);
        let s = bent.warp_backward(&node);
        let off = s.point - node;
        grid_exact &= (0..3).all(|a| off[a].to_bits() == grid.offsets[i][a].to_bits()) && s.masked == grid.masked[i];
    }
    outcome(
        nodes_exact && inside > 100 && exact == inside && grid_exact,
        format!(
            "node interpolation exact: {nodes_exact}; constant offset exact at {exact}/{inside} unmasked queries; {} grid nodes bitwise equal to pointwise queries: {grid_exact}",
            spec.len()
        ),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    pointsim::cli::run(std::iter::once("pointsim").chain(args.iter().copied()))
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let config = serde_json::json!({
        "solver": SolverConfig::default(),
        "fit": { "max_epochs": 4, "trace_depth": 3 },
        "synth": {
            "object": two_region_bar(11),
            "script": bar_script(),
            "sequence": bar_sequence(11, 12),
        }
    });
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).map_err(|e| e.to_string())?;
    let cfg = config_path.to_str().unwrap();
    let data = dir.join("data");
    let fit = dir.join("fit");
    let sim = dir.join("sim");
    let material = fit.join("material.json");
    let steps: [Vec<&str>; 3] = [
        vec!["--config", cfg, "synth", "--out", data.to_str().unwrap()],
        vec!["--config", cfg, "fit", "--dataset", data.to_str().unwrap(), "--frames", "0..8", "--out", fit.to_str().unwrap()],
        vec![
            "--config",
            cfg,
            "simulate",
            "--dataset",
            data.to_str().unwrap(),
            "--material",
            material.to_str().unwrap(),
            "--frames",
            "8..12",
            "--out",
            sim.to_str().unwrap(),
        ],
    ];
    for args in &steps {
        let code = run_cli(args);
        if code != 0 {
            return Err(format!("`{}` exited with {code}", args[2]));
        }
    }
    let mut files = Vec::new();
    for sub in [&data, &fit, &sim] {
        let mut entries: Vec<_> = std::fs::read_dir(sub).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            let name = p.strip_prefix(dir).unwrap().display().to_string();
            files.push((name, std::fs::read(&p).unwrap()));
        }
    }
    Ok(files)
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let names_match = ra.iter().map(|f| &f.0).eq(rb.iter().map(|f| &f.0));
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        names_match && differing.is_empty() && ra.len() > 10,
        format!(
            "synth + fit + simulate twice: {} files, {} differ{}",
            ra.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) }
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |k: usize, o: Outcome| {
        println!("criterion {k:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, o));
    };
    let simple: [(usize, fn() -> Outcome); 5] =
        [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5)];
    for (k, f) in simple {
        if run(k) {
            report(k, f());
        }
    }
    if run(6) || run(7) {
        let (o6, recovered) = criterion_6();
        if run(6) {
            report(6, o6);
        }
        if run(7) {
            report(7, criterion_7(recovered.as_ref()));
        }
    }
    for (k, f) in [(8, criterion_8 as fn() -> Outcome), (9, criterion_9), (10, criterion_10)] {
        if run(k) {
            report(k, f());
        }
    }
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(k, _)| *k).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
