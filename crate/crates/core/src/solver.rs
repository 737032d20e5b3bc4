//! Quasi-static equilibrium by projected Newton with backtracking line search.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::elasticity::{elastic_gradient_hessian, elastic_terms, MaterialField};
use crate::error::{Error, Result};
use crate::forces::{contact_hessian, ForceFrame};
use crate::geometry::ReferenceModel;
use crate::linalg::{dot, masked, BlockSparse, LinearSolver, SpdSolve};
use crate::numeric::neumaier_sum;
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolverKind {
    #[default]
    Cholesky,
    Cg,
}

/// Which Hessian drives the Newton step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Always use the per-neighborhood eigenvalue-floored Hessian.
    Projected,
    /// Use the exact Hessian when it is positive definite on the free
    /// coordinates, otherwise the projected one.
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_newton_iters: usize,
    /// Gradient tolerance relative to the force scale `max(1, sum |f_i|) / n`.
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack_beta: f64,
    pub max_backtracks: usize,
    pub linear_solver: LinearSolverKind,
    pub hessian: HessianMode,
    pub cg_rel_tol: f64,
    /// Zero selects `10 * 3n`.
    pub cg_max_iters: usize,
    /// JSON-lines diagnostics destination.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_newton_iters: 50,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack_beta: 0.5,
            max_backtracks: 40,
            linear_solver: LinearSolverKind::Cholesky,
            hessian: HessianMode::Adaptive,
            cg_rel_tol: 1e-8,
            cg_max_iters: 0,
            trace_path: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("solver config: {what}")));
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_beta > 0.0 && self.backtrack_beta < 1.0) {
            return bad("backtrack_beta must lie in (0, 1)");
        }
        if !(self.grad_tol > 0.0) || !(self.cg_rel_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }

    /// Absolute free-gradient tolerance for `frame`.
    pub fn tolerance(&self, frame: &ForceFrame) -> f64 {
        let n = frame.forces.len().max(1) as f64;
        self.grad_tol * frame.force_scale().max(1.0) / n
    }

    pub fn linear(&self) -> LinearSolver {
        match self.linear_solver {
            LinearSolverKind::Cholesky => LinearSolver::Cholesky,
            LinearSolverKind::Cg => LinearSolver::Cg {
                rel_tol: self.cg_rel_tol,
                max_iters: self.cg_max_iters,
            },
        }
    }
}

/// Result of one equilibrium solve.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumState {
    pub y: Vec<Vec3>,
    pub energy: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
    /// Energy after each accepted step, starting with the initial value.
    pub energy_trace: Vec<f64>,
    pub message: Option<String>,
}

/// Free-coordinate mask: pinned points are fixed in all three coordinates.
pub fn free_mask(n: usize, frame: &ForceFrame) -> Vec<[bool; 3]> {
    let mut free = vec![[true; 3]; n];
    for pin in &frame.pins {
        free[pin.id] = [false; 3];
    }
    free
}

/// Per-term energy contributions, kept separate so that energy differences
/// can be formed term by term.
#[derive(Debug, Clone)]
pub struct EnergyParts {
    pub elastic: Vec<f64>,
    pub work: f64,
    pub attraction: Vec<f64>,
    pub contact: Vec<f64>,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        neumaier_sum(
            self.elastic
                .iter()
                .chain(&self.attraction)
                .chain(&self.contact)
                .copied()
                .chain(std::iter::once(self.work)),
        )
    }

    /// `E(new) - E(old)` accumulated term by term.
    pub fn delta(&self, old: &EnergyParts, frame: &ForceFrame, y_old: &[Vec3], y_new: &[Vec3]) -> f64 {
        let pairs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        let work = -neumaier_sum(
            frame
                .forces
                .iter()
                .zip(y_new.iter().zip(y_old))
                .map(|(f, (a, b))| f.dot(&(a - b))),
        );
        neumaier_sum(
            pairs(&self.elastic, &old.elastic)
                .into_iter()
                .chain(pairs(&self.attraction, &old.attraction))
                .chain(pairs(&self.contact, &old.contact))
                .chain(std::iter::once(work)),
        )
    }
}

pub fn energy_parts(
    model: &ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    y: &[Vec3],
) -> EnergyParts {
    let work = -neumaier_sum(frame.forces.iter().zip(y).map(|(f, p)| f.dot(p)));
    let attraction = frame
        .attraction
        .iter()
        .map(|a| frame.attraction_penalty * (y[a.id] - Vec3::from(a.target)).norm_squared())
        .collect();
    let contact = frame
        .sdfs
        .iter()
        .flat_map(|s| {
            model.neighborhoods().iter().map(move |nb| {
                let d = s.eval(&y[nb.center]);
                if d < 0.0 {
                    nb.volume * s.penalty * d * d
                } else {
                    0.0
                }
            })
        })
        .collect();
    EnergyParts {
        elastic: elastic_terms(model, mat, y),
        work,
        attraction,
        contact,
    }
}

/// Total energy with gradient and Hessian.
pub struct TotalEnergy<'m> {
    pub value: f64,
    pub gradient: Vec<Vec3>,
    pub hessian: BlockSparse<'m>,
    pub epsilon: f64,
}

/// `E = E_elastic - sum f.y + E_attraction + E_contact` with derivatives.
/// With `project`, stencil Hessians are eigenvalue-floored and contact uses
/// its Gauss-Newton part.
pub fn total_energy<'m>(
    model: &'m ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    y: &[Vec3],
    project: bool,
) -> Result<TotalEnergy<'m>> {
    frame.validate(model.len())?;
    let elastic = elastic_gradient_hessian(model, mat, y, project)?;
    let parts = energy_parts(model, mat, frame, y);
    let mut gradient = elastic.gradient;
    let mut hessian = elastic.hessian;
    for (g, f) in gradient.iter_mut().zip(&frame.forces) {
        *g -= f;
    }
    let alpha = frame.attraction_penalty;
    for a in &frame.attraction {
        gradient[a.id] += 2.0 * alpha * (y[a.id] - Vec3::from(a.target));
        hessian.add_diagonal(a.id, &(Mat3::identity() * (2.0 * alpha)));
    }
    for s in &frame.sdfs {
        let (_, g) = crate::forces::contact_energy(s, model, y);
        for (acc, v) in gradient.iter_mut().zip(g) {
            *acc += v;
        }
        for (id, h) in contact_hessian(s, model, y, project) {
            hessian.add_diagonal(id, &h);
        }
    }
    Ok(TotalEnergy {
        value: parts.total(),
        gradient,
        hessian,
        epsilon: elastic.epsilon,
    })
}

/// One recorded Newton linearization, kept for sensitivity propagation.
pub struct TraceStep<'m> {
    pub y: Vec<Vec3>,
    pub gradient: Vec<Vec3>,
    /// `H^{-1} grad E` on free coordinates (the negated Newton direction).
    pub newton_solution: Vec<Vec3>,
    pub solve: SpdSolve<'m>,
}

/// The last few Newton linearizations of a solve.
pub struct NewtonTrace<'m> {
    pub depth: usize,
    pub steps: VecDeque<TraceStep<'m>>,
    pub free: Vec<[bool; 3]>,
}

impl<'m> NewtonTrace<'m> {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            steps: VecDeque::new(),
            free: Vec::new(),
        }
    }

    fn push(&mut self, step: TraceStep<'m>) {
        if self.depth == 0 {
            return;
        }
        if self.steps.len() == self.depth {
            self.steps.pop_front();
        }
        self.steps.push_back(step);
    }
}

#[derive(Serialize)]
struct TraceLine {
    iteration: usize,
    energy: f64,
    grad_norm: f64,
    step: f64,
}

fn norm(v: &[Vec3]) -> f64 {
    dot(v, v).sqrt()
}

/// Minimizes the total energy starting from `y_init`.
pub fn solve_equilibrium(
    model: &ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    y_init: &[Vec3],
    config: &SolverConfig,
) -> Result<EquilibriumState> {
    solve_impl(model, mat, frame, y_init, config, None)
}

/// As [`solve_equilibrium`], additionally recording the last `trace.depth`
/// Newton linearizations. A solve that takes no step records its terminal
/// linearization instead.
pub fn solve_equilibrium_traced<'m>(
    model: &'m ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    y_init: &[Vec3],
    config: &SolverConfig,
    trace: &mut NewtonTrace<'m>,
) -> Result<EquilibriumState> {
    solve_impl(model, mat, frame, y_init, config, Some(trace))
}

fn solve_impl<'m>(
    model: &'m ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    y_init: &[Vec3],
    config: &SolverConfig,
    mut trace: Option<&mut NewtonTrace<'m>>,
) -> Result<EquilibriumState> {
    config.validate()?;
    frame.validate(model.len())?;
    mat.validate(model.len())?;
    model.check_positions(y_init, "initial positions")?;

    let free = free_mask(model.len(), frame);
    if let Some(t) = trace.as_deref_mut() {
        t.steps.clear();
        t.free = free.clone();
    }
    let mut y = y_init.to_vec();
    for pin in &frame.pins {
        y[pin.id] = Vec3::from(pin.position);
    }
    let mut parts = energy_parts(model, mat, frame, &y);
    let mut energy = parts.total();
    if !energy.is_finite() {
        return Err(Error::NonFiniteInitialEnergy);
    }
    let tol = config.tolerance(frame);
    let mut log = match &config.trace_path {
        Some(p) => Some(BufWriter::new(
            File::options()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };
    let mut emit = |line: TraceLine| -> Result<()> {
        if let (Some(w), Some(p)) = (log.as_mut(), config.trace_path.as_ref()) {
            let s = serde_json::to_string(&line).expect("trace line serializes");
            writeln!(w, "{s}").map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    };

    let mut energy_trace = vec![energy];
    let state = |y: Vec<Vec3>, energy: f64, grad_norm: f64, iters: usize, converged: bool, trace: Vec<f64>, message: Option<String>| {
        EquilibriumState {
            y,
            energy,
            grad_norm,
            iters,
            converged,
            energy_trace: trace,
            message,
        }
    };

    for iter in 0..=config.max_newton_iters {
        let eval = total_energy(model, mat, frame, &y, config.hessian == HessianMode::Projected)?;
        let g = masked(&eval.gradient, &free);
        let grad_norm = norm(&g);
        emit(TraceLine {
            iteration: iter,
            energy,
            grad_norm,
            step: 0.0,
        })?;
        let converged = grad_norm <= tol;
        if converged || iter == config.max_newton_iters {
            if converged && iter == 0 {
                if let Some(t) = trace.as_deref_mut() {
                    let (solve, newton_solution) =
                        newton_system(model, mat, frame, &y, eval.hessian, &g, &free, config)?;
                    t.push(TraceStep {
                        y: y.clone(),
                        gradient: g,
                        newton_solution,
                        solve,
                    });
                }
            }
            let message = (!converged).then(|| {
                format!("reached {} Newton iterations (grad norm {grad_norm:e}, tol {tol:e})", iter)
            });
            return Ok(state(y, energy, grad_norm, iter, converged, energy_trace, message));
        }

        let (solve, newton_solution) = newton_system(model, mat, frame, &y, eval.hessian, &g, &free, config)?;
        let mut direction: Vec<Vec3> = newton_solution.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            direction = g.iter().map(|v| -v).collect();
            slope = -grad_norm * grad_norm;
        }

        let mut step = 1.0;
        let mut accepted = None;
        if -slope <= ROUNDOFF_SLOPE * energy.abs() {
            accepted = roundoff_step(model, mat, frame, &y, &newton_solution, &free, grad_norm, energy);
        }
        for _ in 0..=config.max_backtracks {
            if accepted.is_some() {
                break;
            }
            let y_try: Vec<Vec3> = y.iter().zip(&direction).map(|(p, d)| p + step * d).collect();
            let try_parts = energy_parts(model, mat, frame, &y_try);
            if try_parts.elastic.iter().all(|e| e.is_finite()) {
                let delta = try_parts.delta(&parts, frame, &y, &y_try);
                if delta <= config.armijo_c * step * slope {
                    accepted = Some((y_try, try_parts));
                    break;
                }
            }
            step *= config.backtrack_beta;
        }
        if accepted.is_none() {
            accepted = roundoff_step(model, mat, frame, &y, &newton_solution, &free, grad_norm, energy);
        }
        let Some((y_new, new_parts)) = accepted else {
            let message = format!(
                "line search found no decrease after {} backtracks at iteration {iter}",
                config.max_backtracks
            );
            log::warn!("{message}");
            return Ok(state(y, energy, grad_norm, iter, false, energy_trace, Some(message)));
        };

        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceStep {
                y: y.clone(),
                gradient: g,
                newton_solution,
                solve,
            });
        }
        y = y_new;
        parts = new_parts;
        // A rounding-level increase of the computed total is not a real one.
        energy = parts.total().min(energy);
        energy_trace.push(energy);
        emit(TraceLine {
            iteration: iter,
            energy,
            grad_norm,
            step,
        })?;
    }
    unreachable!("loop returns at max_newton_iters")
}

/// Factors the Newton system and solves `H d = g`. In adaptive mode the exact
/// Hessian is tried first and per-neighborhood projection is the fallback.
#[allow(clippy::too_many_arguments)]
fn newton_system<'m>(
    model: &'m ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    y: &[Vec3],
    hessian: BlockSparse<'m>,
    g: &[Vec3],
    free: &[[bool; 3]],
    config: &SolverConfig,
) -> Result<(SpdSolve<'m>, Vec<Vec3>)> {
    let linear = config.linear();
    if config.hessian == HessianMode::Adaptive {
        if let Ok(solve) = SpdSolve::prepare(hessian, free, linear) {
            if let Ok(d) = solve.solve(g) {
                if dot(g, &d) > 0.0 {
                    return Ok((solve, d));
                }
            }
        }
        let projected = total_energy(model, mat, frame, y, true)?;
        let solve = SpdSolve::prepare(projected.hessian, free, linear)?;
        let d = solve.solve(g)?;
        return Ok((solve, d));
    }
    let solve = SpdSolve::prepare(hessian, free, linear)?;
    let d = solve.solve(g)?;
    Ok((solve, d))
}

/// Predicted decreases below this fraction of `|E|` are treated as rounding
/// noise by the line search.
const ROUNDOFF_SLOPE: f64 = 1e-11;

/// Relative evaluation error of the total energy.
const ROUNDING: f64 = 1e-13;

/// Near a minimum the Armijo test compares energy differences below the
/// rounding level of the energy itself. There a fraction of the Newton step
/// is taken when it reduces the free gradient norm and the computed energy
/// stays within rounding of the current value.
#[allow(clippy::too_many_arguments)]
fn roundoff_step(
    model: &ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    y: &[Vec3],
    newton_solution: &[Vec3],
    free: &[[bool; 3]],
    grad_norm: f64,
    energy: f64,
) -> Option<(Vec<Vec3>, EnergyParts)> {
    for s in [1.0, 0.5, 0.25, 0.125] {
        let y_try: Vec<Vec3> = y.iter().zip(newton_solution).map(|(p, d)| p - s * d).collect();
        let parts = energy_parts(model, mat, frame, &y_try);
        if !parts.elastic.iter().all(|e| e.is_finite()) || parts.total() > energy + ROUNDING * energy.abs() {
            continue;
        }
        let Ok(eval) = total_energy(model, mat, frame, &y_try, false) else {
            continue;
        };
        if norm(&masked(&eval.gradient, free)) < (1.0 - 0.5 * s) * grad_norm {
            return Some((y_try, parts));
        }
    }
    None
}

/// Solves a frame sequence, warm-starting each frame from the previous one.
pub fn solve_sequence(
    model: &ReferenceModel,
    mat: &MaterialField,
    frames: &[ForceFrame],
    config: &SolverConfig,
) -> Result<Vec<EquilibriumState>> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("empty frame list".into()));
    }
    let mut out: Vec<EquilibriumState> = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let start = out
            .last()
            .map(|s| s.y.as_slice())
            .unwrap_or(model.rest_positions());
        let state = solve_equilibrium(model, mat, frame, start, config)?;
        if !state.converged {
            log::warn!("frame {t} did not converge: {:?}", state.message);
        }
        out.push(state);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forces::{AttractionTarget, Pin};
    use crate::geometry::{build_reference, PointCloud};

    fn bar(nx: usize, ny: usize, nz: usize, h: f64) -> ReferenceModel {
        let mut pts = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let jitter = Vec3::new(
                        ((x * 7 + y * 3 + z) % 5) as f64,
                        ((x * 2 + y * 5 + z * 3) % 7) as f64,
                        ((x + y * 11 + z * 5) % 3) as f64,
                    ) * (0.01 * h);
                    pts.push(Vec3::new(x as f64, y as f64, z as f64) * h + jitter);
                }
            }
        }
        let n = pts.len();
        build_reference(PointCloud::new(pts).unwrap(), 0.05, vec![true; n]).unwrap()
    }

    fn clamp_left(model: &ReferenceModel) -> Vec<Pin> {
        model
            .rest_positions()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.x < 0.005)
            .map(|(id, p)| Pin {
                id,
                position: (*p).into(),
            })
            .collect()
    }

    fn gravity_frame(model: &ReferenceModel, g: f64) -> ForceFrame {
        let mut frame = ForceFrame::empty(model.len());
        frame.forces = model
            .point_masses()
            .iter()
            .map(|m| Vec3::new(0.0, 0.0, -g * m))
            .collect();
        frame.pins = clamp_left(model);
        frame
    }

    #[test]
    fn zero_load_stays_at_rest() {
        let model = bar(6, 3, 3, 0.01);
        let mat = MaterialField::uniform(model.len(), 1e4, 1e4);
        let frame = ForceFrame::empty(model.len());
        let e = total_energy(&model, &mat, &frame, model.rest_positions(), true).unwrap();
        assert!(e.value.abs() < 1e-15);
        assert!(e.gradient.iter().all(|g| g.norm() < 1e-12));
        let s = solve_equilibrium(&model, &mat, &frame, model.rest_positions(), &SolverConfig::default()).unwrap();
        assert!(s.converged);
        assert_eq!(s.iters, 0);
        assert_eq!(s.y, model.rest_positions());
    }

    #[test]
    fn attraction_energy_value() {
        let model = bar(4, 2, 2, 0.01);
        let mat = MaterialField::uniform(model.len(), 1e4, 1e4);
        let mut frame = ForceFrame::empty(model.len());
        let target = model.rest_positions()[3] + Vec3::new(0.0, 0.03, 0.04);
        frame.attraction = vec![AttractionTarget {
            id: 3,
            target: target.into(),
        }];
        frame.attraction_penalty = 7.0;
        let e = total_energy(&model, &mat, &frame, model.rest_positions(), false).unwrap();
        assert!((e.value - 7.0 * 0.05 * 0.05).abs() < 1e-15);
    }

    #[test]
    fn work_gradient_is_negative_force() {
        let model = bar(4, 2, 2, 0.01);
        let mat = MaterialField::uniform(model.len(), 1e4, 1e4);
        let mut frame = ForceFrame::empty(model.len());
        let f = Vec3::new(0.3, -0.2, 0.1);
        frame.forces = vec![f; model.len()];
        let e = total_energy(&model, &mat, &frame, model.rest_positions(), false).unwrap();
        for g in &e.gradient {
            assert!((g + f).norm() < 1e-12);
        }
    }

    #[test]
    fn cantilever_under_gravity_converges_monotonically() {
        let model = bar(10, 3, 3, 0.01);
        let mat = MaterialField::uniform(model.len(), 2e3, 2e3);
        let frame = gravity_frame(&model, 9.81);
        let config = SolverConfig::default();
        let s = solve_equilibrium(&model, &mat, &frame, model.rest_positions(), &config).unwrap();
        assert!(s.converged, "{:?}", s.message);
        assert!(s.grad_norm <= config.tolerance(&frame));
        for w in s.energy_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for pin in &frame.pins {
            assert_eq!(s.y[pin.id], Vec3::from(pin.position));
        }
        // the free end sags
        let tip = (0..model.len()).max_by(|&a, &b| model.rest_positions()[a].x.total_cmp(&model.rest_positions()[b].x)).unwrap();
        assert!(s.y[tip].z < model.rest_positions()[tip].z);
    }

    #[test]
    fn cg_and_cholesky_agree() {
        let model = bar(8, 3, 3, 0.01);
        let mat = MaterialField::uniform(model.len(), 2e3, 2e3);
        let frame = gravity_frame(&model, 9.81);
        let chol = solve_equilibrium(&model, &mat, &frame, model.rest_positions(), &SolverConfig::default()).unwrap();
        let cg_cfg = SolverConfig {
            linear_solver: LinearSolverKind::Cg,
            ..SolverConfig::default()
        };
        let cg = solve_equilibrium(&model, &mat, &frame, model.rest_positions(), &cg_cfg).unwrap();
        assert!(chol.converged && cg.converged);
        let diff: f64 = chol.y.iter().zip(&cg.y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn softer_material_sags_more() {
        let model = bar(10, 3, 3, 0.01);
        let frame = gravity_frame(&model, 9.81);
        let tip = (0..model.len()).max_by(|&a, &b| model.rest_positions()[a].x.total_cmp(&model.rest_positions()[b].x)).unwrap();
        let sag: Vec<f64> = [8e3, 4e3, 2e3]
            .iter()
            .map(|&mu| {
                let mat = MaterialField::uniform(model.len(), mu, mu);
                let s = solve_equilibrium(&model, &mat, &frame, model.rest_positions(), &SolverConfig::default()).unwrap();
                assert!(s.converged);
                model.rest_positions()[tip].z - s.y[tip].z
            })
            .collect();
        assert!(sag[0] < sag[1] && sag[1] < sag[2], "{sag:?}");
    }

    #[test]
    fn warm_start_repeat_takes_no_step() {
        let model = bar(8, 3, 3, 0.01);
        let mat = MaterialField::uniform(model.len(), 2e3, 2e3);
        let frame = gravity_frame(&model, 9.81);
        let states = solve_sequence(&model, &mat, &[frame.clone(), frame.clone(), frame], &SolverConfig::default()).unwrap();
        assert!(states[1].iters <= 1 && states[2].iters <= 1);
        assert_eq!(states[1].y, states[2].y);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let model = bar(4, 2, 2, 0.01);
        let mat = MaterialField::uniform(model.len(), 1e3, 1e3);
        assert!(solve_sequence(&model, &mat, &[], &SolverConfig::default()).is_err());
    }

    #[test]
    fn inverted_start_is_an_error() {
        let model = bar(4, 2, 2, 0.01);
        let mat = MaterialField::uniform(model.len(), 1e3, 1e3);
        let y: Vec<Vec3> = model.rest_positions().iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let err = solve_equilibrium(&model, &mat, &ForceFrame::empty(model.len()), &y, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteInitialEnergy));
    }

    #[test]
    fn trace_lines_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let model = bar(6, 3, 3, 0.01);
        let mat = MaterialField::uniform(model.len(), 2e3, 2e3);
        let frame = gravity_frame(&model, 9.81);
        let config = SolverConfig {
            trace_path: Some(path.clone()),
            ..SolverConfig::default()
        };
        let s = solve_equilibrium(&model, &mat, &frame, model.rest_positions(), &config).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert!(lines.len() > s.iters);
        assert!(lines[0].get("grad_norm").is_some());
        assert!(lines[0].get("step").is_some());
    }
}
