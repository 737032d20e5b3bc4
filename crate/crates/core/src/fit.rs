//! Inverse material estimation: Adam over log Lamé parameters, with gradients
//! propagated through the Newton solve.

use serde::{Deserialize, Serialize};

use crate::elasticity::{hessian_material_contraction, material_partials, MaterialField};
use crate::error::{Error, Result};
use crate::forces::ForceFrame;
use crate::geometry::{PointCloud, ReferenceModel};
use crate::linalg::{masked, LinearSolver, SpdSolve};
use crate::numeric::neumaier_sum;
use crate::solver::{
    free_mask, solve_equilibrium, solve_equilibrium_traced, total_energy, EquilibriumState,
    NewtonTrace, SolverConfig,
};
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Chain rule through the last recorded Newton iterations.
    #[default]
    Truncated,
    /// Implicit differentiation at the converged equilibrium.
    IftOracle,
}

impl std::str::FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncated" => Ok(GradMode::Truncated),
            "ift_oracle" | "ift-oracle" | "ift" => Ok(GradMode::IftOracle),
            other => Err(Error::InvalidArgument(format!(
                "unknown gradient mode `{other}` (expected truncated or ift_oracle)"
            ))),
        }
    }
}

/// Where each frame's Newton solve starts within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// From the previous training frame's equilibrium (rest for the first).
    #[default]
    Sequence,
    /// From the same frame's equilibrium in the previous epoch.
    PreviousEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Training frame indices into the dataset.
    pub frames: Vec<usize>,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// `None` estimates the stiffness scale from the sag of the first frame.
    pub init_log_mu: Option<f64>,
    pub init_log_lambda: Option<f64>,
    pub grad_mode: GradMode,
    pub trace_depth: usize,
    pub plateau_window: usize,
    pub plateau_rel_tol: f64,
    pub warm_start: WarmStart,
    pub solver: SolverConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            frames: Vec::new(),
            adam_lr: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 200,
            init_log_mu: None,
            init_log_lambda: None,
            grad_mode: GradMode::Truncated,
            trace_depth: 5,
            plateau_window: 20,
            plateau_rel_tol: 1e-3,
            warm_start: WarmStart::Sequence,
            solver: SolverConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(format!("fit config: {what}")));
        if self.frames.is_empty() {
            return bad("no training frames selected".into());
        }
        if let Some(&f) = self.frames.iter().find(|&&f| f >= n_frames) {
            return Err(Error::InvalidIndex {
                what: "training frame".into(),
                index: f,
                len: n_frames,
            });
        }
        if !(self.adam_lr > 0.0 && self.adam_lr.is_finite()) {
            return bad(format!("adam_lr must be positive, got {}", self.adam_lr));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        for v in [self.init_log_mu, self.init_log_lambda].into_iter().flatten() {
            if !v.is_finite() {
                return bad("initial log-parameters must be finite".into());
            }
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub material: MaterialField,
    /// Total training loss per epoch, evaluated before that epoch's update.
    pub loss_history: Vec<f64>,
    /// `L_t` of each training frame at the returned material.
    pub per_frame_residuals: Vec<f64>,
    pub frames: Vec<usize>,
    pub best_epoch: usize,
    pub grad_mode: GradMode,
    pub homogeneous: bool,
}

/// Gradient of a scalar with respect to the per-point log-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialGradient {
    pub d_log_mu: Vec<f64>,
    pub d_log_lambda: Vec<f64>,
}

impl MaterialGradient {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_log_mu: vec![0.0; n],
            d_log_lambda: vec![0.0; n],
        }
    }

    fn add(&mut self, mu: &[f64], lambda: &[f64], scale: f64) {
        for (a, b) in self.d_log_mu.iter_mut().zip(mu) {
            *a += scale * b;
        }
        for (a, b) in self.d_log_lambda.iter_mut().zip(lambda) {
            *a += scale * b;
        }
    }

    /// Concatenation `(d_log_mu, d_log_lambda)`.
    pub fn flat(&self) -> Vec<f64> {
        self.d_log_mu.iter().chain(&self.d_log_lambda).copied().collect()
    }
}

fn check_observation(model: &ReferenceModel, observed: &PointCloud) -> Result<()> {
    if observed.len() != model.len() {
        return Err(Error::size("observation", model.len(), observed.len()));
    }
    Ok(())
}

/// `sum over surface points of |y_i - x*_i|^2`.
pub fn frame_loss(model: &ReferenceModel, observed: &PointCloud, y: &[Vec3]) -> Result<f64> {
    check_observation(model, observed)?;
    model.check_positions(y, "simulated positions")?;
    Ok(neumaier_sum(
        y.iter()
            .zip(observed.positions())
            .zip(model.surface_mask())
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b).norm_squared()),
    ))
}

/// `dL/dy`, zero off the surface.
fn loss_gradient_y(model: &ReferenceModel, observed: &PointCloud, y: &[Vec3]) -> Vec<Vec3> {
    y.iter()
        .zip(observed.positions())
        .zip(model.surface_mask())
        .map(|((a, b), &m)| if m { 2.0 * (a - b) } else { Vec3::zeros() })
        .collect()
}

/// Truncated chain rule through the recorded Newton steps. Each step
/// `y_{k+1} = y_k - H_k^{-1} g_k` contributes
/// `z_k^T (dH_k/dtheta) H_k^{-1} g_k - z_k^T dg_k/dtheta` with
/// `z_k = H_k^{-1} dL/dy`, ignoring the dependence of `H_k, g_k` on `y_k`.
pub fn loss_gradient_truncated(
    model: &ReferenceModel,
    mat: &MaterialField,
    observed: &PointCloud,
    state: &EquilibriumState,
    trace: &NewtonTrace<'_>,
) -> Result<MaterialGradient> {
    check_observation(model, observed)?;
    if trace.steps.is_empty() {
        return Err(Error::InvalidArgument("Newton trace has no recorded steps".into()));
    }
    let v = masked(&loss_gradient_y(model, observed, &state.y), &trace.free);
    let mut grad = MaterialGradient::zeros(model.len());
    if v.iter().all(|x| *x == Vec3::zeros()) {
        return Ok(grad);
    }
    for step in &trace.steps {
        let z = step.solve.solve(&v)?;
        let (h_mu, h_lambda) =
            hessian_material_contraction(model, mat, &step.y, &z, &step.newton_solution)?;
        grad.add(&h_mu, &h_lambda, 1.0);
        let partials = material_partials(model, mat, &step.y)?;
        let (g_mu, g_lambda) = partials.mixed.apply_transpose(&z);
        grad.add(&g_mu, &g_lambda, -1.0);
    }
    Ok(grad)
}

/// Exact sensitivity at a converged equilibrium:
/// `dL/dtheta = -(dL/dy) H^{-1} d(grad E)/dtheta`, solved with the unprojected
/// Hessian plus `eps I`.
pub fn loss_gradient_ift(
    model: &ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    observed: &PointCloud,
    state: &EquilibriumState,
) -> Result<MaterialGradient> {
    check_observation(model, observed)?;
    if !state.converged {
        return Err(Error::Solver(format!(
            "sensitivity requires a converged equilibrium (grad norm {:e})",
            state.grad_norm
        )));
    }
    let free = free_mask(model.len(), frame);
    let v = masked(&loss_gradient_y(model, observed, &state.y), &free);
    if v.iter().all(|x| *x == Vec3::zeros()) {
        return Ok(MaterialGradient::zeros(model.len()));
    }
    let mut eval = total_energy(model, mat, frame, &state.y, false)?;
    let shift = Mat3::identity() * eval.epsilon;
    for i in 0..model.len() {
        eval.hessian.add_diagonal(i, &shift);
    }
    let z = match SpdSolve::prepare(eval.hessian, &free, LinearSolver::Cholesky) {
        Ok(solve) => solve.solve(&v)?,
        Err(e) => {
            log::warn!("unprojected Hessian not positive definite ({e}); using the projected one");
            let projected = total_energy(model, mat, frame, &state.y, true)?;
            SpdSolve::prepare(projected.hessian, &free, LinearSolver::Cholesky)?.solve(&v)?
        }
    };
    let partials = material_partials(model, mat, &state.y)?;
    let (g_mu, g_lambda) = partials.mixed.apply_transpose(&z);
    let mut grad = MaterialGradient::zeros(model.len());
    grad.add(&g_mu, &g_lambda, -1.0);
    Ok(grad)
}

/// Loss and gradient of one training epoch.
struct EpochEval {
    loss: f64,
    per_frame: Vec<f64>,
    gradient: MaterialGradient,
    states: Vec<Vec<Vec3>>,
}

fn solve_frame<'m>(
    model: &'m ReferenceModel,
    mat: &MaterialField,
    frame: &ForceFrame,
    start: &[Vec3],
    config: &FitConfig,
    index: usize,
    trace: Option<&mut NewtonTrace<'m>>,
) -> Result<EquilibriumState> {
    let attempt = |start: &[Vec3], solver: &SolverConfig, trace: Option<&mut NewtonTrace<'m>>| match trace {
        Some(t) => solve_equilibrium_traced(model, mat, frame, start, solver, t),
        None => solve_equilibrium(model, mat, frame, start, solver),
    };
    let abort = |reason: String| Error::FitAborted { frame: index, reason };
    let mut trace = trace;
    let first = attempt(start, &config.solver, trace.as_deref_mut());
    match first {
        Ok(s) if s.converged => return Ok(s),
        Ok(s) => log::debug!("frame {index}: {:?}; retrying", s.message),
        Err(e) if e.is_solver_failure() || matches!(e, Error::Inverted { .. }) => {
            log::debug!("frame {index}: {e}; retrying")
        }
        Err(e) => return Err(e),
    }
    let retry = SolverConfig {
        max_newton_iters: config.solver.max_newton_iters * 4,
        ..config.solver.clone()
    };
    match attempt(model.rest_positions(), &retry, trace) {
        Ok(s) if s.converged => Ok(s),
        Ok(s) => Err(abort(s.message.unwrap_or_else(|| "did not converge".into()))),
        Err(e) => Err(abort(e.to_string())),
    }
}

fn evaluate_epoch(
    model: &ReferenceModel,
    mat: &MaterialField,
    frames: &[ForceFrame],
    observations: &[PointCloud],
    config: &FitConfig,
    previous: Option<&[Vec<Vec3>]>,
) -> Result<EpochEval> {
    let mut per_frame = Vec::with_capacity(config.frames.len());
    let mut gradient = MaterialGradient::zeros(model.len());
    let mut states: Vec<Vec<Vec3>> = Vec::with_capacity(config.frames.len());
    for (slot, &t) in config.frames.iter().enumerate() {
        let start = match (config.warm_start, previous) {
            (WarmStart::PreviousEpoch, Some(prev)) => prev[slot].as_slice(),
            _ => states.last().map(|s| s.as_slice()).unwrap_or(model.rest_positions()),
        };
        let frame = &frames[t];
        let observed = &observations[t];
        let g = match config.grad_mode {
            GradMode::Truncated => {
                let mut trace = NewtonTrace::new(config.trace_depth);
                let state = solve_frame(model, mat, frame, start, config, t, Some(&mut trace))?;
                per_frame.push(frame_loss(model, observed, &state.y)?);
                let g = loss_gradient_truncated(model, mat, observed, &state, &trace)?;
                states.push(state.y);
                g
            }
            GradMode::IftOracle => {
                let state = solve_frame(model, mat, frame, start, config, t, None)?;
                per_frame.push(frame_loss(model, observed, &state.y)?);
                let g = loss_gradient_ift(model, mat, frame, observed, &state)?;
                states.push(state.y);
                g
            }
        };
        gradient.add(&g.d_log_mu, &g.d_log_lambda, 1.0);
    }
    Ok(EpochEval {
        loss: neumaier_sum(per_frame.iter().copied()),
        per_frame,
        gradient,
        states,
    })
}

/// Adam state over a flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, config: &FitConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: config.adam_lr,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Mean displacement magnitude over the surface relative to rest.
fn mean_surface_displacement(model: &ReferenceModel, y: &[Vec3]) -> f64 {
    let (sum, count) = y
        .iter()
        .zip(model.rest_positions())
        .zip(model.surface_mask())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), ((a, b), _)| (s + (a - b).norm(), c + 1));
    if count == 0 { 0.0 } else { sum / count as f64 }
}

const FALLBACK_STIFFNESS: f64 = 1e3;

/// Stiffness scale whose predicted mean displacement of the first training
/// frame matches the observed one.
pub fn estimate_stiffness_scale(
    model: &ReferenceModel,
    frames: &[ForceFrame],
    observations: &[PointCloud],
    config: &FitConfig,
) -> f64 {
    let Some(&t) = config.frames.first() else {
        return FALLBACK_STIFFNESS;
    };
    let observed = mean_surface_displacement(model, observations[t].positions());
    if !(observed > 1e-6 * model.diameter()) {
        return FALLBACK_STIFFNESS;
    }
    let mut scale = FALLBACK_STIFFNESS;
    for _ in 0..4 {
        let mat = MaterialField::uniform(model.len(), scale, scale);
        let Ok(state) = solve_equilibrium(model, &mat, &frames[t], model.rest_positions(), &config.solver) else {
            return FALLBACK_STIFFNESS;
        };
        let predicted = mean_surface_displacement(model, &state.y);
        if !(predicted > 0.0) {
            return FALLBACK_STIFFNESS;
        }
        let ratio = predicted / observed;
        scale *= ratio;
        if (ratio - 1.0).abs() < 0.02 {
            break;
        }
    }
    if scale.is_finite() && scale > 0.0 { scale } else { FALLBACK_STIFFNESS }
}

fn initial_material(
    model: &ReferenceModel,
    frames: &[ForceFrame],
    observations: &[PointCloud],
    config: &FitConfig,
) -> MaterialField {
    let (log_mu, log_lambda) = match (config.init_log_mu, config.init_log_lambda) {
        (Some(a), Some(b)) => (a, b),
        (a, b) => {
            let s = estimate_stiffness_scale(model, frames, observations, config).ln();
            (a.unwrap_or(s), b.unwrap_or(s))
        }
    };
    MaterialField {
        log_mu: vec![log_mu; model.len()],
        log_lambda: vec![log_lambda; model.len()],
    }
}

fn check_inputs(
    model: &ReferenceModel,
    frames: &[ForceFrame],
    observations: &[PointCloud],
    config: &FitConfig,
) -> Result<()> {
    if frames.len() != observations.len() {
        return Err(Error::size("observations", frames.len(), observations.len()));
    }
    config.validate(frames.len())?;
    for &t in &config.frames {
        frames[t].validate(model.len())?;
        check_observation(model, &observations[t])?;
    }
    Ok(())
}

/// Per-point Lamé fields minimizing the summed training loss.
pub fn fit_material(
    model: &ReferenceModel,
    frames: &[ForceFrame],
    observations: &[PointCloud],
    config: &FitConfig,
) -> Result<FitReport> {
    run_fit(model, frames, observations, config, false)
}

/// Baseline with one global `(mu, lambda)` pair.
pub fn fit_material_homogeneous(
    model: &ReferenceModel,
    frames: &[ForceFrame],
    observations: &[PointCloud],
    config: &FitConfig,
) -> Result<FitReport> {
    run_fit(model, frames, observations, config, true)
}

fn run_fit(
    model: &ReferenceModel,
    frames: &[ForceFrame],
    observations: &[PointCloud],
    config: &FitConfig,
    homogeneous: bool,
) -> Result<FitReport> {
    check_inputs(model, frames, observations, config)?;
    let n = model.len();
    let init = initial_material(model, frames, observations, config);
    let mut params: Vec<f64> = if homogeneous {
        vec![init.log_mu[0], init.log_lambda[0]]
    } else {
        init.log_mu.iter().chain(&init.log_lambda).copied().collect()
    };
    let material_of = |p: &[f64]| -> MaterialField {
        if homogeneous {
            MaterialField {
                log_mu: vec![p[0]; n],
                log_lambda: vec![p[1]; n],
            }
        } else {
            MaterialField {
                log_mu: p[..n].to_vec(),
                log_lambda: p[n..].to_vec(),
            }
        }
    };
    let mut adam = Adam::new(params.len(), config);
    let mut history = Vec::new();
    let mut best: Option<(f64, MaterialField, Vec<f64>, usize)> = None;
    let mut previous: Option<Vec<Vec<Vec3>>> = None;

    for epoch in 0..config.max_epochs.max(1) {
        let mat = material_of(&params);
        let eval = evaluate_epoch(model, &mat, frames, observations, config, previous.as_deref())?;
        if !eval.loss.is_finite() {
            return Err(Error::FitAborted {
                frame: config.frames[0],
                reason: format!("non-finite training loss at epoch {epoch}"),
            });
        }
        log::info!("epoch {epoch}: loss {:.6e}", eval.loss);
        history.push(eval.loss);
        if best.as_ref().is_none_or(|b| eval.loss < b.0) {
            best = Some((eval.loss, mat, eval.per_frame.clone(), epoch));
        }
        previous = Some(eval.states);
        if epoch + 1 == config.max_epochs.max(1) || plateaued(&history, config) {
            break;
        }
        let grad = if homogeneous {
            vec![
                neumaier_sum(eval.gradient.d_log_mu.iter().copied()),
                neumaier_sum(eval.gradient.d_log_lambda.iter().copied()),
            ]
        } else {
            eval.gradient.flat()
        };
        adam.step(&mut params, &grad);
    }
    let (_, material, per_frame_residuals, best_epoch) = best.expect("at least one epoch runs");
    Ok(FitReport {
        material,
        loss_history: history,
        per_frame_residuals,
        frames: config.frames.clone(),
        best_epoch,
        grad_mode: config.grad_mode,
        homogeneous,
    })
}

/// True when the best loss improved by less than `plateau_rel_tol` over the
/// last `plateau_window` epochs.
fn plateaued(history: &[f64], config: &FitConfig) -> bool {
    let w = config.plateau_window;
    if w == 0 || history.len() <= w {
        return false;
    }
    let best = |h: &[f64]| h.iter().copied().fold(f64::INFINITY, f64::min);
    let before = best(&history[..history.len() - w]);
    let now = best(history);
    before - now < config.plateau_rel_tol * before
}
