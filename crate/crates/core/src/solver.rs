//! Least-energy descent: Sobolev-preconditioned Riemannian gradient flow on
//! the product of unit spheres of the ||.||-inner product, with the scaling
//! projection supplying the energy value at every sphere point.
//!
//! The iterate is always a normalized state u (each ||u_i|| = 1). One step:
//!
//! 1. project: solve for scalings t, giving the constrained energy Psi(u);
//! 2. gradient: Euler-Lagrange residual G_i at the projected state t * u,
//!    preconditioned by one Helmholtz solve g_i = (-Delta + mass^2)^{-1} G_i,
//!    projected onto the sphere tangent at u_i, scaled by t_i (chain rule of
//!    Psi through the projection);
//! 3. Armijo backtracking on Psi along the renormalized path
//!    (u_i + alpha d_i) / sqrt(1 + alpha^2 ||d_i||^2), exact because the
//!    direction is tangent.
//!
//! Line-search trials reuse the tangency identity for their quadratic terms,
//! so each trial costs pointwise quadratures only, never a linear solve.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{self, EnergyError, NehariCoeffs, Pow, SystemState};
use crate::grid::{self, Field, Grid, GridError};
use crate::model::{Params, ProblemKind};

/// Relative residual tolerance of the iterative Helmholtz solves offered as
/// the cross-check route; the descent itself applies the Riesz map with the
/// exact spectral solver.
pub const DEFAULT_CG_TOL: f64 = 1e-5;

/// Multiplicative noise amplitude of the default initial bumps.
pub const DEFAULT_BUMP_AMPLITUDE: f64 = 0.01;

/// Iteration budget of the nonnegativity re-descent after taking absolute
/// values; it starts at an energy no worse than the converged one, so a
/// short run suffices.
const NONNEG_DESCENT_ITERS: usize = 80;

/// Line-search shrink attempts before declaring a stall.
const MAX_BACKTRACKS: usize = 60;

/// Clamp on the curvature-estimated (Barzilai-Borwein) step proposal; the
/// Armijo test still vets whatever the estimate suggests.
const BB_STEP_MIN: f64 = 1e-8;
const BB_STEP_MAX: f64 = 1e2;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stationarity target: descent stops when both the tangent gradient
    /// norm and the full gradient norm at the projected state drop below it.
    pub grad_tol: f64,
    /// Upper bound and first guess of the Armijo step.
    pub step0: f64,
    /// Armijo sufficient-decrease fraction, in (0, 1).
    pub armijo_c: f64,
    /// Step shrink factor, in (0, 1).
    pub armijo_shrink: f64,
    /// Seed for initialization noise and restart perturbations.
    pub seed: u64,
    /// Extra descents from perturbed copies of the initial state; the lowest
    /// energy wins.
    pub restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 2000,
            grad_tol: 1e-6,
            step0: 1.0,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            seed: 1,
            restarts: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |reason: &str| {
            Err(SolverError::BadConfig { reason: reason.to_string() })
        };
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return bad("step0 must be positive and finite");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie strictly between 0 and 1");
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return bad("armijo_shrink must lie strictly between 0 and 1");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {reason}")]
    BadConfig { reason: String },
    #[error("bump geometry invalid for component {component}: {reason}")]
    Geometry { component: usize, reason: String },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("state left the projectable cone at iteration {iteration}: {source}")]
    NotProjectableMidRun {
        iteration: usize,
        source: EnergyError,
        last_good: Box<SystemState>,
    },
    #[error("line search stalled at iteration {iteration} (energy {energy:.12e}); the gradient tolerance may be below what the discretization supports")]
    LineSearchStall {
        iteration: usize,
        energy: f64,
        /// Present for grid solves; the radial solver reports none.
        last_good: Option<Box<SystemState>>,
    },
    #[error("no convergence within {iterations} iterations (gradient norm {grad_norm:.3e})")]
    MaxIters {
        iterations: usize,
        grad_norm: f64,
        /// Present for grid solves; the radial solver reports none.
        last_good: Option<Box<SystemState>>,
    },
}

/// One line of the descent trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub energy: f64,
    pub grad_norm: f64,
}

/// Result of a finished minimization.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Final state on the constraint manifold (components carry their
    /// converged norms, not unit norms).
    pub state: SystemState,
    /// Converged energy: the least-energy estimate of the posed problem.
    pub energy: f64,
    /// Squared norm of each component under the state's quadratic form.
    pub norms_sq: Vec<f64>,
    /// Full gradient norm at the final projected state (dual norm of the
    /// preconditioner inner product).
    pub stationarity: f64,
    pub iterations: usize,
    /// (iteration, energy, tangent gradient norm) per iteration, both
    /// descent phases concatenated; nonincreasing in energy.
    pub history: Vec<HistoryEntry>,
    /// Whether the final state is nonnegative up to roundoff.
    pub nonnegative: bool,
    /// False if any line-search trial had to be rejected for leaving the
    /// projectable cone.
    pub projectable_throughout: bool,
    /// Energy drift of the nonnegativity pass (absolute values + short
    /// re-descent); near zero when the minimizer is already signless.
    pub energy_change_on_abs: f64,
}

/// Smooth compactly supported profile exp(-1/(1-s^2)) for s = |x-c|/r < 1.
fn mollifier(dist_sq: f64, radius: f64) -> f64 {
    let s2 = dist_sq / (radius * radius);
    if s2 < 1.0 {
        (-1.0 / (1.0 - s2)).exp()
    } else {
        0.0
    }
}

/// Multiplicative seeded noise on the support of f; zero values stay zero,
/// so supports never grow.
fn perturb_in_place(f: &mut Field, rng: &mut ChaCha8Rng, amplitude: f64) {
    if amplitude == 0.0 {
        return;
    }
    for v in f.values_mut() {
        if *v != 0.0 {
            *v *= 1.0 + amplitude * rng.gen_range(-1.0..1.0);
        }
    }
}

/// Placement of one initial bump: center and radius of its support ball.
struct BumpSpec {
    center: Vec<f64>,
    radius: f64,
}

/// Lay out one bump per component: centered in its attraction ball, with
/// components sharing an exact center split into disjoint slabs along the
/// first axis, and radii capped so that supports of different centers stay
/// disjoint whenever the centers differ.
fn bump_layout(params: &Params, kind: ProblemKind, comp_ids: &[usize]) -> Vec<BumpSpec> {
    let radius = params.attraction_radius(kind);
    let centers: Vec<Vec<f64>> = comp_ids
        .iter()
        .map(|&i| params.attraction_center(kind, i))
        .collect();

    // Group components by exactly equal centers.
    let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for (local, c) in centers.iter().enumerate() {
        match groups.iter_mut().find(|(gc, _)| gc == c) {
            Some((_, members)) => members.push(local),
            None => groups.push((c.clone(), vec![local])),
        }
    }

    // Minimal distance between distinct group centers caps the support size
    // so that distinct-center components never overlap.
    let mut min_dist = f64::INFINITY;
    for i in 0..groups.len() {
        for j in (i + 1)..groups.len() {
            let dist: f64 = groups[i]
                .0
                .iter()
                .zip(&groups[j].0)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(dist);
        }
    }
    let cap = if min_dist.is_finite() { radius.min(0.45 * min_dist) } else { radius };

    let mut specs: Vec<Option<BumpSpec>> = (0..comp_ids.len()).map(|_| None).collect();
    for (gc, members) in &groups {
        let g = members.len();
        if g == 1 {
            specs[members[0]] = Some(BumpSpec { center: gc.clone(), radius: 0.8 * cap });
        } else {
            for (k, &local) in members.iter().enumerate() {
                let off = (-1.0 + (2.0 * k as f64 + 1.0) / g as f64) * cap;
                let r = 0.9 * (cap / g as f64).min(cap - off.abs());
                let mut center = gc.clone();
                center[0] += off;
                specs[local] = Some(BumpSpec { center, radius: r });
            }
        }
    }
    specs.into_iter().map(|s| s.expect("every component placed")).collect()
}

/// Initial state: one smooth bump per component inside its attraction ball,
/// supports pairwise disjoint whenever centers differ, multiplicative seeded
/// noise of the given amplitude, every component normalized to unit norm.
pub fn init_bumps_with(
    grid: &Arc<Grid>,
    params: &Params,
    kind: ProblemKind,
    seed: u64,
    amplitude: f64,
) -> Result<SystemState, SolverError> {
    let mut state = SystemState::new(grid, params.clone(), kind)?;
    let ell = state.component_count();
    let comp_ids: Vec<usize> = (0..ell).map(|k| state.component_id(k)).collect();

    // The attraction balls themselves must fit in the box.
    let radius = params.attraction_radius(kind);
    for (local, &i) in comp_ids.iter().enumerate() {
        let center = params.attraction_center(kind, i);
        if center.iter().any(|c| c.abs() + radius > grid.half_width()) {
            return Err(SolverError::Geometry {
                component: local,
                reason: format!(
                    "attraction ball of radius {radius} at {center:?} leaves the box of half-width {}",
                    grid.half_width()
                ),
            });
        }
    }

    let specs = bump_layout(params, kind, &comp_ids);
    let mass = state.mass();
    for (local, spec) in specs.iter().enumerate() {
        let center = spec.center.clone();
        let r = spec.radius;
        let mut f = Field::from_fn(grid, |x| {
            let dist_sq: f64 = x.iter().zip(&center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
            mollifier(dist_sq, r)
        });
        if f.sup_abs() == 0.0 {
            return Err(SolverError::Geometry {
                component: local,
                reason: format!(
                    "bump of radius {r} at {center:?} contains no grid node (grid too coarse)"
                ),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (comp_ids[local] as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        perturb_in_place(&mut f, &mut rng, amplitude);
        let norm_sq = grid::inner_h1(&f, &f, mass);
        f.scale(1.0 / norm_sq.sqrt());
        state.set_component(local, f)?;
    }
    Ok(state)
}

/// `init_bumps_with` at the default noise amplitude.
pub fn init_bumps(
    grid: &Arc<Grid>,
    params: &Params,
    kind: ProblemKind,
    seed: u64,
) -> Result<SystemState, SolverError> {
    init_bumps_with(grid, params, kind, seed, DEFAULT_BUMP_AMPLITUDE)
}

/// Everything one descent iteration learns about the current state.
struct IterationData {
    scalings: Vec<f64>,
    energy: f64,
    /// Tangent (descent) directions, one per component.
    directions: Vec<Field>,
    /// Stencil images of the directions (kept for curvature estimates).
    dir_helmholtz: Vec<Field>,
    /// Squared norms of the directions under the quadratic form.
    dir_norms_sq: Vec<f64>,
    /// Full gradient norm at the projected state.
    grad_norm_full: f64,
}

/// Outcome of one descent run (either phase).
struct DescentOutcome {
    scalings: Vec<f64>,
    energy: f64,
    stationarity: f64,
    iterations: usize,
    history: Vec<HistoryEntry>,
    projectable_throughout: bool,
}

/// Euler-Lagrange residual of component k at the projected state t * u,
/// reusing the stencil image of u_k: (-Delta + mass^2)(t_k u_k) = t_k helm_k.
/// Same formula as `energy::grad_component` on the materialized state.
fn projected_gradient(
    state: &SystemState,
    helm: &[Field],
    t: &[f64],
    k: usize,
) -> Field {
    let p = state.params().p;
    let mu = state.mu_of(k);
    let pw_self = Pow::new(2.0 * p - 1.0);
    let pw_other = Pow::new(p);
    let pw_own = Pow::new(p - 1.0);
    let mut out = helm[k].clone();
    out.scale(t[k]);
    let uk = state.component(k).values();
    let tk = t[k];
    let mask = state.mask(k);
    let coupled: Vec<(f64, f64, &[f64])> = (0..state.component_count())
        .filter(|&j| j != k)
        .map(|j| (state.lambda_of(k, j), t[j], state.component(j).values()))
        .collect();
    grid::map_indexed(out.values_mut(), |i, g| {
        let m = tk * uk[i];
        let mut v = *g - mu * f64::from(mask[i]) * pw_self.signed(m);
        if !coupled.is_empty() {
            let mut cross = 0.0;
            for (lam, tj, other) in &coupled {
                cross += lam * pw_other.abs(tj * other[i]);
            }
            v -= cross * pw_own.signed(m);
        }
        *g = v;
    });
    out
}

/// Renormalize every component to unit norm, refreshing the stencil images.
fn normalize_components(state: &mut SystemState, helm: &mut Vec<Field>) -> Result<(), EnergyError> {
    let mass = state.mass();
    let vol = state.grid().cell_volume();
    helm.clear();
    for k in 0..state.component_count() {
        let h = grid::apply_helmholtz(state.component(k), mass);
        let a = vol * grid::pairwise_dot(h.values(), state.component(k).values());
        if !(a > 0.0) {
            return Err(EnergyError::ZeroComponent { component: k, value: a });
        }
        let s = a.sqrt();
        let mut h = h;
        h.scale(1.0 / s);
        // Scaling h and u by the same factor keeps h the exact stencil
        // image of the renormalized component.
        state.components_mut()[k].scale(1.0 / s);
        helm.push(h);
    }
    Ok(())
}

/// Projection, energy, and descent directions at the current normalized
/// state. `riesz` maps dual gradients back to the function space exactly.
fn analyze(
    state: &SystemState,
    helm: &[Field],
    riesz: &grid::SpectralHelmholtz,
) -> Result<IterationData, SolverError> {
    let p = state.params().p;
    let ell = state.component_count();
    let vol = state.grid().cell_volume();
    let mass = state.mass();

    let (b, d) = energy::pointwise_coeffs(state, state.components());
    let coeffs = NehariCoeffs { a: vec![1.0; ell], b, d };
    let t = energy::project_scalings(&coeffs, p)?;
    let energy_now = energy::energy_from_coeffs(&coeffs.scaled(&t, p), p);

    let mut directions = Vec::with_capacity(ell);
    let mut dir_helmholtz = Vec::with_capacity(ell);
    let mut dir_norms_sq = Vec::with_capacity(ell);
    let mut grad_sq_full = 0.0;
    for k in 0..ell {
        let g_residual = projected_gradient(state, helm, &t, k);
        let g = riesz.solve(&g_residual, mass);
        grad_sq_full += vol * grid::pairwise_dot(g_residual.values(), g.values());
        // Tangency coefficient through the stencil image: <g, u_k> under
        // the quadratic form.
        let beta = vol * grid::pairwise_dot(helm[k].values(), g.values());

        let mut dir = g;
        dir.axpy(-beta, state.component(k));
        dir.scale(-t[k]);
        let dh = grid::apply_helmholtz(&dir, mass);
        dir_norms_sq.push(vol * grid::pairwise_dot(dh.values(), dir.values()));
        dir_helmholtz.push(dh);
        directions.push(dir);
    }
    Ok(IterationData {
        scalings: t,
        energy: energy_now,
        directions,
        dir_helmholtz,
        dir_norms_sq,
        grad_norm_full: grad_sq_full.max(0.0).sqrt(),
    })
}

/// Core descent loop on the normalized state. On success the state holds the
/// final normalized iterate; the outcome carries the scalings to the
/// constraint manifold. With `strict` unset, hitting the iteration budget is
/// not an error (used by the short nonnegativity pass, which accepts the
/// best state its budget buys).
fn descend(
    state: &mut SystemState,
    config: &SolverConfig,
    max_iters: usize,
    strict: bool,
) -> Result<DescentOutcome, SolverError> {
    let p = state.params().p;
    let ell = state.component_count();
    let vol = state.grid().cell_volume();
    let riesz = grid::SpectralHelmholtz::new(state.grid());
    let mut helm: Vec<Field> = Vec::new();
    let mut history = Vec::new();
    let mut projectable_throughout = true;
    let mut alpha_prev = config.step0;
    let mut last_good: Option<(Vec<f64>, f64)> = None;
    // Last accepted move: directions, their squared norms, accepted step.
    let mut prev_step: Option<(Vec<Field>, Vec<f64>, f64)> = None;

    let snapshot = |state: &SystemState, t: &[f64]| {
        let mut s = state.clone();
        for (k, f) in s.components_mut().iter_mut().enumerate() {
            f.scale(t[k]);
        }
        Box::new(s)
    };

    for iter in 0..max_iters {
        normalize_components(state, &mut helm)?;
        let data = match analyze(state, &helm, &riesz) {
            Ok(d) => d,
            Err(SolverError::Energy(e)) if iter > 0 => {
                let (t, _) = last_good.as_ref().expect("iter > 0 has a last good state");
                return Err(SolverError::NotProjectableMidRun {
                    iteration: iter,
                    source: e,
                    last_good: snapshot(state, t),
                });
            }
            Err(e) => return Err(e),
        };

        let grad_norm = data.dir_norms_sq.iter().sum::<f64>().max(0.0).sqrt();
        history.push(HistoryEntry { iteration: iter, energy: data.energy, grad_norm });
        last_good = Some((data.scalings.clone(), data.energy));

        if grad_norm <= config.grad_tol && data.grad_norm_full <= config.grad_tol {
            return Ok(DescentOutcome {
                scalings: data.scalings,
                energy: data.energy,
                stationarity: data.grad_norm_full,
                iterations: iter,
                history,
                projectable_throughout,
            });
        }

        // Armijo backtracking along the renormalized tangent path. The model
        // decrease uses the squared direction norm: the directional
        // derivative of Psi along d is -||d||^2 by construction.
        let decrease: f64 = data.dir_norms_sq.iter().sum();
        let slack = 4.0 * f64::EPSILON * data.energy.abs();
        // First proposal: a Barzilai-Borwein step from the secant pair of
        // the last accepted move (s = alpha*d_old, y = d_old - d_new up to
        // the renormalization). Stiff couplings make the energy's curvature
        // spread over orders of magnitude, and a curvature-adapted step
        // reaches the tolerance in far fewer iterations than a monotone
        // step-halving schedule; the Armijo test below still guards every
        // accept, so descent stays monotone.
        let bb = prev_step.as_ref().and_then(|(old_dirs, old_norms, old_alpha)| {
            let mut s_dot_s = 0.0;
            let mut s_dot_y = 0.0;
            for k in 0..ell {
                let cross = vol
                    * grid::pairwise_dot(data.dir_helmholtz[k].values(), old_dirs[k].values());
                s_dot_s += old_alpha * old_alpha * old_norms[k];
                s_dot_y += old_alpha * (old_norms[k] - cross);
            }
            (s_dot_y > f64::EPSILON * s_dot_s.max(f64::MIN_POSITIVE))
                .then(|| (s_dot_s / s_dot_y).clamp(BB_STEP_MIN, BB_STEP_MAX))
        });
        let mut alpha = match bb {
            Some(a) => a,
            None => config.step0.min(alpha_prev / config.armijo_shrink),
        };
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<Field> = (0..ell)
                .map(|k| {
                    let mut f = state.component(k).clone();
                    f.axpy(alpha, &data.directions[k]);
                    f
                })
                .collect();
            // Tangency: ||u_k + alpha d_k||^2 = 1 + alpha^2 ||d_k||^2, no
            // stencil needed for the trial's quadratic coefficients.
            let a_trial: Vec<f64> =
                (0..ell).map(|k| 1.0 + alpha * alpha * data.dir_norms_sq[k]).collect();
            let (b_trial, d_trial) = energy::pointwise_coeffs(state, &trial);
            let coeffs = NehariCoeffs { a: a_trial.clone(), b: b_trial, d: d_trial };
            match energy::project_scalings(&coeffs, p) {
                Ok(t_trial) => {
                    let psi_trial =
                        energy::energy_from_coeffs(&coeffs.scaled(&t_trial, p), p);
                    if psi_trial <= data.energy - config.armijo_c * alpha * decrease + slack {
                        for (k, mut f) in trial.into_iter().enumerate() {
                            f.scale(1.0 / a_trial[k].sqrt());
                            state.components_mut()[k] = f;
                        }
                        alpha_prev = alpha;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {
                    projectable_throughout = false;
                }
            }
            alpha *= config.armijo_shrink;
        }
        if !accepted {
            return Err(SolverError::LineSearchStall {
                iteration: iter,
                energy: data.energy,
                last_good: Some(snapshot(state, &data.scalings)),
            });
        }
        prev_step = Some((data.directions, data.dir_norms_sq, alpha_prev));
    }

    // Budget exhausted: evaluate the final iterate once more for reporting.
    normalize_components(state, &mut helm)?;
    let data = analyze(state, &helm, &riesz)?;
    let grad_norm = data.dir_norms_sq.iter().sum::<f64>().max(0.0).sqrt();
    history.push(HistoryEntry { iteration: max_iters, energy: data.energy, grad_norm });
    let converged = grad_norm <= config.grad_tol && data.grad_norm_full <= config.grad_tol;
    if strict && !converged {
        return Err(SolverError::MaxIters {
            iterations: max_iters,
            grad_norm,
            last_good: Some(snapshot(state, &data.scalings)),
        });
    }
    Ok(DescentOutcome {
        scalings: data.scalings,
        energy: data.energy,
        stationarity: data.grad_norm_full,
        iterations: max_iters,
        history,
        projectable_throughout,
    })
}

/// One full minimization from a given start: main descent to the gradient
/// tolerance, then the nonnegativity pass (componentwise absolute values,
/// reproject, short re-descent).
fn minimize_single(
    state: &mut SystemState,
    config: &SolverConfig,
) -> Result<SolveReport, SolverError> {
    let main = descend(state, config, config.max_iters, true)?;
    let energy_before = main.energy;

    // Absolute values cannot raise the constrained energy: the quadratic
    // form contracts under |.| while the pointwise terms are even.
    for f in state.components_mut() {
        let flipped = f.abs_values();
        *f = flipped;
    }
    let post = descend(state, config, NONNEG_DESCENT_ITERS, false)?;

    let mut final_state = state.clone();
    for (k, f) in final_state.components_mut().iter_mut().enumerate() {
        f.scale(post.scalings[k]);
    }
    let nonnegative = final_state.components().iter().all(|f| {
        let sup = f.sup_abs();
        sup > 0.0 && f.min_value() >= -1e-10 * sup
    });

    let mut history = main.history;
    let offset = main.iterations + 1;
    history.extend(post.history.iter().map(|h| HistoryEntry {
        iteration: h.iteration + offset,
        energy: h.energy,
        grad_norm: h.grad_norm,
    }));

    Ok(SolveReport {
        energy: post.energy,
        norms_sq: post.scalings.iter().map(|t| t * t).collect(),
        stationarity: post.stationarity,
        iterations: main.iterations + post.iterations,
        history,
        nonnegative,
        projectable_throughout: main.projectable_throughout && post.projectable_throughout,
        energy_change_on_abs: post.energy - energy_before,
        state: final_state,
    })
}

/// Minimize the constrained energy from the given start. `config.restarts`
/// extra runs start from seeded perturbations of the same state; the lowest
/// converged energy wins. The report's state sits on the constraint
/// manifold, with `energy` the least-energy estimate.
pub fn minimize(state0: &SystemState, config: &SolverConfig) -> Result<SolveReport, SolverError> {
    config.validate()?;
    let mut best: Option<SolveReport> = None;
    let mut first_err: Option<SolverError> = None;
    for r in 0..=config.restarts {
        let mut state = state0.clone();
        if r > 0 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
            for f in state.components_mut() {
                perturb_in_place(f, &mut rng, 0.05);
            }
        }
        match minimize_single(&mut state, config) {
            Ok(report) => {
                if best.as_ref().map_or(true, |b| report.energy < b.energy) {
                    best = Some(report);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(report) => Ok(report),
        None => Err(first_err.expect("at least one run attempted")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::nehari_coeffs;

    fn grid3(n: usize, half_width: f64) -> Arc<Grid> {
        Arc::new(Grid::new(3, n, half_width).unwrap())
    }

    fn one_comp_params(eps: f64) -> Params {
        Params {
            dim: 3,
            p: 2.0,
            ell: 1,
            mu: vec![1.0],
            lambda: vec![vec![0.0]],
            centers: vec![vec![0.0, 0.0, 0.0]],
            eps,
        }
    }

    fn two_comp_params(eps: f64, centers: Vec<Vec<f64>>) -> Params {
        Params {
            dim: 3,
            p: 2.0,
            ell: 2,
            mu: vec![1.0, 1.0],
            lambda: vec![vec![0.0, -1.0], vec![-1.0, 0.0]],
            centers,
            eps,
        }
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let ok = SolverConfig::default();
        assert!(ok.validate().is_ok());
        for (field, cfg) in [
            ("max_iters", SolverConfig { max_iters: 0, ..ok.clone() }),
            ("grad_tol", SolverConfig { grad_tol: 0.0, ..ok.clone() }),
            ("step0", SolverConfig { step0: -1.0, ..ok.clone() }),
            ("armijo_c", SolverConfig { armijo_c: 1.0, ..ok.clone() }),
            ("armijo_shrink", SolverConfig { armijo_shrink: 0.0, ..ok.clone() }),
        ] {
            assert!(
                matches!(cfg.validate(), Err(SolverError::BadConfig { .. })),
                "{field} should be rejected"
            );
        }
    }

    #[test]
    fn bumps_are_normalized_supported_and_projectable() {
        let grid = grid3(24, 4.0);
        let params = one_comp_params(0.5);
        let state = init_bumps(&grid, &params, ProblemKind::RescaledU, 7).unwrap();
        let c = nehari_coeffs(&state);
        assert!((c.a[0] - 1.0).abs() <= 1e-12, "unit norm, got {}", c.a[0]);
        assert!(c.b[0] > 0.0, "projectable at initialization");

        // Support sits inside the attraction ball of radius 1 at the origin.
        let f = state.component(0);
        let mut x = [0.0; crate::grid::MAX_DIM];
        for idx in 0..grid.node_count() {
            if f.values()[idx] != 0.0 {
                grid.point_of(idx, &mut x);
                let r2: f64 = x[..3].iter().map(|v| v * v).sum();
                assert!(r2 < 1.0, "support node outside the attraction ball");
            }
        }
    }

    #[test]
    fn same_center_components_get_disjoint_half_supports() {
        let grid = grid3(28, 3.0);
        let params = two_comp_params(0.0, vec![vec![0.0; 3], vec![0.0; 3]]);
        let state = init_bumps(&grid, &params, ProblemKind::LimitSystem, 3).unwrap();
        let u0 = state.component(0).values();
        let u1 = state.component(1).values();
        let mut x = [0.0; crate::grid::MAX_DIM];
        for idx in 0..grid.node_count() {
            assert!(
                u0[idx] == 0.0 || u1[idx] == 0.0,
                "supports overlap at node {idx}"
            );
            grid.point_of(idx, &mut x);
            if u0[idx] != 0.0 {
                assert!(x[0] < 0.0, "first bump lives in the left half");
            }
            if u1[idx] != 0.0 {
                assert!(x[0] > 0.0, "second bump lives in the right half");
            }
        }
        let c = nehari_coeffs(&state);
        assert_eq!(c.d[0][1], 0.0, "disjoint supports decouple exactly");
        assert!(c.b[0] > 0.0 && c.b[1] > 0.0);
    }

    #[test]
    fn distinct_far_centers_decouple_and_fit_their_balls() {
        let grid = grid3(32, 6.0);
        let params = two_comp_params(0.4, vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]);
        // Rescaled variable: centers at +-2.5, attraction radius 1.
        let state = init_bumps(&grid, &params, ProblemKind::RescaledU, 11).unwrap();
        let c = nehari_coeffs(&state);
        assert_eq!(c.d[0][1], 0.0);
        assert!(c.b[0] > 0.0 && c.b[1] > 0.0);
    }

    #[test]
    fn geometry_errors_are_detected() {
        // Ball of radius 1 at (10, 0, 0): outside the box of half-width 6.
        let grid = grid3(16, 6.0);
        let params = one_comp_params(0.1);
        let mut far = params.clone();
        far.centers = vec![vec![1.0, 0.0, 0.0]];
        match init_bumps(&grid, &far, ProblemKind::RescaledU, 1) {
            Err(SolverError::Geometry { component: 0, .. }) => {}
            other => panic!("expected geometry error, got {other:?}"),
        }

        // Grid too coarse to see the bump: n = 2 puts the nearest nodes at
        // (+-2, +-2, +-2), all outside a radius-0.8 bump at the origin.
        let coarse = grid3(2, 6.0);
        let mut tiny = params;
        tiny.eps = 0.0;
        match init_bumps(&coarse, &tiny, ProblemKind::LimitSystem, 1) {
            Err(SolverError::Geometry { .. }) => {}
            other => panic!("expected unresolved-bump error, got {other:?}"),
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let grid = grid3(20, 4.0);
        let params = two_comp_params(0.5, vec![vec![0.5, 0.0, 0.0], vec![-0.5, 0.0, 0.0]]);
        let s1 = init_bumps(&grid, &params, ProblemKind::RescaledU, 42).unwrap();
        let s2 = init_bumps(&grid, &params, ProblemKind::RescaledU, 42).unwrap();
        for k in 0..2 {
            assert_eq!(s1.component(k).values(), s2.component(k).values());
        }
        let s3 = init_bumps(&grid, &params, ProblemKind::RescaledU, 43).unwrap();
        assert_ne!(s1.component(0).values(), s3.component(0).values());

        // Zero amplitude removes the noise: states from different seeds agree.
        let q1 = init_bumps_with(&grid, &params, ProblemKind::RescaledU, 1, 0.0).unwrap();
        let q2 = init_bumps_with(&grid, &params, ProblemKind::RescaledU, 2, 0.0).unwrap();
        assert_eq!(q1.component(0).values(), q2.component(0).values());
    }

    #[test]
    fn internal_gradient_matches_energy_module_on_materialized_state() {
        let grid = grid3(14, 3.0);
        let params = two_comp_params(0.0, vec![vec![0.0; 3], vec![0.0; 3]]);
        let state = init_bumps(&grid, &params, ProblemKind::LimitSystem, 5).unwrap();
        let mass = state.mass();
        let helm: Vec<Field> = (0..2)
            .map(|k| grid::apply_helmholtz(state.component(k), mass))
            .collect();
        let t = [1.3, 0.8];

        let mut materialized = state.clone();
        for (k, f) in materialized.components_mut().iter_mut().enumerate() {
            f.scale(t[k]);
        }
        for k in 0..2 {
            let fused = projected_gradient(&state, &helm, &t, k);
            let reference = energy::grad_component(&materialized, k);
            let sup = reference.sup_abs();
            let max_diff = fused
                .values()
                .iter()
                .zip(reference.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0_f64, f64::max);
            assert!(max_diff <= 1e-12 * sup.max(1.0), "component {k}: {max_diff}");
        }
    }
}
