//! Experiment harness over the solver: rescalings between problem frames,
//! concentration and segregation diagnostics, warm-started parameter sweeps
//! with independent reference solutions, decay and sup-location checks, and
//! scaling-exponent fits.

use std::sync::Arc;

use crate::energy::{self, EnergyError, Pow, SystemState};
use crate::grid::{
    self, grad_sq_density, integrate_nodes, map_indexed, restrict_ball_integral, value_at, Field,
    Grid, GridError, MAX_DIM,
};
use crate::model::{Params, ProblemKind};
use crate::radial::{solve_radial_limit_equation, RadialSolution};
use crate::solver::{
    init_bumps, init_bumps_with, minimize, SolveReport, SolverConfig, SolverError,
};

/// Relative squared-mass of a source field allowed to fall outside the
/// window a rescaling samples before the rescaling is rejected.
pub const COVERAGE_TOL: f64 = 1e-6;

/// Support-extraction threshold, as a fraction of each component's sup.
pub const SUPPORT_THRESHOLD_FRACTION: f64 = 1e-3;

/// Default concentration radii in the original variable; they bracket the
/// shrinking attraction balls of the default eps sweeps.
pub const DEFAULT_DELTAS: [f64; 3] = [0.25, 0.5, 1.0];

/// Mesh spacing the sweep grids aim for — the spacing of the default desk
/// grid (n = 64, half-width 8).
const TARGET_SPACING: f64 = 16.0 / 65.0;

/// Box margin beyond the farthest rescaled attraction center. Each
/// component's profile lives on a unit scale around its center with a
/// polynomially decaying tail, so an additive margin of a few profile widths
/// is the right shape for the truncation budget; a multiplicative margin on
/// the center span would grow the box ~10x per eps halving for no accuracy
/// gain. The insensitivity of reported quantities to the margin is covered
/// by the box-doubling checks on the limit-kind solves.
const GRID_MARGIN: f64 = 6.0;

/// Fixed grid for single-core sweeps and lambda sweeps: all centers sit at
/// the origin, so the default desk grid resolves every row.
const SINGLE_CORE_N: usize = 64;
const SINGLE_CORE_HALF_WIDTH: f64 = 8.0;

/// Resolution of the radial reference solution used in distinct-centers
/// sweeps.
const RADIAL_REFERENCE_CELLS: usize = 2048;
const RADIAL_REFERENCE_RADIUS: f64 = 8.0;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{lost:.3e} of the source mass falls outside the sampled window (tolerance {tol:.1e})")]
    Coverage { lost: f64, tol: f64 },
    #[error("cannot form ratios over an identically zero field")]
    ZeroDenominator,
    #[error("invalid sweep request: {reason}")]
    BadSweep { reason: String },
}

/// Which limiting regime an eps sweep probes: components concentrating at
/// pairwise distinct centers (decoupling limit) or all at one point
/// (coupled limit system).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    DistinctCenters,
    SingleCore,
}

// ---------------------------------------------------------------------------
// Rescalings between the problem frames.
// ---------------------------------------------------------------------------

/// Relative squared mass of `src` outside the axis-aligned window [lo, hi].
fn mass_outside_window(src: &Field, lo: &[f64], hi: &[f64]) -> f64 {
    let grid = src.grid();
    let n = grid.n();
    let dim = grid.dim();
    let vals = src.values();
    let pad = 1e-9 * grid.h();
    let mut inside = vec![false; dim * n];
    for d in 0..dim {
        for k in 0..n {
            let x = grid.axis_coord(k);
            inside[d * n + k] = x >= lo[d] - pad && x <= hi[d] + pad;
        }
    }
    let total = grid::tree_sum(0, vals.len(), &|i| vals[i] * vals[i]);
    if total <= 0.0 {
        return 0.0;
    }
    let lost = grid::tree_sum(0, vals.len(), &|idx| {
        let mut rest = idx;
        let mut out = false;
        for d in (0..dim).rev() {
            if !inside[d * n + rest % n] {
                out = true;
            }
            rest /= n;
        }
        if out {
            vals[idx] * vals[idx]
        } else {
            0.0
        }
    });
    lost / total
}

/// Map a field from the original frame to the rescaled frame:
/// out(x) = eps^(1/(p-1)) * v(eps*x + center), multilinearly interpolated on
/// the target grid. Node-to-node (hence exact) when the grids are
/// commensurate. Fails if more than `COVERAGE_TOL` of the source's squared
/// mass lies outside the sampled window.
pub fn rescale_v_to_u(
    v: &Field,
    p: f64,
    eps: f64,
    center: &[f64],
    target: &Arc<Grid>,
) -> Result<Field, StudyError> {
    let dim = target.dim();
    assert_eq!(v.grid().dim(), dim, "source/target dimension mismatch");
    assert_eq!(center.len(), dim, "center dimension mismatch");
    assert!(eps > 0.0 && eps.is_finite(), "scale must be positive");
    let lt = target.half_width();
    let lo: Vec<f64> = center.iter().map(|c| c - eps * lt).collect();
    let hi: Vec<f64> = center.iter().map(|c| c + eps * lt).collect();
    let lost = mass_outside_window(v, &lo, &hi);
    if lost > COVERAGE_TOL {
        return Err(StudyError::Coverage { lost, tol: COVERAGE_TOL });
    }
    let amp = eps.powf(1.0 / (p - 1.0));
    Ok(Field::from_fn(target, |x| {
        let mut q = [0.0f64; MAX_DIM];
        for d in 0..dim {
            q[d] = eps * x[d] + center[d];
        }
        amp * value_at(v, &q[..dim])
    }))
}

/// Recenter a rescaled-frame field on one concentration point:
/// out(x) = u(x + center/eps). Node-to-node when center/eps is a lattice
/// vector of a shared grid. Coverage is checked like `rescale_v_to_u`.
pub fn rescale_u_to_w(
    u: &Field,
    eps: f64,
    center: &[f64],
    target: &Arc<Grid>,
) -> Result<Field, StudyError> {
    let dim = target.dim();
    assert_eq!(u.grid().dim(), dim, "source/target dimension mismatch");
    assert_eq!(center.len(), dim, "center dimension mismatch");
    assert!(eps > 0.0 && eps.is_finite(), "scale must be positive");
    let lt = target.half_width();
    let lo: Vec<f64> = center.iter().map(|c| c / eps - lt).collect();
    let hi: Vec<f64> = center.iter().map(|c| c / eps + lt).collect();
    let lost = mass_outside_window(u, &lo, &hi);
    if lost > COVERAGE_TOL {
        return Err(StudyError::Coverage { lost, tol: COVERAGE_TOL });
    }
    let shift: Vec<f64> = center.iter().map(|c| c / eps).collect();
    Ok(Field::from_fn(target, |x| {
        let mut q = [0.0f64; MAX_DIM];
        for d in 0..dim {
            q[d] = x[d] + shift[d];
        }
        value_at(u, &q[..dim])
    }))
}

// ---------------------------------------------------------------------------
// Pointwise diagnostics.
// ---------------------------------------------------------------------------

/// Concentration ratios at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaRatios {
    pub delta: f64,
    /// Share of the quadratic-form density |grad f|^2 + mass^2 f^2 inside
    /// the ball.
    pub ratio_grad: f64,
    /// Share of the |f|^(2p) mass inside the ball.
    pub ratio_2p: f64,
}

/// Fraction of the field's energy density and 2p-mass inside balls around
/// `center`, one entry per radius. Both ratios lie in [0, 1]. The gradient
/// density uses centered differences; the radius list is taken in the
/// field's own frame (callers convert across frames with the exact radius
/// correspondence delta <-> delta/eps).
pub fn concentration_ratios(
    f: &Field,
    mass: f64,
    p: f64,
    center: &[f64],
    deltas: &[f64],
) -> Result<Vec<DeltaRatios>, StudyError> {
    if let Some(&bad) = deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(StudyError::BadSweep { reason: format!("radius must be positive, got {bad}") });
    }
    let vals = f.values();
    let mut density = grad_sq_density(f);
    let m2 = mass * mass;
    map_indexed(density.values_mut(), |idx, v| {
        *v += m2 * vals[idx] * vals[idx];
    });
    let mut pow_field = Field::zeros(f.grid());
    let pw = Pow::new(2.0 * p);
    map_indexed(pow_field.values_mut(), |idx, v| {
        *v = pw.abs(vals[idx]);
    });
    let denom_grad = grid::integrate(&density);
    let denom_pow = grid::integrate(&pow_field);
    if denom_grad <= 0.0 || denom_pow <= 0.0 {
        return Err(StudyError::ZeroDenominator);
    }
    Ok(deltas
        .iter()
        .map(|&delta| DeltaRatios {
            delta,
            ratio_grad: (restrict_ball_integral(&density, center, delta) / denom_grad)
                .clamp(0.0, 1.0),
            ratio_2p: (restrict_ball_integral(&pow_field, center, delta) / denom_pow)
                .clamp(0.0, 1.0),
        })
        .collect())
}

/// Decay diagnostic around an arbitrary center: the shell value
/// kappa = max of u over |x-center| in [1-h, 1+h], and the worst relative
/// excess of u(x)*|x-center|^(dim-2) over kappa on 1+h <= |x-center| <=
/// r_max. A field at or below the power-law envelope everywhere gives a
/// nonpositive violation; u identically zero outside the unit ball gives -1.
pub fn decay_check_around(u: &Field, center: &[f64], r_max: f64) -> (f64, f64) {
    let grid = u.grid();
    let dim = grid.dim();
    assert_eq!(center.len(), dim, "center dimension mismatch");
    let h = grid.h();
    let vals = u.values();
    let power = dim as i32 - 2;
    let inner = (1.0 - h).max(0.0);
    let outer = 1.0 + h;
    let mut kappa = 0.0f64;
    // (value, radius) pairs in the test region, folded on the fly.
    let mut worst_scaled = f64::NEG_INFINITY;
    let mut any_outside = false;
    let mut pt = [0.0f64; MAX_DIM];
    for idx in 0..vals.len() {
        grid.point_of(idx, &mut pt);
        let mut r2 = 0.0;
        for d in 0..dim {
            let dx = pt[d] - center[d];
            r2 += dx * dx;
        }
        let r = r2.sqrt();
        if r >= inner && r <= outer {
            kappa = kappa.max(vals[idx]);
        }
        if r > outer && r <= r_max {
            any_outside = true;
            worst_scaled = worst_scaled.max(vals[idx] * r.powi(power));
        }
    }
    if !any_outside {
        return (kappa, -1.0);
    }
    if kappa <= 0.0 {
        // Nothing on the shell: either the field vanishes outside the unit
        // ball (strictly inside any envelope) or no envelope exists.
        return (kappa, if worst_scaled <= 0.0 { -1.0 } else { f64::INFINITY });
    }
    (kappa, worst_scaled / kappa - 1.0)
}

/// Decay diagnostic of a limit-kind solution around the origin, tested up to
/// half the box (the far half is contaminated by the Dirichlet wall).
/// Requires a box of half-width at least 3, so the test region is nonempty.
pub fn decay_check(u: &Field) -> (f64, f64) {
    let grid = u.grid();
    assert!(grid.half_width() >= 3.0, "decay check needs a box of half-width at least 3");
    let center = vec![0.0; grid.dim()];
    decay_check_around(u, &center, grid.half_width() / 2.0)
}

/// Location and value of one component's maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct SupLocation {
    /// Physical coordinates of the maximizing node.
    pub point: Vec<f64>,
    pub value: f64,
    /// Whether the maximizer lies in the component's attraction ball
    /// (evaluated with the same node mask the energy uses).
    pub inside_attraction: bool,
}

/// Locate each component's maximum and test it against that component's
/// attraction ball. Intended for converged nonnegative states; the maximum
/// is over signed values.
pub fn sup_location_check(state: &SystemState) -> Vec<SupLocation> {
    (0..state.component_count())
        .map(|k| {
            let vals = state.component(k).values();
            let mut best = 0usize;
            for (idx, v) in vals.iter().enumerate() {
                if *v > vals[best] {
                    best = idx;
                }
            }
            let mut pt = [0.0f64; MAX_DIM];
            state.grid().point_of(best, &mut pt);
            SupLocation {
                point: pt[..state.grid().dim()].to_vec(),
                value: vals[best],
                inside_attraction: state.mask(k)[best] > 0,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Sweep records.
// ---------------------------------------------------------------------------

/// Overlap diagnostics of one unordered component pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDiagnostics {
    pub i: usize,
    pub j: usize,
    /// The nonnegative integral of |u_i|^p |u_j|^p.
    pub overlap: f64,
    /// |lambda_ij| times the overlap — the quantity the competition bound
    /// controls uniformly.
    pub lambda_times_overlap: f64,
}

/// Everything recorded about one component in one sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRecord {
    /// This component's share of the energy, (p-1)/(2p) times its squared
    /// norm.
    pub energy: f64,
    pub norm_sq: f64,
    /// Concentration ratios, labeled by the original-frame radius.
    pub ratios: Vec<DeltaRatios>,
    /// mass^2 times the squared L2 norm — the part of the quadratic form
    /// that must vanish in the concentration limit.
    pub mass_term: f64,
    pub sup: SupLocation,
    pub decay_kappa: f64,
    pub decay_violation: f64,
    /// mu_i times the 2p-integral over the attraction ball; its sweep
    /// maximum is the uniform bound on |lambda| * overlap.
    pub mu_ball_2p: f64,
    /// Squared original-frame norm, transported exactly:
    /// eps^(dim - 2p/(p-1)) * norm_sq. None outside eps sweeps.
    pub v_norm1_sq: Option<f64>,
    /// L^(2p) distance between this component (recentered) and the
    /// reference limit profile, over the region where the reference is
    /// defined. None when no reference is available.
    pub limit_distance_2p: Option<f64>,
    /// energy minus the reference limit energy for this component.
    pub limit_energy_gap: Option<f64>,
}

/// One sweep row: solver outcome plus every recorded diagnostic.
#[derive(Debug, Clone)]
pub struct StudyRecord {
    /// The swept parameter: eps for eps sweeps, lambda for lambda sweeps.
    pub sweep_value: f64,
    pub energy_total: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub grid_n: usize,
    pub grid_half_width: f64,
    /// Test-function energy above the row's minimum: the projected energy
    /// of noise-free disjoint bumps on the row's own grid.
    pub upper_bound: f64,
    /// Lebesgue measure of the region where two components simultaneously
    /// exceed their support thresholds (max over pairs; 0 for one
    /// component).
    pub support_overlap: f64,
    pub components: Vec<ComponentRecord>,
    pub pairs: Vec<PairDiagnostics>,
}

/// A row paired with the swept value even when the solve failed.
#[derive(Debug)]
pub struct SweepRow {
    pub value: f64,
    pub outcome: Result<StudyRecord, StudyError>,
}

/// Result of an eps sweep, with the limiting reference it was compared to.
#[derive(Debug)]
pub struct EpsSweep {
    pub mode: SweepMode,
    pub rows: Vec<SweepRow>,
    /// Reference limit energy per component (radial solutions for distinct
    /// centers, a direct limit-system solve for a single core).
    pub reference_energies: Vec<f64>,
    pub reference_total: f64,
}

/// Result of a lambda sweep.
#[derive(Debug)]
pub struct LambdaSweep {
    pub rows: Vec<SweepRow>,
    /// Energy of the segregated test configuration (disjoint supports), a
    /// lambda-independent upper bound for every row.
    pub c_star: f64,
    /// Signed relative energy gap (cold minus warm, over |warm|) between the
    /// two descents of the last row. Every reported row already takes the
    /// lower of its cold and warm descents, so this is purely a
    /// branch-divergence diagnostic: values far from zero mean the two
    /// starts found different critical points. None if the last row lacked
    /// a warm candidate or failed.
    pub cold_check_gap: Option<f64>,
}

// ---------------------------------------------------------------------------
// Sweep internals.
// ---------------------------------------------------------------------------

/// Reference limiting solution an eps sweep converges toward.
enum EpsReference {
    /// One radial profile per component (indexed like the state's
    /// components).
    Radial { kappas: Vec<f64>, profiles: Vec<RadialSolution> },
    /// A converged limit-system solve on the fixed single-core grid.
    Limit { energies: Vec<f64>, state: SystemState },
}

impl EpsReference {
    fn energies(&self) -> (Vec<f64>, f64) {
        match self {
            EpsReference::Radial { kappas, .. } => (kappas.clone(), kappas.iter().sum()),
            EpsReference::Limit { energies, .. } => (energies.clone(), energies.iter().sum()),
        }
    }
}

/// Linear interpolation of a radial profile at radius r; zero beyond the
/// last cell, flat inside the first.
fn radial_profile_value(sol: &RadialSolution, r: f64) -> f64 {
    let rs = &sol.r;
    let ws = &sol.w;
    if rs.is_empty() {
        return 0.0;
    }
    if r <= rs[0] {
        return ws[0];
    }
    if r >= rs[rs.len() - 1] {
        return 0.0;
    }
    let dr = rs[1] - rs[0];
    let s = (r - rs[0]) / dr;
    let k = (s.floor() as usize).min(rs.len() - 2);
    let w = s - k as f64;
    ws[k] * (1.0 - w) + ws[k + 1] * w
}

/// Grid for one sweep row: the fixed desk grid when everything sits at the
/// origin, otherwise a box reaching GRID_MARGIN beyond the farthest
/// rescaled center at the desk grid's spacing (node count kept odd so a
/// node sits at the origin).
fn sweep_grid(params: &Params, eps: f64, mode: SweepMode) -> Result<Arc<Grid>, StudyError> {
    let (n, half) = match mode {
        SweepMode::SingleCore => (SINGLE_CORE_N, SINGLE_CORE_HALF_WIDTH),
        SweepMode::DistinctCenters => {
            let span = params
                .centers
                .iter()
                .flat_map(|c| c.iter())
                .fold(0.0f64, |m, &c| m.max(c.abs() / eps));
            let half = span + GRID_MARGIN;
            let mut n = (2.0 * half / TARGET_SPACING - 1.0).ceil() as usize;
            if n % 2 == 0 {
                n += 1;
            }
            (n, half)
        }
    };
    Ok(Arc::new(Grid::new(params.dim, n, half)?))
}

/// Carry a converged state to the next row's grid and mass: per-component
/// translation following each attraction center, resampled multilinearly,
/// then renormalized. Falls back to an error only if a component vanishes
/// entirely (the caller then cold-starts).
fn transport_state(
    prev: &SystemState,
    params_row: &Params,
    kind: ProblemKind,
    grid: &Arc<Grid>,
) -> Result<SystemState, StudyError> {
    let dim = grid.dim();
    let mass = params_row.mass_eps(kind);
    let mut comps = Vec::with_capacity(prev.component_count());
    for k in 0..prev.component_count() {
        let i = prev.component_id(k);
        let old_center = prev.params().attraction_center(kind, i);
        let new_center = params_row.attraction_center(kind, i);
        let shift: Vec<f64> = old_center
            .iter()
            .zip(&new_center)
            .map(|(o, nw)| o - nw)
            .collect();
        let src = prev.component(k);
        let same_spot = shift.iter().all(|s| *s == 0.0) && src.grid().same_as(grid);
        let mut f = if same_spot {
            src.clone()
        } else {
            Field::from_fn(grid, |x| {
                let mut q = [0.0f64; MAX_DIM];
                for d in 0..dim {
                    q[d] = x[d] + shift[d];
                }
                value_at(src, &q[..dim])
            })
        };
        let norm_sq = grid::inner_h1(&f, &f, mass);
        if !(norm_sq > 0.0) {
            return Err(StudyError::BadSweep {
                reason: format!("warm start lost component {k} entirely"),
            });
        }
        f.scale(1.0 / norm_sq.sqrt());
        comps.push(f);
    }
    Ok(SystemState::with_components(grid, params_row.clone(), kind, comps)?)
}

/// Projected energy of the canonical noise-free bump configuration — the
/// explicit test-function upper bound reported next to each row.
fn test_function_energy(
    grid: &Arc<Grid>,
    params: &Params,
    kind: ProblemKind,
) -> Result<f64, StudyError> {
    let state = init_bumps_with(grid, params, kind, 0, 0.0)?;
    Ok(energy::sphere_energy(&state)?)
}

/// Measure of the region where two components simultaneously exceed their
/// support thresholds (theta times each sup); max over pairs.
fn support_overlap_measure(state: &SystemState, sups: &[f64], theta: f64) -> f64 {
    let ell = state.component_count();
    if ell < 2 {
        return 0.0;
    }
    let grid = state.grid();
    let mut worst = 0.0f64;
    for i in 0..ell {
        for j in i + 1..ell {
            let ti = theta * sups[i];
            let tj = theta * sups[j];
            let vi = state.component(i).values();
            let vj = state.component(j).values();
            let measure = integrate_nodes(grid, &|idx| {
                if vi[idx] > ti && vj[idx] > tj {
                    1.0
                } else {
                    0.0
                }
            });
            worst = worst.max(measure);
        }
    }
    worst
}

/// Half the smallest distance from component k's center to any other
/// center, or infinity for a single component.
fn half_nearest_center_distance(state: &SystemState, k: usize) -> f64 {
    let params = state.params();
    let kind = state.kind();
    let ck = params.attraction_center(kind, state.component_id(k));
    let mut best = f64::INFINITY;
    for j in 0..state.component_count() {
        if j == k {
            continue;
        }
        let cj = params.attraction_center(kind, state.component_id(j));
        let d2: f64 = ck.iter().zip(&cj).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 > 0.0 {
            best = best.min(0.5 * d2.sqrt());
        }
    }
    best
}

/// Assemble the full diagnostic record for one converged row.
fn build_record(
    report: &SolveReport,
    sweep_value: f64,
    deltas: &[f64],
    theta: f64,
    reference: Option<&EpsReference>,
    upper_bound: f64,
) -> Result<StudyRecord, StudyError> {
    let state = &report.state;
    let grid = state.grid();
    let params = state.params();
    let kind = state.kind();
    let p = params.p;
    let dim = params.dim;
    let ell = state.component_count();
    let mass = state.mass();
    let vol = grid.cell_volume();
    let energy_share = (p - 1.0) / (2.0 * p);

    // Radius correspondence: the deltas are stated in the original frame.
    let delta_scale = match kind {
        ProblemKind::RescaledU => 1.0 / params.eps,
        _ => 1.0,
    };

    // Pointwise powers |u_k|^p, shared by overlaps and ball integrals.
    let pw_p = Pow::new(p);
    let pow_vecs: Vec<Vec<f64>> = (0..ell)
        .map(|k| {
            let vals = state.component(k).values();
            let mut out = vec![0.0f64; vals.len()];
            map_indexed(&mut out, |idx, v| *v = pw_p.abs(vals[idx]));
            out
        })
        .collect();

    let mut pairs = Vec::new();
    for i in 0..ell {
        for j in i + 1..ell {
            let overlap = vol * grid::pairwise_dot(&pow_vecs[i], &pow_vecs[j]);
            pairs.push(PairDiagnostics {
                i,
                j,
                overlap,
                lambda_times_overlap: state.lambda_of(i, j).abs() * overlap,
            });
        }
    }

    let sup_locations = sup_location_check(state);
    let mut components = Vec::with_capacity(ell);
    for k in 0..ell {
        let u = state.component(k);
        let vals = u.values();
        let center = params.attraction_center(kind, state.component_id(k));

        let ratios = if deltas.is_empty() {
            Vec::new()
        } else {
            let scaled: Vec<f64> = deltas.iter().map(|d| d * delta_scale).collect();
            concentration_ratios(u, mass, p, &center, &scaled)?
                .into_iter()
                .zip(deltas)
                .map(|(mut r, &label)| {
                    r.delta = label;
                    r
                })
                .collect()
        };

        let l2_sq = integrate_nodes(grid, &|idx| vals[idx] * vals[idx]);
        let mass_term = mass * mass * l2_sq;

        // |u_k|^(2p) as a field, for the attraction-ball integral.
        let mut pow2p = Field::zeros(grid);
        let pk = &pow_vecs[k];
        map_indexed(pow2p.values_mut(), |idx, v| *v = pk[idx] * pk[idx]);
        let mu_ball_2p = state.mu_of(k)
            * restrict_ball_integral(&pow2p, &center, params.attraction_radius(kind));

        let wall = grid.half_width() - center.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let r_max = (grid.half_width() / 2.0)
            .min(wall)
            .min(half_nearest_center_distance(state, k));
        let (decay_kappa, decay_violation) = decay_check_around(u, &center, r_max);

        let v_norm1_sq = match kind {
            ProblemKind::RescaledU => Some(
                params.eps.powf(dim as f64 - 2.0 * p / (p - 1.0)) * report.norms_sq[k],
            ),
            _ => None,
        };

        let (limit_distance_2p, limit_energy_gap) = match reference {
            Some(EpsReference::Radial { kappas, profiles }) => {
                let prof = &profiles[k];
                let pw2p = Pow::new(2.0 * p);
                let mut diff = Field::zeros(grid);
                map_indexed(diff.values_mut(), |idx, v| {
                    let mut pt = [0.0f64; MAX_DIM];
                    grid.point_of(idx, &mut pt);
                    let mut r2 = 0.0;
                    for d in 0..dim {
                        let dx = pt[d] - center[d];
                        r2 += dx * dx;
                    }
                    *v = pw2p.abs(vals[idx] - radial_profile_value(prof, r2.sqrt()));
                });
                let dist = restrict_ball_integral(&diff, &center, RADIAL_REFERENCE_RADIUS)
                    .max(0.0)
                    .powf(1.0 / (2.0 * p));
                (Some(dist), Some(energy_share * report.norms_sq[k] - kappas[k]))
            }
            Some(EpsReference::Limit { energies, state: ref_state }) => {
                if ref_state.grid().same_as(grid) {
                    let pw2p = Pow::new(2.0 * p);
                    let rv = ref_state.component(k).values();
                    let dist = integrate_nodes(grid, &|idx| pw2p.abs(vals[idx] - rv[idx]))
                        .max(0.0)
                        .powf(1.0 / (2.0 * p));
                    (Some(dist), Some(energy_share * report.norms_sq[k] - energies[k]))
                } else {
                    (None, Some(energy_share * report.norms_sq[k] - energies[k]))
                }
            }
            None => (None, None),
        };

        components.push(ComponentRecord {
            energy: energy_share * report.norms_sq[k],
            norm_sq: report.norms_sq[k],
            ratios,
            mass_term,
            sup: sup_locations[k].clone(),
            decay_kappa,
            decay_violation,
            mu_ball_2p,
            v_norm1_sq,
            limit_distance_2p,
            limit_energy_gap,
        });
    }

    let sups: Vec<f64> = sup_locations.iter().map(|s| s.value).collect();
    let support_overlap = support_overlap_measure(state, &sups, theta);

    Ok(StudyRecord {
        sweep_value,
        energy_total: report.energy,
        stationarity: report.stationarity,
        iterations: report.iterations,
        grid_n: grid.n(),
        grid_half_width: grid.half_width(),
        upper_bound,
        support_overlap,
        components,
        pairs,
    })
}

// ---------------------------------------------------------------------------
// Sweeps.
// ---------------------------------------------------------------------------

fn validate_theta(theta: f64) -> Result<(), StudyError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(StudyError::BadSweep {
            reason: format!("support threshold fraction must lie in (0, 1), got {theta}"),
        });
    }
    Ok(())
}

fn validate_eps_sweep(
    params: &Params,
    eps_list: &[f64],
    mode: SweepMode,
    deltas: &[f64],
) -> Result<(), StudyError> {
    let bad = |reason: String| Err(StudyError::BadSweep { reason });
    if eps_list.is_empty() {
        return bad("empty eps list".into());
    }
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return bad(format!("eps values must be positive: {eps_list:?}"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return bad(format!("eps values must be strictly decreasing: {eps_list:?}"));
    }
    if deltas.iter().any(|d| !(*d > 0.0)) {
        return bad(format!("concentration radii must be positive: {deltas:?}"));
    }
    match mode {
        SweepMode::SingleCore => {
            if params.centers.iter().any(|c| c.iter().any(|x| *x != 0.0)) {
                return bad("single-core mode needs every center at the origin".into());
            }
        }
        SweepMode::DistinctCenters => {
            for i in 0..params.centers.len() {
                for j in i + 1..params.centers.len() {
                    if params.centers[i] == params.centers[j] {
                        return bad(format!("centers {i} and {j} coincide in distinct mode"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Build the limiting reference once per sweep.
fn build_eps_reference(
    params: &Params,
    mode: SweepMode,
    config: &SolverConfig,
) -> Result<EpsReference, StudyError> {
    match mode {
        SweepMode::DistinctCenters => {
            let radial_config = SolverConfig {
                grad_tol: config.grad_tol.min(1e-7),
                max_iters: config.max_iters.max(4000),
                restarts: 0,
                ..config.clone()
            };
            let mut profiles: Vec<RadialSolution> = Vec::with_capacity(params.ell);
            for i in 0..params.ell {
                // Reuse the solve when a later component repeats a mu.
                if let Some(prev) = (0..i).find(|&j| params.mu[j] == params.mu[i]) {
                    profiles.push(profiles[prev].clone());
                    continue;
                }
                profiles.push(solve_radial_limit_equation(
                    params.mu[i],
                    params.p,
                    params.dim,
                    RADIAL_REFERENCE_RADIUS,
                    RADIAL_REFERENCE_CELLS,
                    &radial_config,
                )?);
            }
            let kappas = profiles.iter().map(|s| s.kappa).collect();
            Ok(EpsReference::Radial { kappas, profiles })
        }
        SweepMode::SingleCore => {
            let grid = Arc::new(Grid::new(params.dim, SINGLE_CORE_N, SINGLE_CORE_HALF_WIDTH)?);
            let state0 = init_bumps(&grid, params, ProblemKind::LimitSystem, config.seed)?;
            let report = minimize(&state0, config)?;
            let share = (params.p - 1.0) / (2.0 * params.p);
            let energies = report.norms_sq.iter().map(|a| share * a).collect();
            Ok(EpsReference::Limit { energies, state: report.state })
        }
    }
}

/// Sweep the concentration parameter downward, warm-starting each row from
/// the previous solution carried along the moving centers. Rows that fail
/// keep their error; the sweep continues from the last good solution.
pub fn sweep_eps(
    params0: &Params,
    eps_list: &[f64],
    mode: SweepMode,
    deltas: &[f64],
    theta: f64,
    config: &SolverConfig,
) -> Result<EpsSweep, StudyError> {
    config.validate()?;
    validate_eps_sweep(params0, eps_list, mode, deltas)?;
    validate_theta(theta)?;
    let kind = ProblemKind::RescaledU;
    let reference = build_eps_reference(params0, mode, config)?;

    let mut rows = Vec::with_capacity(eps_list.len());
    let mut prev: Option<SolveReport> = None;
    for &eps in eps_list {
        let mut params_row = params0.clone();
        params_row.eps = eps;
        let outcome = (|| -> Result<(StudyRecord, SolveReport), StudyError> {
            let grid = sweep_grid(&params_row, eps, mode)?;
            let d0 = test_function_energy(&grid, &params_row, kind)?;
            let warm = prev
                .as_ref()
                .map(|r| transport_state(&r.state, &params_row, kind, &grid));
            let report = match warm {
                Some(Ok(state0)) => match minimize(&state0, config) {
                    Ok(r) => r,
                    // A failed warm start falls back to a cold start once.
                    Err(_) => minimize(&init_bumps(&grid, &params_row, kind, config.seed)?, config)?,
                },
                _ => minimize(&init_bumps(&grid, &params_row, kind, config.seed)?, config)?,
            };
            let record = build_record(&report, eps, deltas, theta, Some(&reference), d0)?;
            Ok((record, report))
        })();
        match outcome {
            Ok((record, report)) => {
                rows.push(SweepRow { value: eps, outcome: Ok(record) });
                prev = Some(report);
            }
            Err(e) => rows.push(SweepRow { value: eps, outcome: Err(e) }),
        }
    }

    let (reference_energies, reference_total) = reference.energies();
    Ok(EpsSweep { mode, rows, reference_energies, reference_total })
}

fn validate_lambda_sweep(params: &Params, lambda_list: &[f64]) -> Result<(), StudyError> {
    let bad = |reason: String| Err(StudyError::BadSweep { reason });
    if lambda_list.is_empty() {
        return bad("empty lambda list".into());
    }
    if params.ell < 2 {
        return bad("a lambda sweep needs at least two components".into());
    }
    if lambda_list.iter().any(|l| !(*l < 0.0)) {
        return bad(format!("lambda values must be negative: {lambda_list:?}"));
    }
    if lambda_list.windows(2).any(|w| w[1] >= w[0]) {
        return bad(format!(
            "lambda values must be decreasing (increasing in magnitude): {lambda_list:?}"
        ));
    }
    Ok(())
}

/// The row parameters: every off-diagonal coupling set to the swept value.
fn lambda_params(params0: &Params, lambda: f64) -> Params {
    let mut p = params0.clone();
    for i in 0..p.ell {
        for j in 0..p.ell {
            p.lambda[i][j] = if i == j { 0.0 } else { lambda };
        }
    }
    p
}

/// Sweep the competition strength into the segregation regime on the limit
/// system, warm-starting along the branch, with a cold cross-check of the
/// final row to detect branch switching.
pub fn sweep_lambda(
    params0: &Params,
    lambda_list: &[f64],
    theta: f64,
    config: &SolverConfig,
) -> Result<LambdaSweep, StudyError> {
    config.validate()?;
    validate_lambda_sweep(params0, lambda_list)?;
    validate_theta(theta)?;
    let kind = ProblemKind::LimitSystem;
    let grid = Arc::new(Grid::new(params0.dim, SINGLE_CORE_N, SINGLE_CORE_HALF_WIDTH)?);

    // The segregated test configuration has pairwise-disjoint supports, so
    // its projected energy does not depend on the coupling: one bound serves
    // every row.
    let c_star = test_function_energy(&grid, &lambda_params(params0, lambda_list[0]), kind)?;

    // Strong competition has two competing basins (a mixed branch continued
    // from weak coupling and the segregated branch), and gradient descent
    // from a single start can converge to whichever critical point its basin
    // holds. Each row therefore descends from both a cold segregated layout
    // and a warm transport of the previous solution, and reports the lower
    // energy; the signed gap between the two descents is the
    // branch-divergence diagnostic. Wide row spacing (a decade of coupling
    // per row is typical) is bridged by geometric continuation inside the
    // warm branch, since a single descent does not survive a tenfold jump in
    // the coupling stiffness.
    let mut rows = Vec::with_capacity(lambda_list.len());
    let mut prev: Option<(SolveReport, f64)> = None;
    let mut last_gap: Option<f64> = None;
    for &lam in lambda_list {
        let params_row = lambda_params(params0, lam);
        let outcome = (|| -> Result<(StudyRecord, SolveReport, Option<f64>), StudyError> {
            let cold = init_bumps(&grid, &params_row, kind, config.seed)
                .map_err(StudyError::from)
                .and_then(|s| minimize(&s, config).map_err(StudyError::from));
            let warm = prev
                .as_ref()
                .and_then(|(r, lam_prev)| continue_warm(r, *lam_prev, lam, params0, kind, &grid, config));
            let (report, gap) = match (cold, warm) {
                (Ok(c), Some(w)) => {
                    let gap = (c.energy - w.energy) / w.energy.abs().max(1e-300);
                    (if c.energy <= w.energy { c } else { w }, Some(gap))
                }
                (Ok(c), None) => (c, None),
                (Err(_), Some(w)) => (w, None),
                (Err(e), None) => return Err(e),
            };
            let record = build_record(&report, lam, &[], theta, None, c_star)?;
            Ok((record, report, gap))
        })();
        match outcome {
            Ok((record, report, gap)) => {
                rows.push(SweepRow { value: lam, outcome: Ok(record) });
                prev = Some((report, lam));
                last_gap = gap;
            }
            Err(e) => {
                rows.push(SweepRow { value: lam, outcome: Err(e) });
                last_gap = None;
            }
        }
    }

    Ok(LambdaSweep { rows, c_star, cold_check_gap: last_gap })
}

/// Largest growth in coupling magnitude a single warm-started descent is
/// asked to absorb; wider gaps between sweep rows are split into geometric
/// continuation steps.
const LAMBDA_CONTINUATION_FACTOR: f64 = 4.0;

/// Warm candidate for the row at coupling `lam`: transport the previous
/// solution forward, passing through intermediate couplings whenever the
/// magnitude ratio `lam / lam_prev` exceeds [`LAMBDA_CONTINUATION_FACTOR`].
/// Returns `None` if any stage fails to converge.
fn continue_warm(
    prev: &SolveReport,
    lam_prev: f64,
    lam: f64,
    params0: &Params,
    kind: ProblemKind,
    grid: &Arc<Grid>,
    config: &SolverConfig,
) -> Option<SolveReport> {
    // Row validation guarantees lam < lam_prev < 0, so the ratio exceeds 1.
    let ratio = lam / lam_prev;
    let stages = if ratio > LAMBDA_CONTINUATION_FACTOR {
        (ratio.ln() / LAMBDA_CONTINUATION_FACTOR.ln()).ceil() as usize
    } else {
        1
    };
    let mut report: Option<SolveReport> = None;
    for stage in 1..=stages {
        let lam_stage = if stage == stages {
            lam
        } else {
            lam_prev * ratio.powf(stage as f64 / stages as f64)
        };
        let params_stage = lambda_params(params0, lam_stage);
        let base = report.as_ref().unwrap_or(prev);
        let state0 = transport_state(&base.state, &params_stage, kind, grid).ok()?;
        report = Some(minimize(&state0, config).ok()?);
    }
    report
}

/// Least-squares slope of log(original-frame squared norm) against
/// log(eps), one slope per component. The expected value is
/// dim - 2p/(p-1) < 0: the original-frame norms blow up as eps shrinks.
pub fn blowup_exponent_fit(sweep: &EpsSweep) -> Result<Vec<f64>, StudyError> {
    let rows: Vec<&StudyRecord> = sweep
        .rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .collect();
    if rows.len() < 3 {
        return Err(StudyError::BadSweep {
            reason: format!("exponent fit needs at least 3 converged rows, got {}", rows.len()),
        });
    }
    let ell = rows[0].components.len();
    let mut slopes = Vec::with_capacity(ell);
    for k in 0..ell {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| {
                r.components[k]
                    .v_norm1_sq
                    .filter(|v| *v > 0.0)
                    .map(|v| (r.sweep_value.ln(), v.ln()))
            })
            .collect();
        if points.len() < 3 {
            return Err(StudyError::BadSweep {
                reason: format!("component {k} has fewer than 3 usable rows"),
            });
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx <= 0.0 {
            return Err(StudyError::BadSweep {
                reason: "exponent fit needs at least two distinct eps values".into(),
            });
        }
        slopes.push(sxy / sxx);
    }
    Ok(slopes)
}
