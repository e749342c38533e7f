//! The variational core: the energy functional of the coupled system, its
//! componentwise gradients, and the projection onto the natural constraint
//! manifold (scale each component so its own Euler-Lagrange pairing vanishes).
//!
//! Everything here reduces to three families of numbers per state u:
//!
//! * `a[k]`  = quadratic form of (-Delta + mass^2) on component k,
//! * `b[k]`  = mu_k * integral of qhat_k |u_k|^(2p),
//! * `d[k][j]` = lambda_kj * integral of |u_k|^p |u_j|^p  (symmetric, <= 0).
//!
//! The energy is 1/2 sum a - 1/(2p) sum b - 1/p sum_{k<j} d, and the
//! constraint residuals are r_k = a_k - b_k - sum_j d_kj. Scaling component k
//! by t_k maps the coefficients to (a t^2, b t^(2p), d t_k^p t_j^p) exactly,
//! which the projection exploits: it never touches grid data while solving
//! for the scalings.

use std::sync::Arc;

use crate::grid::{self, Field, Grid, GridError};
use crate::model::{self, InvalidParams, Params, ProblemKind};

/// |t|^q with the exponent classified once, not per call site. Small integer
/// exponents take a multiply path; everything else falls back to powf.
#[derive(Debug, Clone, Copy)]
pub struct Pow {
    q: f64,
    int_q: i32,
}

impl Pow {
    pub fn new(q: f64) -> Pow {
        let r = q.round();
        let int_q = if (q - r).abs() < 1e-12 && (0.0..=9.0).contains(&r) {
            r as i32
        } else {
            -1
        };
        Pow { q, int_q }
    }

    /// |t|^q.
    #[inline]
    pub fn abs(self, t: f64) -> f64 {
        let a = t.abs();
        match self.int_q {
            0 => 1.0,
            1 => a,
            2 => a * a,
            3 => a * a * a,
            4 => {
                let s = a * a;
                s * s
            }
            -1 => a.powf(self.q),
            n => a.powi(n),
        }
    }

    /// sign(t) |t|^q, the odd extension of t^q.
    #[inline]
    pub fn signed(self, t: f64) -> f64 {
        if t >= 0.0 {
            self.abs(t)
        } else {
            -self.abs(t)
        }
    }
}

/// Errors from state assembly and from the constraint projection.
#[derive(Debug, thiserror::Error)]
pub enum EnergyError {
    #[error("invalid parameters: {0}")]
    Invalid(#[from] InvalidParams),
    #[error("grid dimension {grid_dim} does not match parameter dimension {param_dim}")]
    DimMismatch { grid_dim: usize, param_dim: usize },
    #[error("component field lives on a different grid than the state")]
    GridMismatch,
    #[error("component {component} has nonpositive quadratic form {value:.6e}; it is (numerically) zero")]
    ZeroComponent { component: usize, value: f64 },
    #[error("state not projectable: b_{component} + sum_j d_{component}{{j}} = {value:.6e} is not positive")]
    NotProjectable { component: usize, value: f64 },
    #[error("constraint scaling solve did not converge within {iterations} iterations")]
    NoRoot { iterations: usize },
}

/// The three coefficient families of a state. `d` is a full symmetric matrix
/// with zero diagonal, indexed by the state's local component order.
#[derive(Debug, Clone, PartialEq)]
pub struct NehariCoeffs {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<Vec<f64>>,
}

impl NehariCoeffs {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Constraint residuals r_k = a_k - b_k - sum_j d_kj. All zero exactly on
    /// the constraint manifold.
    pub fn residuals(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let cross: f64 = self.d[k].iter().sum();
                self.a[k] - self.b[k] - cross
            })
            .collect()
    }

    /// Magnitude scale of residual k, for relative tolerance tests:
    /// |a_k| + |b_k| + sum_j |d_kj|.
    pub fn residual_scale(&self, k: usize) -> f64 {
        self.a[k].abs() + self.b[k].abs() + self.d[k].iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Coefficients of the componentwise-scaled state t * u, computed exactly
    /// from the scaling identities a t^2, b t^(2p), d t_k^p t_j^p.
    pub fn scaled(&self, t: &[f64], p: f64) -> NehariCoeffs {
        assert_eq!(t.len(), self.len(), "scaling length mismatch");
        let pw = Pow::new(p);
        let ell = self.len();
        let a = (0..ell).map(|k| self.a[k] * t[k] * t[k]).collect();
        let b = (0..ell)
            .map(|k| {
                let tp = pw.abs(t[k]);
                self.b[k] * tp * tp
            })
            .collect();
        let mut d = vec![vec![0.0; ell]; ell];
        for k in 0..ell {
            for j in 0..ell {
                if j != k {
                    d[k][j] = self.d[k][j] * pw.abs(t[k]) * pw.abs(t[j]);
                }
            }
        }
        NehariCoeffs { a, b, d }
    }
}

/// Energy from coefficients: 1/2 sum a - 1/(2p) sum b - 1/p sum_{k<j} d.
pub fn energy_from_coeffs(c: &NehariCoeffs, p: f64) -> f64 {
    let ell = c.len();
    let mut e = 0.0;
    for k in 0..ell {
        e += 0.5 * c.a[k] - c.b[k] / (2.0 * p);
    }
    for k in 0..ell {
        for j in (k + 1)..ell {
            e -= c.d[k][j] / p;
        }
    }
    e
}

/// A multi-component nodal state together with the fixed data its energy
/// needs: validated parameters, the problem kind, the sign masks of the core
/// weights, and the mass coefficient of the quadratic form.
#[derive(Debug, Clone)]
pub struct SystemState {
    grid: Arc<Grid>,
    params: Params,
    kind: ProblemKind,
    /// Global component indices handled by this state; all of 0..ell except
    /// for the single-equation kind, which carries exactly one.
    comp_ids: Vec<usize>,
    comps: Vec<Field>,
    /// Sign of the core weight at each node, +1 strictly inside the
    /// attraction ball and -1 elsewhere, one mask per local component.
    masks: Vec<Vec<i8>>,
    mass: f64,
}

fn ball_mask(grid: &Grid, center: &[f64], radius: f64) -> Vec<i8> {
    let n = grid.n();
    let dim = grid.dim();
    let r2 = radius * radius;
    let tables: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            (0..n)
                .map(|k| {
                    let t = grid.axis_coord(k) - center[d];
                    t * t
                })
                .collect()
        })
        .collect();
    let mut mask = vec![-1i8; grid.node_count()];
    let rows = grid.node_count() / n;
    let last = &tables[dim - 1];
    for row in 0..rows {
        let mut rest = row;
        let mut base = 0.0;
        for d in (0..dim - 1).rev() {
            base += tables[d][rest % n];
            rest /= n;
        }
        if base < r2 {
            let out = &mut mask[row * n..(row + 1) * n];
            for k in 0..n {
                if base + last[k] < r2 {
                    out[k] = 1;
                }
            }
        }
    }
    mask
}

impl SystemState {
    /// A zero state for the given problem. Validates the parameters against
    /// the kind and precomputes the weight masks.
    pub fn new(grid: &Arc<Grid>, params: Params, kind: ProblemKind) -> Result<SystemState, EnergyError> {
        let violations = model::validate_for_kind(&params, kind);
        if !violations.is_empty() {
            return Err(InvalidParams { violations }.into());
        }
        if grid.dim() != params.dim {
            return Err(EnergyError::DimMismatch {
                grid_dim: grid.dim(),
                param_dim: params.dim,
            });
        }
        let comp_ids = kind.component_indices(params.ell);
        let masks = comp_ids
            .iter()
            .map(|&i| {
                let center = params.attraction_center(kind, i);
                ball_mask(grid, &center, params.attraction_radius(kind))
            })
            .collect();
        let comps = comp_ids.iter().map(|_| Field::zeros(grid)).collect();
        let mass = params.mass_eps(kind);
        Ok(SystemState {
            grid: Arc::clone(grid),
            params,
            kind,
            comp_ids,
            comps,
            masks,
            mass,
        })
    }

    /// A state with the given component fields (local order).
    pub fn with_components(
        grid: &Arc<Grid>,
        params: Params,
        kind: ProblemKind,
        comps: Vec<Field>,
    ) -> Result<SystemState, EnergyError> {
        let mut state = SystemState::new(grid, params, kind)?;
        if comps.len() != state.comps.len() {
            return Err(EnergyError::GridMismatch);
        }
        for f in &comps {
            if !f.grid().same_as(grid) {
                return Err(EnergyError::GridMismatch);
            }
        }
        state.comps = comps;
        Ok(state)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    /// Number of locally active components.
    pub fn component_count(&self) -> usize {
        self.comps.len()
    }

    /// Global index of local component k.
    pub fn component_id(&self, k: usize) -> usize {
        self.comp_ids[k]
    }

    pub fn component(&self, k: usize) -> &Field {
        &self.comps[k]
    }

    pub fn components(&self) -> &[Field] {
        &self.comps
    }

    pub(crate) fn components_mut(&mut self) -> &mut [Field] {
        &mut self.comps
    }

    /// Replace component k, validating the grid.
    pub fn set_component(&mut self, k: usize, f: Field) -> Result<(), GridError> {
        if !f.grid().same_as(&self.grid) {
            return Err(GridError::Mismatch);
        }
        self.comps[k] = f;
        Ok(())
    }

    /// Mass coefficient of the quadratic form (its square multiplies the
    /// zeroth-order term).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Self-interaction strength of local component k.
    pub fn mu_of(&self, k: usize) -> f64 {
        self.params.mu[self.comp_ids[k]]
    }

    /// Coupling between local components k and j.
    pub fn lambda_of(&self, k: usize, j: usize) -> f64 {
        self.params.lambda[self.comp_ids[k]][self.comp_ids[j]]
    }

    /// Core weight sign per node for local component k.
    pub fn mask(&self, k: usize) -> &[i8] {
        &self.masks[k]
    }

    /// Quadratic form a_k = ||u_k||^2 under (-Delta + mass^2).
    pub fn norm_sq(&self, k: usize) -> f64 {
        grid::inner_h1(&self.comps[k], &self.comps[k], self.mass)
    }
}

/// The b and d quadratures of arbitrary component fields under this state's
/// weights and couplings. The fields need not be the state's own; line
/// searches evaluate trial states this way without recomputing stencils.
pub fn pointwise_coeffs(state: &SystemState, comps: &[Field]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let ell = comps.len();
    assert_eq!(ell, state.component_count(), "component count mismatch");
    let p = state.params().p;
    let pw2p = Pow::new(2.0 * p);
    let pwp = Pow::new(p);
    let grid = state.grid().as_ref();

    let b: Vec<f64> = (0..ell)
        .map(|k| {
            let vals = comps[k].values();
            let mask = &state.masks[k];
            state.mu_of(k)
                * grid::integrate_nodes(grid, &|i| f64::from(mask[i]) * pw2p.abs(vals[i]))
        })
        .collect();
    let mut d = vec![vec![0.0; ell]; ell];
    for k in 0..ell {
        for j in (k + 1)..ell {
            let lam = state.lambda_of(k, j);
            let fk = comps[k].values();
            let fj = comps[j].values();
            let v = lam * grid::integrate_nodes(grid, &|i| pwp.abs(fk[i]) * pwp.abs(fj[i]));
            d[k][j] = v;
            d[j][k] = v;
        }
    }
    (b, d)
}

/// All three coefficient families of the state, by quadrature.
pub fn nehari_coeffs(state: &SystemState) -> NehariCoeffs {
    let ell = state.component_count();
    let a: Vec<f64> = (0..ell).map(|k| state.norm_sq(k)).collect();
    let (b, d) = pointwise_coeffs(state, &state.comps);
    NehariCoeffs { a, b, d }
}

/// Energy of the state.
pub fn energy(state: &SystemState) -> f64 {
    energy_from_coeffs(&nehari_coeffs(state), state.params().p)
}

/// Constraint residuals r_k = a_k - b_k - sum_j d_kj of the state.
pub fn nehari_residuals(state: &SystemState) -> Vec<f64> {
    nehari_coeffs(state).residuals()
}

/// Nodal gradient of the energy in component k: the Euler-Lagrange residual
/// field (-Delta + mass^2) u_k - mu_k qhat_k sign(u_k)|u_k|^(2p-1)
/// - sum_{j != k} lambda_kj |u_j|^p sign(u_k)|u_k|^(p-1). Pairing this field
/// against a direction with the plain volume quadrature gives the directional
/// derivative of `energy`.
pub fn grad_component(state: &SystemState, k: usize) -> Field {
    let p = state.params().p;
    let mut out = grid::apply_helmholtz(&state.comps[k], state.mass);
    let mu = state.mu_of(k);
    let pw_self = Pow::new(2.0 * p - 1.0);
    let pw_other = Pow::new(p);
    let pw_own = Pow::new(p - 1.0);
    let uk = state.comps[k].values();
    let mask = &state.masks[k];
    let coupled: Vec<(f64, &[f64])> = (0..state.component_count())
        .filter(|&j| j != k)
        .map(|j| (state.lambda_of(k, j), state.comps[j].values()))
        .collect();
    grid::map_indexed(out.values_mut(), |i, g| {
        let t = uk[i];
        let mut v = *g - mu * f64::from(mask[i]) * pw_self.signed(t);
        if !coupled.is_empty() {
            let mut cross = 0.0;
            for (lam, other) in &coupled {
                cross += lam * pw_other.abs(other[i]);
            }
            v -= cross * pw_own.signed(t);
        }
        *g = v;
    });
    out
}

/// Gradients of all components.
pub fn full_gradient(state: &SystemState) -> Vec<Field> {
    (0..state.component_count()).map(|k| grad_component(state, k)).collect()
}

/// Gaussian elimination with partial pivoting for the tiny per-iteration
/// Jacobian solves. Returns None if the matrix is numerically singular.
fn gauss_solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col].abs() < f64::MIN_POSITIVE.sqrt() {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = rhs[r];
        for c in (r + 1)..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

/// Relative stopping tolerance of the scaling solve.
const PROJECT_TOL: f64 = 1e-13;
/// Outer iteration cap of the scaling solve.
const PROJECT_MAX_ITERS: usize = 200;
/// Log-coordinate step cap per Newton iteration.
const PROJECT_STEP_CAP: f64 = 1.5;

struct ScalingEval {
    f: Vec<f64>,
    scale: Vec<f64>,
    merit: f64,
}

fn eval_scaling(c: &NehariCoeffs, p: f64, t: &[f64]) -> ScalingEval {
    let ell = t.len();
    let mut f = vec![0.0; ell];
    let mut scale = vec![0.0; ell];
    let mut merit = 0.0;
    for k in 0..ell {
        let tk = t[k];
        let lin = c.a[k] * tk;
        let own = c.b[k] * tk.powf(2.0 * p - 1.0);
        let tk_pm1 = tk.powf(p - 1.0);
        let mut cross = 0.0;
        let mut cross_abs = 0.0;
        for j in 0..ell {
            if j != k {
                let w = c.d[k][j] * t[j].powf(p) * tk_pm1;
                cross += w;
                cross_abs += w.abs();
            }
        }
        f[k] = lin - own - cross;
        scale[k] = lin.abs() + own.abs() + cross_abs;
        let rel = f[k] / scale[k].max(f64::MIN_POSITIVE);
        merit += rel * rel;
    }
    ScalingEval { f, scale, merit }
}

fn scaling_converged(e: &ScalingEval) -> bool {
    e.f.iter().zip(&e.scale).all(|(f, s)| f.abs() <= PROJECT_TOL * s)
}

/// Root of the one-component constraint with the couplings frozen:
/// psi(t) = a t - b t^(2p-1) - s t^(p-1), where s = sum_j d_kj t_j^p <= 0.
/// For a, b > 0 and s <= 0 a bracket always exists (psi > 0 near zero,
/// negative at infinity), so expanding log-space bisection from the guess
/// cannot fail short of exhausting the exponent range.
fn scalar_root(a: f64, b: f64, s: f64, p: f64, guess: f64) -> Option<f64> {
    let psi = |t: f64| a * t - b * t.powf(2.0 * p - 1.0) - s * t.powf(p - 1.0);
    let mut lo = if guess.is_finite() && guess > 0.0 { guess } else { 1.0 };
    let mut hi = lo;
    let mut tries = 0;
    while psi(lo) <= 0.0 {
        lo *= 0.5;
        tries += 1;
        if tries > 3000 {
            return None;
        }
    }
    tries = 0;
    while psi(hi) >= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 3000 {
            return None;
        }
    }
    let mut llo = lo.ln();
    let mut lhi = hi.ln();
    for _ in 0..200 {
        let mid = 0.5 * (llo + lhi);
        if psi(mid.exp()) > 0.0 {
            llo = mid;
        } else {
            lhi = mid;
        }
    }
    Some((0.5 * (llo + lhi)).exp())
}

/// One pass of componentwise scalar solves with the other scalings frozen.
/// With competitive couplings this map is monotone, so sweeps started from
/// the decoupled scalings climb toward the coupled root without leaving its
/// basin; used both to initialize Newton and as its safeguard.
fn gauss_seidel_sweeps(c: &NehariCoeffs, p: f64, t: &mut [f64], sweeps: usize) -> bool {
    let ell = t.len();
    for _ in 0..sweeps {
        for k in 0..ell {
            let mut s = 0.0;
            for j in 0..ell {
                if j != k {
                    s += c.d[k][j] * t[j].powf(p);
                }
            }
            match scalar_root(c.a[k], c.b[k], s, p, t[k]) {
                Some(root) => t[k] = root,
                None => return false,
            }
        }
        if scaling_converged(&eval_scaling(c, p, t)) {
            return true;
        }
    }
    false
}

/// Damped Newton in log(t) on the full coupled system: steps capped in the
/// max norm and backtracked on the squared relative residual, so iterates
/// stay positive by construction. Returns true on convergence.
fn newton_scalings(c: &NehariCoeffs, p: f64, t: &mut Vec<f64>, max_iters: usize) -> bool {
    let ell = t.len();
    let mut eval = eval_scaling(c, p, t);
    for _ in 0..max_iters {
        if scaling_converged(&eval) {
            return true;
        }
        // Jacobian of F with respect to log t: column m is dF/dt_m * t_m.
        let mut jac = vec![vec![0.0; ell]; ell];
        for k in 0..ell {
            let tk = t[k];
            let tk_pm2 = tk.powf(p - 2.0);
            let mut cross_p = 0.0;
            for j in 0..ell {
                if j != k {
                    let djp = c.d[k][j] * t[j].powf(p);
                    cross_p += djp;
                    jac[k][j] = -p * djp * tk.powf(p - 1.0);
                }
            }
            jac[k][k] = (c.a[k]
                - (2.0 * p - 1.0) * c.b[k] * tk.powf(2.0 * p - 2.0)
                - (p - 1.0) * tk_pm2 * cross_p)
                * tk;
        }
        let step = match gauss_solve(jac, eval.f.clone()) {
            Some(s) => s,
            None => return false,
        };
        let cap = step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let damp = if cap > PROJECT_STEP_CAP { PROJECT_STEP_CAP / cap } else { 1.0 };

        let mut gamma = damp;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..ell).map(|k| t[k] * (-gamma * step[k]).exp()).collect();
            let trial_eval = eval_scaling(c, p, &trial);
            if trial_eval.merit < eval.merit {
                *t = trial;
                eval = trial_eval;
                accepted = true;
                break;
            }
            gamma *= 0.5;
        }
        if !accepted {
            return false;
        }
    }
    scaling_converged(&eval)
}

/// Solve for the positive scalings t that put the scaled coefficients on the
/// constraint manifold: a_k t_k = b_k t_k^(2p-1) + sum_j d_kj t_j^p t_k^(p-1)
/// for every k. Requires a_k > 0 and b_k + sum_j d_kj > 0 evaluated on the
/// given coefficients (each component must keep positive self-interaction
/// after the couplings are paid); note this cone is not invariant under
/// componentwise rescaling, so callers work with normalized states.
///
/// Strategy: monotone Gauss-Seidel sweeps to land in the coupled root's
/// basin, then damped Newton for the endgame, alternating if either stalls.
pub fn project_scalings(c: &NehariCoeffs, p: f64) -> Result<Vec<f64>, EnergyError> {
    let ell = c.len();
    assert!(ell > 0, "empty coefficient set");
    for k in 0..ell {
        if !(c.a[k] > 0.0) {
            return Err(EnergyError::ZeroComponent { component: k, value: c.a[k] });
        }
        let s: f64 = c.b[k] + c.d[k].iter().sum::<f64>();
        if !(s > 0.0) {
            return Err(EnergyError::NotProjectable { component: k, value: s });
        }
    }

    // Decoupled initialization; b_k > 0 follows from the precondition since
    // the couplings are nonpositive.
    let exp_inv = 1.0 / (2.0 * p - 2.0);
    let mut t: Vec<f64> = (0..ell).map(|k| (c.a[k] / c.b[k].abs()).powf(exp_inv)).collect();

    for round in 0..4 {
        let sweeps = if round == 0 { 3 } else { 50 };
        if gauss_seidel_sweeps(c, p, &mut t, sweeps) {
            return Ok(t);
        }
        if newton_scalings(c, p, &mut t, 60) {
            return Ok(t);
        }
    }
    Err(EnergyError::NoRoot { iterations: PROJECT_MAX_ITERS })
}

/// A state projected onto the constraint manifold, with the scalings that
/// got it there and its (exactly scaled) coefficients.
#[derive(Debug, Clone)]
pub struct Projection {
    pub scalings: Vec<f64>,
    pub state: SystemState,
    pub coeffs: NehariCoeffs,
}

/// Project the state onto the constraint manifold by componentwise scaling.
pub fn nehari_project(state: &SystemState) -> Result<Projection, EnergyError> {
    let p = state.params().p;
    let c = nehari_coeffs(state);
    let t = project_scalings(&c, p)?;
    let coeffs = c.scaled(&t, p);
    let mut projected = state.clone();
    for (k, f) in projected.comps.iter_mut().enumerate() {
        f.scale(t[k]);
    }
    Ok(Projection { scalings: t, state: projected, coeffs })
}

/// Energy after projection: the value of the constrained functional on the
/// ray family through the state. Defined for any projectable state and
/// invariant under componentwise rescaling of the input.
pub fn sphere_energy(state: &SystemState) -> Result<f64, EnergyError> {
    let p = state.params().p;
    let c = nehari_coeffs(state);
    let t = project_scalings(&c, p)?;
    Ok(energy_from_coeffs(&c.scaled(&t, p), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Violation;

    fn grid3(n: usize, half_width: f64) -> Arc<Grid> {
        Arc::new(Grid::new(3, n, half_width).unwrap())
    }

    fn two_comp_params(eps: f64) -> Params {
        Params {
            dim: 3,
            p: 2.0,
            ell: 2,
            mu: vec![1.0, 1.3],
            lambda: vec![vec![0.0, -0.7], vec![-0.7, 0.0]],
            centers: vec![vec![0.35, 0.0, 0.0], vec![-0.35, 0.0, 0.0]],
            eps,
        }
    }

    fn gaussian(grid: &Arc<Grid>, center: [f64; 3], width: f64, amp: f64) -> Field {
        Field::from_fn(grid, |x| {
            let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) + (x[2] - center[2]).powi(2);
            amp * (-r2 / (width * width)).exp()
        })
    }

    /// Overlapping smooth two-component state on a small grid. The limit
    /// system kind keeps the mass term off so tests cover the eps = 0 path;
    /// mass > 0 paths get their own cases.
    fn sample_state(n: usize, p: f64) -> SystemState {
        let grid = grid3(n, 3.0);
        let mut params = two_comp_params(0.0);
        params.p = p;
        let u0 = gaussian(&grid, [0.3, 0.1, 0.0], 0.9, 1.1);
        let u1 = gaussian(&grid, [-0.2, -0.1, 0.1], 0.8, 0.9);
        SystemState::with_components(&grid, params, ProblemKind::LimitSystem, vec![u0, u1]).unwrap()
    }

    /// Quadratic form of -Delta + m^2 summed face by face: gradient faces
    /// contribute (difference)^2 h^(dim-2) including the boundary faces
    /// against the zero extension. Independent route for the a coefficients.
    fn face_sum_norm_sq(f: &Field, mass: f64) -> f64 {
        let grid = f.grid().as_ref();
        let n = grid.n();
        let h = grid.h();
        let v = f.values();
        let mut grad = 0.0;
        for d in 0..3 {
            let stride = grid.stride(d);
            let mut c = [0usize; crate::grid::MAX_DIM];
            for idx in 0..grid.node_count() {
                grid.coords_of(idx, &mut c);
                // Face to the "left" along axis d (neighbor or boundary).
                let left = if c[d] == 0 { 0.0 } else { v[idx - stride] };
                let diff = v[idx] - left;
                grad += diff * diff;
                if c[d] == n - 1 {
                    grad += v[idx] * v[idx];
                }
            }
        }
        grad * h + mass * mass * grid.cell_volume() * v.iter().map(|t| t * t).sum::<f64>()
    }

    fn rel_close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300)
    }

    /// The energy of a coefficient set as a function of componentwise
    /// scalings, for max-property tests.
    fn scaled_energy(c: &NehariCoeffs, p: f64, t: &[f64]) -> f64 {
        energy_from_coeffs(&c.scaled(t, p), p)
    }

    #[test]
    fn pow_matches_powf_on_integer_and_fractional_exponents() {
        for &q in &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 1.6, 2.4, 0.7] {
            let pw = Pow::new(q);
            for &t in &[-2.3f64, -1.0, -1e-3, 0.0, 1e-4, 0.9, 1.0, 7.5] {
                let want = t.abs().powf(q);
                assert!(rel_close(pw.abs(t), want, 1e-14), "q={q} t={t}");
                let want_signed = if t >= 0.0 { want } else { -want };
                assert!(rel_close(pw.signed(t), want_signed, 1e-14), "q={q} t={t}");
            }
        }
        assert_eq!(Pow::new(2.0).signed(0.0), 0.0);
        assert_eq!(Pow::new(0.7).signed(0.0), 0.0);
    }

    #[test]
    fn zero_state_has_zero_energy_and_is_not_projectable() {
        let grid = grid3(10, 3.0);
        let state = SystemState::new(&grid, two_comp_params(0.0), ProblemKind::LimitSystem).unwrap();
        assert_eq!(energy(&state), 0.0);
        match nehari_project(&state) {
            Err(EnergyError::ZeroComponent { component: 0, .. }) => {}
            other => panic!("expected zero-component error, got {other:?}"),
        }
    }

    #[test]
    fn state_construction_rejects_bad_input() {
        let grid = grid3(8, 3.0);
        let mut bad = two_comp_params(0.0);
        bad.p = 5.0;
        match SystemState::new(&grid, bad, ProblemKind::LimitSystem) {
            Err(EnergyError::Invalid(e)) => {
                assert!(e.violations.iter().any(|v| matches!(v, Violation::PNotBelowCritical { .. })));
            }
            other => panic!("expected invalid parameters, got {other:?}"),
        }

        let grid2 = Arc::new(Grid::new(4, 8, 3.0).unwrap());
        match SystemState::new(&grid2, two_comp_params(0.0), ProblemKind::LimitSystem) {
            Err(EnergyError::DimMismatch { grid_dim: 4, param_dim: 3 }) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }

        let other_grid = grid3(9, 3.0);
        let comps = vec![Field::zeros(&other_grid), Field::zeros(&other_grid)];
        match SystemState::with_components(&grid, two_comp_params(0.0), ProblemKind::LimitSystem, comps) {
            Err(EnergyError::GridMismatch) => {}
            other => panic!("expected grid mismatch, got {other:?}"),
        }
    }

    #[test]
    fn masks_match_pointwise_weight() {
        let grid = grid3(13, 2.0);
        let params = two_comp_params(0.3);
        let state = SystemState::new(&grid, params.clone(), ProblemKind::OriginalV).unwrap();
        let mut x = [0.0; crate::grid::MAX_DIM];
        for k in 0..2 {
            let mask = state.mask(k);
            let center = params.attraction_center(ProblemKind::OriginalV, k);
            let mut inside = 0usize;
            for idx in 0..grid.node_count() {
                grid.point_of(idx, &mut x);
                let w = model::weight_q(&x[..3], params.attraction_radius(ProblemKind::OriginalV), &center);
                assert_eq!(f64::from(mask[idx]), w, "node {idx} component {k}");
                if mask[idx] == 1 {
                    inside += 1;
                }
            }
            assert!(inside > 0, "attraction ball resolved by the grid");
        }
    }

    #[test]
    fn coeffs_match_naive_quadrature_routes() {
        for &p in &[2.0, 1.6] {
            let state = sample_state(12, p);
            let c = nehari_coeffs(&state);
            let grid = state.grid().as_ref();
            let vol = grid.cell_volume();

            for k in 0..2 {
                let a_faces = face_sum_norm_sq(state.component(k), state.mass());
                assert!(rel_close(c.a[k], a_faces, 1e-12), "a[{k}]: {} vs {a_faces}", c.a[k]);

                let vals = state.component(k).values();
                let mask = state.mask(k);
                let mut b_naive = 0.0;
                for i in 0..vals.len() {
                    b_naive += f64::from(mask[i]) * vals[i].abs().powf(2.0 * p);
                }
                b_naive *= state.mu_of(k) * vol;
                assert!(rel_close(c.b[k], b_naive, 1e-12), "b[{k}]: {} vs {b_naive}", c.b[k]);
            }

            let v0 = state.component(0).values();
            let v1 = state.component(1).values();
            let mut d_naive = 0.0;
            for i in 0..v0.len() {
                d_naive += v0[i].abs().powf(p) * v1[i].abs().powf(p);
            }
            d_naive *= state.lambda_of(0, 1) * vol;
            assert!(rel_close(c.d[0][1], d_naive, 1e-12));
            assert_eq!(c.d[0][1], c.d[1][0]);
            assert_eq!(c.d[0][0], 0.0);
            assert!(c.d[0][1] < 0.0, "competitive coupling is negative");

            let e = energy(&state);
            let e_naive = 0.5 * (c.a[0] + c.a[1]) - (c.b[0] + c.b[1]) / (2.0 * p) - d_naive / p;
            assert!(rel_close(e, e_naive, 1e-12));
        }
    }

    #[test]
    fn positive_mass_enters_quadratic_form() {
        let grid = grid3(12, 3.0);
        let params = two_comp_params(0.5);
        let u0 = gaussian(&grid, [0.6, 0.0, 0.0], 0.5, 1.0);
        let u1 = gaussian(&grid, [-0.6, 0.0, 0.0], 0.5, 1.0);
        // Rescaled kind: mass coefficient is eps itself.
        let state =
            SystemState::with_components(&grid, params, ProblemKind::RescaledU, vec![u0, u1]).unwrap();
        assert_eq!(state.mass(), 0.5);
        let c = nehari_coeffs(&state);
        let l2: f64 = grid::integrate(&Field::from_values(
            state.grid(),
            state.component(0).values().iter().map(|v| v * v).collect(),
        ).unwrap());
        let zero_mass = face_sum_norm_sq(state.component(0), 0.0);
        assert!(rel_close(c.a[0], zero_mass + 0.25 * l2, 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for &(p, signed) in &[(2.0, true), (1.6, false)] {
            let grid = grid3(12, 3.0);
            let mut params = two_comp_params(0.0);
            params.p = p;
            // For fractional p keep fields positive: the cross term is not
            // twice differentiable across sign changes and central
            // differences would see the kink.
            let offset = if signed { 0.0 } else { 0.4 };
            let mut u0 = gaussian(&grid, [0.3, 0.0, 0.0], 0.9, 1.0);
            let mut u1 = gaussian(&grid, [-0.3, 0.1, 0.0], 0.8, 0.8);
            if signed {
                u0.axpy(-0.55, &gaussian(&grid, [-0.8, 0.4, 0.2], 0.6, 1.0));
            } else {
                u0.values_mut().iter_mut().for_each(|v| *v += offset);
                u1.values_mut().iter_mut().for_each(|v| *v += offset);
            }
            let state = SystemState::with_components(
                &grid,
                params,
                ProblemKind::LimitSystem,
                vec![u0, u1],
            )
            .unwrap();

            let dir = gaussian(&grid, [0.1, -0.2, 0.3], 1.1, 0.7);
            let h = 1e-4;
            for k in 0..2 {
                let g = grad_component(&state, k);
                let analytic = grid::integrate_nodes(state.grid().as_ref(), &|i| {
                    g.values()[i] * dir.values()[i]
                });

                let mut plus = state.clone();
                let mut f = plus.component(k).clone();
                f.axpy(h, &dir);
                plus.set_component(k, f).unwrap();
                let mut minus = state.clone();
                let mut f = minus.component(k).clone();
                f.axpy(-h, &dir);
                minus.set_component(k, f).unwrap();
                let fd = (energy(&plus) - energy(&minus)) / (2.0 * h);
                assert!(
                    rel_close(analytic, fd, 1e-6),
                    "p={p} k={k}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn scaled_coeffs_match_recomputed_fields() {
        for &p in &[2.0, 1.7] {
            let state = sample_state(10, p);
            let c = nehari_coeffs(&state);
            let t = [1.37, 0.62];
            let exact = c.scaled(&t, p);

            let mut scaled = state.clone();
            for (k, f) in scaled.components_mut().iter_mut().enumerate() {
                f.scale(t[k]);
            }
            let recomputed = nehari_coeffs(&scaled);
            for k in 0..2 {
                assert!(rel_close(exact.a[k], recomputed.a[k], 1e-13));
                assert!(rel_close(exact.b[k], recomputed.b[k], 1e-13));
            }
            assert!(rel_close(exact.d[0][1], recomputed.d[0][1], 1e-13));

            // Residual of the scaled state factors as t_k * F_k(t).
            let r_scaled = exact.residuals();
            for k in 0..2 {
                let tk = t[k];
                let tkp = tk.powf(p);
                let other = t[1 - k].powf(p);
                let f_k = c.a[k] * tk - c.b[k] * tk.powf(2.0 * p - 1.0)
                    - c.d[k][1 - k] * other * tkp / tk;
                assert!(rel_close(r_scaled[k], tk * f_k, 1e-12));
            }
        }
    }

    #[test]
    fn single_component_projection_matches_closed_form_and_bisection() {
        for &p in &[2.0, 1.6, 2.4] {
            let c = NehariCoeffs { a: vec![2.3], b: vec![1.7], d: vec![vec![0.0]] };
            let t = project_scalings(&c, p).unwrap();
            let closed = (2.3_f64 / 1.7).powf(1.0 / (2.0 * p - 2.0));
            assert!(rel_close(t[0], closed, 1e-12), "p={p}");
            // Bisection from a far-off guess agrees with the solver.
            let bis = scalar_root(2.3, 1.7, 0.0, p, 100.0).unwrap();
            assert!(rel_close(t[0], bis, 1e-10), "p={p}");
        }
    }

    #[test]
    fn two_component_projection_matches_linear_solve_at_p_two() {
        // At p = 2 the root system is linear in tau = t^2:
        // a = M tau with M = [[b1, d], [d, b2]].
        let (a1, a2, b1, b2, d) = (1.2, 0.9, 1.0, 1.1, -0.4);
        let c = NehariCoeffs {
            a: vec![a1, a2],
            b: vec![b1, b2],
            d: vec![vec![0.0, d], vec![d, 0.0]],
        };
        let t = project_scalings(&c, 2.0).unwrap();
        let det = b1 * b2 - d * d;
        let tau1 = (b2 * a1 - d * a2) / det;
        let tau2 = (b1 * a2 - d * a1) / det;
        assert!(rel_close(t[0], tau1.sqrt(), 1e-12));
        assert!(rel_close(t[1], tau2.sqrt(), 1e-12));

        // Coupling pushes both scalings strictly above their decoupled values.
        assert!(t[0] > (a1 / b1).sqrt());
        assert!(t[1] > (a2 / b2).sqrt());

        let scaled = c.scaled(&t, 2.0);
        for k in 0..2 {
            assert!(scaled.residuals()[k].abs() <= 1e-12 * scaled.residual_scale(k));
        }
    }

    #[test]
    fn three_component_projection_matches_linear_solve_at_p_two() {
        let a = [1.0, 1.4, 0.8];
        let b = [1.2, 1.0, 0.9];
        let d01 = -0.25;
        let d02 = -0.15;
        let d12 = -0.3;
        let c = NehariCoeffs {
            a: a.to_vec(),
            b: b.to_vec(),
            d: vec![
                vec![0.0, d01, d02],
                vec![d01, 0.0, d12],
                vec![d02, d12, 0.0],
            ],
        };
        let t = project_scalings(&c, 2.0).unwrap();
        // Reference: solve M tau = a directly.
        let m = vec![
            vec![b[0], d01, d02],
            vec![d01, b[1], d12],
            vec![d02, d12, b[2]],
        ];
        let tau = gauss_solve(m, a.to_vec()).unwrap();
        for k in 0..3 {
            assert!(tau[k] > 0.0);
            assert!(rel_close(t[k], tau[k].sqrt(), 1e-11), "k={k}");
        }
    }

    #[test]
    fn projection_handles_fractional_p_and_wide_scales() {
        let cases = [
            (vec![1.2, 0.9], vec![1.0, 1.1], -0.4, 1.7),
            (vec![1e6, 2e-4], vec![3e-3, 5e2], -1e-4, 2.0),
            (vec![4.0, 4.0], vec![1.0, 1.0], -0.98, 2.5),
        ];
        for (a, b, d, p) in cases {
            let c = NehariCoeffs {
                a: a.clone(),
                b: b.clone(),
                d: vec![vec![0.0, d], vec![d, 0.0]],
            };
            let t = project_scalings(&c, p).unwrap_or_else(|e| panic!("p={p}: {e}"));
            let scaled = c.scaled(&t, p);
            for k in 0..2 {
                assert!(
                    scaled.residuals()[k].abs() <= 1e-11 * scaled.residual_scale(k),
                    "p={p} k={k} residual {:e}",
                    scaled.residuals()[k]
                );
                assert!(t[k] > (a[k] / b[k]).powf(1.0 / (2.0 * p - 2.0)));
            }
        }
    }

    #[test]
    fn projection_is_global_max_over_scalings() {
        let mut rng_state = 0x9e3779b97f4a7c15_u64;
        let mut unit = || {
            // xorshift-based uniform in [0, 1), test-local determinism.
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for &p in &[2.0, 1.7] {
            let c = NehariCoeffs {
                a: vec![1.2, 0.9],
                b: vec![1.0, 1.1],
                d: vec![vec![0.0, -0.4], vec![-0.4, 0.0]],
            };
            let t = project_scalings(&c, p).unwrap();
            let e_star = scaled_energy(&c, p, &t);
            for _ in 0..40 {
                let d0 = (0.05 + 0.25 * unit()) * if unit() < 0.5 { -1.0 } else { 1.0 };
                let d1 = (0.05 + 0.25 * unit()) * if unit() < 0.5 { -1.0 } else { 1.0 };
                let perturbed = [t[0] * d0.exp(), t[1] * d1.exp()];
                let e = scaled_energy(&c, p, &perturbed);
                assert!(e < e_star, "p={p}: perturbed {e} >= optimum {e_star}");
            }
        }
    }

    #[test]
    fn projection_rejects_mass_outside_attraction_ball() {
        let grid = grid3(14, 3.0);
        let params = two_comp_params(0.0);
        // Component 0 concentrated far from its attraction ball at the
        // origin: the weighted self-interaction integral goes negative.
        let u0 = gaussian(&grid, [2.0, 0.0, 0.0], 0.4, 1.0);
        let u1 = gaussian(&grid, [0.0, 0.0, 0.0], 0.4, 1.0);
        let state =
            SystemState::with_components(&grid, params, ProblemKind::LimitSystem, vec![u0, u1]).unwrap();
        let c = nehari_coeffs(&state);
        assert!(c.b[0] < 0.0);
        match nehari_project(&state) {
            Err(EnergyError::NotProjectable { component: 0, value }) => assert!(value <= 0.0),
            other => panic!("expected not-projectable, got {other:?}"),
        }
    }

    #[test]
    fn projected_state_satisfies_constraint_and_energy_identity() {
        for &p in &[2.0, 1.7] {
            let state = sample_state(12, p);
            let projection = nehari_project(&state).unwrap();

            // Recompute everything from the projected fields, ignoring the
            // exactly-scaled cache, and check the constraint residuals.
            let c = nehari_coeffs(&projection.state);
            for k in 0..2 {
                let r = c.residuals()[k];
                assert!(
                    r.abs() <= 1e-10 * c.residual_scale(k),
                    "p={p} k={k} residual {r:e}"
                );
            }

            // On the constraint manifold the energy collapses to
            // (p-1)/(2p) sum a_k, up to the residual budget.
            let e = energy(&projection.state);
            let collapsed = (p - 1.0) / (2.0 * p) * (c.a[0] + c.a[1]);
            let budget: f64 =
                c.residuals().iter().map(|r| r.abs()).sum::<f64>() / (2.0 * p) + 1e-12 * e.abs();
            assert!((e - collapsed).abs() <= budget, "p={p}: {e} vs {collapsed}");

            // The cached coefficients agree with the recomputation.
            for k in 0..2 {
                assert!(rel_close(projection.coeffs.a[k], c.a[k], 1e-12));
                assert!(rel_close(projection.coeffs.b[k], c.b[k], 1e-12));
            }

            // Projection fixes points already on the manifold.
            let again = nehari_project(&projection.state).unwrap();
            for k in 0..2 {
                assert!((again.scalings[k] - 1.0).abs() <= 1e-10, "p={p} k={k}");
            }
        }
    }

    #[test]
    fn disjoint_supports_decouple_exactly() {
        let grid = grid3(16, 3.0);
        let mut params = two_comp_params(0.0);
        params.centers = vec![vec![1.4, 0.0, 0.0], vec![-1.4, 0.0, 0.0]];
        // Compactly supported bumps around each center, radius well below the
        // separation: the cross integrand is identically zero.
        let bump = |center: [f64; 3]| {
            Field::from_fn(&grid, |x| {
                let r2 = (x[0] - center[0]).powi(2) + x[1] * x[1] + x[2] * x[2];
                let s2 = r2 / (0.81 * 0.81);
                if s2 < 1.0 { (-1.0 / (1.0 - s2)).exp() } else { 0.0 }
            })
        };
        let u0 = bump([1.4, 0.0, 0.0]);
        let u1 = bump([-1.4, 0.0, 0.0]);
        let state = SystemState::with_components(
            &grid,
            Params { eps: 0.9, ..params.clone() },
            ProblemKind::OriginalV,
            vec![u0.clone(), u1.clone()],
        )
        .unwrap();
        let c = nehari_coeffs(&state);
        assert_eq!(c.d[0][1], 0.0, "disjoint supports give exactly zero coupling");

        // Energy splits into the sum of single-component energies.
        let single = |k: usize, f: &Field| {
            let sp = Params {
                dim: 3,
                p: params.p,
                ell: 1,
                mu: vec![params.mu[k]],
                lambda: vec![vec![0.0]],
                centers: vec![params.centers[k].clone()],
                eps: 0.9,
            };
            let s = SystemState::with_components(&grid, sp, ProblemKind::OriginalV, vec![f.clone()])
                .unwrap();
            energy(&s)
        };
        let sum = single(0, &u0) + single(1, &u1);
        assert!(rel_close(energy(&state), sum, 1e-13));
    }

    #[test]
    fn sphere_energy_is_even_and_scale_invariant() {
        let state = sample_state(10, 2.0);
        let e = sphere_energy(&state).unwrap();

        let mut negated = state.clone();
        for f in negated.components_mut() {
            f.scale(-1.0);
        }
        assert_eq!(sphere_energy(&negated).unwrap(), e, "even under global sign flip");

        // Normalizing each component moves along the rays the projection
        // quotients out, so the value is unchanged.
        let mut normalized = state.clone();
        for k in 0..2 {
            let norm = normalized.norm_sq(k).sqrt();
            normalized.components_mut()[k].scale(1.0 / norm);
        }
        let e2 = sphere_energy(&normalized).unwrap();
        assert!(rel_close(e, e2, 1e-10), "invariant along rays: {e} vs {e2}");

        // Scaling one component far down leaves the projectable cone: the
        // precondition reads the raw coefficients, where the surviving
        // coupling term then dominates the shrunken self-interaction.
        let mut lopsided = state.clone();
        lopsided.components_mut()[0].scale(3.7);
        lopsided.components_mut()[1].scale(0.2);
        match sphere_energy(&lopsided) {
            Err(EnergyError::NotProjectable { value, .. }) => assert!(value <= 0.0),
            other => panic!("expected not-projectable, got {other:?}"),
        }
    }

    #[test]
    fn sphere_energy_respects_component_relabeling() {
        let grid = grid3(10, 3.0);
        let params = two_comp_params(0.0);
        let u0 = gaussian(&grid, [0.3, 0.1, 0.0], 0.9, 1.1);
        let u1 = gaussian(&grid, [-0.2, -0.1, 0.1], 0.8, 0.9);
        let state = SystemState::with_components(
            &grid,
            params.clone(),
            ProblemKind::LimitSystem,
            vec![u0.clone(), u1.clone()],
        )
        .unwrap();

        let swapped_params = Params {
            mu: vec![params.mu[1], params.mu[0]],
            centers: vec![params.centers[1].clone(), params.centers[0].clone()],
            ..params
        };
        let swapped = SystemState::with_components(
            &grid,
            swapped_params,
            ProblemKind::LimitSystem,
            vec![u1, u0],
        )
        .unwrap();
        let e = sphere_energy(&state).unwrap();
        let e_swapped = sphere_energy(&swapped).unwrap();
        assert!(rel_close(e, e_swapped, 1e-13), "{e} vs {e_swapped}");
    }

    #[test]
    fn limit_equation_kind_restricts_to_one_component() {
        let grid = grid3(10, 3.0);
        let params = two_comp_params(0.0);
        let u = gaussian(&grid, [0.0, 0.0, 0.0], 0.8, 1.0);
        let state = SystemState::with_components(
            &grid,
            params.clone(),
            ProblemKind::LimitEquation(1),
            vec![u.clone()],
        )
        .unwrap();
        assert_eq!(state.component_count(), 1);
        assert_eq!(state.component_id(0), 1);
        assert_eq!(state.mu_of(0), params.mu[1]);
        let c = nehari_coeffs(&state);
        assert_eq!(c.len(), 1);

        // Same field under the other component's index: only mu changes, so
        // the b coefficient scales by mu_0 / mu_1 exactly.
        let state0 = SystemState::with_components(
            &grid,
            params.clone(),
            ProblemKind::LimitEquation(0),
            vec![u],
        )
        .unwrap();
        let c0 = nehari_coeffs(&state0);
        assert!(rel_close(c0.b[0] * params.mu[1] / params.mu[0], c.b[0], 1e-14));
        assert_eq!(c0.a[0], c.a[0]);
    }

    #[test]
    fn gradient_of_projected_state_is_tangent_to_rays() {
        // On the constraint manifold, pairing the gradient of component k
        // with u_k itself reproduces the residual r_k, hence ~0.
        let state = sample_state(12, 2.0);
        let projection = nehari_project(&state).unwrap();
        let proj = &projection.state;
        for k in 0..2 {
            let g = grad_component(proj, k);
            let pairing = grid::integrate_nodes(proj.grid().as_ref(), &|i| {
                g.values()[i] * proj.component(k).values()[i]
            });
            let c = nehari_coeffs(proj);
            assert!(
                pairing.abs() <= 1e-10 * c.residual_scale(k),
                "k={k}: ray pairing {pairing:e}"
            );
        }
    }
}
