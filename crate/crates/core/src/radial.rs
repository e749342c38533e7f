//! Independent one-dimensional oracle for the single limit equation: a
//! finite-volume discretization of the radial energy
//!
//!   J(w) = 1/2 int |w'|^2 r^(N-1) omega dr
//!        - 1/(2p) int mu q(r) |w|^(2p) r^(N-1) omega dr,
//!
//! on [0, R] with the natural (Neumann) condition at the origin and a
//! Dirichlet wall at R, with q = +1 on r < 1 and -1 beyond, and omega the
//! area of the unit sphere. The same projection + preconditioned descent
//! scheme as the grid solver, but built on tridiagonal arrays with a direct
//! solve, sharing no discretization code with the grid: it cross-checks the
//! 3D results rather than reusing their machinery.

use crate::energy::{self, EnergyError, NehariCoeffs, Pow};
use crate::solver::{SolverConfig, SolverError};

/// Gamma(n/2) for positive integer n, by the half-integer recurrence.
fn gamma_half_integer(n: usize) -> f64 {
    assert!(n >= 1);
    // Gamma(1/2) = sqrt(pi), Gamma(1) = 1, Gamma(x + 1) = x Gamma(x).
    let mut x = if n % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut k = if n % 2 == 0 { 2 } else { 1 };
    while k < n {
        x *= k as f64 / 2.0;
        k += 2;
    }
    x
}

/// Surface area of the unit sphere in dim dimensions.
pub fn unit_sphere_area(dim: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(dim as f64 / 2.0) / gamma_half_integer(dim)
}

/// The discrete radial problem: cell centers r_k = (k + 1/2) dr, face radii
/// rho_k = k dr, quadratic form assembled face by face.
struct RadialProblem {
    dim: usize,
    mu: f64,
    p: f64,
    dr: f64,
    omega: f64,
    /// Cell centers.
    r: Vec<f64>,
    /// Weight sign at each cell center: +1 strictly inside the unit ball.
    q: Vec<f64>,
    /// Tridiagonal quadratic form: diag, and the band between k and k+1.
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl RadialProblem {
    fn new(dim: usize, mu: f64, p: f64, radius_outer: f64, cells: usize) -> RadialProblem {
        let dr = radius_outer / cells as f64;
        let omega = unit_sphere_area(dim);
        let r: Vec<f64> = (0..cells).map(|k| (k as f64 + 0.5) * dr).collect();
        let q: Vec<f64> = r.iter().map(|&rk| if rk < 1.0 { 1.0 } else { -1.0 }).collect();

        let pow_face = |rho: f64| rho.powi(dim as i32 - 1);
        let mut diag = vec![0.0; cells];
        let mut off = vec![0.0; cells - 1];
        // Interior faces rho_k, k = 1..cells-1, join cells k-1 and k. The
        // face at the origin carries rho^(dim-1) = 0: Neumann for free.
        for k in 1..cells {
            let w = omega * pow_face(k as f64 * dr) / dr;
            diag[k - 1] += w;
            diag[k] += w;
            off[k - 1] -= w;
        }
        // Dirichlet wall at R: the zero boundary value sits half a cell away
        // from the last center, doubling the face weight.
        diag[cells - 1] += 2.0 * omega * pow_face(radius_outer) / dr;
        RadialProblem { dim, mu, p, dr, omega, r, q, diag, off }
    }

    fn cells(&self) -> usize {
        self.r.len()
    }

    /// y = A w for the quadratic form matrix A.
    fn apply(&self, w: &[f64], out: &mut [f64]) {
        let n = self.cells();
        for k in 0..n {
            let mut v = self.diag[k] * w[k];
            if k > 0 {
                v += self.off[k - 1] * w[k - 1];
            }
            if k + 1 < n {
                v += self.off[k] * w[k + 1];
            }
            out[k] = v;
        }
    }

    /// a(w, w) = w . A w.
    fn norm_sq(&self, w: &[f64]) -> f64 {
        let mut aw = vec![0.0; w.len()];
        self.apply(w, &mut aw);
        dot(&aw, w)
    }

    /// Weighted self-interaction integral b(w).
    fn b_coeff(&self, w: &[f64]) -> f64 {
        let pw = Pow::new(2.0 * self.p);
        let mut s = 0.0;
        for k in 0..self.cells() {
            s += self.q[k] * pw.abs(w[k]) * self.r[k].powi(self.dim as i32 - 1);
        }
        self.mu * self.omega * self.dr * s
    }

    /// Euler-Lagrange residual G = A w - d/dw [b(w)/(2p)].
    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        self.apply(w, out);
        let pw = Pow::new(2.0 * self.p - 1.0);
        let scale = self.mu * self.omega * self.dr;
        for k in 0..self.cells() {
            out[k] -= scale * self.q[k] * self.r[k].powi(self.dim as i32 - 1) * pw.signed(w[k]);
        }
    }

    /// Direct tridiagonal solve A x = rhs (Thomas algorithm). The form is
    /// positive definite, so no pivoting is needed.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.cells();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = self.off.first().copied().unwrap_or(0.0) / self.diag[0];
        d[0] = rhs[0] / self.diag[0];
        for k in 1..n {
            let m = self.diag[k] - self.off[k - 1] * c[k - 1];
            if k < n - 1 {
                c[k] = self.off[k] / m;
            }
            d[k] = (rhs[k] - self.off[k - 1] * d[k - 1]) / m;
        }
        let mut x = d;
        for k in (0..n - 1).rev() {
            let next = x[k + 1];
            x[k] -= c[k] * next;
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Converged radial profile and its invariants.
#[derive(Debug, Clone)]
pub struct RadialSolution {
    /// Least-energy value of the radial problem.
    pub kappa: f64,
    /// Cell-center radii.
    pub r: Vec<f64>,
    /// Profile at the cell centers, on the constraint manifold.
    pub w: Vec<f64>,
    /// Squared norm of the profile under the quadratic form.
    pub norm_sq: f64,
    /// Final preconditioned gradient norm.
    pub stationarity: f64,
    pub iterations: usize,
}

fn validate_inputs(
    mu: f64,
    p: f64,
    dim: usize,
    radius_outer: f64,
    cells: usize,
) -> Result<(), SolverError> {
    let bad = |reason: String| Err(SolverError::BadConfig { reason });
    if dim < 3 {
        return bad(format!("dimension must be at least 3, got {dim}"));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return bad(format!("mu must be positive and finite, got {mu}"));
    }
    let critical = dim as f64 / (dim as f64 - 2.0);
    if !(p > 1.0 && p < critical) {
        return bad(format!("p must lie in (1, {critical}), got {p}"));
    }
    if !(radius_outer > 1.0 && radius_outer.is_finite()) {
        return bad(format!("outer radius must exceed the unit ball, got {radius_outer}"));
    }
    if cells < 8 {
        return bad(format!("need at least 8 radial cells, got {cells}"));
    }
    Ok(())
}

/// Minimize the radial limit-equation energy. Returns the least-energy value
/// kappa = (p-1)/(2p) a(w, w) and the profile w on [0, radius_outer]
/// discretized by `cells` finite-volume cells.
pub fn solve_radial_limit_equation(
    mu: f64,
    p: f64,
    dim: usize,
    radius_outer: f64,
    cells: usize,
    config: &SolverConfig,
) -> Result<RadialSolution, SolverError> {
    validate_inputs(mu, p, dim, radius_outer, cells)?;
    config.validate()?;
    let problem = RadialProblem::new(dim, mu, p, radius_outer, cells);

    // Smooth bump supported strictly inside the weight ball: projectable by
    // construction (the weighted integral sees only the +1 region).
    let mut w: Vec<f64> = problem
        .r
        .iter()
        .map(|&rk| {
            let s2 = (rk / 0.9) * (rk / 0.9);
            if s2 < 1.0 { (-1.0 / (1.0 - s2)).exp() } else { 0.0 }
        })
        .collect();

    let mut iterations = 0;
    descend_radial(&problem, &mut w, config, config.max_iters, true, &mut iterations)?;
    // Nonnegativity pass, mirroring the grid solver.
    for v in w.iter_mut() {
        *v = v.abs();
    }
    let outcome = descend_radial(&problem, &mut w, config, 80, false, &mut iterations)?;

    let mut profile = w;
    for v in profile.iter_mut() {
        *v *= outcome.scaling;
    }
    let norm_sq = problem.norm_sq(&profile);
    Ok(RadialSolution {
        kappa: outcome.energy,
        r: problem.r.clone(),
        w: profile,
        norm_sq,
        stationarity: outcome.stationarity,
        iterations,
    })
}

struct RadialOutcome {
    scaling: f64,
    energy: f64,
    stationarity: f64,
}

/// The same descent as the grid solver, on the 1D arrays: normalize,
/// project (scalar), precondition the gradient by a direct tridiagonal
/// solve, Armijo on the renormalized tangent path.
fn descend_radial(
    problem: &RadialProblem,
    w: &mut Vec<f64>,
    config: &SolverConfig,
    max_iters: usize,
    strict: bool,
    iterations: &mut usize,
) -> Result<RadialOutcome, SolverError> {
    let p = problem.p;
    let n = problem.cells();
    let mut aw = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut last: Option<RadialOutcome> = None;
    let mut last_grad_norm = f64::INFINITY;

    for iter in 0..=max_iters {
        // Normalize to a(w, w) = 1.
        let a = problem.norm_sq(w);
        if !(a > 0.0) {
            return Err(EnergyError::ZeroComponent { component: 0, value: a }.into());
        }
        let s = a.sqrt();
        for v in w.iter_mut() {
            *v /= s;
        }

        let b = problem.b_coeff(w);
        let coeffs = NehariCoeffs { a: vec![1.0], b: vec![b], d: vec![vec![0.0]] };
        let t = energy::project_scalings(&coeffs, p)?[0];
        let psi = energy::energy_from_coeffs(&coeffs.scaled(&[t], p), p);

        // Gradient at the projected state t w, preconditioned exactly.
        let tw: Vec<f64> = w.iter().map(|v| t * v).collect();
        problem.gradient(&tw, &mut grad);
        let g = problem.solve(&grad);
        let grad_norm_full = dot(&grad, &g).max(0.0).sqrt();
        // Tangency through the form: <g, w>_A = g . (A w).
        problem.apply(w, &mut aw);
        let beta = dot(&g, &aw);
        let dir: Vec<f64> = (0..n).map(|k| -t * (g[k] - beta * w[k])).collect();
        let dir_norm_sq = problem.norm_sq(&dir).max(0.0);
        let grad_norm = dir_norm_sq.sqrt();

        last = Some(RadialOutcome { scaling: t, energy: psi, stationarity: grad_norm_full });
        last_grad_norm = grad_norm;
        if grad_norm <= config.grad_tol && grad_norm_full <= config.grad_tol {
            return Ok(last.unwrap());
        }
        if iter == max_iters {
            break;
        }
        *iterations += 1;

        let slack = 4.0 * f64::EPSILON * psi.abs();
        let mut alpha = config.step0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..n).map(|k| w[k] + alpha * dir[k]).collect();
            let a_trial = 1.0 + alpha * alpha * dir_norm_sq;
            let b_trial = problem.b_coeff(&trial);
            let coeffs =
                NehariCoeffs { a: vec![a_trial], b: vec![b_trial], d: vec![vec![0.0]] };
            if let Ok(t_trial) = energy::project_scalings(&coeffs, p) {
                let psi_trial =
                    energy::energy_from_coeffs(&coeffs.scaled(&t_trial, p), p);
                if psi_trial <= psi - config.armijo_c * alpha * dir_norm_sq + slack {
                    *w = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= config.armijo_shrink;
        }
        if !accepted {
            return Err(SolverError::LineSearchStall {
                iteration: iter,
                energy: psi,
                last_good: None,
            });
        }
    }

    let out = last.expect("at least one evaluation");
    if strict {
        return Err(SolverError::MaxIters {
            iterations: max_iters,
            grad_norm: last_grad_norm,
            last_good: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300)
    }

    #[test]
    fn sphere_areas_match_known_values() {
        assert!(rel_close(unit_sphere_area(2), 2.0 * std::f64::consts::PI, 1e-14));
        assert!(rel_close(unit_sphere_area(3), 4.0 * std::f64::consts::PI, 1e-14));
        assert!(rel_close(unit_sphere_area(4), 2.0 * std::f64::consts::PI.powi(2), 1e-14));
        // Gamma(5/2) = 3/4 sqrt(pi).
        assert!(rel_close(
            gamma_half_integer(5),
            0.75 * std::f64::consts::PI.sqrt(),
            1e-14
        ));
    }

    #[test]
    fn quadratic_form_matches_analytic_energy_of_linear_profile() {
        // w(r) = R - r has |w'| = 1: int_0^R r^2 dr * 4pi = 4pi R^3 / 3.
        let (dim, radius, cells) = (3, 6.0, 4096);
        let problem = RadialProblem::new(dim, 1.0, 2.0, radius, cells);
        let w: Vec<f64> = problem.r.iter().map(|&r| radius - r).collect();
        let a = problem.norm_sq(&w);
        let exact = 4.0 * std::f64::consts::PI * radius.powi(3) / 3.0;
        assert!(rel_close(a, exact, 2e-3), "{a} vs {exact}");
    }

    #[test]
    fn weighted_integral_matches_analytic_value_for_constant_profile() {
        // b(1) = mu omega (int_0^1 r^2 - int_1^R r^2) = mu omega (2 - R^3)/3.
        let (radius, cells) = (4.0, 4096);
        let mu = 1.3;
        let problem = RadialProblem::new(3, mu, 2.0, radius, cells);
        let w = vec![1.0; cells];
        let b = problem.b_coeff(&w);
        let omega = 4.0 * std::f64::consts::PI;
        let exact = mu * omega * (2.0 - radius.powi(3)) / 3.0;
        assert!(rel_close(b, exact, 1e-3), "{b} vs {exact}");
        assert!(b < 0.0, "mass outside the ball dominates for the constant");
    }

    #[test]
    fn tridiagonal_solve_inverts_the_form() {
        let problem = RadialProblem::new(3, 1.0, 2.0, 5.0, 257);
        let rhs: Vec<f64> = (0..257).map(|k| ((k * 2654435761usize) % 1000) as f64 / 500.0 - 1.0).collect();
        let x = problem.solve(&rhs);
        let mut ax = vec![0.0; 257];
        problem.apply(&x, &mut ax);
        let err = ax
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        let scale = rhs.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
        assert!(err <= 1e-11 * scale.max(1.0), "residual {err}");
    }

    #[test]
    fn profile_is_positive_decreasing_and_decays_like_the_fundamental_solution() {
        let config = SolverConfig { grad_tol: 1e-8, ..SolverConfig::default() };
        let sol = solve_radial_limit_equation(1.0, 2.0, 3, 8.0, 2048, &config).unwrap();

        assert!(sol.kappa > 0.0);
        // Energy identity on the constraint manifold.
        assert!(
            rel_close(sol.kappa, 0.25 * sol.norm_sq, 1e-9),
            "kappa {} vs norm identity {}",
            sol.kappa,
            0.25 * sol.norm_sq
        );
        assert!(sol.stationarity <= 1e-8);

        let sup = sol.w.iter().cloned().fold(0.0_f64, f64::max);
        assert!(sup > 0.0);
        for (k, &v) in sol.w.iter().enumerate() {
            assert!(v >= -1e-12 * sup, "negative value at cell {k}");
        }
        // Radially decreasing, up to roundoff in the tail.
        for k in 0..sol.w.len() - 1 {
            assert!(
                sol.w[k + 1] <= sol.w[k] + 1e-10 * sup,
                "profile rises at cell {k}: {} -> {}",
                sol.w[k],
                sol.w[k + 1]
            );
        }
        // w(r) r^(N-2) stays bounded on [1, R/2] by its value near r = 1.
        let near_one: f64 = sol
            .r
            .iter()
            .zip(&sol.w)
            .filter(|(r, _)| (0.9..1.1).contains(*r))
            .map(|(r, w)| w * r)
            .fold(0.0, f64::max);
        assert!(near_one > 0.0);
        for (r, w) in sol.r.iter().zip(&sol.w) {
            if (1.0..=4.0).contains(r) {
                assert!(
                    w * r <= 1.25 * near_one,
                    "decay violated at r = {r}: w r = {} vs shell {near_one}",
                    w * r
                );
            }
        }
    }

    #[test]
    fn kappa_scales_exactly_in_mu() {
        let config = SolverConfig { grad_tol: 1e-9, ..SolverConfig::default() };
        let base = solve_radial_limit_equation(1.0, 2.0, 3, 6.0, 1024, &config).unwrap();
        let scaled = solve_radial_limit_equation(4.0, 2.0, 3, 6.0, 1024, &config).unwrap();
        // kappa(mu) = mu^(-1/(p-1)) kappa(1): at p = 2, kappa(4) = kappa(1)/4.
        assert!(
            rel_close(scaled.kappa, base.kappa / 4.0, 1e-7),
            "{} vs {}",
            scaled.kappa,
            base.kappa / 4.0
        );
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let config = SolverConfig::default();
        assert!(matches!(
            solve_radial_limit_equation(1.0, 2.0, 2, 6.0, 256, &config),
            Err(SolverError::BadConfig { .. })
        ));
        assert!(matches!(
            solve_radial_limit_equation(1.0, 3.0, 3, 6.0, 256, &config),
            Err(SolverError::BadConfig { .. })
        ));
        assert!(matches!(
            solve_radial_limit_equation(1.0, 2.0, 3, 0.5, 256, &config),
            Err(SolverError::BadConfig { .. })
        ));
        assert!(matches!(
            solve_radial_limit_equation(-1.0, 2.0, 3, 6.0, 256, &config),
            Err(SolverError::BadConfig { .. })
        ));
    }
}
