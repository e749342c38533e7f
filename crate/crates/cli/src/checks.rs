//! Named invariant suite behind the `check` subcommand. Every check is a
//! self-contained numerical experiment on the configured problem: it states
//! what must hold, measures the worst violation over deterministic seeded
//! trials, and reports pass/fail with the measured number.

use std::sync::Arc;

use nehari_core::energy::{
    self, energy_from_coeffs, nehari_coeffs, nehari_project, project_scalings,
};
use nehari_core::grid::{self, Field, Grid, SpectralHelmholtz};
use nehari_core::model::ProblemKind;
use nehari_core::solver::init_bumps;

use crate::config::RunConfig;

/// Result of one invariant check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst measured violation and the bound it was held against.
    pub detail: String,
}

/// Number of independent seeded trials per randomized check.
const TRIALS: u64 = 10;
/// Central finite-difference step for the derivative check.
const FD_STEP: f64 = 1e-4;
/// Relative agreement required between analytic and finite-difference
/// directional derivatives.
const FD_TOL: f64 = 1e-6;
/// Identity and projection-residual tolerance (relative).
const IDENTITY_TOL: f64 = 1e-10;
/// Closed-form scaling agreement for the single-component projection.
const SCALING_TOL: f64 = 1e-12;
/// Relative residual allowed after the coupled projection.
const RESIDUAL_TOL: f64 = 1e-10;
/// Discrete summation-by-parts must hold to roundoff.
const BILINEAR_TOL: f64 = 1e-12;
/// Agreement between the direct and iterative inverses of the quadratic form.
const INVERSE_TOL: f64 = 1e-9;

fn outcome(name: &'static str, worst: f64, bound: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= bound,
        detail: format!("worst {worst:.3e} against bound {bound:.3e}"),
    }
}

/// Smooth signed probe direction: a product of wall-vanishing sine modes,
/// with frequencies offset by the seed and component so no two trials probe
/// the same direction.
fn probe_direction(grid: &Arc<Grid>, seed: u64, comp: usize) -> Field {
    let l = grid.half_width();
    let base = 1 + (seed as usize + comp) % 3;
    Field::from_fn(grid, |x| {
        let mut v = 1.0;
        let mut w = 1.0;
        for (d, &xd) in x.iter().enumerate() {
            let s = (xd + l) / (2.0 * l) * std::f64::consts::PI;
            v *= ((base + d) as f64 * s).sin();
            w *= ((base + d + 2) as f64 * s).sin();
        }
        v + 0.5 * w
    })
}

/// Analytic directional derivatives of the energy against central finite
/// differences, component by component.
fn check_directional_derivative(cfg: &RunConfig, grid: &Arc<Grid>) -> CheckOutcome {
    let vol = grid.cell_volume();
    let mut worst: f64 = 0.0;
    for seed in 0..TRIALS {
        let state = match init_bumps(grid, &cfg.params, ProblemKind::RescaledU, seed) {
            Ok(s) => s,
            Err(e) => {
                return CheckOutcome {
                    name: "directional-derivative",
                    passed: false,
                    detail: format!("state construction failed: {e}"),
                }
            }
        };
        for k in 0..state.component_count() {
            let g = energy::grad_component(&state, k);
            let g_norm = (vol * grid::pairwise_dot(g.values(), g.values())).sqrt();

            // Two unit probes per component: an arbitrary smooth direction,
            // and the gradient direction itself (the least degenerate one).
            // The disagreement is measured against the gradient magnitude,
            // the natural scale of any directional derivative at this state.
            let mut arbitrary = probe_direction(grid, seed, k);
            let a_norm = (vol * grid::pairwise_dot(arbitrary.values(), arbitrary.values())).sqrt();
            arbitrary.scale(1.0 / a_norm);
            let mut steepest = g.clone();
            steepest.scale(1.0 / g_norm);

            for w in [&arbitrary, &steepest] {
                let analytic = vol * grid::pairwise_dot(g.values(), w.values());

                let mut plus = state.clone();
                let mut f = plus.component(k).clone();
                f.axpy(FD_STEP, w);
                plus.set_component(k, f).expect("same grid");
                let mut minus = state.clone();
                let mut f = minus.component(k).clone();
                f.axpy(-FD_STEP, w);
                minus.set_component(k, f).expect("same grid");
                let fd = (energy::energy(&plus) - energy::energy(&minus)) / (2.0 * FD_STEP);

                worst = worst.max((analytic - fd).abs() / g_norm.max(1e-300));
            }
        }
    }
    outcome("directional-derivative", worst, FD_TOL)
}

/// On the constraint manifold the energy must equal (p-1)/(2p) times the sum
/// of squared norms, and the constraint residuals must vanish.
fn check_constraint_identity(cfg: &RunConfig, grid: &Arc<Grid>) -> CheckOutcome {
    let p = cfg.params.p;
    let share = (p - 1.0) / (2.0 * p);
    let mut worst: f64 = 0.0;
    for seed in 0..TRIALS {
        let state = match init_bumps(grid, &cfg.params, ProblemKind::RescaledU, seed) {
            Ok(s) => s,
            Err(e) => {
                return CheckOutcome {
                    name: "constraint-energy-identity",
                    passed: false,
                    detail: format!("state construction failed: {e}"),
                }
            }
        };
        let proj = match nehari_project(&state) {
            Ok(pr) => pr,
            Err(e) => {
                return CheckOutcome {
                    name: "constraint-energy-identity",
                    passed: false,
                    detail: format!("projection failed: {e}"),
                }
            }
        };
        let j = energy_from_coeffs(&proj.coeffs, p);
        let a_sum: f64 = proj.coeffs.a.iter().sum();
        worst = worst.max((j - share * a_sum).abs() / j.abs().max(1.0));
        for (r, a) in proj.coeffs.residuals().iter().zip(&proj.coeffs.a) {
            worst = worst.max(r.abs() / a.abs().max(1.0));
        }
    }
    outcome("constraint-energy-identity", worst, IDENTITY_TOL)
}

/// Single-component projection against its closed form t = (a/b)^(1/(2p-2)),
/// and the coupled projection against its defining residuals, with each
/// coupled scaling at or above the decoupled one.
fn check_projection_scalings(cfg: &RunConfig, grid: &Arc<Grid>) -> CheckOutcome {
    let p = cfg.params.p;
    let exp_inv = 1.0 / (2.0 * p - 2.0);
    let mut worst_closed: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;

    for seed in 0..TRIALS {
        // Closed form for one component alone.
        let single = match init_bumps(grid, &cfg.params, ProblemKind::LimitEquation(0), seed) {
            Ok(s) => s,
            Err(e) => {
                return CheckOutcome {
                    name: "projection-scalings",
                    passed: false,
                    detail: format!("state construction failed: {e}"),
                }
            }
        };
        let c = nehari_coeffs(&single);
        match project_scalings(&c, p) {
            Ok(t) => {
                let exact = (c.a[0] / c.b[0]).powf(exp_inv);
                worst_closed = worst_closed.max((t[0] - exact).abs() / exact);
            }
            Err(e) => {
                return CheckOutcome {
                    name: "projection-scalings",
                    passed: false,
                    detail: format!("single-component projection failed: {e}"),
                }
            }
        }

        if cfg.params.ell < 2 {
            continue;
        }
        // Coupled case with strictly negative interaction integrals: mix the
        // components so their supports overlap.
        let mut state = match init_bumps(grid, &cfg.params, ProblemKind::LimitSystem, seed) {
            Ok(s) => s,
            Err(e) => {
                return CheckOutcome {
                    name: "projection-scalings",
                    passed: false,
                    detail: format!("state construction failed: {e}"),
                }
            }
        };
        let originals: Vec<Field> = state.components().to_vec();
        for k in 0..originals.len() {
            let mut f = originals[k].clone();
            f.axpy(0.4, &originals[(k + 1) % originals.len()]);
            state.set_component(k, f).expect("same grid");
        }
        let c = nehari_coeffs(&state);
        if c.d.iter().enumerate().any(|(k, row)| {
            row.iter().enumerate().any(|(j, &v)| j != k && v >= 0.0)
        }) {
            return CheckOutcome {
                name: "projection-scalings",
                passed: false,
                detail: "mixed state failed to produce negative interaction integrals".into(),
            };
        }
        match project_scalings(&c, p) {
            Ok(t) => {
                let scaled = c.scaled(&t, p);
                for (k, r) in scaled.residuals().iter().enumerate() {
                    worst_residual = worst_residual.max(r.abs() / scaled.a[k].max(1.0));
                    let decoupled = (c.a[k] / c.b[k]).powf(exp_inv);
                    if t[k] < decoupled * (1.0 - 1e-12) {
                        return CheckOutcome {
                            name: "projection-scalings",
                            passed: false,
                            detail: format!(
                                "coupled scaling {} fell below decoupled {} in component {k}",
                                t[k], decoupled
                            ),
                        };
                    }
                }
            }
            Err(e) => {
                return CheckOutcome {
                    name: "projection-scalings",
                    passed: false,
                    detail: format!("coupled projection failed: {e}"),
                }
            }
        }
    }
    CheckOutcome {
        name: "projection-scalings",
        passed: worst_closed <= SCALING_TOL && worst_residual <= RESIDUAL_TOL,
        detail: format!(
            "closed-form gap {worst_closed:.3e} against bound {SCALING_TOL:.3e}, \
             coupled residual {worst_residual:.3e} against bound {RESIDUAL_TOL:.3e}"
        ),
    }
}

/// The stencil pairing must reproduce the quadratic form exactly
/// (discrete summation by parts) and be symmetric.
fn check_summation_by_parts(cfg: &RunConfig, grid: &Arc<Grid>) -> CheckOutcome {
    let mass = cfg.params.eps;
    let vol = grid.cell_volume();
    let mut worst: f64 = 0.0;
    for seed in 0..TRIALS {
        let f = probe_direction(grid, seed, 0);
        let g = probe_direction(grid, seed + 7, 1);
        let af = grid::apply_helmholtz(&f, mass);
        let ag = grid::apply_helmholtz(&g, mass);
        let pair_fg = vol * grid::pairwise_dot(af.values(), g.values());
        let pair_gf = vol * grid::pairwise_dot(f.values(), ag.values());
        let form = grid::inner_h1(&f, &g, mass);
        let scale = grid::inner_h1(&f, &f, mass).sqrt() * grid::inner_h1(&g, &g, mass).sqrt();
        worst = worst.max((pair_fg - form).abs() / scale);
        worst = worst.max((pair_fg - pair_gf).abs() / scale);
    }
    outcome("summation-by-parts", worst, BILINEAR_TOL)
}

/// The direct (spectral) and iterative (conjugate-gradient) inverses of the
/// quadratic form must agree, and the direct inverse must actually invert
/// the stencil.
fn check_riesz_inverse(cfg: &RunConfig, grid: &Arc<Grid>) -> CheckOutcome {
    let mass = cfg.params.eps;
    let riesz = SpectralHelmholtz::new(grid);
    let mut worst: f64 = 0.0;
    for seed in 0..2u64 {
        let rhs = probe_direction(grid, seed, 2);
        let direct = riesz.solve(&rhs, mass);
        let back = grid::apply_helmholtz(&direct, mass);
        let mut res: f64 = 0.0;
        for (b, r) in back.values().iter().zip(rhs.values()) {
            res = res.max((b - r).abs());
        }
        worst = worst.max(res / rhs.sup_abs());

        let iterative = match grid::helmholtz_solve(&rhs, mass, 1e-12) {
            Ok(x) => x,
            Err(e) => {
                return CheckOutcome {
                    name: "riesz-inverse",
                    passed: false,
                    detail: format!("iterative solve failed: {e}"),
                }
            }
        };
        let mut diff: f64 = 0.0;
        for (a, b) in direct.values().iter().zip(iterative.values()) {
            diff = diff.max((a - b).abs());
        }
        worst = worst.max(diff / direct.sup_abs());
    }
    outcome("riesz-inverse", worst, INVERSE_TOL)
}

/// Run the whole suite on the configured problem and grid.
pub fn run_all(cfg: &RunConfig) -> Vec<CheckOutcome> {
    let grid = match Grid::new(cfg.params.dim, cfg.grid_n, cfg.grid_half_width) {
        Ok(g) => Arc::new(g),
        Err(e) => {
            return vec![CheckOutcome {
                name: "grid-construction",
                passed: false,
                detail: e.to_string(),
            }]
        }
    };
    vec![
        check_directional_derivative(cfg, &grid),
        check_constraint_identity(cfg, &grid),
        check_projection_scalings(cfg, &grid),
        check_summation_by_parts(cfg, &grid),
        check_riesz_inverse(cfg, &grid),
    ]
}
