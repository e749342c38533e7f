//! Problem data for the coupled system
//!   -Delta v_i + v_i = mu_i Q_eps(x - y_i) |v_i|^(2p-2) v_i
//!                      + sum_{j != i} lambda_ij |v_j|^p |v_i|^(p-2) v_i
//! and its rescaled / limit variants. The weight Q is +1 strictly inside an
//! attraction ball and -1 outside (boundary included). Validation returns
//! violations as data; callers decide whether they are fatal.

use thiserror::Error;

/// Which variable the unknown fields live in. Each kind fixes the mass-term
/// coefficient and the attraction-ball geometry per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Original variable: unit mass term, balls B_eps(y_i).
    OriginalV,
    /// Rescaled variable u(x) = eps^(1/(p-1)) v(eps x): mass eps^2, balls B_1(y_i/eps).
    RescaledU,
    /// eps -> 0 limit of the rescaled system: no mass term, all balls B_1(0).
    LimitSystem,
    /// Single-component limit equation for component i: no mass, ball B_1(0).
    LimitEquation(usize),
}

impl ProblemKind {
    pub fn is_limit(self) -> bool {
        matches!(self, ProblemKind::LimitSystem | ProblemKind::LimitEquation(_))
    }

    /// Indices of system components this kind solves for.
    pub fn component_indices(self, ell: usize) -> Vec<usize> {
        match self {
            ProblemKind::LimitEquation(i) => vec![i],
            _ => (0..ell).collect(),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ProblemKind::OriginalV => "original_v",
            ProblemKind::RescaledU => "rescaled_u",
            ProblemKind::LimitSystem => "limit_system",
            ProblemKind::LimitEquation(_) => "limit_equation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Space dimension N >= 3.
    pub dim: usize,
    /// Subcritical power: 1 < p < N/(N-2), strictly on both sides.
    pub p: f64,
    /// Number of components.
    pub ell: usize,
    /// Self-interaction strengths mu_i > 0, length ell.
    pub mu: Vec<f64>,
    /// Symmetric coupling matrix, off-diagonal lambda_ij = lambda_ji < 0;
    /// the diagonal is unused and must be 0.
    pub lambda: Vec<Vec<f64>>,
    /// Attraction centers y_i, each of length dim.
    pub centers: Vec<Vec<f64>>,
    /// Attraction radius parameter; 0 is meaningful only for limit kinds.
    pub eps: f64,
}

impl Params {
    /// Critical exponent bound N/(N-2).
    pub fn p_critical(&self) -> f64 {
        self.dim as f64 / (self.dim as f64 - 2.0)
    }

    /// Coefficient in front of int u^2 in the quadratic form, per kind.
    pub fn mass_eps(&self, kind: ProblemKind) -> f64 {
        match kind {
            ProblemKind::OriginalV => 1.0,
            ProblemKind::RescaledU => self.eps,
            ProblemKind::LimitSystem | ProblemKind::LimitEquation(_) => 0.0,
        }
    }

    /// Attraction ball center for component i in the kind's variable.
    pub fn attraction_center(&self, kind: ProblemKind, i: usize) -> Vec<f64> {
        match kind {
            ProblemKind::OriginalV => self.centers[i].clone(),
            ProblemKind::RescaledU => self.centers[i].iter().map(|c| c / self.eps).collect(),
            ProblemKind::LimitSystem | ProblemKind::LimitEquation(_) => vec![0.0; self.dim],
        }
    }

    /// Attraction ball radius in the kind's variable.
    pub fn attraction_radius(&self, kind: ProblemKind) -> f64 {
        match kind {
            ProblemKind::OriginalV => self.eps,
            _ => 1.0,
        }
    }
}

/// A single violated constraint. Data, not a failure: empty list means valid.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimTooSmall { dim: usize },
    PNotGreaterThanOne { p: f64 },
    PNotBelowCritical { p: f64, bound: f64 },
    EllTooSmall,
    MuLengthMismatch { got: usize, want: usize },
    MuNotPositive { i: usize, value: f64 },
    LambdaShapeMismatch,
    LambdaDiagonalNonzero { i: usize },
    LambdaNotSymmetric { i: usize, j: usize },
    LambdaNotNegative { i: usize, j: usize, value: f64 },
    CentersLengthMismatch { got: usize, want: usize },
    CenterDimMismatch { i: usize },
    EpsNegative { eps: f64 },
    EpsZeroOutsideLimit,
    ComponentOutOfRange { i: usize, ell: usize },
    NotFinite { what: &'static str },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DimTooSmall { dim } => write!(f, "dim must be >= 3 (got {dim})"),
            Violation::PNotGreaterThanOne { p } => write!(f, "p not > 1 (got {p})"),
            Violation::PNotBelowCritical { p, bound } => {
                write!(f, "p not < N/(N-2) = {bound} (got {p})")
            }
            Violation::EllTooSmall => write!(f, "ell must be >= 1"),
            Violation::MuLengthMismatch { got, want } => {
                write!(f, "mu must have length ell = {want} (got {got})")
            }
            Violation::MuNotPositive { i, value } => {
                write!(f, "mu[{i}] must be positive (got {value})")
            }
            Violation::LambdaShapeMismatch => write!(f, "lambda must be an ell x ell matrix"),
            Violation::LambdaDiagonalNonzero { i } => write!(f, "lambda[{i}][{i}] must be 0"),
            Violation::LambdaNotSymmetric { i, j } => {
                write!(f, "lambda[{i}][{j}] != lambda[{j}][{i}]")
            }
            Violation::LambdaNotNegative { i, j, value } => {
                write!(f, "lambda[{i}][{j}] must be negative (got {value})")
            }
            Violation::CentersLengthMismatch { got, want } => {
                write!(f, "centers must have length ell = {want} (got {got})")
            }
            Violation::CenterDimMismatch { i } => {
                write!(f, "centers[{i}] must have length dim")
            }
            Violation::EpsNegative { eps } => write!(f, "eps must be nonnegative (got {eps})"),
            Violation::EpsZeroOutsideLimit => {
                write!(f, "eps must be positive for original/rescaled problems")
            }
            Violation::ComponentOutOfRange { i, ell } => {
                write!(f, "limit-equation component {i} out of range (ell = {ell})")
            }
            Violation::NotFinite { what } => write!(f, "{what} must be finite"),
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid parameters: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct InvalidParams {
    pub violations: Vec<Violation>,
}

/// Kind-independent parameter checks. Returns every violated constraint.
pub fn validate(params: &Params) -> Vec<Violation> {
    let mut out = Vec::new();
    if params.dim < 3 {
        out.push(Violation::DimTooSmall { dim: params.dim });
        // The critical bound N/(N-2) is meaningless below dim 3; stop early.
        return out;
    }
    if !params.p.is_finite() {
        out.push(Violation::NotFinite { what: "p" });
    } else {
        if params.p <= 1.0 {
            out.push(Violation::PNotGreaterThanOne { p: params.p });
        }
        let bound = params.p_critical();
        if params.p >= bound {
            out.push(Violation::PNotBelowCritical { p: params.p, bound });
        }
    }
    if params.ell < 1 {
        out.push(Violation::EllTooSmall);
    }
    if params.mu.len() != params.ell {
        out.push(Violation::MuLengthMismatch { got: params.mu.len(), want: params.ell });
    }
    for (i, &m) in params.mu.iter().enumerate() {
        if !m.is_finite() {
            out.push(Violation::NotFinite { what: "mu" });
        } else if m <= 0.0 {
            out.push(Violation::MuNotPositive { i, value: m });
        }
    }
    let ell = params.ell;
    if params.lambda.len() != ell || params.lambda.iter().any(|row| row.len() != ell) {
        out.push(Violation::LambdaShapeMismatch);
    } else {
        for i in 0..ell {
            if params.lambda[i][i] != 0.0 {
                out.push(Violation::LambdaDiagonalNonzero { i });
            }
            for j in (i + 1)..ell {
                let lij = params.lambda[i][j];
                let lji = params.lambda[j][i];
                if !(lij.is_finite() && lji.is_finite()) {
                    out.push(Violation::NotFinite { what: "lambda" });
                    continue;
                }
                if lij != lji {
                    out.push(Violation::LambdaNotSymmetric { i, j });
                }
                if lij >= 0.0 {
                    out.push(Violation::LambdaNotNegative { i, j, value: lij });
                }
            }
        }
    }
    if params.centers.len() != params.ell {
        out.push(Violation::CentersLengthMismatch { got: params.centers.len(), want: params.ell });
    }
    for (i, c) in params.centers.iter().enumerate() {
        if c.len() != params.dim {
            out.push(Violation::CenterDimMismatch { i });
        }
        if c.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NotFinite { what: "centers" });
        }
    }
    if !params.eps.is_finite() {
        out.push(Violation::NotFinite { what: "eps" });
    } else if params.eps < 0.0 {
        out.push(Violation::EpsNegative { eps: params.eps });
    }
    out
}

/// Kind-aware checks on top of `validate`: eps = 0 is rejected outside limit
/// kinds, and a limit-equation component index must be in range.
pub fn validate_for_kind(params: &Params, kind: ProblemKind) -> Vec<Violation> {
    let mut out = validate(params);
    if params.eps == 0.0 && !kind.is_limit() {
        out.push(Violation::EpsZeroOutsideLimit);
    }
    if let ProblemKind::LimitEquation(i) = kind {
        if i >= params.ell {
            out.push(Violation::ComponentOutOfRange { i, ell: params.ell });
        }
    }
    out
}

pub fn checked(params: Params, kind: ProblemKind) -> Result<Params, InvalidParams> {
    let violations = validate_for_kind(&params, kind);
    if violations.is_empty() {
        Ok(params)
    } else {
        Err(InvalidParams { violations })
    }
}

/// Sign-changing weight: +1 strictly inside the ball of the given radius
/// around center, -1 on the boundary and outside.
pub fn weight_q(x: &[f64], eps: f64, center: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), center.len());
    let mut dist2 = 0.0;
    for (a, b) in x.iter().zip(center) {
        let d = a - b;
        dist2 += d * d;
    }
    if dist2 < eps * eps {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_params() -> Params {
        Params {
            dim: 3,
            p: 2.0,
            ell: 2,
            mu: vec![1.0, 1.0],
            lambda: vec![vec![0.0, -1.0], vec![-1.0, 0.0]],
            centers: vec![vec![-1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            eps: 0.4,
        }
    }

    #[test]
    fn weight_examples() {
        // Strictly inside, boundary, outside; boundary counts as -1.
        assert_eq!(weight_q(&[0.5, 0.0, 0.0], 1.0, &[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(weight_q(&[1.0, 0.0, 0.0], 1.0, &[0.0, 0.0, 0.0]), -1.0);
        assert_eq!(weight_q(&[2.0, 0.0, 0.0], 1.0, &[0.0, 0.0, 0.0]), -1.0);
        // Off-center ball.
        assert_eq!(weight_q(&[2.2, 0.0, 0.0], 0.5, &[2.0, 0.0, 0.0]), 1.0);
        assert_eq!(weight_q(&[2.2, 0.5, 0.0], 0.5, &[2.0, 0.0, 0.0]), -1.0);
    }

    #[test]
    fn valid_params_pass() {
        assert!(validate(&base_params()).is_empty());
        for kind in [ProblemKind::OriginalV, ProblemKind::RescaledU, ProblemKind::LimitSystem] {
            assert!(validate_for_kind(&base_params(), kind).is_empty());
        }
    }

    #[test]
    fn p_critical_is_strict() {
        // p = 3 at N = 3 hits the bound and must be rejected by name.
        let mut p = base_params();
        p.p = 3.0;
        let v = validate(&p);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::PNotBelowCritical { .. }));
        assert!(v[0].to_string().contains("p not < N/(N-2)"), "message: {}", v[0]);
        // Just below the bound is fine.
        p.p = 2.999;
        assert!(validate(&p).is_empty());
        // p = 1 violates the lower bound.
        p.p = 1.0;
        let v = validate(&p);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::PNotGreaterThanOne { .. }));
    }

    #[test]
    fn single_violations_are_isolated() {
        // Each broken clause reports exactly itself.
        let mut p = base_params();
        p.mu[1] = -2.0;
        let v = validate(&p);
        assert_eq!(v, vec![Violation::MuNotPositive { i: 1, value: -2.0 }]);

        let mut p = base_params();
        p.lambda[0][1] = -0.5; // breaks symmetry only
        let v = validate(&p);
        assert_eq!(v, vec![Violation::LambdaNotSymmetric { i: 0, j: 1 }]);

        let mut p = base_params();
        p.lambda[0][1] = 0.5;
        p.lambda[1][0] = 0.5; // symmetric but positive
        let v = validate(&p);
        assert_eq!(v, vec![Violation::LambdaNotNegative { i: 0, j: 1, value: 0.5 }]);

        let mut p = base_params();
        p.centers.pop();
        let v = validate(&p);
        assert_eq!(v, vec![Violation::CentersLengthMismatch { got: 1, want: 2 }]);

        let mut p = base_params();
        p.eps = -0.1;
        let v = validate(&p);
        assert_eq!(v, vec![Violation::EpsNegative { eps: -0.1 }]);
    }

    #[test]
    fn eps_zero_only_for_limit_kinds() {
        let mut p = base_params();
        p.eps = 0.0;
        assert!(validate(&p).is_empty(), "plain validate leaves eps = 0 to kind checks");
        assert!(validate_for_kind(&p, ProblemKind::LimitSystem).is_empty());
        assert!(validate_for_kind(&p, ProblemKind::LimitEquation(0)).is_empty());
        let v = validate_for_kind(&p, ProblemKind::RescaledU);
        assert_eq!(v, vec![Violation::EpsZeroOutsideLimit]);
        let v = validate_for_kind(&p, ProblemKind::OriginalV);
        assert_eq!(v, vec![Violation::EpsZeroOutsideLimit]);
    }

    #[test]
    fn random_in_region_params_validate() {
        // Seeded sweep over the legal region: dim in 3..6, p strictly inside
        // (1, N/(N-2)), negative symmetric couplings.
        let mut state = 0x12345678u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let dim = 3 + (next() * 3.0) as usize;
            let bound = dim as f64 / (dim as f64 - 2.0);
            let p = 1.0 + (bound - 1.0) * (0.05 + 0.9 * next());
            let ell = 1 + (next() * 3.0) as usize;
            let mut lambda = vec![vec![0.0; ell]; ell];
            for i in 0..ell {
                for j in (i + 1)..ell {
                    let v = -(0.01 + next() * 10.0);
                    lambda[i][j] = v;
                    lambda[j][i] = v;
                }
            }
            let params = Params {
                dim,
                p,
                ell,
                mu: (0..ell).map(|_| 0.1 + next() * 5.0).collect(),
                lambda,
                centers: (0..ell).map(|_| (0..dim).map(|_| next() * 4.0 - 2.0).collect()).collect(),
                eps: 0.01 + next(),
            };
            let v = validate(&params);
            assert!(v.is_empty(), "unexpected violations: {v:?}");
        }
    }

    #[test]
    fn geometry_helpers_follow_kind() {
        let p = base_params();
        assert_eq!(p.attraction_radius(ProblemKind::OriginalV), 0.4);
        assert_eq!(p.attraction_radius(ProblemKind::RescaledU), 1.0);
        assert_eq!(p.attraction_radius(ProblemKind::LimitSystem), 1.0);
        assert_eq!(p.attraction_center(ProblemKind::RescaledU, 1), vec![2.5, 0.0, 0.0]);
        assert_eq!(p.attraction_center(ProblemKind::OriginalV, 1), vec![1.0, 0.0, 0.0]);
        assert_eq!(p.attraction_center(ProblemKind::LimitSystem, 1), vec![0.0, 0.0, 0.0]);
        assert_eq!(p.mass_eps(ProblemKind::OriginalV), 1.0);
        assert_eq!(p.mass_eps(ProblemKind::RescaledU), 0.4);
        assert_eq!(p.mass_eps(ProblemKind::LimitSystem), 0.0);
    }
}
