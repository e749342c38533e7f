//! Uniform tensor grid on the box [-L, L]^dim with homogeneous Dirichlet
//! boundary: only interior nodes are stored, x_k = -L + (k+1) h per axis with
//! h = 2L/(n+1). All reductions run over a fixed pairwise tree, so results are
//! bitwise identical regardless of the rayon thread count.

use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

pub const MAX_DIM: usize = 8;

/// Linear sums below this length; pairwise splits above it.
const PAIRWISE_LEAF: usize = 32;
/// Halves of at least this length are evaluated as rayon join branches.
const PAR_LEAF: usize = 1 << 18;
/// Elementwise maps shorter than this stay on the calling thread.
const PAR_MIN_LEN: usize = 1 << 20;
const MAP_CHUNK: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("grid mismatch between operands")]
    Mismatch,
    #[error("conjugate gradients did not converge: {iterations} iterations, relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_width: f64,
    h: f64,
    total: usize,
    // strides[d] in elements; last axis is contiguous.
    strides: [usize; MAX_DIM],
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Grid, GridError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(GridError::BadGrid(format!("dim must be in 1..={MAX_DIM}, got {dim}")));
        }
        if n == 0 {
            return Err(GridError::BadGrid("n must be at least 1".into()));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(GridError::BadGrid(format!("L must be positive and finite, got {half_width}")));
        }
        let mut total: usize = 1;
        for _ in 0..dim {
            total = total
                .checked_mul(n)
                .filter(|&t| t <= 1 << 31)
                .ok_or_else(|| GridError::BadGrid(format!("n^dim overflows: n={n}, dim={dim}")))?;
        }
        let mut strides = [0usize; MAX_DIM];
        let mut s = 1usize;
        for d in (0..dim).rev() {
            strides[d] = s;
            s *= n;
        }
        let h = 2.0 * half_width / (n as f64 + 1.0);
        Ok(Grid { dim, n, half_width, h, total, strides })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn node_count(&self) -> usize {
        self.total
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Cell volume h^dim used by the midpoint quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn axis_coord(&self, k: usize) -> f64 {
        -self.half_width + (k as f64 + 1.0) * self.h
    }

    pub fn coords_of(&self, idx: usize, out: &mut [usize; MAX_DIM]) {
        let mut rest = idx;
        for d in (0..self.dim).rev() {
            out[d] = rest % self.n;
            rest /= self.n;
        }
    }

    pub fn point_of(&self, idx: usize, out: &mut [f64; MAX_DIM]) {
        let mut rest = idx;
        for d in (0..self.dim).rev() {
            out[d] = self.axis_coord(rest % self.n);
            rest /= self.n;
        }
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for d in 0..self.dim {
            idx += coords[d] * self.strides[d];
        }
        idx
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && self.half_width == other.half_width
    }
}

#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>) -> Field {
        Field { grid: Arc::clone(grid), values: vec![0.0; grid.node_count()] }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Field, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::Mismatch);
        }
        Ok(Field { grid: Arc::clone(grid), values })
    }

    pub fn from_fn<F>(grid: &Arc<Grid>, f: F) -> Field
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let mut out = Field::zeros(grid);
        let g = Arc::clone(grid);
        map_indexed(&mut out.values, |idx, v| {
            let mut x = [0.0; MAX_DIM];
            g.point_of(idx, &mut x);
            *v = f(&x[..g.dim()]);
        });
        out
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scale(&mut self, a: f64) {
        map_indexed(&mut self.values, |_, v| *v *= a);
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &Field) {
        debug_assert!(self.grid.same_as(&other.grid));
        let o = &other.values;
        map_indexed(&mut self.values, |i, v| *v += a * o[i]);
    }

    pub fn sup_abs(&self) -> f64 {
        // max is order-independent, a plain fold is deterministic.
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn abs_values(&self) -> Field {
        let mut out = self.clone();
        map_indexed(&mut out.values, |_, v| *v = v.abs());
        out
    }
}

/// Fixed-tree pairwise sum of f(lo..hi). The split rule depends only on the
/// index range, never on thread availability, so the float result is
/// reproducible across thread counts.
pub fn tree_sum<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let len = hi - lo;
    if len <= PAIRWISE_LEAF {
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        return s;
    }
    let mid = lo + len / 2;
    if len >= PAR_LEAF {
        let (a, b) = rayon::join(|| tree_sum(lo, mid, f), || tree_sum(mid, hi, f));
        a + b
    } else {
        tree_sum(lo, mid, f) + tree_sum(mid, hi, f)
    }
}

pub fn pairwise_sum(v: &[f64]) -> f64 {
    tree_sum(0, v.len(), &|i| v[i])
}

pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    tree_sum(0, a.len(), &|i| a[i] * b[i])
}

/// Elementwise in-place map; each slot is written independently of the others,
/// so parallel scheduling cannot change the result.
pub fn map_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut f64) + Sync,
{
    if out.len() >= PAR_MIN_LEN {
        out.par_chunks_mut(MAP_CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * MAP_CHUNK;
            for (j, v) in chunk.iter_mut().enumerate() {
                f(base + j, v);
            }
        });
    } else {
        for (i, v) in out.iter_mut().enumerate() {
            f(i, v);
        }
    }
}

/// out = (2 dim f - sum of axis neighbors)/h^2 + shift * f, with out-of-box
/// neighbors read as 0 (Dirichlet). shift = eps^2 gives the Helmholtz stencil.
fn apply_stencil_into(f: &Field, shift: f64, out: &mut [f64]) {
    let grid = f.grid.as_ref();
    let n = grid.n;
    let dim = grid.dim;
    let h2 = grid.h * grid.h;
    let diag = 2.0 * dim as f64;
    let vals = &f.values[..];
    let rows = grid.total / n;
    let min_rows = (PAR_MIN_LEN / n).max(1);

    let do_row = |row: usize, out_row: &mut [f64]| {
        let base = row * n;
        let row_vals = &vals[base..base + n];
        // Leading-axis neighbor rows present for this row.
        let mut nbr: [&[f64]; 2 * (MAX_DIM - 1)] = [&[]; 2 * (MAX_DIM - 1)];
        let mut nbr_count = 0;
        let mut rest = row;
        for d in (0..dim.saturating_sub(1)).rev() {
            let k = rest % n;
            rest /= n;
            let stride = grid.strides[d];
            if k > 0 {
                nbr[nbr_count] = &vals[base - stride..base - stride + n];
                nbr_count += 1;
            }
            if k + 1 < n {
                nbr[nbr_count] = &vals[base + stride..base + stride + n];
                nbr_count += 1;
            }
        }
        let nbr = &nbr[..nbr_count];
        for k in 0..n {
            let mut acc = diag * row_vals[k];
            for r in nbr {
                acc -= r[k];
            }
            if k > 0 {
                acc -= row_vals[k - 1];
            }
            if k + 1 < n {
                acc -= row_vals[k + 1];
            }
            out_row[k] = acc / h2 + shift * row_vals[k];
        }
    };

    if rows >= 2 * min_rows {
        out.par_chunks_mut(n).with_min_len(min_rows).enumerate().for_each(|(row, out_row)| do_row(row, out_row));
    } else {
        for (row, out_row) in out.chunks_mut(n).enumerate() {
            do_row(row, out_row);
        }
    }
}

/// Discrete negative Laplacian, the (2 dim + 1)-point second-order stencil.
pub fn apply_neg_laplacian(f: &Field) -> Field {
    let mut out = Field::zeros(&f.grid);
    apply_stencil_into(f, 0.0, &mut out.values);
    out
}

/// (-Delta + eps^2) f in one fused pass.
pub fn apply_helmholtz(f: &Field, eps: f64) -> Field {
    let mut out = Field::zeros(&f.grid);
    apply_stencil_into(f, eps * eps, &mut out.values);
    out
}

/// Midpoint quadrature h^dim * sum of node values.
pub fn integrate(f: &Field) -> f64 {
    f.grid.cell_volume() * pairwise_sum(&f.values)
}

/// Weighted quadrature h^dim * sum f(idx) over all nodes.
pub fn integrate_nodes<F>(grid: &Grid, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    grid.cell_volume() * tree_sum(0, grid.node_count(), f)
}

/// Bilinear form of -Delta + eps^2: integrate(g * (-Delta f)) + eps^2 integrate(f g).
/// Symmetric and positive definite by discrete integration by parts.
pub fn inner_h1(f: &Field, g: &Field, eps: f64) -> f64 {
    assert!(f.grid.same_as(&g.grid), "inner_h1 operands on different grids");
    let mut lap = vec![0.0; f.values.len()];
    apply_stencil_into(f, eps * eps, &mut lap);
    f.grid.cell_volume() * pairwise_dot(&lap, &g.values)
}

pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradients on the SPD Helmholtz stencil -Delta + eps^2 (eps = 0
/// allowed: the Dirichlet Laplacian is still positive definite). Stops at
/// ||r|| <= tol ||rhs||. x0 seeds the iteration (warm start).
pub fn helmholtz_solve_warm(
    rhs: &Field,
    eps: f64,
    tol: f64,
    max_iters: usize,
    x0: Option<&Field>,
) -> Result<(Field, CgReport), GridError> {
    let grid = &rhs.grid;
    let total = grid.node_count();
    let shift = eps * eps;
    let rhs_norm = pairwise_dot(&rhs.values, &rhs.values).sqrt();
    if rhs_norm == 0.0 {
        return Ok((Field::zeros(grid), CgReport { iterations: 0, residual: 0.0 }));
    }

    let mut x = match x0 {
        Some(f) => {
            assert!(f.grid.same_as(grid), "warm start on a different grid");
            f.clone()
        }
        None => Field::zeros(grid),
    };
    let mut r = vec![0.0; total];
    apply_stencil_into(&x, shift, &mut r);
    let rv = rhs.values();
    map_indexed(&mut r, |i, v| *v = rv[i] - *v);

    let mut p = r.clone();
    let mut ap = vec![0.0; total];
    let mut rr = pairwise_dot(&r, &r);
    let target = tol * rhs_norm;

    for it in 0..max_iters {
        if rr.sqrt() <= target {
            return Ok((x, CgReport { iterations: it, residual: rr.sqrt() / rhs_norm }));
        }
        let p_field = Field { grid: Arc::clone(grid), values: std::mem::take(&mut p) };
        apply_stencil_into(&p_field, shift, &mut ap);
        p = p_field.values;
        let pap = pairwise_dot(&p, &ap);
        if !(pap > 0.0) {
            // Loss of positivity is a roundoff dead end; report divergence.
            return Err(GridError::NoConvergence { iterations: it, residual: rr.sqrt() / rhs_norm });
        }
        let alpha = rr / pap;
        {
            let pv = &p;
            map_indexed(&mut x.values, |i, v| *v += alpha * pv[i]);
        }
        {
            let apv = &ap;
            map_indexed(&mut r, |i, v| *v -= alpha * apv[i]);
        }
        let rr_new = pairwise_dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        {
            let rvv = &r;
            map_indexed(&mut p, |i, v| *v = rvv[i] + beta * *v);
        }
    }
    if rr.sqrt() <= target {
        return Ok((x, CgReport { iterations: max_iters, residual: rr.sqrt() / rhs_norm }));
    }
    Err(GridError::NoConvergence { iterations: max_iters, residual: rr.sqrt() / rhs_norm })
}

pub fn default_cg_cap(grid: &Grid) -> usize {
    (40 * grid.n()).max(4000)
}

/// Solve (-Delta + eps^2) g = rhs to relative residual tol.
pub fn helmholtz_solve(rhs: &Field, eps: f64, tol: f64) -> Result<Field, GridError> {
    helmholtz_solve_warm(rhs, eps, tol, default_cg_cap(rhs.grid()), None).map(|(f, _)| f)
}

/// Direct solver for (-Delta + eps^2) on the Dirichlet box, diagonalizing
/// the stencil in the per-axis discrete sine basis: the 1D second-difference
/// matrix has eigenvalues (4/h^2) sin^2(pi (k+1) / (2(n+1))) with sine
/// eigenvectors, so one sine transform per axis, a diagonal division, and
/// the transforms again solve the system to machine precision in
/// O(N log N). The sine transforms run through a complex FFT of length
/// 2(n+1) on the odd extension of each grid line.
pub struct SpectralHelmholtz {
    grid: Arc<Grid>,
    fft: Arc<dyn rustfft::Fft<f64>>,
    fft_len: usize,
    /// Eigenvalues of the 1D stencil, one per grid line index.
    eig: Vec<f64>,
}

impl SpectralHelmholtz {
    pub fn new(grid: &Arc<Grid>) -> SpectralHelmholtz {
        let n = grid.n();
        let fft_len = 2 * (n + 1);
        let fft = rustfft::FftPlanner::new().plan_fft_forward(fft_len);
        let h2 = grid.h() * grid.h();
        let eig = (0..n)
            .map(|k| {
                let s = (std::f64::consts::PI * (k as f64 + 1.0) / (2.0 * (n as f64 + 1.0))).sin();
                4.0 * s * s / h2
            })
            .collect();
        SpectralHelmholtz { grid: Arc::clone(grid), fft, fft_len, eig }
    }

    /// Sine-transform every line along the last axis of `input`, writing
    /// line j's coefficient k to the position that moves the last axis to
    /// the front. After dim such passes the axis order is back to the
    /// original and every axis has been transformed once.
    fn dst_last_axis_rotating(&self, input: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        let outer = input.len() / n;
        let mut buf = vec![rustfft::num_complex::Complex::new(0.0, 0.0); self.fft_len];
        let mut scratch =
            vec![rustfft::num_complex::Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for o in 0..outer {
            let line = &input[o * n..o * n + n];
            buf[0] = rustfft::num_complex::Complex::new(0.0, 0.0);
            buf[n + 1] = rustfft::num_complex::Complex::new(0.0, 0.0);
            for j in 0..n {
                buf[1 + j] = rustfft::num_complex::Complex::new(line[j], 0.0);
                buf[n + 2 + j] = rustfft::num_complex::Complex::new(-line[n - 1 - j], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n {
                out[k * outer + o] = -0.5 * buf[k + 1].im;
            }
        }
    }

    /// Overwrite `out` with the solution of (-Delta + eps^2) x = rhs.
    pub fn solve_into(&self, rhs: &Field, eps: f64, out: &mut Field) {
        assert!(rhs.grid.same_as(&self.grid), "rhs on a different grid");
        assert!(out.grid.same_as(&self.grid), "output on a different grid");
        assert!(eps >= 0.0 && eps.is_finite(), "eps must be finite and nonnegative");
        let dim = self.grid.dim();
        let n = self.grid.n();
        let shift = eps * eps;
        // Unnormalized sine transforms square to ((n+1)/2) I per axis; fold
        // the normalization into the diagonal.
        let norm = (2.0 / (n as f64 + 1.0)).powi(dim as i32);

        let mut a = rhs.values.clone();
        let b = &mut out.values;
        for _ in 0..dim {
            self.dst_last_axis_rotating(&a, b);
            std::mem::swap(&mut a, b);
        }
        {
            let eig = &self.eig;
            map_indexed(&mut a, |idx, v| {
                let mut rest = idx;
                let mut lam = shift;
                for _ in 0..dim {
                    lam += eig[rest % n];
                    rest /= n;
                }
                *v *= norm / lam;
            });
        }
        for _ in 0..dim {
            self.dst_last_axis_rotating(&a, b);
            std::mem::swap(&mut a, b);
        }
        // Every pass ends by swapping its result into `a`; move it into the
        // output storage.
        std::mem::swap(&mut a, b);
        debug_assert_eq!(b.len(), self.grid.node_count());
    }

    /// Solve (-Delta + eps^2) x = rhs exactly.
    pub fn solve(&self, rhs: &Field, eps: f64) -> Field {
        let mut out = Field::zeros(&self.grid);
        self.solve_into(rhs, eps, &mut out);
        out
    }
}

/// h^dim * sum of f over nodes with |x - center| <= radius (Euclidean).
pub fn restrict_ball_integral(f: &Field, center: &[f64], radius: f64) -> f64 {
    let grid = f.grid.as_ref();
    assert_eq!(center.len(), grid.dim(), "center dimension mismatch");
    let n = grid.n();
    let dim = grid.dim();
    // Per-axis squared distances, reused by every node.
    let mut tab = vec![0.0f64; dim * n];
    for d in 0..dim {
        for k in 0..n {
            let dx = grid.axis_coord(k) - center[d];
            tab[d * n + k] = dx * dx;
        }
    }
    let r2 = radius * radius;
    let vals = &f.values;
    integrate_nodes(grid, &|idx| {
        let mut rest = idx;
        let mut dist2 = 0.0;
        for d in (0..dim).rev() {
            dist2 += tab[d * n + rest % n];
            rest /= n;
        }
        if dist2 <= r2 {
            vals[idx]
        } else {
            0.0
        }
    })
}

/// Multilinear interpolation; the Dirichlet extension (0 outside the box) is
/// used for out-of-grid corners. Exact at nodes and on per-axis linear
/// functions inside the interior cell hull.
pub fn value_at(f: &Field, x: &[f64]) -> f64 {
    let grid = f.grid.as_ref();
    debug_assert_eq!(x.len(), grid.dim());
    let n = grid.n() as isize;
    let dim = grid.dim();
    let mut i0 = [0isize; MAX_DIM];
    let mut w = [0.0f64; MAX_DIM];
    for d in 0..dim {
        // Fractional node index: node k sits at -L + (k+1)h.
        let mut s = (x[d] + grid.half_width()) / grid.h() - 1.0;
        // Snap to the node when the query differs only by accumulated
        // roundoff, so node-to-node resamplings stay exact.
        let r = s.round();
        if (s - r).abs() < 1e-10 * (n as f64 + 2.0) {
            s = r;
        }
        let fl = s.floor();
        i0[d] = fl as isize;
        w[d] = s - fl;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << dim) {
        let mut weight = 1.0;
        let mut idx = 0usize;
        let mut inside = true;
        for d in 0..dim {
            let up = (corner >> d) & 1 == 1;
            let k = i0[d] + if up { 1 } else { 0 };
            weight *= if up { w[d] } else { 1.0 - w[d] };
            if k < 0 || k >= n {
                inside = false;
                break;
            }
            idx += (k as usize) * grid.stride(d);
        }
        if inside && weight != 0.0 {
            acc += weight * f.values[idx];
        }
    }
    acc
}

/// Nodewise |grad f|^2 by centered differences per axis, out-of-box neighbors
/// read as 0. Used for concentration-ratio densities.
pub fn grad_sq_density(f: &Field) -> Field {
    let grid = f.grid.as_ref();
    let n = grid.n();
    let dim = grid.dim();
    let inv2h = 1.0 / (2.0 * grid.h());
    let vals = &f.values;
    let strides = grid.strides;
    let mut out = Field::zeros(&f.grid);
    map_indexed(&mut out.values, |idx, v| {
        let mut rest = idx;
        let mut acc = 0.0;
        for d in (0..dim).rev() {
            let k = rest % n;
            rest /= n;
            let plus = if k + 1 < n { vals[idx + strides[d]] } else { 0.0 };
            let minus = if k > 0 { vals[idx - strides[d]] } else { 0.0 };
            let g = (plus - minus) * inv2h;
            acc += g * g;
        }
        *v = acc;
    });
    out
}

/// Pull-back under the signed axis permutation T(x)_d = sign_d * x_{perm[d]}.
/// The node set is symmetric, so this is an exact index remap.
pub fn transform_signed_permutation(f: &Field, perm: &[usize], flip: &[bool]) -> Field {
    let grid = f.grid.as_ref();
    let dim = grid.dim();
    assert_eq!(perm.len(), dim);
    assert_eq!(flip.len(), dim);
    let n = grid.n();
    let vals = &f.values;
    let mut out = Field::zeros(&f.grid);
    map_indexed(&mut out.values, |idx, v| {
        let mut coords = [0usize; MAX_DIM];
        let mut rest = idx;
        for d in (0..dim).rev() {
            coords[d] = rest % n;
            rest /= n;
        }
        let mut src = 0usize;
        for d in 0..dim {
            let k = if flip[d] { n - 1 - coords[d] } else { coords[d] };
            src += k * grid.stride(perm[d]);
        }
        *v = vals[src];
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3(n: usize, l: f64) -> Arc<Grid> {
        Arc::new(Grid::new(3, n, l).unwrap())
    }

    fn seeded_random_field(grid: &Arc<Grid>, seed: u64) -> Field {
        // Small deterministic LCG keeps the oracle independent of rand.
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut f = Field::zeros(grid);
        for v in f.values_mut() {
            *v = next();
        }
        f
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let g = grid3(8, 2.0);
        let z = Field::zeros(&g);
        let lap = apply_neg_laplacian(&z);
        assert!(lap.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_exact_on_quadratic() {
        // f = sum x_d^2 has -Delta f = -2 dim; the stencil reproduces it
        // exactly at nodes whose neighbors are all interior.
        let g = grid3(9, 1.5);
        let f = Field::from_fn(&g, |x| x.iter().map(|v| v * v).sum());
        let lap = apply_neg_laplacian(&f);
        let n = g.n();
        let mut checked = 0;
        for idx in 0..g.node_count() {
            let mut c = [0usize; MAX_DIM];
            g.coords_of(idx, &mut c);
            if (0..3).all(|d| c[d] > 0 && c[d] + 1 < n) {
                assert!(
                    (lap.values()[idx] + 6.0).abs() < 1e-10,
                    "interior stencil value {} != -6",
                    lap.values()[idx]
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn laplacian_eigenmode() {
        // v = prod sin(pi m (k+1)/(n+1)) is an exact eigenvector with
        // eigenvalue sum_d (2 - 2 cos(pi m/(n+1)))/h^2.
        let n = 12;
        let g = grid3(n, 2.0);
        let m = [1usize, 2, 3];
        let np1 = (n + 1) as f64;
        let mut v = Field::zeros(&g);
        for idx in 0..g.node_count() {
            let mut c = [0usize; MAX_DIM];
            g.coords_of(idx, &mut c);
            let mut prod = 1.0;
            for d in 0..3 {
                prod *= (std::f64::consts::PI * m[d] as f64 * (c[d] as f64 + 1.0) / np1).sin();
            }
            v.values_mut()[idx] = prod;
        }
        let h = g.h();
        let lambda: f64 = (0..3)
            .map(|d| (2.0 - 2.0 * (std::f64::consts::PI * m[d] as f64 / np1).cos()) / (h * h))
            .sum();
        let lap = apply_neg_laplacian(&v);
        for idx in 0..g.node_count() {
            assert!(
                (lap.values()[idx] - lambda * v.values()[idx]).abs() < 1e-9 * lambda,
                "eigen relation violated at {idx}"
            );
        }
    }

    #[test]
    fn integrate_constant_and_zero() {
        let g = grid3(10, 3.0);
        assert_eq!(integrate(&Field::zeros(&g)), 0.0);
        let one = Field::from_fn(&g, |_| 1.0);
        let expect = g.cell_volume() * g.node_count() as f64;
        assert!((integrate(&one) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn integrate_gaussian_matches_pi_power() {
        // Frozen oracle value: int exp(-|x|^2) over R^3 = pi^(3/2); the
        // midpoint rule on L=6, n=64 must land within 1e-4 relative.
        let g = grid3(64, 6.0);
        let f = Field::from_fn(&g, |x| (-(x.iter().map(|v| v * v).sum::<f64>())).exp());
        let exact = std::f64::consts::PI.powf(1.5);
        let got = integrate(&f);
        assert!(
            (got - exact).abs() < 1e-4 * exact,
            "gaussian quadrature off: got {got}, want {exact}"
        );
    }

    #[test]
    fn integration_by_parts_symmetry() {
        let g = grid3(10, 2.0);
        for seed in 0..5 {
            let f = seeded_random_field(&g, seed);
            let h = seeded_random_field(&g, seed + 100);
            let lap_f = apply_neg_laplacian(&f);
            let lap_h = apply_neg_laplacian(&h);
            let lhs = integrate_nodes(g.as_ref(), &|i| lap_f.values()[i] * h.values()[i]);
            let rhs = integrate_nodes(g.as_ref(), &|i| lap_h.values()[i] * f.values()[i]);
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!((lhs - rhs).abs() <= 1e-12 * scale, "IBP asymmetry: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn inner_h1_positive_definite_and_cauchy_schwarz() {
        let g = grid3(9, 2.0);
        for seed in 0..5 {
            let f = seeded_random_field(&g, seed);
            let h = seeded_random_field(&g, seed + 31);
            for &eps in &[0.0, 0.3, 1.0] {
                let ff = inner_h1(&f, &f, eps);
                let hh = inner_h1(&h, &h, eps);
                let fh = inner_h1(&f, &h, eps);
                assert!(ff > 0.0 && hh > 0.0);
                assert!(
                    fh * fh <= ff * hh * (1.0 + 1e-12),
                    "Cauchy-Schwarz violated: {fh}^2 > {ff}*{hh}"
                );
                let fh2 = inner_h1(&h, &f, eps);
                assert!((fh - fh2).abs() <= 1e-12 * fh.abs().max(1e-30));
            }
        }
    }

    #[test]
    fn helmholtz_solves_eigenmode_and_manufactured() {
        let n = 16;
        let g = grid3(n, 2.0);
        // Eigenmode: solve (-Delta + eps^2) x = v gives x = v/(lambda + eps^2).
        let np1 = (n + 1) as f64;
        let mut v = Field::zeros(&g);
        for idx in 0..g.node_count() {
            let mut c = [0usize; MAX_DIM];
            g.coords_of(idx, &mut c);
            let mut prod = 1.0;
            for d in 0..3 {
                prod *= (std::f64::consts::PI * (c[d] as f64 + 1.0) / np1).sin();
            }
            v.values_mut()[idx] = prod;
        }
        let h = g.h();
        let lambda = 3.0 * (2.0 - 2.0 * (std::f64::consts::PI / np1).cos()) / (h * h);
        for &eps in &[0.0, 0.5] {
            let x = helmholtz_solve(&v, eps, 1e-12).unwrap();
            let factor = 1.0 / (lambda + eps * eps);
            for idx in 0..g.node_count() {
                assert!(
                    (x.values()[idx] - factor * v.values()[idx]).abs() < 1e-9 * factor,
                    "eigen solve wrong at {idx}"
                );
            }
        }
        // Manufactured: random exact solution, apply operator, solve back.
        let exact = seeded_random_field(&g, 5);
        let mut rhs = Field::zeros(&g);
        apply_stencil_into(&exact, 0.25, rhs.values_mut());
        let (sol, rep) = helmholtz_solve_warm(&rhs, 0.5, 1e-12, 4000, None).unwrap();
        assert!(rep.residual <= 1e-12);
        let err: f64 = sol
            .values()
            .iter()
            .zip(exact.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = exact.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err < 1e-8 * norm, "manufactured solve error {err}");
    }

    #[test]
    fn helmholtz_zero_rhs_is_zero() {
        let g = grid3(8, 1.0);
        let z = Field::zeros(&g);
        let x = helmholtz_solve(&z, 0.0, 1e-10).unwrap();
        assert!(x.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ball_integral_approximates_volume() {
        let g = grid3(48, 4.0);
        let one = Field::from_fn(&g, |_| 1.0);
        let r = 2.0;
        let vol = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        let area = 4.0 * std::f64::consts::PI * r * r;
        let got = restrict_ball_integral(&one, &[0.0, 0.0, 0.0], r);
        assert!(
            (got - vol).abs() <= 3.0 * g.h() * area,
            "ball volume off: got {got}, want {vol} within {}",
            3.0 * g.h() * area
        );
    }

    #[test]
    fn ball_integral_empty_when_ball_outside() {
        let g = grid3(12, 2.0);
        let one = Field::from_fn(&g, |_| 1.0);
        let got = restrict_ball_integral(&one, &[10.0, 0.0, 0.0], 1.0);
        assert_eq!(got, 0.0);
    }

    #[test]
    fn interpolation_exact_at_nodes_and_linear() {
        let g = grid3(10, 2.0);
        let f = Field::from_fn(&g, |x| 1.5 * x[0] - 0.5 * x[1] + 2.0 * x[2] + 0.25);
        // Node exactness.
        let mut x = [0.0; MAX_DIM];
        for idx in [0usize, 37, 555, 999] {
            g.point_of(idx, &mut x);
            let got = value_at(&f, &x[..3]);
            assert!((got - f.values()[idx]).abs() < 1e-12);
        }
        // Linear reproduction strictly inside the node hull.
        let pt = [0.3311, -0.7177, 0.9123];
        let want = 1.5 * pt[0] - 0.5 * pt[1] + 2.0 * pt[2] + 0.25;
        assert!((value_at(&f, &pt) - want).abs() < 1e-12);
        // Far outside: Dirichlet extension.
        assert_eq!(value_at(&f, &[5.0, 5.0, 5.0]), 0.0);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let g = grid3(16, 1.0);
        let f = seeded_random_field(&g, 9);
        let naive: f64 = f.values().iter().sum();
        let got = pairwise_sum(f.values());
        assert!((got - naive).abs() <= 1e-12 * naive.abs().max(1.0));
    }

    #[test]
    fn signed_permutation_roundtrip_and_symmetry() {
        let g = grid3(8, 1.0);
        let f = seeded_random_field(&g, 3);
        // An involution: flipping the same axis twice is the identity.
        let t = transform_signed_permutation(&f, &[0, 1, 2], &[true, false, false]);
        let tt = transform_signed_permutation(&t, &[0, 1, 2], &[true, false, false]);
        for i in 0..g.node_count() {
            assert_eq!(f.values()[i], tt.values()[i]);
        }
        // A radial function is invariant under every signed permutation.
        let rad = Field::from_fn(&g, |x| (-(x.iter().map(|v| v * v).sum::<f64>())).exp());
        let s = transform_signed_permutation(&rad, &[2, 0, 1], &[true, true, false]);
        for i in 0..g.node_count() {
            assert!((s.values()[i] - rad.values()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid::new(0, 4, 1.0).is_err());
        assert!(Grid::new(9, 4, 1.0).is_err());
        assert!(Grid::new(3, 0, 1.0).is_err());
        assert!(Grid::new(3, 4, 0.0).is_err());
        assert!(Grid::new(3, 4, f64::NAN).is_err());
        assert!(Grid::new(4, 1 << 10, 1.0).is_err(), "n^dim overflow must be caught");
    }

    #[test]
    fn spectral_solve_inverts_the_stencil() {
        // Apply then solve on a random field: recovery to machine precision,
        // including the pure-Laplacian case eps = 0.
        let g = grid3(14, 2.5);
        let f = seeded_random_field(&g, 11);
        let solver = SpectralHelmholtz::new(&g);
        for eps in [0.0, 0.4, 1.0] {
            let rhs = apply_helmholtz(&f, eps);
            let back = solver.solve(&rhs, eps);
            let sup = f.sup_abs().max(1e-300);
            for i in 0..g.node_count() {
                assert!(
                    (back.values()[i] - f.values()[i]).abs() <= 1e-12 * sup,
                    "eps {eps}, node {i}: {} vs {}",
                    back.values()[i],
                    f.values()[i]
                );
            }
        }
    }

    #[test]
    fn spectral_solve_matches_conjugate_gradients() {
        let g = grid3(12, 2.0);
        let rhs = Field::from_fn(&g, |x| {
            (-(x.iter().map(|v| v * v).sum::<f64>())).exp() + 0.3 * x[0]
        });
        let solver = SpectralHelmholtz::new(&g);
        let eps = 0.7;
        let direct = solver.solve(&rhs, eps);
        let (cg, _) = helmholtz_solve_warm(&rhs, eps, 1e-12, 100_000, None).unwrap();
        let sup = direct.sup_abs();
        for i in 0..g.node_count() {
            assert!(
                (direct.values()[i] - cg.values()[i]).abs() <= 1e-9 * sup,
                "node {i}: {} vs {}",
                direct.values()[i],
                cg.values()[i]
            );
        }
    }

    #[test]
    fn spectral_solve_is_exact_on_eigenmodes() {
        // Product sine modes are exact eigenvectors of the stencil with
        // eigenvalue sum_d (4/h^2) sin^2(pi m_d / (2(n+1))).
        let g = grid3(9, 1.5);
        let n = g.n();
        let h = g.h();
        let modes = [1usize, 3, 7];
        let mut f = Field::zeros(&g);
        let vals = f.values_mut();
        let mut c = [0usize; MAX_DIM];
        for idx in 0..vals.len() {
            g.coords_of(idx, &mut c);
            let mut v = 1.0;
            for d in 0..3 {
                v *= (std::f64::consts::PI * modes[d] as f64 * (c[d] as f64 + 1.0)
                    / (n as f64 + 1.0))
                    .sin();
            }
            vals[idx] = v;
        }
        let eps = 0.3;
        let lam: f64 = modes
            .iter()
            .map(|&m| {
                let s = (std::f64::consts::PI * m as f64 / (2.0 * (n as f64 + 1.0))).sin();
                4.0 * s * s / (h * h)
            })
            .sum::<f64>()
            + eps * eps;
        let solver = SpectralHelmholtz::new(&g);
        let x = solver.solve(&f, eps);
        for i in 0..g.node_count() {
            assert!(
                (x.values()[i] - f.values()[i] / lam).abs() <= 1e-13,
                "node {i}: {} vs {}",
                x.values()[i],
                f.values()[i] / lam
            );
        }
    }
}
