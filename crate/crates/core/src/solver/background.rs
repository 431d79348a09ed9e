//! Background subproblem: fidelity + non-local quadratic + temporal TV, by ADMM
//! with a preconditioned conjugate-gradient inner solve.
//!
//! With `Z = ∇_t B` and scaled dual `U` the B-update solves
//!
//! ```text
//! (I + Σ_i c_i S_iᵀ(· ×₃ Q_iᵀQ_i) S_i + ρ ∇ᵀ∇) B = (O∘τ − R) + Σ_i c_i S_iᵀ(J_i ×₃ Q_iᵀ) + ρ ∇ᵀ(Z − U)
//! ```
//!
//! with `c_i = 2ω/λ_i²`. Every group term acts on whole temporal tubes, so the
//! non-local part of the operator is block diagonal with one `t × t` block
//! `K_p = Σ_i c_i n_i(p) Q_iᵀQ_i` per pixel, where `n_i(p)` counts the member
//! patches of group `i` covering `p`. All vectors here are pixel-major: the
//! tube of pixel `p` occupies `[p·t, (p+1)·t)`.

use nalgebra::{Cholesky, DMatrix};

use super::config::{Preconditioner, SolverConfig};
use super::steps::project_tubes;
use crate::error::{Error, Result};
use crate::nonlocal::{gather_tubes, GroupState, PatchGroup};
use crate::tensor::{shrink, Tensor3};

pub(crate) fn to_pixel_major(x: &Tensor3<f64>) -> Vec<f64> {
    let (n, t) = (x.frame_len(), x.frames());
    let mut out = vec![0.0; n * t];
    for f in 0..t {
        for (p, &v) in x.frame(f).iter().enumerate() {
            out[p * t + f] = v;
        }
    }
    out
}

pub(crate) fn from_pixel_major(v: &[f64], dims: [usize; 3]) -> Tensor3<f64> {
    let [h, w, t] = dims;
    let mut out = Tensor3::<f64>::zeros(h, w, t).expect("valid dims");
    for f in 0..t {
        for (p, o) in out.frame_mut(f).iter_mut().enumerate() {
            *o = v[p * t + f];
        }
    }
    out
}

fn grad_t(x: &[f64], t: usize, out: &mut [f64]) {
    for (xs, os) in x.chunks_exact(t).zip(out.chunks_exact_mut(t)) {
        for f in 0..t {
            os[f] = xs[(f + 1) % t] - xs[f];
        }
    }
}

fn grad_t_adjoint(g: &[f64], t: usize, out: &mut [f64]) {
    for (gs, os) in g.chunks_exact(t).zip(out.chunks_exact_mut(t)) {
        for f in 0..t {
            os[f] = gs[(f + t - 1) % t] - gs[f];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums let the compiler vectorise the reduction
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

enum Blocks {
    None,
    /// `K_p = κ_p I` (identity temporal basis).
    Scalar(Vec<f64>),
    /// Dense symmetric `t × t` block per pixel.
    Full(Vec<f64>),
}

/// The pixel-block non-local operator and the matching right-hand side.
pub(crate) struct NonlocalSystem {
    t: usize,
    blocks: Blocks,
    /// `Σ_i c_i S_iᵀ(J_i ×₃ Q_iᵀ)`, pixel-major.
    rhs: Vec<f64>,
    /// `Σ_i (ω/λ_i²) ‖J_i‖²`.
    constant: f64,
}

impl NonlocalSystem {
    pub(crate) fn build(
        dims: [usize; 3],
        groups: &[PatchGroup],
        states: &[GroupState],
        omega: f64,
        identity_basis: bool,
    ) -> Result<Self> {
        let [h, w, t] = dims;
        let npix = h * w;
        if groups.len() != states.len() {
            return Err(Error::arg(format!(
                "{} groups but {} group states",
                groups.len(),
                states.len()
            )));
        }
        let mut rhs = vec![0.0; npix * t];
        let mut constant = 0.0;
        if omega == 0.0 || groups.is_empty() {
            return Ok(NonlocalSystem {
                t,
                blocks: Blocks::None,
                rhs,
                constant,
            });
        }
        let mut blocks = if identity_basis {
            Blocks::Scalar(vec![0.0; npix])
        } else {
            Blocks::Full(vec![0.0; npix * t * t])
        };
        let mut counts = vec![0u32; npix];
        let mut touched = Vec::new();
        for (group, state) in groups.iter().zip(states) {
            let q = &state.q;
            let d = q.rows();
            let pp = group.patch_size * group.patch_size;
            let k = group.members.len();
            if q.cols() != t || state.j.dims() != [pp, k, d] {
                return Err(Error::arg(format!(
                    "group state has Q {}x{} and J {:?}; expected Q dx{t} and J [{pp}, {k}, d]",
                    q.rows(),
                    q.cols(),
                    state.j.dims()
                )));
            }
            if r_bounds(group, h, w).is_err() {
                return Err(Error::arg("patch group does not fit the video"));
            }
            let c = 2.0 * omega / (state.lambda * state.lambda);
            constant += 0.5 * c * state.j.norm_sq();
            let qtq = q.transpose().matmul(q)?;
            let jd = state.j.data();
            group.for_each_tube(|tube, r, col| {
                let p = r * w + col;
                let (m, jj) = (tube % pp, tube / pp);
                let dst = &mut rhs[p * t..(p + 1) * t];
                for l in 0..d {
                    let coef = c * jd[(l * pp + m) * k + jj];
                    if coef != 0.0 {
                        for (o, &qv) in dst.iter_mut().zip(q.row(l)) {
                            *o += coef * qv;
                        }
                    }
                }
                if counts[p] == 0 {
                    touched.push(p);
                }
                counts[p] += 1;
            });
            // members of one group often overlap; add each pixel's block once
            for &p in &touched {
                let weight = c * counts[p] as f64;
                counts[p] = 0;
                match &mut blocks {
                    Blocks::Scalar(kappa) => kappa[p] += weight,
                    Blocks::Full(kb) => {
                        for (o, &v) in kb[p * t * t..(p + 1) * t * t].iter_mut().zip(qtq.data()) {
                            *o += weight * v;
                        }
                    }
                    Blocks::None => {}
                }
            }
            touched.clear();
        }
        Ok(NonlocalSystem {
            t,
            blocks,
            rhs,
            constant,
        })
    }

    /// `out = K x`.
    fn apply_k(&self, x: &[f64], out: &mut [f64]) {
        let t = self.t;
        match &self.blocks {
            Blocks::None => out.fill(0.0),
            Blocks::Scalar(kappa) => {
                for ((xs, os), &kp) in x.chunks_exact(t).zip(out.chunks_exact_mut(t)).zip(kappa) {
                    for (o, &v) in os.iter_mut().zip(xs) {
                        *o = kp * v;
                    }
                }
            }
            Blocks::Full(kb) => {
                for ((xs, os), kp) in x
                    .chunks_exact(t)
                    .zip(out.chunks_exact_mut(t))
                    .zip(kb.chunks_exact(t * t))
                {
                    for (a, o) in os.iter_mut().enumerate() {
                        *o = dot(&kp[a * t..(a + 1) * t], xs);
                    }
                }
            }
        }
    }

    fn diag(&self, p: usize, f: usize) -> f64 {
        match &self.blocks {
            Blocks::None => 0.0,
            Blocks::Scalar(kappa) => kappa[p],
            Blocks::Full(kb) => kb[p * self.t * self.t + f * self.t + f],
        }
    }

    fn block(&self, p: usize) -> DMatrix<f64> {
        let t = self.t;
        match &self.blocks {
            Blocks::None => DMatrix::zeros(t, t),
            Blocks::Scalar(kappa) => DMatrix::identity(t, t) * kappa[p],
            Blocks::Full(kb) => DMatrix::from_row_slice(t, t, &kb[p * t * t..(p + 1) * t * t]),
        }
    }

    /// `Σ_i (ω/λ²)‖S_iB ×₃ Q_i − J_i‖²` via the quadratic form `½xᵀKx − ⟨x, g⟩ + const`.
    fn energy(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.apply_k(x, scratch);
        0.5 * dot(x, scratch) - dot(x, &self.rhs) + self.constant
    }
}

fn r_bounds(group: &PatchGroup, h: usize, w: usize) -> Result<()> {
    let p = group.patch_size;
    if group.members.iter().all(|&(r, c)| r + p <= h && c + p <= w) {
        Ok(())
    } else {
        Err(Error::arg("member outside frame"))
    }
}

/// `A = I + K + ρ∇ᵀ∇` with a preconditioner.
struct NormalOperator<'a> {
    sys: &'a NonlocalSystem,
    rho: f64,
    precond: Precond,
}

enum Precond {
    Jacobi(Vec<f64>),
    /// Inverse of every pixel block, row-major `t × t`.
    Block(Vec<f64>),
}

impl<'a> NormalOperator<'a> {
    fn new(sys: &'a NonlocalSystem, rho: f64, kind: Preconditioner, npix: usize) -> Result<Self> {
        let t = sys.t;
        let lap_diag = if t > 1 { 2.0 * rho } else { 0.0 };
        let precond = match kind {
            Preconditioner::Jacobi => {
                let mut inv = vec![0.0; npix * t];
                for p in 0..npix {
                    for f in 0..t {
                        inv[p * t + f] = 1.0 / (1.0 + sys.diag(p, f) + lap_diag);
                    }
                }
                Precond::Jacobi(inv)
            }
            Preconditioner::Block => {
                let mut inverses = Vec::with_capacity(npix * t * t);
                for p in 0..npix {
                    let mut a = sys.block(p);
                    for f in 0..t {
                        a[(f, f)] += 1.0 + lap_diag;
                        if t > 1 {
                            a[(f, (f + 1) % t)] -= rho;
                            a[(f, (f + t - 1) % t)] -= rho;
                        }
                    }
                    let chol = Cholesky::new(a).ok_or_else(|| {
                        Error::numeric("background normal block is not positive definite")
                    })?;
                    // symmetric, so column-major storage reads as row-major
                    inverses.extend_from_slice(chol.inverse().as_slice());
                }
                Precond::Block(inverses)
            }
        };
        Ok(NormalOperator { sys, rho, precond })
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let t = self.sys.t;
        self.sys.apply_k(x, out);
        for (xs, os) in x.chunks_exact(t).zip(out.chunks_exact_mut(t)) {
            for f in 0..t {
                let lap = if t > 1 {
                    2.0 * xs[f] - xs[(f + 1) % t] - xs[(f + t - 1) % t]
                } else {
                    0.0
                };
                os[f] += xs[f] + self.rho * lap;
            }
        }
    }

    fn precondition(&self, r: &[f64], out: &mut [f64]) {
        match &self.precond {
            Precond::Jacobi(inv) => {
                for ((o, &v), &d) in out.iter_mut().zip(r).zip(inv) {
                    *o = v * d;
                }
            }
            Precond::Block(inverses) => {
                let t = self.sys.t;
                for ((rs, os), inv) in r
                    .chunks_exact(t)
                    .zip(out.chunks_exact_mut(t))
                    .zip(inverses.chunks_exact(t * t))
                {
                    for (a, o) in os.iter_mut().enumerate() {
                        *o = dot(&inv[a * t..(a + 1) * t], rs);
                    }
                }
            }
        }
    }
}

/// Preconditioned conjugate gradient, warm-started from `x`. Returns the iteration count.
fn pcg(op: &NormalOperator, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    op.precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..=max_iter {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok(it);
        }
        if it == max_iter {
            return Err(Error::numeric(format!(
                "conjugate gradient did not converge in {max_iter} iterations: residual norm {rnorm:e} (relative {:e})",
                rnorm / bnorm
            )));
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::numeric(format!(
                "conjugate gradient breakdown: pᵀAp = {pap:e}, residual norm {rnorm:e}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        op.precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    unreachable!("loop returns on its last iteration")
}

#[derive(Clone, Debug)]
pub(crate) struct BackgroundReport {
    pub b: Tensor3<f64>,
    pub admm_iterations: usize,
    pub cg_iterations: usize,
}

/// Background subproblem value: `½‖B − (O∘τ − R)‖² + Σ_i (ω/λ_i²)‖S_iB×₃Q_i − J_i‖² + γ‖∇_tB‖₁`.
pub fn background_objective(
    o_warped: &Tensor3<f64>,
    r: &Tensor3<f64>,
    groups: &[PatchGroup],
    states: &[GroupState],
    cfg: &SolverConfig,
    b: &Tensor3<f64>,
) -> Result<f64> {
    o_warped.require_same_shape(r, "background_objective")?;
    o_warped.require_same_shape(b, "background_objective")?;
    let t = b.frames();
    let mut value = 0.0;
    for i in 0..b.len() {
        let e = b.data()[i] - (o_warped.data()[i] - r.data()[i]);
        value += 0.5 * e * e;
    }
    for (group, state) in groups.iter().zip(states) {
        let tubes = gather_tubes(b, group);
        let proj = project_tubes(&tubes, t, group, &state.q);
        let fit: f64 = proj
            .data()
            .iter()
            .zip(state.j.data())
            .map(|(a, c)| (a - c).powi(2))
            .sum();
        value += cfg.omega / (state.lambda * state.lambda) * fit;
    }
    if t > 1 {
        let g = crate::tensor::temporal_gradient(b)?;
        value += cfg.gamma * g.l1_norm();
    }
    Ok(value)
}

/// Solves the background subproblem from `b_init` with fresh splitting variables.
pub fn solve_b(
    o_warped: &Tensor3<f64>,
    r: &Tensor3<f64>,
    groups: &[PatchGroup],
    states: &[GroupState],
    cfg: &SolverConfig,
    b_init: &Tensor3<f64>,
) -> Result<Tensor3<f64>> {
    Ok(solve_b_report(o_warped, r, groups, states, cfg, b_init)?.b)
}

pub(crate) fn solve_b_report(
    o_warped: &Tensor3<f64>,
    r: &Tensor3<f64>,
    groups: &[PatchGroup],
    states: &[GroupState],
    cfg: &SolverConfig,
    b_init: &Tensor3<f64>,
) -> Result<BackgroundReport> {
    o_warped.require_same_shape(r, "solve_b")?;
    o_warped.require_same_shape(b_init, "solve_b")?;
    let dims = o_warped.dims();
    let t = dims[2];
    let npix = dims[0] * dims[1];
    let n = npix * t;
    let sys = NonlocalSystem::build(dims, groups, states, cfg.omega, !cfg.enable_subspace)?;

    let mut data = to_pixel_major(o_warped);
    for (d, rv) in data.iter_mut().zip(to_pixel_major(r)) {
        *d -= rv;
    }
    let mut scratch = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let gamma = if t > 1 { cfg.gamma } else { 0.0 };
    let eval = |x: &[f64], scratch: &mut [f64], grad: &mut [f64]| -> f64 {
        let fid: f64 = x
            .iter()
            .zip(&data)
            .map(|(a, b)| 0.5 * (a - b) * (a - b))
            .sum();
        let mut v = fid + sys.energy(x, scratch);
        if gamma > 0.0 {
            grad_t(x, t, grad);
            v += gamma * grad.iter().map(|g| g.abs()).sum::<f64>();
        }
        v
    };

    let mut best = to_pixel_major(b_init);
    let mut best_value = eval(&best, &mut scratch, &mut grad);
    let mut x = best.clone();
    let mut cg_total = 0;

    if gamma == 0.0 {
        // no TV term: one linear solve gives the exact minimiser
        let op = NormalOperator::new(&sys, 0.0, cfg.cg_preconditioner, npix)?;
        let rhs: Vec<f64> = data.iter().zip(&sys.rhs).map(|(a, b)| a + b).collect();
        cg_total += pcg(&op, &rhs, &mut x, cfg.cg_tol, cfg.cg_max)?;
        let v = eval(&x, &mut scratch, &mut grad);
        if v <= best_value {
            best = x;
        }
        return Ok(BackgroundReport {
            b: from_pixel_major(&best, dims),
            admm_iterations: 0,
            cg_iterations: cg_total,
        });
    }

    let mut rho = cfg.admm_rho;
    let mut z = vec![0.0; n];
    grad_t(&x, t, &mut z);
    let mut u = vec![0.0; n];
    let mut op = NormalOperator::new(&sys, rho, cfg.cg_preconditioner, npix)?;
    let base_rhs: Vec<f64> = data.iter().zip(&sys.rhs).map(|(a, b)| a + b).collect();
    let mut rhs = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut adj = vec![0.0; n];
    let mut z_old = vec![0.0; n];
    let rms = |v: &[f64]| (dot(v, v) / v.len() as f64).sqrt();
    let mut iterations = 0;
    for _ in 0..cfg.admm_max {
        iterations += 1;
        for i in 0..n {
            diff[i] = z[i] - u[i];
        }
        grad_t_adjoint(&diff, t, &mut adj);
        for i in 0..n {
            rhs[i] = base_rhs[i] + rho * adj[i];
        }
        cg_total += pcg(&op, &rhs, &mut x, cfg.cg_tol, cfg.cg_max)?;
        grad_t(&x, t, &mut grad);
        z_old.copy_from_slice(&z);
        for i in 0..n {
            z[i] = shrink(grad[i] + u[i], gamma / rho);
            u[i] += grad[i] - z[i];
            diff[i] = grad[i] - z[i];
        }
        let primal = rms(&diff);
        for i in 0..n {
            diff[i] = z[i] - z_old[i];
        }
        grad_t_adjoint(&diff, t, &mut adj);
        let dual = rho * rms(&adj);
        // ADMM iterates need not decrease the objective monotonically; keep the best one
        let v = eval(&x, &mut scratch, &mut grad);
        if !v.is_finite() {
            return Err(Error::numeric(
                "background subproblem produced a non-finite objective",
            ));
        }
        if v <= best_value {
            best_value = v;
            best.copy_from_slice(&x);
        }
        if primal < cfg.admm_tol && dual < cfg.admm_tol {
            break;
        }
        // residual balancing: keep the primal and dual residuals within a factor of 10
        let scale = if primal > 10.0 * dual {
            2.0
        } else if dual > 10.0 * primal {
            0.5
        } else {
            1.0
        };
        if scale != 1.0 {
            rho *= scale;
            for v in u.iter_mut() {
                *v /= scale;
            }
            op = NormalOperator::new(&sys, rho, cfg.cg_preconditioner, npix)?;
        }
    }
    Ok(BackgroundReport {
        b: from_pixel_major(&best, dims),
        admm_iterations: iterations,
        cg_iterations: cg_total,
    })
}
