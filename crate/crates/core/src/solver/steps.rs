//! Closed-form subproblems: rain, temporal subspace and low-rank surrogate.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::svt_tnn_with_norm;
use crate::nonlocal::PatchGroup;
use crate::tensor::{shrink, Element, Matrix, Tensor3};

/// Singular values below this fraction of the largest do not count towards `d`.
pub const RANK_TOLERANCE: f64 = 1e-3;

/// `R = soft_threshold(O∘τ − B, μ)`.
pub fn solve_r<T: Element>(o_warped: &Tensor3<T>, b: &Tensor3<T>, mu: f64) -> Result<Tensor3<T>> {
    o_warped.require_same_shape(b, "solve_r")?;
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::arg(format!(
            "mu must be a finite value >= 0, got {mu}"
        )));
    }
    o_warped.zip_with(b, |o, b| shrink(o - b, mu))
}

/// Eigen-decomposition of the `t × t` Gram matrix of a tube list; returns the
/// left singular vectors (as rows, leading first) and singular values.
pub(crate) fn temporal_basis(tubes: &[f64], t: usize) -> (Matrix, Vec<f64>) {
    let mut gram = DMatrix::<f64>::zeros(t, t);
    for tube in tubes.chunks_exact(t) {
        for a in 0..t {
            let va = tube[a];
            if va == 0.0 {
                continue;
            }
            for b in a..t {
                gram[(a, b)] += va * tube[b];
            }
        }
    }
    for a in 0..t {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sigma = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    let mut basis = Matrix::zeros(t, t);
    for (row, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        // fix the sign so that the largest-magnitude entry is positive
        let pivot = (0..t)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .expect("t >= 1");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for c in 0..t {
            basis.set(row, c, sign * v[c]);
        }
    }
    (basis, sigma)
}

/// `min(d_max, #{σ_i > 1e-3 σ_1})`, at least 1.
pub fn select_rank(sigma: &[f64], d_max: usize) -> usize {
    let top = sigma.first().copied().unwrap_or(0.0);
    let count = sigma.iter().filter(|&&s| s > RANK_TOLERANCE * top).count();
    count.clamp(1, d_max.max(1)).min(sigma.len().max(1))
}

fn first_rows(m: &Matrix, d: usize) -> Matrix {
    Matrix::from_fn(d, m.cols(), |r, c| m.get(r, c))
}

/// Temporal subspace of a gathered `p² × k × t` group: the top-`d` left
/// singular vectors of its mode-3 unfolding, as the rows of a `d × t` matrix.
pub fn solve_q(gathered: &Tensor3<f64>, d: usize) -> Result<Matrix> {
    let (pp, k, t) = (gathered.height(), gathered.width(), gathered.frames());
    if d == 0 || d > t {
        return Err(Error::arg(format!(
            "subspace rank {d} out of range for {t} frames"
        )));
    }
    let mut tubes = vec![0.0; pp * k * t];
    for f in 0..t {
        for (idx, &v) in gathered.frame(f).iter().enumerate() {
            // frame index is m·k + j; the mode-3 column is m + j·p²
            let (m, j) = (idx / k, idx % k);
            tubes[(m + j * pp) * t + f] = v;
        }
    }
    let (basis, _) = temporal_basis(&tubes, t);
    Ok(first_rows(&basis, d))
}

/// `J = svt_tnn(projected, λ²/2)`, the minimiser of `λ⁻²‖P − J‖² + tnn(J)`.
pub fn solve_j(projected: &Tensor3<f64>, lambda: f64) -> Result<Tensor3<f64>> {
    Ok(solve_j_with_norm(projected, lambda)?.0)
}

pub(crate) fn solve_j_with_norm(
    projected: &Tensor3<f64>,
    lambda: f64,
) -> Result<(Tensor3<f64>, f64)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::arg(format!(
            "lambda must be a finite value > 0, got {lambda}"
        )));
    }
    svt_tnn_with_norm(projected, lambda * lambda / 2.0)
}

/// `S_i B ×₃ Q` from a tube list (tube index `m + j·p²`), shaped `p² × k × d`.
pub(crate) fn project_tubes(
    tubes: &[f64],
    t: usize,
    group: &PatchGroup,
    q: &Matrix,
) -> Tensor3<f64> {
    let pp = group.patch_size * group.patch_size;
    let k = group.members.len();
    let d = q.rows();
    let mut out = Tensor3::<f64>::zeros(pp, k, d).expect("non-empty group");
    let data = out.data_mut();
    for (tube_idx, tube) in tubes.chunks_exact(t).enumerate() {
        let (m, j) = (tube_idx % pp, tube_idx / pp);
        for l in 0..d {
            let v: f64 = q.row(l).iter().zip(tube).map(|(a, b)| a * b).sum();
            data[(l * pp + m) * k + j] = v;
        }
    }
    out
}

/// One group's share of the objective: `ω (λ⁻² ‖P − J‖² + tnn(J))`.
pub(crate) fn group_value(
    projected: &Tensor3<f64>,
    j: &Tensor3<f64>,
    j_tnn: f64,
    omega: f64,
    lambda: f64,
) -> f64 {
    let fit: f64 = projected
        .data()
        .iter()
        .zip(j.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    omega * (fit / (lambda * lambda) + j_tnn)
}
