//! Singular value decomposition, matrix singular value thresholding and the
//! tubal tensor nuclear norm with its proximal operator.
//!
//! The tubal nuclear norm of an `a × b × t` tensor is the mean, over the
//! `t` frontal slices of its temporal DFT, of the slice nuclear norms. Under
//! that normalisation Parseval gives `‖X‖²_F = (1/t) Σ_k ‖X̂_k‖²_F`, so the
//! proximal problem separates into an independent matrix SVT per Fourier
//! slice with the same threshold.

use nalgebra::{ComplexField, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{shrink, Element, Matrix, Tensor3};

const SVD_MAX_ITER: usize = 10_000;

/// Leading singular triplets. `u` is `rows × d`, `v` is `cols × d`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

struct DenseSvd<N: ComplexField> {
    u: DMatrix<N>,
    s: Vec<f64>,
    v_t: DMatrix<N>,
}

fn dense_svd<N>(m: DMatrix<N>) -> Result<DenseSvd<N>>
where
    N: ComplexField<RealField = f64>,
{
    let (rows, cols) = m.shape();
    let svd = nalgebra::linalg::SVD::try_new(m, true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| {
            Error::numeric(format!(
                "SVD of a {rows}x{cols} matrix did not converge within {SVD_MAX_ITER} iterations"
            ))
        })?;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let raw: Vec<f64> = svd.singular_values.iter().copied().collect();

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
    let s = order.iter().map(|&i| raw[i]).collect();
    let u = DMatrix::from_fn(rows, order.len(), |r, c| u[(r, order[c])].clone());
    let v_t = DMatrix::from_fn(order.len(), cols, |r, c| v_t[(order[r], c)].clone());
    Ok(DenseSvd { u, s, v_t })
}

/// Top-`d` singular triplets of `m`, singular values non-increasing.
pub fn svd_rank_d(m: &Matrix, d: usize) -> Result<Svd> {
    let k = m.rows().min(m.cols());
    if d == 0 || d > k {
        return Err(Error::arg(format!(
            "rank {d} out of range for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let full = dense_svd(m.to_dmatrix())?;
    Ok(Svd {
        u: Matrix::from_fn(m.rows(), d, |r, c| full.u[(r, c)]),
        s: full.s[..d].to_vec(),
        v: Matrix::from_fn(m.cols(), d, |r, c| full.v_t[(c, r)]),
    })
}

/// All singular values of `m`, non-increasing.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let svd =
        nalgebra::linalg::SVD::try_new(m.to_dmatrix(), false, false, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(|| Error::numeric("singular value computation did not converge"))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// SVT of a dense matrix; also returns the nuclear norm of the result.
fn svt_dense<N>(m: DMatrix<N>, tau: f64) -> Result<(DMatrix<N>, f64)>
where
    N: ComplexField<RealField = f64>,
{
    if tau > 0.0 {
        svt_gram(m, tau)
    } else {
        svt_full(m, tau)
    }
}

/// SVT through the eigen-decomposition of the smaller Gram matrix:
/// `Y = M · V diag(max(0, 1 − τ/σ)) Vᴴ`. Singular values below about
/// `√ε · σ₁` are inaccurate this way, but those are thresholded to zero
/// whenever `τ` is not tiny, and the filter is applied to `M` itself.
fn svt_gram<N>(m: DMatrix<N>, tau: f64) -> Result<(DMatrix<N>, f64)>
where
    N: ComplexField<RealField = f64>,
{
    let (rows, cols) = m.shape();
    let wide = cols > rows;
    let gram = if wide {
        &m * m.adjoint()
    } else {
        m.adjoint() * &m
    };
    let k = gram.nrows();
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, SVD_MAX_ITER).ok_or_else(|| {
        Error::numeric(format!(
            "eigen-decomposition for the SVT of a {rows}x{cols} matrix did not converge"
        ))
    })?;
    let mut filter = DMatrix::<N>::zeros(k, k);
    let mut norm = 0.0;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        let sv = ev.max(0.0).sqrt();
        if sv > tau {
            norm += sv - tau;
            let v = eig.eigenvectors.column(i);
            filter += (&v * v.adjoint()) * N::from_real(1.0 - tau / sv);
        }
    }
    let out = if wide { filter * m } else { m * filter };
    Ok((out, norm))
}

fn svt_full<N>(m: DMatrix<N>, tau: f64) -> Result<(DMatrix<N>, f64)>
where
    N: ComplexField<RealField = f64>,
{
    let (rows, cols) = m.shape();
    let DenseSvd { u, s, v_t } = dense_svd(m)?;
    let mut out = DMatrix::<N>::zeros(rows, cols);
    let mut norm = 0.0;
    for (i, &sv) in s.iter().enumerate() {
        let sv = shrink(sv, tau);
        if sv > 0.0 {
            norm += sv;
            let ucol = u.column(i) * N::from_real(sv);
            out += ucol * v_t.row(i);
        }
    }
    Ok((out, norm))
}

/// Singular value thresholding: the minimiser of `½‖Y − M‖²_F + tau‖Y‖_*`.
pub fn svt_matrix(m: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::arg(format!(
            "threshold must be nonnegative, got {tau}"
        )));
    }
    Ok(Matrix::from_dmatrix(&svt_dense(m.to_dmatrix(), tau)?.0))
}

/// Temporal DFT of every tube; returns the `t` frontal slices as `a × b` complex matrices.
fn fourier_slices<T: Element>(t: &Tensor3<T>) -> Vec<DMatrix<Complex64>> {
    let (a, b, n) = (t.height(), t.width(), t.frames());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut slices = vec![DMatrix::<Complex64>::zeros(a, b); n];
    let mut tube = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..a {
        for j in 0..b {
            for (k, z) in tube.iter_mut().enumerate() {
                *z = Complex64::new(t.get(i, j, k).to_f64(), 0.0);
            }
            fft.process(&mut tube);
            for (k, z) in tube.iter().enumerate() {
                slices[k][(i, j)] = *z;
            }
        }
    }
    slices
}

/// Tubal tensor nuclear norm: `(1/t) Σ_k ‖X̂_k‖_*` over temporal DFT slices.
pub fn tnn<T: Element>(t: &Tensor3<T>) -> Result<f64> {
    let n = t.frames();
    let slices = fourier_slices(t);
    let mut total = 0.0;
    // slices k and n-k are conjugate for real input and share singular values
    for (k, slice) in slices.iter().enumerate().take(n / 2 + 1) {
        let failed = || Error::numeric("SVD of a Fourier slice did not converge");
        if k == 0 || 2 * k == n {
            let s = nalgebra::linalg::SVD::try_new(
                slice.map(|z| z.re),
                false,
                false,
                f64::EPSILON,
                SVD_MAX_ITER,
            )
            .ok_or_else(failed)?;
            total += s.singular_values.iter().sum::<f64>();
        } else {
            let s = nalgebra::linalg::SVD::try_new(
                slice.clone(),
                false,
                false,
                f64::EPSILON,
                SVD_MAX_ITER,
            )
            .ok_or_else(failed)?;
            total += 2.0 * s.singular_values.iter().sum::<f64>();
        }
    }
    Ok(total / n as f64)
}

/// Proximal operator of `tau · tnn`: per-slice SVT in the temporal Fourier domain.
pub fn svt_tnn<T: Element>(t: &Tensor3<T>, tau: f64) -> Result<Tensor3<f64>> {
    Ok(svt_tnn_with_norm(t, tau)?.0)
}

/// [`svt_tnn`] together with the tubal nuclear norm of its output.
pub(crate) fn svt_tnn_with_norm<T: Element>(
    t: &Tensor3<T>,
    tau: f64,
) -> Result<(Tensor3<f64>, f64)> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::arg(format!(
            "threshold must be nonnegative, got {tau}"
        )));
    }
    let (a, b, n) = (t.height(), t.width(), t.frames());
    let mut slices = fourier_slices(t);
    let mut total = 0.0;
    for k in 0..=n / 2 {
        let self_conjugate = k == 0 || 2 * k == n;
        let (shrunk, norm) = if self_conjugate {
            // purely real slice: the real SVD is several times cheaper
            let (re, norm) = svt_dense(slices[k].map(|z| z.re), tau)?;
            (re.map(|x| Complex64::new(x, 0.0)), norm)
        } else {
            svt_dense(slices[k].clone(), tau)?
        };
        if self_conjugate {
            total += norm;
        } else {
            total += 2.0 * norm;
            slices[n - k] = shrunk.map(|z| z.conj());
        }
        slices[k] = shrunk;
    }

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut out = Tensor3::<f64>::zeros(a, b, n)?;
    let mut tube = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for i in 0..a {
        for j in 0..b {
            for (k, z) in tube.iter_mut().enumerate() {
                *z = slices[k][(i, j)];
            }
            ifft.process(&mut tube);
            for (k, z) in tube.iter().enumerate() {
                out.set(i, j, k, z.re * scale);
            }
        }
    }
    Ok((out, total / n as f64))
}

/// Orthonormality defect `max |AᵀA − I|` over the columns of `a`.
pub fn orthonormality_error(a: &Matrix) -> f64 {
    let gram = a.transpose().matmul(a).expect("compatible shapes");
    let mut worst: f64 = 0.0;
    for r in 0..gram.rows() {
        for c in 0..gram.cols() {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((gram.get(r, c) - target).abs());
        }
    }
    worst
}
