//! Per-frame affine warping and the linearised (Gauss–Newton) update of the
//! alignment parameters.
//!
//! An [`Affine`] maps an output pixel `(x, y)` = `(col, row)` to the source
//! location `(a·x + b·y + tx, c·x + d·y + ty)`; the warped frame is the
//! bilinear sample of the input there, with replicate boundary handling.

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::tensor::Image;

const DET_MIN: f64 = 0.5;
const DET_MAX: f64 = 2.0;
const RIDGE: f64 = 1e-6;
const MAX_HALVINGS: usize = 5;
const RAIN_MASK_QUANTILE: f64 = 0.9;
const MAX_CONDITION: f64 = 1e14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

impl Default for Affine {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        c: 0.0,
        d: 1.0,
        ty: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }

    /// Rotation by `theta` radians about `(cx, cy)` followed by a shift of `(tx, ty)`.
    pub fn rotation_about(theta: f64, cx: f64, cy: f64, tx: f64, ty: f64) -> Self {
        let (s, co) = theta.sin_cos();
        Affine {
            a: co,
            b: -s,
            tx: cx - co * cx + s * cy + tx,
            c: s,
            d: co,
            ty: cy - s * cx - co * cy + ty,
        }
    }

    pub fn from_array(p: [f64; 6]) -> Self {
        Affine {
            a: p[0],
            b: p[1],
            tx: p[2],
            c: p[3],
            d: p[4],
            ty: p[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.b, self.tx, self.c, self.d, self.ty]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn validate(&self) -> Result<()> {
        let det = self.determinant();
        if !(DET_MIN..=DET_MAX).contains(&det) || self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!(
                "affine determinant {det} outside [{DET_MIN}, {DET_MAX}]"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    pub fn inverse(&self) -> Result<Affine> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::arg("affine transform is not invertible"));
        }
        let (ia, ib, ic, id) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Ok(Affine {
            a: ia,
            b: ib,
            tx: -(ia * self.tx + ib * self.ty),
            c: ic,
            d: id,
            ty: -(ic * self.tx + id * self.ty),
        })
    }

    /// Mean Euclidean distance between where `self` and `other` send each pixel.
    pub fn mean_endpoint_error(&self, other: &Affine, height: usize, width: usize) -> f64 {
        let mut acc = 0.0;
        for r in 0..height {
            for c in 0..width {
                let (x1, y1) = self.apply(c as f64, r as f64);
                let (x2, y2) = other.apply(c as f64, r as f64);
                acc += ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
            }
        }
        acc / (height * width) as f64
    }
}

#[inline]
fn sample_bilinear(frame: &Image, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let v00 = frame.get_clamped(y0, x0) as f64;
    let v01 = frame.get_clamped(y0, x0 + 1) as f64;
    let v10 = frame.get_clamped(y0 + 1, x0) as f64;
    let v11 = frame.get_clamped(y0 + 1, x0 + 1) as f64;
    let top = v00 + fx * (v01 - v00);
    let bottom = v10 + fx * (v11 - v10);
    top + fy * (bottom - top)
}

/// Double-precision warp; the basis for [`warp_affine`] and the Jacobian.
pub fn warp_affine_f64(frame: &Image, params: &Affine) -> Result<Vec<f64>> {
    params.validate()?;
    let (h, w) = (frame.height(), frame.width());
    if params.is_identity() {
        return Ok(frame.data().iter().map(|&v| v as f64).collect());
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (sx, sy) = params.apply(c as f64, r as f64);
            out.push(sample_bilinear(frame, sx, sy));
        }
    }
    Ok(out)
}

pub fn warp_affine(frame: &Image, params: &Affine) -> Result<Image> {
    if params.is_identity() {
        params.validate()?;
        return Ok(frame.clone());
    }
    let data = warp_affine_f64(frame, params)?;
    Image::new(
        frame.height(),
        frame.width(),
        data.into_iter().map(|v| v as f32).collect(),
    )
}

/// Central differences with replicate boundary: `(∂/∂x, ∂/∂y)`.
fn central_gradients(data: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            gx[r * w + c] = 0.5 * (data[r * w + cr] - data[r * w + cl]);
            gy[r * w + c] = 0.5 * (data[rd * w + c] - data[ru * w + c]);
        }
    }
    (gx, gy)
}

/// Jacobian of a warped frame with respect to the six parameters, in the order
/// `(a, b, tx, c, d, ty)`.
#[derive(Clone, Debug)]
pub struct WarpJacobian {
    pub height: usize,
    pub width: usize,
    pub columns: [Vec<f64>; 6],
}

impl WarpJacobian {
    pub fn column_image(&self, p: usize) -> Image {
        Image::new(
            self.height,
            self.width,
            self.columns[p].iter().map(|&v| v as f32).collect(),
        )
        .expect("jacobian shape matches frame")
    }
}

fn jacobian_from_warped(warped: &[f64], h: usize, w: usize, params: &Affine) -> WarpJacobian {
    let (gx_out, gy_out) = central_gradients(warped, h, w);
    // ∇_out W = Aᵀ ∇_src I, so ∇_src I = A⁻ᵀ ∇_out W
    let det = params.determinant();
    let (ia, ib, ic, id) = (
        params.d / det,
        -params.b / det,
        -params.c / det,
        params.a / det,
    );
    let mut cols: [Vec<f64>; 6] = Default::default();
    for col in cols.iter_mut() {
        *col = vec![0.0; h * w];
    }
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let (gxo, gyo) = (gx_out[i], gy_out[i]);
            // A⁻ᵀ = [[ia, ic], [ib, id]]
            let ix = ia * gxo + ic * gyo;
            let iy = ib * gxo + id * gyo;
            let (x, y) = (c as f64, r as f64);
            cols[0][i] = ix * x;
            cols[1][i] = ix * y;
            cols[2][i] = ix;
            cols[3][i] = iy * x;
            cols[4][i] = iy * y;
            cols[5][i] = iy;
        }
    }
    WarpJacobian {
        height: h,
        width: w,
        columns: cols,
    }
}

pub fn warp_jacobian(frame: &Image, params: &Affine) -> Result<WarpJacobian> {
    let warped = warp_affine_f64(frame, params)?;
    Ok(jacobian_from_warped(
        &warped,
        frame.height(),
        frame.width(),
        params,
    ))
}

fn residual_energy(warped: &[f64], target: &[f64]) -> f64 {
    warped
        .iter()
        .zip(target)
        .map(|(w, t)| (w - t).powi(2))
        .sum()
}

fn quantile_abs(values: &[f64], q: f64) -> f64 {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let idx = ((mags.len() - 1) as f64 * q).round() as usize;
    let (_, nth, _) = mags.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    *nth
}

/// Ridge-damped Gauss–Newton direction `−H⁻¹g`.
fn damped_solve(mut hess: Matrix6<f64>, grad: Vector6<f64>) -> Result<Vector6<f64>> {
    let trace = hess.trace();
    if !(trace > 0.0) {
        return Err(Error::numeric(
            "alignment normal matrix is singular (no image gradient in unmasked pixels): condition number inf",
        ));
    }
    let damping = RIDGE * trace / 6.0;
    for p in 0..6 {
        hess[(p, p)] += damping;
    }
    let eig = hess.symmetric_eigenvalues();
    let (emin, emax) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e), hi.max(e))
    });
    let cond = if emin > 0.0 {
        emax / emin
    } else {
        f64::INFINITY
    };
    if !(cond < MAX_CONDITION) {
        return Err(Error::numeric(format!(
            "alignment normal matrix is singular after damping: condition number {cond:e}"
        )));
    }
    let chol = hess.cholesky().ok_or_else(|| {
        Error::numeric(format!(
            "alignment normal matrix is not positive definite: condition number {cond:e}"
        ))
    })?;
    Ok(chol.solve(&(-grad)))
}

/// `Σ huber_μ(e)`, which equals `min_R ½‖e − R‖² + μ‖R‖₁`.
pub(crate) fn huber_energy(warped: &[f64], background: &[f64], mu: f64) -> f64 {
    warped
        .iter()
        .zip(background)
        .map(|(w, b)| {
            let e = (w - b).abs();
            if e <= mu {
                0.5 * e * e
            } else {
                mu * e - 0.5 * mu * mu
            }
        })
        .sum()
}

/// Alignment step with the rain layer minimised out.
///
/// One reweighted Gauss–Newton step on `Σ huber_μ(O∘τ − B)` (weights
/// `min(1, μ/|e|)`, top decile of `|e|` masked), with step halving on the
/// Huber energy. Returns the
/// parameters and their energy; unchanged parameters when no trial helps.
pub(crate) fn update_tau_robust(
    observed: &Image,
    background: &[f64],
    mu: f64,
    params: &Affine,
) -> Result<(Affine, f64)> {
    let (h, w) = (observed.height(), observed.width());
    let n = h * w;
    if background.len() != n {
        return Err(Error::arg(format!(
            "alignment inputs must all have {n} pixels (got background {})",
            background.len()
        )));
    }
    let warped = warp_affine_f64(observed, params)?;
    let base_energy = huber_energy(&warped, background, mu);
    if base_energy == 0.0 {
        return Ok((*params, 0.0));
    }
    let jac = jacobian_from_warped(&warped, h, w, params);
    let resid: Vec<f64> = warped.iter().zip(background).map(|(w, b)| w - b).collect();
    // The largest residuals are mostly rain. They and their 4-neighbours
    // (whose central differences straddle them) are left out of the fit.
    let cutoff = quantile_abs(&resid, RAIN_MASK_QUANTILE).max(mu);
    let mut skip = vec![false; n];
    for r in 0..h {
        for c in 0..w {
            if resid[r * w + c].abs() > cutoff {
                skip[r * w + c] = true;
                if r > 0 {
                    skip[(r - 1) * w + c] = true;
                }
                if r + 1 < h {
                    skip[(r + 1) * w + c] = true;
                }
                if c > 0 {
                    skip[r * w + c - 1] = true;
                }
                if c + 1 < w {
                    skip[r * w + c + 1] = true;
                }
            }
        }
    }
    let mut hess = Matrix6::<f64>::zeros();
    let mut grad = Vector6::<f64>::zeros();
    for i in 0..n {
        if skip[i] {
            continue;
        }
        let e = resid[i];
        let wt = if e.abs() <= mu { 1.0 } else { mu / e.abs() };
        let jrow = Vector6::from_fn(|p, _| jac.columns[p][i]);
        hess += jrow * jrow.transpose() * wt;
        grad += jrow * (wt * e);
    }
    let delta = damped_solve(hess, grad)?;
    let base = params.to_array();
    let mut step = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let mut cand = [0.0; 6];
        for p in 0..6 {
            cand[p] = base[p] + step * delta[p];
        }
        let cand = Affine::from_array(cand);
        if cand.validate().is_ok() {
            let energy = huber_energy(&warp_affine_f64(observed, &cand)?, background, mu);
            if energy <= base_energy {
                return Ok((cand, energy));
            }
        }
        step *= 0.5;
    }
    Ok((*params, base_energy))
}

/// One linearised alignment step.
///
/// Solves the damped normal equations of
/// `min_Δ ‖O∘τ + ∇O·Δ − B − R‖²` over pixels whose rain magnitude does not
/// exceed the frame's 90th percentile of `|R|`, then halves the step until the
/// full residual `‖O∘τ − B − R‖²` does not increase. If no trial step helps the
/// input parameters are returned unchanged.
pub fn update_tau(
    observed: &Image,
    background: &[f64],
    rain: &[f64],
    params: &Affine,
) -> Result<Affine> {
    let (h, w) = (observed.height(), observed.width());
    let n = h * w;
    if background.len() != n || rain.len() != n {
        return Err(Error::arg(format!(
            "alignment inputs must all have {n} pixels (got background {}, rain {})",
            background.len(),
            rain.len()
        )));
    }
    let target: Vec<f64> = background.iter().zip(rain).map(|(b, r)| b + r).collect();
    let warped = warp_affine_f64(observed, params)?;
    let base_energy = residual_energy(&warped, &target);
    if base_energy == 0.0 {
        return Ok(*params);
    }
    let jac = jacobian_from_warped(&warped, h, w, params);
    let cutoff = quantile_abs(rain, RAIN_MASK_QUANTILE);

    let mut hess = Matrix6::<f64>::zeros();
    let mut grad = Vector6::<f64>::zeros();
    for i in 0..n {
        if rain[i].abs() > cutoff {
            continue;
        }
        let jrow = Vector6::from_fn(|p, _| jac.columns[p][i]);
        let e = warped[i] - target[i];
        hess += jrow * jrow.transpose();
        grad += jrow * e;
    }
    let delta = damped_solve(hess, grad)?;

    let base = params.to_array();
    let mut step = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let mut cand = [0.0; 6];
        for p in 0..6 {
            cand[p] = base[p] + step * delta[p];
        }
        let cand = Affine::from_array(cand);
        if cand.validate().is_ok() {
            let energy = residual_energy(&warp_affine_f64(observed, &cand)?, &target);
            if energy <= base_energy {
                return Ok(cand);
            }
        }
        step *= 0.5;
    }
    Ok(*params)
}
