//! Dense 3-D tensors, 2-D images and row-major matrices, plus the elementwise
//! and multilinear primitives the solver is built from.
//!
//! Layout is frame-major: frame index slowest, then row, then column. For a
//! video this is `(row, col, frame)`; a gathered patch group reuses the same
//! container with `(patch element, member, frame)`.
//!
//! Unfoldings follow the Kolda–Bader convention: the mode-`m` fibres become
//! columns, ordered with the lowest remaining index varying fastest.

use crate::error::{Error, Result};

/// Storage scalar for tensors. Videos use `f32`; solver intermediates use `f64`.
pub trait Element: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

/// An `h × w × t` video volume stored in single precision.
pub type VideoTensor = Tensor3<f32>;

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::arg(format!(
            "tensor dimensions must be positive, got {}x{}x{}",
            dims[0], dims[1], dims[2]
        )));
    }
    Ok(())
}

impl<T: Element> Tensor3<T> {
    pub fn zeros(height: usize, width: usize, frames: usize) -> Result<Self> {
        check_dims([height, width, frames])?;
        Ok(Self {
            dims: [height, width, frames],
            data: vec![T::default(); height * width * frames],
        })
    }

    pub fn from_vec(height: usize, width: usize, frames: usize, data: Vec<T>) -> Result<Self> {
        check_dims([height, width, frames])?;
        if data.len() != height * width * frames {
            return Err(Error::arg(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                frames
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(Error::arg(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self {
            dims: [height, width, frames],
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        frames: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        check_dims([height, width, frames])?;
        let mut data = Vec::with_capacity(height * width * frames);
        for k in 0..frames {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::from_vec(height, width, frames, data)
    }

    /// Stacks equally sized images as consecutive frames.
    pub fn from_frames(frames: &[Image]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::arg("cannot build a video from zero frames"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(h * w * frames.len());
        for (k, img) in frames.iter().enumerate() {
            if img.height() != h || img.width() != w {
                return Err(Error::arg(format!(
                    "frame {k} is {}x{}, expected {h}x{w}",
                    img.height(),
                    img.width()
                )));
            }
            data.extend(img.data().iter().map(|&v| T::from_f64(v as f64)));
        }
        Self::from_vec(h, w, frames.len(), data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[0]
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.dims[1]
    }
    #[inline]
    pub fn frames(&self) -> usize {
        self.dims[2]
    }
    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn frame_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[0] + i) * self.dims[1] + j
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.offset(i, j, k)]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    pub fn frame(&self, k: usize) -> &[T] {
        let n = self.frame_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [T] {
        let n = self.frame_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn frame_image(&self, k: usize) -> Image {
        Image {
            height: self.dims[0],
            width: self.dims[1],
            data: self.frame(k).iter().map(|v| v.to_f64() as f32).collect(),
        }
    }

    pub fn set_frame(&mut self, k: usize, img: &Image) -> Result<()> {
        if img.height() != self.height() || img.width() != self.width() {
            return Err(Error::arg("frame shape mismatch"));
        }
        for (dst, &src) in self.frame_mut(k).iter_mut().zip(img.data()) {
            *dst = T::from_f64(src as f64);
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor3<U> {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Tensor3<U>) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn require_same_shape<U>(&self, other: &Tensor3<U>, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::arg(format!(
                "{what}: shape {:?} does not match {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.require_same_shape(other, "elementwise operation")?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| T::from_f64(f(a.to_f64(), b.to_f64())))
                .collect(),
        })
    }

    /// Inner product accumulated in double precision.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.require_same_shape(other, "inner product")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.to_f64() * b.to_f64())
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().powi(2)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().abs()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    /// Copies the `(i, j)` temporal tube into `out` (length `frames`).
    pub fn tube_into(&self, i: usize, j: usize, out: &mut [f64]) {
        let step = self.frame_len();
        let base = i * self.dims[1] + j;
        for (k, o) in out.iter_mut().enumerate().take(self.dims[2]) {
            *o = self.data[base + k * step].to_f64();
        }
    }
}

/// Single-channel `f32` image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("image dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::arg(format!(
                "image data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.width + c] = v;
    }

    /// Sample with replicate (clamp-to-edge) boundary handling.
    #[inline]
    pub fn get_clamped(&self, r: isize, c: isize) -> f32 {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn transpose(&self) -> Image {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.height {
            for c in 0..self.width {
                out[c * self.height + r] = self.data[r * self.width + c];
            }
        }
        Image {
            height: self.width,
            width: self.height,
            data: out,
        }
    }
}

/// Dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::arg(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("matrix contains non-finite values"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::arg(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::arg("matrix shape mismatch"));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_dmatrix(m: &nalgebra::DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

fn check_mode(mode: usize) -> Result<()> {
    if !(1..=3).contains(&mode) {
        return Err(Error::arg(format!("mode must be 1, 2 or 3, got {mode}")));
    }
    Ok(())
}

/// Row/column position of tensor entry `(i, j, k)` in its mode-`mode` unfolding.
#[inline]
fn unfold_index(dims: [usize; 3], mode: usize, i: usize, j: usize, k: usize) -> (usize, usize) {
    match mode {
        1 => (i, j + k * dims[1]),
        2 => (j, i + k * dims[0]),
        _ => (k, i + j * dims[0]),
    }
}

fn unfold_shape(dims: [usize; 3], mode: usize) -> (usize, usize) {
    match mode {
        1 => (dims[0], dims[1] * dims[2]),
        2 => (dims[1], dims[0] * dims[2]),
        _ => (dims[2], dims[0] * dims[1]),
    }
}

/// Mode-`mode` matricization (`mode` in 1..=3).
pub fn unfold<T: Element>(t: &Tensor3<T>, mode: usize) -> Result<Matrix> {
    check_mode(mode)?;
    let dims = t.dims();
    let (rows, cols) = unfold_shape(dims, mode);
    let mut out = Matrix::zeros(rows, cols);
    for k in 0..dims[2] {
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                let (r, c) = unfold_index(dims, mode, i, j, k);
                out.data[r * cols + c] = t.get(i, j, k).to_f64();
            }
        }
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, dims: [usize; 3]) -> Result<Tensor3<f64>> {
    check_mode(mode)?;
    check_dims(dims)?;
    let (rows, cols) = unfold_shape(dims, mode);
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::arg(format!(
            "cannot fold a {}x{} matrix along mode {mode} into {:?}",
            m.rows(),
            m.cols(),
            dims
        )));
    }
    let mut out = Tensor3::<f64>::zeros(dims[0], dims[1], dims[2])?;
    for k in 0..dims[2] {
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                let (r, c) = unfold_index(dims, mode, i, j, k);
                out.set(i, j, k, m.get(r, c));
            }
        }
    }
    Ok(out)
}

/// `T ×₃ Q`: applies `Q` (`d × t`) along the temporal mode of an `a × b × t` tensor.
pub fn mode3_product<T: Element>(t: &Tensor3<T>, q: &Matrix) -> Result<Tensor3<f64>> {
    if q.cols() != t.frames() {
        return Err(Error::arg(format!(
            "mode-3 product: Q has {} columns but tensor has {} frames",
            q.cols(),
            t.frames()
        )));
    }
    if q.rows() == 0 {
        return Err(Error::arg("mode-3 product: Q has no rows"));
    }
    let n = t.frame_len();
    let mut out = Tensor3::<f64>::zeros(t.height(), t.width(), q.rows())?;
    for r in 0..q.rows() {
        let dst = out.frame_mut(r);
        for (k, &w) in q.row(r).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &v) in dst.iter_mut().zip(t.frame(k)) {
                *o += w * v.to_f64();
            }
        }
        debug_assert_eq!(dst.len(), n);
    }
    Ok(out)
}

/// `sign(x) · max(|x| − tau, 0)` without argument checking.
#[inline]
pub fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

fn check_threshold(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::arg(format!(
            "threshold must be a finite nonnegative number, got {tau}"
        )));
    }
    Ok(())
}

/// Scalar soft-thresholding: the minimiser of `½(y − x)² + tau·|y|`.
pub fn soft_threshold_scalar(x: f64, tau: f64) -> Result<f64> {
    check_threshold(tau)?;
    Ok(shrink(x, tau))
}

/// Elementwise soft-thresholding of a tensor.
pub fn soft_threshold<T: Element>(t: &Tensor3<T>, tau: f64) -> Result<Tensor3<T>> {
    check_threshold(tau)?;
    Ok(t.map(|v| T::from_f64(shrink(v.to_f64(), tau))))
}

fn check_temporal<T: Element>(t: &Tensor3<T>) -> Result<()> {
    if t.frames() < 2 {
        return Err(Error::arg(format!(
            "temporal difference needs at least 2 frames, got {}",
            t.frames()
        )));
    }
    Ok(())
}

/// Circular forward temporal difference: `G[.,.,f] = T[.,.,f+1 mod t] − T[.,.,f]`.
pub fn temporal_gradient<T: Element>(t: &Tensor3<T>) -> Result<Tensor3<T>> {
    check_temporal(t)?;
    let frames = t.frames();
    let mut out = t.clone();
    for f in 0..frames {
        let next = (f + 1) % frames;
        let (a, b) = (t.frame(next), t.frame(f));
        for ((o, &x1), &x0) in out.frame_mut(f).iter_mut().zip(a).zip(b) {
            *o = T::from_f64(x1.to_f64() - x0.to_f64());
        }
    }
    Ok(out)
}

/// Adjoint of [`temporal_gradient`]: `Gᵀ[.,.,f] = G[.,.,f−1 mod t] − G[.,.,f]`.
pub fn temporal_gradient_adjoint<T: Element>(g: &Tensor3<T>) -> Result<Tensor3<T>> {
    check_temporal(g)?;
    let frames = g.frames();
    let mut out = g.clone();
    for f in 0..frames {
        let prev = (f + frames - 1) % frames;
        let (a, b) = (g.frame(prev), g.frame(f));
        for ((o, &x1), &x0) in out.frame_mut(f).iter_mut().zip(a).zip(b) {
            *o = T::from_f64(x1.to_f64() - x0.to_f64());
        }
    }
    Ok(out)
}

/// Per-pixel temporal median (mean of the two central values for even frame counts).
pub fn temporal_median<T: Element>(t: &Tensor3<T>) -> Image {
    let (h, w, n) = (t.height(), t.width(), t.frames());
    let mut tube = vec![0.0f64; n];
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            t.tube_into(i, j, &mut tube);
            tube.sort_by(|a, b| a.total_cmp(b));
            let m = if n % 2 == 1 {
                tube[n / 2]
            } else {
                0.5 * (tube[n / 2 - 1] + tube[n / 2])
            };
            data.push(m as f32);
        }
    }
    Image {
        height: h,
        width: w,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, t: usize) -> Tensor3<f64> {
        Tensor3::from_fn(h, w, t, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn unfold_mode3_shape() {
        let t = Tensor3::<f64>::zeros(2, 2, 2).unwrap();
        let m = unfold(&t, 3).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 4));
    }

    #[test]
    fn unfold_matches_index_oracle() {
        // Kolda–Bader: X_(1)[i, j + k*J], X_(2)[j, i + k*I], X_(3)[k, i + j*I]
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_tensor(&mut rng, 3, 4, 5);
        let (ii, jj, kk) = (3, 4, 5);
        let m1 = unfold(&t, 1).unwrap();
        let m2 = unfold(&t, 2).unwrap();
        let m3 = unfold(&t, 3).unwrap();
        for i in 0..ii {
            for j in 0..jj {
                for k in 0..kk {
                    let v = t.data()[(k * ii + i) * jj + j];
                    assert_eq!(m1.get(i, j + k * jj), v);
                    assert_eq!(m2.get(j, i + k * ii), v);
                    assert_eq!(m3.get(k, i + j * ii), v);
                }
            }
        }
    }

    #[test]
    fn fold_roundtrip_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_tensor(&mut rng, 3, 2, 4);
        for mode in 1..=3 {
            let back = fold(&unfold(&t, mode).unwrap(), mode, t.dims()).unwrap();
            assert_eq!(back, t);
        }
        let one = Tensor3::from_vec(1, 1, 1, vec![0.25f64]).unwrap();
        assert_eq!(fold(&unfold(&one, 2).unwrap(), 2, [1, 1, 1]).unwrap(), one);
    }

    #[test]
    fn bad_mode_and_shape_rejected() {
        let t = Tensor3::<f64>::zeros(2, 2, 2).unwrap();
        assert!(matches!(unfold(&t, 0), Err(Error::Argument(_))));
        assert!(matches!(unfold(&t, 4), Err(Error::Argument(_))));
        let m = Matrix::zeros(3, 3);
        assert!(matches!(fold(&m, 1, [2, 2, 2]), Err(Error::Argument(_))));
    }

    #[test]
    fn mode3_identity_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_tensor(&mut rng, 3, 3, 4);
        assert_eq!(mode3_product(&t, &Matrix::identity(4)).unwrap(), t);

        let s = 1.0 / 2.0f64; // 1/sqrt(4)
        let q = Matrix::from_vec(1, 4, vec![s; 4]).unwrap();
        let p = mode3_product(&t, &q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mean: f64 = (0..4).map(|k| t.get(i, j, k)).sum::<f64>() / 4.0;
                assert!((p.get(i, j, 0) - 2.0 * mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mode3_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = random_tensor(&mut rng, 3, 3, 4);
        // orthonormal rows via Gram-Schmidt on two random vectors
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while rows.len() < 2 {
            let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
        let q = Matrix::from_vec(2, 4, rows.concat()).unwrap();
        let p = mode3_product(&t, &q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for r in 0..2 {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += q.get(r, k) * t.get(i, j, k);
                    }
                    assert!((p.get(i, j, r) - acc).abs() < 1e-12);
                }
            }
        }
        assert!(mode3_product(&t, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        assert!((soft_threshold_scalar(0.5, 0.2).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(soft_threshold_scalar(-0.1, 0.2).unwrap(), 0.0);
        assert_eq!(soft_threshold_scalar(0.7, 0.0).unwrap(), 0.7);
        assert!(soft_threshold_scalar(1.0, -0.1).is_err());
        let t = Tensor3::<f32>::zeros(1, 1, 1).unwrap();
        assert!(soft_threshold(&t, -1.0).is_err());
    }

    #[test]
    fn temporal_gradient_examples() {
        let stat = Tensor3::<f64>::from_fn(2, 3, 4, |i, j, _| (i + j) as f64).unwrap();
        assert!(temporal_gradient(&stat)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let mut spike = Tensor3::<f64>::zeros(2, 2, 5).unwrap();
        spike.set(1, 0, 2, 3.0);
        let g = temporal_gradient(&spike).unwrap();
        let nz: Vec<f64> = g.data().iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nz.len(), 2);
        assert_eq!(g.get(1, 0, 1), 3.0);
        assert_eq!(g.get(1, 0, 2), -3.0);

        let single = Tensor3::<f64>::zeros(2, 2, 1).unwrap();
        assert!(temporal_gradient(&single).is_err());
        assert!(temporal_gradient_adjoint(&single).is_err());
    }

    #[test]
    fn temporal_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = random_tensor(&mut rng, 3, 4, 6);
            let y = random_tensor(&mut rng, 3, 4, 6);
            let lhs = temporal_gradient(&x).unwrap().dot(&y).unwrap();
            let rhs = x.dot(&temporal_gradient_adjoint(&y).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_normal_operator_is_dft_diagonal() {
        // eigenvalues of the circular Laplacian are 2 - 2cos(2πf/t)
        let t = 7;
        for f in 0..t {
            let theta = 2.0 * std::f64::consts::PI * f as f64 / t as f64;
            let x = Tensor3::<f64>::from_fn(1, 1, t, |_, _, k| (theta * k as f64).cos()).unwrap();
            let lx = temporal_gradient_adjoint(&temporal_gradient(&x).unwrap()).unwrap();
            let lambda = 2.0 - 2.0 * theta.cos();
            for k in 0..t {
                assert!((lx.get(0, 0, k) - lambda * x.get(0, 0, k)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn median_of_even_count() {
        let t = Tensor3::<f32>::from_vec(1, 1, 4, vec![0.4, 0.1, 0.9, 0.2]).unwrap();
        assert!((temporal_median(&t).get(0, 0) - 0.3).abs() < 1e-7);
    }

    #[test]
    fn construction_validates() {
        assert!(Tensor3::<f32>::zeros(0, 1, 1).is_err());
        assert!(Tensor3::<f32>::from_vec(1, 1, 2, vec![0.0]).is_err());
        assert!(Tensor3::<f32>::from_vec(1, 1, 1, vec![f32::NAN]).is_err());
    }
}
