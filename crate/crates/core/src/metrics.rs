//! Full-reference quality metrics and rain diagnostics.

use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::tensor::{unfold, Element, Image, Tensor3, VideoTensor};

pub const HIST_BINS: usize = 64;
pub const HIST_RANGE: f64 = 0.5;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR in dB; identical inputs give `f64::INFINITY`.
pub fn psnr<T: Element>(x: &Tensor3<T>, y: &Tensor3<T>, peak: f64) -> Result<f64> {
    x.require_same_shape(y, "psnr")?;
    if !(peak > 0.0) {
        return Err(Error::arg(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let sse: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2))
        .sum();
    let mse = sse / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering: output is (h-10)×(w-10).
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            tmp[r * ow + c] = k
                .iter()
                .zip(&row[c..c + SSIM_WINDOW])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k
                .iter()
                .enumerate()
                .map(|(i, a)| a * tmp[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5, dynamic range 1) over the valid region.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    if x.height() != y.height() || x.width() != y.width() {
        return Err(Error::arg(format!(
            "ssim shape mismatch: {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let (h, w) = (x.height(), x.width());
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(&xs, h, w, &k);
    let my = filter_valid(&ys, h, w, &k);
    let mxx = filter_valid(&prod(&xs, &xs), h, w, &k);
    let myy = filter_valid(&prod(&ys, &ys), h, w, &k);
    let mxy = filter_valid(&prod(&xs, &ys), h, w, &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientHistogramPair {
    pub bin_edges: Vec<f64>,
    pub h_counts: Vec<f64>,
    pub v_counts: Vec<f64>,
}

fn bin_of(g: f64) -> usize {
    let pos = ((g + HIST_RANGE) / (2.0 * HIST_RANGE) * HIST_BINS as f64).floor();
    pos.clamp(0.0, (HIST_BINS - 1) as f64) as usize
}

fn normalized(counts: Vec<u64>) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts
        .into_iter()
        .map(|c| c as f64 / total as f64)
        .collect()
}

/// Jensen–Shannon divergence in bits (so it lies in `[0, 1]`).
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        js += 0.5 * kl(a, m) + 0.5 * kl(b, m);
    }
    js.max(0.0)
}

/// Horizontal and vertical forward-difference histograms and their JS divergence.
pub fn gradient_isotropy(frame: &Image) -> Result<(GradientHistogramPair, f64)> {
    let (h, w) = (frame.height(), frame.width());
    if h < 2 || w < 2 {
        return Err(Error::arg(format!(
            "gradient_isotropy needs at least 2x2, got {h}x{w}"
        )));
    }
    let mut hc = vec![0u64; HIST_BINS];
    let mut vc = vec![0u64; HIST_BINS];
    for r in 0..h {
        for c in 0..w {
            let v = frame.get(r, c) as f64;
            if c + 1 < w {
                hc[bin_of(frame.get(r, c + 1) as f64 - v)] += 1;
            }
            if r + 1 < h {
                vc[bin_of(frame.get(r + 1, c) as f64 - v)] += 1;
            }
        }
    }
    let bin_edges = (0..=HIST_BINS)
        .map(|i| -HIST_RANGE + 2.0 * HIST_RANGE * i as f64 / HIST_BINS as f64)
        .collect();
    let pair = GradientHistogramPair {
        bin_edges,
        h_counts: normalized(hc),
        v_counts: normalized(vc),
    };
    let div = js_divergence(&pair.h_counts, &pair.v_counts);
    Ok((pair, div))
}

pub fn section_line(frame: &Image, row: usize) -> Result<Vec<f64>> {
    if row >= frame.height() {
        return Err(Error::arg(format!(
            "row {row} out of range for a frame of height {}",
            frame.height()
        )));
    }
    Ok(frame.row(row).iter().map(|&v| v as f64).collect())
}

/// Mean absolute second difference; 0 for profiles shorter than 3.
pub fn roughness(profile: &[f64]) -> f64 {
    if profile.len() < 3 {
        return 0.0;
    }
    let sum: f64 = profile
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .sum();
    sum / (profile.len() - 2) as f64
}

/// F1 score of the supports `{|R| > threshold}`; two empty supports score 1.
pub fn rain_support_f1<T: Element>(
    r_hat: &Tensor3<T>,
    r_true: &Tensor3<T>,
    threshold: f64,
) -> Result<f64> {
    r_hat.require_same_shape(r_true, "rain_support_f1")?;
    if !(threshold > 0.0) {
        return Err(Error::arg(format!(
            "support threshold must be positive, got {threshold}"
        )));
    }
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (a, b) in r_hat.data().iter().zip(r_true.data()) {
        match (a.to_f64().abs() > threshold, b.to_f64().abs() > threshold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

/// `σ₂/σ₁` of the temporal unfolding; 0 for a rank-0 or single-frame video.
pub fn temporal_rank_ratio<T: Element>(video: &Tensor3<T>) -> Result<f64> {
    if video.frames() < 2 {
        return Ok(0.0);
    }
    let s = singular_values(&unfold(video, 3)?)?;
    if s[0] == 0.0 {
        return Ok(0.0);
    }
    Ok(s[1] / s[0])
}

/// How much scene structure leaks into a rain layer: the mean over frames of the
/// Pearson correlation between `|R_f|` and the gradient magnitude of `B_f`.
pub fn background_correlation(rain: &VideoTensor, background: &VideoTensor) -> Result<f64> {
    rain.require_same_shape(background, "background_correlation")?;
    let (h, w) = (rain.height(), rain.width());
    let mut total = 0.0;
    for f in 0..rain.frames() {
        let b = background.frame_image(f);
        let mut grad = Vec::with_capacity(h * w);
        for r in 0..h as isize {
            for c in 0..w as isize {
                let gx = 0.5 * (b.get_clamped(r, c + 1) - b.get_clamped(r, c - 1)) as f64;
                let gy = 0.5 * (b.get_clamped(r + 1, c) - b.get_clamped(r - 1, c)) as f64;
                grad.push(gx.hypot(gy));
            }
        }
        let mag: Vec<f64> = rain.frame(f).iter().map(|v| v.abs() as f64).collect();
        total += pearson(&mag, &grad);
    }
    Ok(total / rain.frames() as f64)
}

/// Pearson correlation, defined as 0 when either input is constant.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
