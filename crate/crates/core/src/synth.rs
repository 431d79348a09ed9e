//! Synthetic rainy videos with exact ground truth.
//!
//! The generator realises `observed = clip(warp(clean + rain, jitter) + noise)`
//! with a static background, anti-aliased rain streaks, bottom-quarter splash
//! speckle and optional per-frame affine jitter. All randomness comes from
//! ChaCha8 streams derived from the configured seed, so a configuration maps
//! to bit-identical tensors on every platform.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::{warp_affine, Affine};
use crate::error::{Error, Result};
use crate::tensor::{Image, VideoTensor};

const CHECKER_DARK: f32 = 0.2;
const CHECKER_LIGHT: f32 = 0.7;

// RNG stream ids; one per independent random component.
const STREAM_RAIN: u64 = 1;
const STREAM_JITTER: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundKind {
    Checkerboard,
    SmoothGradient,
    NaturalImageFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: BackgroundKind,
    /// Side of a checkerboard cell in pixels.
    pub checker_cell: usize,
    /// PNG used when `background = "natural-image-file"`.
    pub background_path: Option<PathBuf>,
    /// Fraction of each frame's pixels covered by streaks.
    pub streak_density: f64,
    /// Streak angle interval in degrees from vertical.
    pub streak_angle_range: [f64; 2],
    pub streak_length_range: [f64; 2],
    pub streak_width: f64,
    pub streak_intensity_range: [f64; 2],
    /// Fraction of the bottom-quarter pixels hit by splash speckle.
    pub splash_density: f64,
    /// Maximum translation per axis in pixels; rotation is scaled so that the
    /// frame corners move by at most half this amount.
    pub jitter_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 24,
            background: BackgroundKind::Checkerboard,
            checker_cell: 8,
            background_path: None,
            streak_density: 0.05,
            streak_angle_range: [-10.0, 10.0],
            streak_length_range: [6.0, 14.0],
            streak_width: 1.0,
            streak_intensity_range: [0.2, 0.4],
            splash_density: 0.0,
            jitter_max: 0.0,
            noise_sigma: 0.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("synth.{key}: {why}")));
        if self.height == 0 || self.width == 0 {
            return bad("height/width", "must be positive");
        }
        if self.frames < 2 {
            return bad("frames", "must be at least 2");
        }
        if self.checker_cell == 0 {
            return bad("checker_cell", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.streak_density) {
            return bad("streak_density", "must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.splash_density) {
            return bad("splash_density", "must be in [0, 1]");
        }
        let [lo, hi] = self.streak_intensity_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("streak_intensity_range", "must satisfy 0 < lo <= hi <= 1");
        }
        let [lo, hi] = self.streak_length_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("streak_length_range", "must satisfy 0 < lo <= hi");
        }
        let [lo, hi] = self.streak_angle_range;
        if !(lo <= hi && lo >= -89.0 && hi <= 89.0) {
            return bad("streak_angle_range", "must satisfy -89 <= lo <= hi <= 89");
        }
        if !(self.streak_width > 0.0) {
            return bad("streak_width", "must be positive");
        }
        if !(self.jitter_max >= 0.0 && self.jitter_max.is_finite()) {
            return bad("jitter_max", "must be nonnegative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be nonnegative");
        }
        if self.background == BackgroundKind::NaturalImageFile && self.background_path.is_none() {
            return bad(
                "background_path",
                "required for natural-image-file backgrounds",
            );
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Ground truth and observation of one synthetic sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub clean: VideoTensor,
    pub rain: VideoTensor,
    /// Per-frame transform applied to `clean + rain`; aligning frame `f`
    /// requires `jitter[f].inverse()`.
    pub jitter: Vec<Affine>,
    pub observed: VideoTensor,
}

fn background_image(cfg: &SynthConfig) -> Result<Image> {
    let (h, w) = (cfg.height, cfg.width);
    match cfg.background {
        BackgroundKind::Checkerboard => Image::from_fn(h, w, |r, c| {
            if (r / cfg.checker_cell + c / cfg.checker_cell).is_multiple_of(2) {
                CHECKER_DARK
            } else {
                CHECKER_LIGHT
            }
        }),
        BackgroundKind::SmoothGradient => Image::from_fn(h, w, |_, c| {
            if w == 1 {
                0.0
            } else {
                (c as f64 / (w - 1) as f64) as f32
            }
        }),
        BackgroundKind::NaturalImageFile => {
            let path = cfg
                .background_path
                .as_ref()
                .ok_or_else(|| Error::Config("synth.background_path: missing".into()))?;
            let img = crate::io::read_luminance_png(path)?;
            if img.height() < h || img.width() < w {
                return Err(Error::format(
                    path,
                    format!(
                        "background image is {}x{}, smaller than the configured {h}x{w}",
                        img.height(),
                        img.width()
                    ),
                ));
            }
            Image::from_fn(h, w, |r, c| img.get(r, c))
        }
    }
}

/// Static background: the same image in every frame.
pub fn make_background(cfg: &SynthConfig) -> Result<VideoTensor> {
    cfg.validate()?;
    let img = background_image(cfg)?;
    VideoTensor::from_frames(&vec![img; cfg.frames])
}

/// Distance from `(px, py)` to the segment `a`–`b`.
fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Renders one coverage-weighted streak into `layer` with `max` compositing.
/// Returns the number of pixels that went from zero to nonzero.
fn draw_streak(
    layer: &mut [f32],
    h: usize,
    w: usize,
    center: (f64, f64),
    angle_deg: f64,
    length: f64,
    width: f64,
    intensity: f64,
) -> usize {
    let theta = angle_deg.to_radians();
    // direction measured from vertical
    let (ux, uy) = (theta.sin(), theta.cos());
    let half = 0.5 * length;
    let (ax, ay) = (center.0 - ux * half, center.1 - uy * half);
    let (bx, by) = (center.0 + ux * half, center.1 + uy * half);
    let reach = 0.5 * width + 0.5;
    let x_lo = (ax.min(bx) - reach).floor().max(0.0) as usize;
    let x_hi = ((ax.max(bx) + reach).ceil() as isize).clamp(0, w as isize - 1) as usize;
    let y_lo = (ay.min(by) - reach).floor().max(0.0) as usize;
    let y_hi = ((ay.max(by) + reach).ceil() as isize).clamp(0, h as isize - 1) as usize;
    let mut added = 0;
    for r in y_lo..=y_hi {
        for c in x_lo..=x_hi {
            let dist = segment_distance(c as f64, r as f64, ax, ay, bx, by);
            let coverage = (reach - dist).clamp(0.0, 1.0);
            if coverage <= 0.0 {
                continue;
            }
            let v = (intensity * coverage) as f32;
            let cell = &mut layer[r * w + c];
            if *cell == 0.0 && v > 0.0 {
                added += 1;
            }
            if v > *cell {
                *cell = v;
            }
        }
    }
    added
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Streak layer of one frame: streaks are added until the support fraction
/// reaches `streak_density`.
fn streak_frame(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let mut layer = vec![0.0f32; h * w];
    let target = (cfg.streak_density * (h * w) as f64).round() as usize;
    let mut support = 0usize;
    let mut attempts = 0usize;
    while support < target && attempts < 100 * (target + 1) {
        attempts += 1;
        let center = (
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
        );
        let angle = uniform(rng, cfg.streak_angle_range);
        let length = uniform(rng, cfg.streak_length_range);
        let intensity = uniform(rng, cfg.streak_intensity_range);
        support += draw_streak(
            &mut layer,
            h,
            w,
            center,
            angle,
            length,
            cfg.streak_width,
            intensity,
        );
    }
    layer
}

/// Splash speckle restricted to the bottom quarter of the frame.
fn splash_frame(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let mut layer = vec![0.0f32; h * w];
    let top = h - h / 4;
    for r in top..h {
        for c in 0..w {
            let hit = rng.random_bool(cfg.splash_density);
            let v = uniform(rng, cfg.streak_intensity_range) as f32;
            if hit {
                layer[r * w + c] = v;
            }
        }
    }
    layer
}

/// Rain layer: per-frame independent streaks plus splash, composited by max.
pub fn make_rain(cfg: &SynthConfig) -> Result<VideoTensor> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_RAIN);
    let mut data = Vec::with_capacity(cfg.height * cfg.width * cfg.frames);
    for _ in 0..cfg.frames {
        let streaks = streak_frame(cfg, &mut rng);
        let splash = splash_frame(cfg, &mut rng);
        data.extend(streaks.iter().zip(&splash).map(|(a, b)| a.max(*b)));
    }
    VideoTensor::from_vec(cfg.height, cfg.width, cfg.frames, data)
}

/// Per-frame jitter transforms (identity when `jitter_max == 0`).
pub fn make_jitter(cfg: &SynthConfig) -> Result<Vec<Affine>> {
    cfg.validate()?;
    if cfg.jitter_max == 0.0 {
        return Ok(vec![Affine::IDENTITY; cfg.frames]);
    }
    let mut rng = cfg.rng(STREAM_JITTER);
    let (cx, cy) = (
        (cfg.width as f64 - 1.0) / 2.0,
        (cfg.height as f64 - 1.0) / 2.0,
    );
    let radius = (cx * cx + cy * cy).sqrt().max(1.0);
    let max_theta = 0.5 * cfg.jitter_max / radius;
    let j = cfg.jitter_max;
    let mut draws: Vec<[f64; 3]> = (0..cfg.frames)
        .map(|_| {
            [
                rng.random_range(-j..=j),
                rng.random_range(-j..=j),
                rng.random_range(-max_theta..=max_theta),
            ]
        })
        .collect();
    // The clean frame is the mean pose: centre every component, then shrink
    // it back inside its bound if centring pushed a draw outside.
    for (c, bound) in [j, j, max_theta].into_iter().enumerate() {
        let mean = draws.iter().map(|d| d[c]).sum::<f64>() / cfg.frames as f64;
        let mut peak = 0.0f64;
        for d in draws.iter_mut() {
            d[c] -= mean;
            peak = peak.max(d[c].abs());
        }
        if peak > bound {
            for d in draws.iter_mut() {
                d[c] *= bound / peak;
            }
        }
    }
    Ok(draws
        .into_iter()
        .map(|[tx, ty, theta]| Affine::rotation_about(theta, cx, cy, tx, ty))
        .collect())
}

/// `observed = clip(warp(clean + rain, jitter) + noise, 0, 1)`; truth layers are stored unclipped.
pub fn compose(
    clean: &VideoTensor,
    rain: &VideoTensor,
    jitter: &[Affine],
    noise_sigma: f64,
    seed: u64,
) -> Result<SynthTruth> {
    clean.require_same_shape(rain, "compose")?;
    if jitter.len() != clean.frames() {
        return Err(Error::arg(format!(
            "compose: {} jitter transforms for {} frames",
            jitter.len(),
            clean.frames()
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::arg("compose: noise sigma must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_NOISE);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::arg(format!("compose: {e}")))?;

    let layered = clean.add(rain)?;
    let mut observed = layered.clone();
    for (f, params) in jitter.iter().enumerate() {
        let warped = warp_affine(&layered.frame_image(f), params)?;
        let dst = observed.frame_mut(f);
        for (o, &v) in dst.iter_mut().zip(warped.data()) {
            let n = if noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            *o = ((v as f64 + n).clamp(0.0, 1.0)) as f32;
        }
    }
    Ok(SynthTruth {
        clean: clean.clone(),
        rain: rain.clone(),
        jitter: jitter.to_vec(),
        observed,
    })
}

/// Full pipeline: background, rain, jitter and composition.
pub fn generate(cfg: &SynthConfig) -> Result<SynthTruth> {
    let clean = make_background(cfg)?;
    let rain = make_rain(cfg)?;
    let jitter = make_jitter(cfg)?;
    compose(&clean, &rain, &jitter, cfg.noise_sigma, cfg.seed)
}
