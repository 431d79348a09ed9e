//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Runtime bounds are part of each criterion.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rlrtr::align::{update_tau, Affine};
use rlrtr::config::RunConfig;
use rlrtr::io::{read_frames, read_rlrt, write_frames, write_rlrt};
use rlrtr::linalg::{nuclear_norm, svt_matrix, svt_tnn, tnn};
use rlrtr::metrics::{
    gradient_isotropy, psnr, rain_support_f1, roughness, section_line, temporal_rank_ratio,
};
use rlrtr::nonlocal::{cluster_groups, gather, scatter_accumulate, PatchGroup};
use rlrtr::solver::{derain, DecompositionResult, SolverConfig, SolverState};
use rlrtr::synth::{generate, SynthConfig};
use rlrtr::tensor::{
    fold, soft_threshold, temporal_gradient, temporal_gradient_adjoint, temporal_median, unfold,
    Image, Matrix, Tensor3, VideoTensor,
};

/// `|R| >` this marks a rain pixel, for both the estimate and the truth.
const SUPPORT_THRESHOLD: f64 = 0.1;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    RunConfig::load(path).expect("shipped configuration parses")
}

fn median_video(v: &VideoTensor) -> VideoTensor {
    VideoTensor::from_frames(&vec![temporal_median(v); v.frames()]).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, t: usize) -> Tensor3<f64> {
    Tensor3::from_fn(h, w, t, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

// 1 -------------------------------------------------------------------------

/// Random candidates around `x`: perturbations at several scales.
fn perturbed(rng: &mut ChaCha8Rng, x: &[f64], i: usize) -> Vec<f64> {
    let scale = [1e-1, 1e-2, 1e-3, 1e-4][i % 4];
    x.iter()
        .map(|v| v + scale * rng.random_range(-1.0..1.0))
        .collect()
}

fn criterion_1() -> Outcome {
    let mut rng = rng(11);
    let mut worst = [f64::INFINITY; 3];
    for _ in 0..20 {
        let tau = rng.random_range(0.05..0.8);

        let v = random_tensor(&mut rng, 4, 5, 3);
        let x = soft_threshold(&v, tau).unwrap();
        let f =
            |x: &[f64]| 0.5 * sq_dist(x, v.data()) + tau * x.iter().map(|a| a.abs()).sum::<f64>();
        let fx = f(x.data());
        for i in 0..1000 {
            worst[0] = worst[0].min(f(&perturbed(&mut rng, x.data(), i)) - fx);
        }

        let m = Matrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let x = svt_matrix(&m, tau).unwrap();
        let f = |x: &Matrix| 0.5 * sq_dist(x.data(), m.data()) + tau * nuclear_norm(x).unwrap();
        let fx = f(&x);
        for i in 0..1000 {
            let c = Matrix::from_vec(6, 4, perturbed(&mut rng, x.data(), i)).unwrap();
            worst[1] = worst[1].min(f(&c) - fx);
        }

        let t = random_tensor(&mut rng, 4, 3, 5);
        let x = svt_tnn(&t, tau).unwrap();
        let f = |x: &Tensor3<f64>| 0.5 * sq_dist(x.data(), t.data()) + tau * tnn(x).unwrap();
        let fx = f(&x);
        for i in 0..1000 {
            let c = Tensor3::from_vec(4, 3, 5, perturbed(&mut rng, x.data(), i)).unwrap();
            worst[2] = worst[2].min(f(&c) - fx);
        }
    }
    let mut depth1 = 0.0f64;
    for _ in 0..20 {
        let t = random_tensor(&mut rng, 5, 4, 1);
        let tau = rng.random_range(0.05..0.8);
        let a = svt_tnn(&t, tau).unwrap();
        let m = Matrix::from_fn(5, 4, |i, j| t.get(i, j, 0));
        let b = svt_matrix(&m, tau).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                depth1 = depth1.max((a.get(i, j, 0) - b.get(i, j)).abs());
            }
        }
    }
    // ties are allowed: a candidate may coincide with the optimum to rounding
    let slack = -1e-12;
    Outcome {
        pass: worst.iter().all(|&w| w >= slack) && depth1 <= 1e-8,
        detail: format!(
            "min candidate gap soft {:.2e} svt {:.2e} tnn {:.2e}; depth-1 tnn vs matrix {:.1e}",
            worst[0], worst[1], worst[2], depth1
        ),
    }
}

// 2 -------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let mut rng = rng(12);
    let mut roundtrip = true;
    let (mut adj_gather, mut adj_grad) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (h, w, t) = (
            rng.random_range(6..12),
            rng.random_range(6..12),
            rng.random_range(2..7),
        );
        let x = random_tensor(&mut rng, h, w, t);
        for mode in 1..=3 {
            let back = fold(&unfold(&x, mode).unwrap(), mode, [h, w, t]).unwrap();
            roundtrip &= back
                .data()
                .iter()
                .zip(x.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        }

        let p = rng.random_range(2..5);
        let img = Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0)).unwrap();
        let groups = cluster_groups(&img, p, 4, 2, 3).unwrap();
        let ys: Vec<(PatchGroup, Tensor3<f64>)> = groups
            .iter()
            .map(|g| {
                (
                    g.clone(),
                    random_tensor(&mut rng, p * p, g.members.len(), t),
                )
            })
            .collect();
        let lhs: f64 = ys
            .iter()
            .map(|(g, y)| {
                gather(&x, g)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum();
        let (sum, _) = scatter_accumulate(&ys, [h, w, t]).unwrap();
        let rhs: f64 = x.data().iter().zip(sum.data()).map(|(a, b)| a * b).sum();
        adj_gather = adj_gather.max((lhs - rhs).abs());

        let y = random_tensor(&mut rng, h, w, t);
        let gx = temporal_gradient(&x).unwrap();
        let gty = temporal_gradient_adjoint(&y).unwrap();
        let lhs: f64 = gx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gty.data()).map(|(a, b)| a * b).sum();
        adj_grad = adj_grad.max((lhs - rhs).abs());
    }
    Outcome {
        pass: roundtrip && adj_gather <= 1e-10 && adj_grad <= 1e-10,
        detail: format!(
            "fold(unfold) bit-exact {roundtrip}; gather/scatter gap {adj_gather:.1e}; grad gap {adj_grad:.1e}"
        ),
    }
}

// 3 -------------------------------------------------------------------------

fn smooth_frame(map: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let bumps = [
        (48.0, 50.0, 42.0, 0.6),
        (82.0, 80.0, 40.0, 0.4),
        (52.0, 88.0, 34.0, -0.3),
        (88.0, 44.0, 30.0, 0.2),
    ];
    Image::from_fn(128, 128, |r, c| {
        let (x, y) = map(c as f64, r as f64);
        let mut v = 0.3;
        for &(cy, cx, radius, amp) in &bumps {
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            if d < radius {
                v += amp * 0.5 * (1.0 + (std::f64::consts::PI * d / radius).cos());
            }
        }
        v as f32
    })
    .unwrap()
}

fn criterion_3() -> Outcome {
    let deg = 0.5f64.to_radians();
    let cases = [
        Affine::translation(2.0, 0.0),
        Affine::translation(-1.5, 1.5),
        Affine::rotation_about(deg, 63.5, 63.5, 0.0, 0.0),
        Affine::rotation_about(-deg, 63.5, 63.5, 2.0, -2.0),
        Affine::rotation_about(deg, 63.5, 63.5, -1.2, 0.7),
    ];
    let reference = smooth_frame(|x, y| (x, y));
    let bg: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    let rain = vec![0.0; bg.len()];
    let mut errors = Vec::new();
    for truth in cases {
        let inv = truth.inverse().unwrap();
        let observed = smooth_frame(|x, y| inv.apply(x, y));
        let mut tau = Affine::IDENTITY;
        for _ in 0..5 {
            tau = update_tau(&observed, &bg, &rain, &tau).unwrap();
        }
        errors.push(tau.mean_endpoint_error(&truth, 128, 128));
    }
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: worst <= 1e-2,
        detail: format!("mean endpoint errors after 5 steps {errors:.4?} px (bound 1e-2)"),
    }
}

// 4 and 6 -------------------------------------------------------------------

struct Run {
    result: DecompositionResult,
    truth: rlrtr::synth::SynthTruth,
    elapsed: Duration,
}

fn run_fixture(synth: &SynthConfig, solver: &SolverConfig) -> Run {
    let truth = generate(synth).unwrap();
    let start = Instant::now();
    let result = derain(&truth.observed, solver).unwrap();
    Run {
        result,
        truth,
        elapsed: start.elapsed(),
    }
}

fn f1(run: &Run) -> f64 {
    rain_support_f1(&run.result.rain, &run.truth.rain, SUPPORT_THRESHOLD).unwrap()
}

fn bg_psnr(run: &Run) -> f64 {
    psnr(&run.result.background, &run.truth.clean, 1.0).unwrap()
}

fn criterion_4(run: &Run) -> Outcome {
    let median = psnr(&median_video(&run.truth.observed), &run.truth.clean, 1.0).unwrap();
    let p = bg_psnr(run);
    let f = f1(run);
    let rank = temporal_rank_ratio(&run.result.background).unwrap();
    let secs = run.elapsed.as_secs_f64();
    Outcome {
        pass: p >= median + 1.0 && f >= 0.9 && rank <= 1e-3 && secs < 60.0,
        detail: format!(
            "PSNR {p:.2} dB vs median {median:.2} dB (+1 dB required); F1 {f:.4} (>= 0.9); sigma2/sigma1 {rank:.2e} (<= 1e-3); {secs:.1} s (< 60 s)"
        ),
    }
}

fn monotone(history: &[f64]) -> Option<(usize, f64)> {
    history
        .windows(2)
        .enumerate()
        .find(|(_, w)| w[1] > w[0] + 1e-6 * w[0].abs())
        .map(|(i, w)| (i + 1, (w[1] - w[0]) / w[0].abs()))
}

fn criterion_5(runs: &[&Run]) -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let mut h = vec![run.result.initial_objective];
        h.extend(run.result.history.iter().map(|r| r.objective));
        if let Some((it, rel)) = monotone(&h) {
            bad.push(format!("run {i} iteration {it} rises by {rel:.1e}"));
        }
    }

    // every subproblem on a 16x16x8 instance
    let mut rng = rng(15);
    let base: Vec<f32> = (0..256)
        .map(|p| 0.3 + 0.3 * (((p / 16) as f32 * 0.4).sin() * ((p % 16) as f32 * 0.3).cos()))
        .collect();
    let o = VideoTensor::from_fn(16, 16, 8, |i, j, _| {
        let rain = if rng.random::<f64>() < 0.08 {
            0.35
        } else {
            0.0
        };
        base[i * 16 + j] + rain as f32 + rng.random_range(-0.01..0.01)
    })
    .unwrap();
    let cfg = SolverConfig {
        patch: 4,
        group: 6,
        stride: 2,
        search_radius: 4,
        recluster_every: 2,
        omega: 0.05,
        gamma: 0.2,
        mu: Some(0.05),
        ..Default::default()
    };
    let mut state = SolverState::new(&o, &cfg).unwrap();
    let mut last = state.objective().unwrap();
    let mut steps = 0;
    let mut check = |name: &str, value: f64, last: &mut f64, bad: &mut Vec<String>| {
        steps += 1;
        if value > *last + 1e-9 * last.abs() {
            bad.push(format!("{name} step rises {last} -> {value}"));
        }
        *last = value;
    };
    for it in 1..=4 {
        state.step_tau().unwrap();
        check("tau", state.objective().unwrap(), &mut last, &mut bad);
        state.step_rain().unwrap();
        check("rain", state.objective().unwrap(), &mut last, &mut bad);
        state.step_subspace().unwrap();
        check("subspace", state.objective().unwrap(), &mut last, &mut bad);
        state.step_lowrank().unwrap();
        check("low-rank", state.objective().unwrap(), &mut last, &mut bad);
        state.step_background().unwrap();
        check(
            "background",
            state.objective().unwrap(),
            &mut last,
            &mut bad,
        );
        if it % 2 == 0 {
            state.recluster().unwrap();
            check("recluster", state.objective().unwrap(), &mut last, &mut bad);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: bad.is_empty() && secs < 30.0,
        detail: format!(
            "{} fixture histories and {steps} single steps checked, {} violations{}; {secs:.1} s (< 30 s)",
            runs.len(),
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    }
}

fn criterion_6(jitter: &[(Run, Run)], standard: &[(&Run, Run)]) -> Outcome {
    let mut detail = Vec::new();
    let mut affine_ok = true;
    for (on, off) in jitter {
        let (a, b) = (bg_psnr(on), bg_psnr(off));
        affine_ok &= a > b;
        detail.push(format!("{a:.2}/{b:.2}"));
    }
    let mut subspace_ok = true;
    let mut f1s = Vec::new();
    for (full, ablated) in standard {
        let (a, b) = (f1(full), f1(ablated));
        subspace_ok &= a > b;
        f1s.push(format!("{a:.4}/{b:.4}"));
    }
    let secs: f64 = jitter
        .iter()
        .map(|(a, b)| a.elapsed + b.elapsed)
        .sum::<Duration>()
        .as_secs_f64()
        + standard
            .iter()
            .map(|(a, b)| a.elapsed + b.elapsed)
            .sum::<Duration>()
            .as_secs_f64();
    Outcome {
        pass: affine_ok && subspace_ok && secs < 300.0,
        detail: format!(
            "jittered PSNR affine on/off [{}] {}; standard F1 full/no-subspace [{}] {}; {secs:.0} s (< 300 s)",
            detail.join(", "),
            if affine_ok { "ok" } else { "not strictly ordered" },
            f1s.join(", "),
            if subspace_ok { "ok" } else { "not strictly ordered" },
        ),
    }
}

// 7 -------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let base = config("standard.toml");
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for seed in [1u64, 2] {
        let synth = SynthConfig {
            streak_angle_range: [0.0, 0.0],
            seed,
            ..base.synth.clone()
        };
        let run = run_fixture(&synth, &base.solver);
        let f = run.truth.observed.frames() / 2;
        let (_, div_b) = gradient_isotropy(&run.result.background.frame_image(f)).unwrap();
        let (_, div_o) = gradient_isotropy(&run.truth.observed.frame_image(f)).unwrap();
        ok &= div_b <= 0.2 * div_o;
        let mut rough = Vec::new();
        for row in [16, 32, 48] {
            let rb = roughness(&section_line(&run.result.background.frame_image(f), row).unwrap());
            let ro = roughness(&section_line(&run.truth.observed.frame_image(f), row).unwrap());
            ok &= rb < ro;
            rough.push(format!("{rb:.4}<{ro:.4}"));
        }
        detail.push(format!(
            "seed {seed}: JS {div_b:.4} vs 0.2x{div_o:.4}; roughness {}",
            rough.join(" ")
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: ok && secs < 30.0,
        detail: format!("{}; {secs:.1} s (< 30 s)", detail.join("; ")),
    }
}

// 8 -------------------------------------------------------------------------

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng(18);

    let mut rlrt_ok = true;
    for i in 0..20 {
        let (h, w, t) = (
            rng.random_range(1..20),
            rng.random_range(1..20),
            rng.random_range(1..6),
        );
        let v = VideoTensor::from_fn(h, w, t, |_, _, _| {
            f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff)
        })
        .unwrap();
        let path = dir.path().join(format!("t{i}.rlrt"));
        write_rlrt(&v, &path).unwrap();
        let back = read_rlrt(&path).unwrap();
        rlrt_ok &= back.dims() == v.dims()
            && back
                .data()
                .iter()
                .zip(v.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let mut png_ok = true;
    for (depth, channels) in [(8u8, 1usize), (16, 1), (16, 3)] {
        let chans: Vec<VideoTensor> = (0..channels)
            .map(|_| VideoTensor::from_fn(9, 13, 3, |_, _, _| rng.random_range(0.0..1.0)).unwrap())
            .collect();
        let first = dir.path().join(format!("png{depth}_{channels}_a"));
        let second = dir.path().join(format!("png{depth}_{channels}_b"));
        write_frames(&chans, &first, depth).unwrap();
        let seq = read_frames(&first).unwrap();
        write_frames(&seq.channels, &second, seq.bit_depth).unwrap();
        let third = dir.path().join(format!("png{depth}_{channels}_c"));
        write_frames(&read_frames(&second).unwrap().channels, &third, depth).unwrap();
        let (b, c) = (tree_bytes(&second), tree_bytes(&third));
        png_ok &= b == c && tree_bytes(&first) == b;
    }

    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "[synth]\nheight = 32\nwidth = 32\nframes = 6\njitter_max = 1.0\nnoise_sigma = 0.01\nseed = 9\n")
        .unwrap();
    let exe = env!("CARGO_BIN_EXE_rlrtr");
    let mut trees = Vec::new();
    for name in ["s1", "s2"] {
        let out = dir.path().join(name);
        let status = Command::new(exe)
            .arg("synth")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        trees.push(tree_bytes(&out));
    }
    let synth_ok = trees[0] == trees[1] && !trees[0].is_empty();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: rlrt_ok && png_ok && synth_ok && secs < 10.0,
        detail: format!(
            "RLRT bit-exact {rlrt_ok}; PNG double round-trip identical {png_ok}; synth runs identical {synth_ok} ({} files); {secs:.1} s (< 10 s)",
            trees[0].len()
        ),
    }
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn report(n: usize, name: &str, (outcome, secs): (Outcome, f64), failures: &mut Vec<usize>) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {n}. {name}: {} [{secs:.1} s]", outcome.detail);
    if !outcome.pass {
        failures.push(n);
    }
}

fn main() {
    // the harness is disabled; honour `cargo test -- --list` style probes
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failures = Vec::new();
    report(1, "proximal operators", timed(criterion_1), &mut failures);
    report(
        2,
        "adjoints and round trips",
        timed(criterion_2),
        &mut failures,
    );
    report(3, "affine recovery", timed(criterion_3), &mut failures);

    let standard = config("standard.toml");
    let jittered = config("jittered.toml");
    let six = Instant::now();
    let mut full_runs = Vec::new();
    let mut ablation = Vec::new();
    for seed in SEEDS {
        let synth = SynthConfig {
            seed,
            ..standard.synth.clone()
        };
        full_runs.push(run_fixture(&synth, &standard.solver));
        let no_sub = SolverConfig {
            enable_subspace: false,
            ..standard.solver.clone()
        };
        ablation.push(run_fixture(&synth, &no_sub));
    }
    let mut jitter_runs = Vec::new();
    for seed in SEEDS {
        let synth = SynthConfig {
            seed,
            ..jittered.synth.clone()
        };
        let on = run_fixture(&synth, &jittered.solver);
        let off = run_fixture(
            &synth,
            &SolverConfig {
                enable_affine: false,
                ..jittered.solver.clone()
            },
        );
        jitter_runs.push((on, off));
    }
    let six_secs = six.elapsed().as_secs_f64();

    let four = full_runs[0].elapsed.as_secs_f64();
    report(
        4,
        "exact-recovery regime",
        (criterion_4(&full_runs[0]), four),
        &mut failures,
    );
    let mut all: Vec<&Run> = full_runs.iter().chain(&ablation).collect();
    all.extend(jitter_runs.iter().flat_map(|(a, b)| [a, b]));
    report(
        5,
        "monotone descent",
        timed(|| criterion_5(&all)),
        &mut failures,
    );
    let pairs: Vec<(&Run, Run)> = full_runs.iter().zip(ablation).collect();
    report(
        6,
        "ablation ordering",
        (criterion_6(&jitter_runs, &pairs), six_secs),
        &mut failures,
    );
    report(7, "gradient isotropy", timed(criterion_7), &mut failures);
    report(8, "I/O exactness", timed(criterion_8), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 8 criteria passed");
    } else {
        println!(
            "acceptance: {} of 8 criteria failed: {failures:?}",
            failures.len()
        );
        std::process::exit(1);
    }
}
