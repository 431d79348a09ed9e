use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rlrtr::config::RunConfig;
use rlrtr::error::{Error, Result};
use rlrtr::io::{read_video, write_frames, write_rlrt, FrameSequence};
use rlrtr::metrics::{gradient_isotropy, psnr, rain_support_f1, ssim};
use rlrtr::solver::{derain_channels, DecompositionResult};
use rlrtr::synth::generate;
use rlrtr::tensor::VideoTensor;

/// Exit code when the solver stops at `outer_max` without converging.
const EXIT_MAX_ITERATIONS: u8 = 2;
/// Exit code for command-line syntax errors.
const EXIT_USAGE: u8 = 64;

fn exit_code(err: &Error) -> u8 {
    match err.class() {
        "argument" => 3,
        "numeric" => 4,
        "io" => 5,
        "format" => 6,
        "config" => 7,
        _ => 1,
    }
}

#[derive(Parser)]
#[command(
    name = "rlrtr",
    version,
    about = "Rain removal for static-camera video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rainy sequence with ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a frame sequence into background and rain.
    Derain {
        /// PNG frame directory or `.rlrt` file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_bg: PathBuf,
        #[arg(long)]
        out_rain: PathBuf,
        #[arg(long)]
        dump_history: Option<PathBuf>,
        #[arg(long)]
        no_affine: bool,
        #[arg(long)]
        no_subspace: bool,
    },
    /// Compare a prediction with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, requires = "rain_gt")]
        rain_pred: Option<PathBuf>,
        #[arg(long, requires = "rain_pred")]
        rain_gt: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        support_threshold: f64,
        /// Print `frame,psnr,ssim` rows instead of text.
        #[arg(long)]
        csv: bool,
    },
    /// Horizontal/vertical gradient histograms of one frame.
    GradHist {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn is_rlrt(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("rlrt"))
}

fn write_layer(channels: &[VideoTensor], path: &Path, bit_depth: u8) -> Result<()> {
    if is_rlrt(path) {
        match channels {
            [single] => write_rlrt(single, path),
            _ => Err(Error::Argument(format!(
                "{}: .rlrt output holds one channel, got {}",
                path.display(),
                channels.len()
            ))),
        }
    } else {
        write_frames(channels, path, bit_depth)
    }
}

fn cmd_synth(config: Option<&Path>, out: &Path) -> Result<u8> {
    let cfg = load_config(config)?.synth;
    let truth = generate(&cfg)?;
    write_frames(
        std::slice::from_ref(&truth.observed),
        out.join("observed"),
        16,
    )?;
    write_frames(std::slice::from_ref(&truth.clean), out.join("clean"), 16)?;
    write_frames(std::slice::from_ref(&truth.rain), out.join("rain"), 16)?;
    let mut text = String::from("# frame a b tx c d ty (source = A·(x, y) + t)\n");
    for (f, j) in truth.jitter.iter().enumerate() {
        let [a, b, tx, c, d, ty] = j.to_array();
        writeln!(text, "{f} {a:?} {b:?} {tx:?} {c:?} {d:?} {ty:?}").unwrap();
    }
    write_text(&out.join("jitter.txt"), &text)?;
    Ok(0)
}

fn history_csv(results: &[DecompositionResult]) -> String {
    let mut text = String::from(
        "channel,iteration,objective,relative_change,rain_sparsity,admm_iterations,cg_iterations\n",
    );
    for (c, res) in results.iter().enumerate() {
        writeln!(text, "{c},0,{:?},,,,", res.initial_objective).unwrap();
        for (i, h) in res.history.iter().enumerate() {
            writeln!(
                text,
                "{c},{},{:?},{:?},{:?},{},{}",
                i + 1,
                h.objective,
                h.relative_change,
                h.rain_sparsity,
                h.admm_iterations,
                h.cg_iterations
            )
            .unwrap();
        }
    }
    text
}

#[allow(clippy::too_many_arguments)]
fn cmd_derain(
    input: &Path,
    config: Option<&Path>,
    out_bg: &Path,
    out_rain: &Path,
    dump_history: Option<&Path>,
    no_affine: bool,
    no_subspace: bool,
) -> Result<u8> {
    let mut cfg = load_config(config)?.solver;
    cfg.enable_affine &= !no_affine;
    cfg.enable_subspace &= !no_subspace;
    let seq = read_video(input)?;
    let results = derain_channels(&seq.channels, &cfg)?;
    let bg: Vec<VideoTensor> = results.iter().map(|r| r.background.clone()).collect();
    let rain: Vec<VideoTensor> = results.iter().map(|r| r.rain.clone()).collect();
    write_layer(&bg, out_bg, seq.bit_depth)?;
    write_layer(&rain, out_rain, seq.bit_depth)?;
    if let Some(path) = dump_history {
        write_text(path, &history_csv(&results))?;
    }
    let converged = results.iter().all(|r| r.converged);
    Ok(if converged { 0 } else { EXIT_MAX_ITERATIONS })
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn require_same_layout(a: &FrameSequence, b: &FrameSequence, what: &str) -> Result<()> {
    if a.channels.len() != b.channels.len() {
        return Err(Error::Argument(format!(
            "{what}: {} channels vs {}",
            a.channels.len(),
            b.channels.len()
        )));
    }
    Ok(())
}

fn cmd_eval(
    pred: &Path,
    gt: &Path,
    rain: Option<(&Path, &Path)>,
    threshold: f64,
    csv: bool,
) -> Result<u8> {
    let p = read_video(pred)?;
    let g = read_video(gt)?;
    require_same_layout(&p, &g, "eval")?;
    let mut channel_psnr = Vec::new();
    for (a, b) in p.channels.iter().zip(&g.channels) {
        channel_psnr.push(psnr(a, b, 1.0)?);
    }
    let frames = p.frames();
    let mut rows = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut s = 0.0;
        let mut sse = 0.0;
        let mut n = 0usize;
        for (a, b) in p.channels.iter().zip(&g.channels) {
            s += ssim(&a.frame_image(f), &b.frame_image(f))?;
            for (x, y) in a.frame(f).iter().zip(b.frame(f)) {
                sse += (*x as f64 - *y as f64).powi(2);
            }
            n += a.frame(f).len();
        }
        let mse = sse / n as f64;
        let fp = if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        };
        rows.push((fp, s / p.channels.len() as f64));
    }
    let mean_psnr = channel_psnr.iter().sum::<f64>() / channel_psnr.len() as f64;
    let mean_ssim = rows.iter().map(|r| r.1).sum::<f64>() / frames as f64;
    let f1 = match rain {
        Some((rp, rg)) => {
            let rp = read_video(rp)?;
            let rg = read_video(rg)?;
            require_same_layout(&rp, &rg, "eval rain")?;
            Some(rain_support_f1(
                &rp.luminance(),
                &rg.luminance(),
                threshold,
            )?)
        }
        None => None,
    };

    let mut out = String::new();
    if csv {
        out.push_str("frame,psnr,ssim\n");
        for (f, (fp, s)) in rows.iter().enumerate() {
            writeln!(out, "{f},{},{s:.6}", fmt_db(*fp)).unwrap();
        }
        writeln!(out, "mean,{},{mean_ssim:.6}", fmt_db(mean_psnr)).unwrap();
        if let Some(f1) = f1 {
            writeln!(out, "# rain_support_f1,{f1:.6}").unwrap();
        }
    } else {
        for (c, v) in channel_psnr.iter().enumerate() {
            writeln!(out, "psnr channel {c}: {} dB", fmt_db(*v)).unwrap();
        }
        writeln!(out, "psnr mean: {} dB", fmt_db(mean_psnr)).unwrap();
        for (f, (_, s)) in rows.iter().enumerate() {
            writeln!(out, "ssim frame {f}: {s:.6}").unwrap();
        }
        writeln!(out, "ssim mean: {mean_ssim:.6}").unwrap();
        if let Some(f1) = f1 {
            writeln!(out, "rain support f1 (threshold {threshold}): {f1:.6}").unwrap();
        }
    }
    print!("{out}");
    Ok(0)
}

fn cmd_grad_hist(input: &Path, frame: usize, out: &Path) -> Result<u8> {
    let seq = read_video(input)?;
    if frame >= seq.frames() {
        return Err(Error::Argument(format!(
            "frame {frame} out of range, the sequence has {} frames",
            seq.frames()
        )));
    }
    let (hist, div) = gradient_isotropy(&seq.luminance().frame_image(frame))?;
    let mut text = String::from("bin_edges,h_count,v_count\n");
    for (i, (h, v)) in hist.h_counts.iter().zip(&hist.v_counts).enumerate() {
        writeln!(text, "{:?},{h:?},{v:?}", hist.bin_edges[i]).unwrap();
    }
    writeln!(text, "{:?},,", hist.bin_edges[hist.h_counts.len()]).unwrap();
    writeln!(text, "divergence,{div:?}").unwrap();
    write_text(out, &text)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Synth { config, out } => cmd_synth(config.as_deref(), &out),
        Command::Derain {
            input,
            config,
            out_bg,
            out_rain,
            dump_history,
            no_affine,
            no_subspace,
        } => cmd_derain(
            &input,
            config.as_deref(),
            &out_bg,
            &out_rain,
            dump_history.as_deref(),
            no_affine,
            no_subspace,
        ),
        Command::Eval {
            pred,
            gt,
            rain_pred,
            rain_gt,
            support_threshold,
            csv,
        } => {
            let rain = rain_pred.as_deref().zip(rain_gt.as_deref());
            cmd_eval(&pred, &gt, rain, support_threshold, csv)
        }
        Command::GradHist { input, frame, out } => cmd_grad_hist(&input, frame, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {detail}", e.class());
            ExitCode::from(exit_code(&e))
        }
    }
}
