use std::path::Path;
use std::process::{Command, Output};

fn rlrtr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlrtr"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "[solver]\npatch = 4\ngroup = 6\nstride = 4\nsearch_radius = 4\nomega = 0.01\ngamma = 0.3\nouter_max = 4\n\
[synth]\nheight = 24\nwidth = 24\nframes = 6\nchecker_cell = 6\nstreak_density = 0.05\nseed = 3\n";

fn synth_fixture(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = rlrtr(&["synth", "--config", p(&cfg), "--out", p(&dir.join("data"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    cfg
}

#[test]
fn synth_writes_layers_and_jitter() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    let data = dir.path().join("data");
    for layer in ["observed", "clean", "rain"] {
        assert_eq!(std::fs::read_dir(data.join(layer)).unwrap().count(), 6);
    }
    let jitter = std::fs::read_to_string(data.join("jitter.txt")).unwrap();
    assert!(jitter.starts_with("# frame"));
    assert_eq!(jitter.lines().count(), 7);
    assert!(jitter
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("0 1.0 0.0 0.0 0.0 1.0 0.0"));
}

#[test]
fn eval_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    let clean = dir.path().join("data/clean");
    let out = rlrtr(&["eval", "--pred", p(&clean), "--gt", p(&clean)]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("psnr mean: inf dB"), "{text}");
    assert!(text.contains("ssim mean: 1.000000"), "{text}");

    let rain = dir.path().join("data/rain");
    let out = rlrtr(&[
        "eval",
        "--pred",
        p(&clean),
        "--gt",
        p(&clean),
        "--rain-pred",
        p(&rain),
        "--rain-gt",
        p(&rain),
        "--csv",
    ]);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "frame,psnr,ssim");
    assert_eq!(lines[1], "0,inf,1.000000");
    assert_eq!(lines[7], "mean,inf,1.000000");
    assert_eq!(lines[8], "# rain_support_f1,1.000000");
}

#[test]
fn derain_writes_outputs_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_fixture(dir.path());
    let (bg, rain, hist) = (
        dir.path().join("bg.rlrt"),
        dir.path().join("rain"),
        dir.path().join("h.csv"),
    );
    let observed = dir.path().join("data/observed");
    for extra in [None, Some("--no-subspace"), Some("--no-affine")] {
        let mut args = vec![
            "derain",
            "--in",
            p(&observed),
            "--config",
            p(&cfg),
            "--out-bg",
            p(&bg),
            "--out-rain",
            p(&rain),
            "--dump-history",
            p(&hist),
        ];
        args.extend(extra);
        let out = rlrtr(&args);
        let code = out.status.code().unwrap();
        assert!(code == 0 || code == 2, "exit {code}: {}", stderr(&out));
        let csv = std::fs::read_to_string(&hist).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "channel,iteration,objective,relative_change,rain_sparsity,admm_iterations,cg_iterations"
        );
        let objectives: Vec<f64> = lines
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        assert!(objectives.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6)));
        assert_eq!(code == 2, objectives.len() == 5);
    }
    assert_eq!(std::fs::read_dir(&rain).unwrap().count(), 6);

    let out = rlrtr(&[
        "eval",
        "--pred",
        p(&bg),
        "--gt",
        p(&dir.path().join("data/clean")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn grad_hist_reports_bins_and_divergence() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    let csv = dir.path().join("hist.csv");
    let out = rlrtr(&[
        "grad-hist",
        "--in",
        p(&dir.path().join("data/observed")),
        "--frame",
        "2",
        "--out",
        p(&csv),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "bin_edges,h_count,v_count");
    assert_eq!(lines.len(), 1 + 64 + 1 + 1);
    assert_eq!(lines[65], "0.5,,");
    let div: f64 = lines[66]
        .strip_prefix("divergence,")
        .unwrap()
        .parse()
        .unwrap();
    assert!(div > 0.0);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    let observed = dir.path().join("data/observed");
    let out_bg = dir.path().join("b");
    let out_rain = dir.path().join("r");

    let out = rlrtr(&["derain", "--in", p(&observed)]);
    assert_eq!(out.status.code(), Some(64));
    assert!(stderr(&out).starts_with("error: usage:"));

    let out = rlrtr(&[
        "grad-hist",
        "--in",
        p(&observed),
        "--frame",
        "99",
        "--out",
        p(&dir.path().join("h")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("error: argument:"));

    let missing = dir.path().join("nope");
    let out = rlrtr(&[
        "derain",
        "--in",
        p(&missing),
        "--out-bg",
        p(&out_bg),
        "--out-rain",
        p(&out_rain),
    ]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));

    let bad = dir.path().join("bad.rlrt");
    std::fs::write(&bad, [0u8; 32]).unwrap();
    let out = rlrtr(&[
        "derain",
        "--in",
        p(&bad),
        "--out-bg",
        p(&out_bg),
        "--out-rain",
        p(&out_rain),
    ]);
    assert_eq!(out.status.code(), Some(6), "{}", stderr(&out));

    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[solver]\nomegaa = 1\n").unwrap();
    let out = rlrtr(&[
        "derain",
        "--in",
        p(&observed),
        "--config",
        p(&bad_cfg),
        "--out-bg",
        p(&out_bg),
        "--out-rain",
        p(&out_rain),
    ]);
    assert_eq!(out.status.code(), Some(7));
    assert!(
        stderr(&out).contains("solver.omegaa: unknown key"),
        "{}",
        stderr(&out)
    );
}
