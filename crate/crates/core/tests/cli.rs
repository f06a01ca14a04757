use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use lapfov::io::{decode_float_grid, HEATMAP_MAGIC};

fn lapfov(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lapfov"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = walk(dir).into_iter().map(|p| p.strip_prefix(dir).unwrap().display().to_string()).collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        }
        out.push(p);
    }
    out
}

const SHORT: &str = "name = \"short\"\nduration = 0.5\nperception = \"noisy\"\n[output]\nframe_every = 25\n";

#[test]
fn run_writes_trace_summary_and_frames_only_under_out() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "short.toml", SHORT);
    let o = lapfov(tmp.path(), &["run", "--config", "short.toml", "--out", "tr"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = listing(tmp.path());
    assert_eq!(
        files,
        [
            "short.toml",
            "tr",
            "tr/config.toml",
            "tr/frames",
            "tr/frames/frame_000000.ppm",
            "tr/frames/frame_000025.ppm",
            "tr/summary.toml",
            "tr/trace.csv"
        ]
    );
    let csv = fs::read_to_string(tmp.path().join("tr/trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.starts_with("t,ep_x,ep_y,e_d"));
    let summary = fs::read_to_string(tmp.path().join("tr/summary.toml")).unwrap();
    for key in ["k_theta", "percentile", "alpha", "mu", "lambda", "depth_interval"] {
        assert!(summary.contains(key), "summary echoes {key}");
    }
}

#[test]
fn same_seed_same_bytes_and_seed_override_changes_noise() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "short.toml", SHORT);
    let read = |d: &str| fs::read(tmp.path().join(d).join("trace.csv")).unwrap();
    for (out, seed) in [("a", None), ("b", None), ("c", Some("99"))] {
        let mut args = vec!["run", "--config", "short.toml", "--out", out];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert!(lapfov(tmp.path(), &args).status.success());
    }
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn config_errors_exit_1_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad_dt.toml", "dt = 0.0\n");
    write(tmp.path(), "unknown.toml", "speed = 3\n");
    for args in [
        &["run", "--config", "missing.toml", "--out", "o"][..],
        &["run", "--config", "bad_dt.toml", "--out", "o"],
        &["run", "--config", "unknown.toml", "--out", "o"],
        &["mrc-compare", "--config", "missing.toml", "--out", "o"],
        &["depth-eval", "--config", "bad_dt.toml", "--out", "o"],
        &["heatmap-build", "--points", "missing.txt", "--size", "32x24", "--out", "o"],
        &["heatmap-build", "--points", "missing.txt", "--size", "32", "--out", "o"],
        &["run", "--out", "o"],
        &["frobnicate"],
    ] {
        let o = lapfov(tmp.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!tmp.path().join("o").exists(), "{args:?} left outputs");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(!err.trim().is_empty());
    }
    let o = lapfov(tmp.path(), &["run", "--config", "missing.toml", "--out", "o"]);
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn invariant_violation_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "deep.toml",
        "duration = 1.0\n[rig]\ninsertion = 79.5\nlook_at = [0.0, 0.0, 200.0]\n[scene.tool]\ntip = [0.0, 0.0, 79.9]\nshaft_dir = [1.0, 0.0, 0.0]\nradius = 2.5\n",
    );
    let o = lapfov(tmp.path(), &["run", "--config", "deep.toml", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invariant"));
}

#[test]
fn heatmap_without_smoothing_equals_normalised_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let pts = [(3.2, 4.0), (3.4, 3.6), (10.0, 2.0), (31.0, 23.0), (40.0, 5.0), (-2.0, 1.0)];
    let text: String = pts.iter().map(|(x, y)| format!("{x} {y}\n")).collect();
    write(tmp.path(), "pts.txt", &text);
    let o = lapfov(
        tmp.path(),
        &["heatmap-build", "--points", "pts.txt", "--size", "32x24", "--sigma", "0", "--out", "h"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = decode_float_grid(HEATMAP_MAGIC, &fs::read(tmp.path().join("h/heatmap.hmap")).unwrap()).unwrap();
    let mut counts = vec![0.0; 32 * 24];
    for (x, y) in pts {
        let (xr, yr) = (f64::round(x), f64::round(y));
        if (0.0..32.0).contains(&xr) && (0.0..24.0).contains(&yr) {
            counts[yr as usize * 32 + xr as usize] += 1.0;
        }
    }
    let peak = counts.iter().cloned().fold(0.0, f64::max);
    for (i, c) in counts.iter().enumerate() {
        assert_eq!(grid.data()[i], c / peak, "cell {i}");
    }
    let pgm = fs::read(tmp.path().join("h/heatmap.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 24\n255\n"));
}

#[test]
fn depth_eval_and_mrc_compare_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "depth.toml",
        "bands = [[8.0, 12.0]]\nplacements_per_band = 1\ninit = \"truth\"\n[optimizer]\niterations = 3\n",
    );
    let o = lapfov(tmp.path(), &["depth-eval", "--config", "depth.toml", "--out", "d"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[8, 12]"));
    assert!(tmp.path().join("d/report.toml").exists() && tmp.path().join("d/report.txt").exists());

    write(
        tmp.path(),
        "spiral.toml",
        "duration = 2.0\n[trajectory]\nkind = \"spiral\"\npitch_mm = 5.0\nrate_hz = 0.2\n",
    );
    let o = lapfov(tmp.path(), &["mrc-compare", "--config", "spiral.toml", "--out", "m"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cmp = fs::read_to_string(tmp.path().join("m/compare.toml")).unwrap();
    assert!(cmp.contains("peak_off_deg") && cmp.contains("max_excess_on_over_off_deg"));
    for f in ["trace_off.csv", "trace_on.csv", "summary_off.toml", "summary_on.toml"] {
        assert!(tmp.path().join("m").join(f).exists(), "{f}");
    }
}

#[test]
fn serve_accepts_a_v1_client() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "s.toml", "name = \"live\"\n");
    let mut child = Command::new(env!("CARGO_BIN_EXE_lapfov"))
        .current_dir(tmp.path())
        .args(["serve", "--config", "s.toml", "--addr", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().rsplit(' ').next().unwrap().to_string();
    assert!(url.starts_with("ws://"), "{line}");
    let (mut ws, _) = tungstenite::connect(url.as_str()).unwrap();
    let hello = ws.read().unwrap().into_text().unwrap();
    assert!(hello.contains("\"version\":\"v1\""));
    let state = loop {
        let m = ws.read().unwrap().into_text().unwrap();
        if m.contains("\"type\":\"state\"") {
            break m;
        }
    };
    assert!(state.contains("\"settings\""));
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(listing(tmp.path()), ["s.toml"]);
}
