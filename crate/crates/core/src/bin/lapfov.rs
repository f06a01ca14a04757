use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use lapfov::io::{self, HEATMAP_MAGIC};
use lapfov::scenario::{
    depth_eval, DepthEvalConfig, MrcMode, RunTrace, ScenarioConfig, ScenarioError, Simulation, Summary,
};
use lapfov::service::{serve, ServeOptions, ServiceError};
use lapfov::viewgen::build_heatmap;

/// Automated laparoscope field-of-view control in a desk-scale simulator.
///
/// Scenario files are TOML. Top-level keys: name, seed, duration (s), dt (s),
/// perception (oracle | rendered | noisy | optimized), mrc (off | on),
/// hold_target. Tables: [camera] fx fy cx cy width height; [rig] look_at
/// insertion scope_length rcm_offset roll_deg; [scene] plane tool trocar seed;
/// [trajectory] kind = static | step | spiral | waypoints; [gains] ks kr
/// k_theta k_d decouple_rcm; [limits] max_linear max_angular; [viewgen] w1 w2
/// percentile depth_interval; [heatmap] file points_file points seed sigma;
/// [noise] pixel_sigma depth_sigma; [optimized] estimate_every probe_baseline
/// optimizer loss; [output] frame_every. Every key is optional.
#[derive(Debug, Parser)]
#[command(name = "lapfov", version, verbatim_doc_comment)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop scenario; writes trace.csv, summary.toml, config.toml and optional frames.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep the depth optimizer over tool heights; writes report.toml and report.txt.
    DepthEval {
        /// Depth sweep file (surface_depth, bands, placements_per_band, baseline, tool_radius, seed, init, optimizer, loss).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario with MRC off and on; writes both traces and compare.toml.
    MrcCompare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a heatmap from a tracked-point list (one "x y" per line); writes heatmap.hmap and heatmap.pgm.
    HeatmapBuild {
        #[arg(long)]
        points: PathBuf,
        /// WIDTHxHEIGHT, e.g. 320x240.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        /// Gaussian smoothing, px; 0 keeps raw counts.
        #[arg(long, default_value_t = 12.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a live session over websocket (protocol v1).
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.trim().parse().map_err(|_| "bad width")?;
    let h: usize = h.trim().parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Files are staged in memory and written only once everything succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    fn commit(self) -> Result<(), Failure> {
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(runtime)?;
            }
            fs::write(&path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn simulate(cfg: &ScenarioConfig, out: &mut Outputs, prefix: &str) -> Result<RunTrace, Failure> {
    let mut sim = Simulation::new(cfg.clone())?;
    let every = cfg.output.frame_every;
    let mut records = Vec::with_capacity(cfg.steps());
    while sim.steps_taken() < cfg.steps() {
        if every > 0 && sim.steps_taken() % every == 0 {
            let frame = sim.render_frame()?;
            out.add(
                format!("{prefix}frames/frame_{:06}.ppm", sim.steps_taken()),
                io::encode_pnm(&frame.image),
            );
        }
        records.push(sim.step()?);
    }
    Ok(RunTrace::new(cfg.clone(), records))
}

fn print_summary(s: &Summary) {
    let opt = |v: Option<f64>| v.map_or("never".to_string(), |t| format!("{t:.2} s"));
    println!(
        "{}: steps {} settle e_p {} e_d {} | steady max |e_p| {:.2} px |e_d| {:.2} mm | max rcm {:.4} mm | peak misorientation {:.2} deg | lyapunov violations {}",
        s.name,
        s.steps,
        opt(s.settle_time_ep),
        opt(s.settle_time_ed),
        s.steady_max_ep,
        s.steady_max_ed,
        s.max_rcm_error,
        s.max_abs_misorientation_deg,
        s.lyapunov_violations
    );
}

fn cmd_run(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_scenario(config, seed)?;
    let mut out = Outputs::new(out_dir);
    let trace = simulate(&cfg, &mut out, "")?;
    let summary = trace.summary();
    out.add("trace.csv", trace.to_csv());
    out.add("summary.toml", summary.to_toml_string());
    out.add("config.toml", cfg.to_toml_string());
    out.commit()?;
    print_summary(&summary);
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    peak_off_deg: f64,
    peak_on_deg: f64,
    final_off_deg: f64,
    final_on_deg: f64,
    /// Largest `|on| - |off|` at matched steps.
    max_excess_on_over_off_deg: f64,
    mrc_worsened_steps: usize,
}

fn cmd_mrc_compare(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let base = load_scenario(config, seed)?;
    let mut out = Outputs::new(out_dir);
    let mut traces = Vec::new();
    for (mode, tag) in [(MrcMode::Off, "off"), (MrcMode::On, "on")] {
        let cfg = ScenarioConfig {
            mrc: mode,
            ..base.clone()
        };
        let trace = simulate(&cfg, &mut out, &format!("{tag}/"))?;
        out.add(format!("trace_{tag}.csv"), trace.to_csv());
        out.add(format!("summary_{tag}.toml"), trace.summary().to_toml_string());
        traces.push(trace);
    }
    let (off, on) = (&traces[0], &traces[1]);
    let (s_off, s_on) = (off.summary(), on.summary());
    let excess = off
        .records
        .iter()
        .zip(&on.records)
        .map(|(a, b)| (b.misorientation.abs() - a.misorientation.abs()).to_degrees())
        .fold(f64::NEG_INFINITY, f64::max);
    let cmp = Comparison {
        peak_off_deg: s_off.max_abs_misorientation_deg,
        peak_on_deg: s_on.max_abs_misorientation_deg,
        final_off_deg: s_off.final_misorientation_deg,
        final_on_deg: s_on.final_misorientation_deg,
        max_excess_on_over_off_deg: excess,
        mrc_worsened_steps: s_on.mrc_worsened_steps,
    };
    out.add("compare.toml", toml::to_string_pretty(&cmp).map_err(runtime)?);
    out.add("config.toml", base.to_toml_string());
    out.commit()?;
    println!(
        "misorientation peak: off {:.2} deg, on {:.2} deg; final: off {:.2} deg, on {:.2} deg; on exceeds off by at most {:.2} deg",
        cmp.peak_off_deg, cmp.peak_on_deg, cmp.final_off_deg, cmp.final_on_deg, cmp.max_excess_on_over_off_deg
    );
    Ok(())
}

fn cmd_depth_eval(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    let mut cfg = DepthEvalConfig::from_toml_str(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = depth_eval(&cfg)?;
    let table = report.to_table();
    let mut out = Outputs::new(out_dir);
    out.add("report.toml", toml::to_string_pretty(&report).map_err(runtime)?);
    out.add("report.txt", table.clone());
    out.commit()?;
    print!("{table}");
    Ok(())
}

fn cmd_heatmap_build(points: &Path, size: (usize, usize), sigma: f64, out_dir: &Path) -> Result<(), Failure> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Failure::Config("sigma must be finite and >= 0".into()));
    }
    let pts = io::read_points(points).map_err(|e| Failure::Config(format!("{}: {e}", points.display())))?;
    let hm = build_heatmap(&pts, size.0, size.1, sigma).map_err(|e| Failure::Config(e.to_string()))?;
    let mut out = Outputs::new(out_dir);
    out.add("heatmap.hmap", io::encode_float_grid(HEATMAP_MAGIC, hm.grid()));
    out.add("heatmap.pgm", io::encode_pnm(&hm.to_image()));
    out.commit()?;
    println!("heatmap {}x{} from {} points, sigma {sigma}", size.0, size.1, pts.len());
    Ok(())
}

fn cmd_serve(config: &Path, addr: &str, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = load_scenario(config, seed)?;
    // a live session runs until stopped, not for the scripted duration
    cfg.duration = f64::MAX / 4.0;
    let handle = serve(cfg, addr, ServeOptions::default()).map_err(|e| match e {
        ServiceError::Scenario(e) => Failure::from(e),
        ServiceError::PortUnavailable(e) => Failure::Config(format!("port unavailable: {e}")),
        ServiceError::Io(e) => runtime(e),
    })?;
    eprintln!("lapfov: serving v1 on ws://{}", handle.local_addr());
    handle.wait().map_err(Failure::from)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run { config, out, seed } => cmd_run(config, out, *seed),
        Command::DepthEval { config, out, seed } => cmd_depth_eval(config, out, *seed),
        Command::MrcCompare { config, out, seed } => cmd_mrc_compare(config, out, *seed),
        Command::HeatmapBuild {
            points,
            size,
            sigma,
            out,
        } => cmd_heatmap_build(points, *size, *sigma, out),
        Command::Serve { config, addr, seed } => cmd_serve(config, addr, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("lapfov: config error: {}", m.strip_prefix("config: ").unwrap_or(&m));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("lapfov: runtime error: {m}");
            ExitCode::from(2)
        }
    }
}
