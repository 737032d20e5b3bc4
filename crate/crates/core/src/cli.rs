//! Command-line front end: `synth`, `simulate`, `fit`, `warp`, `metrics`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_material, fit_material_homogeneous, FitConfig, GradMode};
use crate::geometry::PointCloud;
use crate::harness::dataset::{
    read_cloud, read_json, write_fit_report, write_json, write_metrics, MetricsFile, SCHEMA_VERSION,
};
use crate::harness::ply::{read_ply, write_ply};
use crate::harness::{
    evaluate_frames, read_material, synth_object, synth_sequence, write_material, Dataset, ForceScript, ObjectSpec,
    SequenceSpec,
};
use crate::solver::{solve_equilibrium, SolverConfig};
use crate::warp::{GridSpec, WarpField, DEFAULT_K};

#[derive(Debug, Parser)]
#[command(name = "pointsim", version, about = "Point-cloud elasticity simulation and material fitting")]
struct Cli {
    /// JSON or TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground-truth material.
    Synth(SynthArgs),
    /// Simulate dataset frames with a material and compare to observations.
    Simulate(SimulateArgs),
    /// Recover a material field from dataset frames.
    Fit(FitArgs),
    /// Evaluate a backward warp field or upsample a dense cloud.
    Warp(WarpArgs),
    /// Distance statistics between two cloud sequences.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    /// Observation noise standard deviation (m).
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    material: PathBuf,
    /// Frames to simulate, e.g. `30..60` or `0,2,5..9` (default: all).
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Training frames, e.g. `0..30` (default: from config, else all).
    #[arg(long)]
    frames: Option<String>,
    /// Fit one global (mu, lambda) pair.
    #[arg(long)]
    homogeneous: bool,
    /// `truncated` or `ift_oracle`.
    #[arg(long)]
    grad_mode: Option<GradMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WarpArgs {
    #[arg(long)]
    rest: PathBuf,
    #[arg(long)]
    deformed: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    mask_radius: Option<f64>,
    /// Sample a grid: `minx,miny,minz,maxx,maxy,maxz`.
    #[arg(long, requires = "resolution", conflicts_with_all = ["query", "dense"])]
    bounds: Option<String>,
    /// Grid nodes per axis: `nx,ny,nz`.
    #[arg(long)]
    resolution: Option<String>,
    /// Deformed-space points to map back to rest space.
    #[arg(long, conflicts_with = "dense")]
    query: Option<PathBuf>,
    /// Dense rest-space cloud to carry forward.
    #[arg(long)]
    dense: Option<PathBuf>,
    /// Output: `.bin` grid (with `.json` header) or `.ply` cloud.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Directory of simulated `.ply` frames (sorted by name).
    #[arg(long)]
    simulated: PathBuf,
    /// Directory of observed `.ply` frames (sorted by name).
    #[arg(long)]
    observed: PathBuf,
    /// Dataset whose surface mask selects the points (default: all points).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    object: ObjectSpec,
    script: ForceScript,
    sequence: SequenceSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    solver: SolverConfig,
    fit: FitConfig,
    synth: Option<SynthConfig>,
}

fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| Error::format(path, e.to_string())),
        _ => serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string())),
    }
}

/// Parses `a..b`, `a..=b`, single indices and comma-separated mixes.
pub fn parse_frames(spec: &str, n_frames: usize) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("invalid frame selection `{spec}`"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = if let Some((a, b)) = part.split_once("..=") {
            (a.parse().map_err(|_| bad())?, b.parse::<usize>().map_err(|_| bad())? + 1)
        } else if let Some((a, b)) = part.split_once("..") {
            let a = if a.is_empty() { 0 } else { a.parse().map_err(|_| bad())? };
            let b = if b.is_empty() { n_frames } else { b.parse().map_err(|_| bad())? };
            (a, b)
        } else {
            let i: usize = part.parse().map_err(|_| bad())?;
            (i, i + 1)
        };
        if lo >= hi {
            return Err(bad());
        }
        out.extend(lo..hi);
    }
    if out.is_empty() {
        return Err(bad());
    }
    if let Some(&f) = out.iter().find(|&&f| f >= n_frames) {
        return Err(Error::InvalidIndex {
            what: "frame".into(),
            index: f,
            len: n_frames,
        });
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(s: &str, len: usize, what: &str) -> Result<Vec<T>> {
    let v: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("invalid {what} `{s}`")))?;
    if v.len() != len {
        return Err(Error::InvalidArgument(format!("{what} needs {len} comma-separated values, got `{s}`")));
    }
    Ok(v)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(args: &SynthArgs, config: &FileConfig) -> Result<()> {
    let Some(mut spec) = config.synth.clone() else {
        return Err(Error::InvalidArgument(
            "synth needs a `synth` section (object, script, sequence) in --config".into(),
        ));
    };
    if let Some(seed) = args.seed {
        spec.object.seed = seed;
        spec.sequence.seed = seed;
    }
    if let Some(n) = args.frames {
        spec.sequence.n_frames = n;
    }
    if let Some(s) = args.noise {
        spec.sequence.noise_sigma = s;
    }
    let (model, truth) = synth_object(&spec.object)?;
    let (data, _) = synth_sequence(&model, &truth, &spec.script, &spec.sequence, &config.solver)?;
    data.write(&args.out)?;
    write_material(&args.out.join("material_truth.json"), &truth)?;
    println!(
        "wrote {} frames of {} points to {}",
        data.len(),
        data.rest.len(),
        args.out.display()
    );
    Ok(())
}

fn simulate(args: &SimulateArgs, config: &FileConfig) -> Result<()> {
    let data = Dataset::read(&args.dataset)?;
    let model = data.reference()?;
    let mat = read_material(&args.material)?;
    if mat.len() != model.len() {
        return Err(Error::size("material", model.len(), mat.len()));
    }
    let frames = match &args.frames {
        Some(s) => parse_frames(s, data.len())?,
        None => (0..data.len()).collect(),
    };
    ensure_dir(&args.out)?;
    let mut simulated = Vec::with_capacity(frames.len());
    let mut observed = Vec::with_capacity(frames.len());
    let mut y = model.rest_positions().to_vec();
    for &t in &frames {
        let state = solve_equilibrium(&model, &mat, &data.frames[t], &y, &config.solver)?;
        if !state.converged {
            return Err(Error::Solver(format!(
                "frame {t}: {}",
                state.message.as_deref().unwrap_or("did not converge")
            )));
        }
        write_ply(&args.out.join(format!("sim_{t:05}.ply")), &state.y, None)?;
        y = state.y;
        simulated.push(PointCloud::new(y.clone())?);
        observed.push(data.observations[t].clone());
    }
    let (report, per_frame_mm) = evaluate_frames(&simulated, &observed, &data.surface_mask)?;
    write_metrics(
        &args.out.join("metrics.json"),
        &MetricsFile {
            schema_version: SCHEMA_VERSION,
            frames,
            report,
            per_frame_mm,
        },
    )?;
    println!("{report}");
    Ok(())
}

fn fit(args: &FitArgs, config: &FileConfig) -> Result<()> {
    let data = Dataset::read(&args.dataset)?;
    let model = data.reference()?;
    let mut fc = config.fit.clone();
    fc.solver = config.solver.clone();
    if let Some(s) = &args.frames {
        fc.frames = parse_frames(s, data.len())?;
    } else if fc.frames.is_empty() {
        fc.frames = (0..data.len()).collect();
    }
    if let Some(m) = args.grad_mode {
        fc.grad_mode = m;
    }
    if let Some(e) = args.epochs {
        fc.max_epochs = e;
    }
    if let Some(lr) = args.lr {
        fc.adam_lr = lr;
    }
    let report = if args.homogeneous {
        fit_material_homogeneous(&model, &data.frames, &data.observations, &fc)?
    } else {
        fit_material(&model, &data.frames, &data.observations, &fc)?
    };
    ensure_dir(&args.out)?;
    write_material(&args.out.join("material.json"), &report.material)?;
    write_fit_report(&args.out.join("report.json"), &report)?;
    let mus = report.material.mus();
    println!(
        "fitted {} epochs, best loss {:.6e} at epoch {}, mu in [{:.4e}, {:.4e}]",
        report.loss_history.len(),
        report.loss_history[report.best_epoch],
        report.best_epoch,
        mus.iter().copied().fold(f64::INFINITY, f64::min),
        mus.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(())
}

fn warp(args: &WarpArgs) -> Result<()> {
    let rest = PointCloud::new(read_ply(&args.rest)?.points).map_err(|e| Error::format(&args.rest, e.to_string()))?;
    let deformed = read_cloud(&args.deformed, rest.len())?;
    let field = WarpField::new(rest, deformed, args.k, args.mask_radius)?;
    if let Some(bounds) = &args.bounds {
        let b: Vec<f64> = parse_list(bounds, 6, "bounds")?;
        let r: Vec<usize> = parse_list(args.resolution.as_deref().unwrap_or_default(), 3, "resolution")?;
        let spec = GridSpec {
            min: [b[0], b[1], b[2]],
            max: [b[3], b[4], b[5]],
            resolution: [r[0], r[1], r[2]],
        };
        let grid = field.warp_grid(&spec)?;
        grid.write(&args.out)?;
        println!(
            "wrote {} grid nodes ({} masked, {} uniform fallbacks)",
            grid.offsets.len(),
            grid.masked.iter().filter(|m| **m).count(),
            grid.fallbacks
        );
    } else if let Some(q) = &args.query {
        let cloud = read_ply(q)?.points;
        let samples: Vec<_> = cloud.iter().map(|p| field.warp_backward(p)).collect();
        let points: Vec<_> = samples.iter().map(|s| s.point).collect();
        let masked: Vec<f64> = samples.iter().map(|s| s.masked as u8 as f64).collect();
        write_ply(&args.out, &points, Some(("masked", &masked)))?;
    } else if let Some(d) = &args.dense {
        let dense = PointCloud::new(read_ply(d)?.points).map_err(|e| Error::format(d, e.to_string()))?;
        let (out, flags) = field.upsample_forward(&dense)?;
        let flags: Vec<f64> = flags.iter().map(|&f| f as u8 as f64).collect();
        write_ply(&args.out, out.positions(), Some(("masked", &flags)))?;
    } else {
        return Err(Error::InvalidArgument("warp needs one of --bounds, --query or --dense".into()));
    }
    Ok(())
}

fn ply_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ply"))
        .collect();
    files.sort();
    Ok(files)
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    let sim_files = ply_files(&args.simulated)?;
    let obs_files = ply_files(&args.observed)?;
    if sim_files.len() != obs_files.len() {
        return Err(Error::InvalidArgument(format!(
            "{} simulated frames but {} observed frames",
            sim_files.len(),
            obs_files.len()
        )));
    }
    let load = |files: &[PathBuf]| -> Result<Vec<PointCloud>> {
        files
            .iter()
            .map(|p| PointCloud::new(read_ply(p)?.points).map_err(|e| Error::format(p, e.to_string())))
            .collect()
    };
    let simulated = load(&sim_files)?;
    let observed = load(&obs_files)?;
    let mask = match &args.dataset {
        Some(d) => Dataset::read(d)?.surface_mask,
        None => vec![true; simulated.first().map_or(0, |c| c.len())],
    };
    let (report, per_frame_mm) = evaluate_frames(&simulated, &observed, &mask)?;
    if let Some(out) = &args.out {
        write_metrics(
            out,
            &MetricsFile {
                schema_version: SCHEMA_VERSION,
                frames: (0..simulated.len()).collect(),
                report,
                per_frame_mm,
            },
        )?;
    }
    println!("{report}");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config: FileConfig = match &cli.config {
        Some(p) => parse_config(p)?,
        None => FileConfig::default(),
    };
    config.solver.validate()?;
    match &cli.command {
        Command::Synth(a) => synth(a, &config),
        Command::Simulate(a) => simulate(a, &config),
        Command::Fit(a) => fit(a, &config),
        Command::Warp(a) => warp(a),
        Command::Metrics(a) => metrics(a),
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 on
/// invalid input, 2 when a solve fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_solver_failure() {
                2
            } else {
                1
            }
        }
    }
}

/// Writes a value as pretty JSON; exposed for tools that build configs.
pub fn write_config<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

/// Reads a JSON config fragment.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path)
}
