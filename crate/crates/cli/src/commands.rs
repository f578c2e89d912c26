use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use speckle_ptycho::dataset::{
    self, encode_pgm8, read_dataset, read_spty, read_trajectory, read_truth, write_json, write_spty, write_trajectory,
};
use speckle_ptycho::metrics::{self, line_path, phase_height_profile, Region};
use speckle_ptycho::recon::{self, AutofocusResult, AutofocusSpec, ProbeMode, ReconConfig};
use speckle_ptycho::register::{estimate_trajectory, RegistrationMode};
use speckle_ptycho::simulate::{self, bar_groups};
use speckle_ptycho::ComplexField;

use crate::config::RunConfig;
use crate::CliError;

pub const REPORT_FILE: &str = "run_report.json";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

pub fn simulate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sim_config = config.simulation();
    let sim = simulate::simulate(&sim_config)?;
    dataset::write_dataset(out, &sim.stack, sim_config.optics.upsampling, Some(&sim.truth))?;
    write_json(&out.join("config.json"), config)?;
    let m = sim_config.scene.frame_size;
    let n = sim_config.grid_size();
    println!("frames: {}", sim.stack.len());
    println!("detector grid: {m}x{m}, object grid: {n}x{n} (s = {})", sim_config.optics.upsampling);
    let seeds: Vec<String> = config.seeds().iter().map(|(k, v)| format!("{k} {v}")).collect();
    println!("seeds: {}", seeds.join(", "));
    println!("dataset: {}", out.display());
    Ok(())
}

pub fn estimate_shifts(config: &RunConfig, dataset: &Path, out: &Path, mode: Option<&str>) -> Result<(), CliError> {
    let mode: RegistrationMode = match mode {
        Some(m) => m.parse::<RegistrationMode>()?,
        None => config.registration.mode,
    };
    let (_, stack) = read_dataset(dataset)?;
    let trajectory = estimate_trajectory(&stack, mode)?;
    write_trajectory(out, &trajectory)?;
    let weak = trajectory.unreliable_frames();
    println!("{} shifts ({mode:?} mode), {} unreliable", trajectory.len(), weak.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    dataset: PathBuf,
    /// Trajectory JSON from `estimate-shifts`.
    trajectory: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Use the simulator's true trajectory from the dataset's truth sidecar.
    #[arg(long, conflicts_with = "trajectory")]
    true_trajectory: bool,
    /// `joint`, or `fixed <FILE>` with a SPTY probe on the object grid.
    #[arg(long, num_args = 1..=2, value_names = ["MODE", "FILE"])]
    probe: Vec<String>,
    /// Search the propagation distance over [DMIN, DMAX] micrometers first.
    #[arg(long, num_args = 2, value_names = ["DMIN", "DMAX"])]
    autofocus: Option<Vec<f64>>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: PathBuf,
    pub trajectory_source: String,
    pub rows: usize,
    pub cols: usize,
    pub pitch_um: f64,
    pub wavelength_um: f64,
    pub distance_um: f64,
    pub residual: f64,
    pub residuals: Vec<f64>,
    #[serde(default)]
    pub autofocus: Option<AutofocusResult>,
    pub wall_time_s: f64,
    pub threads: usize,
    pub recon: ReconConfig,
}

fn parse_probe(args: &[String], pitch: f64, wavelength: f64) -> Result<(ProbeMode, Option<ComplexField>), CliError> {
    match args {
        [] => Ok((ProbeMode::Joint, None)),
        [m] if m == "joint" => Ok((ProbeMode::Joint, None)),
        [m, file] if m == "fixed" => {
            let data = read_spty(Path::new(file))?;
            Ok((ProbeMode::Fixed, Some(ComplexField::new(data, pitch, wavelength)?)))
        }
        [m] if m == "fixed" => Err(CliError::Usage("--probe fixed needs a probe file".into())),
        _ => Err(CliError::Usage(format!("unrecognized --probe arguments {args:?}; use 'joint' or 'fixed <FILE>'"))),
    }
}

pub fn reconstruct(config: RunConfig, args: &ReconstructArgs) -> Result<(), CliError> {
    let mut rc = config.recon;
    if let Some(n) = args.iterations {
        rc.iterations = n;
    }
    if let Some(range) = &args.autofocus {
        rc.autofocus = Some(AutofocusSpec {
            min_um: range[0],
            max_um: range[1],
            ..rc.autofocus.unwrap_or_default()
        });
    }
    rc.validate()?;
    let (manifest, stack) = read_dataset(&args.dataset)?;
    if manifest.upsampling_hint != rc.upsampling {
        log::warn!(
            "dataset was simulated with s = {}, reconstructing with s = {}",
            manifest.upsampling_hint,
            rc.upsampling
        );
    }
    let pitch = stack.detector_pitch / rc.upsampling as f64;
    let (trajectory, source) = match (&args.trajectory, args.true_trajectory) {
        (Some(path), _) => (read_trajectory(path)?, path.display().to_string()),
        (None, true) => {
            let path = dataset::truth_dir(&args.dataset).join("trajectory.json");
            (read_trajectory(&path)?, "truth".to_string())
        }
        (None, false) => {
            return Err(CliError::Usage("a trajectory file (or --true-trajectory) is required".into()));
        }
    };
    let (mode, probe) = parse_probe(&args.probe, pitch, stack.wavelength)?;
    rc.probe_mode = mode;
    info!("reconstructing {} frames, {} passes", stack.len(), rc.iterations);
    let result = recon::reconstruct(&stack, &trajectory, &rc, probe.as_ref())?;

    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_spty(&out.join("object.spty"), result.object.data())?;
    write_spty(&out.join("probe.spty"), result.probe.data())?;
    write_previews(out, "object", result.object.data())?;
    write_previews(out, "probe", result.probe.data())?;
    write_trajectory(&out.join("trajectory.json"), &result.trajectory)?;
    let (rows, cols) = result.object.dim();
    let report = RunReport {
        dataset: args.dataset.clone(),
        trajectory_source: source,
        rows,
        cols,
        pitch_um: result.object.pitch(),
        wavelength_um: result.object.wavelength(),
        distance_um: result.distance,
        residual: result.residual,
        residuals: result.residuals,
        autofocus: result.autofocus,
        wall_time_s: result.wall_time_s,
        threads: rayon::current_num_threads(),
        recon: rc,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    println!(
        "residual {:.4e} after {} passes at d = {:.1} um, {:.2} s",
        report.residual,
        report.residuals.len(),
        report.distance_um,
        report.wall_time_s
    );
    Ok(())
}

fn write_previews(dir: &Path, name: &str, data: &Array2<Complex64>) -> Result<(), CliError> {
    let peak = data.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let amp = data.mapv(|v| if peak > 0.0 { (v.norm() / peak * 255.0).round() as u8 } else { 0 });
    let phase = data.mapv(|v| ((v.arg() + std::f64::consts::PI) / std::f64::consts::TAU * 255.0).round() as u8);
    for (suffix, img) in [("amplitude", amp), ("phase", phase)] {
        let path = dir.join(format!("{name}_{suffix}.pgm"));
        fs::write(&path, encode_pgm8(&img)).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Result directory from `reconstruct`.
    result: Option<PathBuf>,
    /// Truth sidecar directory, or a dataset directory containing one.
    #[arg(long)]
    truth: PathBuf,
    /// Report file; printed to stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Evaluate the truth against itself.
    #[arg(long, conflicts_with = "result")]
    self_check: bool,
    /// Threshold such as `rmse<0.1`; repeatable.
    #[arg(long = "assert", value_name = "EXPR")]
    assertions: Vec<String>,
    /// Bar period in high-resolution pixels for bar contrast.
    #[arg(long = "bar-period")]
    bar_periods: Vec<usize>,
    /// Height profile along a line, as row and column of both ends.
    #[arg(long, num_args = 4, value_names = ["R0", "C0", "R1", "C1"])]
    profile: Option<Vec<usize>>,
    /// Refractive index difference for the height profile.
    #[arg(long, default_value_t = 0.5)]
    delta_n: f64,
    /// CSV output for the height profile.
    #[arg(long, requires = "profile")]
    profile_out: Option<PathBuf>,
}

fn truth_location(path: &Path) -> PathBuf {
    if path.join(dataset::MANIFEST_FILE).is_file() {
        dataset::truth_dir(path)
    } else {
        path.to_path_buf()
    }
}

pub fn evaluate(config: &RunConfig, args: &EvaluateArgs) -> Result<(), CliError> {
    let assertions = args.assertions.iter().map(|a| Assertion::parse(a)).collect::<Result<Vec<_>, _>>()?;
    let truth_dir = truth_location(&args.truth);
    if !truth_dir.is_dir() {
        return Err(CliError::Usage(format!("{}: truth directory not found", truth_dir.display())));
    }
    let report: Option<RunReport> = match &args.result {
        Some(dir) if dir.join(REPORT_FILE).is_file() => Some(dataset::read_json(&dir.join(REPORT_FILE))?),
        Some(dir) if dir.is_dir() => None,
        Some(dir) => return Err(CliError::Usage(format!("{}: result directory not found", dir.display()))),
        None if args.self_check => None,
        None => return Err(CliError::Usage("give a result directory or --self-check".into())),
    };
    let (pitch, wavelength) = report
        .as_ref()
        .map_or((config.optics.high_res_pitch(), config.optics.wavelength_um), |r| (r.pitch_um, r.wavelength_um));
    let truth = read_truth(&truth_dir, pitch, wavelength)?;
    let (recovered, trajectory) = match &args.result {
        Some(dir) => {
            let data = read_spty(&dir.join("object.spty"))?;
            let traj_path = dir.join("trajectory.json");
            let traj = if traj_path.is_file() { Some(read_trajectory(&traj_path)?) } else { None };
            (ComplexField::new(data, pitch, wavelength)?, traj)
        }
        None => (truth.object.clone(), Some(truth.trajectory.clone())),
    };
    let (rows, cols) = truth.object.dim();
    let mask = Region::central(rows, cols, config.evaluation.mask_fraction);
    let mut bars = Vec::new();
    for &p in &args.bar_periods {
        bars.extend(bar_groups(rows, cols, p)?);
    }
    let mut eval = metrics::evaluate(recovered.data(), truth.object.data(), mask, &bars)?;
    if let Some(traj) = trajectory {
        let (rms, max) = traj.error_against(&truth.trajectory)?;
        eval.trajectory_rms_px = Some(rms);
        eval.trajectory_max_px = Some(max);
    }
    let json = serde_json::to_value(&eval).expect("report serializes");
    match &args.out {
        Some(path) => write_json(path, &eval)?,
        None => println!("{}", serde_json::to_string_pretty(&json).expect("report serializes")),
    }
    if let Some(line) = &args.profile {
        let path = line_path((line[0], line[1]), (line[2], line[3]));
        let profile = phase_height_profile(&recovered, &path, wavelength, args.delta_n)?;
        if profile.ambiguous {
            log::warn!("phase unwrapping along the profile is ambiguous");
        }
        let csv = args.profile_out.clone().unwrap_or_else(|| PathBuf::from("profile.csv"));
        profile.write_csv(&csv)?;
    }
    for a in &assertions {
        a.check(&json)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
struct Assertion {
    metric: String,
    op: Op,
    bound: f64,
}

const METRICS: &[&str] = &[
    "rmse",
    "amplitude_rmse",
    "phase_rms_rad",
    "trajectory_rms_px",
    "trajectory_max_px",
    "bar_contrast",
];

impl Assertion {
    fn parse(text: &str) -> Result<Self, CliError> {
        let bad = || CliError::Usage(format!("cannot parse assertion '{text}'; expected e.g. rmse<0.1"));
        let pos = text.find(['<', '>']).ok_or_else(bad)?;
        let (metric, rest) = text.split_at(pos);
        let (op, bound) = match (rest.as_bytes()[0], rest.as_bytes().get(1)) {
            (b'<', Some(b'=')) => (Op::Le, &rest[2..]),
            (b'>', Some(b'=')) => (Op::Ge, &rest[2..]),
            (b'<', _) => (Op::Lt, &rest[1..]),
            _ => (Op::Gt, &rest[1..]),
        };
        let metric = metric.trim().to_string();
        if !METRICS.contains(&metric.as_str()) {
            return Err(CliError::Usage(format!("unknown metric '{metric}' in assertion; known: {}", METRICS.join(", "))));
        }
        let bound: f64 = bound.trim().parse().map_err(|_| bad())?;
        Ok(Self { metric, op, bound })
    }

    /// Bar contrast is judged on the weakest group.
    fn value(&self, report: &Value) -> Option<f64> {
        if self.metric == "bar_contrast" {
            return report["bar_contrast"]
                .as_array()?
                .iter()
                .filter_map(|b| b["contrast"].as_f64())
                .reduce(f64::min);
        }
        report[&self.metric].as_f64()
    }

    fn check(&self, report: &Value) -> Result<(), CliError> {
        let Some(v) = self.value(report) else {
            return Err(CliError::Assertion(format!("assertion on {} failed: metric not available", self.metric)));
        };
        let ok = match self.op {
            Op::Lt => v < self.bound,
            Op::Le => v <= self.bound,
            Op::Gt => v > self.bound,
            Op::Ge => v >= self.bound,
        };
        if ok {
            return Ok(());
        }
        let sym = match self.op {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        };
        Err(CliError::Assertion(format!(
            "assertion failed: {} = {v} (required {sym} {})",
            self.metric, self.bound
        )))
    }
}
