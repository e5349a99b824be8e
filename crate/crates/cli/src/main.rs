use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DVector, Vector3};
use serde_json::{json, Value};
use thiserror::Error;

use crem_core::calibration::{
    nls_estimate, split_at_turning_point, turning_point_index, CalibrationConfig, FreeParams,
};
use crem_core::dataio::{
    generate_synthetic, linspace, load_robot_config, read_dataset, save_dataset, smooth_trajectory,
    to_measurements, DataError, Dataset, RobotConfig, SyntheticSpec,
};
use crem_core::differential::{
    assemble_motion_jacobians, check_grid, finite_difference_jacobian, GridSpec, JacobianErrors,
    FD_SCALE_FLOOR, FD_STEP,
};
use crem_core::kinematics::crem_pose;
use crem_core::model::{ConfigState, RobotParams, UncertaintyParams};
use crem_core::rotation::log_map;
use crem_core::CremError;

const SCHEMA_HEADER: &str = "# schema=1";
const JACOBIAN_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "crem",
    version,
    about = "Macro and micro kinematics, Jacobian checks and calibration of a multi-backbone continuum segment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Robot configuration file. Without one the reference robot is used.
    #[arg(long, env = "CREM_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tip trajectory of an EMB insertion sweep at fixed (theta, delta).
    SimulateMicro {
        #[command(flatten)]
        config: ConfigArg,
        /// Bending angle (deg).
        #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
        theta: f64,
        /// Bending-plane angle (deg).
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        delta: f64,
        /// Uncertainty coefficients k0,ktheta,kq.
        #[arg(long, default_value = "0,0,0", value_parser = parse_k, allow_hyphen_values = true)]
        k_lambda: UncertaintyParams,
        /// Insertion depths lo:hi:n (mm).
        #[arg(long, default_value = "0:40:200", value_parser = parse_range)]
        qs_range: Sweep,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tip pose and macro Jacobian along a bending sweep at fixed insertion.
    SimulateMacro {
        #[command(flatten)]
        config: ConfigArg,
        /// Insertion depth (mm); 0.3 L when omitted.
        #[arg(long)]
        qs: Option<f64>,
        /// Bending angles lo:hi:n (deg).
        #[arg(long, default_value = "15:75:61", value_parser = parse_range)]
        theta_range: Sweep,
        /// Bending-plane angle (deg).
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compares every analytic Jacobian with central differences on a grid.
    JacobianCheck {
        #[command(flatten)]
        config: ConfigArg,
        /// `standard`, or `thetas/deltas/fractions` as comma lists
        /// (degrees, degrees, fractions of L).
        #[arg(long, default_value = "standard", value_parser = parse_grid)]
        grid: GridSpec,
        #[arg(long, default_value = "0,0,0", value_parser = parse_k, allow_hyphen_values = true)]
        k_lambda: UncertaintyParams,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimates the uncertainty coefficients from a trajectory dataset.
    Calibrate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// Initial k0,ktheta,kq.
        #[arg(long, default_value = "0,0,0", value_parser = parse_k, allow_hyphen_values = true)]
        init: UncertaintyParams,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        /// Relative change of the objective that ends the iteration.
        #[arg(long, default_value_t = 1e-3)]
        conv: f64,
        /// Estimated parameters, from k0, ktheta, kq.
        #[arg(long, default_value = "k0,kq")]
        free: String,
        /// Fit only the samples up to the turning point.
        #[arg(long)]
        split_turning_point: bool,
        /// Zero-phase Butterworth low-pass of the positions before fitting (Hz).
        #[arg(long)]
        smooth_hz: Option<f64>,
        #[arg(long)]
        out_trace: Option<PathBuf>,
    },
    /// Writes a seeded synthetic insertion dataset in the base frame.
    GenSynthetic {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "0,0,0", value_parser = parse_k, allow_hyphen_values = true)]
        k_lambda: UncertaintyParams,
        /// Bending angle (deg).
        #[arg(long, default_value_t = 45.0, allow_hyphen_values = true)]
        theta: f64,
        /// Bending-plane angle (deg).
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long, default_value = "0:40:382", value_parser = parse_range)]
        qs_range: Sweep,
        /// Isotropic position noise (μm, one standard deviation).
        #[arg(long, default_value_t = 0.0)]
        noise_um: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy)]
struct Sweep {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Sweep {
    fn values(&self) -> Vec<f64> {
        linspace(self.lo, self.hi, self.n)
    }
}

fn parse_range(s: &str) -> Result<Sweep, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(format!("expected lo:hi:n, got `{s}`"));
    };
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("`{v}` is not a finite number"))
    };
    let n: usize = n
        .trim()
        .parse()
        .map_err(|_| format!("`{n}` is not a sample count"))?;
    if n == 0 {
        return Err("sample count must be at least 1".into());
    }
    Ok(Sweep {
        lo: num(lo)?,
        hi: num(hi)?,
        n,
    })
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("`{v}` is not a finite number"))
        })
        .collect()
}

fn parse_k(s: &str) -> Result<UncertaintyParams, String> {
    match parse_list(s)?[..] {
        [a, b, c] => Ok(UncertaintyParams::new(a, b, c)),
        _ => Err(format!("expected three values k0,ktheta,kq, got `{s}`")),
    }
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    if s == "standard" {
        return Ok(GridSpec::standard());
    }
    let parts: Vec<&str> = s.split('/').collect();
    let [t, d, q] = parts[..] else {
        return Err(format!(
            "expected `standard` or thetas/deltas/fractions, got `{s}`"
        ));
    };
    let rad = |v: Vec<f64>| v.into_iter().map(f64::to_radians).collect();
    let qs_frac = parse_list(q)?;
    if qs_frac.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err("insertion fractions must lie in (0, 1)".into());
    }
    Ok(GridSpec {
        theta: rad(parse_list(t)?),
        delta: rad(parse_list(d)?),
        qs_frac,
    })
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numeric(_) | CliError::Data(DataError::Model(_)) => 1,
            CliError::Usage(_) | CliError::Data(_) => 2,
        }
    }
}

/// Wraps a numeric failure with the configuration it happened at.
fn failed_at(what: String) -> impl FnOnce(CremError) -> CliError {
    move |e| CliError::Numeric(format!("{what}: {e}"))
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn load_config(arg: &ConfigArg) -> Result<RobotConfig, CliError> {
    match &arg.config {
        Some(path) => Ok(load_robot_config(path)?),
        None => Ok(RobotConfig::new(RobotParams::reference())),
    }
}

fn config_state(theta_deg: f64, delta_deg: f64) -> Result<ConfigState, CliError> {
    ConfigState::from_degrees(theta_deg, delta_deg).map_err(usage)
}

fn check_depths(values: &[f64], params: &RobotParams) -> Result<(), CliError> {
    match values.iter().find(|q| !(0.0..=params.length).contains(*q)) {
        Some(q) => Err(CliError::Usage(format!(
            "insertion depth {q} mm outside [0, {}]",
            params.length
        ))),
        None => Ok(()),
    }
}

fn write_table(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let io = |source| {
        CliError::Data(DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let mut text = format!("{SCHEMA_HEADER}\n{}\n", columns.join(","));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(io)?;
    out.flush().map_err(io)
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn k_json(k: &UncertaintyParams) -> Value {
    json!({ "k0": k.k0, "ktheta": k.k_theta, "kq": k.k_q })
}

/// Summary of a command plus an optional failure found after the outputs
/// were written.
struct Outcome {
    summary: Value,
    failure: Option<String>,
}

impl From<Value> for Outcome {
    fn from(summary: Value) -> Self {
        Outcome {
            summary,
            failure: None,
        }
    }
}

fn simulate_micro(
    config: &ConfigArg,
    theta: f64,
    delta: f64,
    k: &UncertaintyParams,
    sweep: Sweep,
    out: &Path,
) -> Result<Outcome, CliError> {
    let cfg = load_config(config)?;
    let psi = config_state(theta, delta)?;
    let qs = sweep.values();
    check_depths(&qs, &cfg.params)?;
    let mut poses = Vec::with_capacity(qs.len());
    for &q in &qs {
        let pose = crem_pose(&cfg.params, psi, q, k).map_err(failed_at(format!(
            "equilibrium at theta={theta} deg, delta={delta} deg, q_s={q} mm"
        )))?;
        poses.push(pose);
    }
    let positions: Vec<Vector3<f64>> = poses.iter().map(|p| p.tip.position).collect();
    let turn = turning_point_index(&positions);
    let rows: Vec<Vec<f64>> = poses
        .iter()
        .zip(&qs)
        .enumerate()
        .map(|(i, (p, &q))| {
            let x = p.tip.position;
            vec![
                q,
                x.x,
                x.y,
                x.z,
                p.equilibrium.theta_s.to_degrees(),
                p.equilibrium.theta_prime.to_degrees(),
                if turn == Some(i) { 1.0 } else { 0.0 },
            ]
        })
        .collect();
    let columns = names(&[
        "q_s",
        "x",
        "y",
        "z",
        "theta_s",
        "theta_prime",
        "turning_point",
    ]);
    write_table(out, &columns, &rows)?;
    Ok(json!({
        "command": "simulate-micro",
        "out": out,
        "rows": rows.len(),
        "turning_point_q_s": turn.map(|i| qs[i]),
    })
    .into())
}

fn simulate_macro(
    config: &ConfigArg,
    qs: Option<f64>,
    sweep: Sweep,
    delta: f64,
    out: &Path,
) -> Result<Outcome, CliError> {
    let cfg = load_config(config)?;
    let p = &cfg.params;
    let q = qs.unwrap_or(0.3 * p.length);
    check_depths(&[q], p)?;
    let k = UncertaintyParams::ZERO;
    let n = p.n_backbones;
    let mut rows = Vec::new();
    let mut min_cosine = f64::INFINITY;
    for theta in sweep.values() {
        let psi = config_state(theta, delta)?;
        let label = format!("theta={theta} deg, delta={delta} deg, q_s={q} mm");
        let set = assemble_motion_jacobians(p, psi, q, &k).map_err(failed_at(label.clone()))?;
        let fd = finite_difference_jacobian(
            |x: &DVector<f64>| Ok(crem_pose(p, ConfigState::new(x[0], psi.delta)?, q, &k)?.tip),
            &DVector::from_element(1, psi.theta),
            FD_STEP,
        )
        .map_err(failed_at(label))?;
        let induced = &set.j_m * set.j_q_psi.column(0);
        let v = Vector3::new(induced[0], induced[1], induced[2]);
        let tangent = Vector3::new(fd[(0, 0)], fd[(1, 0)], fd[(2, 0)]);
        let cosine = v.dot(&tangent) / (v.norm() * tangent.norm());
        min_cosine = min_cosine.min(cosine);

        let tip = set.pose.tip;
        let rv = log_map(&tip.rotation);
        let mut row = vec![
            theta,
            tip.position.x,
            tip.position.y,
            tip.position.z,
            rv.x,
            rv.y,
            rv.z,
        ];
        for j in 0..n {
            row.extend((0..3).map(|r| set.j_m[(r, j)]));
        }
        row.extend([v.x, v.y, v.z, cosine]);
        rows.push(row);
    }
    let mut columns = names(&["theta", "x", "y", "z", "rx", "ry", "rz"]);
    for j in 1..=n {
        columns.extend(["vx", "vy", "vz"].iter().map(|c| format!("jm{j}_{c}")));
    }
    columns.extend(names(&[
        "dtheta_vx",
        "dtheta_vy",
        "dtheta_vz",
        "tangent_cosine",
    ]));
    write_table(out, &columns, &rows)?;
    Ok(json!({
        "command": "simulate-macro",
        "out": out,
        "rows": rows.len(),
        "q_s": q,
        "min_tangent_cosine": min_cosine,
    })
    .into())
}

fn jacobian_check(
    config: &ConfigArg,
    grid: &GridSpec,
    k: &UncertaintyParams,
    out: &Path,
) -> Result<Outcome, CliError> {
    let cfg = load_config(config)?;
    let p = &cfg.params;
    let points = grid.points();
    let results = check_grid(p, grid, k, FD_STEP, FD_SCALE_FLOOR).map_err(|e| {
        let what = match &e {
            CremError::AtConfiguration { index, .. } => {
                let (t, d, f) = points[*index];
                format!(
                    "Jacobian check at theta={} deg, delta={} deg, q_s={} mm",
                    t.to_degrees(),
                    d.to_degrees(),
                    f * p.length
                )
            }
            _ => "Jacobian check".to_string(),
        };
        CliError::Numeric(format!("{what}: {}", e.root()))
    })?;

    let mut rows = Vec::with_capacity(results.len());
    let mut worst: Option<(f64, f64, f64, f64)> = None;
    let mut failures = 0;
    for (t, d, q, e) in &results {
        let max = e.max();
        if max > JACOBIAN_TOLERANCE {
            failures += 1;
        }
        if worst.is_none_or(|w| max > w.3) {
            worst = Some((*t, *d, *q, max));
        }
        let mut row = vec![t.to_degrees(), d.to_degrees(), *q];
        row.extend(e.values());
        row.push(max);
        rows.push(row);
    }
    let mut columns = names(&["theta", "delta", "q_s"]);
    columns.extend(names(&JacobianErrors::NAMES));
    columns.push("max".into());
    write_table(out, &columns, &rows)?;

    let (wt, wd, wq, wmax) = worst.unwrap_or((f64::NAN, f64::NAN, f64::NAN, 0.0));
    let summary = json!({
        "command": "jacobian-check",
        "out": out,
        "points": rows.len(),
        "tolerance": JACOBIAN_TOLERANCE,
        "max_error": wmax,
        "worst": { "theta": wt.to_degrees(), "delta": wd.to_degrees(), "q_s": wq },
        "failures": failures,
    });
    let failure = (failures > 0).then(|| {
        format!(
            "{failures} grid points exceed {JACOBIAN_TOLERANCE:e}; worst {wmax:e} at theta={} deg, delta={} deg, q_s={wq} mm",
            wt.to_degrees(),
            wd.to_degrees()
        )
    });
    Ok(Outcome { summary, failure })
}

/// Sample rate of a trajectory from its first and last time stamps.
fn sample_rate(data: &Dataset) -> Result<f64, CliError> {
    let r = &data.records;
    let span = r.last().map_or(0.0, |l| l.t) - r.first().map_or(0.0, |f| f.t);
    if r.len() < 2 || span.is_nan() || span <= 0.0 {
        return Err(CliError::Usage(
            "smoothing needs at least two samples with increasing time".into(),
        ));
    }
    Ok((r.len() - 1) as f64 / span)
}

#[allow(clippy::too_many_arguments)]
fn calibrate(
    config: &ConfigArg,
    data: &Path,
    init: UncertaintyParams,
    eta: f64,
    conv: f64,
    free: &str,
    split: bool,
    smooth_hz: Option<f64>,
    out_trace: Option<&Path>,
) -> Result<Outcome, CliError> {
    let cfg = load_config(config)?;
    let mut dataset = read_dataset(data)?;
    if let Some(hz) = smooth_hz {
        let rate = sample_rate(&dataset)?;
        dataset.records = smooth_trajectory(&dataset.records, hz, rate)?;
    }
    let measurements = to_measurements(&dataset, &cfg)?;
    let used = if split {
        split_at_turning_point(&measurements)
    } else {
        &measurements[..]
    };
    let calib = CalibrationConfig {
        eta,
        beta_conv: conv,
        free: FreeParams::parse(free).map_err(usage)?,
        marker_offset: cfg.t_gm.position,
        ..CalibrationConfig::default()
    };
    calib.validate().map_err(usage)?;

    let result = nls_estimate(used, &cfg.params, &calib, init).map_err(|e| {
        let what = match &e {
            CremError::AtConfiguration { index, .. } => {
                let m = &used[*index];
                format!(
                    "calibration at sample {} (theta={} deg, delta={} deg, q_s={} mm)",
                    index + 1,
                    m.psi.theta.to_degrees(),
                    m.psi.delta.to_degrees(),
                    m.q_s
                )
            }
            _ => format!("calibration on {} samples", used.len()),
        };
        CliError::Numeric(format!("{what}: {}", e.root()))
    })?;

    if let Some(path) = out_trace {
        let rows: Vec<Vec<f64>> = result
            .trace
            .iter()
            .map(|r| {
                vec![
                    r.iteration as f64,
                    r.k.k0,
                    r.k.k_q,
                    r.k.k_theta,
                    r.rmse_um,
                    r.objective,
                    r.eta,
                ]
            })
            .collect();
        let columns = names(&[
            "iteration",
            "k_lambda0",
            "k_lambdaq",
            "k_lambdatheta",
            "rmse_um",
            "objective",
            "eta",
        ]);
        write_table(path, &columns, &rows)?;
    }
    Ok(json!({
        "command": "calibrate",
        "k_lambda": k_json(&result.k),
        "initial_rmse_um": result.initial_rmse_um(),
        "final_rmse_um": result.final_rmse_um(),
        "iterations": result.iterations(),
        "step_halvings": result.step_halvings,
        "samples": used.len(),
        "samples_total": measurements.len(),
        "trace": out_trace,
    })
    .into())
}

#[allow(clippy::too_many_arguments)]
fn gen_synthetic(
    config: &ConfigArg,
    k: UncertaintyParams,
    theta: f64,
    delta: f64,
    sweep: Sweep,
    noise_um: f64,
    seed: u64,
    out: &Path,
) -> Result<Outcome, CliError> {
    let cfg = load_config(config)?;
    let psi = config_state(theta, delta)?;
    let q_s = sweep.values();
    check_depths(&q_s, &cfg.params)?;
    if !(noise_um >= 0.0 && noise_um.is_finite()) {
        return Err(CliError::Usage(format!(
            "noise {noise_um} μm must be non-negative"
        )));
    }
    let spec = SyntheticSpec {
        k_true: k,
        theta: psi.theta,
        delta: psi.delta,
        q_s,
        noise_sigma: noise_um / 1000.0,
        seed,
    };
    let data = generate_synthetic(&cfg, &spec)?;
    save_dataset(out, &data)?;
    Ok(json!({
        "command": "gen-synthetic",
        "out": out,
        "rows": data.records.len(),
        "k_lambda": k_json(&k),
        "seed": seed,
    })
    .into())
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::SimulateMicro {
            config,
            theta,
            delta,
            k_lambda,
            qs_range,
            out,
        } => simulate_micro(&config, theta, delta, &k_lambda, qs_range, &out),
        Command::SimulateMacro {
            config,
            qs,
            theta_range,
            delta,
            out,
        } => simulate_macro(&config, qs, theta_range, delta, &out),
        Command::JacobianCheck {
            config,
            grid,
            k_lambda,
            out,
        } => jacobian_check(&config, &grid, &k_lambda, &out),
        Command::Calibrate {
            config,
            data,
            init,
            eta,
            conv,
            free,
            split_turning_point,
            smooth_hz,
            out_trace,
        } => calibrate(
            &config,
            &data,
            init,
            eta,
            conv,
            &free,
            split_turning_point,
            smooth_hz,
            out_trace.as_deref(),
        ),
        Command::GenSynthetic {
            config,
            k_lambda,
            theta,
            delta,
            qs_range,
            noise_um,
            seed,
            out,
        } => gen_synthetic(
            &config, k_lambda, theta, delta, qs_range, noise_um, seed, &out,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            match outcome.failure {
                Some(msg) => {
                    eprintln!("crem: {msg}");
                    ExitCode::from(1)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("crem: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
