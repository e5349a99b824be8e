//! Robot configuration files, trajectory datasets, smoothing and synthetic
//! data generation.
//!
//! Configuration files are flat `key = value` text with `#` comments.
//! Datasets are CSV with `#` pragma lines (`schema=1`, `frame=image|base`),
//! a header row `t,q_s,theta,delta,x,y[,z]`, angles in degrees.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::calibration::Measurement;
use crate::error::CremError;
use crate::kinematics::{crem_pose, Pose};
use crate::model::{ConfigState, RobotParams, UncertaintyParams};

/// Sampling rate assumed for synthetic trajectories (Hz).
pub const SYNTHETIC_RATE_HZ: f64 = 30.0;
pub const SCHEMA_VERSION: u32 = 1;

const TRANSFORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("frame error: {0}")]
    Frame(String),
    #[error("cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) Hz")]
    InvalidCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] CremError),
}

pub type DataResult<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Robot parameters plus the fixed frame transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotConfig {
    pub params: RobotParams,
    /// Base in world.
    pub t_wb: Pose,
    /// Image frame in base.
    pub t_bi: Pose,
    /// Marker in the end disk.
    pub t_gm: Pose,
}

impl RobotConfig {
    pub fn new(params: RobotParams) -> Self {
        RobotConfig {
            params,
            t_wb: Pose::identity(),
            t_bi: Pose::identity(),
            t_gm: Pose::identity(),
        }
    }
}

fn parse_transform(line: usize, field: &str, value: &str) -> DataResult<Pose> {
    let nums: Vec<f64> = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|e| DataError::Parse {
                line,
                field: field.into(),
                message: format!("`{s}`: {e}"),
            })
        })
        .collect::<DataResult<_>>()?;
    if nums.len() != 12 {
        return Err(DataError::Parse {
            line,
            field: field.into(),
            message: format!("expected 12 numbers (3×4 row-major), got {}", nums.len()),
        });
    }
    let m = Matrix3::new(
        nums[0], nums[1], nums[2], nums[4], nums[5], nums[6], nums[8], nums[9], nums[10],
    );
    let orth = (m.transpose() * m - Matrix3::identity()).amax();
    if orth > TRANSFORM_TOLERANCE || (m.determinant() - 1.0).abs() > TRANSFORM_TOLERANCE {
        return Err(DataError::Validation(format!(
            "{field} is not a rigid transform (orthogonality error {orth:e})"
        )));
    }
    Ok(Pose::new(
        Vector3::new(nums[3], nums[7], nums[11]),
        Rotation3::from_matrix_unchecked(m),
    ))
}

fn format_transform(p: &Pose) -> String {
    let r = p.rotation.matrix();
    let t = p.position;
    let mut s = String::new();
    for i in 0..3 {
        for j in 0..3 {
            write!(s, "{} ", r[(i, j)]).unwrap();
        }
        write!(s, "{}", t[i]).unwrap();
        if i < 2 {
            s.push(' ');
        }
    }
    s
}

pub fn parse_robot_config(text: &str) -> DataResult<RobotConfig> {
    let mut values: Vec<(String, f64, usize)> = Vec::new();
    let mut cfg = RobotConfig::new(RobotParams::reference());
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| DataError::Parse {
            line,
            field: content.into(),
            message: "expected `key = value`".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "T_WB" => cfg.t_wb = parse_transform(line, key, value)?,
            "T_BI" => cfg.t_bi = parse_transform(line, key, value)?,
            "T_GM" => cfg.t_gm = parse_transform(line, key, value)?,
            "L" | "r" | "n" | "E" | "E_p" | "E_i" | "E_s" | "I_p" | "I_i" | "I_s" => {
                let v = value.parse::<f64>().map_err(|e| DataError::Parse {
                    line,
                    field: key.into(),
                    message: format!("`{value}`: {e}"),
                })?;
                values.push((key.to_string(), v, line));
            }
            other => {
                return Err(DataError::Parse {
                    line,
                    field: other.into(),
                    message: "unknown key".into(),
                })
            }
        }
    }

    let get = |name: &str| values.iter().rev().find(|(k, _, _)| k == name).map(|v| v.1);
    let required = |name: &str| {
        get(name).ok_or_else(|| DataError::Validation(format!("missing required key `{name}`")))
    };
    let modulus = |name: &str| {
        get(name)
            .or_else(|| get("E"))
            .ok_or_else(|| DataError::Validation(format!("missing `{name}` (or `E`)")))
    };
    let n = required("n")?;
    if n.fract() != 0.0 || n < 0.0 {
        return Err(DataError::Validation(format!(
            "n must be a whole number, got {n}"
        )));
    }
    cfg.params = RobotParams {
        length: required("L")?,
        radius: required("r")?,
        n_backbones: n as usize,
        e_primary: modulus("E_p")?,
        e_secondary: modulus("E_i")?,
        e_emb: modulus("E_s")?,
        i_primary: required("I_p")?,
        i_secondary: required("I_i")?,
        i_emb: required("I_s")?,
    };
    cfg.params
        .validate()
        .map_err(|e| DataError::Validation(e.to_string()))?;
    Ok(cfg)
}

pub fn format_robot_config(cfg: &RobotConfig) -> String {
    let p = &cfg.params;
    let mut s = String::new();
    writeln!(s, "L = {}", p.length).unwrap();
    writeln!(s, "r = {}", p.radius).unwrap();
    writeln!(s, "n = {}", p.n_backbones).unwrap();
    writeln!(s, "E_p = {}", p.e_primary).unwrap();
    writeln!(s, "E_i = {}", p.e_secondary).unwrap();
    writeln!(s, "E_s = {}", p.e_emb).unwrap();
    writeln!(s, "I_p = {}", p.i_primary).unwrap();
    writeln!(s, "I_i = {}", p.i_secondary).unwrap();
    writeln!(s, "I_s = {}", p.i_emb).unwrap();
    writeln!(s, "T_WB = {}", format_transform(&cfg.t_wb)).unwrap();
    writeln!(s, "T_BI = {}", format_transform(&cfg.t_bi)).unwrap();
    writeln!(s, "T_GM = {}", format_transform(&cfg.t_gm)).unwrap();
    s
}

pub fn load_robot_config(path: &Path) -> DataResult<RobotConfig> {
    parse_robot_config(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn save_robot_config(path: &Path, cfg: &RobotConfig) -> DataResult<()> {
    fs::write(path, format_robot_config(cfg)).map_err(io_err(path))
}

/// Frame in which dataset positions are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Image,
    Base,
}

impl Frame {
    fn as_str(self) -> &'static str {
        match self {
            Frame::Image => "image",
            Frame::Base => "base",
        }
    }
}

/// One dataset row as stored in the file (angles in degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub q_s: f64,
    pub theta_deg: f64,
    pub delta_deg: f64,
    pub x: f64,
    pub y: f64,
    pub z: Option<f64>,
}

impl TrajectoryRecord {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z.unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frame: Frame,
    pub records: Vec<TrajectoryRecord>,
}

impl Dataset {
    pub fn has_z(&self) -> bool {
        self.records.first().is_some_and(|r| r.z.is_some())
    }
}

pub fn parse_dataset<R: Read>(mut reader: R) -> DataResult<Dataset> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(io_err(Path::new("<dataset>")))?;

    let mut frame = None;
    for line in text.lines() {
        let Some(pragma) = line.trim().strip_prefix('#') else {
            continue;
        };
        for item in pragma.split_whitespace() {
            match item.split_once('=') {
                Some(("frame", "image")) => frame = Some(Frame::Image),
                Some(("frame", "base")) => frame = Some(Frame::Base),
                Some(("frame", other)) => {
                    return Err(DataError::Frame(format!("unknown frame `{other}`")))
                }
                Some(("schema", v)) if v != SCHEMA_VERSION.to_string() => {
                    return Err(DataError::Validation(format!("unsupported schema {v}")))
                }
                _ => {}
            }
        }
    }
    let frame =
        frame.ok_or_else(|| DataError::Frame("missing `# frame=image|base` line".into()))?;

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected = ["t", "q_s", "theta", "delta", "x", "y"];
    let has_z = match headers.len() {
        6 => false,
        7 if headers[6] == "z" => true,
        _ => false,
    };
    if headers[..headers.len().min(6)] != expected[..] || !(headers.len() == 6 || has_z) {
        return Err(DataError::Parse {
            line: 1,
            field: headers.join(","),
            message: "expected columns t,q_s,theta,delta,x,y[,z]".into(),
        });
    }

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> DataResult<f64> {
            let s = row.get(i).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    line,
                    field: headers[i].clone(),
                    message: format!("`{s}` is not a finite number"),
                })
        };
        records.push(TrajectoryRecord {
            t: num(0)?,
            q_s: num(1)?,
            theta_deg: num(2)?,
            delta_deg: num(3)?,
            x: num(4)?,
            y: num(5)?,
            z: if has_z { Some(num(6)?) } else { None },
        });
    }
    Ok(Dataset { frame, records })
}

pub fn read_dataset(path: &Path) -> DataResult<Dataset> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_dataset(file)
}

pub fn write_dataset<W: Write>(mut out: W, data: &Dataset) -> DataResult<()> {
    let has_z = data.has_z();
    let mut text = format!(
        "# schema={SCHEMA_VERSION}\n# frame={}\n",
        data.frame.as_str()
    );
    text.push_str(if has_z {
        "t,q_s,theta,delta,x,y,z\n"
    } else {
        "t,q_s,theta,delta,x,y\n"
    });
    for r in &data.records {
        write!(
            text,
            "{},{},{},{},{},{}",
            r.t, r.q_s, r.theta_deg, r.delta_deg, r.x, r.y
        )
        .unwrap();
        if has_z {
            write!(text, ",{}", r.z.unwrap_or(0.0)).unwrap();
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<dataset>")))
}

pub fn save_dataset(path: &Path, data: &Dataset) -> DataResult<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_dataset(std::io::BufWriter::new(file), data)
}

/// Converts a dataset into base-frame measurements.
///
/// Image-frame positions are mapped through `T_BI`; a 2-D file observes only
/// the image x and y axes. The marker offset `T_GM` is not removed here: it
/// is applied to the model pose during calibration, since a position-only
/// measurement carries no orientation to remove it with.
pub fn to_measurements(data: &Dataset, cfg: &RobotConfig) -> DataResult<Vec<Measurement>> {
    let has_z = data.has_z();
    let mut out = Vec::with_capacity(data.records.len());
    let mut last_t = f64::NEG_INFINITY;
    for (i, r) in data.records.iter().enumerate() {
        let row = i + 1;
        if r.t < last_t {
            return Err(DataError::Validation(format!(
                "row {row}: time is not monotone"
            )));
        }
        last_t = r.t;
        if !(0.0..=cfg.params.length).contains(&r.q_s) {
            return Err(DataError::Validation(format!(
                "row {row}: q_s = {} outside [0, L = {}]",
                r.q_s, cfg.params.length
            )));
        }
        let psi = ConfigState::from_degrees(r.theta_deg, r.delta_deg)
            .map_err(|e| DataError::Validation(format!("row {row}: {e}")))?;
        let (position, frame) = match data.frame {
            Frame::Base => (r.position(), Rotation3::identity()),
            Frame::Image => (cfg.t_bi.transform_point(&r.position()), cfg.t_bi.rotation),
        };
        out.push(Measurement {
            psi,
            q_s: r.q_s,
            position,
            rotation: None,
            obs_mask: [true, true, has_z, false, false, false],
            frame,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, cfg: &RobotConfig) -> DataResult<Vec<Measurement>> {
    to_measurements(&read_dataset(path)?, cfg)
}

/// Second-order Butterworth low-pass section (bilinear transform with
/// frequency prewarping).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    pub fn butterworth_lowpass(cutoff_hz: f64, sample_hz: f64) -> DataResult<Self> {
        let nyquist_hz = 0.5 * sample_hz;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist_hz) {
            return Err(DataError::InvalidCutoff {
                cutoff_hz,
                nyquist_hz,
            });
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_hz).tan();
        let k2 = k * k;
        let s2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + s2 * k + k2);
        let b0 = k2 * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - s2 * k + k2) * norm],
        })
    }

    /// Steady-state filter state for a unit step input.
    fn initial_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        // (I − Aᵀ) z = b[1:] − a[1:] b0 for the transposed direct form.
        let m = nalgebra::Matrix2::new(1.0 + a1, -1.0, a2, 1.0);
        let rhs = nalgebra::Vector2::new(b1 - a1 * b0, b2 - a2 * b0);
        let z = m.lu().solve(&rhs).unwrap_or_else(nalgebra::Vector2::zeros);
        [z.x, z.y]
    }

    fn run(&self, x: &[f64], z0: [f64; 2]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let (mut z1, mut z2) = (z0[0], z0[1]);
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z1;
                z1 = b1 * xi - a1 * y + z2;
                z2 = b2 * xi - a2 * y;
                y
            })
            .collect()
    }

    /// Zero-phase forward-backward filtering with odd extension at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = 9.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.initial_state();
        let scaled = |v: f64| [zi[0] * v, zi[1] * v];
        let mut y = self.run(&ext, scaled(ext[0]));
        y.reverse();
        let mut y = self.run(&y, scaled(y[0]));
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Low-pass filters the position columns; other columns pass unchanged.
pub fn smooth_trajectory(
    records: &[TrajectoryRecord],
    cutoff_hz: f64,
    sample_hz: f64,
) -> DataResult<Vec<TrajectoryRecord>> {
    let f = Biquad::butterworth_lowpass(cutoff_hz, sample_hz)?;
    let col =
        |g: fn(&TrajectoryRecord) -> f64| f.filtfilt(&records.iter().map(g).collect::<Vec<_>>());
    let xs = col(|r| r.x);
    let ys = col(|r| r.y);
    let zs = col(|r| r.z.unwrap_or(0.0));
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| TrajectoryRecord {
            x: xs[i],
            y: ys[i],
            z: r.z.map(|_| zs[i]),
            ..*r
        })
        .collect())
}

/// Inputs of a synthetic insertion sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub k_true: UncertaintyParams,
    pub theta: f64,
    pub delta: f64,
    pub q_s: Vec<f64>,
    /// Standard deviation of the isotropic position noise (mm).
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Simulated marker positions in the base frame along an insertion sweep,
/// with seeded Gaussian noise. Samples are spaced at 30 Hz.
pub fn generate_synthetic(cfg: &RobotConfig, spec: &SyntheticSpec) -> DataResult<Dataset> {
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(DataError::Validation("noise sigma must be >= 0".into()));
    }
    let psi = ConfigState::new(spec.theta, spec.delta)?;
    let noise =
        Normal::new(0.0, spec.noise_sigma).map_err(|e| DataError::Validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offset = cfg.t_gm.position;
    let mut records = Vec::with_capacity(spec.q_s.len());
    for (j, &q) in spec.q_s.iter().enumerate() {
        if !(0.0..=cfg.params.length).contains(&q) {
            return Err(DataError::Validation(format!(
                "q_s = {q} outside [0, {}]",
                cfg.params.length
            )));
        }
        let tip = crem_pose(&cfg.params, psi, q, &spec.k_true)
            .map_err(|e| e.at(j))?
            .tip;
        let p = tip.transform_point(&offset);
        let mut n = [0.0; 3];
        if spec.noise_sigma > 0.0 {
            n.iter_mut().for_each(|v| *v = noise.sample(&mut rng));
        }
        records.push(TrajectoryRecord {
            t: j as f64 / SYNTHETIC_RATE_HZ,
            q_s: q,
            theta_deg: spec.theta.to_degrees(),
            delta_deg: spec.delta.to_degrees(),
            x: p.x + n[0],
            y: p.y + n[1],
            z: Some(p.z + n[2]),
        });
    }
    Ok(Dataset {
        frame: Frame::Base,
        records,
    })
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
