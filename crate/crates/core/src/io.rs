//! Demonstration ingestion, segmentation, synthetic demo generation,
//! trajectory export and model (de)serialization.
//!
//! Demo CSV schema: header `t,px,py,pz,qw,qx,qy,qz[,vx,vy,vz,wx,wy,wz]`.
//! Trajectory exports carry the full column set
//! `t, p, v, a, q, w, dw, h`; loading is header-driven, so either layout
//! reads back. Numbers are written with 17 significant digits, which
//! round-trips `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmp::{OrientationDmp, PoseSample, PoseTrajectory, PositionDmp};
use crate::merge::PosePrimitive;
use crate::quat::{self, QuatError, RotationVector, UnitQuaternion};
use crate::vec3::{self, Vec3};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing required column '{0}'")]
    MissingColumn(&'static str),
    #[error("non-uniform sampling at row {row}")]
    NonUniformSampling { row: usize },
    #[error("non-unit quaternion at row {row} (norm {norm:.6})")]
    NonUnitQuaternion { row: usize, norm: f64 },
    #[error("trajectory needs at least 2 samples")]
    EmptyTrajectory,
    #[error("no motion above the velocity threshold")]
    NoSegments,
    #[error("unsupported model version {0} (expected {MODEL_VERSION})")]
    BadVersion(u32),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Quat(#[from] QuatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A slice of a demonstration ending at a rest pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start_index: usize,
    /// Inclusive.
    pub end_index: usize,
    pub goal_position: Vec3,
    pub goal_orientation: UnitQuaternion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Write `bytes` to `path` through a temp file and atomic rename, so a
/// failure never leaves partial output behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| IoError::Io(e.error))?;
    Ok(())
}

const FULL_HEADER: &str =
    "t,px,py,pz,vx,vy,vz,ax,ay,az,qw,qx,qy,qz,wx,wy,wz,dwx,dwy,dwz,h";

/// Export a trajectory as CSV (full column set) or the JSON mirror.
pub fn export_trajectory(
    traj: &PoseTrajectory,
    path: &Path,
    format: ExportFormat,
) -> Result<(), IoError> {
    if traj.len() < 2 {
        return Err(IoError::EmptyTrajectory);
    }
    match format {
        ExportFormat::Csv => {
            let mut out = String::with_capacity(traj.len() * 21 * 26);
            out.push_str(FULL_HEADER);
            out.push('\n');
            for s in &traj.samples {
                let q = s.q.as_array();
                let row = [
                    s.t, s.p[0], s.p[1], s.p[2], s.v[0], s.v[1], s.v[2], s.a[0], s.a[1],
                    s.a[2], q[0], q[1], q[2], q[3], s.w[0], s.w[1], s.w[2], s.dw[0], s.dw[1],
                    s.dw[2], s.h,
                ];
                for (i, x) in row.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write!(out, "{x:.16e}").expect("write to string");
                }
                out.push('\n');
            }
            atomic_write(path, out.as_bytes())
        }
        ExportFormat::Json => {
            let json = serde_json::to_vec_pretty(traj)?;
            atomic_write(path, &json)
        }
    }
}

fn parse_field(tok: &str, line: usize, column: usize) -> Result<f64, IoError> {
    tok.trim().parse::<f64>().map_err(|e| IoError::Parse {
        line,
        column,
        message: e.to_string(),
    })
}

struct Columns {
    t: usize,
    p: [usize; 3],
    q: [usize; 4],
    v: Option<[usize; 3]>,
    w: Option<[usize; 3]>,
    a: Option<[usize; 3]>,
    dw: Option<[usize; 3]>,
    h: Option<usize>,
}

fn find(header: &[&str], name: &'static str) -> Result<usize, IoError> {
    header
        .iter()
        .position(|c| c.trim() == name)
        .ok_or(IoError::MissingColumn(name))
}

fn find3(header: &[&str], names: [&'static str; 3]) -> Option<[usize; 3]> {
    let a = header.iter().position(|c| c.trim() == names[0])?;
    let b = header.iter().position(|c| c.trim() == names[1])?;
    let c = header.iter().position(|c| c.trim() == names[2])?;
    Some([a, b, c])
}

impl Columns {
    fn from_header(header: &[&str]) -> Result<Self, IoError> {
        Ok(Columns {
            t: find(header, "t")?,
            p: [find(header, "px")?, find(header, "py")?, find(header, "pz")?],
            q: [
                find(header, "qw")?,
                find(header, "qx")?,
                find(header, "qy")?,
                find(header, "qz")?,
            ],
            v: find3(header, ["vx", "vy", "vz"]),
            w: find3(header, ["wx", "wy", "wz"]),
            a: find3(header, ["ax", "ay", "az"]),
            dw: find3(header, ["dwx", "dwy", "dwz"]),
            h: header.iter().position(|c| c.trim() == "h"),
        })
    }
}

/// Load a demonstration CSV.
///
/// Quaternions are normalized (rows further than 1e-3 from unit norm are
/// rejected) and sign-fixed so consecutive samples stay on one hemisphere.
/// Missing velocities are filled by finite differences (log-map differences
/// for the angular part); accelerations likewise when absent.
pub fn load_demo(path: &Path) -> Result<PoseTrajectory, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or(IoError::EmptyTrajectory)?;
    let header: Vec<&str> = header_line.split(',').collect();
    let cols = Columns::from_header(&header)?;

    let mut samples: Vec<PoseSample> = Vec::new();
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        let toks: Vec<&str> = line.split(',').collect();
        let get = |c: usize| -> Result<f64, IoError> {
            let tok = toks.get(c).ok_or(IoError::Parse {
                line: line_no,
                column: c + 1,
                message: "missing field".into(),
            })?;
            parse_field(tok, line_no, c + 1)
        };
        let get3 = |c: [usize; 3]| -> Result<Vec3, IoError> {
            Ok([get(c[0])?, get(c[1])?, get(c[2])?])
        };
        let row = samples.len();
        let qraw = [get(cols.q[0])?, get(cols.q[1])?, get(cols.q[2])?, get(cols.q[3])?];
        let norm = (qraw.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let q = UnitQuaternion::from_array(qraw)
            .map_err(|_| IoError::NonUnitQuaternion { row, norm })?;
        samples.push(PoseSample {
            t: get(cols.t)?,
            p: get3(cols.p)?,
            v: cols.v.map(get3).transpose()?.unwrap_or([0.0; 3]),
            a: cols.a.map(get3).transpose()?.unwrap_or([0.0; 3]),
            q,
            w: cols.w.map(get3).transpose()?.unwrap_or([0.0; 3]),
            dw: cols.dw.map(get3).transpose()?.unwrap_or([0.0; 3]),
            h: cols.h.map(get).transpose()?.unwrap_or(0.0),
        });
    }

    if samples.len() < 2 {
        return Err(IoError::EmptyTrajectory);
    }
    let dt = samples[1].t - samples[0].t;
    if dt <= 0.0 {
        return Err(IoError::NonUniformSampling { row: 1 });
    }
    for i in 1..samples.len() {
        if ((samples[i].t - samples[i - 1].t) - dt).abs() > 1e-6 {
            return Err(IoError::NonUniformSampling { row: i });
        }
    }

    // hemisphere continuity: flip signs so consecutive dots stay >= 0
    for i in 1..samples.len() {
        if samples[i].q.dot(&samples[i - 1].q) < 0.0 {
            samples[i].q = samples[i].q.flipped();
        }
    }

    let mut traj = PoseTrajectory { dt, samples };
    if cols.v.is_none() {
        fill_linear_velocity(&mut traj);
    }
    if cols.w.is_none() {
        fill_angular_velocity(&mut traj)?;
    }
    if cols.a.is_none() {
        fill_linear_acceleration(&mut traj);
    }
    if cols.dw.is_none() {
        fill_angular_acceleration(&mut traj);
    }
    Ok(traj)
}

fn fill_linear_velocity(traj: &mut PoseTrajectory) {
    let n = traj.len();
    let dt = traj.dt;
    let p: Vec<Vec3> = traj.samples.iter().map(|s| s.p).collect();
    for i in 0..n {
        traj.samples[i].v = if i == 0 {
            vec3::scale(vec3::sub(p[1], p[0]), 1.0 / dt)
        } else if i == n - 1 {
            vec3::scale(vec3::sub(p[n - 1], p[n - 2]), 1.0 / dt)
        } else {
            vec3::scale(vec3::sub(p[i + 1], p[i - 1]), 1.0 / (2.0 * dt))
        };
    }
}

/// `w_t = (2/dt) log(q_{t+1} * conj(q_t))`, last sample copying its
/// predecessor.
fn fill_angular_velocity(traj: &mut PoseTrajectory) -> Result<(), QuatError> {
    let n = traj.len();
    let dt = traj.dt;
    let q: Vec<UnitQuaternion> = traj.samples.iter().map(|s| s.q).collect();
    for i in 0..n - 1 {
        let rel = quat::qmul(&q[i + 1], &quat::conj(&q[i]));
        traj.samples[i].w = vec3::scale(quat::qlog(&rel)?.0, 2.0 / dt);
    }
    traj.samples[n - 1].w = traj.samples[n - 2].w;
    Ok(())
}

fn fill_linear_acceleration(traj: &mut PoseTrajectory) {
    let n = traj.len();
    let dt = traj.dt;
    let v: Vec<Vec3> = traj.samples.iter().map(|s| s.v).collect();
    for i in 0..n {
        traj.samples[i].a = if i == 0 {
            vec3::scale(vec3::sub(v[1], v[0]), 1.0 / dt)
        } else if i == n - 1 {
            vec3::scale(vec3::sub(v[n - 1], v[n - 2]), 1.0 / dt)
        } else {
            vec3::scale(vec3::sub(v[i + 1], v[i - 1]), 1.0 / (2.0 * dt))
        };
    }
}

fn fill_angular_acceleration(traj: &mut PoseTrajectory) {
    let n = traj.len();
    let dt = traj.dt;
    let w: Vec<Vec3> = traj.samples.iter().map(|s| s.w).collect();
    for i in 0..n {
        traj.samples[i].dw = if i == 0 {
            vec3::scale(vec3::sub(w[1], w[0]), 1.0 / dt)
        } else if i == n - 1 {
            vec3::scale(vec3::sub(w[n - 1], w[n - 2]), 1.0 / dt)
        } else {
            vec3::scale(vec3::sub(w[i + 1], w[i - 1]), 1.0 / (2.0 * dt))
        };
    }
}

/// Split a demonstration at rest points: samples whose combined speed
/// `max(|v|, |w|)` stays below `v_thresh` between motion bursts. Each
/// segment's goal is its last pose.
pub fn segment_zero_velocity(
    demo: &PoseTrajectory,
    v_thresh: f64,
) -> Result<Vec<Segment>, IoError> {
    let speed: Vec<f64> = demo
        .samples
        .iter()
        .map(|s| vec3::norm(s.v).max(vec3::norm(s.w)))
        .collect();
    let n = speed.len();

    // maximal runs of above-threshold motion
    let mut bursts: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if speed[i] > v_thresh {
            let start = i;
            while i < n && speed[i] > v_thresh {
                i += 1;
            }
            bursts.push((start, i - 1));
        } else {
            i += 1;
        }
    }
    if bursts.is_empty() {
        return Err(IoError::NoSegments);
    }

    // cut at the slowest sample inside each inter-burst gap
    let mut cuts: Vec<usize> = Vec::new();
    for pair in bursts.windows(2) {
        let (gap_lo, gap_hi) = (pair[0].1 + 1, pair[1].0);
        let cut = (gap_lo..=gap_hi)
            .min_by(|a, b| speed[*a].total_cmp(&speed[*b]))
            .expect("non-empty gap");
        cuts.push(cut);
    }

    let mut segments = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for cut in cuts.iter().copied().chain(std::iter::once(n - 1)) {
        let last = &demo.samples[cut];
        segments.push(Segment {
            start_index: start,
            end_index: cut,
            goal_position: last.p,
            goal_orientation: last.q,
        });
        start = cut + 1;
    }
    Ok(segments)
}

/// Copy one segment out of a demonstration.
pub fn extract_segment(demo: &PoseTrajectory, seg: &Segment) -> PoseTrajectory {
    PoseTrajectory {
        dt: demo.dt,
        samples: demo.samples[seg.start_index..=seg.end_index].to_vec(),
    }
}

/// Quintic minimum-jerk profile `s(u) = 10u^3 - 15u^4 + 6u^5` applied per
/// position axis and as the SLERP parameter of the orientation geodesic.
/// Boundary velocities and accelerations are zero.
pub fn min_jerk_pose(
    start: (Vec3, UnitQuaternion),
    goal: (Vec3, UnitQuaternion),
    duration: f64,
    dt: f64,
) -> Result<PoseTrajectory, IoError> {
    assert!(duration > 0.0 && dt > 0.0);
    let (p0, q0) = start;
    let (p1, q1raw) = goal;
    if q0.dot(&q1raw).abs() < 1e-9 {
        return Err(IoError::Quat(QuatError::AntipodalPair));
    }
    let q1 = quat::hemisphere_align(&q0, &q1raw);
    let r = quat::qlog(&quat::qmul(&q1, &quat::conj(&q0)))?.0;
    let dp = vec3::sub(p1, p0);

    let steps = (duration / dt).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let u = k as f64 / steps as f64;
        let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
        let sd = 30.0 * u * u * (1.0 - u) * (1.0 - u) / duration;
        let sdd = (60.0 * u - 180.0 * u * u + 120.0 * u * u * u) / (duration * duration);
        let q = quat::qmul(&quat::qexp(&RotationVector(vec3::scale(r, s)))?, &q0);
        samples.push(PoseSample {
            t: k as f64 * dt,
            p: vec3::add(p0, vec3::scale(dp, s)),
            v: vec3::scale(dp, sd),
            a: vec3::scale(dp, sdd),
            q,
            w: vec3::scale(r, 2.0 * sd),
            dw: vec3::scale(r, 2.0 * sdd),
            h: 0.0,
        });
    }
    Ok(PoseTrajectory { dt, samples })
}

/// Versioned on-disk form of a trained primitive pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub position: PositionDmp,
    pub orientation: OrientationDmp,
}

pub fn save_model(path: &Path, primitive: &PosePrimitive) -> Result<(), IoError> {
    let file = ModelFile {
        version: MODEL_VERSION,
        position: primitive.position.clone(),
        orientation: primitive.orientation.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn load_model(path: &Path) -> Result<PosePrimitive, IoError> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.version != MODEL_VERSION {
        return Err(IoError::BadVersion(file.version));
    }
    if !file.position.validate() {
        return Err(IoError::InvalidModel("position primitive".into()));
    }
    if !file.orientation.validate() {
        return Err(IoError::InvalidModel("orientation primitive".into()));
    }
    PosePrimitive::new(file.position, file.orientation)
        .map_err(|e| IoError::InvalidModel(e.to_string()))
}
