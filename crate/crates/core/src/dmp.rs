//! Single-primitive position and orientation DMPs.
//!
//! A primitive is a second-order system driven toward its goal by diagonal
//! stiffness/damping gains plus a phase-gated forcing term learned from one
//! demonstration with locally weighted regression. Two representations are
//! supported: the classic form with kernels in the exponential phase `h`,
//! and the stacked-kernel form with kernels in normalized time and a
//! sigmoidal phase (used by the kernel-stacking merge).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SigmoidClock;
use crate::quat::{self, QuatError, UnitQuaternion};
use crate::vec3::{self, Diag3, Vec3};

/// Ridge regularizer for kernels with negligible support.
const REGRESSION_LAMBDA: f64 = 1e-8;
/// A kernel whose total weighted support falls below this is zeroed and flagged.
const SINGULAR_SUPPORT: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TrainError {
    #[error("demonstration has {len} samples, need at least {needed}")]
    InsufficientData { len: usize, needed: usize },
    #[error("demonstration is not uniformly sampled (row {row})")]
    NonUniformSampling { row: usize },
    #[error("demonstration endpoints span more than one hemisphere")]
    HemisphereSpan,
    #[error("gains must be diagonal positive definite")]
    BadGains,
    #[error(transparent)]
    Quat(#[from] QuatError),
}

/// Diagonal stiffness and damping gains.
///
/// Kept diagonal with strictly positive entries, as required by the
/// stability analysis. `critically_damped` picks `D = 2 sqrt(K)` elementwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmpGains {
    pub k: Diag3,
    pub d: Diag3,
}

impl DmpGains {
    pub fn new(k: Diag3, d: Diag3) -> Result<Self, TrainError> {
        if k.iter().chain(d.iter()).any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(TrainError::BadGains);
        }
        Ok(Self { k, d })
    }

    pub fn critically_damped(k: f64) -> Self {
        Self::critically_damped_diag([k, k, k])
    }

    pub fn critically_damped_diag(k: Diag3) -> Self {
        assert!(k.iter().all(|g| *g > 0.0), "stiffness must be positive");
        Self {
            k,
            d: [2.0 * k[0].sqrt(), 2.0 * k[1].sqrt(), 2.0 * k[2].sqrt()],
        }
    }

    pub fn inv_k(&self) -> Diag3 {
        [1.0 / self.k[0], 1.0 / self.k[1], 1.0 / self.k[2]]
    }

    pub fn is_valid(&self) -> bool {
        self.k.iter().chain(self.d.iter()).all(|g| g.is_finite() && *g > 0.0)
    }
}

/// Which variable the kernels live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelForm {
    /// Gaussians in the exponential phase `h`: `psi_i(h) = exp(-a_i (h - c_i)^2)`.
    PhaseKernels,
    /// Gaussians in normalized time: `psi_i(t) = exp(-(t/(tau T) - c_i)^2 / (2 sigma_i^2))`.
    TimeKernels,
}

/// Kernel centers, widths and per-dimension weights of a forcing term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBank {
    pub form: KernelForm,
    pub centers: Vec<f64>,
    /// Amplitude `a_i` for `PhaseKernels`, width `sigma_i` for `TimeKernels`.
    pub widths: Vec<f64>,
    /// One weight vector per Cartesian dimension.
    pub weights: [Vec<f64>; 3],
}

impl KernelBank {
    /// Phase-form bank with centers uniform in time, `c = exp(-gamma t/tau)`
    /// for `t` equally spaced over the demonstration. At `overlap = 1` the
    /// amplitudes make adjacent kernels intersect at `psi = 0.5`; larger
    /// overlap widens them. Weights start at zero.
    pub fn phase_uniform_time(n: usize, gamma: f64, duration: f64, tau: f64) -> Self {
        Self::phase_uniform_time_overlap(n, gamma, duration, tau, 1.0)
    }

    pub fn phase_uniform_time_overlap(
        n: usize,
        gamma: f64,
        duration: f64,
        tau: f64,
        overlap: f64,
    ) -> Self {
        assert!(n >= 2, "need at least 2 kernels");
        assert!(overlap > 0.0);
        let mut centers: Vec<f64> = (0..n)
            .map(|j| (-gamma * (j as f64) / (n as f64 - 1.0) * duration / tau).exp())
            .collect();
        centers.reverse(); // ascending in h
        let mut widths = Vec::with_capacity(n);
        for i in 0..n {
            let gap = if i + 1 < n {
                centers[i + 1] - centers[i]
            } else {
                centers[i] - centers[i - 1]
            };
            widths.push(4.0 * std::f64::consts::LN_2 / (gap * gap * overlap * overlap));
        }
        Self {
            form: KernelForm::PhaseKernels,
            centers,
            widths,
            weights: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Time-form bank with centers equally spaced in `[0, 1]` and constant
    /// widths; at `overlap = 1` adjacent kernels intersect at `psi = 0.5`.
    pub fn time_uniform(n: usize) -> Self {
        Self::time_uniform_overlap(n, 1.0)
    }

    pub fn time_uniform_overlap(n: usize, overlap: f64) -> Self {
        assert!(n >= 2, "need at least 2 kernels");
        assert!(overlap > 0.0);
        let spacing = 1.0 / (n as f64 - 1.0);
        let sigma = overlap * spacing / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        Self {
            form: KernelForm::TimeKernels,
            centers: (0..n).map(|i| i as f64 / (n as f64 - 1.0)).collect(),
            widths: vec![sigma; n],
            weights: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    fn psi(&self, i: usize, x: f64) -> f64 {
        let d = x - self.centers[i];
        match self.form {
            KernelForm::PhaseKernels => (-self.widths[i] * d * d).exp(),
            KernelForm::TimeKernels => {
                let s = self.widths[i];
                (-d * d / (2.0 * s * s)).exp()
            }
        }
    }

    /// Forcing value `(sum w psi / sum psi) * h` at phase `h`.
    ///
    /// The kernel argument is `h` for phase kernels and the normalized time
    /// `t_norm` for time kernels. Returns the value plus a degeneracy flag
    /// set when the kernel support underflowed and the denominator had to be
    /// regularized.
    pub fn forcing_eval(&self, h: f64, t_norm: f64) -> (Vec3, bool) {
        self.forcing_eval_window(h, t_norm, 0, self.len())
    }

    /// Same as [`forcing_eval`](Self::forcing_eval) restricted to the kernel
    /// index range `[lo, hi)`; used by the real-time windowed merge mode.
    pub fn forcing_eval_window(&self, h: f64, t_norm: f64, lo: usize, hi: usize) -> (Vec3, bool) {
        let x = match self.form {
            KernelForm::PhaseKernels => h,
            KernelForm::TimeKernels => t_norm,
        };
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for i in lo..hi {
            let p = self.psi(i, x);
            den += p;
            num[0] += self.weights[0][i] * p;
            num[1] += self.weights[1][i] * p;
            num[2] += self.weights[2][i] * p;
        }
        let degenerate = den < 1e-12;
        if degenerate {
            den += 1e-12;
        }
        (vec3::scale(num, h / den), degenerate)
    }

    /// Largest kernel weight norm; bounds the forcing term via `|f| <= h max_i |w_i|`.
    pub fn max_weight_norm(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            let w = [self.weights[0][i], self.weights[1][i], self.weights[2][i]];
            worst = worst.max(vec3::norm(w));
        }
        worst
    }

    pub fn validate(&self) -> bool {
        let n = self.len();
        n >= 2
            && self.widths.len() == n
            && self.weights.iter().all(|w| w.len() == n)
            && self.widths.iter().all(|s| *s > 0.0 && s.is_finite())
            && self.centers.windows(2).all(|c| c[1] > c[0])
            && self
                .weights
                .iter()
                .flat_map(|w| w.iter())
                .all(|w| w.is_finite())
    }

    /// Like [`validate`](Self::validate) but tolerating duplicated centers,
    /// which stacked banks produce at window boundaries.
    pub fn validate_merged(&self) -> bool {
        let n = self.len();
        n >= 2
            && self.widths.len() == n
            && self.weights.iter().all(|w| w.len() == n)
            && self.widths.iter().all(|s| *s > 0.0 && s.is_finite())
            && self.centers.windows(2).all(|c| c[1] >= c[0])
    }
}

/// Clock parameters of a trained primitive. `Exp` pairs with phase kernels,
/// `Sigmoid` with time kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClockSpec {
    Exp { gamma: f64 },
    Sigmoid { alpha_h: f64, dt: f64 },
}

impl ClockSpec {
    pub fn phase(&self, t: f64, tau: f64, duration: f64) -> f64 {
        match *self {
            ClockSpec::Exp { gamma } => (-gamma * t / tau).exp(),
            ClockSpec::Sigmoid { alpha_h, dt } => {
                SigmoidClock::new(alpha_h, duration, dt, tau).eval(t)
            }
        }
    }

    pub fn kernel_form(&self) -> KernelForm {
        match self {
            ClockSpec::Exp { .. } => KernelForm::PhaseKernels,
            ClockSpec::Sigmoid { .. } => KernelForm::TimeKernels,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            ClockSpec::Exp { gamma } => gamma > 0.0 && gamma.is_finite(),
            ClockSpec::Sigmoid { alpha_h, dt } => {
                alpha_h > 0.0 && alpha_h.is_finite() && dt > 0.0 && dt.is_finite()
            }
        }
    }
}

/// Internal state of a position primitive. `v` is the scaled state of
/// `tau pdot = v`; the physical velocity is `v / tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosState {
    pub p: Vec3,
    pub v: Vec3,
}

/// Internal state of an orientation primitive. `w` is the scaled state of
/// `tau qdot = 1/2 w~ * q`; the physical angular velocity is `w / tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriState {
    pub q: UnitQuaternion,
    pub w: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionDmp {
    pub gains: DmpGains,
    pub kernels: KernelBank,
    pub goal: Vec3,
    pub start: Vec3,
    pub tau: f64,
    pub duration: f64,
    pub clock: ClockSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientationDmp {
    pub gains: DmpGains,
    pub kernels: KernelBank,
    pub goal: UnitQuaternion,
    pub start: UnitQuaternion,
    pub tau: f64,
    pub duration: f64,
    pub clock: ClockSpec,
}

impl PositionDmp {
    pub fn initial_state(&self) -> PosState {
        PosState {
            p: self.start,
            v: [0.0; 3],
        }
    }

    pub fn phase(&self, t: f64) -> f64 {
        self.clock.phase(t, self.tau, self.duration)
    }

    /// Acceleration `vdot` of the classic form:
    /// `tau vdot = K[(g - p) - (g - p0) h + f(h)] - D v`.
    pub fn accel(&self, st: &PosState, h: f64, t_norm: f64) -> Vec3 {
        let (f, _) = self.kernels.forcing_eval(h, t_norm);
        let spring = vec3::sub(self.goal, st.p);
        let d0 = vec3::scale(vec3::sub(self.goal, self.start), h);
        let bracket = vec3::add(vec3::sub(spring, d0), f);
        vec3::scale(
            vec3::sub(vec3::dmul(self.gains.k, bracket), vec3::dmul(self.gains.d, st.v)),
            1.0 / self.tau,
        )
    }

    /// Acceleration of the goal-tracking form used with the sigmoidal clock:
    /// `tau vdot = K (target - p) + K f(h) - D v`.
    pub fn accel_tracking(&self, st: &PosState, target: Vec3, f: Vec3) -> Vec3 {
        let bracket = vec3::add(vec3::sub(target, st.p), f);
        vec3::scale(
            vec3::sub(vec3::dmul(self.gains.k, bracket), vec3::dmul(self.gains.d, st.v)),
            1.0 / self.tau,
        )
    }

    /// One explicit-Euler step of the classic form. Returns the next state
    /// and the acceleration used.
    pub fn step(&self, st: &PosState, h: f64, t_norm: f64, dt: f64) -> (PosState, Vec3) {
        let vdot = self.accel(st, h, t_norm);
        (
            PosState {
                p: vec3::add(st.p, vec3::scale(st.v, dt / self.tau)),
                v: vec3::add(st.v, vec3::scale(vdot, dt)),
            },
            vdot,
        )
    }

    /// Linear target of the single-primitive delayed goal: start to goal over
    /// `[0, duration]`, clamped outside.
    pub fn delayed_goal(&self, t: f64) -> Vec3 {
        let s = (t / self.duration).clamp(0.0, 1.0);
        vec3::add(self.start, vec3::scale(vec3::sub(self.goal, self.start), s))
    }

    pub fn validate(&self) -> bool {
        self.gains.is_valid()
            && self.clock.is_valid()
            && self.kernels.validate_merged()
            && self.kernels.form == self.clock.kernel_form()
            && vec3::is_finite(self.goal)
            && vec3::is_finite(self.start)
            && self.tau > 0.0
            && self.duration > 0.0
    }
}

impl OrientationDmp {
    pub fn initial_state(&self) -> OriState {
        OriState {
            q: self.start,
            w: [0.0; 3],
        }
    }

    pub fn phase(&self, t: f64) -> f64 {
        self.clock.phase(t, self.tau, self.duration)
    }

    /// Angular acceleration of the classic form:
    /// `tau wdot = K[e_o(g, q) - e_o(g, q0) h + f(h)] - D w`.
    pub fn accel(&self, st: &OriState, h: f64, t_norm: f64) -> Vec3 {
        let (f, _) = self.kernels.forcing_eval(h, t_norm);
        let e = quat::qerr(&self.goal, &st.q);
        let d0 = vec3::scale(quat::qerr(&self.goal, &self.start), h);
        let bracket = vec3::add(vec3::sub(e, d0), f);
        vec3::scale(
            vec3::sub(vec3::dmul(self.gains.k, bracket), vec3::dmul(self.gains.d, st.w)),
            1.0 / self.tau,
        )
    }

    /// Angular acceleration of the goal-tracking form:
    /// `tau wdot = K e_o(target, q) + K f(h) - D w`.
    pub fn accel_tracking(&self, st: &OriState, target: &UnitQuaternion, f: Vec3) -> Vec3 {
        let bracket = vec3::add(quat::qerr(target, &st.q), f);
        vec3::scale(
            vec3::sub(vec3::dmul(self.gains.k, bracket), vec3::dmul(self.gains.d, st.w)),
            1.0 / self.tau,
        )
    }

    /// One explicit-Euler step of the classic form; the quaternion advances
    /// through the exact rate integration with `w / tau`.
    pub fn step(&self, st: &OriState, h: f64, t_norm: f64, dt: f64) -> Result<(OriState, Vec3), QuatError> {
        let wdot = self.accel(st, h, t_norm);
        let q = quat::integrate_step(&st.q, &vec3::scale(st.w, 1.0 / self.tau), dt)?;
        Ok((
            OriState {
                q,
                w: vec3::add(st.w, vec3::scale(wdot, dt)),
            },
            wdot,
        ))
    }

    /// Geodesic target of the single-primitive delayed goal: constant-rate
    /// SLERP from start to goal over `[0, duration]`, held outside.
    pub fn delayed_goal(&self, t: f64) -> Result<UnitQuaternion, QuatError> {
        let s = (t / self.duration).clamp(0.0, 1.0);
        let rel = quat::qmul(&self.goal, &quat::conj(&self.start));
        let r = quat::qlog(&rel)?;
        let step = quat::qexp(&quat::RotationVector(vec3::scale(r.0, s)))?;
        Ok(quat::qmul(&step, &self.start))
    }

    pub fn validate(&self) -> bool {
        self.gains.is_valid()
            && self.clock.is_valid()
            && self.kernels.validate_merged()
            && self.kernels.form == self.clock.kernel_form()
            && self.tau > 0.0
            && self.duration > 0.0
            && self.goal.dot(&self.start) >= 0.0
    }
}

/// One sample of a pose trajectory. Velocities and accelerations are
/// physical quantities (`pdot`, `pddot`, spatial `w`, `wdot`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub q: UnitQuaternion,
    pub w: Vec3,
    pub dw: Vec3,
    pub h: f64,
}

impl PoseSample {
    pub fn at_rest(t: f64, p: Vec3, q: UnitQuaternion, h: f64) -> Self {
        Self {
            t,
            p,
            v: [0.0; 3],
            a: [0.0; 3],
            q,
            w: [0.0; 3],
            dw: [0.0; 3],
            h,
        }
    }
}

/// Uniformly sampled time series of pose, twist and acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTrajectory {
    pub dt: f64,
    pub samples: Vec<PoseSample>,
}

impl PoseTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    pub fn last(&self) -> &PoseSample {
        self.samples.last().expect("trajectory has at least 2 samples")
    }

    /// Sum of position increments.
    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| vec3::norm(vec3::sub(w[1].p, w[0].p)))
            .sum()
    }

    /// Sum of rotation angles between consecutive samples, in rad.
    pub fn rotation_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| {
                let rel = quat::qmul(&w[1].q, &quat::conj(&quat::hemisphere_align(&w[1].q, &w[0].q)));
                2.0 * quat::qlog(&rel).map(|r| r.norm()).unwrap_or(0.0)
            })
            .sum()
    }

    pub fn validate(&self) -> bool {
        self.len() >= 2
            && self.dt > 0.0
            && self
                .samples
                .windows(2)
                .all(|w| ((w[1].t - w[0].t) - self.dt).abs() < 1e-6)
            && self.samples.iter().all(|s| (s.q.norm() - 1.0).abs() < 1e-9)
    }
}

/// Training inputs shared by both primitive kinds.
#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub n_kernels: usize,
    pub gains: DmpGains,
    pub clock: ClockSpec,
    pub tau: f64,
    /// Kernel overlap factor; 1.0 places adjacent kernels so they intersect
    /// at `psi = 0.5`.
    pub kernel_overlap: f64,
}

impl TrainSpec {
    pub fn new(n_kernels: usize, gains: DmpGains, clock: ClockSpec, tau: f64) -> Self {
        Self {
            n_kernels,
            gains,
            clock,
            tau,
            kernel_overlap: 1.0,
        }
    }
}

/// A trained model plus the indices of kernels that received no support and
/// were zeroed.
#[derive(Debug, Clone)]
pub struct TrainResult<M> {
    pub model: M,
    pub singular_kernels: Vec<usize>,
}

fn check_demo(demo: &PoseTrajectory, n_kernels: usize) -> Result<(), TrainError> {
    let needed = n_kernels.max(2);
    if demo.len() < needed {
        return Err(TrainError::InsufficientData {
            len: demo.len(),
            needed,
        });
    }
    for (i, w) in demo.samples.windows(2).enumerate() {
        if ((w[1].t - w[0].t) - demo.dt).abs() > 1e-6 {
            return Err(TrainError::NonUniformSampling { row: i + 1 });
        }
    }
    Ok(())
}

/// Locally weighted regression of one weight per kernel and dimension:
/// `w_i = sum_t psi_i(x_t) h_t f_t / (sum_t psi_i(x_t) h_t^2 + lambda)`.
fn fit_weights(
    bank: &mut KernelBank,
    xs: &[f64],
    hs: &[f64],
    targets: &[Vec3],
) -> Vec<usize> {
    let n = bank.len();
    let mut singular = Vec::new();
    for i in 0..n {
        let mut den = 0.0;
        let mut num = [0.0; 3];
        for ((x, h), f) in xs.iter().zip(hs).zip(targets) {
            let p = bank.psi(i, *x);
            den += p * h * h;
            num[0] += p * h * f[0];
            num[1] += p * h * f[1];
            num[2] += p * h * f[2];
        }
        if den < SINGULAR_SUPPORT {
            bank.weights[0][i] = 0.0;
            bank.weights[1][i] = 0.0;
            bank.weights[2][i] = 0.0;
            singular.push(i);
        } else {
            let den = den + REGRESSION_LAMBDA;
            bank.weights[0][i] = num[0] / den;
            bank.weights[1][i] = num[1] / den;
            bank.weights[2][i] = num[2] / den;
        }
    }
    singular
}

/// Per-sample phases and kernel arguments from index-based relative time,
/// which makes training exactly invariant to a uniform time shift.
fn sample_phases(spec: &TrainSpec, n: usize, dt: f64, duration: f64) -> (Vec<f64>, Vec<f64>) {
    let mut hs = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let h = spec.clock.phase(t, spec.tau, duration);
        hs.push(h);
        xs.push(match spec.clock.kernel_form() {
            KernelForm::PhaseKernels => h,
            KernelForm::TimeKernels => t / (spec.tau * duration),
        });
    }
    (hs, xs)
}

fn make_bank(spec: &TrainSpec, duration: f64) -> KernelBank {
    match spec.clock {
        ClockSpec::Exp { gamma } => KernelBank::phase_uniform_time_overlap(
            spec.n_kernels,
            gamma,
            duration,
            spec.tau,
            spec.kernel_overlap,
        ),
        ClockSpec::Sigmoid { .. } => {
            KernelBank::time_uniform_overlap(spec.n_kernels, spec.kernel_overlap)
        }
    }
}

/// Learn a position primitive from a demonstration.
///
/// The regression target comes from inverting the dynamics at every sample:
/// `f_t = K^-1 (tau^2 a + tau D v) + (p - g) + (g - p0) h` for the classic
/// form, and `K^-1 (tau^2 a + tau D v) - (target - p)` for the goal-tracking
/// form with its linear delayed goal.
pub fn train_position(
    demo: &PoseTrajectory,
    spec: &TrainSpec,
) -> Result<TrainResult<PositionDmp>, TrainError> {
    check_demo(demo, spec.n_kernels)?;
    let n = demo.len();
    let duration = (n - 1) as f64 * demo.dt;
    let start = demo.samples[0].p;
    let goal = demo.samples[n - 1].p;
    let (hs, xs) = sample_phases(spec, n, demo.dt, duration);
    let inv_k = spec.gains.inv_k();
    let tau = spec.tau;

    let mut dmp = PositionDmp {
        gains: spec.gains,
        kernels: make_bank(spec, duration),
        goal,
        start,
        tau,
        duration,
        clock: spec.clock,
    };

    let mut targets = Vec::with_capacity(n);
    for (i, s) in demo.samples.iter().enumerate() {
        let drive = vec3::dmul(
            inv_k,
            vec3::add(
                vec3::scale(s.a, tau * tau),
                vec3::dmul(spec.gains.d, vec3::scale(s.v, tau)),
            ),
        );
        let target = match spec.clock {
            ClockSpec::Exp { .. } => vec3::add(
                vec3::add(drive, vec3::sub(s.p, goal)),
                vec3::scale(vec3::sub(goal, start), hs[i]),
            ),
            ClockSpec::Sigmoid { .. } => {
                let moving = dmp.delayed_goal(i as f64 * demo.dt);
                vec3::sub(drive, vec3::sub(moving, s.p))
            }
        };
        targets.push(target);
    }

    let singular = fit_weights(&mut dmp.kernels, &xs, &hs, &targets);
    Ok(TrainResult {
        model: dmp,
        singular_kernels: singular,
    })
}

/// Learn an orientation primitive from a demonstration.
pub fn train_orientation(
    demo: &PoseTrajectory,
    spec: &TrainSpec,
) -> Result<TrainResult<OrientationDmp>, TrainError> {
    check_demo(demo, spec.n_kernels)?;
    let n = demo.len();
    let duration = (n - 1) as f64 * demo.dt;
    let start = demo.samples[0].q;
    let goal = demo.samples[n - 1].q;
    if goal.dot(&start) < 0.0 {
        return Err(TrainError::HemisphereSpan);
    }
    let (hs, xs) = sample_phases(spec, n, demo.dt, duration);
    let inv_k = spec.gains.inv_k();
    let tau = spec.tau;

    let mut dmp = OrientationDmp {
        gains: spec.gains,
        kernels: make_bank(spec, duration),
        goal,
        start,
        tau,
        duration,
        clock: spec.clock,
    };

    let d0 = quat::qerr(&goal, &start);
    let mut targets = Vec::with_capacity(n);
    for (i, s) in demo.samples.iter().enumerate() {
        let drive = vec3::dmul(
            inv_k,
            vec3::add(
                vec3::scale(s.dw, tau * tau),
                vec3::dmul(spec.gains.d, vec3::scale(s.w, tau)),
            ),
        );
        let target = match spec.clock {
            ClockSpec::Exp { .. } => vec3::add(
                vec3::sub(drive, quat::qerr(&goal, &s.q)),
                vec3::scale(d0, hs[i]),
            ),
            ClockSpec::Sigmoid { .. } => {
                let moving = dmp.delayed_goal(i as f64 * demo.dt)?;
                vec3::sub(drive, quat::qerr(&moving, &s.q))
            }
        };
        targets.push(target);
    }

    let singular = fit_weights(&mut dmp.kernels, &xs, &hs, &targets);
    Ok(TrainResult {
        model: dmp,
        singular_kernels: singular,
    })
}

/// Fixed-step rollout of a position primitive (orientation held at identity).
pub fn rollout_position(dmp: &PositionDmp, duration: f64, dt: f64) -> PoseTrajectory {
    let steps = (duration / dt).round() as usize;
    let mut st = dmp.initial_state();
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let h = dmp.phase(t);
        let t_norm = t / (dmp.tau * dmp.duration);
        let (next, vdot) = match dmp.clock {
            ClockSpec::Exp { .. } => dmp.step(&st, h, t_norm, dt),
            ClockSpec::Sigmoid { .. } => {
                let (f, _) = dmp.kernels.forcing_eval(h, t_norm);
                let vdot = dmp.accel_tracking(&st, dmp.delayed_goal(t), f);
                (
                    PosState {
                        p: vec3::add(st.p, vec3::scale(st.v, dt / dmp.tau)),
                        v: vec3::add(st.v, vec3::scale(vdot, dt)),
                    },
                    vdot,
                )
            }
        };
        samples.push(PoseSample {
            t,
            p: st.p,
            v: vec3::scale(st.v, 1.0 / dmp.tau),
            a: vec3::scale(vdot, 1.0 / dmp.tau),
            q: UnitQuaternion::IDENTITY,
            w: [0.0; 3],
            dw: [0.0; 3],
            h,
        });
        st = next;
    }
    PoseTrajectory { dt, samples }
}

/// Fixed-step rollout of an orientation primitive (position held at origin).
pub fn rollout_orientation(
    dmp: &OrientationDmp,
    duration: f64,
    dt: f64,
) -> Result<PoseTrajectory, QuatError> {
    let steps = (duration / dt).round() as usize;
    let mut st = dmp.initial_state();
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let h = dmp.phase(t);
        let t_norm = t / (dmp.tau * dmp.duration);
        let (next, wdot) = match dmp.clock {
            ClockSpec::Exp { .. } => dmp.step(&st, h, t_norm, dt)?,
            ClockSpec::Sigmoid { .. } => {
                let (f, _) = dmp.kernels.forcing_eval(h, t_norm);
                let wdot = dmp.accel_tracking(&st, &dmp.delayed_goal(t)?, f);
                let q = quat::integrate_step(&st.q, &vec3::scale(st.w, 1.0 / dmp.tau), dt)?;
                (
                    OriState {
                        q,
                        w: vec3::add(st.w, vec3::scale(wdot, dt)),
                    },
                    wdot,
                )
            }
        };
        samples.push(PoseSample {
            t,
            p: [0.0; 3],
            v: [0.0; 3],
            a: [0.0; 3],
            q: st.q,
            w: vec3::scale(st.w, 1.0 / dmp.tau),
            dw: vec3::scale(wdot, 1.0 / dmp.tau),
            h,
        });
        st = next;
    }
    Ok(PoseTrajectory { dt, samples })
}


/// Rollout of a position/orientation pair sharing one clock.
pub fn rollout_pair(
    pos: &PositionDmp,
    ori: &OrientationDmp,
    duration: f64,
    dt: f64,
) -> Result<PoseTrajectory, QuatError> {
    let steps = (duration / dt).round() as usize;
    let mut ps = pos.initial_state();
    let mut os = ori.initial_state();
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let h = pos.phase(t);
        let t_norm = t / (pos.tau * pos.duration);
        let (pnext, vdot) = match pos.clock {
            ClockSpec::Exp { .. } => pos.step(&ps, h, t_norm, dt),
            ClockSpec::Sigmoid { .. } => {
                let (f, _) = pos.kernels.forcing_eval(h, t_norm);
                let vdot = pos.accel_tracking(&ps, pos.delayed_goal(t), f);
                (
                    PosState {
                        p: vec3::add(ps.p, vec3::scale(ps.v, dt / pos.tau)),
                        v: vec3::add(ps.v, vec3::scale(vdot, dt)),
                    },
                    vdot,
                )
            }
        };
        let (onext, wdot) = match ori.clock {
            ClockSpec::Exp { .. } => ori.step(&os, h, t_norm, dt)?,
            ClockSpec::Sigmoid { .. } => {
                let (f, _) = ori.kernels.forcing_eval(h, t_norm);
                let wdot = ori.accel_tracking(&os, &ori.delayed_goal(t)?, f);
                let q = quat::integrate_step(&os.q, &vec3::scale(os.w, 1.0 / ori.tau), dt)?;
                (
                    OriState {
                        q,
                        w: vec3::add(os.w, vec3::scale(wdot, dt)),
                    },
                    wdot,
                )
            }
        };
        samples.push(PoseSample {
            t,
            p: ps.p,
            v: vec3::scale(ps.v, 1.0 / pos.tau),
            a: vec3::scale(vdot, 1.0 / pos.tau),
            q: os.q,
            w: vec3::scale(os.w, 1.0 / ori.tau),
            dw: vec3::scale(wdot, 1.0 / ori.tau),
            h,
        });
        ps = pnext;
        os = onext;
    }
    Ok(PoseTrajectory { dt, samples })
}
