//! Merging L sequential pose primitives into one smooth trajectory.
//!
//! Three strategies:
//! - `Switch`: run each primitive until a trigger fires (goal distance or
//!   velocity threshold), then hand the state to the next one.
//! - `MovingTarget`: track a goal that moves at the chosen crossing
//!   velocity, run each primitive for exactly its duration, hand over.
//! - `KernelStack`: stack the kernels of all primitives into a single bank,
//!   drive one rollout with the sigmoidal clock and piecewise delayed goals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SigmoidClock;
use crate::dmp::{
    KernelBank, KernelForm, OrientationDmp, OriState, PoseSample, PoseTrajectory, PositionDmp,
    PosState,
};
use crate::quat::{self, QuatError, RotationVector, UnitQuaternion};
use crate::vec3::{self, Vec3};

/// Terminal goal distance that counts as converged, m and rad.
pub const CONVERGENCE_DIST: f64 = 1e-3;
/// Phase below which the stacked-kernel rollout may stop.
const STACK_PHASE_CUTOFF: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("primitive {primitive} failed its trigger within 5x its duration ({elapsed:.2} s)")]
    Stall { primitive: usize, elapsed: f64 },
    #[error("merge plan needs at least one primitive")]
    EmptyPlan,
    #[error("primitive {0} has a non-positive duration")]
    BadDuration(usize),
    #[error("expected one crossing velocity per primitive ({expected}), got {got}")]
    ParamMismatch { expected: usize, got: usize },
    #[error("strategy requires primitives trained in the {expected:?} form")]
    FormMismatch { expected: KernelForm },
    #[error("kernel stacking requires the same kernel count in every primitive")]
    KernelCountMismatch,
    #[error("primitives must share gains and time scaling")]
    GainMismatch,
    #[error("position and orientation parts of a primitive disagree on duration or tau")]
    PartMismatch,
    #[error(transparent)]
    Quat(#[from] QuatError),
}

/// A trained position/orientation pair with a common clock and duration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosePrimitive {
    pub position: PositionDmp,
    pub orientation: OrientationDmp,
}

impl PosePrimitive {
    pub fn new(position: PositionDmp, orientation: OrientationDmp) -> Result<Self, MergeError> {
        let ok = (position.duration - orientation.duration).abs() < 1e-9
            && (position.tau - orientation.tau).abs() < 1e-12
            && position.clock == orientation.clock;
        if !ok {
            return Err(MergeError::PartMismatch);
        }
        Ok(Self {
            position,
            orientation,
        })
    }

    pub fn duration(&self) -> f64 {
        self.position.duration
    }

    pub fn tau(&self) -> f64 {
        self.position.tau
    }
}

/// Switch rule of the first strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchTrigger {
    /// Switch when both goal distances drop below the thresholds (m, rad).
    GoalDistance { position: f64, orientation: f64 },
    /// Switch when both speeds drop below the thresholds (m/s, rad/s) after
    /// the motion has exceeded three times the thresholds once; the
    /// hysteresis keeps early forcing ripple from firing the trigger during
    /// the ramp-up.
    Velocity { linear: f64, angular: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchParams {
    pub trigger: SwitchTrigger,
}

/// Final crossing velocities per primitive; the last primitive's entry is
/// overridden to zero so the merged motion comes to rest at the final goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingTargetParams {
    pub cross_linear: Vec<Vec3>,
    pub cross_angular: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Switch(SwitchParams),
    MovingTarget(MovingTargetParams),
    KernelStack {
        alpha_h: f64,
        /// Restrict forcing evaluation to the kernels of the active and the
        /// next primitive (the real-time window); must match the full bank
        /// to 1e-6.
        windowed: bool,
    },
}

/// An ordered list of primitives plus the merging strategy.
#[derive(Debug, Clone)]
pub struct MergePlan {
    pub primitives: Vec<PosePrimitive>,
    pub strategy: Strategy,
}

impl MergePlan {
    pub fn new(primitives: Vec<PosePrimitive>, strategy: Strategy) -> Result<Self, MergeError> {
        if primitives.is_empty() {
            return Err(MergeError::EmptyPlan);
        }
        for (l, p) in primitives.iter().enumerate() {
            if !(p.duration() > 0.0) {
                return Err(MergeError::BadDuration(l));
            }
        }
        let first = &primitives[0];
        let shared = primitives.iter().all(|p| {
            p.position.gains == first.position.gains
                && p.orientation.gains == first.orientation.gains
                && (p.tau() - first.tau()).abs() < 1e-12
        });
        if !shared {
            return Err(MergeError::GainMismatch);
        }
        match &strategy {
            Strategy::Switch(_) => {
                if primitives
                    .iter()
                    .any(|p| p.position.kernels.form != KernelForm::PhaseKernels)
                {
                    return Err(MergeError::FormMismatch {
                        expected: KernelForm::PhaseKernels,
                    });
                }
            }
            Strategy::MovingTarget(params) => {
                if primitives
                    .iter()
                    .any(|p| p.position.kernels.form != KernelForm::PhaseKernels)
                {
                    return Err(MergeError::FormMismatch {
                        expected: KernelForm::PhaseKernels,
                    });
                }
                if params.cross_linear.len() != primitives.len()
                    || params.cross_angular.len() != primitives.len()
                {
                    return Err(MergeError::ParamMismatch {
                        expected: primitives.len(),
                        got: params.cross_linear.len().min(params.cross_angular.len()),
                    });
                }
                for (l, (w, p)) in params
                    .cross_angular
                    .iter()
                    .zip(&primitives)
                    .enumerate()
                    .map(|(l, x)| (l, x))
                {
                    if vec3::norm(*w) * p.duration() / 2.0 >= std::f64::consts::PI - 1e-9 {
                        return Err(MergeError::Quat(QuatError::ExpOutOfDomain {
                            norm: vec3::norm(*w) * p.duration() / 2.0,
                        }));
                    }
                    let _ = l;
                }
            }
            Strategy::KernelStack { .. } => {
                if primitives
                    .iter()
                    .any(|p| p.position.kernels.form != KernelForm::TimeKernels)
                {
                    return Err(MergeError::FormMismatch {
                        expected: KernelForm::TimeKernels,
                    });
                }
                let n = first.position.kernels.len();
                if primitives.iter().any(|p| {
                    p.position.kernels.len() != n || p.orientation.kernels.len() != n
                }) {
                    return Err(MergeError::KernelCountMismatch);
                }
            }
        }
        Ok(Self {
            primitives,
            strategy,
        })
    }

    pub fn total_duration(&self) -> f64 {
        self.primitives.iter().map(|p| p.duration()).sum()
    }
}

/// A merged trajectory plus the times at which control switched primitives
/// (empty for the kernel-stack strategy, which has no switch instants).
#[derive(Debug, Clone)]
pub struct MergeOutput {
    pub trajectory: PoseTrajectory,
    pub switch_times: Vec<f64>,
}

/// Dispatch on the plan's strategy.
pub fn merge(plan: &MergePlan, dt: f64) -> Result<MergeOutput, MergeError> {
    match &plan.strategy {
        Strategy::Switch(_) => merge_switch(plan, dt),
        Strategy::MovingTarget(_) => merge_moving_target(plan, dt),
        Strategy::KernelStack { .. } => merge_kernel_stack(plan, dt),
    }
}

fn push_sample(
    samples: &mut Vec<PoseSample>,
    k: usize,
    sample: PoseSample,
) {
    if samples.len() == k {
        samples.push(sample);
    }
    debug_assert!(samples.len() > k);
}

/// First strategy: run each primitive until its trigger fires, then start
/// the next one from the exact current state. The last primitive runs to
/// convergence (goal distance below 1e-3 in both parts).
pub fn merge_switch(plan: &MergePlan, dt: f64) -> Result<MergeOutput, MergeError> {
    let params = match &plan.strategy {
        Strategy::Switch(p) => p,
        _ => panic!("merge_switch called with a different strategy"),
    };
    let tau = plan.primitives[0].tau();
    let mut ps = plan.primitives[0].position.initial_state();
    let mut os = plan.primitives[0].orientation.initial_state();
    let mut samples: Vec<PoseSample> = Vec::new();
    let mut switch_times = Vec::new();
    let mut k = 0usize;

    for (l, prim) in plan.primitives.iter().enumerate() {
        let last = l + 1 == plan.primitives.len();
        let k_start = k;
        let mut armed = false;
        loop {
            let local_t = (k - k_start) as f64 * dt;
            let h = prim.position.phase(local_t);
            let t_norm = local_t / (tau * prim.duration());
            let vdot = prim.position.accel(&ps, h, t_norm);
            let wdot = prim.orientation.accel(&os, h, t_norm);
            push_sample(
                &mut samples,
                k,
                PoseSample {
                    t: k as f64 * dt,
                    p: ps.p,
                    v: vec3::scale(ps.v, 1.0 / tau),
                    a: vec3::scale(vdot, 1.0 / tau),
                    q: os.q,
                    w: vec3::scale(os.w, 1.0 / tau),
                    dw: vec3::scale(wdot, 1.0 / tau),
                    h,
                },
            );

            let pos_dist = vec3::norm(vec3::sub(prim.position.goal, ps.p));
            let ori_dist = quat::qdist(&prim.orientation.goal, &os.q);
            if last {
                if pos_dist < CONVERGENCE_DIST && ori_dist < CONVERGENCE_DIST {
                    return Ok(MergeOutput {
                        trajectory: PoseTrajectory { dt, samples },
                        switch_times,
                    });
                }
            } else {
                let fire = match params.trigger {
                    SwitchTrigger::GoalDistance {
                        position,
                        orientation,
                    } => pos_dist <= position && ori_dist <= orientation,
                    SwitchTrigger::Velocity { linear, angular } => {
                        let lin = vec3::norm(ps.v) / tau;
                        let ang = vec3::norm(os.w) / tau;
                        if lin > 3.0 * linear || ang > 3.0 * angular {
                            armed = true;
                        }
                        armed && lin <= linear && ang <= angular
                    }
                };
                if fire {
                    switch_times.push(k as f64 * dt);
                    break;
                }
            }
            if local_t > 5.0 * prim.duration() {
                return Err(MergeError::Stall {
                    primitive: l,
                    elapsed: local_t,
                });
            }

            ps = PosState {
                p: vec3::add(ps.p, vec3::scale(ps.v, dt / tau)),
                v: vec3::add(ps.v, vec3::scale(vdot, dt)),
            };
            os = OriState {
                q: quat::integrate_step(&os.q, &vec3::scale(os.w, 1.0 / tau), dt)?,
                w: vec3::add(os.w, vec3::scale(wdot, dt)),
            };
            k += 1;
        }
    }
    unreachable!("last primitive returns from the loop")
}

/// Moving target of the second strategy:
/// `p_m(t) = p_m(0) + v_d t` with `p_m(0) = p_d - T v_d`, so that
/// `p_m(T) = p_d`. `t` is the time recovered from the exponential clock via
/// `-tau ln(h) / gamma`.
pub fn moving_target_position(goal: Vec3, cross_vel: Vec3, duration: f64, t: f64) -> Vec3 {
    vec3::add(
        vec3::sub(goal, vec3::scale(cross_vel, duration)),
        vec3::scale(cross_vel, t),
    )
}

/// Orientation moving target:
/// `q_m(t) = exp(t/2 w_d) * q_m(0)` with `q_m(0) = exp(-T/2 w_d) * q_d`,
/// reaching `q_d` at `t = T` with spatial angular velocity `w_d`.
pub fn moving_target_quaternion(
    goal: &UnitQuaternion,
    cross_vel: Vec3,
    duration: f64,
    t: f64,
) -> Result<UnitQuaternion, QuatError> {
    let q_m0 = quat::qmul(
        &quat::qexp(&RotationVector(vec3::scale(cross_vel, -duration / 2.0)))?,
        goal,
    );
    Ok(quat::qmul(
        &quat::qexp(&RotationVector(vec3::scale(cross_vel, t / 2.0)))?,
        &q_m0,
    ))
}

/// Second strategy: each primitive tracks its moving target for exactly its
/// duration, then hands its state to the next; the last primitive uses zero
/// crossing velocity and runs to convergence. The `(1 - h)` prefactor on the
/// tracking terms removes the start-of-motion jump.
pub fn merge_moving_target(plan: &MergePlan, dt: f64) -> Result<MergeOutput, MergeError> {
    let params = match &plan.strategy {
        Strategy::MovingTarget(p) => p,
        _ => panic!("merge_moving_target called with a different strategy"),
    };
    let tau = plan.primitives[0].tau();
    let mut ps = plan.primitives[0].position.initial_state();
    let mut os = plan.primitives[0].orientation.initial_state();
    let mut samples: Vec<PoseSample> = Vec::new();
    let mut switch_times = Vec::new();
    let mut k = 0usize;

    for (l, prim) in plan.primitives.iter().enumerate() {
        let last = l + 1 == plan.primitives.len();
        let (v_d, w_d) = if last {
            ([0.0; 3], [0.0; 3])
        } else {
            (params.cross_linear[l], params.cross_angular[l])
        };
        let gains_p = prim.position.gains;
        let gains_q = prim.orientation.gains;
        let steps_l = (prim.duration() / dt).round() as usize;
        let k_start = k;
        loop {
            let local_t = (k - k_start) as f64 * dt;
            if !last && k - k_start == steps_l {
                // primitive l occupies exactly round(T^l/dt) samples
                switch_times.push(k as f64 * dt);
                break;
            }
            let h = prim.position.phase(local_t);
            let t_norm = local_t / (tau * prim.duration());
            let gate = 1.0 - h;
            let p_m = moving_target_position(prim.position.goal, v_d, prim.duration(), local_t);
            let q_m = moving_target_quaternion(&prim.orientation.goal, w_d, prim.duration(), local_t)?;

            let (f_p, _) = prim.position.kernels.forcing_eval(h, t_norm);
            let (f_q, _) = prim.orientation.kernels.forcing_eval(h, t_norm);
            let vdot = vec3::scale(
                vec3::add(
                    vec3::dmul(
                        gains_p.k,
                        vec3::add(vec3::scale(vec3::sub(p_m, ps.p), gate), f_p),
                    ),
                    vec3::dmul(
                        gains_p.d,
                        vec3::scale(vec3::sub(vec3::scale(v_d, tau), ps.v), gate),
                    ),
                ),
                1.0 / tau,
            );
            let wdot = vec3::scale(
                vec3::add(
                    vec3::dmul(
                        gains_q.k,
                        vec3::add(vec3::scale(quat::qerr(&q_m, &os.q), gate), f_q),
                    ),
                    vec3::dmul(
                        gains_q.d,
                        vec3::scale(vec3::sub(vec3::scale(w_d, tau), os.w), gate),
                    ),
                ),
                1.0 / tau,
            );
            push_sample(
                &mut samples,
                k,
                PoseSample {
                    t: k as f64 * dt,
                    p: ps.p,
                    v: vec3::scale(ps.v, 1.0 / tau),
                    a: vec3::scale(vdot, 1.0 / tau),
                    q: os.q,
                    w: vec3::scale(os.w, 1.0 / tau),
                    dw: vec3::scale(wdot, 1.0 / tau),
                    h,
                },
            );

            if last {
                let pos_dist = vec3::norm(vec3::sub(prim.position.goal, ps.p));
                let ori_dist = quat::qdist(&prim.orientation.goal, &os.q);
                if pos_dist < CONVERGENCE_DIST && ori_dist < CONVERGENCE_DIST {
                    return Ok(MergeOutput {
                        trajectory: PoseTrajectory { dt, samples },
                        switch_times,
                    });
                }
                if local_t > 5.0 * prim.duration() {
                    return Err(MergeError::Stall {
                        primitive: l,
                        elapsed: local_t,
                    });
                }
            }

            ps = PosState {
                p: vec3::add(ps.p, vec3::scale(ps.v, dt / tau)),
                v: vec3::add(ps.v, vec3::scale(vdot, dt)),
            };
            os = OriState {
                q: quat::integrate_step(&os.q, &vec3::scale(os.w, 1.0 / tau), dt)?,
                w: vec3::add(os.w, vec3::scale(wdot, dt)),
            };
            k += 1;
        }
    }
    unreachable!("last primitive returns from the loop")
}

/// Stacked kernel bank of the third strategy, for one Cartesian part.
fn stack_bank(banks: Vec<&KernelBank>, durations: &[f64]) -> KernelBank {
    let total: f64 = durations.iter().sum();
    let n = banks[0].len();
    let mut centers = Vec::with_capacity(n * banks.len());
    let mut widths = Vec::with_capacity(n * banks.len());
    let mut weights = [Vec::new(), Vec::new(), Vec::new()];
    let mut offset = 0.0;
    for (bank, t_l) in banks.iter().zip(durations) {
        // written so that a single window (t_l == total) reproduces the
        // original centers and widths exactly
        let scale = t_l / total;
        for i in 0..n {
            // centers, originally equally spaced in [0, 1], remapped into the
            // primitive's window; widths scaled down by T^l / T
            centers.push(i as f64 / (n as f64 - 1.0) * scale + offset / total);
            widths.push(bank.widths[i] * scale);
        }
        for d in 0..3 {
            weights[d].extend_from_slice(&bank.weights[d]);
        }
        offset += t_l;
    }
    KernelBank {
        form: KernelForm::TimeKernels,
        centers,
        widths,
        weights,
    }
}

/// Merged kernel banks plus the window layout of the stacked DMP.
#[derive(Debug, Clone)]
pub struct KernelStackParams {
    pub alpha_h: f64,
    pub merged_position: KernelBank,
    pub merged_orientation: KernelBank,
    /// Start time of each primitive's window.
    pub window_starts: Vec<f64>,
    pub kernels_per_primitive: usize,
}

/// Stack centers, widths and weights of all primitives into one bank per
/// Cartesian part. Centers are non-decreasing; adjacent windows share their
/// boundary center.
pub fn stack_kernels(plan: &MergePlan) -> Result<KernelStackParams, MergeError> {
    let alpha_h = match plan.strategy {
        Strategy::KernelStack { alpha_h, .. } => alpha_h,
        _ => panic!("stack_kernels called with a different strategy"),
    };
    let durations: Vec<f64> = plan.primitives.iter().map(|p| p.duration()).collect();
    let mut window_starts = Vec::with_capacity(durations.len());
    let mut acc = 0.0;
    for d in &durations {
        window_starts.push(acc);
        acc += d;
    }
    let merged_position = stack_bank(
        plan.primitives.iter().map(|p| &p.position.kernels).collect(),
        &durations,
    );
    let merged_orientation = stack_bank(
        plan.primitives
            .iter()
            .map(|p| &p.orientation.kernels)
            .collect(),
        &durations,
    );
    debug_assert!(merged_position.validate_merged());
    Ok(KernelStackParams {
        alpha_h,
        merged_position,
        merged_orientation,
        window_starts,
        kernels_per_primitive: plan.primitives[0].position.kernels.len(),
    })
}

/// Piecewise delayed goal: linear in position, constant-rate geodesic in
/// orientation, traversing each primitive's start-to-goal displacement over
/// its window and holding outside.
#[derive(Debug, Clone)]
pub struct DelayedGoal {
    windows: Vec<GoalWindow>,
}

#[derive(Debug, Clone)]
struct GoalWindow {
    t_start: f64,
    duration: f64,
    p0: Vec3,
    pd: Vec3,
    q0: UnitQuaternion,
    /// `log(q_d * conj(q0))`: half the window's rotation, applied at the
    /// constant rate `w_m = 2 r / T`.
    r: Vec3,
}

impl DelayedGoal {
    pub fn from_plan(plan: &MergePlan) -> Result<Self, MergeError> {
        let mut windows = Vec::with_capacity(plan.primitives.len());
        let mut t_start = 0.0;
        for prim in &plan.primitives {
            let q0 = prim.orientation.start;
            let qd = quat::hemisphere_align(&q0, &prim.orientation.goal);
            if q0.dot(&qd).abs() < 1e-9 {
                return Err(MergeError::Quat(QuatError::AntipodalPair));
            }
            let r = quat::qlog(&quat::qmul(&qd, &quat::conj(&q0)))?.0;
            windows.push(GoalWindow {
                t_start,
                duration: prim.duration(),
                p0: prim.position.start,
                pd: prim.position.goal,
                q0,
                r,
            });
            t_start += prim.duration();
        }
        Ok(Self { windows })
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        for (l, w) in self.windows.iter().enumerate().rev() {
            if t >= w.t_start {
                return (l, ((t - w.t_start) / w.duration).clamp(0.0, 1.0));
            }
        }
        (0, 0.0)
    }

    /// Piecewise-linear position target; window endpoints land exactly on
    /// the goals.
    pub fn position(&self, t: f64) -> Vec3 {
        let (l, s) = self.locate(t);
        let w = &self.windows[l];
        vec3::add(w.p0, vec3::scale(vec3::sub(w.pd, w.p0), s))
    }

    /// Geodesic orientation target `exp(s r) * q0`, i.e. SLERP from the
    /// window's start to its goal.
    pub fn quaternion(&self, t: f64) -> Result<UnitQuaternion, QuatError> {
        let (l, s) = self.locate(t);
        let w = &self.windows[l];
        Ok(quat::qmul(
            &quat::qexp(&RotationVector(vec3::scale(w.r, s)))?,
            &w.q0,
        ))
    }
}

/// Spec operation wrapper: the delayed goal position at time `t`.
pub fn delayed_goal_position(plan: &MergePlan, t: f64) -> Result<Vec3, MergeError> {
    Ok(DelayedGoal::from_plan(plan)?.position(t))
}

/// Spec operation wrapper: the delayed goal orientation at time `t`.
pub fn delayed_goal_quaternion(plan: &MergePlan, t: f64) -> Result<UnitQuaternion, MergeError> {
    Ok(DelayedGoal::from_plan(plan)?.quaternion(t)?)
}

/// Third strategy: one rollout of the stacked DMP with the sigmoidal clock
/// and the delayed goals; runs until the clock has decayed below 1e-4 and
/// the state is within 1e-3 of the final goal.
pub fn merge_kernel_stack(plan: &MergePlan, dt: f64) -> Result<MergeOutput, MergeError> {
    let windowed = match plan.strategy {
        Strategy::KernelStack { windowed, .. } => windowed,
        _ => panic!("merge_kernel_stack called with a different strategy"),
    };
    let params = stack_kernels(plan)?;
    let goals = DelayedGoal::from_plan(plan)?;
    let tau = plan.primitives[0].tau();
    let total = plan.total_duration();
    let clock = SigmoidClock::new(params.alpha_h, total, dt, tau);
    let first = &plan.primitives[0];
    let lastp = &plan.primitives[plan.primitives.len() - 1];
    let gains_p = first.position.gains;
    let gains_q = first.orientation.gains;
    let n_per = params.kernels_per_primitive;
    let n_all = params.merged_position.len();

    let mut ps = first.position.initial_state();
    let mut os = first.orientation.initial_state();
    let mut samples: Vec<PoseSample> = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        let h = clock.eval(t);
        let t_norm = t / (tau * total);

        let (lo, hi) = if windowed {
            // two primitives' kernels, advanced at window midpoints so the
            // kernels shared across a boundary stay in range on both sides
            let j = params
                .window_starts
                .iter()
                .rposition(|s| t >= *s)
                .unwrap_or(0);
            let mid = params.window_starts[j] + 0.5 * plan.primitives[j].duration();
            let lead = if t < mid { j.saturating_sub(1) } else { j };
            let lead = lead.min(plan.primitives.len().saturating_sub(2));
            (lead * n_per, ((lead + 2) * n_per).min(n_all))
        } else {
            (0, n_all)
        };
        let (f_p, _) = params.merged_position.forcing_eval_window(h, t_norm, lo, hi);
        let (f_q, _) = params
            .merged_orientation
            .forcing_eval_window(h, t_norm, lo, hi);

        let p_m = goals.position(t);
        let q_m = goals.quaternion(t)?;
        let vdot = vec3::scale(
            vec3::sub(
                vec3::dmul(gains_p.k, vec3::add(vec3::sub(p_m, ps.p), f_p)),
                vec3::dmul(gains_p.d, ps.v),
            ),
            1.0 / tau,
        );
        let wdot = vec3::scale(
            vec3::sub(
                vec3::dmul(gains_q.k, vec3::add(quat::qerr(&q_m, &os.q), f_q)),
                vec3::dmul(gains_q.d, os.w),
            ),
            1.0 / tau,
        );
        samples.push(PoseSample {
            t,
            p: ps.p,
            v: vec3::scale(ps.v, 1.0 / tau),
            a: vec3::scale(vdot, 1.0 / tau),
            q: os.q,
            w: vec3::scale(os.w, 1.0 / tau),
            dw: vec3::scale(wdot, 1.0 / tau),
            h,
        });

        let pos_dist = vec3::norm(vec3::sub(lastp.position.goal, ps.p));
        let ori_dist = quat::qdist(&lastp.orientation.goal, &os.q);
        if h < STACK_PHASE_CUTOFF && pos_dist < CONVERGENCE_DIST && ori_dist < CONVERGENCE_DIST {
            return Ok(MergeOutput {
                trajectory: PoseTrajectory { dt, samples },
                switch_times: Vec::new(),
            });
        }
        if t > 5.0 * total + 10.0 {
            return Err(MergeError::Stall {
                primitive: plan.primitives.len() - 1,
                elapsed: t,
            });
        }

        ps = PosState {
            p: vec3::add(ps.p, vec3::scale(ps.v, dt / tau)),
            v: vec3::add(ps.v, vec3::scale(vdot, dt)),
        };
        os = OriState {
            q: quat::integrate_step(&os.q, &vec3::scale(os.w, 1.0 / tau), dt)?,
            w: vec3::add(os.w, vec3::scale(wdot, dt)),
        };
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::dmp::{self, ClockSpec, DmpGains, TrainSpec};
    use crate::io::min_jerk_pose;
    use crate::quat::UnitQuaternion;
    use crate::vec3;
    use approx::assert_abs_diff_eq;

    fn benchmark_primitives(spec: &TrainSpec) -> Vec<PosePrimitive> {
        let (seg1, seg2) = benchmark::demo_segments();
        [seg1, seg2]
            .iter()
            .map(|seg| {
                PosePrimitive::new(
                    dmp::train_position(seg, spec).unwrap().model,
                    dmp::train_orientation(seg, spec).unwrap().model,
                )
                .unwrap()
            })
            .collect()
    }

    fn switch_plan(threshold: f64) -> MergePlan {
        MergePlan::new(
            benchmark_primitives(&benchmark::phase_train_spec()),
            Strategy::Switch(SwitchParams {
                trigger: SwitchTrigger::GoalDistance {
                    position: threshold,
                    orientation: threshold,
                },
            }),
        )
        .unwrap()
    }

    #[test]
    fn primitive_parts_must_agree() {
        let (seg1, seg2) = benchmark::demo_segments();
        let spec = benchmark::phase_train_spec();
        let pos = dmp::train_position(&seg1, &spec).unwrap().model;
        let mut ori = dmp::train_orientation(&seg2, &spec).unwrap().model;
        ori.duration = 7.0;
        assert!(matches!(
            PosePrimitive::new(pos, ori),
            Err(MergeError::PartMismatch)
        ));
    }

    #[test]
    fn single_primitive_switch_matches_plain_rollout() {
        let prims = benchmark_primitives(&benchmark::phase_train_spec());
        let plan = MergePlan::new(
            vec![prims[0].clone()],
            Strategy::Switch(SwitchParams {
                trigger: SwitchTrigger::GoalDistance {
                    position: 1e-3,
                    orientation: 1e-3,
                },
            }),
        )
        .unwrap();
        let out = merge(&plan, 0.01).unwrap();
        assert!(out.switch_times.is_empty());
        let plain = dmp::rollout_pair(
            &prims[0].position,
            &prims[0].orientation,
            out.trajectory.duration(),
            0.01,
        )
        .unwrap();
        for (a, b) in out.trajectory.samples.iter().zip(&plain.samples) {
            assert_eq!(a.p, b.p);
            assert_eq!(a.q, b.q);
            assert_eq!(a.v, b.v);
            assert_eq!(a.w, b.w);
        }
    }

    #[test]
    fn switch_fires_near_the_reported_instant() {
        let out = merge(&switch_plan(0.01), 0.01).unwrap();
        assert_eq!(out.switch_times.len(), 1);
        let t_switch = out.switch_times[0];
        assert!(
            (t_switch - 4.7).abs() <= 0.3,
            "switch at {t_switch}, expected near 4.7 s"
        );
    }

    #[test]
    fn switch_handoff_copies_the_state_exactly() {
        // replaying the second primitive standalone from the switch sample
        // must reproduce the merged tail bit for bit
        let plan = switch_plan(0.01);
        let out = merge(&plan, 0.01).unwrap();
        let k_switch = (out.switch_times[0] / 0.01).round() as usize;
        let s = &out.trajectory.samples[k_switch];
        let tau = plan.primitives[1].tau();
        let mut ps = PosState {
            p: s.p,
            v: vec3::scale(s.v, tau),
        };
        let mut os = OriState {
            q: s.q,
            w: vec3::scale(s.w, tau),
        };
        let prim = &plan.primitives[1];
        for (i, expect) in out.trajectory.samples[k_switch + 1..].iter().enumerate() {
            let local_t = i as f64 * 0.01;
            let h = prim.position.phase(local_t);
            let t_norm = local_t / (tau * prim.duration());
            let (pn, _) = prim.position.step(&ps, h, t_norm, 0.01);
            let (on, _) = prim.orientation.step(&os, h, t_norm, 0.01).unwrap();
            ps = pn;
            os = on;
            assert_eq!(ps.p, expect.p, "position diverged {i} steps after switch");
            assert_eq!(os.q, expect.q, "orientation diverged {i} steps after switch");
        }
    }

    #[test]
    fn switch_stalls_on_unreachable_threshold() {
        let err = merge(&switch_plan(1e-14), 0.01).unwrap_err();
        assert!(matches!(err, MergeError::Stall { primitive: 0, .. }));
    }

    #[test]
    fn switch_velocity_trigger_arms_after_motion() {
        // wide kernels and a slow clock give a smooth speed profile, which
        // is what the velocity rule assumes
        let spec = TrainSpec::new(
            15,
            DmpGains::critically_damped(10.0),
            ClockSpec::Exp { gamma: 1.0 },
            1.0,
        );
        let prims = benchmark_primitives(&spec);
        let plan = MergePlan::new(
            prims,
            Strategy::Switch(SwitchParams {
                trigger: SwitchTrigger::Velocity {
                    linear: 0.02,
                    angular: 0.02,
                },
            }),
        )
        .unwrap();
        let out = merge(&plan, 0.01).unwrap();
        // the trigger must not fire on the resting start
        assert!(out.switch_times[0] > 1.0);
        let last = out.trajectory.last();
        assert!(crate::quat::qdist(&plan.primitives[1].orientation.goal, &last.q) < 1e-3);
    }

    #[test]
    fn moving_target_position_examples() {
        // endpoint identity and zero-velocity degeneration
        let goal = [1.0, 0.0, 0.0];
        let v_d = [0.3, 0.3, 0.3];
        assert_eq!(
            moving_target_position(goal, v_d, 1.0, 1.0),
            [1.0, 0.0, 0.0]
        );
        assert_eq!(
            moving_target_position(goal, [0.0; 3], 1.0, 0.37),
            goal
        );
        // figure values: p_m(0) = p_d - T v_d
        let p0 = moving_target_position(goal, v_d, 1.0, 0.0);
        assert!(vec3::norm(vec3::sub(p0, [0.7, -0.3, -0.3])) < 1e-12);
    }

    #[test]
    fn moving_target_quaternion_examples() {
        let goal = UnitQuaternion::new(0.0, [1.0, 0.0, 0.0]).unwrap();
        let w_d = [0.2, 0.2, 0.2];
        let at_t = moving_target_quaternion(&goal, w_d, 1.0, 1.0).unwrap();
        assert!(crate::quat::qdist(&goal, &at_t) < 1e-10);
        let frozen = moving_target_quaternion(&goal, [0.0; 3], 1.0, 0.63).unwrap();
        assert_eq!(frozen, goal);
        // q_m(0) = exp(-[0.1,0.1,0.1]) * q_d, checked against the closed form
        let q0 = moving_target_quaternion(&goal, w_d, 1.0, 0.0).unwrap();
        let expect = crate::quat::qmul(
            &crate::quat::qexp(&RotationVector([-0.1, -0.1, -0.1])).unwrap(),
            &goal,
        );
        assert!(q0.dot(&expect) > 1.0 - 1e-12);
        // scalar part in closed form: cos(|r|) * 0 - (-r/|r| sin|r|) . eps_d
        let r = 3.0f64.sqrt() * 0.1;
        assert_abs_diff_eq!(q0.eta(), (0.1 / r * r.sin()) * 1.0, epsilon = 1e-12);
    }

    fn mt_plan(cross: f64) -> MergePlan {
        MergePlan::new(
            benchmark_primitives(&benchmark::phase_train_spec()),
            Strategy::MovingTarget(MovingTargetParams {
                cross_linear: vec![[0.0; 3]; 2],
                cross_angular: vec![[cross; 3], [0.0; 3]],
            }),
        )
        .unwrap()
    }

    #[test]
    fn moving_target_rejects_oversized_crossing_velocity() {
        let err = MergePlan::new(
            benchmark_primitives(&benchmark::phase_train_spec()),
            Strategy::MovingTarget(MovingTargetParams {
                cross_linear: vec![[0.0; 3]; 2],
                cross_angular: vec![[2.0; 3], [0.0; 3]], // |w| T / 2 > pi
            }),
        )
        .unwrap_err();
        assert!(matches!(err, MergeError::Quat(QuatError::ExpOutOfDomain { .. })));
    }

    #[test]
    fn moving_target_gate_removes_start_jump() {
        // at t = 0 the (1 - h) prefactors vanish, leaving K f(1) / tau only
        let plan = mt_plan(0.01);
        let out = merge(&plan, 0.01).unwrap();
        let first = &out.trajectory.samples[0];
        let (f, _) = plan.primitives[0]
            .orientation
            .kernels
            .forcing_eval(1.0, 0.0);
        let expect = vec3::scale(
            vec3::dmul(plan.primitives[0].orientation.gains.k, f),
            1.0 / plan.primitives[0].tau(),
        );
        assert!(vec3::norm(vec3::sub(first.dw, expect)) < 1e-12);
    }

    #[test]
    fn moving_target_crosses_the_via_with_the_requested_velocity() {
        let plan = mt_plan(0.01);
        let out = merge(&plan, 0.01).unwrap();
        // primitive 0 occupies exactly round(T/dt) samples
        assert_abs_diff_eq!(out.switch_times[0], 5.0, epsilon = 1e-9);
        let s = &out.trajectory.samples[(5.0 / 0.01) as usize];
        let via = &plan.primitives[0].orientation.goal;
        assert!(crate::quat::qdist(via, &s.q) <= 5e-3, "crossing error too large");
        for axis in 0..3 {
            assert!((s.w[axis] - 0.01).abs() <= 5e-3);
        }
    }

    #[test]
    fn stack_kernels_identity_for_single_primitive() {
        let prims = benchmark_primitives(&benchmark::time_train_spec());
        let plan = MergePlan::new(
            vec![prims[0].clone()],
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: false,
            },
        )
        .unwrap();
        let params = stack_kernels(&plan).unwrap();
        assert_eq!(
            params.merged_position.centers,
            prims[0].position.kernels.centers
        );
        assert_eq!(
            params.merged_position.widths,
            prims[0].position.kernels.widths
        );
    }

    #[test]
    fn stack_kernels_two_equal_windows() {
        // T1 = T2 = 5, N = 3: centers [0, .25, .5] and [.5, .75, 1]
        let (seg1, seg2) = benchmark::demo_segments();
        let mut spec = benchmark::time_train_spec();
        spec.n_kernels = 3;
        let prims: Vec<PosePrimitive> = [seg1, seg2]
            .iter()
            .map(|seg| {
                PosePrimitive::new(
                    dmp::train_position(seg, &spec).unwrap().model,
                    dmp::train_orientation(seg, &spec).unwrap().model,
                )
                .unwrap()
            })
            .collect();
        let plan = MergePlan::new(
            prims,
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: false,
            },
        )
        .unwrap();
        let params = stack_kernels(&plan).unwrap();
        let expect = [0.0, 0.25, 0.5, 0.5, 0.75, 1.0];
        assert_eq!(params.merged_position.centers.len(), 6);
        for (c, e) in params.merged_position.centers.iter().zip(expect) {
            assert_abs_diff_eq!(*c, e, epsilon = 1e-12);
        }
        // widths scaled by T_l / T
        for (w, orig) in params.merged_position.widths[..3]
            .iter()
            .zip(&plan.primitives[0].position.kernels.widths)
        {
            assert_abs_diff_eq!(*w, orig * 0.5, epsilon = 1e-15);
        }
        // merged centers stay in [0, 1], non-decreasing
        assert!(params.merged_position.validate_merged());
        assert!(params
            .merged_position
            .centers
            .iter()
            .all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn delayed_goal_window_boundaries() {
        let prims = benchmark_primitives(&benchmark::time_train_spec());
        let q_start = prims[0].orientation.start;
        let q_via = prims[0].orientation.goal;
        let q_goal = prims[1].orientation.goal;
        let p_plan = MergePlan::new(
            prims,
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: false,
            },
        )
        .unwrap();
        let dg = DelayedGoal::from_plan(&p_plan).unwrap();
        assert!(crate::quat::qdist(&q_start, &dg.quaternion(0.0).unwrap()) < 1e-12);
        assert!(crate::quat::qdist(&q_via, &dg.quaternion(5.0).unwrap()) < 1e-9);
        assert!(crate::quat::qdist(&q_goal, &dg.quaternion(10.0).unwrap()) < 1e-9);
        assert!(crate::quat::qdist(&q_goal, &dg.quaternion(25.0).unwrap()) < 1e-9);
        // midpoint of window 1 equals SLERP(start, via, 0.5) from the oracle
        let mid = dg.quaternion(2.5).unwrap();
        let omega = q_start.dot(&q_via).clamp(-1.0, 1.0).acos();
        let (a, b) = (q_start.as_array(), q_via.as_array());
        let mut expect = [0.0; 4];
        for k in 0..4 {
            expect[k] = ((0.5 * omega).sin() * (a[k] + b[k])) / omega.sin();
        }
        let got = mid.as_array();
        for k in 0..4 {
            assert_abs_diff_eq!(got[k], expect[k], epsilon = 1e-9);
        }
        // position: linear with exact endpoints (trivial here, all zero)
        assert_eq!(dg.position(0.0), [0.0; 3]);
    }

    #[test]
    fn kernel_stack_converges_and_reports_no_switches() {
        let prims = benchmark_primitives(&benchmark::time_train_spec());
        let goal = prims[1].orientation.goal;
        let plan = MergePlan::new(
            prims,
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: false,
            },
        )
        .unwrap();
        let out = merge(&plan, 0.01).unwrap();
        assert!(out.switch_times.is_empty());
        assert!(crate::quat::qdist(&goal, &out.trajectory.last().q) < 1e-3);
        // passes close to the via point
        let m = crate::metrics::compute_metrics(&out, &plan, None);
        assert!(m.via_distances[0].orientation <= 0.05);
    }

    #[test]
    fn kernel_stack_windowed_matches_full_bank() {
        let prims = benchmark_primitives(&benchmark::time_train_spec());
        let full_plan = MergePlan::new(
            prims.clone(),
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: false,
            },
        )
        .unwrap();
        let win_plan = MergePlan::new(
            prims,
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: true,
            },
        )
        .unwrap();
        let full = merge(&full_plan, 0.01).unwrap().trajectory;
        let win = merge(&win_plan, 0.01).unwrap().trajectory;
        assert_eq!(full.len(), win.len());
        for (a, b) in full.samples.iter().zip(&win.samples) {
            assert!(vec3::norm(vec3::sub(a.p, b.p)) < 1e-6);
            assert!(crate::quat::qdist(&a.q, &b.q) < 1e-6);
        }
    }

    #[test]
    fn kernel_stack_single_primitive_matches_plain_rollout() {
        let prims = benchmark_primitives(&benchmark::time_train_spec());
        let prim = prims[0].clone();
        let plan = MergePlan::new(
            vec![prim.clone()],
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: false,
            },
        )
        .unwrap();
        let out = merge(&plan, 0.01).unwrap().trajectory;
        let plain =
            dmp::rollout_pair(&prim.position, &prim.orientation, out.duration(), 0.01).unwrap();
        let amplitude = plain.rotation_length();
        let mut rms = 0.0;
        for (a, b) in out.samples.iter().zip(&plain.samples) {
            let d = 2.0 * crate::quat::qdist(&a.q, &b.q);
            rms += d * d;
        }
        rms = (rms / out.len() as f64).sqrt();
        assert!(rms <= 0.02 * amplitude, "rms {rms} vs amplitude {amplitude}");
    }

    #[test]
    fn all_strategies_reach_the_final_goal() {
        let phase = benchmark_primitives(&benchmark::phase_train_spec());
        let time = benchmark_primitives(&benchmark::time_train_spec());
        let goal_q = phase[1].orientation.goal;
        let plans = [
            MergePlan::new(
                phase.clone(),
                Strategy::Switch(SwitchParams {
                    trigger: SwitchTrigger::GoalDistance {
                        position: 0.01,
                        orientation: 0.01,
                    },
                }),
            )
            .unwrap(),
            MergePlan::new(
                phase,
                Strategy::MovingTarget(MovingTargetParams {
                    cross_linear: vec![[0.0; 3]; 2],
                    cross_angular: vec![[0.01; 3], [0.0; 3]],
                }),
            )
            .unwrap(),
            MergePlan::new(
                time,
                Strategy::KernelStack {
                    alpha_h: 1.0,
                    windowed: false,
                },
            )
            .unwrap(),
        ];
        for plan in &plans {
            let out = merge(plan, 0.01).unwrap();
            let last = out.trajectory.last();
            assert!(vec3::norm(last.p) < 1e-3);
            assert!(crate::quat::qdist(&goal_q, &last.q) < 1e-3);
        }
    }

    #[test]
    fn plan_rejects_mismatched_forms_and_params() {
        let phase = benchmark_primitives(&benchmark::phase_train_spec());
        let err = MergePlan::new(
            phase.clone(),
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: false,
            },
        )
        .unwrap_err();
        assert!(matches!(err, MergeError::FormMismatch { .. }));
        let err = MergePlan::new(
            phase,
            Strategy::MovingTarget(MovingTargetParams {
                cross_linear: vec![[0.0; 3]],
                cross_angular: vec![[0.0; 3]],
            }),
        )
        .unwrap_err();
        assert!(matches!(err, MergeError::ParamMismatch { .. }));
        assert!(matches!(
            MergePlan::new(
                vec![],
                Strategy::Switch(SwitchParams {
                    trigger: SwitchTrigger::GoalDistance {
                        position: 0.01,
                        orientation: 0.01
                    }
                })
            ),
            Err(MergeError::EmptyPlan)
        ));
    }
}
