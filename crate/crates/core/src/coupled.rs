//! Coupled bimanual DMPs: two arm primitives plus one relative primitive
//! linked by coupling forces, with numerical Lyapunov monitors for the three
//! coupling cases.
//!
//! Case I couples at the acceleration level, Case II at the velocity level,
//! Case III at both. The relative primitive is always integrated decoupled.
//! Orientation quantities follow the coupled-analysis convention with the
//! doubled vector error `e = 2 vec(g * conj(q))`; the relative pose and its
//! velocities are expressed in the right-hand frame, and left-arm orientation
//! forces are the frame-rotated mirrors `-q_lr * f_rl * conj(q_lr)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merge::PosePrimitive;
use crate::quat::{self, QuatError, UnitQuaternion};
use crate::vec3::{self, Diag3, Vec3};

/// Per-step Lyapunov increase tolerance: `1e-9 * (1 + V)`.
const STEP_TOL: f64 = 1e-9;
/// Terminal convergence threshold on goal distances and speeds.
const CONVERGENCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CoupledError {
    #[error("coupling gains must be diagonal positive definite")]
    BadGains,
    #[error("arm and relative primitives must share gains and tau")]
    GainMismatch,
    #[error("stability verification found {} violation(s)", .0.violations.len())]
    StabilityViolation(Box<StabilityReport>),
    #[error(transparent)]
    Quat(#[from] QuatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingCase {
    Case1,
    Case2,
    Case3,
}

/// Two arm primitives, one relative primitive and the coupling gains.
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    pub right: PosePrimitive,
    pub left: PosePrimitive,
    pub relative: PosePrimitive,
    pub k_f: Diag3,
    pub d_f: Diag3,
    pub case: CouplingCase,
}

/// State of both arms. Relative quantities are derived on demand and never
/// stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub p_r: Vec3,
    pub v_r: Vec3,
    pub q_r: UnitQuaternion,
    pub w_r: Vec3,
    pub p_l: Vec3,
    pub v_l: Vec3,
    pub q_l: UnitQuaternion,
    pub w_l: Vec3,
}

impl CoupledState {
    pub fn relative_position(&self) -> Vec3 {
        vec3::sub(self.p_r, self.p_l)
    }

    pub fn relative_velocity(&self) -> Vec3 {
        vec3::sub(self.v_r, self.v_l)
    }

    /// `q_rl = q_r * conj(q_l)`.
    pub fn relative_quaternion(&self) -> UnitQuaternion {
        quat::qmul(&self.q_r, &quat::conj(&self.q_l))
    }

    /// Angular velocity of `q_rl`: `w_r - q_rl * w_l * conj(q_rl)`.
    pub fn relative_angular_velocity(&self) -> Vec3 {
        let q_rl = self.relative_quaternion();
        vec3::sub(self.w_r, quat::rotate(&q_rl, self.w_l))
    }
}

/// State of the relative primitive (expressed in the right-hand frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelState {
    pub p: Vec3,
    pub v: Vec3,
    pub q: UnitQuaternion,
    pub w: Vec3,
}

/// The eight coupling forces. Each case leaves a characteristic zero
/// pattern: Case I has `f_p = f_q = 0`, Case II has `f_v = f_w = 0`,
/// Case III activates all four families.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CouplingForces {
    pub f_p_rl: Vec3,
    pub f_p_lr: Vec3,
    pub f_v_rl: Vec3,
    pub f_v_lr: Vec3,
    pub f_q_rl: Vec3,
    pub f_q_lr: Vec3,
    pub f_w_rl: Vec3,
    pub f_w_lr: Vec3,
}

/// Goal-consistency record: the equilibrium coincides with the arm goals
/// iff `g_rel = g_r - g_l` (position) and `g_rel = g_r * conj(g_l)`
/// (orientation).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GoalConsistency {
    pub position_residual: f64,
    pub orientation_residual: f64,
    pub consistent: bool,
    /// Lyapunov values evaluated at the arm-goal rest point; nonzero values
    /// flag an inconsistent relative goal.
    pub v_p_at_arm_goals: f64,
    pub v_q_at_arm_goals: f64,
}

impl CoupledSystem {
    pub fn new(
        right: PosePrimitive,
        left: PosePrimitive,
        relative: PosePrimitive,
        k_f: Diag3,
        d_f: Diag3,
        case: CouplingCase,
    ) -> Result<Self, CoupledError> {
        if k_f.iter().chain(d_f.iter()).any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(CoupledError::BadGains);
        }
        let shared = right.position.gains == left.position.gains
            && right.position.gains == relative.position.gains
            && right.orientation.gains == left.orientation.gains
            && right.orientation.gains == relative.orientation.gains
            && (right.tau() - left.tau()).abs() < 1e-12
            && (right.tau() - relative.tau()).abs() < 1e-12;
        if !shared {
            return Err(CoupledError::GainMismatch);
        }
        // D_k = K^-1 D must be positive definite; automatic for diagonal
        // positive gains, asserted here to keep the precondition visible.
        let k = right.orientation.gains.k;
        let d = right.orientation.gains.d;
        debug_assert!((0..3).all(|i| d[i] / k[i] > 0.0));
        Ok(Self {
            right,
            left,
            relative,
            k_f,
            d_f,
            case,
        })
    }

    pub fn tau(&self) -> f64 {
        self.right.tau()
    }

    pub fn position_gains(&self) -> (Diag3, Diag3) {
        (self.right.position.gains.k, self.right.position.gains.d)
    }

    pub fn orientation_gains(&self) -> (Diag3, Diag3) {
        (self.right.orientation.gains.k, self.right.orientation.gains.d)
    }

    pub fn goal_state(&self) -> CoupledState {
        CoupledState {
            p_r: self.right.position.goal,
            v_r: [0.0; 3],
            q_r: self.right.orientation.goal,
            w_r: [0.0; 3],
            p_l: self.left.position.goal,
            v_l: [0.0; 3],
            q_l: self.left.orientation.goal,
            w_l: [0.0; 3],
        }
    }

    pub fn relative_goal_state(&self) -> RelState {
        RelState {
            p: self.relative.position.goal,
            v: [0.0; 3],
            q: self.relative.orientation.goal,
            w: [0.0; 3],
        }
    }

    pub fn goal_consistency(&self) -> GoalConsistency {
        let expected_p = vec3::sub(self.right.position.goal, self.left.position.goal);
        let position_residual = vec3::norm(vec3::sub(self.relative.position.goal, expected_p));
        let expected_q = quat::qmul(
            &self.right.orientation.goal,
            &quat::conj(&self.left.orientation.goal),
        );
        let orientation_residual = quat::qdist(&self.relative.orientation.goal, &expected_q);
        let st = self.goal_state();
        GoalConsistency {
            position_residual,
            orientation_residual,
            consistent: position_residual < 1e-9 && orientation_residual < 1e-9,
            v_p_at_arm_goals: lyapunov_position(self, &st),
            v_q_at_arm_goals: lyapunov_orientation(self, &st),
        }
    }
}

/// Doubled vector error of the coupled analysis: `2 vec(g * conj(q))`.
fn e2(g: &UnitQuaternion, q: &UnitQuaternion) -> Vec3 {
    vec3::scale(quat::qerr(g, q), 2.0)
}

/// Chord energy `V_e(q1, q2) = (eta1 - eta2)^2 + |eps1 - eps2|^2`.
pub fn v_e(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let (aa, ba) = (a.as_array(), b.as_array());
    (0..4).map(|i| (aa[i] - ba[i]) * (aa[i] - ba[i])).sum()
}

/// Evaluate the case's coupling forces at the given arm and relative states.
pub fn coupling_eval(sys: &CoupledSystem, st: &CoupledState, rel: &RelState) -> CouplingForces {
    let p_rl = st.relative_position();
    let v_rl = st.relative_velocity();
    let q_rl = st.relative_quaternion();
    let w_rl = st.relative_angular_velocity();
    let q_lr = quat::conj(&q_rl);

    // spring/damper terms toward the relative primitive's current state
    let spring_p = vec3::dmul(sys.k_f, vec3::sub(rel.p, p_rl));
    let damp_v = vec3::dmul(sys.d_f, vec3::sub(rel.v, v_rl));
    let spring_q = vec3::dmul(sys.k_f, e2(&rel.q, &q_rl));
    let damp_w = vec3::dmul(sys.d_f, vec3::sub(rel.w, w_rl));

    let mut f = CouplingForces::default();
    match sys.case {
        CouplingCase::Case1 => {
            f.f_v_rl = vec3::add(spring_p, damp_v);
            f.f_v_lr = vec3::neg(f.f_v_rl);
            f.f_w_rl = vec3::add(spring_q, damp_w);
            f.f_w_lr = vec3::neg(quat::rotate(&q_lr, f.f_w_rl));
        }
        CouplingCase::Case2 => {
            f.f_p_rl = spring_p;
            f.f_p_lr = vec3::neg(f.f_p_rl);
            f.f_q_rl = spring_q;
            f.f_q_lr = vec3::neg(quat::rotate(&q_lr, f.f_q_rl));
        }
        CouplingCase::Case3 => {
            f.f_p_rl = spring_p;
            f.f_p_lr = vec3::neg(f.f_p_rl);
            f.f_v_rl = damp_v;
            f.f_v_lr = vec3::neg(f.f_v_rl);
            f.f_q_rl = spring_q;
            f.f_q_lr = vec3::neg(quat::rotate(&q_lr, f.f_q_rl));
            f.f_w_rl = damp_w;
            f.f_w_lr = vec3::neg(quat::rotate(&q_lr, f.f_w_rl));
        }
    }
    f
}

fn arm_accels(
    sys: &CoupledSystem,
    st: &CoupledState,
    f: &CouplingForces,
    h: f64,
) -> ([Vec3; 2], [Vec3; 2]) {
    let tau = sys.tau();
    let (kp, dp) = sys.position_gains();
    let (kq, dq) = sys.orientation_gains();

    let pos_accel = |prim: &PosePrimitive, p: Vec3, v: Vec3, fc: Vec3| -> Vec3 {
        let (frc, _) = prim.position.kernels.forcing_eval(h, 0.0);
        let spring = vec3::sub(prim.position.goal, p);
        let d0 = vec3::scale(vec3::sub(prim.position.goal, prim.position.start), h);
        let bracket = vec3::add(vec3::sub(spring, d0), frc);
        vec3::scale(
            vec3::add(vec3::sub(vec3::dmul(kp, bracket), vec3::dmul(dp, v)), fc),
            1.0 / tau,
        )
    };
    let ori_accel = |prim: &PosePrimitive, q: &UnitQuaternion, w: Vec3, fc: Vec3| -> Vec3 {
        let (frc, _) = prim.orientation.kernels.forcing_eval(h, 0.0);
        let e = e2(&prim.orientation.goal, q);
        let d0 = vec3::scale(e2(&prim.orientation.goal, &prim.orientation.start), h);
        let bracket = vec3::add(vec3::sub(e, d0), frc);
        vec3::scale(
            vec3::add(vec3::sub(vec3::dmul(kq, bracket), vec3::dmul(dq, w)), fc),
            1.0 / tau,
        )
    };

    let vdot = [
        pos_accel(&sys.right, st.p_r, st.v_r, f.f_v_rl),
        pos_accel(&sys.left, st.p_l, st.v_l, f.f_v_lr),
    ];
    let wdot = [
        ori_accel(&sys.right, &st.q_r, st.w_r, f.f_w_rl),
        ori_accel(&sys.left, &st.q_l, st.w_l, f.f_w_lr),
    ];
    (vdot, wdot)
}

/// One semi-implicit Euler step of the relative primitive alone.
///
/// Kept as the single code path for the relative dynamics so that enabling
/// arm coupling cannot perturb it (the decoupling ablation compares runs of
/// this exact function).
pub fn step_relative(sys: &CoupledSystem, rel: &RelState, h: f64, dt: f64) -> Result<RelState, QuatError> {
    let tau = sys.tau();
    let (kp, dp) = sys.position_gains();
    let (kq, dq) = sys.orientation_gains();
    let prim = &sys.relative;

    let (frc_p, _) = prim.position.kernels.forcing_eval(h, 0.0);
    let spring = vec3::sub(prim.position.goal, rel.p);
    let d0 = vec3::scale(vec3::sub(prim.position.goal, prim.position.start), h);
    let vdot = vec3::scale(
        vec3::sub(
            vec3::dmul(kp, vec3::add(vec3::sub(spring, d0), frc_p)),
            vec3::dmul(dp, rel.v),
        ),
        1.0 / tau,
    );

    let (frc_q, _) = prim.orientation.kernels.forcing_eval(h, 0.0);
    let e = e2(&prim.orientation.goal, &rel.q);
    let d0q = vec3::scale(e2(&prim.orientation.goal, &prim.orientation.start), h);
    let wdot = vec3::scale(
        vec3::sub(
            vec3::dmul(kq, vec3::add(vec3::sub(e, d0q), frc_q)),
            vec3::dmul(dq, rel.w),
        ),
        1.0 / tau,
    );

    let v = vec3::add(rel.v, vec3::scale(vdot, dt));
    let w = vec3::add(rel.w, vec3::scale(wdot, dt));
    Ok(RelState {
        p: vec3::add(rel.p, vec3::scale(v, dt / tau)),
        v,
        q: quat::integrate_step(&rel.q, &vec3::scale(w, 1.0 / tau), dt)?,
        w,
    })
}

/// One semi-implicit Euler step of the full coupled system: velocities are
/// updated first, then poses advance with the new velocities. Coupling is
/// injected at the level each case prescribes; the relative primitive is
/// integrated fully decoupled.
pub fn coupled_step(
    sys: &CoupledSystem,
    st: &CoupledState,
    rel: &RelState,
    h: f64,
    dt: f64,
) -> Result<(CoupledState, RelState), QuatError> {
    let tau = sys.tau();
    let f = coupling_eval(sys, st, rel);
    let (vdot, wdot) = arm_accels(sys, st, &f, h);

    let v_r = vec3::add(st.v_r, vec3::scale(vdot[0], dt));
    let v_l = vec3::add(st.v_l, vec3::scale(vdot[1], dt));
    let w_r = vec3::add(st.w_r, vec3::scale(wdot[0], dt));
    let w_l = vec3::add(st.w_l, vec3::scale(wdot[1], dt));

    let next = CoupledState {
        p_r: vec3::add(
            st.p_r,
            vec3::scale(vec3::add(vec3::scale(v_r, 1.0 / tau), f.f_p_rl), dt),
        ),
        v_r,
        q_r: quat::integrate_step(
            &st.q_r,
            &vec3::add(vec3::scale(w_r, 1.0 / tau), f.f_q_rl),
            dt,
        )?,
        w_r,
        p_l: vec3::add(
            st.p_l,
            vec3::scale(vec3::add(vec3::scale(v_l, 1.0 / tau), f.f_p_lr), dt),
        ),
        v_l,
        q_l: quat::integrate_step(
            &st.q_l,
            &vec3::add(vec3::scale(w_l, 1.0 / tau), f.f_q_lr),
            dt,
        )?,
        w_l,
    };
    let rel_next = step_relative(sys, rel, h, dt)?;
    Ok((next, rel_next))
}

/// Position Lyapunov candidate. Case I carries the relative spring term
/// `1/2 (g_rel - p_rl)' K_f (g_rel - p_rl)`; Cases II and III omit it.
pub fn lyapunov_position(sys: &CoupledSystem, st: &CoupledState) -> f64 {
    let (k, _) = sys.position_gains();
    let er = vec3::sub(sys.right.position.goal, st.p_r);
    let el = vec3::sub(sys.left.position.goal, st.p_l);
    let mut v = 0.5 * vec3::quad(k, er)
        + 0.5 * vec3::quad(k, el)
        + 0.5 * vec3::dot(st.v_r, st.v_r)
        + 0.5 * vec3::dot(st.v_l, st.v_l);
    if sys.case == CouplingCase::Case1 {
        let erel = vec3::sub(sys.relative.position.goal, st.relative_position());
        v += 0.5 * vec3::quad(sys.k_f, erel);
    }
    v
}

/// Orientation Lyapunov candidate.
///
/// Case I: `2 V_e(g_r, q_r) + 2 V_e(g_l, q_l) + 1/2 w' K^-1 w` per arm plus
/// the relative pair `V_e(g_rel, q_rl) + V_e(conj(g_rel), q_lr)` (the two
/// relative terms are identically equal; unit coefficients make the
/// derivative identity exact). Cases II/III: `V_e` per arm with `1/4`
/// kinetic terms plus `V_e(g_rel, q_rl)`.
pub fn lyapunov_orientation(sys: &CoupledSystem, st: &CoupledState) -> f64 {
    let (k, _) = sys.orientation_gains();
    let inv_k = [1.0 / k[0], 1.0 / k[1], 1.0 / k[2]];
    let g_r = &sys.right.orientation.goal;
    let g_l = &sys.left.orientation.goal;
    let g_rel = &sys.relative.orientation.goal;
    let q_rl = st.relative_quaternion();
    let q_lr = quat::conj(&q_rl);
    match sys.case {
        CouplingCase::Case1 => {
            2.0 * v_e(g_r, &st.q_r)
                + 2.0 * v_e(g_l, &st.q_l)
                + 0.5 * vec3::quad(inv_k, st.w_r)
                + 0.5 * vec3::quad(inv_k, st.w_l)
                + v_e(g_rel, &q_rl)
                + v_e(&quat::conj(g_rel), &q_lr)
        }
        CouplingCase::Case2 | CouplingCase::Case3 => {
            v_e(g_r, &st.q_r)
                + v_e(g_l, &st.q_l)
                + 0.25 * vec3::quad(inv_k, st.w_r)
                + 0.25 * vec3::quad(inv_k, st.w_l)
                + v_e(g_rel, &q_rl)
        }
    }
}

/// Exact time derivative of [`lyapunov_position`] along the asymptotic
/// (decayed-clock) flow, evaluated by the chain rule at the given state.
///
/// With `K_f = K` and consistent goals this reduces to the closed forms of
/// the analysis, e.g. Case I:
/// `-v_r' D v_r - v_l' D v_l - (v_r - v_l)' D_f (v_r - v_l)`.
pub fn lyapunov_position_rate(sys: &CoupledSystem, st: &CoupledState, rel: &RelState) -> f64 {
    let tau = sys.tau();
    let (k, _) = sys.position_gains();
    let f = coupling_eval(sys, st, rel);
    let (vdot, _) = arm_accels(sys, st, &f, 0.0);
    let er = vec3::sub(sys.right.position.goal, st.p_r);
    let el = vec3::sub(sys.left.position.goal, st.p_l);
    let pdot_r = vec3::add(vec3::scale(st.v_r, 1.0 / tau), f.f_p_rl);
    let pdot_l = vec3::add(vec3::scale(st.v_l, 1.0 / tau), f.f_p_lr);
    let mut rate = -vec3::dot(vec3::dmul(k, er), pdot_r) - vec3::dot(vec3::dmul(k, el), pdot_l)
        + vec3::dot(st.v_r, vdot[0])
        + vec3::dot(st.v_l, vdot[1]);
    if sys.case == CouplingCase::Case1 {
        let erel = vec3::sub(sys.relative.position.goal, st.relative_position());
        rate -= vec3::dot(vec3::dmul(sys.k_f, erel), vec3::sub(pdot_r, pdot_l));
    }
    rate
}

/// Exact time derivative of [`lyapunov_orientation`] along the asymptotic
/// flow, using `Vdot_e(g, q) = -w' vec(g * conj(q))` with the effective
/// rotation rate of each quaternion (arm rates include the velocity-level
/// coupling injections of Cases II/III).
pub fn lyapunov_orientation_rate(sys: &CoupledSystem, st: &CoupledState, rel: &RelState) -> f64 {
    let tau = sys.tau();
    let (k, _) = sys.orientation_gains();
    let inv_k = [1.0 / k[0], 1.0 / k[1], 1.0 / k[2]];
    let f = coupling_eval(sys, st, rel);
    let (_, wdot) = arm_accels(sys, st, &f, 0.0);

    let g_r = &sys.right.orientation.goal;
    let g_l = &sys.left.orientation.goal;
    let g_rel = &sys.relative.orientation.goal;
    let q_rl = st.relative_quaternion();
    let q_lr = quat::conj(&q_rl);

    // effective spatial rotation rates including q-level injections
    let w_r_eff = vec3::add(vec3::scale(st.w_r, 1.0 / tau), f.f_q_rl);
    let w_l_eff = vec3::add(vec3::scale(st.w_l, 1.0 / tau), f.f_q_lr);
    let w_rl_eff = vec3::sub(w_r_eff, quat::rotate(&q_rl, w_l_eff));
    let w_lr_eff = vec3::sub(w_l_eff, quat::rotate(&q_lr, w_r_eff));

    let ve_dot = |g: &UnitQuaternion, q: &UnitQuaternion, w: Vec3| -> f64 {
        -vec3::dot(w, quat::qerr(g, q))
    };

    match sys.case {
        CouplingCase::Case1 => {
            2.0 * ve_dot(g_r, &st.q_r, w_r_eff)
                + 2.0 * ve_dot(g_l, &st.q_l, w_l_eff)
                + vec3::dot(vec3::dmul(inv_k, st.w_r), wdot[0])
                + vec3::dot(vec3::dmul(inv_k, st.w_l), wdot[1])
                + ve_dot(g_rel, &q_rl, w_rl_eff)
                + ve_dot(&quat::conj(g_rel), &q_lr, w_lr_eff)
        }
        CouplingCase::Case2 | CouplingCase::Case3 => {
            ve_dot(g_r, &st.q_r, w_r_eff)
                + ve_dot(g_l, &st.q_l, w_l_eff)
                + 0.5 * vec3::dot(vec3::dmul(inv_k, st.w_r), wdot[0])
                + 0.5 * vec3::dot(vec3::dmul(inv_k, st.w_l), wdot[1])
                + ve_dot(g_rel, &q_rl, w_rl_eff)
        }
    }
}

/// `K_f != K` leaves the orientation derivative with the indefinite residual
/// `w_rl' (K^-1 K_f - I) e_rel`; its magnitude is recorded per trial.
pub fn orientation_rate_residual(sys: &CoupledSystem, st: &CoupledState, rel: &RelState) -> f64 {
    let (k, _) = sys.orientation_gains();
    let e = e2(&rel.q, &st.relative_quaternion());
    let scaled = [
        (sys.k_f[0] / k[0] - 1.0) * e[0],
        (sys.k_f[1] / k[1] - 1.0) * e[1],
        (sys.k_f[2] / k[2] - 1.0) * e[2],
    ];
    vec3::dot(st.relative_angular_velocity(), scaled).abs()
}

/// Lyapunov candidate of the decoupled relative primitive:
/// position part `1/2 (g-p)'K(g-p) + 1/2 |v|^2` plus orientation part
/// `V_e(g, q) + 1/4 w' K^-1 w`.
pub fn lyapunov_relative(sys: &CoupledSystem, rel: &RelState) -> f64 {
    let (kp, _) = sys.position_gains();
    let (kq, _) = sys.orientation_gains();
    let inv_kq = [1.0 / kq[0], 1.0 / kq[1], 1.0 / kq[2]];
    let ep = vec3::sub(sys.relative.position.goal, rel.p);
    0.5 * vec3::quad(kp, ep)
        + 0.5 * vec3::dot(rel.v, rel.v)
        + v_e(&sys.relative.orientation.goal, &rel.q)
        + 0.25 * vec3::quad(inv_kq, rel.w)
}

/// How trial initial states are sampled around the goals.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialStateDistribution {
    /// Position offset radius, m.
    pub position_radius: f64,
    /// Max rotation offset, rad.
    pub orientation_angle: f64,
    /// Max initial linear speed, m/s.
    pub velocity_scale: f64,
    /// Max initial angular speed, rad/s.
    pub angular_scale: f64,
}

impl Default for InitialStateDistribution {
    fn default() -> Self {
        Self {
            position_radius: 0.5,
            orientation_angle: 0.5,
            velocity_scale: 0.3,
            angular_scale: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub trials: usize,
    pub dt: f64,
    /// Rollout horizon as a multiple of tau.
    pub horizon_tau: f64,
    pub initial: InitialStateDistribution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            dt: 1e-3,
            horizon_tau: 20.0,
            initial: InitialStateDistribution::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    pub step: usize,
    pub time: f64,
    pub kind: ViolationKind,
    pub v_before: f64,
    pub v_after: f64,
    /// Counterexample state at the offending step.
    pub state: CoupledState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    PositionLyapunovIncrease,
    OrientationLyapunovIncrease,
    RelativeLyapunovIncrease,
    NoConvergence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub min_vdot_p: f64,
    pub max_vdot_p: f64,
    pub min_vdot_q: f64,
    pub max_vdot_q: f64,
    pub max_step_increase_p: f64,
    pub max_step_increase_q: f64,
    pub max_orientation_residual: f64,
    pub converged_at: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub case: CouplingCase,
    pub trials: usize,
    pub dt: f64,
    pub goal_consistency: GoalConsistency,
    pub relative_decoupling_bit_identical: bool,
    pub trial_summaries: Vec<TrialSummary>,
    pub violations: Vec<Violation>,
}

fn sample_ball<R: Rng>(rng: &mut R, radius: f64) -> Vec3 {
    if radius == 0.0 {
        return [0.0; 3];
    }
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        if vec3::dot(v, v) <= 1.0 {
            return vec3::scale(v, radius);
        }
    }
}

fn sample_rotation_offset<R: Rng>(
    rng: &mut R,
    q: &UnitQuaternion,
    max_angle: f64,
) -> UnitQuaternion {
    if max_angle == 0.0 {
        return *q;
    }
    let axis = sample_ball(rng, 1.0);
    let n = vec3::norm(axis).max(1e-12);
    let angle = rng.gen_range(0.0..max_angle);
    let r = vec3::scale(axis, angle / (2.0 * n));
    quat::qmul(&quat::qexp(&quat::RotationVector(r)).expect("angle below pi"), q)
}

/// Run the relative primitive standalone and inside the coupled system from
/// the same transient start; the two state sequences must be bit-identical.
fn decoupling_ablation(sys: &CoupledSystem, dt: f64, steps: usize) -> Result<bool, QuatError> {
    let rel0 = RelState {
        p: vec3::add(sys.relative.position.goal, [0.3, -0.2, 0.1]),
        v: [0.0; 3],
        q: quat::qmul(
            &quat::qexp(&quat::RotationVector([0.15, -0.1, 0.2])).expect("small angle"),
            &sys.relative.orientation.goal,
        ),
        w: [0.0; 3],
    };
    let mut alone = rel0;
    let mut coupled = rel0;
    let mut st = sys.goal_state();
    st.p_r = vec3::add(st.p_r, [0.2, 0.0, -0.1]);
    for _ in 0..steps {
        alone = step_relative(sys, &alone, 0.0, dt)?;
        let (st2, rel2) = coupled_step(sys, &st, &coupled, 0.0, dt)?;
        st = st2;
        coupled = rel2;
        if alone != coupled {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Numerically verify the case's stability claims over random initial
/// states: the position and orientation Lyapunov candidates must be
/// non-increasing at every step (tolerance `1e-9 (1 + V)`), every trial must
/// converge to the arm goals, and the equilibrium-consistency requirement
/// must hold. Runs in the asymptotic regime: decayed clock, relative
/// primitive at its goal.
pub fn verify_stability<R: Rng>(
    sys: &CoupledSystem,
    opts: &VerifyOptions,
    rng: &mut R,
) -> Result<StabilityReport, CoupledError> {
    let goal_consistency = sys.goal_consistency();
    let steps = (opts.horizon_tau * sys.tau() / opts.dt).round() as usize;
    let mut violations = Vec::new();
    let mut summaries = Vec::with_capacity(opts.trials);

    for trial in 0..opts.trials {
        let mut st = sys.goal_state();
        st.p_r = vec3::add(st.p_r, sample_ball(rng, opts.initial.position_radius));
        st.p_l = vec3::add(st.p_l, sample_ball(rng, opts.initial.position_radius));
        st.v_r = sample_ball(rng, opts.initial.velocity_scale);
        st.v_l = sample_ball(rng, opts.initial.velocity_scale);
        st.q_r = sample_rotation_offset(rng, &st.q_r, opts.initial.orientation_angle);
        st.q_l = sample_rotation_offset(rng, &st.q_l, opts.initial.orientation_angle);
        st.w_r = sample_ball(rng, opts.initial.angular_scale);
        st.w_l = sample_ball(rng, opts.initial.angular_scale);
        let mut rel = sys.relative_goal_state();

        let mut summary = TrialSummary {
            trial,
            min_vdot_p: f64::INFINITY,
            max_vdot_p: f64::NEG_INFINITY,
            min_vdot_q: f64::INFINITY,
            max_vdot_q: f64::NEG_INFINITY,
            max_step_increase_p: f64::NEG_INFINITY,
            max_step_increase_q: f64::NEG_INFINITY,
            max_orientation_residual: 0.0,
            converged_at: None,
        };

        let mut v_p = lyapunov_position(sys, &st);
        let mut v_q = lyapunov_orientation(sys, &st);
        let mut v_rel = lyapunov_relative(sys, &rel);
        for step in 0..steps {
            let rate_p = lyapunov_position_rate(sys, &st, &rel);
            let rate_q = lyapunov_orientation_rate(sys, &st, &rel);
            summary.min_vdot_p = summary.min_vdot_p.min(rate_p);
            summary.max_vdot_p = summary.max_vdot_p.max(rate_p);
            summary.min_vdot_q = summary.min_vdot_q.min(rate_q);
            summary.max_vdot_q = summary.max_vdot_q.max(rate_q);
            summary.max_orientation_residual = summary
                .max_orientation_residual
                .max(orientation_rate_residual(sys, &st, &rel));

            let (next, rel_next) = coupled_step(sys, &st, &rel, 0.0, opts.dt)?;
            let time = step as f64 * opts.dt;
            let v_p_next = lyapunov_position(sys, &next);
            let v_q_next = lyapunov_orientation(sys, &next);
            let v_rel_next = lyapunov_relative(sys, &rel_next);
            summary.max_step_increase_p = summary.max_step_increase_p.max(v_p_next - v_p);
            summary.max_step_increase_q = summary.max_step_increase_q.max(v_q_next - v_q);
            if v_p_next > v_p + STEP_TOL * (1.0 + v_p) {
                violations.push(Violation {
                    trial,
                    step,
                    time,
                    kind: ViolationKind::PositionLyapunovIncrease,
                    v_before: v_p,
                    v_after: v_p_next,
                    state: st,
                });
            }
            if v_q_next > v_q + STEP_TOL * (1.0 + v_q) {
                violations.push(Violation {
                    trial,
                    step,
                    time,
                    kind: ViolationKind::OrientationLyapunovIncrease,
                    v_before: v_q,
                    v_after: v_q_next,
                    state: st,
                });
            }
            if v_rel_next > v_rel + STEP_TOL * (1.0 + v_rel) {
                violations.push(Violation {
                    trial,
                    step,
                    time,
                    kind: ViolationKind::RelativeLyapunovIncrease,
                    v_before: v_rel,
                    v_after: v_rel_next,
                    state: st,
                });
            }
            st = next;
            rel = rel_next;
            v_p = v_p_next;
            v_q = v_q_next;
            v_rel = v_rel_next;

            if summary.converged_at.is_none() && converged(sys, &st) {
                summary.converged_at = Some(time + opts.dt);
            }
        }
        if !converged(sys, &st) {
            violations.push(Violation {
                trial,
                step: steps,
                time: steps as f64 * opts.dt,
                kind: ViolationKind::NoConvergence,
                v_before: v_p,
                v_after: v_p,
                state: st,
            });
            summary.converged_at = None;
        }
        summaries.push(summary);
    }

    let relative_decoupling_bit_identical =
        decoupling_ablation(sys, opts.dt, (2.0 * sys.tau() / opts.dt) as usize)?;

    let report = StabilityReport {
        case: sys.case,
        trials: opts.trials,
        dt: opts.dt,
        goal_consistency,
        relative_decoupling_bit_identical,
        trial_summaries: summaries,
        violations,
    };
    if !report.violations.is_empty()
        || !report.goal_consistency.consistent
        || !report.relative_decoupling_bit_identical
    {
        return Err(CoupledError::StabilityViolation(Box::new(report)));
    }
    Ok(report)
}

fn converged(sys: &CoupledSystem, st: &CoupledState) -> bool {
    vec3::norm(vec3::sub(st.p_r, sys.right.position.goal)) < CONVERGENCE
        && vec3::norm(vec3::sub(st.p_l, sys.left.position.goal)) < CONVERGENCE
        && vec3::norm(st.v_r) < CONVERGENCE
        && vec3::norm(st.v_l) < CONVERGENCE
        && quat::qdist(&sys.right.orientation.goal, &st.q_r) < CONVERGENCE
        && quat::qdist(&sys.left.orientation.goal, &st.q_l) < CONVERGENCE
        && vec3::norm(st.w_r) < CONVERGENCE
        && vec3::norm(st.w_l) < CONVERGENCE
}

/// Record a coupled rollout with the live clock (demos and plotting; the
/// verification path runs with the clock already decayed).
pub fn rollout_coupled(
    sys: &CoupledSystem,
    st0: CoupledState,
    rel0: RelState,
    duration: f64,
    dt: f64,
) -> Result<(Vec<CoupledState>, Vec<RelState>), QuatError> {
    let steps = (duration / dt).round() as usize;
    let mut arms = Vec::with_capacity(steps + 1);
    let mut rels = Vec::with_capacity(steps + 1);
    let mut st = st0;
    let mut rel = rel0;
    for k in 0..=steps {
        arms.push(st);
        rels.push(rel);
        let h = sys.right.position.phase(k as f64 * dt);
        let (n, r) = coupled_step(sys, &st, &rel, h, dt)?;
        st = n;
        rel = r;
    }
    Ok((arms, rels))
}

/// On-disk description of a coupled verification scenario: goals, gains,
/// the coupling case and the initial-state distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub case: CouplingCase,
    /// Scalar stiffness, expanded to a diagonal matrix; damping is set
    /// critically.
    pub stiffness: f64,
    /// Coupling stiffness; defaults to `stiffness` (the `K_f = K` condition
    /// of the analysis).
    #[serde(default)]
    pub coupling_stiffness: Option<f64>,
    pub coupling_damping: f64,
    pub goals: ScenarioGoals,
    #[serde(default)]
    pub initial: InitialStateDistribution,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon_tau: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    100
}

fn default_dt() -> f64 {
    1e-3
}

fn default_horizon() -> f64 {
    20.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGoals {
    pub right_position: Vec3,
    pub left_position: Vec3,
    pub right_orientation: UnitQuaternion,
    pub left_orientation: UnitQuaternion,
    /// Defaults to the consistent `g_r - g_l`.
    #[serde(default)]
    pub relative_position: Option<Vec3>,
    /// Defaults to the consistent `g_r * conj(g_l)`.
    #[serde(default)]
    pub relative_orientation: Option<UnitQuaternion>,
}

impl ScenarioFile {
    pub fn build(&self) -> Result<(CoupledSystem, VerifyOptions), CoupledError> {
        if !(self.stiffness > 0.0) {
            return Err(CoupledError::BadGains);
        }
        let gains = crate::dmp::DmpGains::critically_damped(self.stiffness);
        let k_f = self.coupling_stiffness.unwrap_or(self.stiffness);
        let g = &self.goals;
        let rel_p = g
            .relative_position
            .unwrap_or_else(|| vec3::sub(g.right_position, g.left_position));
        let rel_q = g
            .relative_orientation
            .unwrap_or_else(|| quat::qmul(&g.right_orientation, &quat::conj(&g.left_orientation)));
        let system = CoupledSystem::new(
            rest_primitive(gains, gains, g.right_position, g.right_orientation),
            rest_primitive(gains, gains, g.left_position, g.left_orientation),
            rest_primitive(gains, gains, rel_p, rel_q),
            [k_f; 3],
            [self.coupling_damping; 3],
            self.case,
        )?;
        let options = VerifyOptions {
            trials: self.trials,
            dt: self.dt,
            horizon_tau: self.horizon_tau,
            initial: self.initial,
        };
        Ok((system, options))
    }
}

/// Build a zero-forcing primitive resting at its goal; coupled scenarios run
/// in the decayed-clock regime where only goals and gains matter.
pub fn rest_primitive(
    position_gains: crate::dmp::DmpGains,
    orientation_gains: crate::dmp::DmpGains,
    goal_p: Vec3,
    goal_q: UnitQuaternion,
) -> PosePrimitive {
    use crate::dmp::{ClockSpec, KernelBank, OrientationDmp, PositionDmp};
    let clock = ClockSpec::Exp { gamma: 1.0 };
    let position = PositionDmp {
        gains: position_gains,
        kernels: KernelBank::phase_uniform_time(2, 1.0, 5.0, 1.0),
        goal: goal_p,
        start: goal_p,
        tau: 1.0,
        duration: 5.0,
        clock,
    };
    let orientation = OrientationDmp {
        gains: orientation_gains,
        kernels: KernelBank::phase_uniform_time(2, 1.0, 5.0, 1.0),
        goal: goal_q,
        start: goal_q,
        tau: 1.0,
        duration: 5.0,
        clock,
    };
    PosePrimitive::new(position, orientation).expect("rest primitive parts agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmp::DmpGains;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_unit_quat(rng: &mut ChaCha8Rng, scale: f64) -> UnitQuaternion {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        quat::qexp(&quat::RotationVector(vec3::scale(v, scale))).unwrap()
    }

    /// Consistent-goal system with isotropic gains.
    fn make_system(case: CouplingCase, k: f64, k_f: f64, d_f: f64, seed: u64) -> CoupledSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gains = DmpGains::critically_damped(k);
        let g_r = rand_unit_quat(&mut rng, 0.8);
        let g_l = rand_unit_quat(&mut rng, 0.8);
        let g_rel = quat::qmul(&g_r, &quat::conj(&g_l));
        let gp_r = sample_ball(&mut rng, 1.0);
        let gp_l = sample_ball(&mut rng, 1.0);
        let gp_rel = vec3::sub(gp_r, gp_l);
        CoupledSystem::new(
            rest_primitive(gains, gains, gp_r, g_r),
            rest_primitive(gains, gains, gp_l, g_l),
            rest_primitive(gains, gains, gp_rel, g_rel),
            [k_f; 3],
            [d_f; 3],
            case,
        )
        .unwrap()
    }

    fn perturbed_state(sys: &CoupledSystem, rng: &mut ChaCha8Rng) -> CoupledState {
        let mut st = sys.goal_state();
        st.p_r = vec3::add(st.p_r, sample_ball(rng, 0.5));
        st.p_l = vec3::add(st.p_l, sample_ball(rng, 0.5));
        st.v_r = sample_ball(rng, 0.5);
        st.v_l = sample_ball(rng, 0.5);
        st.q_r = quat::qmul(&rand_unit_quat(rng, 0.25), &st.q_r);
        st.q_l = quat::qmul(&rand_unit_quat(rng, 0.25), &st.q_l);
        st.w_r = sample_ball(rng, 0.5);
        st.w_l = sample_ball(rng, 0.5);
        st
    }

    /// Explicit Euler probe of the asymptotic vector field (`dt` may be
    /// negative), used only for central finite differences.
    fn explicit_probe(
        sys: &CoupledSystem,
        st: &CoupledState,
        rel: &RelState,
        dt: f64,
    ) -> CoupledState {
        let tau = sys.tau();
        let f = coupling_eval(sys, st, rel);
        let (vdot, wdot) = arm_accels(sys, st, &f, 0.0);
        CoupledState {
            p_r: vec3::add(
                st.p_r,
                vec3::scale(vec3::add(vec3::scale(st.v_r, 1.0 / tau), f.f_p_rl), dt),
            ),
            v_r: vec3::add(st.v_r, vec3::scale(vdot[0], dt)),
            q_r: quat::integrate_step(
                &st.q_r,
                &vec3::add(vec3::scale(st.w_r, 1.0 / tau), f.f_q_rl),
                dt,
            )
            .unwrap(),
            w_r: vec3::add(st.w_r, vec3::scale(wdot[0], dt)),
            p_l: vec3::add(
                st.p_l,
                vec3::scale(vec3::add(vec3::scale(st.v_l, 1.0 / tau), f.f_p_lr), dt),
            ),
            v_l: vec3::add(st.v_l, vec3::scale(vdot[1], dt)),
            q_l: quat::integrate_step(
                &st.q_l,
                &vec3::add(vec3::scale(st.w_l, 1.0 / tau), f.f_q_lr),
                dt,
            )
            .unwrap(),
            w_l: vec3::add(st.w_l, vec3::scale(wdot[1], dt)),
        }
    }

    #[test]
    fn coupling_vanishes_at_the_relative_goal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in [CouplingCase::Case1, CouplingCase::Case2, CouplingCase::Case3] {
            let sys = make_system(case, 10.0, 10.0, 1.0, 3);
            let st = sys.goal_state();
            let rel = sys.relative_goal_state();
            let f = coupling_eval(&sys, &st, &rel);
            for v in [
                f.f_p_rl, f.f_p_lr, f.f_v_rl, f.f_v_lr, f.f_q_rl, f.f_q_lr, f.f_w_rl, f.f_w_lr,
            ] {
                assert!(vec3::norm(v) < 1e-12);
            }
        }
        let _ = &mut rng;
    }

    #[test]
    fn case1_velocity_forces_are_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = make_system(CouplingCase::Case1, 10.0, 10.0, 1.0, 5);
        for _ in 0..50 {
            let st = perturbed_state(&sys, &mut rng);
            let f = coupling_eval(&sys, &st, &sys.relative_goal_state());
            assert_eq!(f.f_v_lr, vec3::neg(f.f_v_rl));
            assert_eq!(f.f_p_rl, [0.0; 3]);
            assert_eq!(f.f_q_rl, [0.0; 3]);
        }
    }

    #[test]
    fn case2_orientation_mirror_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = make_system(CouplingCase::Case2, 10.0, 10.0, 1.0, 7);
        for _ in 0..50 {
            let st = perturbed_state(&sys, &mut rng);
            let f = coupling_eval(&sys, &st, &sys.relative_goal_state());
            assert!((vec3::norm(f.f_q_lr) - vec3::norm(f.f_q_rl)).abs() < 1e-12);
            assert_eq!(f.f_v_rl, [0.0; 3]);
            assert_eq!(f.f_w_rl, [0.0; 3]);
        }
    }

    #[test]
    fn case3_activates_all_four_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = make_system(CouplingCase::Case3, 10.0, 10.0, 1.0, 11);
        let st = perturbed_state(&sys, &mut rng);
        let f = coupling_eval(&sys, &st, &sys.relative_goal_state());
        assert!(vec3::norm(f.f_p_rl) > 0.0);
        assert!(vec3::norm(f.f_v_rl) > 0.0);
        assert!(vec3::norm(f.f_q_rl) > 0.0);
        assert!(vec3::norm(f.f_w_rl) > 0.0);
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_the_coupled_step() {
        for case in [CouplingCase::Case1, CouplingCase::Case2, CouplingCase::Case3] {
            let sys = make_system(case, 10.0, 10.0, 1.0, 13);
            let st = sys.goal_state();
            let rel = sys.relative_goal_state();
            let (next, rel_next) = coupled_step(&sys, &st, &rel, 0.0, 1e-3).unwrap();
            assert!(vec3::norm(vec3::sub(next.p_r, st.p_r)) < 1e-15);
            assert!(vec3::norm(vec3::sub(next.p_l, st.p_l)) < 1e-15);
            assert!(quat::qdist(&next.q_r, &st.q_r) < 1e-15);
            assert!(vec3::norm(next.v_r) < 1e-15);
            assert!(vec3::norm(next.w_l) < 1e-15);
            assert!(vec3::norm(vec3::sub(rel_next.p, rel.p)) < 1e-15);
        }
    }

    #[test]
    fn v_e_examples() {
        let q = UnitQuaternion::new(0.3, [0.5, -0.6, 0.5477225575051661]).unwrap();
        assert_eq!(v_e(&q, &q), 0.0);
        assert!((v_e(&q, &q.flipped()) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_vanishes_only_at_consistent_equilibrium() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = make_system(CouplingCase::Case1, 10.0, 10.0, 1.0, 17);
        let consistency = sys.goal_consistency();
        assert!(consistency.consistent);
        assert!(consistency.v_p_at_arm_goals < 1e-18);
        assert!(consistency.v_q_at_arm_goals < 1e-18);
        for _ in 0..20 {
            let st = perturbed_state(&sys, &mut rng);
            assert!(lyapunov_position(&sys, &st) > 0.0);
            assert!(lyapunov_orientation(&sys, &st) > 0.0);
        }
    }

    #[test]
    fn inconsistent_goals_flagged_at_the_arm_goal_point() {
        let gains = DmpGains::critically_damped(10.0);
        let g_r = UnitQuaternion::IDENTITY;
        let g_l = UnitQuaternion::IDENTITY;
        let wrong_rel = quat::qexp(&quat::RotationVector([0.2, 0.0, 0.0])).unwrap();
        let sys = CoupledSystem::new(
            rest_primitive(gains, gains, [1.0, 0.0, 0.0], g_r),
            rest_primitive(gains, gains, [0.0, 0.0, 0.0], g_l),
            rest_primitive(gains, gains, [0.9, 0.0, 0.0], wrong_rel),
            [10.0; 3],
            [1.0; 3],
            CouplingCase::Case1,
        )
        .unwrap();
        let c = sys.goal_consistency();
        assert!(!c.consistent);
        assert!(c.v_p_at_arm_goals > 0.0);
        assert!(c.v_q_at_arm_goals > 0.0);
    }

    #[test]
    fn position_rate_matches_case1_closed_form() {
        // Vdot^p = -v_r'Dv_r - v_l'Dv_l - (v_r - v_l)'D_f(v_r - v_l),
        // checked against central finite differences at dt = 1e-4
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sys = make_system(CouplingCase::Case1, 10.0, 10.0, 1.0, 19);
        let (_, d) = sys.position_gains();
        let rel = sys.relative_goal_state();
        let dt = 1e-4;
        for _ in 0..100 {
            let st = perturbed_state(&sys, &mut rng);
            let fwd = explicit_probe(&sys, &st, &rel, dt);
            let bwd = explicit_probe(&sys, &st, &rel, -dt);
            let fd = (lyapunov_position(&sys, &fwd) - lyapunov_position(&sys, &bwd)) / (2.0 * dt);
            let v_rl = vec3::sub(st.v_r, st.v_l);
            let closed = -vec3::quad(d, st.v_r) - vec3::quad(d, st.v_l)
                - vec3::quad(sys.d_f, v_rl);
            let chain = lyapunov_position_rate(&sys, &st, &rel);
            assert!(
                (fd - closed).abs() <= 1e-3 * closed.abs().max(1e-9),
                "fd {fd} vs closed {closed}"
            );
            assert!((chain - closed).abs() <= 1e-9 * closed.abs().max(1.0));
        }
    }

    #[test]
    fn position_rate_case2_includes_relative_stiffness_term() {
        // Vdot^p = -v'Dv (both arms) - (g_rel - p_rl)'K_f'K(g_rel - p_rl)
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sys = make_system(CouplingCase::Case2, 10.0, 10.0, 1.0, 23);
        let (k, d) = sys.position_gains();
        let rel = sys.relative_goal_state();
        for _ in 0..100 {
            let mut st = perturbed_state(&sys, &mut rng);
            let erel = vec3::sub(sys.relative.position.goal, st.relative_position());
            let kfk = [
                sys.k_f[0] * k[0],
                sys.k_f[1] * k[1],
                sys.k_f[2] * k[2],
            ];
            let closed = -vec3::quad(d, st.v_r) - vec3::quad(d, st.v_l) - vec3::quad(kfk, erel);
            let chain = lyapunov_position_rate(&sys, &st, &rel);
            assert!((chain - closed).abs() <= 1e-9 * closed.abs().max(1.0));
            assert!(closed <= 0.0);
            // zero iff rest and relative alignment
            st.v_r = [0.0; 3];
            st.v_l = [0.0; 3];
            st.p_l = vec3::sub(st.p_r, sys.relative.position.goal);
            assert!(lyapunov_position_rate(&sys, &st, &rel).abs() < 1e-12);
        }
    }

    #[test]
    fn orientation_rate_matches_case1_reduced_form() {
        // with K_f = K and isotropic gains:
        // Vdot^q = -w_r'K^-1 D w_r - w_l'K^-1 D w_l - w_rl'K^-1 D_f w_rl
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sys = make_system(CouplingCase::Case1, 10.0, 10.0, 1.0, 29);
        let (k, d) = sys.orientation_gains();
        let rel = sys.relative_goal_state();
        let dt = 1e-4;
        for _ in 0..100 {
            let st = perturbed_state(&sys, &mut rng);
            let fwd = explicit_probe(&sys, &st, &rel, dt);
            let bwd = explicit_probe(&sys, &st, &rel, -dt);
            let fd =
                (lyapunov_orientation(&sys, &fwd) - lyapunov_orientation(&sys, &bwd)) / (2.0 * dt);
            let w_rl = st.relative_angular_velocity();
            let dk = [d[0] / k[0], d[1] / k[1], d[2] / k[2]];
            let dfk = [
                sys.d_f[0] / k[0],
                sys.d_f[1] / k[1],
                sys.d_f[2] / k[2],
            ];
            let closed = -vec3::quad(dk, st.w_r) - vec3::quad(dk, st.w_l) - vec3::quad(dfk, w_rl);
            let chain = lyapunov_orientation_rate(&sys, &st, &rel);
            assert!(
                (fd - closed).abs() <= 1e-3 * closed.abs().max(1e-9),
                "fd {fd} vs closed {closed}"
            );
            assert!(
                (chain - closed).abs() <= 1e-6 * closed.abs().max(1.0),
                "chain {chain} vs closed {closed}"
            );
            assert!(closed <= 0.0);
        }
    }

    #[test]
    fn orientation_rate_chain_rule_matches_finite_differences_all_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dt = 1e-4;
        for (i, case) in [CouplingCase::Case1, CouplingCase::Case2, CouplingCase::Case3]
            .into_iter()
            .enumerate()
        {
            let sys = make_system(case, 10.0, 10.0, 1.0, 31 + i as u64);
            let rel = sys.relative_goal_state();
            for _ in 0..50 {
                let st = perturbed_state(&sys, &mut rng);
                let fwd = explicit_probe(&sys, &st, &rel, dt);
                let bwd = explicit_probe(&sys, &st, &rel, -dt);
                let fd = (lyapunov_orientation(&sys, &fwd) - lyapunov_orientation(&sys, &bwd))
                    / (2.0 * dt);
                let chain = lyapunov_orientation_rate(&sys, &st, &rel);
                assert!(
                    (fd - chain).abs() <= 1e-3 * chain.abs().max(1e-9),
                    "{case:?}: fd {fd} vs chain {chain}"
                );
            }
        }
    }

    #[test]
    fn zero_forcing_rollouts_converge_for_all_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for case in [CouplingCase::Case1, CouplingCase::Case2, CouplingCase::Case3] {
            let sys = make_system(case, 10.0, 10.0, 1.0, 37);
            let mut st = perturbed_state(&sys, &mut rng);
            let mut rel = sys.relative_goal_state();
            let dt = 1e-3;
            for _ in 0..(20.0 / dt) as usize {
                let (n, r) = coupled_step(&sys, &st, &rel, 0.0, dt).unwrap();
                st = n;
                rel = r;
            }
            assert!(converged(&sys, &st), "{case:?} did not converge");
        }
    }

    #[test]
    fn verify_stability_clean_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sys = make_system(CouplingCase::Case1, 10.0, 10.0, 1.0, 41);
        let opts = VerifyOptions {
            trials: 100,
            ..VerifyOptions::default()
        };
        let report = verify_stability(&sys, &opts, &mut rng).expect("no violations");
        assert_eq!(report.trials, 100);
        assert!(report.violations.is_empty());
        assert!(report.relative_decoupling_bit_identical);
        assert!(report.trial_summaries.iter().all(|t| t.converged_at.is_some()));
        assert!(report.trial_summaries.iter().all(|t| t.max_vdot_p <= 1e-12));
        assert!(report.trial_summaries.iter().all(|t| t.max_vdot_q <= 1e-12));
    }

    #[test]
    fn verify_stability_flags_inconsistent_goals() {
        let gains = DmpGains::critically_damped(10.0);
        let sys = CoupledSystem::new(
            rest_primitive(gains, gains, [1.0, 0.0, 0.0], UnitQuaternion::IDENTITY),
            rest_primitive(gains, gains, [0.0; 3], UnitQuaternion::IDENTITY),
            rest_primitive(gains, gains, [0.5, 0.0, 0.0], UnitQuaternion::IDENTITY),
            [10.0; 3],
            [1.0; 3],
            CouplingCase::Case1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let opts = VerifyOptions {
            trials: 3,
            ..VerifyOptions::default()
        };
        match verify_stability(&sys, &opts, &mut rng) {
            Err(CoupledError::StabilityViolation(report)) => {
                assert!(!report.goal_consistency.consistent);
                assert!(report.goal_consistency.v_p_at_arm_goals > 0.0);
            }
            other => panic!("expected a flagged report, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_coupling_stiffness_records_a_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sys = make_system(CouplingCase::Case1, 10.0, 25.0, 1.0, 43);
        let opts = VerifyOptions {
            trials: 10,
            ..VerifyOptions::default()
        };
        let report = match verify_stability(&sys, &opts, &mut rng) {
            Ok(r) => r,
            Err(CoupledError::StabilityViolation(r)) => *r,
            Err(e) => panic!("{e}"),
        };
        let max_res = report
            .trial_summaries
            .iter()
            .map(|t| t.max_orientation_residual)
            .fold(0.0f64, f64::max);
        assert!(max_res > 1e-6, "expected a nonzero K^-1 K_f residual");
    }

    #[test]
    fn rejects_non_positive_coupling_gains() {
        let gains = DmpGains::critically_damped(10.0);
        let err = CoupledSystem::new(
            rest_primitive(gains, gains, [0.0; 3], UnitQuaternion::IDENTITY),
            rest_primitive(gains, gains, [0.0; 3], UnitQuaternion::IDENTITY),
            rest_primitive(gains, gains, [0.0; 3], UnitQuaternion::IDENTITY),
            [10.0; 3],
            [-1.0; 3],
            CouplingCase::Case1,
        )
        .unwrap_err();
        assert!(matches!(err, CoupledError::BadGains));
    }
}
