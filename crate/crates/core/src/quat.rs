//! Unit-quaternion algebra: product, conjugate, log/exp maps, propagation,
//! rate integration and the vector-part orientation error.
//!
//! Quaternions are stored scalar-first, `[eta, eps1, eps2, eps3]`, and every
//! constructing operation renormalizes so that `eta^2 + |eps|^2 = 1` holds to
//! within [`UNIT_TOL`]. `q` and `-q` encode the same rotation; pairs are
//! canonicalized onto one hemisphere with [`hemisphere_align`] before error
//! or log computations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::{self, Vec3};

/// Unit-norm invariant tolerance.
pub const UNIT_TOL: f64 = 1e-9;

/// Vector-part norm below which the log map takes its zero branch.
const LOG_ZERO_EPS: f64 = 1e-12;

/// Angular velocity in rad/s. No invariant beyond finiteness.
pub type AngularVelocity = Vec3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuatError {
    /// `qlog` input within 1e-9 of the excluded antipode `[-1, 0, 0, 0]`.
    #[error("log map undefined near [-1,0,0,0] (eta = {eta:.3e})")]
    LogAntipode { eta: f64 },
    /// Rotation vector outside the bijective exp-map domain `|r| < pi`.
    #[error("rotation vector norm {norm:.6} rad outside the exp-map domain [0, pi)")]
    ExpOutOfDomain { norm: f64 },
    /// Per-step rotation in `integrate_step` exceeds the exp-map domain.
    #[error("rotation per step {angle:.6} rad exceeds the exp-map domain")]
    StepTooLarge { angle: f64 },
    /// Raw 4-vector too far from the unit sphere to normalize silently.
    #[error("4-vector with norm {norm:.6} is not a unit quaternion")]
    NotUnit { norm: f64 },
    /// Hemisphere-ambiguous pair (endpoints separated by a pi rotation).
    #[error("antipodal endpoints: no unique shortest geodesic")]
    AntipodalPair,
}

/// A unit quaternion `[eta, eps]` on S^3 representing a 3-D orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    eta: f64,
    eps: Vec3,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        eta: 1.0,
        eps: [0.0; 3],
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Build from scalar and vector parts, normalizing small drift.
    ///
    /// Components further than 1e-3 from unit norm are rejected rather than
    /// silently rescaled; components already unit to 1e-12 are kept bit-exact
    /// so that serialization round-trips.
    pub fn new(eta: f64, eps: Vec3) -> Result<Self, QuatError> {
        let norm = (eta * eta + vec3::dot(eps, eps)).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
            return Err(QuatError::NotUnit { norm });
        }
        if (norm - 1.0).abs() < 1e-12 {
            return Ok(Self { eta, eps });
        }
        Ok(Self::renormalized(eta, eps))
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self, QuatError> {
        Self::new(q[0], [q[1], q[2], q[3]])
    }

    /// Internal constructor for values already close to the sphere.
    pub(crate) fn renormalized(eta: f64, eps: Vec3) -> Self {
        let inv = 1.0 / (eta * eta + vec3::dot(eps, eps)).sqrt();
        Self {
            eta: eta * inv,
            eps: vec3::scale(eps, inv),
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn eps(&self) -> Vec3 {
        self.eps
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.eta, self.eps[0], self.eps[1], self.eps[2]]
    }

    /// 4-vector dot product; equals `scal(a * conj(b))`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.eta * other.eta + vec3::dot(self.eps, other.eps)
    }

    /// The antipode `-q`, the same rotation on the other hemisphere.
    pub fn flipped(&self) -> Self {
        Self {
            eta: -self.eta,
            eps: vec3::neg(self.eps),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.eta * self.eta + vec3::dot(self.eps, self.eps)).sqrt()
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = QuatError;
    fn try_from(q: [f64; 4]) -> Result<Self, Self::Error> {
        Self::from_array(q)
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> [f64; 4] {
        q.as_array()
    }
}

/// Rotation vector `r`, the image of the log map; `0 <= |r| < pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationVector(pub Vec3);

impl RotationVector {
    pub fn norm(&self) -> f64 {
        vec3::norm(self.0)
    }
}

impl From<Vec3> for RotationVector {
    fn from(v: Vec3) -> Self {
        RotationVector(v)
    }
}

/// Quaternion product `a * b`, renormalized.
///
/// `[eta1 eta2 - eps1'eps2, eta1 eps2 + eta2 eps1 + S(eps1) eps2]` with
/// `S(a) b = a x b`.
pub fn qmul(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    let eta = a.eta * b.eta - vec3::dot(a.eps, b.eps);
    let eps = vec3::add(
        vec3::add(vec3::scale(b.eps, a.eta), vec3::scale(a.eps, b.eta)),
        vec3::cross(a.eps, b.eps),
    );
    UnitQuaternion::renormalized(eta, eps)
}

/// Conjugate `[eta, -eps]`; the inverse on the unit sphere.
pub fn conj(q: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        eta: q.eta,
        eps: vec3::neg(q.eps),
    }
}

/// Logarithmic map: `arccos(eta) * eps/|eps|`, zero when `|eps|` vanishes.
///
/// Undefined at the antipode `[-1,0,0,0]`; inputs within 1e-9 of it are
/// rejected.
pub fn qlog(q: &UnitQuaternion) -> Result<RotationVector, QuatError> {
    if 1.0 + q.eta < 1e-9 {
        return Err(QuatError::LogAntipode { eta: q.eta });
    }
    let eps_norm = vec3::norm(q.eps);
    if eps_norm < LOG_ZERO_EPS {
        return Ok(RotationVector([0.0; 3]));
    }
    let angle = q.eta.clamp(-1.0, 1.0).acos();
    Ok(RotationVector(vec3::scale(q.eps, angle / eps_norm)))
}

/// Exponential map: `[cos|r|, sin|r| * r/|r|]`, identity at `r = 0`.
///
/// Bijective for `|r| < pi`; larger inputs are rejected.
pub fn qexp(r: &RotationVector) -> Result<UnitQuaternion, QuatError> {
    let norm = r.norm();
    if norm >= std::f64::consts::PI - 1e-9 {
        return Err(QuatError::ExpOutOfDomain { norm });
    }
    if norm == 0.0 {
        return Ok(UnitQuaternion::IDENTITY);
    }
    Ok(UnitQuaternion::renormalized(
        norm.cos(),
        vec3::scale(r.0, norm.sin() / norm),
    ))
}

/// Quaternion propagation: the rate `qdot = 1/2 w~ * q` as a raw 4-vector
/// `[eta_dot, eps_dot]`, computed in the matrix form
/// `eta_dot = -1/2 eps'w`, `eps_dot = 1/2 (eta I - S(eps)) w`.
pub fn propagate(q: &UnitQuaternion, w: &AngularVelocity) -> [f64; 4] {
    let eta_dot = -0.5 * vec3::dot(q.eps, *w);
    let eps_dot = vec3::scale(
        vec3::sub(vec3::scale(*w, q.eta), vec3::cross(q.eps, *w)),
        0.5,
    );
    [eta_dot, eps_dot[0], eps_dot[1], eps_dot[2]]
}

/// One step of quaternion rate integration:
/// `q(t + dt) = exp(dt/2 w) * q(t)`. Exactly norm-preserving.
pub fn integrate_step(
    q: &UnitQuaternion,
    w: &AngularVelocity,
    dt: f64,
) -> Result<UnitQuaternion, QuatError> {
    let half_step = vec3::scale(*w, 0.5 * dt);
    let angle = vec3::norm(half_step);
    if angle >= std::f64::consts::PI - 1e-9 {
        return Err(QuatError::StepTooLarge { angle });
    }
    let delta = qexp(&RotationVector(half_step)).expect("angle checked above");
    Ok(qmul(&delta, q))
}

/// Vector-part orientation error `e_o(a, b) = vec(a * conj(b))`:
/// the error of goal `a` relative to state `b`.
pub fn qerr(a: &UnitQuaternion, b: &UnitQuaternion) -> Vec3 {
    // vec(a * conj(b)) without constructing the full product.
    vec3::add(
        vec3::sub(vec3::scale(a.eps, b.eta), vec3::scale(b.eps, a.eta)),
        vec3::cross(a.eps, vec3::neg(b.eps)),
    )
}

/// Rotate a 3-vector: the vector part of `q * v~ * conj(q)`.
pub fn rotate(q: &UnitQuaternion, v: Vec3) -> Vec3 {
    let two_eta = 2.0 * q.eta;
    let cross = vec3::cross(q.eps, v);
    vec3::add(
        vec3::add(
            vec3::scale(v, two_eta * q.eta - 1.0),
            vec3::scale(q.eps, 2.0 * vec3::dot(q.eps, v)),
        ),
        vec3::scale(cross, two_eta),
    )
}

/// Hemisphere guard: return `b` sign-flipped onto `a`'s hemisphere, so that
/// `scal(a * conj(b)) >= 0` and `|qlog(a * conj(b))| <= pi/2`.
pub fn hemisphere_align(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    if a.dot(b) < 0.0 {
        b.flipped()
    } else {
        *b
    }
}

/// Orientation distance `|vec(a * conj(b))|` on the aligned pair; the "rad"
/// distance used for thresholds and metrics.
pub fn qdist(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let b = hemisphere_align(a, b);
    vec3::norm(qerr(a, &b))
}
