//! The synthetic quaternion-merge benchmark: two minimum-jerk orientation
//! demonstrations through a via point, used to compare the three merging
//! strategies end to end.
//!
//! Reference figures for this scenario (N = 15 kernels, stiffness 10,
//! critically damped, tau = 1, dt = 0.01 s):
//! - switching at 0.01 rad goal distance fires near 4.7 s and the merged
//!   motion converges after about 9.5 s;
//! - crossing the via with 0.01 rad/s per axis keeps the crossing error in
//!   the low millirad range and finishes near 10 s;
//! - kernel stacking with `alpha_h = 1` runs about 1-2 s past the
//!   demonstrated 10 s.

use crate::dmp::{ClockSpec, DmpGains, TrainSpec};
use crate::io::min_jerk_pose;
use crate::quat::UnitQuaternion;
use crate::vec3::Vec3;
use crate::PoseTrajectory;

pub const START: [f64; 4] = [0.247, 0.178, 0.318, -0.897];
pub const VIA: [f64; 4] = [0.372, -0.499, -0.616, 0.482];
pub const SEGMENT_DURATION: f64 = 5.0;
pub const DT: f64 = 0.01;
pub const STIFFNESS: f64 = 10.0;
pub const KERNELS: usize = 15;
pub const TAU: f64 = 1.0;

/// Decay rate of the exponential clock. Chosen so the forcing term has
/// effectively vanished ahead of each segment's end, which is what lets a
/// moving-target merge cross the via accurately.
pub const GAMMA: f64 = 2.0;
/// Kernel overlap of the phase-form banks (see `KernelBank`); narrower than
/// the 0.5-intersection placement to keep late-phase tracking tight at this
/// decay rate.
pub const PHASE_OVERLAP: f64 = 0.5;
/// Kernel overlap of the time-form banks used for stacking.
pub const TIME_OVERLAP: f64 = 0.8;

pub fn gains() -> DmpGains {
    DmpGains::critically_damped(STIFFNESS)
}

pub fn phase_train_spec() -> TrainSpec {
    TrainSpec {
        n_kernels: KERNELS,
        gains: gains(),
        clock: ClockSpec::Exp { gamma: GAMMA },
        tau: TAU,
        kernel_overlap: PHASE_OVERLAP,
    }
}

pub fn time_train_spec() -> TrainSpec {
    TrainSpec {
        n_kernels: KERNELS,
        gains: gains(),
        clock: ClockSpec::Sigmoid {
            alpha_h: 1.0,
            dt: DT,
        },
        tau: TAU,
        kernel_overlap: TIME_OVERLAP,
    }
}

fn origin() -> Vec3 {
    [0.0; 3]
}

/// The two minimum-jerk segments: start to via, via back to start. The via
/// quaternion is sign-flipped onto the start's hemisphere.
pub fn demo_segments() -> (PoseTrajectory, PoseTrajectory) {
    let q0 = UnitQuaternion::from_array(START).expect("benchmark start is unit");
    let via = UnitQuaternion::from_array(VIA).expect("benchmark via is unit");
    let seg1 = min_jerk_pose((origin(), q0), (origin(), via), SEGMENT_DURATION, DT)
        .expect("non-antipodal endpoints");
    let via_aligned = seg1.last().q;
    let seg2 = min_jerk_pose(
        (origin(), via_aligned),
        (origin(), q0),
        SEGMENT_DURATION,
        DT,
    )
    .expect("non-antipodal endpoints");
    (seg1, seg2)
}

/// The concatenated 10 s demonstration (via point at the 5 s mark).
pub fn full_demo() -> PoseTrajectory {
    let (seg1, seg2) = demo_segments();
    let mut samples = seg1.samples;
    for s in &seg2.samples[1..] {
        let mut shifted = *s;
        shifted.t += SEGMENT_DURATION;
        samples.push(shifted);
    }
    PoseTrajectory { dt: DT, samples }
}
