//! Cartesian pose motion primitives as second-order dynamical systems.
//!
//! The crate learns position and unit-quaternion orientation primitives from
//! demonstrations, merges sequences of them into single smooth trajectories
//! (state-handoff switching, moving targets with crossing velocities, or
//! kernel stacking with delayed goals), and numerically verifies the
//! convergence and Lyapunov-decrease properties of the single and coupled
//! bimanual systems.

pub mod benchmark;
pub mod clock;
pub mod coupled;
pub mod dmp;
pub mod error;
pub mod io;
pub mod merge;
pub mod metrics;
pub mod quat;
pub mod vec3;

pub use clock::{ExpClock, SigmoidClock};
pub use coupled::{
    CoupledState, CoupledSystem, CouplingCase, CouplingForces, RelState, StabilityReport,
    VerifyOptions,
};
pub use dmp::{
    ClockSpec, DmpGains, KernelBank, KernelForm, OrientationDmp, PoseSample, PoseTrajectory,
    PositionDmp, TrainSpec,
};
pub use error::{Error, Result};
pub use io::{ExportFormat, Segment};
pub use merge::{
    MergeOutput, MergePlan, MovingTargetParams, PosePrimitive, Strategy, SwitchParams,
    SwitchTrigger,
};
pub use metrics::{MergeMetrics, ViaDistance};
pub use quat::{AngularVelocity, QuatError, RotationVector, UnitQuaternion};
pub use vec3::Vec3;
