//! Trajectory quality metrics for merged rollouts.
//!
//! Conventions fixed here: orientation errors are the norm of the
//! vector-part error on hemisphere-aligned pairs; the tracking error
//! compares against the demonstration with each segment aligned to its
//! primitive's activation window; a via distance is the minimum over time
//! of the distance to an intermediate goal; the duration is the merged
//! trajectory's final timestamp.

use serde::{Deserialize, Serialize};

use crate::dmp::PoseTrajectory;
use crate::merge::{MergeOutput, MergePlan};
use crate::quat::{self, UnitQuaternion};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViaDistance {
    pub position: f64,
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeMetrics {
    /// Max position tracking error vs. the aligned demonstration, m.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_p_max: Option<f64>,
    /// Max orientation tracking error vs. the aligned demonstration, rad.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_o_max: Option<f64>,
    /// Closest approach to each intermediate goal.
    pub via_distances: Vec<ViaDistance>,
    /// Final timestamp of the merged trajectory, s.
    pub duration: f64,
    /// Largest per-step velocity change, max over linear (m/s) and angular
    /// (rad/s) parts.
    pub max_vel_jump: f64,
    /// Largest per-step acceleration change.
    pub max_acc_jump: f64,
}

/// Time-aligned reference pose: demo segment `l` (split by the plan's
/// primitive durations) is aligned to start at the merged trajectory's
/// `l`-th activation time and held at its end.
pub struct AlignedReference<'a> {
    demo: &'a PoseTrajectory,
    /// Row ranges of each demo segment, inclusive ends.
    rows: Vec<(usize, usize)>,
    /// Activation time of each segment in output time.
    starts: Vec<f64>,
}

impl<'a> AlignedReference<'a> {
    pub fn new(demo: &'a PoseTrajectory, plan: &MergePlan, switch_times: &[f64]) -> Self {
        let mut rows = Vec::with_capacity(plan.primitives.len());
        let mut starts = Vec::with_capacity(plan.primitives.len());
        let mut row = 0usize;
        let mut t_next = 0.0;
        for (l, prim) in plan.primitives.iter().enumerate() {
            let span = (prim.duration() / demo.dt).round() as usize;
            let end = (row + span).min(demo.len() - 1);
            rows.push((row, end));
            starts.push(t_next);
            t_next = switch_times
                .get(l)
                .copied()
                .unwrap_or(t_next + prim.duration());
            row = end;
        }
        Self { demo, rows, starts }
    }

    pub fn pose_at(&self, t: f64) -> (Vec3, UnitQuaternion) {
        let l = self
            .starts
            .iter()
            .rposition(|s| t >= *s)
            .unwrap_or(0);
        let (lo, hi) = self.rows[l];
        let local = t - self.starts[l];
        let idx = (lo + (local / self.demo.dt).round() as usize).min(hi);
        let s = &self.demo.samples[idx];
        (s.p, s.q)
    }
}

/// Compute the full metric set for a merged trajectory. The demonstration
/// is optional; without it the tracking errors are omitted.
pub fn compute_metrics(
    out: &MergeOutput,
    plan: &MergePlan,
    demo: Option<&PoseTrajectory>,
) -> MergeMetrics {
    let traj = &out.trajectory;

    let (e_p_max, e_o_max) = if let Some(demo) = demo {
        let reference = AlignedReference::new(demo, plan, &out.switch_times);
        let mut ep: f64 = 0.0;
        let mut eo: f64 = 0.0;
        for s in &traj.samples {
            let (p_ref, q_ref) = reference.pose_at(s.t);
            ep = ep.max(vec3::norm(vec3::sub(s.p, p_ref)));
            eo = eo.max(quat::qdist(&q_ref, &s.q));
        }
        (Some(ep), Some(eo))
    } else {
        (None, None)
    };

    let mut via_distances = Vec::new();
    for prim in &plan.primitives[..plan.primitives.len() - 1] {
        let mut best = ViaDistance {
            position: f64::INFINITY,
            orientation: f64::INFINITY,
        };
        for s in &traj.samples {
            best.position = best
                .position
                .min(vec3::norm(vec3::sub(s.p, prim.position.goal)));
            best.orientation = best.orientation.min(quat::qdist(&prim.orientation.goal, &s.q));
        }
        via_distances.push(best);
    }

    let mut max_vel_jump: f64 = 0.0;
    let mut max_acc_jump: f64 = 0.0;
    for w in traj.samples.windows(2) {
        max_vel_jump = max_vel_jump
            .max(vec3::norm(vec3::sub(w[1].v, w[0].v)))
            .max(vec3::norm(vec3::sub(w[1].w, w[0].w)));
        max_acc_jump = max_acc_jump
            .max(vec3::norm(vec3::sub(w[1].a, w[0].a)))
            .max(vec3::norm(vec3::sub(w[1].dw, w[0].dw)));
    }

    MergeMetrics {
        e_p_max,
        e_o_max,
        via_distances,
        duration: traj.last().t,
        max_vel_jump,
        max_acc_jump,
    }
}
