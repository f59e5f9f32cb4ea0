// Scratch numerical probe used during development; not part of the library.

use dmpmerge_core::dmp::{self, ClockSpec, DmpGains, TrainSpec};
use dmpmerge_core::io::min_jerk_pose;
use dmpmerge_core::merge::{
    MergePlan, MovingTargetParams, PosePrimitive, Strategy, SwitchParams, SwitchTrigger,
};
use dmpmerge_core::metrics::compute_metrics;
use dmpmerge_core::quat::{self, UnitQuaternion};
use dmpmerge_core::{vec3, PoseTrajectory};

fn benchmark_demo() -> (PoseTrajectory, PoseTrajectory, PoseTrajectory) {
    let q0 = UnitQuaternion::from_array([0.247, 0.178, 0.318, -0.897]).unwrap();
    let qd1 = UnitQuaternion::from_array([0.372, -0.499, -0.616, 0.482]).unwrap();
    let p = [0.0; 3];
    let seg1 = min_jerk_pose((p, q0), (p, qd1), 5.0, 0.01).unwrap();
    let qd1a = seg1.last().q;
    let seg2 = min_jerk_pose((p, qd1a), (p, q0), 5.0, 0.01).unwrap();
    let mut samples = seg1.samples.clone();
    for s in &seg2.samples[1..] {
        let mut s2 = *s;
        s2.t += 5.0;
        samples.push(s2);
    }
    (seg1, seg2, PoseTrajectory { dt: 0.01, samples })
}

fn train_pair(demo: &PoseTrajectory, spec: &TrainSpec) -> PosePrimitive {
    let pos = dmp::train_position(demo, spec).unwrap();
    let ori = dmp::train_orientation(demo, spec).unwrap();
    if !pos.singular_kernels.is_empty() || !ori.singular_kernels.is_empty() {
        println!(
            "  [singular kernels: pos {:?} ori {:?}]",
            pos.singular_kernels, ori.singular_kernels
        );
    }
    PosePrimitive::new(pos.model, ori.model).unwrap()
}

fn main() {
    let (seg1, seg2, demo) = benchmark_demo();
    let gains = DmpGains::critically_damped(10.0);

    println!("=== gamma x overlap sweep: phase-form training + switch + moving-target ===");
    for (gamma, overlap) in [
        (1.0, 1.0),
        (1.25, 0.6),
        (1.25, 0.8),
        (1.25, 1.0),
        (1.5, 0.5),
        (1.5, 0.6),
        (1.5, 0.8),
        (1.5, 1.0),
        (1.75, 0.6),
        (1.75, 0.8),
        (2.0, 0.5),
        (2.0, 0.6),
        (2.0, 0.8),
    ] {
        let mut spec = TrainSpec::new(15, gains, ClockSpec::Exp { gamma }, 1.0);
        spec.kernel_overlap = overlap;
        let prim1 = train_pair(&seg1, &spec);
        let prim2 = train_pair(&seg2, &spec);

        // reproduction quality
        let roll = dmp::rollout_orientation(&prim1.orientation, 5.0, 0.01).unwrap();
        let mut repro: f64 = 0.0;
        for (a, b) in roll.samples.iter().zip(&seg1.samples) {
            repro = repro.max(quat::qdist(&a.q, &b.q));
        }

        // switch
        let plan = MergePlan::new(
            vec![prim1.clone(), prim2.clone()],
            Strategy::Switch(SwitchParams {
                trigger: SwitchTrigger::GoalDistance {
                    position: 0.01,
                    orientation: 0.01,
                },
            }),
        )
        .unwrap();
        let (sw_t, sw_dur, sw_eo) = match dmpmerge_core::merge::merge(&plan, 0.01) {
            Ok(out) => {
                let m = compute_metrics(&out, &plan, Some(&demo));
                (out.switch_times[0], m.duration, m.e_o_max.unwrap())
            }
            Err(e) => {
                println!("gamma={gamma}: switch failed: {e}");
                continue;
            }
        };

        // moving target
        let plan_mt = MergePlan::new(
            vec![prim1.clone(), prim2.clone()],
            Strategy::MovingTarget(MovingTargetParams {
                cross_linear: vec![[0.0; 3]; 2],
                cross_angular: vec![[0.01; 3], [0.0; 3]],
            }),
        )
        .unwrap();
        let out_mt = dmpmerge_core::merge::merge(&plan_mt, 0.01).unwrap();
        let m_mt = compute_metrics(&out_mt, &plan_mt, Some(&demo));
        let idx = (5.0 / 0.01) as usize;
        let s5 = &out_mt.trajectory.samples[idx];
        let via_err = quat::qdist(&prim1.orientation.goal, &s5.q);
        let w_err = vec3::norm_inf(vec3::sub(s5.w, [0.01; 3]));
        println!(
            "gamma={gamma:<4} ov={overlap:<3}: repro={repro:.4} | sw t={sw_t:.2} dur={sw_dur:.2} eo={sw_eo:.4} | \
             mt dur={:.2} eo={:.3} via@T1={:.4} werr={:.4}",
            m_mt.duration,
            m_mt.e_o_max.unwrap(),
            via_err,
            w_err
        );
    }

    println!("=== theorem-1 style post-decay Lyapunov monotonicity (explicit Euler) ===");
    {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst_ratio: f64 = f64::NEG_INFINITY;
        let mut worst_terminal: f64 = 0.0;
        for trial in 0..100 {
            let k = [
                rng.gen_range(1.0..50.0),
                rng.gen_range(1.0..50.0),
                rng.gen_range(1.0..50.0),
            ];
            let gains = DmpGains::critically_damped_diag(k);
            let rand_quat = |rng: &mut rand_chacha::ChaCha8Rng| {
                let v = [
                    rng.gen_range(-1.0f64..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                quat::qexp(&quat::RotationVector(vec3::scale(v, 0.7))).unwrap()
            };
            let q0 = rand_quat(&mut rng);
            let qd = quat::hemisphere_align(&q0, &rand_quat(&mut rng));
            let demo = min_jerk_pose(([0.0; 3], q0), ([0.0; 3], qd), 5.0, 0.01).unwrap();
            let mut spec = TrainSpec::new(15, gains, ClockSpec::Exp { gamma: 2.0 }, 1.0);
            spec.kernel_overlap = 0.5;
            let trained = dmp::train_orientation(&demo, &spec).unwrap().model;
            let mut zeroed = trained.clone();
            for wv in zeroed.kernels.weights.iter_mut() {
                for w in wv.iter_mut() {
                    *w = 0.0;
                }
            }
            for model in [&trained, &zeroed] {
                let dt = 1e-3;
                let mut st = model.initial_state();
                let inv_k = model.gains.inv_k();
                let mut v_prev = f64::INFINITY;
                for step in 0..(15.0f64 / dt) as usize {
                    let t = step as f64 * dt;
                    let h = model.phase(t);
                    let (next, _) = model.step(&st, h, 0.0, dt).unwrap();
                    st = next;
                    let v = dmpmerge_core::coupled::v_e(&model.goal, &st.q)
                        + 0.5 * vec3::quad(inv_k, st.w);
                    if h < 1e-4 && v_prev.is_finite() {
                        let inc = (v - v_prev) / (1e-9 * (1.0 + v_prev));
                        worst_ratio = worst_ratio.max(inc);
                    }
                    v_prev = v;
                }
                let term = quat::qdist(&model.goal, &st.q).max(vec3::norm(st.w));
                worst_terminal = worst_terminal.max(term);
            }
            let _ = trial;
        }
        println!("worst post-decay step increase / tolerance: {worst_ratio:.3e} (must be < 1)");
        println!("worst terminal error: {worst_terminal:.3e} (must be < 1e-3)");
    }

    println!("=== kernel stack through the CSV pipeline (finite-difference derivatives) ===");
    {
        let dir = std::env::temp_dir().join("dmpmerge_probe");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("demo.csv");
        // write only pose columns so load_demo recomputes v/w/a/dw
        let mut thin = demo.clone();
        for s in &mut thin.samples {
            s.v = [0.0; 3];
            s.w = [0.0; 3];
            s.a = [0.0; 3];
            s.dw = [0.0; 3];
        }
        let mut text = String::from("t,px,py,pz,qw,qx,qy,qz\n");
        for s in &demo.samples {
            let q = s.q.as_array();
            text.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                s.t, s.p[0], s.p[1], s.p[2], q[0], q[1], q[2], q[3]
            ));
        }
        std::fs::write(&path, text).unwrap();
        let loaded = dmpmerge_core::io::load_demo(&path).unwrap();
        let segs = dmpmerge_core::io::segment_zero_velocity(&loaded, 0.005).unwrap();
        println!("segments: {:?}", segs.iter().map(|s| (s.start_index, s.end_index)).collect::<Vec<_>>());
        for overlap in [0.6, 0.8, 1.0] {
            let mut spec = TrainSpec::new(
                15,
                gains,
                ClockSpec::Sigmoid { alpha_h: 1.0, dt: 0.01 },
                1.0,
            );
            spec.kernel_overlap = overlap;
            let prims: Vec<PosePrimitive> = segs
                .iter()
                .map(|sg| train_pair(&dmpmerge_core::io::extract_segment(&loaded, sg), &spec))
                .collect();
            let plan = MergePlan::new(prims, Strategy::KernelStack { alpha_h: 1.0, windowed: false }).unwrap();
            let out = dmpmerge_core::merge::merge(&plan, 0.01).unwrap();
            let m = compute_metrics(&out, &plan, Some(&demo));
            println!(
                "csv ov={overlap}: dur={:.2} eo={:.4} via={:.5}",
                m.duration,
                m.e_o_max.unwrap(),
                m.via_distances[0].orientation
            );
        }
    }

    println!("=== overlap sweep: time-form training + kernel stack (alpha_h = 1) ===");
    for overlap in [0.4, 0.5, 0.6, 0.8, 1.0, 1.2] {
        let mut spec = TrainSpec::new(
            15,
            gains,
            ClockSpec::Sigmoid {
                alpha_h: 1.0,
                dt: 0.01,
            },
            1.0,
        );
        spec.kernel_overlap = overlap;
        let prim1 = train_pair(&seg1, &spec);
        let prim2 = train_pair(&seg2, &spec);
        let plan = MergePlan::new(
            vec![prim1, prim2],
            Strategy::KernelStack {
                alpha_h: 1.0,
                windowed: false,
            },
        )
        .unwrap();
        let out = dmpmerge_core::merge::merge(&plan, 0.01).unwrap();
        let m = compute_metrics(&out, &plan, Some(&demo));
        // acceleration jump stats
        let t = &out.trajectory;
        let mut jumps: Vec<(f64, f64)> = t
            .samples
            .windows(2)
            .map(|w| (w[0].t, vec3::norm(vec3::sub(w[1].dw, w[0].dw))))
            .collect();
        jumps.sort_by(|a, b| a.1.total_cmp(&b.1));
        let median = jumps[jumps.len() / 2].1;
        let (argmax, max) = jumps[jumps.len() - 1];
        // via details: argmin time, distance at t = 5, apex along-track coordinate
        let via = out
            .trajectory
            .samples
            .iter()
            .min_by(|a, b| {
                quat::qdist(&plan.primitives[0].orientation.goal, &a.q)
                    .total_cmp(&quat::qdist(&plan.primitives[0].orientation.goal, &b.q))
            })
            .unwrap();
        let t_min = via.t;
        let at5 = &out.trajectory.samples[(5.0 / 0.01) as usize];
        let d_at5 = quat::qdist(&plan.primitives[0].orientation.goal, &at5.q);
        // signed along-track coordinate of the apex relative to the via
        let q0 = plan.primitives[0].orientation.start;
        let r_full = quat::qlog(&quat::qmul(
            &quat::hemisphere_align(&q0, &plan.primitives[0].orientation.goal),
            &quat::conj(&q0),
        ))
        .unwrap()
        .0;
        let r_hat = vec3::scale(r_full, 1.0 / vec3::norm(r_full));
        let s_via = vec3::norm(r_full);
        let s_apex = out
            .trajectory
            .samples
            .iter()
            .map(|s| {
                let rel = quat::qmul(&quat::hemisphere_align(&q0, &s.q), &quat::conj(&q0));
                vec3::dot(quat::qlog(&rel).unwrap().0, r_hat)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "ov={overlap:>3}: dur={:.2} eo={:.4} via={:.4}@t={t_min:.2} d@5s={d_at5:.4} apex-via={:+.5} | dw max={max:.4}@t={argmax:.2} med={median:.5} ratio={:.2}",
            m.duration,
            m.e_o_max.unwrap(),
            m.via_distances[0].orientation,
            s_apex - s_via,
            max / median
        );
    }
}
