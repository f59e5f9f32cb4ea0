use dmpmerge_core::dmp::{self, ClockSpec, DmpGains, TrainSpec, PoseSample, PoseTrajectory};
use dmpmerge_core::quat::{self, UnitQuaternion};
use dmpmerge_core::io::min_jerk_pose;
use dmpmerge_core::vec3;


fn euler_check() {
    let demo = min_jerk_pose(([0.0;3], UnitQuaternion::IDENTITY), ([1.0,-0.5,0.3], UnitQuaternion::IDENTITY), 5.0, 0.01).unwrap();
    let mut spec = TrainSpec::new(15, DmpGains::critically_damped(10.0), ClockSpec::Exp { gamma: 1.0 }, 1.0);
    spec.kernel_overlap = 1.0;
    let pos = dmp::train_position(&demo, &spec).unwrap().model;
    for fine in [1usize, 10, 100] {
        let dt = 0.01 / fine as f64;
        let traj = dmp::rollout_position(&pos, 5.0, dt);
        let mut p_err: f64 = 0.0;
        for (i, b) in demo.samples.iter().enumerate() {
            let a = &traj.samples[i * fine];
            p_err = p_err.max(vec3::norm(vec3::sub(a.p, b.p)));
        }
        println!("rollout dt={dt}: max err {p_err:.5} ({:.2}%)", 100.0*p_err/1.157);
    }
    // half-turn at gamma = 2
    let q = quat::qexp(&quat::RotationVector([0.3, -0.5, 0.2])).unwrap();
    let samples: Vec<PoseSample> = (0..100).map(|i| PoseSample::at_rest(i as f64 * 0.01, [0.0;3], q, 0.0)).collect();
    let cdemo = PoseTrajectory { dt: 0.01, samples };
    let spec2 = TrainSpec::new(15, DmpGains::critically_damped(10.0), ClockSpec::Exp { gamma: 2.0 }, 1.0);
    let mut ori = dmp::train_orientation(&cdemo, &spec2).unwrap().model;
    ori.start = UnitQuaternion::IDENTITY;
    ori.goal = UnitQuaternion::new(0.0, [1.0, 0.0, 0.0]).unwrap();
    let traj = dmp::rollout_orientation(&ori, 10.0, 0.01).unwrap();
    println!("half-turn gamma=2 t=10: qdist={:.2e} |w|={:.2e}", quat::qdist(&ori.goal, &traj.last().q), vec3::norm(traj.last().w));
}

fn main() {
    euler_check();
    // half-turn zero-forcing convergence
    let q = quat::qexp(&quat::RotationVector([0.3, -0.5, 0.2])).unwrap();
    let samples: Vec<PoseSample> = (0..100).map(|i| PoseSample::at_rest(i as f64 * 0.01, [1.0,-2.0,0.5], q, 0.0)).collect();
    let demo = PoseTrajectory { dt: 0.01, samples };
    let spec = TrainSpec::new(15, DmpGains::critically_damped(10.0), ClockSpec::Exp { gamma: 1.0 }, 1.0);
    let mut ori = dmp::train_orientation(&demo, &spec).unwrap().model;
    ori.start = UnitQuaternion::IDENTITY;
    ori.goal = UnitQuaternion::new(0.0, [1.0, 0.0, 0.0]).unwrap();
    for dur in [5.0, 8.0, 10.0, 12.0, 15.0] {
        let traj = dmp::rollout_orientation(&ori, dur, 0.01).unwrap();
        println!("half-turn t={dur}: qdist={:.2e} |w|={:.2e}", quat::qdist(&ori.goal, &traj.last().q), vec3::norm(traj.last().w));
    }
    // duration of the trained model matters: constant_demo duration = 0.99 s!
    println!("ori.duration = {}", ori.duration);

    // position reproduction at (gamma, overlap) combos
    for (gamma, ov) in [(0.5, 1.0), (0.5, 0.8), (0.5, 0.6), (1.0, 0.6), (1.0, 0.5), (1.0, 0.4), (2.0, 0.3), (2.0, 0.25), (2.0, 0.5)] {
        let demo = min_jerk_pose(([0.0;3], UnitQuaternion::IDENTITY), ([1.0,-0.5,0.3], UnitQuaternion::IDENTITY), 5.0, 0.01).unwrap();
        let mut spec = TrainSpec::new(15, DmpGains::critically_damped(10.0), ClockSpec::Exp { gamma }, 1.0);
        spec.kernel_overlap = ov;
        let pos = dmp::train_position(&demo, &spec).unwrap().model;
        let traj = dmp::rollout_position(&pos, 5.0, 0.01);
        let mut p_err: f64 = 0.0;
        let mut rmse = 0.0;
        for (a, b) in traj.samples.iter().zip(&demo.samples) {
            let e = vec3::norm(vec3::sub(a.p, b.p));
            p_err = p_err.max(e);
            rmse += e * e;
        }
        rmse = (rmse / traj.samples.len() as f64).sqrt();
        let argmax = traj.samples.iter().zip(&demo.samples).max_by(|x, y| {
            vec3::norm(vec3::sub(x.0.p, x.1.p)).total_cmp(&vec3::norm(vec3::sub(y.0.p, y.1.p)))
        }).map(|x| x.0.t).unwrap();
        println!("pos repro gamma={gamma} ov={ov}: max={p_err:.4} ({:.2}%) @t={argmax:.2} rmse={rmse:.4}", 100.0*p_err/1.157);
    }
}
// appended: refined-dt check
