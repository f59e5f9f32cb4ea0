//! Command-line front end: train primitives from demonstrations, merge them
//! with one of the three strategies, verify coupled bimanual stability, and
//! generate the synthetic benchmark demo.
//!
//! Exit codes: 0 success, 1 verification/acceptance failure, 2 usage or
//! input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use dmpmerge_core::coupled::{self, CoupledError, ScenarioFile};
use dmpmerge_core::dmp::{self, ClockSpec, DmpGains, TrainSpec};
use dmpmerge_core::io::{self, ExportFormat, IoError};
use dmpmerge_core::merge::{
    self, MergeError, MergePlan, MovingTargetParams, PosePrimitive, Strategy, SwitchParams,
    SwitchTrigger,
};
use dmpmerge_core::metrics::compute_metrics;
use dmpmerge_core::benchmark;
use dmpmerge_core::quat;
use dmpmerge_core::vec3;

#[derive(Debug)]
enum CliError {
    /// Bad usage or unreadable/invalid input: exit 2.
    Usage(String),
    /// A verification or acceptance check failed: exit 1.
    Failure(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<dmp::TrainError> for CliError {
    fn from(e: dmp::TrainError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<MergeError> for CliError {
    fn from(e: MergeError) -> Self {
        match e {
            MergeError::Stall { .. } => CliError::Failure(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "dmpmerge",
    about = "Learn, merge and verify Cartesian pose motion primitives",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark demonstration.
    Synth(SynthArgs),
    /// Train one primitive pair per demonstrated segment.
    Train(TrainArgs),
    /// Merge trained primitives into one trajectory.
    Merge(MergeArgs),
    /// Verify coupled bimanual stability for a scenario.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::QuatMerge)]
    preset: Preset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Two minimum-jerk orientation segments through a via point.
    QuatMerge,
}

#[derive(Args)]
struct TrainArgs {
    /// Demonstration CSV.
    #[arg(long)]
    demo: PathBuf,
    /// Directory for the per-segment model files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Kernels per primitive.
    #[arg(long, default_value_t = benchmark::KERNELS)]
    kernels: usize,
    /// Scalar stiffness, expanded to a diagonal matrix; damping is set
    /// critically.
    #[arg(long, default_value_t = benchmark::STIFFNESS)]
    stiffness: f64,
    #[arg(long, default_value_t = benchmark::TAU)]
    tau: f64,
    /// Exponential clock decay rate (phase form).
    #[arg(long, default_value_t = benchmark::GAMMA)]
    gamma: f64,
    /// Sigmoid steepness (time form).
    #[arg(long, default_value_t = 1.0)]
    alpha_h: f64,
    /// Kernel representation: the classic phase form or the stacked-kernel
    /// time form.
    #[arg(long, value_enum, default_value_t = Form::Phase)]
    form: Form,
    /// Kernel overlap factor; defaults to the benchmark value of the chosen
    /// form.
    #[arg(long)]
    kernel_overlap: Option<f64>,
    /// Zero-velocity segmentation threshold (m/s and rad/s).
    #[arg(long, default_value_t = 0.005)]
    seg_threshold: f64,
    /// Unused by training (deterministic), accepted for interface symmetry.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON config whose fields override the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Form {
    Phase,
    Time,
}

#[derive(Args)]
struct MergeArgs {
    /// Trained model files, in execution order.
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Output trajectory path.
    #[arg(long)]
    out: PathBuf,
    /// Optional metrics JSON path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Demonstration to compare against for tracking-error metrics.
    #[arg(long)]
    demo: Option<PathBuf>,
    /// Goal-distance switch threshold (m and rad).
    #[arg(long, default_value_t = 0.01)]
    threshold: f64,
    /// Use the velocity-threshold switch rule instead of goal distance.
    #[arg(long, default_value_t = false)]
    velocity_trigger: bool,
    /// Crossing speed per axis for the moving-target strategy (m/s, rad/s).
    #[arg(long, default_value_t = 0.01)]
    cross_vel: f64,
    /// Sigmoid steepness for the kernel-stack strategy.
    #[arg(long, default_value_t = 1.0)]
    alpha_h: f64,
    /// Restrict the stacked forcing term to the active kernel window.
    #[arg(long, default_value_t = false)]
    windowed: bool,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Switch,
    MovingTarget,
    KernelStack,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct VerifyArgs {
    /// Scenario JSON (goals, gains, case, initial-state distribution).
    #[arg(long)]
    scenario: PathBuf,
    /// Report JSON path; written on success and on violation.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Override the scenario's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the scenario's step size.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Config-file overrides; any field present replaces the corresponding flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    kernels: Option<usize>,
    stiffness: Option<f64>,
    tau: Option<f64>,
    gamma: Option<f64>,
    alpha_h: Option<f64>,
    kernel_overlap: Option<f64>,
    seg_threshold: Option<f64>,
    threshold: Option<f64>,
    cross_vel: Option<f64>,
    dt: Option<f64>,
    trials: Option<usize>,
    seed: Option<u64>,
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn require_readable(path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("no such file: {}", path.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Merge(args) => cmd_merge(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let demo = match args.preset {
        Preset::QuatMerge => benchmark::full_demo(),
    };
    io::export_trajectory(&demo, &args.out, ExportFormat::Csv)?;
    println!(
        "wrote {} samples ({}s at dt={}) to {}",
        demo.len(),
        demo.duration(),
        demo.dt,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let kernels = cfg.kernels.unwrap_or(args.kernels);
    let stiffness = cfg.stiffness.unwrap_or(args.stiffness);
    let tau = cfg.tau.unwrap_or(args.tau);
    let gamma = cfg.gamma.unwrap_or(args.gamma);
    let alpha_h = cfg.alpha_h.unwrap_or(args.alpha_h);
    let seg_threshold = cfg.seg_threshold.unwrap_or(args.seg_threshold);

    require_readable(&args.demo)?;
    let demo = io::load_demo(&args.demo)?;
    let segments = io::segment_zero_velocity(&demo, seg_threshold)?;

    let (clock, default_overlap) = match args.form {
        Form::Phase => (ClockSpec::Exp { gamma }, benchmark::PHASE_OVERLAP),
        Form::Time => (
            ClockSpec::Sigmoid {
                alpha_h,
                dt: demo.dt,
            },
            benchmark::TIME_OVERLAP,
        ),
    };
    let spec = TrainSpec {
        n_kernels: kernels,
        gains: DmpGains::critically_damped(stiffness),
        clock,
        tau,
        kernel_overlap: cfg.kernel_overlap.or(args.kernel_overlap).unwrap_or(default_overlap),
    };

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out_dir.display())))?;

    for (i, seg) in segments.iter().enumerate() {
        let seg_demo = io::extract_segment(&demo, seg);
        let pos = dmp::train_position(&seg_demo, &spec)?;
        let ori = dmp::train_orientation(&seg_demo, &spec)?;
        for flagged in pos.singular_kernels.iter().chain(&ori.singular_kernels) {
            eprintln!("warning: segment {i}: kernel {flagged} had no support and was zeroed");
        }
        let prim = PosePrimitive::new(pos.model, ori.model)?;

        // reproduction error of the trained pair against its own segment
        let rollout = dmp::rollout_pair(
            &prim.position,
            &prim.orientation,
            prim.duration(),
            seg_demo.dt,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        let n = rollout.len().min(seg_demo.len());
        let mut p_sq = 0.0;
        let mut o_sq = 0.0;
        for (a, b) in rollout.samples[..n].iter().zip(&seg_demo.samples[..n]) {
            p_sq += vec3::dot(vec3::sub(a.p, b.p), vec3::sub(a.p, b.p));
            let e = quat::qdist(&a.q, &b.q);
            o_sq += e * e;
        }
        let path = args.out_dir.join(format!("segment_{i:02}.json"));
        io::save_model(&path, &prim)?;
        println!(
            "segment {i:02}: rows {}..={}, position RMSE {:.3e} m, orientation RMSE {:.3e} rad -> {}",
            seg.start_index,
            seg.end_index,
            (p_sq / n as f64).sqrt(),
            (o_sq / n as f64).sqrt(),
            path.display()
        );
    }
    println!("trained {} model pair(s)", segments.len());
    Ok(())
}

fn cmd_merge(args: MergeArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let threshold = cfg.threshold.unwrap_or(args.threshold);
    let cross = cfg.cross_vel.unwrap_or(args.cross_vel);
    let alpha_h = cfg.alpha_h.unwrap_or(args.alpha_h);
    let dt = cfg.dt.unwrap_or(args.dt);

    let mut primitives = Vec::with_capacity(args.models.len());
    for path in &args.models {
        require_readable(path)?;
        primitives.push(io::load_model(path)?);
    }
    let count = primitives.len();

    let strategy = match args.strategy {
        StrategyArg::Switch => Strategy::Switch(SwitchParams {
            trigger: if args.velocity_trigger {
                SwitchTrigger::Velocity {
                    linear: threshold,
                    angular: threshold,
                }
            } else {
                SwitchTrigger::GoalDistance {
                    position: threshold,
                    orientation: threshold,
                }
            },
        }),
        StrategyArg::MovingTarget => Strategy::MovingTarget(MovingTargetParams {
            cross_linear: vec![[cross; 3]; count],
            cross_angular: vec![[cross; 3]; count],
        }),
        StrategyArg::KernelStack => Strategy::KernelStack {
            alpha_h,
            windowed: args.windowed,
        },
    };
    let plan = MergePlan::new(primitives, strategy)?;
    let output = merge::merge(&plan, dt)?;

    let demo = match &args.demo {
        Some(path) => {
            require_readable(path)?;
            Some(io::load_demo(path)?)
        }
        None => None,
    };
    let metrics = compute_metrics(&output, &plan, demo.as_ref());

    let format = match args.format {
        FormatArg::Csv => ExportFormat::Csv,
        FormatArg::Json => ExportFormat::Json,
    };
    io::export_trajectory(&output.trajectory, &args.out, format)?;
    if let Some(path) = &args.metrics {
        let mut bytes = serde_json::to_vec_pretty(&metrics)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        bytes.push(b'\n');
        io::atomic_write(path, &bytes)?;
    }
    println!(
        "merged {} primitive(s): duration {:.2} s, {} samples, switches at {:?}",
        count,
        metrics.duration,
        output.trajectory.len(),
        output.switch_times
    );
    if let Some(e) = metrics.e_o_max {
        println!("max orientation tracking error {e:.4} rad");
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    require_readable(&args.scenario)?;
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.scenario.display())))?;
    let mut scenario: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid scenario: {e}")))?;
    if let Some(t) = cfg.trials.or(args.trials) {
        scenario.trials = t;
    }
    if let Some(dt) = cfg.dt.or(args.dt) {
        scenario.dt = dt;
    }
    if let Some(seed) = cfg.seed.or(args.seed) {
        scenario.seed = seed;
    }

    let (system, options) = scenario.build().map_err(|e| CliError::Failure(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let outcome = coupled::verify_stability(&system, &options, &mut rng);

    let (report, failed) = match outcome {
        Ok(report) => (report, None),
        Err(CoupledError::StabilityViolation(report)) => {
            let first = report.violations.first().map(|v| {
                format!(
                    "trial {} at t={:.3}: {:?} (V {} -> {})",
                    v.trial, v.time, v.kind, v.v_before, v.v_after
                )
            });
            let msg = match first {
                Some(f) => format!(
                    "{} violation(s); first: {f}",
                    report.violations.len()
                ),
                None => "goal consistency or decoupling check failed".to_string(),
            };
            (*report, Some(msg))
        }
        Err(e) => return Err(CliError::Failure(e.to_string())),
    };

    if let Some(path) = &args.report {
        let mut bytes = serde_json::to_vec_pretty(&report)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        bytes.push(b'\n');
        io::atomic_write(path, &bytes)?;
    }
    let converged = report
        .trial_summaries
        .iter()
        .filter(|t| t.converged_at.is_some())
        .count();
    println!(
        "case {:?}: {} trials, {} converged, {} violation(s), goals consistent: {}",
        report.case,
        report.trials,
        converged,
        report.violations.len(),
        report.goal_consistency.consistent
    );
    match failed {
        None => Ok(()),
        Some(msg) => Err(CliError::Failure(msg)),
    }
}
