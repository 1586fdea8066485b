//! `ccma` command-line front end: scene I/O, forward and inverse solves,
//! trajectory tracking, derivative validation, execution simulation, and
//! convergence benchmarking. All commands write CSV artifacts plus a run
//! manifest into the output directory.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence, 3 validation
//! failure.

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector6;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ccma::assembly::{initial_assembly, serialize_scene, SceneModel};
use ccma::base_sim::{simulate_execution, OmniBaseGeometry, PiGains, SimConfig};
use ccma::canonical::{build_canonical, CANONICAL_NAMES};
use ccma::constraints::ControlVector;
use ccma::forward_solver::{solve_fk, FkConfig, HessianMode, SolveError};
use ccma::ik_control::{ee_state, solve_ik_step, track_waypoints, IkConfig, StepStatus};
use ccma::io::{
    fmt_f, load_waypoints, read_track_csv, write_csv, write_manifest, write_track_csv, RunManifest,
};
use ccma::resolve_scene;
use ccma::validate::{validate_derivatives, Layer, ValidateOptions, ALL_LAYERS};

const EXIT_INPUT: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "ccma", version, about = "Constrained collaborative mobile agents simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Canonical scene name or path to a scene file.
    #[arg(long)]
    scene: String,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct FkArgs {
    /// Forward-solver gradient tolerance.
    #[arg(long, default_value_t = 1e-10)]
    grad_tol: f64,
    /// Forward-solver iteration budget.
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Hessian approximation for the forward solver.
    #[arg(long, value_parser = parse_hessian, default_value = "full")]
    hessian: HessianMode,
}

fn parse_hessian(s: &str) -> Result<HessianMode, String> {
    match s {
        "full" => Ok(HessianMode::Full),
        "gauss-newton" => Ok(HessianMode::GaussNewton),
        other => Err(format!("unknown hessian mode '{other}' (expected full or gauss-newton)")),
    }
}

impl FkArgs {
    fn config(&self) -> FkConfig {
        FkConfig {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            hessian_mode: self.hessian,
            ..FkConfig::default()
        }
    }

    fn overrides(&self, o: &mut BTreeMap<String, String>) {
        let d = FkConfig::default();
        if self.grad_tol != d.grad_tol {
            o.insert("grad-tol".into(), format!("{:e}", self.grad_tol));
        }
        if self.max_iters != d.max_iters {
            o.insert("max-iters".into(), self.max_iters.to_string());
        }
        if self.hessian != d.hessian_mode {
            o.insert("hessian".into(), "gauss-newton".into());
        }
    }
}

#[derive(Args)]
struct IkArgs {
    /// Forward-solver gradient tolerance (tighter than solve-fk: the IK
    /// gradient is only as clean as the converged state beneath it).
    #[arg(long, default_value_t = 1e-12)]
    grad_tol: f64,
    /// Forward-solver iteration budget.
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Hessian approximation for the forward solver.
    #[arg(long, value_parser = parse_hessian, default_value = "full")]
    hessian: HessianMode,
    /// Residual-energy weight in the task objective.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Weight pulling unmasked end-effector coordinates toward the starting
    /// pose (prevents null-space drift on under-constrained tasks).
    #[arg(long, default_value_t = 1.0)]
    posture_weight: f64,
    /// Maximum commanded translation per sub-step (meters).
    #[arg(long, default_value_t = 0.010)]
    trans_step: f64,
    /// Maximum commanded rotation per sub-step (radians).
    #[arg(long, default_value_t = 0.005)]
    rot_step: f64,
    /// Command waypoints directly without step-limit subdivision.
    #[arg(long)]
    direct: bool,
}

impl IkArgs {
    fn config(&self) -> IkConfig {
        IkConfig {
            lambda: self.lambda,
            posture_weight: self.posture_weight,
            trans_step: self.trans_step,
            rot_step: self.rot_step,
            direct: self.direct,
            fk: FkConfig {
                grad_tol: self.grad_tol,
                max_iters: self.max_iters,
                hessian_mode: self.hessian,
                ..FkConfig::default()
            },
            ..IkConfig::default()
        }
    }

    fn overrides(&self, o: &mut BTreeMap<String, String>) {
        let d = IkConfig::default();
        if self.grad_tol != d.fk.grad_tol {
            o.insert("grad-tol".into(), format!("{:e}", self.grad_tol));
        }
        if self.max_iters != d.fk.max_iters {
            o.insert("max-iters".into(), self.max_iters.to_string());
        }
        if self.hessian != d.fk.hessian_mode {
            o.insert("hessian".into(), "gauss-newton".into());
        }
        if self.lambda != d.lambda {
            o.insert("lambda".into(), format!("{}", self.lambda));
        }
        if self.posture_weight != d.posture_weight {
            o.insert("posture-weight".into(), format!("{}", self.posture_weight));
        }
        if self.trans_step != d.trans_step {
            o.insert("trans-step".into(), format!("{}", self.trans_step));
        }
        if self.rot_step != d.rot_step {
            o.insert("rot-step".into(), format!("{}", self.rot_step));
        }
        if self.direct {
            o.insert("direct".into(), "true".into());
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a scene and solve forward kinematics.
    SolveFk {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        fk: FkArgs,
        /// Override one control slot, e.g. `--set-control 0=0.46` (repeatable).
        #[arg(long = "set-control", value_name = "IDX=VALUE")]
        set_control: Vec<String>,
    },
    /// Track a waypoint file with the IK controller.
    Track {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        ik: IkArgs,
        /// JSON waypoint file: array of [x, y, z, gamma, beta, alpha] poses.
        #[arg(long)]
        waypoints: PathBuf,
    },
    /// Check every analytic derivative layer against finite differences.
    ValidateGrad {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of perturbed configurations to test.
        #[arg(long, default_value_t = 1)]
        trials: u64,
        /// Finite-difference step for the local layers.
        #[arg(long, value_name = "H")]
        h: Option<f64>,
        /// Deliberately corrupt one layer (negative control); names a layer.
        #[arg(long, value_name = "LAYER")]
        corrupt: Option<String>,
    },
    /// Time one combined perturbation step (10 mm + 0.005 rad) per scene.
    Bench {
        /// Scene names or paths; defaults to all canonical scenes.
        #[arg(long = "scene")]
        scenes: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Repetitions per scene.
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
    /// Replay a tracked trajectory on simulated omnidirectional bases.
    Execute {
        #[command(flatten)]
        common: CommonArgs,
        /// Track CSV produced by the track command.
        #[arg(long)]
        track: PathBuf,
        /// Standard deviation of per-base planar position noise (meters).
        #[arg(long, default_value_t = 0.005)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Wheel radius (meters).
        #[arg(long, default_value_t = 0.03)]
        wheel_radius: f64,
        /// Wheel mount circle radius (meters).
        #[arg(long, default_value_t = 0.12)]
        mount_offset: f64,
        /// Controller period (seconds).
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// PI updates per trajectory row.
        #[arg(long, default_value_t = 40)]
        settle_steps: usize,
    },
    /// Export canonical scenes or normalize a scene file.
    Scene {
        /// Canonical scene name or path to a scene file.
        #[arg(long)]
        scene: Option<String>,
        /// Export every canonical scene.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

/// Input-type errors become `Err(message)` (exit 1); domain outcomes map to
/// exit codes here.
fn run() -> Result<ExitCode, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::SolveFk { common, fk, set_control } => cmd_solve_fk(common, fk, set_control),
        Command::Track { common, ik, waypoints } => cmd_track(common, ik, waypoints),
        Command::ValidateGrad { common, trials, h, corrupt } => {
            cmd_validate_grad(common, trials, h, corrupt)
        }
        Command::Bench { scenes, out, reps } => cmd_bench(scenes, out, reps),
        Command::Execute {
            common,
            track,
            noise_sigma,
            seed,
            wheel_radius,
            mount_offset,
            dt,
            settle_steps,
        } => cmd_execute(common, track, noise_sigma, seed, wheel_radius, mount_offset, dt, settle_steps),
        Command::Scene { scene, all, out } => cmd_scene(scene, all, out),
    }
}

fn prepare(common: &CommonArgs) -> Result<(SceneModel, nalgebra::DVector<f64>, ControlVector), String> {
    let model = resolve_scene(&common.scene).map_err(|e| e.to_string())?;
    let (s, u) = initial_assembly(&model).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| format!("cannot create output directory {}: {e}", common.out.display()))?;
    Ok((model, s, u))
}

fn manifest(command: &str, scene: &str, out: &Path, overrides: BTreeMap<String, String>, seed: Option<u64>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        scene: scene.to_string(),
        overrides,
        out_dir: out.display().to_string(),
        seed,
    }
}

fn cmd_solve_fk(
    common: CommonArgs,
    fk: FkArgs,
    set_control: Vec<String>,
) -> Result<ExitCode, String> {
    let (model, s0, mut u) = prepare(&common)?;
    let mut overrides = BTreeMap::new();
    fk.overrides(&mut overrides);
    for spec in &set_control {
        let (idx, value) = spec
            .split_once('=')
            .ok_or_else(|| format!("bad --set-control '{spec}' (expected IDX=VALUE)"))?;
        let idx: usize = idx.parse().map_err(|e| format!("bad control index '{idx}': {e}"))?;
        if idx >= u.len() {
            return Err(format!("control index {idx} out of range (0..{})", u.len()));
        }
        let value: f64 = value.parse().map_err(|e| format!("bad control value '{value}': {e}"))?;
        u.values[idx] = value;
        overrides.insert(format!("set-control[{idx}]"), format!("{value}"));
    }

    let report = match solve_fk(&model, &s0, &u.values, &fk.config()) {
        Ok(r) => r,
        Err(SolveError::SolverBreakdown { damping }) => {
            eprintln!("forward solve broke down at damping {damping:.1e}");
            return Ok(ExitCode::from(EXIT_NONCONVERGENCE));
        }
        Err(e) => return Err(e.to_string()),
    };

    let rows: Vec<Vec<String>> = model
        .bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            let sl = &report.s_hat.as_slice()[6 * b..6 * b + 6];
            let mut cells = vec![body.name.clone()];
            // state layout is (gamma, beta, alpha, x, y, z)
            cells.extend(sl.iter().map(|&v| fmt_f(v)));
            cells
        })
        .collect();
    write_csv(
        &common.out.join("state.csv"),
        "state",
        &["body", "gamma", "beta", "alpha", "x", "y", "z"],
        &rows,
    )
    .map_err(|e| e.to_string())?;

    let summary = serde_json::json!({
        "energy": report.energy,
        "grad_norm": report.grad_norm,
        "iters": report.iters,
        "wall_time": report.wall_time,
        "converged": report.converged,
        "ee": ee_state(&model, &report.s_hat).as_slice(),
    });
    std::fs::write(
        common.out.join("solve_report.json"),
        serde_json::to_string_pretty(&summary).unwrap() + "\n",
    )
    .map_err(|e| e.to_string())?;
    write_manifest(&common.out, &manifest("solve-fk", &common.scene, &common.out, overrides, None))
        .map_err(|e| e.to_string())?;

    println!(
        "solve-fk {}: converged={} E={:.3e} iters={} ({:.2} ms)",
        model.name,
        report.converged,
        report.energy,
        report.iters,
        report.wall_time * 1e3
    );
    if report.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("forward solve did not converge within {} iterations", fk.max_iters);
        Ok(ExitCode::from(EXIT_NONCONVERGENCE))
    }
}

fn cmd_track(common: CommonArgs, ik: IkArgs, waypoints: PathBuf) -> Result<ExitCode, String> {
    let (model, s0, u0) = prepare(&common)?;
    let targets = load_waypoints(&waypoints).map_err(|e| e.to_string())?;
    let mut overrides = BTreeMap::new();
    ik.overrides(&mut overrides);
    overrides.insert("waypoints".into(), waypoints.display().to_string());

    let report = track_waypoints(&model, &s0, &u0, &targets, &ik.config())
        .map_err(|e| e.to_string())?;
    write_track_csv(&common.out.join("track.csv"), &report.rows, model.n_bases())
        .map_err(|e| e.to_string())?;
    write_manifest(&common.out, &manifest("track", &common.scene, &common.out, overrides, None))
        .map_err(|e| e.to_string())?;

    let failures = report
        .rows
        .iter()
        .filter(|r| r.status != StepStatus::Converged)
        .count();
    println!(
        "track {}: {} sub-steps, {} failures, masked RMSE [{}]",
        model.name,
        report.rows.len(),
        failures,
        report
            .rmse
            .iter()
            .map(|v| format!("{v:.2e}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if failures == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{failures} sub-steps did not converge (see status column)");
        Ok(ExitCode::from(EXIT_NONCONVERGENCE))
    }
}

fn cmd_validate_grad(
    common: CommonArgs,
    trials: u64,
    h: Option<f64>,
    corrupt: Option<String>,
) -> Result<ExitCode, String> {
    let (model, s0, u0) = prepare(&common)?;
    let corrupt = match corrupt.as_deref() {
        None => None,
        Some(name) => Some(
            Layer::from_name(name)
                .ok_or_else(|| format!("unknown layer '{name}' (expected one of {:?})",
                    ALL_LAYERS.map(|l| l.name())))?,
        ),
    };
    let mut overrides = BTreeMap::new();
    if trials != 1 {
        overrides.insert("trials".into(), trials.to_string());
    }
    if let Some(h) = h {
        overrides.insert("h".into(), format!("{h:e}"));
    }
    if let Some(layer) = corrupt {
        overrides.insert("corrupt".into(), layer.name().into());
    }

    // worst result per layer across trials
    let mut worst: Vec<Option<ccma::validate::LayerResult>> = vec![None; ALL_LAYERS.len()];
    for trial in 0..trials.max(1) {
        let mut opts = ValidateOptions { trial, ..ValidateOptions::default() };
        if let Some(h) = h {
            opts.h_local = h;
        }
        let report = validate_derivatives(&model, &s0, &u0, &ALL_LAYERS, corrupt, &opts)
            .map_err(|e| e.to_string())?;
        for (i, r) in report.results.into_iter().enumerate() {
            let keep = match &worst[i] {
                Some(w) => r.max_rel_err > w.max_rel_err,
                None => true,
            };
            if keep {
                worst[i] = Some(r);
            }
        }
    }
    let results: Vec<_> = worst.into_iter().map(Option::unwrap).collect();

    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.layer.name().to_string(),
                fmt_f(r.max_rel_err),
                fmt_f(r.tolerance),
                r.worst_index.0.to_string(),
                r.worst_index.1.to_string(),
                if r.pass { "pass" } else { "fail" }.to_string(),
            ]
        })
        .collect();
    write_csv(
        &common.out.join("validate.csv"),
        "validate",
        &["layer", "max_rel_err", "tolerance", "worst_row", "worst_col", "result"],
        &rows,
    )
    .map_err(|e| e.to_string())?;
    write_manifest(
        &common.out,
        &manifest("validate-grad", &common.scene, &common.out, overrides, None),
    )
    .map_err(|e| e.to_string())?;

    let mut all_pass = true;
    for r in &results {
        println!(
            "{:<18} max rel err {:>10.3e}  tol {:>8.1e}  {}",
            r.layer.name(),
            r.max_rel_err,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
        if !r.pass {
            all_pass = false;
            eprintln!(
                "layer {} failed: max rel err {:.3e} at index ({}, {})",
                r.layer.name(),
                r.max_rel_err,
                r.worst_index.0,
                r.worst_index.1
            );
        }
    }
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_VALIDATION))
    }
}

/// Builds the combined perturbation target for `bench`: 10 mm of translation
/// split across the masked translation coordinates plus 0.005 rad on the
/// first masked rotation coordinate.
fn bench_target(model: &SceneModel, x0: &Vector6<f64>) -> Vector6<f64> {
    let mut target = *x0;
    let n_trans = model.task_mask[..3].iter().filter(|&&m| m).count().max(1);
    let step = 0.010 / (n_trans as f64).sqrt();
    for c in 0..3 {
        if model.task_mask[c] {
            target[c] += step;
        }
    }
    if let Some(c) = (3..6).find(|&c| model.task_mask[c]) {
        target[c] += 0.005;
    }
    target
}

fn cmd_bench(scenes: Vec<String>, out: PathBuf, reps: usize) -> Result<ExitCode, String> {
    let scenes = if scenes.is_empty() {
        CANONICAL_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        scenes
    };
    std::fs::create_dir_all(&out)
        .map_err(|e| format!("cannot create output directory {}: {e}", out.display()))?;

    let cfg = IkConfig::default();
    let mut rows = Vec::new();
    for spec in &scenes {
        let model = resolve_scene(spec).map_err(|e| e.to_string())?;
        let (s0, u0) = initial_assembly(&model).map_err(|e| e.to_string())?;
        let target = bench_target(&model, &ee_state(&model, &s0));

        let mut times_ms = Vec::with_capacity(reps.max(1));
        for _ in 0..reps.max(1) {
            let start = Instant::now();
            let step = solve_ik_step(&model, &s0, &u0, &target, &cfg)
                .map_err(|e| e.to_string())?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            if !step.converged {
                eprintln!("bench: {} did not converge on the perturbation step", model.name);
                return Ok(ExitCode::from(EXIT_NONCONVERGENCE));
            }
            times_ms.push(elapsed);
        }
        times_ms.sort_by(f64::total_cmp);
        let mean = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
        let median = times_ms[times_ms.len() / 2];
        println!(
            "bench {}: n_b={} n_m={} free={} mean {:.2} ms median {:.2} ms",
            model.name,
            model.n_bodies(),
            model.n_bases(),
            model.num_free_controls(),
            mean,
            median
        );
        rows.push(vec![
            model.name.clone(),
            model.n_bodies().to_string(),
            model.n_bases().to_string(),
            model.num_free_controls().to_string(),
            times_ms.len().to_string(),
            fmt_f(mean),
            fmt_f(median),
        ]);
    }
    write_csv(
        &out.join("bench.csv"),
        "bench",
        &["scene", "n_bodies", "n_bases", "free_controls", "reps", "mean_ms", "median_ms"],
        &rows,
    )
    .map_err(|e| e.to_string())?;
    let mut overrides = BTreeMap::new();
    overrides.insert("reps".into(), reps.to_string());
    write_manifest(&out, &manifest("bench", &scenes.join(";"), &out, overrides, None))
        .map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_execute(
    common: CommonArgs,
    track: PathBuf,
    noise_sigma: f64,
    seed: u64,
    wheel_radius: f64,
    mount_offset: f64,
    dt: f64,
    settle_steps: usize,
) -> Result<ExitCode, String> {
    let (model, s0, u0) = prepare(&common)?;
    let trajectory = read_track_csv(&track, model.n_bases()).map_err(|e| e.to_string())?;
    let cfg = SimConfig {
        geometry: OmniBaseGeometry {
            wheel_radius,
            mount_offset,
            ..OmniBaseGeometry::default()
        },
        gains: PiGains::default(),
        dt,
        settle_steps,
        noise_sigma,
        seed,
        fk: FkConfig::default(),
    };

    let report = match simulate_execution(&model, &s0, &u0, &trajectory, &cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("execution simulation failed: {e}");
            return Ok(ExitCode::from(EXIT_NONCONVERGENCE));
        }
    };

    let mut header: Vec<String> = vec!["step".into()];
    for c in ["x", "y", "z", "gamma", "beta", "alpha"] {
        header.push(format!("cmd_{c}"));
    }
    for c in ["x", "y", "z", "gamma", "beta", "alpha"] {
        header.push(format!("sim_{c}"));
    }
    for k in 0..model.n_bases() {
        for c in ["tx", "ty", "ttheta", "sx", "sy", "stheta", "w0", "w1", "w2"] {
            header.push(format!("base{k}_{c}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.step.to_string()];
            cells.extend(r.commanded_ee.iter().map(|&v| fmt_f(v)));
            cells.extend(r.simulated_ee.iter().map(|&v| fmt_f(v)));
            for k in 0..model.n_bases() {
                cells.extend(r.target_bases[k].iter().map(|&v| fmt_f(v)));
                cells.extend(r.simulated_bases[k].iter().map(|&v| fmt_f(v)));
                cells.extend(r.wheel_speeds[k].iter().map(|&v| fmt_f(v)));
            }
            cells
        })
        .collect();
    write_csv(&common.out.join("execute.csv"), "execute", &header_refs, &rows)
        .map_err(|e| e.to_string())?;

    let summary = serde_json::json!({
        "rmse": report.rmse,
        "pos_rmse": report.pos_rmse,
        "rows": report.rows.len(),
    });
    std::fs::write(
        common.out.join("execute_report.json"),
        serde_json::to_string_pretty(&summary).unwrap() + "\n",
    )
    .map_err(|e| e.to_string())?;

    let mut overrides = BTreeMap::new();
    overrides.insert("track".into(), track.display().to_string());
    overrides.insert("noise-sigma".into(), format!("{noise_sigma}"));
    write_manifest(
        &common.out,
        &manifest("execute", &common.scene, &common.out, overrides, Some(seed)),
    )
    .map_err(|e| e.to_string())?;

    println!(
        "execute {}: {} rows, pos RMSE {:.2} mm",
        model.name,
        report.rows.len(),
        report.pos_rmse * 1e3
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_scene(scene: Option<String>, all: bool, out: PathBuf) -> Result<ExitCode, String> {
    std::fs::create_dir_all(&out)
        .map_err(|e| format!("cannot create output directory {}: {e}", out.display()))?;
    let names: Vec<String> = if all {
        CANONICAL_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        vec![scene.ok_or("pass --scene <name|path> or --all")?]
    };
    for spec in &names {
        let model = if CANONICAL_NAMES.contains(&spec.as_str()) {
            build_canonical(spec).map_err(|e| e.to_string())?
        } else {
            resolve_scene(spec).map_err(|e| e.to_string())?
        };
        let path = out.join(format!("{}.json", model.name));
        std::fs::write(&path, serialize_scene(&model) + "\n")
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        println!("wrote {}", path.display());
    }
    write_manifest(
        &out,
        &manifest("scene", &names.join(";"), &out, BTreeMap::new(), None),
    )
    .map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}
