//! Command-line pipeline: simulate data, generate ground-truth flow, solve
//! for the extrinsic, evaluate predictions, and gradient-check the
//! differentiable pose layer.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.

use calibflow::camera::rasterize_depth;
use calibflow::flow::ground_truth_flow;
use calibflow::io;
use calibflow::metrics::{
    aggregate, calibration_error, csv_line, render_single_error, render_summary_table,
    CalibrationError, CSV_HEADER,
};
use calibflow::sim::{
    default_extrinsic, make_experiment_quantized, parse_sim_config, Geometry, SimConfig,
};
use calibflow::solver::{
    correspondences_from_flow, gradcheck_run, solve_gated, solve_weighted, SolveOptions,
    SolveReport, SolverError,
};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "calibflow",
    version,
    about = "LiDAR-camera extrinsic calibration pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic calibration bundle into a directory.
    Simulate(SimulateArgs),
    /// Compute ground-truth calibration flow for a cloud and two extrinsics.
    FlowGt(FlowGtArgs),
    /// Refine an initial extrinsic from flow-corrected correspondences.
    Solve(SolveArgs),
    /// Compare predicted extrinsics against ground truth.
    Eval(EvalArgs),
    /// Check the pose Jacobian against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Sectioned key = value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_points: Option<usize>,
    /// Scene layout: uniform-frustum | planes | clusters.
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long)]
    flow_sigma: Option<f64>,
    #[arg(long)]
    outlier_fraction: Option<f64>,
    #[arg(long)]
    outlier_magnitude: Option<f64>,
    #[arg(long)]
    informative: Option<bool>,
    #[arg(long)]
    max_translation: Option<f64>,
    #[arg(long)]
    max_rotation_deg: Option<f64>,
}

#[derive(Args)]
struct FlowGtArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    init_extrinsic: PathBuf,
    #[arg(long)]
    gt_extrinsic: PathBuf,
    /// Output flow file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    init_extrinsic: PathBuf,
    #[arg(long)]
    flow: PathBuf,
    /// Gate correspondences by normalized uncertainty before solving.
    #[arg(long)]
    gated: bool,
    /// Gate threshold on normalized uncertainty.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    damping: f64,
    /// When given, the report includes the calibration error against it.
    #[arg(long)]
    gt_extrinsic: Option<PathBuf>,
    /// Write the predicted extrinsic here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted extrinsic file, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth extrinsic file, or a directory matched by filename.
    #[arg(long)]
    gt: PathBuf,
    /// Write per-frame comma-separated records here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    n_instances: usize,
}

enum AppError {
    Data(String),
    Solver(String),
}

impl AppError {
    fn exit_code(&self) -> ExitCode {
        match self {
            AppError::Data(_) => ExitCode::from(2),
            AppError::Solver(_) => ExitCode::from(3),
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Data(m) | AppError::Solver(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> AppError {
    AppError::Data(e.to_string())
}

fn solver_err(e: SolverError) -> AppError {
    AppError::Solver(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::FlowGt(args) => cmd_flow_gt(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn load_sim_config(args: &SimulateArgs) -> Result<SimConfig, AppError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(data_err)?;
            parse_sim_config(&text).map_err(data_err)?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_points {
        cfg.scene.n_points = n;
    }
    if let Some(g) = &args.geometry {
        cfg.scene.geometry = match g.as_str() {
            "uniform-frustum" => Geometry::UniformFrustum,
            "planes" => Geometry::Planes,
            "clusters" => Geometry::Clusters,
            other => return Err(AppError::Data(format!("unknown geometry {other:?}"))),
        };
    }
    if let Some(v) = args.flow_sigma {
        cfg.noise.flow_sigma = v;
    }
    if let Some(v) = args.outlier_fraction {
        cfg.noise.outlier_fraction = v;
    }
    if let Some(v) = args.outlier_magnitude {
        cfg.noise.outlier_magnitude = v;
    }
    if let Some(v) = args.informative {
        cfg.noise.uncertainty_informative = v;
    }
    let mut max_t = cfg.range.max_translation();
    let mut max_r = cfg.range.max_rotation();
    if let Some(v) = args.max_translation {
        max_t = v;
    }
    if let Some(v) = args.max_rotation_deg {
        max_r = v.to_radians();
    }
    cfg.range = calibflow::geometry::PerturbRange::new(max_t, max_r).map_err(data_err)?;
    Ok(cfg)
}

const MANIFEST_FILES: [(&str, &str); 6] = [
    ("cloud", "cloud.bin"),
    ("intrinsics", "intrinsics.txt"),
    ("extrinsic_gt", "extrinsic_gt.txt"),
    ("extrinsic_init", "extrinsic_init.txt"),
    ("flow_gt", "flow_gt.dxqf"),
    ("flow_noisy", "flow_noisy.dxqf"),
];

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, AppError> {
    let cfg = load_sim_config(&args)?;
    std::fs::create_dir_all(&args.out).map_err(data_err)?;

    // The quantized pipeline keeps the on-disk bundle self-consistent: a
    // solver re-reading cloud.bin reproduces the exact depth image these
    // flow files were built from.
    let exp = make_experiment_quantized(
        &default_extrinsic(),
        &cfg.scene,
        &cfg.noise,
        &cfg.range,
        &cfg.intrinsics,
        cfg.seed,
    )
    .map_err(data_err)?;

    let dir = &args.out;
    io::write_point_cloud(&exp.cloud, dir.join("cloud.bin")).map_err(data_err)?;
    io::write_intrinsics(&cfg.intrinsics, dir.join("intrinsics.txt")).map_err(data_err)?;
    io::write_extrinsic(&exp.t_gt, dir.join("extrinsic_gt.txt")).map_err(data_err)?;
    io::write_extrinsic(&exp.t_init, dir.join("extrinsic_init.txt")).map_err(data_err)?;
    io::write_flow(&exp.flow_gt, dir.join("flow_gt.dxqf")).map_err(data_err)?;
    io::write_flow(&exp.flow_noisy, dir.join("flow_noisy.dxqf")).map_err(data_err)?;

    let mut manifest = String::from("# calibflow simulate manifest\n");
    writeln!(manifest, "seed = {}", cfg.seed).expect("write to string");
    for (key, file) in MANIFEST_FILES {
        writeln!(manifest, "{key} = {file}").expect("write to string");
    }
    std::fs::write(dir.join("manifest.txt"), manifest).map_err(data_err)?;

    println!(
        "simulated {} points into {} ({} valid flow pixels)",
        exp.cloud.len(),
        dir.display(),
        exp.flow_gt.valid_count()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_flow_gt(args: FlowGtArgs) -> Result<ExitCode, AppError> {
    let cloud = io::read_point_cloud(&args.cloud).map_err(data_err)?;
    let k = io::read_intrinsics(&args.intrinsics).map_err(data_err)?;
    let t_init = io::read_extrinsic(&args.init_extrinsic).map_err(data_err)?;
    let t_gt = io::read_extrinsic(&args.gt_extrinsic).map_err(data_err)?;
    let flow = ground_truth_flow(&cloud, &t_init, &t_gt, &k);
    io::write_flow(&flow, &args.out).map_err(data_err)?;
    println!(
        "wrote ground-truth flow with {} valid pixels to {}",
        flow.valid_count(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn render_solve_report(
    report: &SolveReport,
    mode: &str,
    total: usize,
    error: Option<&CalibrationError>,
) -> String {
    let mut out = String::from("solve report\n");
    writeln!(out, "  mode            = {mode}").expect("write to string");
    writeln!(out, "  correspondences = {total}").expect("write to string");
    writeln!(out, "  inliers         = {}", report.inlier_count).expect("write to string");
    writeln!(out, "  iterations      = {}", report.iterations).expect("write to string");
    writeln!(out, "  converged       = {}", report.converged).expect("write to string");
    writeln!(out, "  final_cost      = {:.6e}", report.final_cost).expect("write to string");
    if let Some(e) = error {
        writeln!(out, "  e_t_cm          = {:.9}", e.e_t).expect("write to string");
        writeln!(out, "  e_r_deg         = {:.9}", e.e_r).expect("write to string");
    }
    out
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, AppError> {
    let cloud = io::read_point_cloud(&args.cloud).map_err(data_err)?;
    let k = io::read_intrinsics(&args.intrinsics).map_err(data_err)?;
    let t_init = io::read_extrinsic(&args.init_extrinsic).map_err(data_err)?;
    let flow = io::read_flow(&args.flow).map_err(data_err)?;
    let depth = rasterize_depth(&cloud, &t_init, &k);
    let cs = correspondences_from_flow(&depth, &cloud, &flow, &k);
    let opts = SolveOptions {
        max_iterations: args.max_iters,
        convergence_tol: args.tol,
        damping: args.damping,
        gate_threshold: args.threshold,
    };
    let (report, mode) = if args.gated {
        if cs.is_empty() {
            return Err(solver_err(SolverError::InsufficientCorrespondences {
                available: 0,
                required: 3,
            }));
        }
        let normalized = flow.normalize_uncertainty().map_err(data_err)?;
        let report =
            solve_gated(&t_init, &cs, &k, &normalized, args.threshold, &opts)
                .map_err(solver_err)?;
        (report, format!("gated (threshold {})", args.threshold))
    } else {
        let report = solve_weighted(&t_init, &cs, &k, &opts).map_err(solver_err)?;
        (report, "weighted".to_string())
    };
    let t_pred = report.predicted_extrinsic(&t_init);
    if let Some(out) = &args.out {
        io::write_extrinsic(&t_pred, out).map_err(data_err)?;
    }
    let error = match &args.gt_extrinsic {
        Some(path) => {
            let t_gt = io::read_extrinsic(path).map_err(data_err)?;
            Some(calibration_error(&t_pred, &t_gt).map_err(data_err)?)
        }
        None => None,
    };
    print!(
        "{}",
        render_solve_report(&report, &mode, cs.len(), error.as_ref())
    );
    if !report.converged {
        return Err(AppError::Solver(format!(
            "no convergence within {} iterations",
            args.max_iters
        )));
    }
    Ok(ExitCode::SUCCESS)
}

fn eval_pairs(args: &EvalArgs) -> Result<Vec<(String, PathBuf, PathBuf)>, AppError> {
    let (pred_is_dir, gt_is_dir) = (args.pred.is_dir(), args.gt.is_dir());
    if pred_is_dir != gt_is_dir {
        return Err(AppError::Data(
            "--pred and --gt must both be files or both be directories".into(),
        ));
    }
    if !pred_is_dir {
        let id = args
            .pred
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "frame".to_string());
        return Ok(vec![(id, args.pred.clone(), args.gt.clone())]);
    }
    let mut names: Vec<String> = std::fs::read_dir(&args.pred)
        .map_err(data_err)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut pairs = Vec::new();
    for name in names {
        let gt_path = args.gt.join(&name);
        if gt_path.is_file() {
            pairs.push((name.clone(), args.pred.join(&name), gt_path));
        }
    }
    if pairs.is_empty() {
        return Err(AppError::Data(
            "no matching prediction/ground-truth filename pairs".into(),
        ));
    }
    Ok(pairs)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, AppError> {
    let pairs = eval_pairs(&args)?;
    let mut rows = Vec::new();
    for (id, pred_path, gt_path) in &pairs {
        let pred = io::read_extrinsic(pred_path).map_err(data_err)?;
        let gt = io::read_extrinsic(gt_path).map_err(data_err)?;
        let e = calibration_error(&pred, &gt).map_err(data_err)?;
        rows.push((id.clone(), e));
    }
    if let Some(out) = &args.out {
        let mut csv = String::from(CSV_HEADER);
        csv.push('\n');
        for (id, e) in &rows {
            csv.push_str(&csv_line(id, e));
            csv.push('\n');
        }
        std::fs::write(out, csv).map_err(data_err)?;
    }
    if rows.len() == 1 {
        print!("{}", render_single_error(&rows[0].1));
    } else {
        let errors: Vec<CalibrationError> = rows.iter().map(|(_, e)| *e).collect();
        let summary = aggregate(&errors).map_err(data_err)?;
        println!("frames: {}", summary.count);
        print!("{}", render_summary_table(&summary));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, AppError> {
    if args.n_instances < 1 {
        return Err(AppError::Data("n_instances must be >= 1".into()));
    }
    let report = gradcheck_run(args.seed, args.n_instances).map_err(solver_err)?;
    println!(
        "gradcheck: {} instances, max relative Jacobian error {:.3e} (tolerance {GRADCHECK_TOL:.0e})",
        report.instances, report.max_rel_error
    );
    if report.passed(GRADCHECK_TOL) {
        println!("gradcheck: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        Err(AppError::Solver(format!(
            "Jacobian mismatch: max relative error {:.3e} exceeds {GRADCHECK_TOL:.0e}",
            report.max_rel_error
        )))
    }
}
