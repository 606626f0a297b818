//! Command-line front end: `register`, `icp`, `bench` and `gen`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use consreg::evaluation::{run_benchmark, ExperimentConfig, Method};
use consreg::features::FeatureBackend;
use consreg::geometry::{rotation_error, translation_error, PointCloud, RigidTransform};
use consreg::io::{parse_cloud, read_transform, write_cloud};
use consreg::refinement::DenoiseConfig;
use consreg::registration::{register, PipelineConfig};
use consreg::synthetic::{generate, Shape};
use consreg::{icp, IcpConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "consreg", version, about = "Rigid point cloud registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register a source cloud onto a target cloud.
    Register(RegisterArgs),
    /// Point-to-point ICP from the identity.
    Icp(IcpArgs),
    /// Run the rotation benchmark and write a CSV report plus a JSON summary.
    Bench(BenchArgs),
    /// Write a seeded synthetic cloud.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct RegisterArgs {
    source: PathBuf,
    target: PathBuf,
    /// `oracle` (row i of source matches row i of target), `handcrafted`,
    /// or `file:<src.feat>[,<tgt.feat>]`.
    #[arg(long, default_value = "handcrafted")]
    backend: String,
    #[arg(long, default_value_t = 128)]
    k: usize,
    /// Neighbors per matched point during refinement.
    #[arg(long, default_value_t = DenoiseConfig::default().p)]
    p: usize,
    /// Consensus softmax temperature.
    #[arg(long, default_value_t = consreg::matching::SHARP_TEMPERATURE)]
    tau: f64,
    /// Denoising softmax temperature.
    #[arg(long, default_value_t = DenoiseConfig::default().temperature)]
    refine_tau: f64,
    /// Sampling schedule, largest first.
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 512, 256])]
    schedule: Vec<usize>,
    #[arg(long)]
    no_refine: bool,
    /// Ground-truth transform JSON; adds RE/TE to the output.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Result JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the oracle backend.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct IcpArgs {
    source: PathBuf,
    target: PathBuf,
    #[arg(long, default_value_t = IcpConfig::default().max_iterations)]
    max_iter: usize,
    #[arg(long, default_value_t = IcpConfig::default().convergence_tol)]
    tol: f64,
    #[arg(long)]
    max_distance: Option<f64>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Experiment config JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV report path; the JSON summary goes next to it with a `.json`
    /// extension.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = ["coarse".to_string(), "refined".to_string(), "icp".to_string()])]
    methods: Vec<String>,
    #[arg(long, default_value = "oracle")]
    backend: String,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the K-sweep table of this method to stdout.
    #[arg(long)]
    table: Option<String>,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// box, blobs, ell or surface.
    shape: String,
    n: usize,
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Run(String),
}

type Outcome = std::result::Result<(), Failure>;

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn run_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Run(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Register(a) => cmd_register(a),
        Command::Icp(a) => cmd_icp(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(msg)) => {
            eprintln!("registration failed: {msg}");
            EXIT_FAILURE
        }
    }
}

fn parse_backend(spec: &str, seed: u64) -> std::result::Result<FeatureBackend, Failure> {
    match spec {
        "oracle" => Ok(FeatureBackend::oracle(seed)),
        "handcrafted" => Ok(FeatureBackend::handcrafted()),
        _ => match spec.strip_prefix("file:") {
            Some(paths) => {
                let mut parts = paths.split(',');
                let source = PathBuf::from(parts.next().unwrap_or_default());
                let target = parts.next().map_or_else(|| source.clone(), PathBuf::from);
                if source.as_os_str().is_empty() || parts.next().is_some() {
                    return Err(usage(format!("bad feature file spec `{spec}`")));
                }
                Ok(FeatureBackend::Precomputed { source, target })
            }
            None => Err(usage(format!(
                "unknown backend `{spec}` (oracle, handcrafted, file:<path>)"
            ))),
        },
    }
}

fn load(path: &Path, oracle: bool) -> std::result::Result<PointCloud, Failure> {
    let cloud = parse_cloud(path).map_err(usage)?;
    Ok(if oracle {
        cloud.with_index_correspondence()
    } else {
        cloud
    })
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Outcome {
    let json = serde_json::to_string_pretty(value).map_err(run_err)? + "\n";
    match out {
        Some(path) => fs::write(path, json).map_err(|e| usage(format!("{}: {e}", path.display()))),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TransformOut {
    /// Row-major.
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<&RigidTransform> for TransformOut {
    fn from(t: &RigidTransform) -> Self {
        let r = t.rotation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        let v = t.translation();
        Self {
            rotation,
            translation: [v.x, v.y, v.z],
        }
    }
}

#[derive(Serialize)]
struct Errors {
    re_deg: f64,
    te: f64,
}

fn errors(gt: Option<&RigidTransform>, t: &RigidTransform) -> Option<Errors> {
    gt.map(|gt| Errors {
        re_deg: rotation_error(gt.rotation(), t.rotation()),
        te: translation_error(gt.translation(), t.translation()),
    })
}

#[derive(Serialize)]
struct RegisterOut {
    #[serde(flatten)]
    transform: TransformOut,
    coarse: TransformOut,
    refined: Option<TransformOut>,
    residual: f64,
    refined_residual: Option<f64>,
    k: usize,
    confidences: Vec<f64>,
    low_confidence: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<Errors>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coarse_error: Option<Errors>,
}

fn cmd_register(a: RegisterArgs) -> Outcome {
    let backend = parse_backend(&a.backend, a.seed)?;
    let oracle = matches!(backend, FeatureBackend::Oracle { .. });
    let source = load(&a.source, oracle)?;
    let target = load(&a.target, oracle)?;
    let gt =
        a.gt.as_deref()
            .map(read_transform)
            .transpose()
            .map_err(usage)?;
    let cfg = PipelineConfig {
        schedule: a.schedule,
        k: a.k,
        temperature: a.tau,
        fps_start: 0,
        refine: (!a.no_refine).then(|| DenoiseConfig {
            p: a.p,
            temperature: a.refine_tau,
            ..DenoiseConfig::default()
        }),
    };
    let r = register(&source, &target, &backend, &cfg).map_err(|e| match e {
        consreg::Error::InvalidParameter(_) => usage(e),
        other => run_err(other),
    })?;
    if r.low_confidence {
        eprintln!("warning: consensus is close to uniform; the transform is unreliable");
    }
    let out = RegisterOut {
        transform: r.best().into(),
        coarse: (&r.coarse).into(),
        refined: r.refined.as_ref().map(Into::into),
        residual: r.residual,
        refined_residual: r.refined_residual,
        k: r.matches.len(),
        confidences: r.matches.confidences(),
        low_confidence: r.low_confidence,
        error: errors(gt.as_ref(), r.best()),
        coarse_error: r
            .refined
            .as_ref()
            .and_then(|_| errors(gt.as_ref(), &r.coarse)),
    };
    emit(&out, a.out.as_deref())
}

#[derive(Serialize)]
struct IcpOut {
    #[serde(flatten)]
    transform: TransformOut,
    iterations: usize,
    converged: bool,
    costs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<Errors>,
}

fn cmd_icp(a: IcpArgs) -> Outcome {
    let source = load(&a.source, false)?;
    let target = load(&a.target, false)?;
    let gt =
        a.gt.as_deref()
            .map(read_transform)
            .transpose()
            .map_err(usage)?;
    let cfg = IcpConfig {
        max_iterations: a.max_iter,
        convergence_tol: a.tol,
        max_correspondence_distance: a.max_distance,
    };
    let r = icp(&source, &target, &cfg).map_err(|e| match e {
        consreg::Error::InvalidParameter(_) => usage(e),
        other => run_err(other),
    })?;
    let trace = r
        .icp
        .clone()
        .unwrap_or_else(|| unreachable!("icp always records a trace"));
    let out = IcpOut {
        transform: (&r.coarse).into(),
        iterations: trace.iterations,
        converged: trace.converged,
        costs: trace.costs,
        error: errors(gt.as_ref(), &r.coarse),
    };
    emit(&out, a.out.as_deref())
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(usage)?;
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let table = a
        .table
        .as_deref()
        .map(str::parse::<Method>)
        .transpose()
        .map_err(usage)?;
    let backend = parse_backend(&a.backend, cfg.seed)?;
    let report = run_benchmark(&cfg, &backend, &methods).map_err(run_err)?;

    let file = fs::File::create(&a.out).map_err(|e| usage(format!("{}: {e}", a.out.display())))?;
    report.write_csv(file).map_err(run_err)?;
    let json_path = a.out.with_extension("json");
    fs::write(&json_path, report.to_json().map_err(run_err)?)
        .map_err(|e| usage(format!("{}: {e}", json_path.display())))?;
    if let Some(method) = table {
        print!("{}", report.k_sweep_table(method));
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Outcome {
    let shape: Shape = a.shape.parse().map_err(usage)?;
    let cloud = generate(shape, a.n, a.seed).map_err(usage)?;
    write_cloud(&cloud, &a.out).map_err(usage)
}
