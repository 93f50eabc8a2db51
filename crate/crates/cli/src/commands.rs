//! Subcommand definitions and their implementations.

use crate::parse::{parse_noise_list, parse_sigma_list};
use crate::report::{write_report, VerifyReport};
use crate::scene::{read_scene, write_scene, SceneContainer};
use crate::trace::write_trace;
use crate::verify::{run_suite, Suite};
use crate::{json, CliError, EXIT_OK, EXIT_VIOLATION};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mvkit::attention::{
    alignment_energy, alignment_step, build_joint_attention, default_eta, project_nonexpansive, spectral_norm_estimate,
    AttentionMap, DEFAULT_POWER_ITERS,
};
use mvkit::fusion::{
    brute_force_optimal_weights, expected_mse, inverse_variance_weights, learn_view_weights, monte_carlo_mse, spearman,
    FusionBatch, NoisyViewModel, BRUTE_FORCE_MAX_VIEWS, DEFAULT_FEATURE_DIM, DEFAULT_FEATURE_NORM,
    DEFAULT_LEARNING_RATE, DEFAULT_TRAINING_SAMPLES, DEFAULT_TRAINING_STEPS,
};
use mvkit::mvopt::{check_monotone, mvopt_run, Direction, MvOptConfig, DEFAULT_MONOTONE_TOL};
use mvkit::rng::derive_seed;
use mvkit::synth::{generate_scene, seeded_sigmas, SceneConfig, DEFAULT_BLOB_SIGMA, FULL_FIGURE_JOINTS};
use mvkit::{FrameSequence, SeededRng};
use serde_json::json;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "mvkit",
    version,
    about = "Multi-view fusion, alignment and refinement toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic multi-view scene.
    Synth(SynthArgs),
    /// Refine a scene's frames by block-coordinate descent.
    Mvopt(MvoptArgs),
    /// Compare inverse-variance fusion with the grid oracle and learned attention.
    Fuse(FuseArgs),
    /// Run gradient steps on the attention alignment energy.
    Align(AlignArgs),
    /// Run the property suites and emit a JSON report.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Frame height and width in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = FULL_FIGURE_JOINTS)]
    pub joints: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated per-view noise levels; drawn from [0.05, 0.2] when absent.
    #[arg(long)]
    pub sigmas: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BLOB_SIGMA)]
    pub blob_sigma: f64,
    /// Index of the main view.
    #[arg(long = "main", default_value_t = 0)]
    pub main_index: usize,
    /// Output scene file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also dump every frame channel as a binary PGM image into this directory.
    #[arg(long)]
    pub pgm_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Gradient,
    GaussNewton,
}

#[derive(Debug, Args)]
pub struct MvoptArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Passes over each timestamp's views before moving on.
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub w3: Option<f64>,
    /// Add the mirrored keypoint penalty between opposite views (even view counts only).
    #[arg(long)]
    pub opposite_view: bool,
    #[arg(long, value_enum, default_value_t = DirectionArg::Gradient)]
    pub direction: DirectionArg,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub sigmas: String,
    /// Also train per-view attention weights.
    #[arg(long)]
    pub learn: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.005)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 100_000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = DEFAULT_TRAINING_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_TRAINING_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Number of tokens.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Step size; 0.1 / (1 + lambda) when absent.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// `all` or one of: score, fusion, convex, mvopt, gradient, render, determinism.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Mvopt(a) => mvopt(a),
        Command::Fuse(a) => fuse(a),
        Command::Align(a) => align(a),
        Command::Verify(a) => verify(a),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Input(format!("stdout: {e}")))
        }
    }
}

fn synth(a: SynthArgs) -> Result<i32, CliError> {
    let sigmas = match &a.sigmas {
        Some(text) => parse_noise_list(text).map_err(|e| CliError::Input(e.to_string()))?,
        None => seeded_sigmas(a.views, 0.05, 0.2, a.seed),
    };
    let config = SceneConfig {
        frames: a.frames,
        joints: a.joints,
        views: a.views,
        main_index: a.main_index,
        height: a.size,
        width: a.size,
        blob_sigma: a.blob_sigma,
        sigmas,
        seed: a.seed,
    };
    let scene = generate_scene(&config)?;
    let container = SceneContainer::from_scene(&scene);
    match &a.out {
        Some(p) => write_scene(&container, p).map_err(|e| io_error(p, e))?,
        None => emit(&container.to_json(), None)?,
    }
    if let Some(dir) = &a.pgm_dir {
        write_pgm_dir(&container.sequence, dir)?;
    }
    if let Some(p) = &a.out {
        eprintln!(
            "wrote {}: {} frames, {} views, {}x{}, {} joints",
            p.display(),
            config.frames,
            config.views,
            config.height,
            config.width,
            config.joints
        );
    }
    Ok(EXIT_OK)
}

/// One 8-bit binary PGM per (timestamp, view, channel).
pub fn write_pgm_dir(seq: &FrameSequence, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let (h, w, c) = seq.shape();
    for t in 0..seq.frame_count() {
        for m in 0..seq.view_count() {
            let frame = seq.frame(t, m);
            for ch in 0..c {
                let path = dir.join(format!("t{t:03}_v{m:02}_c{ch:02}.pgm"));
                let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
                bytes.extend(
                    frame
                        .channel(ch)
                        .iter()
                        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
                );
                std::fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
            }
        }
    }
    Ok(())
}

fn mvopt(a: MvoptArgs) -> Result<i32, CliError> {
    let container = read_scene(&a.input).map_err(|e| CliError::Input(format!("{}: {e}", a.input.display())))?;
    let defaults = MvOptConfig::default();
    let config = MvOptConfig {
        w1: a.w1.unwrap_or(defaults.w1),
        w2: a.w2.unwrap_or(defaults.w2),
        w3: a.w3.unwrap_or(defaults.w3),
        passes_per_timestamp: a.passes.unwrap_or(defaults.passes_per_timestamp),
        opposite_view_term: a.opposite_view,
        direction: match a.direction {
            DirectionArg::Gradient => Direction::Gradient,
            DirectionArg::GaussNewton => Direction::GaussNewton,
        },
        ..defaults
    };
    let out = mvopt_run(&container.sequence, &config)?;
    if let Some(p) = &a.out {
        write_scene(&container.with_sequence(out.refined.clone()), p).map_err(|e| io_error(p, e))?;
    }
    if let Some(p) = &a.trace {
        let file = File::create(p).map_err(|e| io_error(p, e))?;
        write_trace(&out.trace, BufWriter::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
    }
    let totals = out.trace.totals();
    let (first, last) = (totals[0], totals[totals.len() - 1]);
    eprintln!(
        "objective {first:.6e} -> {last:.6e} ({:.4} of initial) over {} updates",
        last / first,
        totals.len() - 1
    );
    let mono = check_monotone(&totals, DEFAULT_MONOTONE_TOL)?;
    if let Some(i) = mono.first_violation {
        return Err(CliError::Violation(format!(
            "objective increased at trace record {i}: {} -> {}",
            totals[i - 1],
            totals[i]
        )));
    }
    Ok(EXIT_OK)
}

fn fuse(a: FuseArgs) -> Result<i32, CliError> {
    let sigmas = parse_sigma_list(&a.sigmas).map_err(|e| CliError::Input(e.to_string()))?;
    if a.dim == 0 {
        return Err(CliError::Input("--dim must be positive".into()));
    }
    let beta = inverse_variance_weights(&sigmas)?;
    let mse = expected_mse(&beta, &sigmas, a.dim)?;
    let best_single = a.dim as f64 * sigmas.iter().map(|s| s * s).fold(f64::INFINITY, f64::min);
    let oracle = if sigmas.len() <= BRUTE_FORCE_MAX_VIEWS {
        let grid = brute_force_optimal_weights(&sigmas, a.grid_step)?;
        json!({
            "weights": grid.weights,
            "expected_mse": grid.mse * a.dim as f64,
            "grid_step": a.grid_step,
            "points": grid.points,
        })
    } else {
        serde_json::Value::Null
    };
    let model = NoisyViewModel::seeded(sigmas.clone(), a.dim, DEFAULT_FEATURE_NORM, a.seed)?;
    let monte_carlo = if a.mc_samples >= 2 {
        let (m, se) = monte_carlo_mse(&model, &beta, a.mc_samples, derive_seed(a.seed, &[1]))?;
        json!({"samples": a.mc_samples, "mse": m, "stderr": se})
    } else {
        serde_json::Value::Null
    };
    let learned = if a.learn {
        if a.samples == 0 {
            return Err(CliError::Input("--samples must be positive".into()));
        }
        let batch = FusionBatch::sample(&model, a.samples, derive_seed(a.seed, &[2]));
        let w = learn_view_weights(&model, &batch, a.steps, a.lr)?;
        let precision: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
        json!({
            "omega": w.omega,
            "alpha_mean": w.alpha_mean,
            "final_loss": w.final_loss,
            "spearman_vs_precision": spearman(&w.alpha_mean, &precision),
            "steps": a.steps,
            "lr": a.lr,
        })
    } else {
        serde_json::Value::Null
    };
    let report = json!({
        "sigmas": sigmas,
        "seed": a.seed,
        "dim": a.dim,
        "beta": beta,
        "expected_mse": mse,
        "best_single_view_mse": best_single,
        "oracle": oracle,
        "monte_carlo": monte_carlo,
        "learned": learned,
    });
    emit(
        &(json::to_string_pretty(&report).expect("report serializes") + "\n"),
        a.out.as_deref(),
    )?;
    Ok(EXIT_OK)
}

fn align(a: AlignArgs) -> Result<i32, CliError> {
    if a.n == 0 {
        return Err(CliError::Input("--n must be positive".into()));
    }
    if !(a.lambda.is_finite() && a.lambda >= 0.0) {
        return Err(CliError::Input("--lambda must be a nonnegative number".into()));
    }
    let eta = a.eta.unwrap_or_else(|| default_eta(a.lambda));
    let mut rng = SeededRng::new(a.seed);
    let at = project_nonexpansive(&AttentionMap::random(a.n, 2.0, &mut rng), DEFAULT_POWER_ITERS);
    let am = project_nonexpansive(&AttentionMap::random(a.n, 2.0, &mut rng), DEFAULT_POWER_ITERS);
    let joint = build_joint_attention(&at, &am, a.lambda)?;
    let mut z: Vec<f64> = (0..a.n).map(|_| rng.normal()).collect();
    let mut energies = vec![alignment_energy(&z, &at, &am, a.lambda)?];
    for _ in 0..a.steps {
        z = alignment_step(&z, &at, &am, a.lambda, eta)?;
        energies.push(alignment_energy(&z, &at, &am, a.lambda)?);
    }
    let increase = energies
        .windows(2)
        .position(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0));
    let report = json!({
        "n": a.n,
        "lambda": a.lambda,
        "eta": eta,
        "seed": a.seed,
        "joint_spectral_norm": spectral_norm_estimate(&joint, DEFAULT_POWER_ITERS),
        "energies": energies,
        "monotone": increase.is_none(),
    });
    emit(
        &(json::to_string_pretty(&report).expect("report serializes") + "\n"),
        a.out.as_deref(),
    )?;
    match increase {
        Some(k) => Err(CliError::Violation(format!(
            "alignment energy increased at step {}",
            k + 1
        ))),
        None => Ok(EXIT_OK),
    }
}

fn verify(a: VerifyArgs) -> Result<i32, CliError> {
    let suites: Vec<Suite> = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::parse(&a.suite).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
            CliError::Input(format!(
                "unknown suite `{}`; expected all, {}",
                a.suite,
                names.join(", ")
            ))
        })?]
    };
    let records = suites
        .into_iter()
        .map(|s| run_suite(s, a.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let report = VerifyReport::new(&a.suite, a.seed, records);
    match &a.out {
        Some(p) => write_report(&report, p).map_err(|e| io_error(p, e))?,
        None => emit(&report.to_json(), None)?,
    }
    for s in &report.suites {
        eprintln!(
            "{} {} ({} ms)",
            if s.pass { "PASS" } else { "FAIL" },
            s.suite,
            s.runtime_ms
        );
        for c in s.failing() {
            eprintln!("  {}", c.describe());
        }
    }
    Ok(if report.pass { EXIT_OK } else { EXIT_VIOLATION })
}
