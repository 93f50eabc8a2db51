//! Property suites behind `mvkit verify`.
//!
//! Each check function takes the seed of its suite and returns measured
//! values with pinned tolerances. The acceptance tests call the same
//! functions, so the report and the tests always measure the same thing.

use crate::report::{Check, SuiteRecord};
use crate::scene::SceneContainer;
use crate::trace::{read_trace, trace_to_string};
use mvkit::attention::{
    alignment_energy, alignment_gradient, build_joint_attention, project_nonexpansive, AttentionMap,
    DEFAULT_POWER_ITERS,
};
use mvkit::fusion::{
    brute_force_optimal_weights, expected_mse, fusion_loss_and_grad, inverse_variance_weights, learn_view_weights,
    monte_carlo_mse, spearman, FusionBatch, NoisyViewModel, DEFAULT_FEATURE_DIM, DEFAULT_FEATURE_NORM,
    DEFAULT_LEARNING_RATE, DEFAULT_TRAINING_SAMPLES, DEFAULT_TRAINING_STEPS,
};
use mvkit::mvopt::{
    block_gradient, block_stationarity, check_monotone, mvopt_converge, mvopt_run, objective, total_loss, Direction,
    MvOptConfig, OptState, DEFAULT_MONOTONE_TOL,
};
use mvkit::pose::extract_pose;
use mvkit::rng::derive_seed;
use mvkit::scorecheck::{
    analytic_denoiser, bin_agreement, conditioning_gain, empirical_mmse_denoiser, GaussianLatentModel,
};
use mvkit::synth::{generate_scene, make_skeleton_sequence, project_view, render_frame, SceneConfig};
use mvkit::{build_view_rig, Frame, FrameSequence, Keypoint, KeypointSet, Result, SeededRng};
use serde_json::{json, Value};
use std::time::Instant;

/// Stream tag separating suite seeds from every other derived stream.
const SUITE_STREAM: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Score,
    Fusion,
    Convex,
    Mvopt,
    Gradient,
    Render,
    Determinism,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Score,
        Suite::Fusion,
        Suite::Convex,
        Suite::Mvopt,
        Suite::Gradient,
        Suite::Render,
        Suite::Determinism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Score => "score",
            Suite::Fusion => "fusion",
            Suite::Convex => "convex",
            Suite::Mvopt => "mvopt",
            Suite::Gradient => "gradient",
            Suite::Render => "render",
            Suite::Determinism => "determinism",
        }
    }

    pub fn anchor(self) -> &'static str {
        match self {
            Suite::Score => "optimal denoiser as conditional score",
            Suite::Fusion => "inverse-variance optimality of view weighting",
            Suite::Convex => "convex surrogate for attention alignment",
            Suite::Mvopt => "monotone descent of multi-view refinement",
            Suite::Gradient => "analytic gradients against central differences",
            Suite::Render => "render and pose-extraction round trip",
            Suite::Determinism => "seeded determinism and exact serialization",
        }
    }

    pub fn parse(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }

    fn tag(self) -> u64 {
        Suite::ALL.iter().position(|&s| s == self).expect("listed") as u64 + 1
    }
}

pub fn suite_seed(master: u64, suite: Suite) -> u64 {
    derive_seed(master, &[SUITE_STREAM, suite.tag()])
}

/// Checks plus free-form measurements for the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub details: Value,
}

impl Outcome {
    fn new(checks: Vec<Check>, details: Value) -> Self {
        Self { checks, details }
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn merge(parts: Vec<(&str, Outcome)>) -> Outcome {
    let mut checks = Vec::new();
    let mut details = serde_json::Map::new();
    for (key, part) in parts {
        checks.extend(part.checks);
        if !part.details.is_null() {
            details.insert(key.to_string(), part.details);
        }
    }
    Outcome::new(checks, Value::Object(details))
}

/// Sizes of the stationarity probe inside the `mvopt` suite.
pub const PROBE_MAX_SWEEPS: usize = 30;
pub const CONVERGE_TOL: f64 = 1e-10;
pub const STATIONARITY_TOL: f64 = 1e-4;

pub fn run_suite(suite: Suite, master: u64) -> Result<SuiteRecord> {
    let seed = suite_seed(master, suite);
    let start = Instant::now();
    let outcome = match suite {
        Suite::Score => merge(vec![
            ("bins", score_bins(seed)?),
            ("conditioning", score_conditioning(seed)?),
            ("identity", score_identity()?),
        ]),
        Suite::Fusion => merge(vec![
            ("oracle", fusion_oracle(seed)?),
            ("dominance", fusion_dominance(seed)?),
            ("rank", fusion_rank(seed)?),
            ("learning", fusion_learning_examples(seed)?),
        ]),
        Suite::Convex => convexity(seed)?,
        Suite::Mvopt => merge(vec![
            ("descent", mvopt_descent(seed)?),
            ("reference", mvopt_reference()?),
            ("zero_weight", mvopt_zero_weight(seed)?),
            (
                "stationarity",
                stationarity_probe(probe_scene_seed(seed), PROBE_MAX_SWEEPS)?,
            ),
        ]),
        Suite::Gradient => merge(vec![
            ("mvopt", gradient_mvopt(seed)?),
            ("fusion", gradient_fusion(seed)?),
            ("alignment", gradient_alignment(seed)?),
        ]),
        Suite::Render => merge(vec![
            ("round_trip", render_round_trip(seed)?),
            ("scenes", scene_properties(seed)?),
        ]),
        Suite::Determinism => determinism(seed)?,
    };
    Ok(SuiteRecord {
        suite: suite.name().to_string(),
        anchor: suite.anchor().to_string(),
        pass: outcome.pass(),
        seed,
        runtime_ms: start.elapsed().as_millis() as u64,
        checks: outcome.checks,
        details: outcome.details,
    })
}

// Score suite.

pub const SCORE_SAMPLES: usize = 1_000_000;
pub const SCORE_BINS: usize = 40;
pub const SCORE_SE_FACTOR: f64 = 3.0;
pub const SCORE_MIN_FRACTION: f64 = 0.95;

/// Binned empirical MMSE denoiser against the analytic conditional mean for
/// a single Gaussian and for a two-component mixture.
pub fn score_bins(seed: u64) -> Result<Outcome> {
    let models = [
        ("gaussian", GaussianLatentModel::standard(1.0)?),
        ("mixture", GaussianLatentModel::symmetric_pair(2.0, 0.8, 0.9)?),
    ];
    let mut checks = Vec::new();
    let mut details = serde_json::Map::new();
    for (k, (name, model)) in models.iter().enumerate() {
        let binned = empirical_mmse_denoiser(
            model,
            SCORE_SAMPLES,
            SCORE_BINS,
            derive_seed(seed, &[1, k as u64]),
            None,
        )?;
        let agreement = bin_agreement(&binned, SCORE_SE_FACTOR);
        checks.push(Check::at_least(
            &format!("bin_agreement_{name}"),
            agreement.fraction(),
            SCORE_MIN_FRACTION,
        ));
        let table: Vec<Value> = binned
            .bins
            .iter()
            .filter(|b| b.populated())
            .map(|b| {
                json!({
                    "center": b.center(),
                    "count": b.count,
                    "mean_eps": b.mean_eps,
                    "stderr": b.stderr,
                    "analytic": b.analytic_mean,
                    "z": (b.mean_eps - b.analytic_mean) / b.stderr,
                })
            })
            .collect();
        details.insert(
            name.to_string(),
            json!({
                "populated": agreement.populated,
                "within": agreement.within,
                "outside": binned.outside,
                "bins": table,
            }),
        );
    }
    Ok(Outcome::new(checks, Value::Object(details)))
}

pub const CONDITIONING_SAMPLES: usize = 200_000;

/// Knowing the mixture component never increases the denoiser's MSE.
pub fn score_conditioning(seed: u64) -> Result<Outcome> {
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for (k, (sep, s0, sigma)) in [(5.0, 0.5, 1.0), (2.0, 0.8, 0.9), (1.0, 1.0, 2.0)]
        .into_iter()
        .enumerate()
    {
        let model = GaussianLatentModel::symmetric_pair(sep, s0, sigma)?;
        let g = conditioning_gain(&model, CONDITIONING_SAMPLES, derive_seed(seed, &[2, k as u64]))?;
        // Gain in units of its standard error; nonnegative up to 3 SE.
        checks.push(Check::at_least(
            &format!("conditioning_gain_z_{k}"),
            g.gain() / g.stderr,
            -3.0,
        ));
        rows.push(json!({
            "separation": sep, "s0": s0, "sigma_t": sigma,
            "mse_conditional": g.mse_conditional,
            "mse_unconditional": g.mse_unconditional,
            "mse_gap": g.gain(),
            "stderr": g.stderr,
        }));
    }
    Ok(Outcome::new(checks, Value::Array(rows)))
}

/// `E[ε | z] = −σ ∇ log p(z)` for a single Gaussian.
pub fn score_identity() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for sigma in [0.1, 0.5, 1.0, 3.0] {
        let model = GaussianLatentModel::standard(sigma)?;
        for i in 0..=40 {
            let z = -4.0 + 0.2 * i as f64;
            let closed = sigma * z / (1.0 + sigma * sigma);
            let via_score = -sigma * model.score(z, None)?;
            let den = analytic_denoiser(&model, z, None)?;
            let scale = closed.abs().max(1e-300);
            worst = worst
                .max((den - closed).abs() / scale)
                .max((via_score - closed).abs() / scale);
        }
    }
    Ok(Outcome::new(
        vec![Check::at_most("denoiser_score_identity_rel_err", worst, 1e-10)],
        Value::Null,
    ))
}

// Fusion suite.

pub const ORACLE_VECTORS: usize = 50;
pub const ORACLE_GRID_STEP: f64 = 0.005;
/// Relative slack allowed for rounding when comparing MSEs.
pub const MSE_ROUNDING: f64 = 1e-12;

fn random_sigmas(rng: &mut SeededRng) -> Vec<f64> {
    let m = 2 + rng.index(3);
    (0..m).map(|_| rng.log_uniform(0.1, 10.0)).collect()
}

/// Closed-form weights against the exhaustive grid search.
pub fn fusion_oracle(seed: u64) -> Result<Outcome> {
    let mut rng = SeededRng::stream(seed, &[3]);
    let mut worst_gap: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut rows = Vec::new();
    for _ in 0..ORACLE_VECTORS {
        let sigmas = random_sigmas(&mut rng);
        let beta = inverse_variance_weights(&sigmas)?;
        let grid = brute_force_optimal_weights(&sigmas, ORACLE_GRID_STEP)?;
        let gap = beta
            .iter()
            .zip(&grid.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mse = expected_mse(&beta, &sigmas, 1)?;
        worst_gap = worst_gap.max(gap);
        worst_excess = worst_excess.max((mse - grid.mse) / grid.mse);
        rows.push(json!({"sigmas": sigmas, "gap": gap}));
    }
    Ok(Outcome::new(
        vec![
            Check::at_most("oracle_weight_gap", worst_gap, ORACLE_GRID_STEP),
            Check::at_most("oracle_mse_excess", worst_excess, MSE_ROUNDING),
        ],
        Value::Array(rows),
    ))
}

pub const MC_SAMPLES: usize = 100_000;
pub const MC_SE_FACTOR: f64 = 3.0;

/// Fusion beats the best single view; Monte-Carlo MSE matches the formula.
pub fn fusion_dominance(seed: u64) -> Result<Outcome> {
    let mut rng = SeededRng::stream(seed, &[4]);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..ORACLE_VECTORS {
        let sigmas = random_sigmas(&mut rng);
        let beta = inverse_variance_weights(&sigmas)?;
        let d = DEFAULT_FEATURE_DIM;
        let best_single = d as f64 * sigmas.iter().map(|s| s * s).fold(f64::INFINITY, f64::min);
        worst_ratio = worst_ratio.max(expected_mse(&beta, &sigmas, d)? / best_single);
    }
    let mut worst_z: f64 = 0.0;
    let mut rows = Vec::new();
    let sets = [
        vec![1.0, 2.0],
        vec![1.0, 2.0, 4.0],
        vec![0.5, 1.0, 1.0, 3.0],
        random_sigmas(&mut rng),
    ];
    for (k, sigmas) in sets.into_iter().enumerate() {
        let model = NoisyViewModel::seeded(
            sigmas.clone(),
            DEFAULT_FEATURE_DIM,
            DEFAULT_FEATURE_NORM,
            derive_seed(seed, &[5, k as u64]),
        )?;
        let beta = inverse_variance_weights(&sigmas)?;
        let analytic = expected_mse(&beta, &sigmas, DEFAULT_FEATURE_DIM)?;
        let (mc, se) = monte_carlo_mse(&model, &beta, MC_SAMPLES, derive_seed(seed, &[6, k as u64]))?;
        let z = (mc - analytic).abs() / se;
        worst_z = worst_z.max(z);
        rows.push(json!({"sigmas": sigmas, "analytic": analytic, "monte_carlo": mc, "stderr": se}));
    }
    Ok(Outcome::new(
        vec![
            Check::new(
                "fused_over_best_single_view",
                worst_ratio,
                crate::report::Relation::Below,
                1.0,
            ),
            Check::at_most("monte_carlo_z", worst_z, MC_SE_FACTOR),
        ],
        Value::Array(rows),
    ))
}

pub const RANK_SEEDS: usize = 20;
pub const RANK_SIGMA_SETS: [[f64; 4]; 2] = [[0.25, 0.5, 1.0, 2.0], [2.0, 0.5, 1.0, 0.25]];

fn train(sigmas: &[f64], seed: u64) -> Result<mvkit::fusion::LearnedWeights> {
    let model = NoisyViewModel::seeded(sigmas.to_vec(), DEFAULT_FEATURE_DIM, DEFAULT_FEATURE_NORM, seed)?;
    let batch = FusionBatch::sample(&model, DEFAULT_TRAINING_SAMPLES, seed);
    learn_view_weights(&model, &batch, DEFAULT_TRAINING_STEPS, DEFAULT_LEARNING_RATE)
}

/// Learned mean attention ranks views by precision.
pub fn fusion_rank(seed: u64) -> Result<Outcome> {
    let mut aligned = 0;
    let mut total = 0;
    let mut rows = Vec::new();
    for (k, sigmas) in RANK_SIGMA_SETS.iter().enumerate() {
        let precision: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
        for i in 0..RANK_SEEDS {
            let learned = train(sigmas, derive_seed(seed, &[7, k as u64, i as u64]))?;
            let rho = spearman(&learned.alpha_mean, &precision);
            aligned += usize::from(rho == 1.0);
            total += 1;
            rows.push(json!({"sigmas": sigmas, "run": i, "spearman": rho, "alpha_mean": learned.alpha_mean}));
        }
    }
    Ok(Outcome::new(
        vec![Check::at_least(
            "rank_alignment_fraction",
            aligned as f64 / total as f64,
            1.0,
        )],
        Value::Array(rows),
    ))
}

pub const LEARNING_SEEDS: usize = 20;

/// Equal noise gives uniform attention; one clean view dominates.
pub fn fusion_learning_examples(seed: u64) -> Result<Outcome> {
    let mut uniform_dev: f64 = 0.0;
    let mut dominant_min: f64 = 1.0;
    for i in 0..LEARNING_SEEDS {
        let eq = train(&[1.0, 1.0, 1.0], derive_seed(seed, &[8, i as u64]))?;
        for a in &eq.alpha_mean {
            uniform_dev = uniform_dev.max((a - 1.0 / 3.0).abs());
        }
        let dom = train(&[0.1, 10.0], derive_seed(seed, &[9, i as u64]))?;
        dominant_min = dominant_min.min(dom.alpha_mean[0]);
    }
    Ok(Outcome::new(
        vec![
            Check::at_most("equal_noise_uniform_attention", uniform_dev, 0.02),
            Check::new(
                "dominant_view_attention",
                dominant_min,
                crate::report::Relation::Above,
                0.9,
            ),
        ],
        Value::Null,
    ))
}

// Convex suite.

pub const CONVEX_PAIRS: usize = 200;
pub const CONVEX_MAX_N: usize = 16;
pub const MIDPOINT_TOL: f64 = 1e-9;
pub const NONEXPANSIVE_TOL: f64 = 1e-6;

fn normals(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Midpoint convexity of the alignment energy and nonexpansiveness of the
/// joint map over random projected map pairs.
pub fn convexity(seed: u64) -> Result<Outcome> {
    let mut rng = SeededRng::stream(seed, &[10]);
    let mut worst_midpoint = f64::NEG_INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..CONVEX_PAIRS {
        let n = 1 + rng.index(CONVEX_MAX_N);
        let at = project_nonexpansive(&AttentionMap::random(n, 2.0, &mut rng), DEFAULT_POWER_ITERS);
        let am = project_nonexpansive(&AttentionMap::random(n, 2.0, &mut rng), DEFAULT_POWER_ITERS);
        let lambda = rng.uniform_range(0.0, 2.0);
        let x = normals(&mut rng, n);
        let y = normals(&mut rng, n);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let e = |z: &[f64]| alignment_energy(z, &at, &am, lambda);
        worst_midpoint = worst_midpoint.max(e(&mid)? - 0.5 * (e(&x)? + e(&y)?));
        let joint = build_joint_attention(&at, &am, lambda)?;
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dn = norm(&diff);
        if dn > 0.0 {
            worst_ratio = worst_ratio.max(norm(&joint.apply(&diff)) / dn);
        }
    }
    Ok(Outcome::new(
        vec![
            Check::at_most("midpoint_convexity_violation", worst_midpoint, MIDPOINT_TOL),
            Check::at_most("joint_map_lipschitz", worst_ratio, 1.0 + NONEXPANSIVE_TOL),
        ],
        Value::Null,
    ))
}

// MV-Opt suite.

pub const DESCENT_SCENES: usize = 20;
pub const FRONT_VIEW_MIN_FRACTION: f64 = 0.8;
pub const REFERENCE_SEED: u64 = 42;
pub const REFERENCE_MAX_RATIO: f64 = 0.5;

pub fn descent_scene_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[11, i as u64])
}

pub fn probe_scene_seed(seed: u64) -> u64 {
    derive_seed(seed, &[12])
}

/// One schedule run per scene: the trace must be monotone, and the two
/// novel views nearest the main view should gain more semantic reduction
/// than the two farthest.
pub fn mvopt_descent(seed: u64) -> Result<Outcome> {
    let mut violations = 0usize;
    let mut wins = 0usize;
    let mut wins_unweighted = 0usize;
    let mut rows = Vec::new();
    for i in 0..DESCENT_SCENES {
        let scene_seed = descent_scene_seed(seed, i);
        let scene = generate_scene(&SceneConfig::desk(scene_seed))?;
        let rig = scene.corrupted.rig().clone();
        let mut state = OptState::new(scene.corrupted, MvOptConfig::default())?;
        let views = rig.view_count();
        let before: Vec<f64> = (0..views).map(|m| state.view_semantic(m)).collect();
        state.sweep()?;
        let after: Vec<f64> = (0..views).map(|m| state.view_semantic(m)).collect();
        let totals = state.trace().totals();
        let mono = check_monotone(&totals, DEFAULT_MONOTONE_TOL)?;
        let count = totals
            .windows(2)
            .filter(|w| !mvkit::mvopt::within(w[0], w[1], DEFAULT_MONOTONE_TOL))
            .count();
        violations += count;
        let order = rig.novel_order();
        let reduction = |m: usize| before[m] - after[m];
        let unweighted = |m: usize| reduction(m) / rig.omega_for_view(m).expect("novel view");
        let pair_mean = |f: &dyn Fn(usize) -> f64, a: usize, b: usize| 0.5 * (f(order[a]) + f(order[b]));
        let k = order.len();
        let (near, far) = (pair_mean(&reduction, 0, 1), pair_mean(&reduction, k - 2, k - 1));
        let (near_u, far_u) = (pair_mean(&unweighted, 0, 1), pair_mean(&unweighted, k - 2, k - 1));
        wins += usize::from(near > far);
        wins_unweighted += usize::from(near_u > far_u);
        rows.push(json!({
            "scene_seed": scene_seed,
            "initial": totals[0],
            "final": totals[totals.len() - 1],
            "monotone": mono.ok,
            "violations": count,
            "near_reduction": near,
            "far_reduction": far,
            "near_reduction_unweighted": near_u,
            "far_reduction_unweighted": far_u,
        }));
    }
    let n = DESCENT_SCENES as f64;
    Ok(Outcome::new(
        vec![
            Check::at_most("monotone_violations", violations as f64, 0.0),
            Check::at_least(
                "front_view_advantage_fraction",
                wins as f64 / n,
                FRONT_VIEW_MIN_FRACTION,
            ),
        ],
        json!({
            "scenes": rows,
            "front_view_advantage_fraction_unweighted": wins_unweighted as f64 / n,
        }),
    ))
}

/// The reference scene: one schedule run must at least halve the objective.
pub fn mvopt_reference() -> Result<Outcome> {
    let scene = generate_scene(&SceneConfig::desk(REFERENCE_SEED))?;
    let out = mvopt_run(&scene.corrupted, &MvOptConfig::default())?;
    let totals = out.trace.totals();
    let (first, last) = (totals[0], totals[totals.len() - 1]);
    Ok(Outcome::new(
        vec![Check::at_most(
            "reference_final_over_initial",
            last / first,
            REFERENCE_MAX_RATIO,
        )],
        json!({"scene_seed": REFERENCE_SEED, "initial": first, "final": last}),
    ))
}

/// With only the temporal term left, novel-view blocks have zero gradient
/// and stay untouched.
pub fn mvopt_zero_weight(seed: u64) -> Result<Outcome> {
    let scene = generate_scene(&SceneConfig::desk(derive_seed(seed, &[13])))?;
    let cfg = MvOptConfig {
        w2: 0.0,
        w3: 0.0,
        ..MvOptConfig::default()
    };
    let seq = &scene.corrupted;
    let main = seq.rig().main_index();
    let mut worst: f64 = 0.0;
    for t in 1..seq.frame_count() {
        for m in (0..seq.view_count()).filter(|&m| m != main) {
            worst = worst.max(norm(&block_gradient(seq, &cfg, t, m)?));
        }
    }
    let out = mvopt_run(seq, &cfg)?;
    let mut clamped = seq.clone();
    clamped.clamp_unit();
    let untouched = (0..seq.frame_count()).all(|t| {
        (0..seq.view_count())
            .filter(|&m| m != main)
            .all(|m| out.refined.frame(t, m) == clamped.frame(t, m))
    });
    Ok(Outcome::new(
        vec![
            Check::at_most("zero_weight_novel_gradient", worst, 0.0),
            Check::holds("zero_weight_novel_frames_unchanged", untouched),
        ],
        Value::Null,
    ))
}

/// Smallest per-channel pixel sum over the free frames.
fn min_channel_mass(seq: &FrameSequence) -> f64 {
    let mut min = f64::INFINITY;
    for t in 1..seq.frame_count() {
        for m in 0..seq.view_count() {
            let f = seq.frame(t, m);
            for c in 0..f.channels() {
                min = min.min(f.channel(c).iter().sum());
            }
        }
    }
    min
}

/// Repeat Gauss-Newton schedule sweeps until a sweep lowers the objective by
/// less than [`CONVERGE_TOL`] (or `max_sweeps` runs out), then measure the
/// largest block gradient norm.
pub fn stationarity_probe(scene_seed: u64, max_sweeps: usize) -> Result<Outcome> {
    let scene = generate_scene(&SceneConfig::desk(scene_seed))?;
    let cfg = MvOptConfig {
        direction: Direction::GaussNewton,
        ..MvOptConfig::default()
    };
    let initial_mass = min_channel_mass(&scene.corrupted);
    let mut state = OptState::new(scene.corrupted, cfg)?;
    let initial_norm = block_stationarity(&state).iter().map(|b| b.norm).fold(0.0, f64::max);
    let report = mvopt_converge(&mut state, CONVERGE_TOL, max_sweeps)?;
    let max_norm = block_stationarity(&state).iter().map(|b| b.norm).fold(0.0, f64::max);
    let monotone = check_monotone(&state.trace().totals(), DEFAULT_MONOTONE_TOL)?.ok;
    Ok(Outcome::new(
        vec![Check::new(
            "stationarity_max_block_norm",
            max_norm,
            crate::report::Relation::Below,
            STATIONARITY_TOL,
        )],
        json!({
            "scene_seed": scene_seed,
            "sweeps": report.sweeps,
            "converged": report.converged,
            "last_decrease": report.last_decrease,
            "objective": state.breakdown().total,
            "initial_max_block_norm": initial_norm,
            "initial_min_channel_mass": initial_mass,
            "final_min_channel_mass": min_channel_mass(state.sequence()),
            "monotone": monotone,
        }),
    ))
}

// Gradient suite.

pub const GRADIENT_INSTANCES: usize = 20;
pub const GRADIENT_REL_TOL: f64 = 1e-5;

/// Largest `|fd − g|` over entries, relative to the largest `|g|`.
fn fd_error(grad: &[f64], h: f64, mut eval: impl FnMut(usize, f64) -> Result<f64>) -> Result<f64> {
    let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max).max(1e-12);
    let mut worst: f64 = 0.0;
    for (i, g) in grad.iter().enumerate() {
        let fd = (eval(i, h)? - eval(i, -h)?) / (2.0 * h);
        worst = worst.max((fd - g).abs() / scale);
    }
    Ok(worst)
}

fn random_sequence(
    rng: &mut SeededRng,
    frames: usize,
    views: usize,
    size: usize,
    channels: usize,
) -> Result<FrameSequence> {
    let rows = (0..frames)
        .map(|_| {
            (0..views)
                .map(|_| {
                    let data = (0..size * size * channels).map(|_| rng.uniform()).collect();
                    Frame::from_data(size, size, channels, data)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(build_view_rig(views, 0)?, rows)
}

/// Per-timestamp and whole-objective block gradients on random 8×8 frames.
pub fn gradient_mvopt(seed: u64) -> Result<Outcome> {
    let mut rng = SeededRng::stream(seed, &[14]);
    let mut worst_local: f64 = 0.0;
    let mut worst_full: f64 = 0.0;
    for _ in 0..GRADIENT_INSTANCES {
        let views = 2 + rng.index(3);
        let seq = random_sequence(&mut rng, 3, views, 8, 2)?;
        let cfg = MvOptConfig {
            w1: rng.uniform_range(0.5, 2.0),
            w2: rng.uniform_range(0.05, 0.5),
            w3: rng.uniform_range(0.01, 0.1),
            opposite_view_term: views % 2 == 0 && rng.uniform() < 0.5,
            ..MvOptConfig::default()
        };
        let t = 1 + rng.index(2);
        let view = rng.index(views);
        let perturbed = |i: usize, h: f64| {
            let mut p = seq.clone();
            p.frame_mut(t, view).data_mut()[i] += h;
            p
        };
        let (_, g_local) = total_loss(&seq, t, &cfg, view)?;
        worst_local = worst_local.max(fd_error(&g_local, 1e-5, |i, h| {
            Ok(total_loss(&perturbed(i, h), t, &cfg, view)?.0)
        })?);
        let g_full = block_gradient(&seq, &cfg, t, view)?;
        worst_full = worst_full.max(fd_error(&g_full, 1e-5, |i, h| {
            Ok(objective(&perturbed(i, h), &cfg)?.total)
        })?);
    }
    Ok(Outcome::new(
        vec![
            Check::at_most("total_loss_gradient_rel_err", worst_local, GRADIENT_REL_TOL),
            Check::at_most("objective_block_gradient_rel_err", worst_full, GRADIENT_REL_TOL),
        ],
        Value::Null,
    ))
}

/// Gradient of the fusion training loss with respect to the view weights.
pub fn gradient_fusion(seed: u64) -> Result<Outcome> {
    let mut rng = SeededRng::stream(seed, &[15]);
    let mut worst: f64 = 0.0;
    for i in 0..GRADIENT_INSTANCES {
        let m = 2 + rng.index(3);
        let sigmas: Vec<f64> = (0..m).map(|_| rng.log_uniform(0.1, 3.0)).collect();
        let model = NoisyViewModel::seeded(sigmas, 4, 1.0, derive_seed(seed, &[16, i as u64]))?;
        let batch = FusionBatch::sample(&model, 32, derive_seed(seed, &[17, i as u64]));
        let omega: Vec<f64> = (0..m).map(|_| rng.uniform_range(0.5, 2.0)).collect();
        let (_, grad) = fusion_loss_and_grad(&model, &batch, &omega)?;
        worst = worst.max(fd_error(&grad, 1e-6, |k, h| {
            let mut w = omega.clone();
            w[k] += h;
            Ok(fusion_loss_and_grad(&model, &batch, &w)?.0)
        })?);
    }
    Ok(Outcome::new(
        vec![Check::at_most(
            "fusion_weight_gradient_rel_err",
            worst,
            GRADIENT_REL_TOL,
        )],
        Value::Null,
    ))
}

/// Gradient of the alignment energy.
pub fn gradient_alignment(seed: u64) -> Result<Outcome> {
    let mut rng = SeededRng::stream(seed, &[18]);
    let mut worst: f64 = 0.0;
    for _ in 0..GRADIENT_INSTANCES {
        let n = 2 + rng.index(7);
        let at = AttentionMap::random(n, 1.0, &mut rng);
        let am = AttentionMap::random(n, 1.0, &mut rng);
        let lambda = rng.uniform_range(0.0, 2.0);
        let z = normals(&mut rng, n);
        let grad = alignment_gradient(&z, &at, &am, lambda)?;
        worst = worst.max(fd_error(&grad, 1e-6, |k, h| {
            let mut p = z.clone();
            p[k] += h;
            alignment_energy(&p, &at, &am, lambda)
        })?);
    }
    Ok(Outcome::new(
        vec![Check::at_most("alignment_gradient_rel_err", worst, GRADIENT_REL_TOL)],
        Value::Null,
    ))
}

// Render suite.

pub const ROUND_TRIP_TOL: f64 = 0.5;
pub const RENDER_SCENES: usize = 20;

/// Largest keypoint displacement after rendering and extracting again, over
/// random keypoints and scene keypoints kept three blob widths from the border.
pub fn render_round_trip(seed: u64) -> Result<Outcome> {
    let (size, sigma) = (32usize, mvkit::synth::DEFAULT_BLOB_SIGMA);
    let margin = 3.0 * sigma;
    let hi = size as f64 - 1.0 - margin;
    let inside = |p: &Keypoint| p.x >= margin && p.x <= hi && p.y >= margin && p.y <= hi;
    let mut rng = SeededRng::stream(seed, &[19]);
    let mut sets = Vec::new();
    for _ in 0..100 {
        let points = (0..13)
            .map(|_| Keypoint {
                x: rng.uniform_range(margin, hi),
                y: rng.uniform_range(margin, hi),
                confidence: rng.uniform_range(0.3, 1.0),
            })
            .collect();
        sets.push(KeypointSet::new(points));
    }
    for i in 0..RENDER_SCENES {
        let cfg = SceneConfig::desk(derive_seed(seed, &[20, i as u64]));
        let sk = make_skeleton_sequence(&cfg)?;
        let rig = build_view_rig(cfg.views, cfg.main_index)?;
        for t in 0..cfg.frames {
            for &az in rig.azimuths() {
                sets.push(project_view(&sk, t, az, size, size));
            }
        }
    }
    let mut worst: f64 = 0.0;
    let mut tested = 0usize;
    for k in &sets {
        let back = extract_pose(&render_frame(k, size, size, sigma));
        for (p, q) in k.points.iter().zip(&back.points) {
            if inside(p) {
                tested += 1;
                worst = worst.max((p.x - q.x).abs()).max((p.y - q.y).abs());
            }
        }
    }
    Ok(Outcome::new(
        vec![Check::at_most("render_extract_max_displacement", worst, ROUND_TRIP_TOL)],
        json!({"keypoints_tested": tested}),
    ))
}

/// Geometric properties of generated scenes.
pub fn scene_properties(seed: u64) -> Result<Outcome> {
    let mut y_gap: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let mut mirror: f64 = 0.0;
    let mut raised = 0usize;
    let mut rows = Vec::new();
    for i in 0..RENDER_SCENES {
        let mut cfg = SceneConfig::desk(derive_seed(seed, &[21, i as u64]));
        let long = SceneConfig {
            frames: 16,
            ..cfg.clone()
        };
        let sk = make_skeleton_sequence(&long)?;
        for t in 0..sk.frame_count() {
            for b in 0..sk.bones.len() {
                drift = drift.max((sk.bone_length(t, b) - sk.bone_length(0, b)).abs());
            }
            let front = project_view(&sk, t, 0.0, cfg.height, cfg.width);
            let back = project_view(&sk, t, 180.0, cfg.height, cfg.width);
            for (f, k) in front.points.iter().zip(&back.points) {
                mirror = mirror.max((k.x - (cfg.width as f64 - 1.0 - f.x)).abs());
            }
        }
        cfg.frames = 8;
        let scene = generate_scene(&cfg)?;
        for row in &scene.keypoints {
            for set in row {
                for (p, q) in set.points.iter().zip(&row[0].points) {
                    y_gap = y_gap.max((p.y - q.y).abs());
                }
            }
        }
        let semantic = |seq: &FrameSequence| -> Result<f64> {
            (1..seq.frame_count())
                .map(|t| mvkit::mvopt::loss_mv_semantic(seq, t, None))
                .sum()
        };
        let (clean, corrupted) = (semantic(&scene.clean)?, semantic(&scene.corrupted)?);
        raised += usize::from(corrupted > clean);
        let cfg_default = MvOptConfig::default();
        rows.push(json!({
            "semantic_clean": clean,
            "semantic_corrupted": corrupted,
            "objective_clean": objective(&scene.clean, &cfg_default)?.total,
            "objective_corrupted": objective(&scene.corrupted, &cfg_default)?.total,
        }));
    }
    Ok(Outcome::new(
        vec![
            Check::at_most("cross_view_height_gap", y_gap, 1e-9),
            Check::at_most("bone_length_drift", drift, 1e-9),
            Check::at_most("back_view_mirror_gap", mirror, 1e-9),
            Check::at_least(
                "corruption_raises_semantic_fraction",
                raised as f64 / RENDER_SCENES as f64,
                1.0,
            ),
        ],
        Value::Array(rows),
    ))
}

// Determinism suite.

fn bitwise_equal(a: &FrameSequence, b: &FrameSequence) -> bool {
    a.shape() == b.shape()
        && a.frames()
            .iter()
            .flatten()
            .zip(b.frames().iter().flatten())
            .all(|(x, y)| x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

pub fn small_scene_config(seed: u64) -> SceneConfig {
    SceneConfig {
        frames: 3,
        joints: 6,
        views: 4,
        height: 12,
        width: 12,
        sigmas: vec![0.05, 0.1, 0.15, 0.2],
        ..SceneConfig::desk(seed)
    }
}

pub fn determinism(seed: u64) -> Result<Outcome> {
    let cfg = small_scene_config(derive_seed(seed, &[22]));
    let scene = generate_scene(&cfg)?;
    let again = generate_scene(&cfg)?;
    let container = SceneContainer::from_scene(&scene);
    let text = container.to_json();
    let round_trip = match SceneContainer::from_json(&text) {
        Ok(back) => {
            bitwise_equal(&back.sequence, &container.sequence)
                && back.config == container.config
                && back.keypoints == container.keypoints
                && back.to_json() == text
        }
        Err(_) => false,
    };
    let reference = generate_scene(&SceneConfig::desk(REFERENCE_SEED))?;
    let reference_round_trip = SceneContainer::from_json(&SceneContainer::from_scene(&reference).to_json())
        .map(|back| bitwise_equal(&back.sequence, &reference.corrupted))
        .unwrap_or(false);
    let cfg_opt = MvOptConfig::default();
    let a = mvopt_run(&scene.corrupted, &cfg_opt)?;
    let b = mvopt_run(&scene.corrupted, &cfg_opt)?;
    let same_trace = a
        .trace
        .totals()
        .iter()
        .zip(&b.trace.totals())
        .all(|(x, y)| x.to_bits() == y.to_bits())
        && bitwise_equal(&a.refined, &b.refined);
    let csv_round_trip = read_trace(trace_to_string(&a.trace).as_bytes())
        .map(|t| t == a.trace)
        .unwrap_or(false);
    let repeated = convexity(seed)? == convexity(seed)?;
    Ok(Outcome::new(
        vec![
            Check::holds("scene_generation_repeatable", scene == again),
            Check::holds("scene_json_round_trip_exact", round_trip),
            Check::holds("reference_scene_round_trip_exact", reference_round_trip),
            Check::holds("mvopt_run_repeatable", same_trace),
            Check::holds("trace_csv_round_trip_exact", csv_round_trip),
            Check::holds("suite_repeatable", repeated),
        ],
        Value::Null,
    ))
}
