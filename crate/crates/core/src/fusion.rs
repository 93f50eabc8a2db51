//! Inverse-variance fusion of noisy per-view features.
//!
//! Each view observes `v_m = v* + ε_m` with `ε_m ~ N(0, σ_m² I_d)`. Among
//! linear estimators `Σ β_m v_m` with `Σ β_m = 1` the expected squared error
//! is `d Σ β_m² σ_m²`, minimized by `β_m ∝ σ_m⁻²`. [`learn_view_weights`]
//! fits the per-view attention weights of [`mv_attention`] to the same
//! synthetic data, so the learned softmax can be compared with that rule.

use crate::attention::{mv_attention, FeatureToken};
use crate::error::{ensure, ensure_finite, Error, Result};
use crate::rng::SeededRng;

const SIMPLEX_TOL: f64 = 1e-9;
/// Largest view count the exhaustive simplex search accepts.
pub const BRUTE_FORCE_MAX_VIEWS: usize = 4;
/// Standard deviation of the probe noise added to `v*` to form queries.
pub const PROBE_STD: f64 = 0.01;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_TRAINING_STEPS: usize = 2000;
/// Feature dimension, canonical-feature length and batch size used by the
/// weight-learning experiments.
pub const DEFAULT_FEATURE_DIM: usize = 8;
pub const DEFAULT_FEATURE_NORM: f64 = 1.0;
pub const DEFAULT_TRAINING_SAMPLES: usize = 256;

const VIEW_STREAM: u64 = 0;
const PROBE_STREAM: u64 = 1;
const FEATURE_STREAM: u64 = 2;

/// Canonical feature plus per-view noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyViewModel {
    v_star: FeatureToken,
    sigmas: Vec<f64>,
}

impl NoisyViewModel {
    pub fn new(v_star: FeatureToken, sigmas: Vec<f64>) -> Result<Self> {
        ensure(!v_star.is_empty(), || "feature dimension must be at least 1".into())?;
        ensure_finite(&v_star, "v_star")?;
        check_sigmas(&sigmas)?;
        Ok(Self { v_star, sigmas })
    }

    /// A model whose canonical feature is a random direction of length `norm`.
    pub fn seeded(sigmas: Vec<f64>, dim: usize, norm: f64, seed: u64) -> Result<Self> {
        ensure(dim >= 1, || "feature dimension must be at least 1".into())?;
        let mut rng = SeededRng::stream(seed, &[FEATURE_STREAM]);
        let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let len = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self::new(raw.iter().map(|v| v * norm / len).collect(), sigmas)
    }

    pub fn v_star(&self) -> &[f64] {
        &self.v_star
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn dim(&self) -> usize {
        self.v_star.len()
    }

    pub fn view_count(&self) -> usize {
        self.sigmas.len()
    }
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    ensure(!sigmas.is_empty(), || "at least one view is required".into())?;
    match sigmas.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        None => Ok(()),
        Some(i) => Err(Error::InvalidArgument(format!(
            "sigma[{i}] = {} must be positive and finite",
            sigmas[i]
        ))),
    }
}

/// `β_m = σ_m⁻² / Σ_j σ_j⁻²`.
pub fn inverse_variance_weights(sigmas: &[f64]) -> Result<Vec<f64>> {
    check_sigmas(sigmas)?;
    let precision: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
    let total: f64 = precision.iter().sum();
    Ok(precision.iter().map(|p| p / total).collect())
}

/// `d Σ β_m² σ_m²`, the expected squared error of the fused estimate.
pub fn expected_mse(beta: &[f64], sigmas: &[f64], dim: usize) -> Result<f64> {
    ensure(beta.len() == sigmas.len(), || {
        format!("{} weights for {} views", beta.len(), sigmas.len())
    })?;
    ensure_finite(beta, "beta")?;
    let sum: f64 = beta.iter().sum();
    ensure((sum - 1.0).abs() <= SIMPLEX_TOL, || {
        format!("weights sum to {sum}, not 1")
    })?;
    Ok(dim as f64 * weighted_error(beta, sigmas))
}

fn weighted_error(beta: &[f64], sigmas: &[f64]) -> f64 {
    beta.iter().zip(sigmas).map(|(b, s)| b * b * s * s).sum()
}

/// Result of the exhaustive simplex search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub weights: Vec<f64>,
    /// `Σ β_m² σ_m²` at the minimizer (per feature dimension).
    pub mse: f64,
    pub points: usize,
}

/// Exhaustive search of `{β ≥ 0, Σβ = 1}` on a lattice of spacing
/// `grid_step`, visiting points in lexicographic order and keeping the first
/// minimizer.
pub fn brute_force_optimal_weights(sigmas: &[f64], grid_step: f64) -> Result<GridOptimum> {
    check_sigmas(sigmas)?;
    let m = sigmas.len();
    if m > BRUTE_FORCE_MAX_VIEWS {
        return Err(Error::Unsupported(format!(
            "grid search supports at most {BRUTE_FORCE_MAX_VIEWS} views, got {m}"
        )));
    }
    ensure(grid_step > 0.0 && grid_step <= 0.01, || {
        format!("grid step {grid_step} must lie in (0, 0.01]")
    })?;
    let units = (1.0 / grid_step).round();
    ensure((units * grid_step - 1.0).abs() < 1e-9, || {
        format!("grid step {grid_step} does not divide 1")
    })?;
    let units = units as usize;
    let var: Vec<f64> = sigmas.iter().map(|s| s * s).collect();

    let mut best = GridOptimum {
        weights: Vec::new(),
        mse: f64::INFINITY,
        points: 0,
    };
    let mut counts = vec![0usize; m];
    search(&mut counts, 0, units, units, &var, &mut best);
    Ok(best)
}

fn search(counts: &mut [usize], pos: usize, remaining: usize, units: usize, var: &[f64], best: &mut GridOptimum) {
    let m = counts.len();
    if pos + 1 == m {
        counts[pos] = remaining;
        best.points += 1;
        let scale = units as f64;
        let mse: f64 = counts
            .iter()
            .zip(var)
            .map(|(&c, v)| {
                let b = c as f64 / scale;
                b * b * v
            })
            .sum();
        if mse < best.mse {
            best.mse = mse;
            best.weights = counts.iter().map(|&c| c as f64 / scale).collect();
        }
        return;
    }
    for c in 0..=remaining {
        counts[pos] = c;
        search(counts, pos + 1, remaining - c, units, var, best);
    }
}

/// `count` draws of every view, indexed `[sample][view]`.
pub fn sample_views(model: &NoisyViewModel, count: usize, seed: u64) -> Vec<Vec<FeatureToken>> {
    let mut rng = SeededRng::stream(seed, &[VIEW_STREAM]);
    (0..count)
        .map(|_| {
            model
                .sigmas
                .iter()
                .map(|s| model.v_star.iter().map(|v| v + s * rng.normal()).collect())
                .collect()
        })
        .collect()
}

/// Monte-Carlo squared error of the fixed-weight fusion `Σ β_m v_m`;
/// returns `(mean, standard error)`.
pub fn monte_carlo_mse(model: &NoisyViewModel, beta: &[f64], count: usize, seed: u64) -> Result<(f64, f64)> {
    ensure(beta.len() == model.view_count(), || "one weight per view".into())?;
    ensure(count >= 2, || "need at least two samples".into())?;
    let samples = sample_views(model, count, seed);
    let errors: Vec<f64> = samples
        .iter()
        .map(|views| {
            (0..model.dim())
                .map(|k| {
                    let fused: f64 = views.iter().zip(beta).map(|(v, b)| b * v[k]).sum();
                    (fused - model.v_star[k]).powi(2)
                })
                .sum()
        })
        .collect();
    Ok(mean_and_stderr(&errors))
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Training data for [`learn_view_weights`]: one query per sample plus the
/// noisy views, which serve as both keys and values.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBatch {
    pub queries: Vec<FeatureToken>,
    pub views: Vec<Vec<FeatureToken>>,
}

impl FusionBatch {
    pub fn sample(model: &NoisyViewModel, count: usize, seed: u64) -> Self {
        let views = sample_views(model, count, seed);
        let mut probe = SeededRng::stream(seed, &[PROBE_STREAM]);
        let queries = (0..count)
            .map(|_| model.v_star.iter().map(|v| v + PROBE_STD * probe.normal()).collect())
            .collect();
        Self { queries, views }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Mean fusion error `‖mv_attention(q, v, v, ω).fused − v*‖²` over the
/// batch and its gradient with respect to `ω`.
pub fn fusion_loss_and_grad(model: &NoisyViewModel, batch: &FusionBatch, omega: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure(!batch.is_empty(), || "empty training batch".into())?;
    let m = model.view_count();
    ensure(omega.len() == m, || "one weight per view".into())?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m];
    for (q, views) in batch.queries.iter().zip(&batch.views) {
        let att = mv_attention(q, views, views, omega)?;
        let err: Vec<f64> = att.fused.iter().zip(&model.v_star).map(|(f, v)| f - v).collect();
        loss += err.iter().map(|e| e * e).sum::<f64>();
        // ∂α_j/∂ω_m = α_j (δ_jm − α_m) s_m with s_m = <q, k_m>, hence
        // ∂L/∂ω_m = 2 α_m s_m <err, v_m − fused>.
        for (mi, v) in views.iter().enumerate() {
            let score: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
            let proj: f64 = err
                .iter()
                .zip(v.iter().zip(&att.fused))
                .map(|(e, (vk, fk))| e * (vk - fk))
                .sum();
            grad[mi] += 2.0 * att.alpha[mi] * score * proj;
        }
    }
    let n = batch.len() as f64;
    Ok((loss / n, grad.into_iter().map(|g| g / n).collect()))
}

/// Mean attention weight each view receives over the batch.
pub fn mean_attention(batch: &FusionBatch, omega: &[f64]) -> Result<Vec<f64>> {
    ensure(!batch.is_empty(), || "empty batch".into())?;
    let mut acc = vec![0.0; omega.len()];
    for (q, views) in batch.queries.iter().zip(&batch.views) {
        let att = mv_attention(q, views, views, omega)?;
        for (a, x) in acc.iter_mut().zip(&att.alpha) {
            *a += x;
        }
    }
    let n = batch.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedWeights {
    pub omega: Vec<f64>,
    pub alpha_mean: Vec<f64>,
    pub final_loss: f64,
}

/// Gradient descent on the fusion error, starting from `ω = 1`.
///
/// The weights are parameterized as `ω = exp(θ)` to keep them positive;
/// each step is `θ ← θ − lr · ω ⊙ ∂L/∂ω`.
pub fn learn_view_weights(
    model: &NoisyViewModel,
    batch: &FusionBatch,
    steps: usize,
    lr: f64,
) -> Result<LearnedWeights> {
    ensure(lr > 0.0 && lr.is_finite(), || "learning rate must be positive".into())?;
    ensure(batch.views.iter().all(|v| v.len() == model.view_count()), || {
        "batch view count differs from the model".into()
    })?;
    let m = model.view_count();
    let mut theta = vec![0.0f64; m];
    let mut omega = vec![1.0; m];
    let mut loss = f64::NAN;
    for step in 0..steps {
        let (l, g) = fusion_loss_and_grad(model, batch, &omega)?;
        if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::TrainingDiverged { step, loss: l });
        }
        loss = l;
        for ((t, w), gi) in theta.iter_mut().zip(&mut omega).zip(&g) {
            *t -= lr * *w * gi;
            *w = t.exp();
        }
        if omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::TrainingDiverged { step, loss: l });
        }
    }
    if steps > 0 || loss.is_nan() {
        loss = fusion_loss_and_grad(model, batch, &omega)?.0;
    }
    let alpha_mean = mean_attention(batch, &omega)?;
    Ok(LearnedWeights {
        omega,
        alpha_mean,
        final_loss: loss,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inverse_variance_examples() {
        assert_eq!(inverse_variance_weights(&[1.0; 4]).unwrap(), vec![0.25; 4]);
        let b = inverse_variance_weights(&[1.0, 2.0]).unwrap();
        assert!((b[0] - 0.8).abs() < 1e-15 && (b[1] - 0.2).abs() < 1e-15);
        let b = inverse_variance_weights(&[1.0, 1e6]).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-11 && (b[1] - 1e-12).abs() < 1e-20);
        let b = inverse_variance_weights(&[1.0, 2.0, 4.0]).unwrap();
        for (x, y) in b.iter().zip([16.0 / 21.0, 4.0 / 21.0, 1.0 / 21.0]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_variance_rejects_nonpositive() {
        assert!(inverse_variance_weights(&[1.0, 0.0]).is_err());
        assert!(inverse_variance_weights(&[-1.0]).is_err());
        assert!(inverse_variance_weights(&[f64::NAN]).is_err());
        assert!(inverse_variance_weights(&[]).is_err());
    }

    #[test]
    fn expected_mse_examples() {
        assert_eq!(expected_mse(&[1.0], &[3.0], 5).unwrap(), 45.0);
        assert!((expected_mse(&[0.5, 0.5], &[1.0, 1.0], 1).unwrap() - 0.5).abs() < 1e-15);
        let b = inverse_variance_weights(&[1.0, 2.0]).unwrap();
        assert!((expected_mse(&b, &[1.0, 2.0], 1).unwrap() - 0.8).abs() < 1e-15);
        assert!(expected_mse(&[0.5, 0.6], &[1.0, 1.0], 1).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let g = brute_force_optimal_weights(&[1.0, 1.0], 0.01).unwrap();
        assert_eq!(g.weights, vec![0.5, 0.5]);
        let g = brute_force_optimal_weights(&[1.0, 2.0], 0.001).unwrap();
        assert!((g.weights[0] - 0.8).abs() < 1e-12 && (g.weights[1] - 0.2).abs() < 1e-12);
        let g = brute_force_optimal_weights(&[1.0, 2.0, 4.0], 0.005).unwrap();
        let closed = inverse_variance_weights(&[1.0, 2.0, 4.0]).unwrap();
        for (a, b) in g.weights.iter().zip(&closed) {
            assert!((a - b).abs() <= 0.005);
        }
        assert_eq!(g.points, 201 * 202 / 2);
    }

    #[test]
    fn brute_force_limits() {
        assert!(matches!(
            brute_force_optimal_weights(&[1.0; 5], 0.01),
            Err(Error::Unsupported(_))
        ));
        assert!(brute_force_optimal_weights(&[1.0, 2.0], 0.05).is_err());
        assert!(brute_force_optimal_weights(&[1.0, 2.0], 0.003).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_near_noise_free_limit() {
        let model = NoisyViewModel::new(vec![1.0, -2.0], vec![1e-9, 1e-9]).unwrap();
        let a = sample_views(&model, 10, 3);
        assert_eq!(a, sample_views(&model, 10, 3));
        for v in a.iter().flatten() {
            assert!((v[0] - 1.0).abs() < 1e-7 && (v[1] + 2.0).abs() < 1e-7);
        }
        assert!(NoisyViewModel::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn sample_std_matches_sigma() {
        let model = NoisyViewModel::new(vec![0.5], vec![2.0]).unwrap();
        let xs: Vec<f64> = sample_views(&model, 100_000, 8).iter().map(|s| s[0][0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((1.96..=2.04).contains(&std), "std {std}");
    }

    #[test]
    fn zero_steps_keep_initial_weights() {
        let model = NoisyViewModel::seeded(vec![0.5, 1.0], 4, 2.0, 1).unwrap();
        let batch = FusionBatch::sample(&model, 16, 1);
        let r = learn_view_weights(&model, &batch, 0, 0.05).unwrap();
        assert_eq!(r.omega, vec![1.0, 1.0]);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let model = NoisyViewModel::seeded(vec![0.1, 10.0], 8, 2.0, 3).unwrap();
        let batch = FusionBatch::sample(&model, 64, 3);
        let r = learn_view_weights(&model, &batch, 200, 1e12);
        assert!(matches!(r, Err(Error::TrainingDiverged { .. })), "{r:?}");
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn weights_are_a_distribution(sigmas in proptest::collection::vec(1e-3f64..1e3, 1..10)) {
            let b = inverse_variance_weights(&sigmas).unwrap();
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(b.iter().all(|x| *x > 0.0));
        }

        #[test]
        fn fused_estimate_beats_best_single_view(
            sigmas in proptest::collection::vec(0.1f64..10.0, 2..8),
            dim in 1usize..8,
        ) {
            let b = inverse_variance_weights(&sigmas).unwrap();
            let fused = expected_mse(&b, &sigmas, dim).unwrap();
            let best = sigmas.iter().map(|s| s * s).fold(f64::INFINITY, f64::min) * dim as f64;
            prop_assert!(fused < best);
        }

        #[test]
        fn closed_form_beats_random_simplex_points(
            sigmas in proptest::collection::vec(0.1f64..10.0, 2..6),
            raw in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            let m = sigmas.len();
            let total: f64 = raw[..m].iter().sum::<f64>().max(1e-9);
            let mut beta: Vec<f64> = raw[..m].iter().map(|r| r / total).collect();
            let s: f64 = beta.iter().sum();
            beta[0] += 1.0 - s;
            let opt = inverse_variance_weights(&sigmas).unwrap();
            let a = expected_mse(&opt, &sigmas, 1).unwrap();
            prop_assume!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a <= expected_mse(&beta, &sigmas, 1).unwrap() * (1.0 + 1e-12));
        }
    }
}
