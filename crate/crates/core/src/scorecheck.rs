//! Gaussian toy checks of the denoising objective: the squared-loss minimizer
//! is the conditional mean of the noise, and conditioning never hurts it.

use crate::error::{ensure, invalid, Result};
use crate::fusion::mean_and_stderr;
use crate::rng::SeededRng;

pub const MIN_SAMPLES: usize = 100_000;
pub const MIN_BINS: usize = 20;
/// Bins with fewer samples are excluded from comparisons.
pub const MIN_BIN_COUNT: usize = 30;
/// Bins span this many standard deviations of `z_t` on either side of its mean.
pub const BIN_HALF_WIDTH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mu0: f64,
    pub s0: f64,
}

/// Scalar prior `z0 ~ Σ_k w_k N(mu_k, s_k²)` observed as `z_t = z0 + σ_t ε`.
/// The conditioning signal is the component label.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatentModel {
    components: Vec<MixtureComponent>,
    sigma_t: f64,
}

impl GaussianLatentModel {
    /// Weights must be nonnegative and sum to 1. A zero weight is allowed and
    /// describes a component that is never drawn.
    pub fn new(components: Vec<MixtureComponent>, sigma_t: f64) -> Result<Self> {
        ensure(!components.is_empty(), || "model needs at least one component".into())?;
        ensure(sigma_t.is_finite() && sigma_t > 0.0, || {
            "sigma_t must be positive".into()
        })?;
        for (k, c) in components.iter().enumerate() {
            ensure(c.weight.is_finite() && c.weight >= 0.0, || {
                format!("component {k}: weight must be nonnegative")
            })?;
            ensure(c.mu0.is_finite(), || format!("component {k}: mean must be finite"))?;
            ensure(c.s0.is_finite() && c.s0 > 0.0, || {
                format!("component {k}: s0 must be positive")
            })?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        ensure((total - 1.0).abs() < 1e-9, || {
            format!("weights sum to {total}, expected 1")
        })?;
        Ok(Self { components, sigma_t })
    }

    pub fn standard(sigma_t: f64) -> Result<Self> {
        Self::new(
            vec![MixtureComponent {
                weight: 1.0,
                mu0: 0.0,
                s0: 1.0,
            }],
            sigma_t,
        )
    }

    /// Equal-weight mixture of `N(±separation, s0²)`.
    pub fn symmetric_pair(separation: f64, s0: f64, sigma_t: f64) -> Result<Self> {
        Self::new(
            vec![
                MixtureComponent {
                    weight: 0.5,
                    mu0: -separation,
                    s0,
                },
                MixtureComponent {
                    weight: 0.5,
                    mu0: separation,
                    s0,
                },
            ],
            sigma_t,
        )
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn sigma_t(&self) -> f64 {
        self.sigma_t
    }

    fn check_condition(&self, condition: Option<usize>) -> Result<()> {
        match condition {
            Some(k) if k >= self.components.len() => Err(invalid(format!(
                "unknown component {k}; the model has {}",
                self.components.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Mean and standard deviation of `z_t`, restricted to one component when
    /// conditioned.
    fn zt_moments(&self, condition: Option<usize>) -> (f64, f64) {
        let s2 = self.sigma_t * self.sigma_t;
        match condition {
            Some(k) => {
                let c = self.components[k];
                (c.mu0, (c.s0 * c.s0 + s2).sqrt())
            }
            None => {
                let mean: f64 = self.components.iter().map(|c| c.weight * c.mu0).sum();
                let second: f64 = self
                    .components
                    .iter()
                    .map(|c| c.weight * (c.s0 * c.s0 + c.mu0 * c.mu0))
                    .sum();
                (mean, (second - mean * mean + s2).max(0.0).sqrt())
            }
        }
    }

    /// Draw `(component, z0, ε, z_t)`; a conditioned draw fixes the component.
    fn sample(&self, rng: &mut SeededRng, condition: Option<usize>) -> (usize, f64, f64, f64) {
        let k = condition.unwrap_or_else(|| {
            let u = rng.uniform();
            let mut acc = 0.0;
            let last = self.components.iter().rposition(|c| c.weight > 0.0).unwrap_or(0);
            self.components
                .iter()
                .position(|c| {
                    acc += c.weight;
                    c.weight > 0.0 && u < acc
                })
                .unwrap_or(last)
        });
        let c = self.components[k];
        let z0 = c.mu0 + c.s0 * rng.normal();
        let eps = rng.normal();
        (k, z0, eps, z0 + self.sigma_t * eps)
    }

    /// Posterior component probabilities `∝ w_k N(z_t; mu_k, s_k² + σ_t²)`.
    pub fn responsibilities(&self, z_t: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let v = c.s0 * c.s0 + self.sigma_t * self.sigma_t;
                c.weight.ln() - 0.5 * v.ln() - 0.5 * (z_t - c.mu0) * (z_t - c.mu0) / v
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    fn component_noise_mean(&self, k: usize, z_t: f64) -> f64 {
        let c = self.components[k];
        self.sigma_t * (z_t - c.mu0) / (c.s0 * c.s0 + self.sigma_t * self.sigma_t)
    }

    /// `∇_{z_t} log p(z_t)` of the marginal (or single-component) density.
    pub fn score(&self, z_t: f64, condition: Option<usize>) -> Result<f64> {
        self.check_condition(condition)?;
        let s2 = self.sigma_t * self.sigma_t;
        let comp = |k: usize| {
            let c = self.components[k];
            -(z_t - c.mu0) / (c.s0 * c.s0 + s2)
        };
        Ok(match condition {
            Some(k) => comp(k),
            None => self
                .responsibilities(z_t)
                .iter()
                .enumerate()
                .map(|(k, r)| r * comp(k))
                .sum(),
        })
    }
}

/// `E[z0 | z_t]`, optionally given the component.
pub fn analytic_posterior_mean(model: &GaussianLatentModel, z_t: f64, condition: Option<usize>) -> Result<f64> {
    Ok(z_t - model.sigma_t * analytic_denoiser(model, z_t, condition)?)
}

/// `E[ε | z_t]`, optionally given the component. Per component this is
/// `σ_t (z_t − mu0) / (s0² + σ_t²)`, the same as `(z_t − E[z0|z_t]) / σ_t`
/// without the cancellation at small `σ_t`.
pub fn analytic_denoiser(model: &GaussianLatentModel, z_t: f64, condition: Option<usize>) -> Result<f64> {
    model.check_condition(condition)?;
    Ok(match condition {
        Some(k) => model.component_noise_mean(k, z_t),
        None => model
            .responsibilities(z_t)
            .iter()
            .enumerate()
            .map(|(k, r)| r * model.component_noise_mean(k, z_t))
            .sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean of `ε` over the samples whose `z_t` fell in the bin.
    pub mean_eps: f64,
    pub stderr: f64,
    /// Mean of the analytic denoiser over the same samples.
    pub analytic_mean: f64,
    /// Analytic denoiser at the bin midpoint.
    pub analytic_center: f64,
}

impl DenoiserBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Enough samples for the standard error to be trusted.
    pub fn populated(&self) -> bool {
        self.count >= MIN_BIN_COUNT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDenoiser {
    pub bins: Vec<DenoiserBin>,
    pub sample_count: usize,
    /// Samples whose `z_t` fell outside every bin.
    pub outside: usize,
}

/// Bin-wise sample means of `ε` given `z_t`: the empirical squared-loss
/// minimizer restricted to functions constant on each bin.
pub fn empirical_mmse_denoiser(
    model: &GaussianLatentModel,
    sample_count: usize,
    bin_count: usize,
    seed: u64,
    condition: Option<usize>,
) -> Result<BinnedDenoiser> {
    ensure(sample_count >= MIN_SAMPLES, || {
        format!("need at least {MIN_SAMPLES} samples")
    })?;
    ensure(bin_count >= MIN_BINS, || format!("need at least {MIN_BINS} bins"))?;
    model.check_condition(condition)?;
    let (mean, sd) = model.zt_moments(condition);
    let lo = mean - BIN_HALF_WIDTH * sd;
    let width = 2.0 * BIN_HALF_WIDTH * sd / bin_count as f64;
    let mut eps_by_bin: Vec<Vec<f64>> = vec![Vec::new(); bin_count];
    let mut analytic_sum = vec![0.0; bin_count];
    let mut outside = 0;
    let mut rng = SeededRng::new(seed);
    for _ in 0..sample_count {
        let (_, _, eps, z_t) = model.sample(&mut rng, condition);
        let pos = (z_t - lo) / width;
        if pos < 0.0 || pos >= bin_count as f64 {
            outside += 1;
            continue;
        }
        let b = pos as usize;
        eps_by_bin[b].push(eps);
        analytic_sum[b] += analytic_denoiser(model, z_t, condition)?;
    }
    let bins = eps_by_bin
        .iter()
        .enumerate()
        .map(|(b, xs)| {
            let (blo, bhi) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
            let (mean_eps, stderr) = if xs.len() >= 2 {
                mean_and_stderr(xs)
            } else {
                (f64::NAN, f64::NAN)
            };
            let analytic_mean = if xs.is_empty() {
                f64::NAN
            } else {
                analytic_sum[b] / xs.len() as f64
            };
            Ok(DenoiserBin {
                lo: blo,
                hi: bhi,
                count: xs.len(),
                mean_eps,
                stderr,
                analytic_mean,
                analytic_center: analytic_denoiser(model, 0.5 * (blo + bhi), condition)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinnedDenoiser {
        bins,
        sample_count,
        outside,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinAgreement {
    pub populated: usize,
    pub within: usize,
}

impl BinAgreement {
    pub fn fraction(&self) -> f64 {
        if self.populated == 0 {
            0.0
        } else {
            self.within as f64 / self.populated as f64
        }
    }
}

/// Count populated bins whose sample mean lies within `k` standard errors of
/// the analytic denoiser averaged over the bin's samples.
pub fn bin_agreement(binned: &BinnedDenoiser, k: f64) -> BinAgreement {
    let populated: Vec<&DenoiserBin> = binned.bins.iter().filter(|b| b.populated()).collect();
    let within = populated
        .iter()
        .filter(|b| (b.mean_eps - b.analytic_mean).abs() <= k * b.stderr)
        .count();
    BinAgreement {
        populated: populated.len(),
        within,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningGain {
    pub mse_conditional: f64,
    pub mse_unconditional: f64,
    /// Standard error of the paired difference `unconditional − conditional`.
    pub stderr: f64,
}

impl ConditioningGain {
    pub fn gain(&self) -> f64 {
        self.mse_unconditional - self.mse_conditional
    }

    /// Conditioning does not hurt, up to three standard errors.
    pub fn nonnegative(&self) -> bool {
        self.mse_conditional <= self.mse_unconditional + 3.0 * self.stderr
    }
}

/// Squared error of the label-aware and label-blind analytic denoisers on
/// the same draws.
pub fn conditioning_gain(model: &GaussianLatentModel, sample_count: usize, seed: u64) -> Result<ConditioningGain> {
    ensure(sample_count >= 2, || "need at least 2 samples".into())?;
    let mut rng = SeededRng::new(seed);
    let mut cond = Vec::with_capacity(sample_count);
    let mut diff = Vec::with_capacity(sample_count);
    let mut uncond_sum = 0.0;
    for _ in 0..sample_count {
        let (k, _, eps, z_t) = model.sample(&mut rng, None);
        let ec = (eps - analytic_denoiser(model, z_t, Some(k))?).powi(2);
        let eu = (eps - analytic_denoiser(model, z_t, None)?).powi(2);
        cond.push(ec);
        diff.push(eu - ec);
        uncond_sum += eu;
    }
    let mse_conditional = cond.iter().sum::<f64>() / sample_count as f64;
    let (_, stderr) = mean_and_stderr(&diff);
    Ok(ConditioningGain {
        mse_conditional,
        mse_unconditional: uncond_sum / sample_count as f64,
        stderr,
    })
}

/// `‖ε − ε̂‖²`.
pub fn dm_loss(eps_pred: &[f64], eps: &[f64]) -> Result<f64> {
    ensure(eps_pred.len() == eps.len(), || {
        format!("prediction has {} entries, target has {}", eps_pred.len(), eps.len())
    })?;
    Ok(eps_pred.iter().zip(eps).map(|(a, b)| (a - b) * (a - b)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_examples() {
        let m = GaussianLatentModel::standard(1.0).unwrap();
        assert_eq!(analytic_denoiser(&m, 0.0, None).unwrap(), 0.0);
        assert!((analytic_posterior_mean(&m, 2.0, None).unwrap() - 1.0).abs() < 1e-15);
        assert!((analytic_denoiser(&m, 2.0, None).unwrap() - 1.0).abs() < 1e-15);
        let tiny = GaussianLatentModel::standard(1e-6).unwrap();
        for z in [-3.0, 0.5, 7.0] {
            assert!(analytic_denoiser(&tiny, z, None).unwrap().abs() < 1e-5);
        }
    }

    #[test]
    fn unknown_condition_is_rejected() {
        let m = GaussianLatentModel::standard(1.0).unwrap();
        assert!(analytic_denoiser(&m, 0.0, Some(1)).is_err());
        assert!(empirical_mmse_denoiser(&m, MIN_SAMPLES, 20, 0, Some(3)).is_err());
    }

    #[test]
    fn model_validation() {
        let c = |weight, s0| MixtureComponent { weight, mu0: 0.0, s0 };
        assert!(GaussianLatentModel::new(vec![c(0.5, 1.0)], 1.0).is_err());
        assert!(GaussianLatentModel::new(vec![c(1.0, 0.0)], 1.0).is_err());
        assert!(GaussianLatentModel::new(vec![c(1.0, 1.0)], 0.0).is_err());
        assert!(GaussianLatentModel::new(vec![], 1.0).is_err());
        assert!(GaussianLatentModel::new(vec![c(1.0, 1.0), c(0.0, 1.0)], 1.0).is_ok());
    }

    #[test]
    fn sample_and_bin_minimums() {
        let m = GaussianLatentModel::standard(1.0).unwrap();
        assert!(empirical_mmse_denoiser(&m, MIN_SAMPLES - 1, 40, 0, None).is_err());
        assert!(empirical_mmse_denoiser(&m, MIN_SAMPLES, 19, 0, None).is_err());
    }

    #[test]
    fn vanishing_noise_carries_no_information() {
        let m = GaussianLatentModel::standard(1e-9).unwrap();
        let b = empirical_mmse_denoiser(&m, MIN_SAMPLES, 20, 3, None).unwrap();
        for bin in b.bins.iter().filter(|b| b.count >= 100) {
            assert!(bin.mean_eps.abs() < 4.0 * bin.stderr.max(1e-3), "{bin:?}");
        }
        assert!(bin_agreement(&b, 3.0).fraction() >= 0.9);
    }

    #[test]
    fn standard_gaussian_bins_match_for_two_seeds() {
        let m = GaussianLatentModel::standard(1.0).unwrap();
        let a = empirical_mmse_denoiser(&m, 200_000, 40, 1, None).unwrap();
        let b = empirical_mmse_denoiser(&m, 200_000, 40, 2, None).unwrap();
        assert_ne!(a, b);
        for run in [&a, &b] {
            assert!(bin_agreement(run, 3.0).fraction() >= 0.95);
        }
    }

    #[test]
    fn conditioned_bins_use_the_component_law() {
        let m = GaussianLatentModel::symmetric_pair(5.0, 0.5, 1.0).unwrap();
        let b = empirical_mmse_denoiser(&m, MIN_SAMPLES, 30, 4, Some(1)).unwrap();
        assert!(bin_agreement(&b, 3.0).fraction() >= 0.9);
        assert!((b.bins[15].lo - 5.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_denoiser_is_scaled_score() {
        let m = GaussianLatentModel::new(
            vec![MixtureComponent {
                weight: 1.0,
                mu0: 0.7,
                s0: 1.3,
            }],
            0.4,
        )
        .unwrap();
        for z in [-4.0, -0.3, 0.7, 2.5] {
            let eps = analytic_denoiser(&m, z, None).unwrap();
            let closed = -(z - 0.7) / (1.3f64.powi(2) + 0.16);
            assert!((eps - (-0.4 * closed)).abs() <= 1e-10 * eps.abs().max(1e-300));
        }
    }

    #[test]
    fn mixture_denoiser_is_scaled_score() {
        let m = GaussianLatentModel::symmetric_pair(2.0, 0.8, 0.9).unwrap();
        for z in [-3.0, -0.1, 0.0, 1.4] {
            let eps = analytic_denoiser(&m, z, None).unwrap();
            let score = m.score(z, None).unwrap();
            assert!((eps + 0.9 * score).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioning_gain_examples() {
        let single = GaussianLatentModel::standard(1.0).unwrap();
        let g = conditioning_gain(&single, 10_000, 0).unwrap();
        assert_eq!(g.gain(), 0.0);

        let pair = GaussianLatentModel::symmetric_pair(5.0, 0.5, 1.0).unwrap();
        let g = conditioning_gain(&pair, 200_000, 0).unwrap();
        assert!(g.mse_conditional < g.mse_unconditional);
        assert!(g.nonnegative());

        let degenerate = GaussianLatentModel::new(
            vec![
                MixtureComponent {
                    weight: 1.0,
                    mu0: -5.0,
                    s0: 0.5,
                },
                MixtureComponent {
                    weight: 0.0,
                    mu0: 5.0,
                    s0: 0.5,
                },
            ],
            1.0,
        )
        .unwrap();
        let g = conditioning_gain(&degenerate, 10_000, 0).unwrap();
        assert_eq!(g.mse_conditional, g.mse_unconditional);
    }

    #[test]
    fn dm_loss_examples() {
        assert_eq!(dm_loss(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(dm_loss(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(dm_loss(&[1.0, 2.0], &[2.0, 0.0]).unwrap(), 5.0);
        assert!(dm_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn responsibilities_form_a_distribution(z in -20.0f64..20.0, sep in 0.1f64..6.0, sigma in 0.05f64..3.0) {
            let m = GaussianLatentModel::symmetric_pair(sep, 0.7, sigma).unwrap();
            let r = m.responsibilities(z);
            prop_assert!(r.iter().all(|x| *x >= 0.0));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn score_matches_log_density_difference(z in -6.0f64..6.0, sep in 0.1f64..4.0, sigma in 0.2f64..2.0) {
            let m = GaussianLatentModel::symmetric_pair(sep, 0.6, sigma).unwrap();
            let v = 0.36 + sigma * sigma;
            let logp = |x: f64| {
                (0.5 * (-(x + sep).powi(2) / (2.0 * v)).exp() + 0.5 * (-(x - sep).powi(2) / (2.0 * v)).exp()).ln()
            };
            let h = 1e-5;
            let fd = (logp(z + h) - logp(z - h)) / (2.0 * h);
            prop_assert!((fd - m.score(z, None).unwrap()).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}
