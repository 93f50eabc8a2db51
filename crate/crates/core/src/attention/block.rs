use super::matrix::{dot, Matrix};
use super::FeatureToken;
use crate::error::{ensure, ensure_finite, invalid, Result};
use crate::frame::Frame;
use crate::rng::SeededRng;

/// Fused token and the per-view attention weights that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MvAttention {
    pub fused: FeatureToken,
    pub alpha: Vec<f64>,
}

/// Softmax over `omega[m] * <q, keys[m]>` followed by the weighted sum of
/// `values`.
pub fn mv_attention(
    query: &[f64],
    keys: &[FeatureToken],
    values: &[FeatureToken],
    omega: &[f64],
) -> Result<MvAttention> {
    let m = keys.len();
    ensure(m >= 1, || "need at least one view".into())?;
    ensure(values.len() == m && omega.len() == m, || {
        format!("got {m} keys, {} values and {} weights", values.len(), omega.len())
    })?;
    let d = query.len();
    ensure_finite(query, "query")?;
    for (i, (k, v)) in keys.iter().zip(values).enumerate() {
        ensure(k.len() == d && v.len() == d, || {
            format!("view {i}: token dimension differs from query dimension {d}")
        })?;
        ensure_finite(k, "key")?;
        ensure_finite(v, "value")?;
    }
    ensure(omega.iter().all(|w| w.is_finite() && *w > 0.0), || {
        "view weights must be positive and finite".into()
    })?;

    let scores: Vec<f64> = keys.iter().zip(omega).map(|(k, w)| w * dot(query, k)).collect();
    let alpha = softmax(&scores);
    let mut fused = vec![0.0; d];
    for (a, v) in alpha.iter().zip(values) {
        for (f, x) in fused.iter_mut().zip(v) {
            *f += a * x;
        }
    }
    Ok(MvAttention { fused, alpha })
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Adaptive layer-instance normalization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaLinParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    rho: f64,
    pub eps: f64,
}

impl AdaLinParams {
    pub const DEFAULT_RHO: f64 = 0.9;
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// Unit scale, zero shift, default blend.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            rho: Self::DEFAULT_RHO,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn new(gamma: Vec<f64>, beta: Vec<f64>, rho: f64, eps: f64) -> Result<Self> {
        ensure(gamma.len() == beta.len(), || "gamma and beta lengths differ".into())?;
        ensure(eps > 0.0 && eps.is_finite(), || "eps must be positive".into())?;
        ensure(rho.is_finite(), || "rho must be finite".into())?;
        Ok(Self {
            gamma,
            beta,
            rho: rho.clamp(0.0, 1.0),
            eps,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho.clamp(0.0, 1.0);
        self
    }
}

/// `gamma * (rho * instance_norm(x) + (1 - rho) * layer_norm(x)) + beta`.
///
/// Instance statistics are per channel over the spatial plane, layer
/// statistics over the whole tensor; both use the population variance.
pub fn adalin(x: &Frame, params: &AdaLinParams) -> Result<Frame> {
    let c = x.channels();
    ensure(params.gamma.len() == c, || {
        format!("AdaLIN has {} channels, input has {c}", params.gamma.len())
    })?;
    ensure(params.eps > 0.0, || "eps must be positive".into())?;
    ensure_finite(x.data(), "adalin input")?;

    let (layer_mean, layer_var) = mean_var(x.data());
    let layer_scale = 1.0 / (layer_var + params.eps).sqrt();
    let rho = params.rho;
    let mut out = x.clone();
    for ch in 0..c {
        let (mean, var) = mean_var(x.channel(ch));
        let inst_scale = 1.0 / (var + params.eps).sqrt();
        let (g, b) = (params.gamma[ch], params.beta[ch]);
        for (o, &v) in out.channel_mut(ch).iter_mut().zip(x.channel(ch)) {
            let a_in = (v - mean) * inst_scale;
            let a_ln = (v - layer_mean) * layer_scale;
            *o = g * (rho * a_in + (1.0 - rho) * a_ln) + b;
        }
    }
    Ok(out)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Projection weights for multi-head scaled dot-product attention. Each
/// matrix is `d x d` and acts on row tokens (`token * W`).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadParams {
    heads: usize,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl MultiHeadParams {
    pub fn new(heads: usize, wq: Matrix, wk: Matrix, wv: Matrix, wo: Matrix) -> Result<Self> {
        let d = wq.rows();
        ensure(heads >= 1, || "heads must be positive".into())?;
        ensure(d % heads == 0, || {
            format!("model dimension {d} is not divisible by {heads} heads")
        })?;
        for w in [&wq, &wk, &wv, &wo] {
            ensure(w.rows() == d && w.cols() == d, || {
                "projection matrices must all be d x d".into()
            })?;
        }
        Ok(Self { heads, wq, wk, wv, wo })
    }

    pub fn identity(d: usize, heads: usize) -> Result<Self> {
        let i = Matrix::identity(d);
        Self::new(heads, i.clone(), i.clone(), i.clone(), i)
    }

    /// Gaussian weights with variance `1/d`, drawn from `seed`.
    pub fn seeded(d: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let mut draw = || {
            let data = (0..d * d).map(|_| rng.normal() * scale).collect();
            Matrix::from_row_major(d, d, data)
        };
        let (wq, wk, wv, wo) = (draw(), draw(), draw(), draw());
        Self::new(heads, wq, wk, wv, wo)
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }
}

/// Multi-head cross-attention of `queries` over `context`.
pub fn cross_attend(
    queries: &[FeatureToken],
    context: &[FeatureToken],
    params: &MultiHeadParams,
) -> Result<Vec<FeatureToken>> {
    cross_attend_weighted(queries, context, None, params)
}

/// Cross-attention where the score against context token `i` is multiplied
/// by `key_weights[i]`, the per-view importance of the token's source view.
pub fn cross_attend_weighted(
    queries: &[FeatureToken],
    context: &[FeatureToken],
    key_weights: Option<&[f64]>,
    params: &MultiHeadParams,
) -> Result<Vec<FeatureToken>> {
    let d = params.dim();
    let heads = params.heads;
    ensure(d % heads == 0, || {
        format!("model dimension {d} is not divisible by {heads} heads")
    })?;
    ensure(!context.is_empty(), || "context must hold at least one token".into())?;
    for tok in queries.iter().chain(context) {
        ensure(tok.len() == d, || format!("token dimension {} != {d}", tok.len()))?;
        ensure_finite(tok, "token")?;
    }
    if let Some(w) = key_weights {
        ensure(w.len() == context.len(), || "one key weight per context token".into())?;
        ensure(w.iter().all(|x| x.is_finite() && *x > 0.0), || {
            "key weights must be positive".into()
        })?;
    }

    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let q: Vec<Vec<f64>> = queries.iter().map(|t| params.wq.project(t)).collect();
    let k: Vec<Vec<f64>> = context.iter().map(|t| params.wk.project(t)).collect();
    let v: Vec<Vec<f64>> = context.iter().map(|t| params.wv.project(t)).collect();

    let mut out = Vec::with_capacity(queries.len());
    for qi in &q {
        let mut concat = vec![0.0; d];
        for h in 0..heads {
            let span = h * head_dim..(h + 1) * head_dim;
            let scores: Vec<f64> = k
                .iter()
                .enumerate()
                .map(|(j, kj)| {
                    let w = key_weights.map_or(1.0, |w| w[j]);
                    w * scale * dot(&qi[span.clone()], &kj[span.clone()])
                })
                .collect();
            let attn = softmax(&scores);
            for (a, vj) in attn.iter().zip(&v) {
                for (o, x) in concat[span.clone()].iter_mut().zip(&vj[span.clone()]) {
                    *o += a * x;
                }
            }
        }
        out.push(params.wo.project(&concat));
    }
    if out.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("cross-attention produced non-finite output"));
    }
    Ok(out)
}

/// Multi-view attention block: self-attention over the main-view tokens,
/// AdaLIN on the result, then cross-attention against every view's tokens
/// with scores scaled by the view weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MvAttentionBlock {
    pub self_attention: MultiHeadParams,
    pub norm: AdaLinParams,
    pub cross_attention: MultiHeadParams,
}

impl MvAttentionBlock {
    pub fn seeded(d: usize, heads: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            self_attention: MultiHeadParams::seeded(d, heads, crate::rng::derive_seed(seed, &[0]))?,
            norm: AdaLinParams::identity(d),
            cross_attention: MultiHeadParams::seeded(d, heads, crate::rng::derive_seed(seed, &[1]))?,
        })
    }

    /// `main_tokens` is `n x d`; `view_tokens[m]` holds view `m`'s tokens and
    /// `omega[m]` its weight.
    pub fn forward(
        &self,
        main_tokens: &[FeatureToken],
        view_tokens: &[Vec<FeatureToken>],
        omega: &[f64],
    ) -> Result<Vec<FeatureToken>> {
        ensure(view_tokens.len() == omega.len(), || {
            "one weight per view is required".into()
        })?;
        ensure(!main_tokens.is_empty(), || "no main-view tokens".into())?;
        let d = self.self_attention.dim();
        let mixed = cross_attend(main_tokens, main_tokens, &self.self_attention)?;

        // Tokens become an n x 1 raster with d channels for normalization.
        let n = mixed.len();
        let mut raster = Frame::zeros(n, 1, d);
        for (i, tok) in mixed.iter().enumerate() {
            for (c, &v) in tok.iter().enumerate() {
                raster.set(c, i, 0, v);
            }
        }
        let normed = adalin(&raster, &self.norm)?;
        let queries: Vec<FeatureToken> = (0..n).map(|i| (0..d).map(|c| normed.get(c, i, 0)).collect()).collect();

        let mut context = Vec::new();
        let mut weights = Vec::new();
        for (tokens, &w) in view_tokens.iter().zip(omega) {
            for tok in tokens {
                context.push(tok.clone());
                weights.push(w);
            }
        }
        cross_attend_weighted(&queries, &context, Some(&weights), &self.cross_attention)
    }
}
