use super::MvOptConfig;
use crate::error::{ensure, Result};
use crate::frame::{Frame, FrameSequence};
use crate::pose::{Centroid, PoseExtractor};

/// Per-view centroids of every frame, `[t][m][j]`.
pub(super) type CentroidTable = Vec<Vec<Vec<Centroid>>>;

pub(super) fn centroid_table(seq: &FrameSequence, ex: &PoseExtractor) -> CentroidTable {
    seq.frames()
        .iter()
        .map(|row| row.iter().map(|f| ex.centroids(f)).collect())
        .collect()
}

pub(super) fn pose_sq(a: &[Centroid], b: &[Centroid]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y))
        .sum()
}

/// `‖mirror(a) − b‖²` with `mirror(x, y) = (W − 1 − x, y)`.
pub(super) fn mirror_sq(a: &[Centroid], b: &[Centroid], width: usize) -> f64 {
    let edge = width as f64 - 1.0;
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let dx = edge - p.x - q.x;
            dx * dx + (p.y - q.y) * (p.y - q.y)
        })
        .sum()
}

pub(super) fn temporal_term(table: &CentroidTable, t: usize, main: usize) -> f64 {
    pose_sq(&table[t][main], &table[t - 1][main])
}

pub(super) fn pose_term(
    table: &CentroidTable,
    t: usize,
    opposite: Option<&dyn Fn(usize) -> usize>,
    width: usize,
) -> f64 {
    let views = table[t].len();
    let mut sum: f64 = (0..views).map(|m| pose_sq(&table[t][m], &table[t - 1][m])).sum();
    if let Some(opp) = opposite {
        sum += (0..views)
            .map(|m| mirror_sq(&table[t][m], &table[t][opp(m)], width))
            .sum::<f64>();
    }
    sum
}

/// Unweighted `‖mask ⊙ (a − b)‖²` over all channels.
pub(super) fn masked_sq_diff(a: &Frame, b: &Frame, mask: Option<&[f64]>) -> f64 {
    match mask {
        None => a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum(),
        Some(mask) => {
            let plane = a.plane_len();
            (0..a.channels())
                .map(|c| {
                    let r = c * plane..(c + 1) * plane;
                    a.data()[r.clone()]
                        .iter()
                        .zip(&b.data()[r])
                        .zip(mask)
                        .map(|((x, y), k)| k * k * (x - y) * (x - y))
                        .sum::<f64>()
                })
                .sum()
        }
    }
}

/// Semantic weight of a block: `ω_b` for a novel view, `Σ ω` for the main view.
pub(super) fn effective_omega(seq: &FrameSequence, view: usize) -> f64 {
    let rig = seq.rig();
    if view == rig.main_index() {
        rig.omega_mv().iter().sum()
    } else {
        rig.omega_for_view(view).unwrap_or(0.0)
    }
}

fn opposite_fn(seq: &FrameSequence) -> impl Fn(usize) -> usize + '_ {
    move |m| seq.rig().opposite(m).expect("even rig checked by config validation")
}

/// Gradient of the keypoint terms with respect to the keypoints of block
/// `(t, b)`. `include_next` adds the terms of timestamp `t + 1`.
pub(super) fn pose_grad(
    table: &CentroidTable,
    seq: &FrameSequence,
    cfg: &MvOptConfig,
    t: usize,
    b: usize,
    include_next: bool,
) -> Vec<(f64, f64)> {
    let main = seq.rig().main_index();
    let width = seq.shape().1;
    let wt = cfg.w2 + if b == main { cfg.w1 } else { 0.0 };
    let cur = &table[t][b];
    let mut g: Vec<(f64, f64)> = cur
        .iter()
        .zip(&table[t - 1][b])
        .map(|(p, q)| (2.0 * wt * (p.x - q.x), 2.0 * wt * (p.y - q.y)))
        .collect();
    if include_next && t + 1 < table.len() {
        for (gj, (p, q)) in g.iter_mut().zip(cur.iter().zip(&table[t + 1][b])) {
            gj.0 -= 2.0 * wt * (q.x - p.x);
            gj.1 -= 2.0 * wt * (q.y - p.y);
        }
    }
    if cfg.opposite_view_term {
        // Both mirrored pairs touching `b` have the same derivative.
        let o = opposite_fn(seq)(b);
        let edge = width as f64 - 1.0;
        for (gj, (p, q)) in g.iter_mut().zip(cur.iter().zip(&table[t][o])) {
            let rx = edge - p.x - q.x;
            let ry = p.y - q.y;
            gj.0 -= 4.0 * cfg.w2 * rx;
            gj.1 += 4.0 * cfg.w2 * ry;
        }
    }
    g
}

/// Sum of the weights of the keypoint terms touching block `(t, b)`; the
/// Gauss-Newton keypoint curvature of the block is `2a · JᵀJ`.
pub(super) fn pose_weight(seq: &FrameSequence, cfg: &MvOptConfig, t: usize, b: usize) -> f64 {
    let per_step = cfg.w2 + if b == seq.rig().main_index() { cfg.w1 } else { 0.0 };
    let steps = if t + 1 < seq.frame_count() { 2.0 } else { 1.0 };
    per_step * steps + if cfg.opposite_view_term { 2.0 * cfg.w2 } else { 0.0 }
}

/// Add the semantic-term gradient for block `(t, b)` into `out`.
pub(super) fn add_semantic_grad(seq: &FrameSequence, cfg: &MvOptConfig, t: usize, b: usize, out: &mut [f64]) {
    if cfg.w3 == 0.0 {
        return;
    }
    let rig = seq.rig();
    let main = rig.main_index();
    let mask = cfg.semantic_mask.as_deref();
    let mut accumulate = |other: usize, coef: f64| {
        let (fb, fo) = (seq.frame(t, b), seq.frame(t, other));
        let plane = fb.plane_len();
        for (i, (o, (x, y))) in out.iter_mut().zip(fb.data().iter().zip(fo.data())).enumerate() {
            let k = mask.map_or(1.0, |m| m[i % plane] * m[i % plane]);
            *o += coef * k * (x - y);
        }
    };
    if b == main {
        for (m, w) in rig.weighted_novel_views() {
            accumulate(m, 2.0 * cfg.w3 * w);
        }
    } else if let Some(w) = rig.omega_for_view(b) {
        accumulate(main, 2.0 * cfg.w3 * w);
    }
}

pub(super) fn pixel_gradient(
    table: &CentroidTable,
    seq: &FrameSequence,
    cfg: &MvOptConfig,
    ex: &PoseExtractor,
    t: usize,
    b: usize,
    include_next: bool,
) -> Vec<f64> {
    let (h, w, c) = seq.shape();
    let mut out = vec![0.0; h * w * c];
    let g = pose_grad(table, seq, cfg, t, b, include_next);
    ex.pullback(&table[t][b], &g, h, w, &mut out);
    add_semantic_grad(seq, cfg, t, b, &mut out);
    out
}

fn check_step(seq: &FrameSequence, t: usize) -> Result<()> {
    ensure(t >= 1 && t < seq.frame_count(), || {
        format!("timestamp {t} outside 1..{}", seq.frame_count())
    })
}

fn check_view(seq: &FrameSequence, view: usize) -> Result<()> {
    ensure(view < seq.view_count(), || {
        format!("view {view} out of range for {} views", seq.view_count())
    })
}

/// Main-view keypoint motion between `t − 1` and `t`.
pub fn loss_temporal(seq: &FrameSequence, t: usize) -> Result<f64> {
    check_step(seq, t)?;
    let ex = PoseExtractor::default();
    let main = seq.rig().main_index();
    Ok(pose_sq(
        &ex.centroids(seq.frame(t, main)),
        &ex.centroids(seq.frame(t - 1, main)),
    ))
}

/// Keypoint motion between `t − 1` and `t` summed over all views, plus the
/// mirrored opposite-view penalty when requested.
pub fn loss_mv_pose(seq: &FrameSequence, t: usize, opposite_view_term: bool) -> Result<f64> {
    check_step(seq, t)?;
    let cfg = MvOptConfig {
        opposite_view_term,
        ..MvOptConfig::default()
    };
    cfg.validate_for(seq)?;
    let table = centroid_table(seq, &PoseExtractor::default());
    let opp = opposite_fn(seq);
    Ok(pose_term(
        &table,
        t,
        opposite_view_term.then_some(&opp as &dyn Fn(usize) -> usize),
        seq.shape().1,
    ))
}

/// `Σ_novel ω_m ‖mask ⊙ (f_t^(m) − f_t^(main))‖²`.
pub fn loss_mv_semantic(seq: &FrameSequence, t: usize, mask: Option<&[f64]>) -> Result<f64> {
    ensure(t < seq.frame_count(), || format!("timestamp {t} out of range"))?;
    let (h, w, _) = seq.shape();
    if let Some(m) = mask {
        ensure(m.len() == h * w, || {
            format!("mask has {} entries, frames have {}", m.len(), h * w)
        })?;
    }
    let main = seq.frame(t, seq.rig().main_index());
    Ok(seq
        .rig()
        .weighted_novel_views()
        .map(|(m, omega)| omega * masked_sq_diff(seq.frame(t, m), main, mask))
        .sum())
}

/// Unweighted loss components and the weighted total over every `t ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub temporal: f64,
    pub mv_pose: f64,
    pub mv_semantic: f64,
}

impl LossBreakdown {
    pub(super) fn from_terms(cfg: &MvOptConfig, temporal: f64, mv_pose: f64, mv_semantic: f64) -> Self {
        Self {
            total: cfg.w1 * temporal + cfg.w2 * mv_pose + cfg.w3 * mv_semantic,
            temporal,
            mv_pose,
            mv_semantic,
        }
    }
}

/// The full objective `Σ_{t ≥ 1} (w1 L_temp + w2 L_mvP + w3 L_mvS)`.
pub fn objective(seq: &FrameSequence, cfg: &MvOptConfig) -> Result<LossBreakdown> {
    cfg.validate_for(seq)?;
    let table = centroid_table(seq, &PoseExtractor::default());
    let main = seq.rig().main_index();
    let opp = opposite_fn(seq);
    let opp_ref = cfg.opposite_view_term.then_some(&opp as &dyn Fn(usize) -> usize);
    let (mut lt, mut lp, mut ls) = (0.0, 0.0, 0.0);
    for t in 1..seq.frame_count() {
        lt += temporal_term(&table, t, main);
        lp += pose_term(&table, t, opp_ref, seq.shape().1);
        ls += loss_mv_semantic(seq, t, cfg.semantic_mask.as_deref())?;
    }
    Ok(LossBreakdown::from_terms(cfg, lt, lp, ls))
}

/// The objective restricted to timestamp `t` and its gradient with respect to
/// the pixels of frame `f_t^(view)`.
pub fn total_loss(seq: &FrameSequence, t: usize, cfg: &MvOptConfig, view: usize) -> Result<(f64, Vec<f64>)> {
    check_step(seq, t)?;
    check_view(seq, view)?;
    cfg.validate_for(seq)?;
    let ex = PoseExtractor::default();
    let table = centroid_table(seq, &ex);
    let opp = opposite_fn(seq);
    let opp_ref = cfg.opposite_view_term.then_some(&opp as &dyn Fn(usize) -> usize);
    let f = cfg.w1 * temporal_term(&table, t, seq.rig().main_index())
        + cfg.w2 * pose_term(&table, t, opp_ref, seq.shape().1)
        + cfg.w3 * loss_mv_semantic(seq, t, cfg.semantic_mask.as_deref())?;
    let grad = pixel_gradient(&table, seq, cfg, &ex, t, view, false);
    Ok((f, grad))
}

/// Gradient of the full objective with respect to frame `f_t^(view)`, `t ≥ 1`.
pub fn block_gradient(seq: &FrameSequence, cfg: &MvOptConfig, t: usize, view: usize) -> Result<Vec<f64>> {
    check_step(seq, t)?;
    check_view(seq, view)?;
    cfg.validate_for(seq)?;
    let ex = PoseExtractor::default();
    let table = centroid_table(seq, &ex);
    Ok(pixel_gradient(&table, seq, cfg, &ex, t, view, true))
}
