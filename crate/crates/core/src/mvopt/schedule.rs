use super::objective::{
    centroid_table, effective_omega, masked_sq_diff, mirror_sq, pixel_gradient, pose_sq, pose_term, pose_weight,
    temporal_term, CentroidTable, LossBreakdown,
};
use super::{Direction, LossTrace, MvOptConfig, TraceRecord};
use crate::error::{ensure, Error, Result};
use crate::frame::{Frame, FrameSequence};
use crate::pose::{Centroid, PoseExtractor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SchedulePosition {
    pub t: usize,
    pub view: usize,
    pub pass: usize,
}

/// The optimizer iterate with cached keypoints and per-timestamp loss terms.
#[derive(Debug, Clone)]
pub struct OptState {
    sequence: FrameSequence,
    config: MvOptConfig,
    extractor: PoseExtractor,
    table: CentroidTable,
    /// Unweighted per-timestamp terms; index 0 is unused.
    temporal: Vec<f64>,
    mv_pose: Vec<f64>,
    /// `‖mask ⊙ (f_t^(m) − f_t^(main))‖²` per view, main entry 0.
    semantic: Vec<Vec<f64>>,
    trace: LossTrace,
    position: SchedulePosition,
}

impl OptState {
    pub fn new(sequence: FrameSequence, config: MvOptConfig) -> Result<Self> {
        config.validate_for(&sequence)?;
        let extractor = PoseExtractor::default();
        let table = centroid_table(&sequence, &extractor);
        let n = sequence.frame_count();
        let mut state = Self {
            sequence,
            config,
            extractor,
            table,
            temporal: vec![0.0; n],
            mv_pose: vec![0.0; n],
            semantic: Vec::new(),
            trace: LossTrace::default(),
            position: SchedulePosition::default(),
        };
        let main = state.sequence.rig().main_index();
        state.semantic = (0..n)
            .map(|t| {
                (0..state.sequence.view_count())
                    .map(|m| state.semantic_entry(t, m, main))
                    .collect()
            })
            .collect();
        for t in 1..n {
            state.refresh_pose_terms(t);
        }
        let b = state.breakdown();
        state.trace.records.push(TraceRecord {
            update: 0,
            t: 0,
            view: main,
            pass: 0,
            f_total: b.total,
            l_temp: b.temporal,
            l_mv_pose: b.mv_pose,
            l_mv_semantic: b.mv_semantic,
            step: 0.0,
            backtracks: 0,
        });
        Ok(state)
    }

    pub fn sequence(&self) -> &FrameSequence {
        &self.sequence
    }

    pub fn config(&self) -> &MvOptConfig {
        &self.config
    }

    pub fn trace(&self) -> &LossTrace {
        &self.trace
    }

    pub fn position(&self) -> SchedulePosition {
        self.position
    }

    pub fn into_parts(self) -> (FrameSequence, LossTrace) {
        (self.sequence, self.trace)
    }

    /// Current objective, summed in a fixed order from the cached terms.
    pub fn breakdown(&self) -> LossBreakdown {
        let n = self.sequence.frame_count();
        let lt: f64 = self.temporal[1..n].iter().sum();
        let lp: f64 = self.mv_pose[1..n].iter().sum();
        let ls: f64 = (1..n).map(|t| self.weighted_semantic(t)).sum();
        LossBreakdown::from_terms(&self.config, lt, lp, ls)
    }

    /// Weighted semantic term of view `m` summed over `t ≥ 1`.
    pub fn view_semantic(&self, m: usize) -> f64 {
        let w = self.sequence.rig().omega_for_view(m).unwrap_or(0.0);
        (1..self.sequence.frame_count()).map(|t| w * self.semantic[t][m]).sum()
    }

    fn weighted_semantic(&self, t: usize) -> f64 {
        self.sequence
            .rig()
            .weighted_novel_views()
            .map(|(m, w)| w * self.semantic[t][m])
            .sum()
    }

    fn semantic_entry(&self, t: usize, m: usize, main: usize) -> f64 {
        if m == main {
            0.0
        } else {
            masked_sq_diff(
                self.sequence.frame(t, m),
                self.sequence.frame(t, main),
                self.config.semantic_mask.as_deref(),
            )
        }
    }

    fn opposite(&self, m: usize) -> usize {
        self.sequence
            .rig()
            .opposite(m)
            .expect("even rig checked by config validation")
    }

    fn refresh_pose_terms(&mut self, t: usize) {
        let main = self.sequence.rig().main_index();
        let width = self.sequence.shape().1;
        self.temporal[t] = temporal_term(&self.table, t, main);
        let opp = |m| self.opposite(m);
        let opp_ref = self
            .config
            .opposite_view_term
            .then_some(&opp as &dyn Fn(usize) -> usize);
        self.mv_pose[t] = pose_term(&self.table, t, opp_ref, width);
    }

    /// Every objective term that depends on block `(t, b)`, evaluated with
    /// `frame` and its centroids `cb` substituted for the block.
    fn local_energy(&self, t: usize, b: usize, frame: &Frame, cb: &[Centroid]) -> f64 {
        let cfg = &self.config;
        let seq = &self.sequence;
        let main = seq.rig().main_index();
        let width = seq.shape().1;
        let has_next = t + 1 < seq.frame_count();
        let wt = cfg.w2 + if b == main { cfg.w1 } else { 0.0 };
        let mut e = wt * pose_sq(cb, &self.table[t - 1][b]);
        if has_next {
            e += wt * pose_sq(&self.table[t + 1][b], cb);
        }
        if cfg.opposite_view_term {
            let o = &self.table[t][self.opposite(b)];
            e += cfg.w2 * (mirror_sq(cb, o, width) + mirror_sq(o, cb, width));
        }
        if cfg.w3 != 0.0 {
            let mask = cfg.semantic_mask.as_deref();
            if b == main {
                for (m, w) in seq.rig().weighted_novel_views() {
                    e += cfg.w3 * w * masked_sq_diff(seq.frame(t, m), frame, mask);
                }
            } else if let Some(w) = seq.rig().omega_for_view(b) {
                e += cfg.w3 * w * masked_sq_diff(frame, seq.frame(t, main), mask);
            }
        }
        e
    }

    fn direction(&self, t: usize, b: usize, grad: &[f64]) -> Vec<f64> {
        match self.config.direction {
            Direction::Gradient => grad.iter().map(|g| -g).collect(),
            Direction::GaussNewton => self.gauss_newton_direction(t, b, grad),
        }
    }

    /// Solve `(Λ + 2a JᵀJ) d = −g` channel by channel, where `Λ` is the
    /// diagonal pixel curvature and `J` the 2×N centroid Jacobian. The rank-2
    /// update is inverted with the Woodbury identity.
    fn gauss_newton_direction(&self, t: usize, b: usize, grad: &[f64]) -> Vec<f64> {
        let cfg = &self.config;
        let (h, w, _) = self.sequence.shape();
        let plane = h * w;
        let omega = effective_omega(&self.sequence, b);
        let lambda_inv: Vec<f64> = (0..plane)
            .map(|i| {
                let k = cfg.semantic_mask.as_ref().map_or(1.0, |m| m[i] * m[i]);
                1.0 / (2.0 * cfg.w3 * omega * k + cfg.damping)
            })
            .collect();
        let a = pose_weight(&self.sequence, cfg, t, b);
        let mut d = vec![0.0; grad.len()];
        for (c, cen) in self.table[t][b].iter().enumerate() {
            let g = &grad[c * plane..(c + 1) * plane];
            let out = &mut d[c * plane..(c + 1) * plane];
            for ((o, gi), li) in out.iter_mut().zip(g).zip(&lambda_inv) {
                *o = -gi * li;
            }
            if a == 0.0 {
                continue;
            }
            let inv = 1.0 / cen.denom;
            let (mut sxx, mut sxy, mut syy, mut rx, mut ry) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..plane {
                let jx = ((i % w) as f64 - cen.x) * inv;
                let jy = ((i / w) as f64 - cen.y) * inv;
                let li = lambda_inv[i];
                sxx += jx * jx * li;
                sxy += jx * jy * li;
                syy += jy * jy * li;
                rx += jx * out[i];
                ry += jy * out[i];
            }
            sxx += 0.5 / a;
            syy += 0.5 / a;
            let det = sxx * syy - sxy * sxy;
            if !(det.is_finite() && det > 0.0) {
                continue;
            }
            let zx = (syy * rx - sxy * ry) / det;
            let zy = (sxx * ry - sxy * rx) / det;
            for i in 0..plane {
                let jx = ((i % w) as f64 - cen.x) * inv;
                let jy = ((i / w) as f64 - cen.y) * inv;
                out[i] -= lambda_inv[i] * (jx * zx + jy * zy);
            }
        }
        d
    }

    fn check_block(&self, t: usize, view: usize) -> Result<()> {
        ensure(t >= 1 && t < self.sequence.frame_count(), || {
            format!("timestamp {t} outside 1..{}", self.sequence.frame_count())
        })?;
        ensure(view < self.sequence.view_count(), || {
            format!("view {view} out of range for {} views", self.sequence.view_count())
        })
    }

    fn block_update(&mut self, t: usize, b: usize, pass: usize) -> Result<TraceRecord> {
        self.check_block(t, b)?;
        self.position = SchedulePosition { t, view: b, pass };
        let grad = pixel_gradient(&self.table, &self.sequence, &self.config, &self.extractor, t, b, true);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure { t, view: b });
        }
        let mut accepted = None;
        let mut backtracks = 0;
        if grad.iter().any(|g| *g != 0.0) {
            let dir = self.direction(t, b, &grad);
            let dir_sq: f64 = dir.iter().map(|v| v * v).sum();
            let current = self.sequence.frame(t, b);
            let old = self.local_energy(t, b, current, &self.table[t][b]);
            let mut step = self.config.step_init;
            for k in 0..=self.config.max_backtracks {
                backtracks = k;
                let mut cand = current.clone();
                for (v, d) in cand.data_mut().iter_mut().zip(&dir) {
                    *v += step * d;
                }
                let cb = self.extractor.centroids(&cand);
                let new = self.local_energy(t, b, &cand, &cb);
                if new.is_finite() && new <= old - self.config.c_decrease * step * step * dir_sq {
                    accepted = Some((cand, cb, step));
                    break;
                }
                step *= self.config.shrink;
            }
        }
        let step = match accepted {
            Some((frame, cb, step)) => {
                *self.sequence.frame_mut(t, b) = frame;
                self.table[t][b] = cb;
                let main = self.sequence.rig().main_index();
                if b == main {
                    for m in 0..self.sequence.view_count() {
                        self.semantic[t][m] = self.semantic_entry(t, m, main);
                    }
                } else {
                    self.semantic[t][b] = self.semantic_entry(t, b, main);
                }
                self.refresh_pose_terms(t);
                if t + 1 < self.sequence.frame_count() {
                    self.refresh_pose_terms(t + 1);
                }
                step
            }
            None => 0.0,
        };
        let br = self.breakdown();
        let record = TraceRecord {
            update: self.trace.records.len(),
            t,
            view: b,
            pass,
            f_total: br.total,
            l_temp: br.temporal,
            l_mv_pose: br.mv_pose,
            l_mv_semantic: br.mv_semantic,
            step,
            backtracks,
        };
        self.trace.records.push(record);
        Ok(record)
    }

    /// One pass of the schedule: for each `t ≥ 1`, `passes_per_timestamp`
    /// rounds of main view then novel views front to back.
    pub fn sweep(&mut self) -> Result<()> {
        let main = self.sequence.rig().main_index();
        let order: Vec<usize> = std::iter::once(main)
            .chain(self.sequence.rig().novel_order().iter().copied())
            .collect();
        for t in 1..self.sequence.frame_count() {
            for pass in 0..self.config.passes_per_timestamp {
                for &m in &order {
                    self.block_update(t, m, pass)?;
                }
            }
        }
        Ok(())
    }
}

/// A single sufficient-decrease update of block `(t, view)`.
pub fn mvopt_block_update(state: &mut OptState, t: usize, view: usize) -> Result<TraceRecord> {
    let pass = state.position.pass;
    state.block_update(t, view, pass)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvOptOutput {
    /// The refined frames clamped to `[0, 1]`.
    pub refined: FrameSequence,
    pub trace: LossTrace,
}

/// Run the refinement schedule once over the whole sequence.
pub fn mvopt_run(seq: &FrameSequence, config: &MvOptConfig) -> Result<MvOptOutput> {
    let mut state = OptState::new(seq.clone(), config.clone())?;
    state.sweep()?;
    let (mut refined, trace) = state.into_parts();
    refined.clamp_unit();
    Ok(MvOptOutput { refined, trace })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergeReport {
    pub sweeps: usize,
    /// Objective decrease over the final sweep.
    pub last_decrease: f64,
    pub converged: bool,
}

/// Repeat schedule sweeps until one lowers the objective by less than `tol`
/// or `max_sweeps` is reached.
pub fn mvopt_converge(state: &mut OptState, tol: f64, max_sweeps: usize) -> Result<ConvergeReport> {
    let mut last_decrease = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let before = state.breakdown().total;
        state.sweep()?;
        last_decrease = before - state.breakdown().total;
        if last_decrease < tol {
            return Ok(ConvergeReport {
                sweeps: sweep,
                last_decrease,
                converged: true,
            });
        }
    }
    Ok(ConvergeReport {
        sweeps: max_sweeps,
        last_decrease,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockNorm {
    pub t: usize,
    pub view: usize,
    pub norm: f64,
}

/// `‖∇_{f_t^(m)} F‖` for every free block (`t ≥ 1`).
pub fn block_stationarity(state: &OptState) -> Vec<BlockNorm> {
    let seq = &state.sequence;
    (1..seq.frame_count())
        .flat_map(|t| (0..seq.view_count()).map(move |m| (t, m)))
        .map(|(t, m)| {
            let g = pixel_gradient(&state.table, seq, &state.config, &state.extractor, t, m, true);
            BlockNorm {
                t,
                view: m,
                norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{block_gradient, check_monotone, objective};
    use super::*;
    use crate::rig::build_view_rig;
    use crate::synth::{generate_scene, SceneConfig};

    fn small_scene(seed: u64) -> FrameSequence {
        let cfg = SceneConfig {
            frames: 3,
            views: 4,
            height: 16,
            width: 16,
            sigmas: vec![0.05, 0.1, 0.15, 0.2],
            ..SceneConfig::desk(seed)
        };
        generate_scene(&cfg).unwrap().corrupted
    }

    #[test]
    fn cached_terms_match_direct_objective() {
        let seq = small_scene(1);
        let cfg = MvOptConfig {
            passes_per_timestamp: 2,
            ..MvOptConfig::default()
        };
        let mut state = OptState::new(seq, cfg.clone()).unwrap();
        state.sweep().unwrap();
        let cached = state.breakdown();
        let direct = objective(state.sequence(), &cfg).unwrap();
        assert!((cached.total - direct.total).abs() < 1e-9 * direct.total.max(1.0));
        assert!((cached.mv_semantic - direct.mv_semantic).abs() < 1e-9 * direct.mv_semantic.max(1.0));
    }

    #[test]
    fn run_is_monotone_and_decreasing() {
        for direction in [Direction::Gradient, Direction::GaussNewton] {
            let cfg = MvOptConfig {
                direction,
                ..MvOptConfig::default()
            };
            let out = mvopt_run(&small_scene(2), &cfg).unwrap();
            let totals = out.trace.totals();
            assert!(check_monotone(&totals, 1e-9).unwrap().ok);
            assert!(totals.last().unwrap() < &totals[0]);
            assert_eq!(out.trace.len(), 1 + 2 * 8 * 4);
        }
    }

    #[test]
    fn global_minimum_is_a_fixed_point() {
        let f = Frame::filled(6, 6, 2, 0.25);
        let seq = FrameSequence::new(build_view_rig(3, 0).unwrap(), vec![vec![f; 3]; 3]).unwrap();
        let out = mvopt_run(&seq, &MvOptConfig::default()).unwrap();
        assert_eq!(out.refined, seq);
        assert!(out.trace.records.iter().all(|r| r.f_total == 0.0 && r.step == 0.0));
        let state = OptState::new(seq, MvOptConfig::default()).unwrap();
        assert!(block_stationarity(&state).iter().all(|b| b.norm == 0.0));
    }

    #[test]
    fn zero_passes_is_identity() {
        let seq = small_scene(3);
        let cfg = MvOptConfig {
            passes_per_timestamp: 0,
            ..MvOptConfig::default()
        };
        let out = mvopt_run(&seq, &cfg).unwrap();
        assert_eq!(out.refined, seq);
        assert_eq!(out.trace.len(), 1);
    }

    fn novel_only_problem() -> (FrameSequence, MvOptConfig) {
        let main = Frame::filled(3, 3, 1, 0.2);
        let novel = Frame::filled(3, 3, 1, 0.5);
        let seq = FrameSequence::new(
            build_view_rig(2, 0).unwrap(),
            vec![vec![main.clone(), novel.clone()], vec![main, novel]],
        )
        .unwrap();
        (
            seq,
            MvOptConfig {
                w1: 0.0,
                w2: 0.0,
                ..MvOptConfig::default()
            },
        )
    }

    #[test]
    fn single_update_lowers_semantic_term() {
        let (seq, cfg) = novel_only_problem();
        for direction in [Direction::Gradient, Direction::GaussNewton] {
            let cfg = MvOptConfig {
                direction,
                ..cfg.clone()
            };
            let mut state = OptState::new(seq.clone(), cfg).unwrap();
            let before = state.breakdown().mv_semantic;
            let r = mvopt_block_update(&mut state, 1, 1).unwrap();
            assert!(r.l_mv_semantic < before);
            assert!(r.step > 0.0);
        }
    }

    #[test]
    fn quadratic_block_gradient_norm_by_hand() {
        let (seq, cfg) = novel_only_problem();
        let state = OptState::new(seq, cfg).unwrap();
        let norms = block_stationarity(&state);
        let novel = norms.iter().find(|b| b.t == 1 && b.view == 1).unwrap();
        // 2 · w3 · ω · |0.5 − 0.2| on each of 9 pixels.
        let expected = 2.0 * 0.02 * 0.25 * 0.3 * 3.0;
        assert!((novel.norm - expected).abs() < 1e-12);
    }

    #[test]
    fn oversized_step_without_backtracking_is_a_no_op() {
        let (seq, cfg) = novel_only_problem();
        let cfg = MvOptConfig {
            direction: Direction::Gradient,
            step_init: 1e6,
            max_backtracks: 0,
            ..cfg
        };
        let mut state = OptState::new(seq.clone(), cfg).unwrap();
        let before = state.breakdown().total;
        let r = mvopt_block_update(&mut state, 1, 1).unwrap();
        assert_eq!(r.step, 0.0);
        assert_eq!(r.f_total, before);
        assert_eq!(state.sequence(), &seq);
    }

    #[test]
    fn zero_pose_weights_freeze_novel_blocks_without_semantics() {
        let seq = small_scene(4);
        let cfg = MvOptConfig {
            w2: 0.0,
            w3: 0.0,
            ..MvOptConfig::default()
        };
        let mut state = OptState::new(seq.clone(), cfg).unwrap();
        for m in 1..4 {
            let r = mvopt_block_update(&mut state, 1, m).unwrap();
            assert_eq!(r.step, 0.0);
        }
        assert_eq!(state.sequence(), &seq);
    }

    #[test]
    fn non_finite_pixels_fail_with_block_position() {
        let mut seq = small_scene(5);
        seq.frame_mut(1, 2).data_mut()[7] = f64::NAN;
        let mut state = OptState::new(seq, MvOptConfig::default()).unwrap();
        match mvopt_block_update(&mut state, 1, 2) {
            Err(Error::NumericalFailure { t: 1, view: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn block_updates_reject_fixed_frames() {
        let mut state = OptState::new(small_scene(6), MvOptConfig::default()).unwrap();
        assert!(mvopt_block_update(&mut state, 0, 0).is_err());
        assert!(mvopt_block_update(&mut state, 1, 9).is_err());
    }

    #[test]
    fn stationarity_matches_block_gradient() {
        let seq = small_scene(7);
        let cfg = MvOptConfig::default();
        let state = OptState::new(seq.clone(), cfg.clone()).unwrap();
        for b in block_stationarity(&state) {
            let g = block_gradient(&seq, &cfg, b.t, b.view).unwrap();
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_eq!(n, b.norm);
        }
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let seq = small_scene(8);
        let a = mvopt_run(&seq, &MvOptConfig::default()).unwrap();
        let b = mvopt_run(&seq, &MvOptConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
