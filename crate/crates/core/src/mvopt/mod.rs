//! Block-coordinate refinement of multi-view frame sequences.
//!
//! The objective couples every frame `f_t^(m)` for `t ≥ 1` through three
//! terms: temporal keypoint motion of the main view, temporal keypoint motion
//! of every view, and a weighted pixel difference between each novel view and
//! the main view at the same timestamp. Frames at `t = 0` are held fixed.
//! Blocks are refined one frame at a time with a sufficient-decrease line
//! search, so the objective never increases.

mod objective;
mod schedule;

pub use objective::{
    block_gradient, loss_mv_pose, loss_mv_semantic, loss_temporal, objective, total_loss, LossBreakdown,
};
pub use schedule::{
    block_stationarity, mvopt_block_update, mvopt_converge, mvopt_run, BlockNorm, ConvergeReport, MvOptOutput,
    OptState, SchedulePosition,
};

use crate::error::{ensure, invalid, Result};
use crate::frame::FrameSequence;

/// How a block update picks its search direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// Steepest descent, `d = −∇F`.
    #[default]
    Gradient,
    /// `d = −H⁻¹∇F` with `H` the block's Gauss-Newton curvature: the exact
    /// pixel-term Hessian plus the keypoint terms linearized through the
    /// centroid Jacobian. Much faster per sweep, and equally monotone.
    GaussNewton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvOptConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub passes_per_timestamp: usize,
    pub step_init: f64,
    pub shrink: f64,
    pub c_decrease: f64,
    pub max_backtracks: usize,
    /// Add a mirrored keypoint penalty between diametrically opposite views.
    pub opposite_view_term: bool,
    pub direction: Direction,
    /// Ridge added to the Gauss-Newton curvature.
    pub damping: f64,
    /// Per-pixel `H × W` weights for the semantic term; all ones when absent.
    pub semantic_mask: Option<Vec<f64>>,
}

impl Default for MvOptConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.1,
            w3: 0.02,
            passes_per_timestamp: 8,
            step_init: 0.5,
            shrink: 0.5,
            c_decrease: 1e-4,
            max_backtracks: 30,
            opposite_view_term: false,
            direction: Direction::Gradient,
            damping: 1e-6,
            semantic_mask: None,
        }
    }
}

impl MvOptConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            ensure(w.is_finite() && w >= 0.0, || {
                format!("{name} must be a nonnegative number")
            })?;
        }
        ensure(self.step_init.is_finite() && self.step_init > 0.0, || {
            "step_init must be positive".into()
        })?;
        ensure(self.shrink > 0.0 && self.shrink < 1.0, || {
            "shrink must lie in (0, 1)".into()
        })?;
        ensure(self.c_decrease.is_finite() && self.c_decrease > 0.0, || {
            "c_decrease must be positive".into()
        })?;
        ensure(self.damping.is_finite() && self.damping > 0.0, || {
            "damping must be positive".into()
        })?;
        if let Some(mask) = &self.semantic_mask {
            ensure(mask.iter().all(|v| v.is_finite()), || "mask must be finite".into())?;
        }
        Ok(())
    }

    pub(crate) fn validate_for(&self, seq: &FrameSequence) -> Result<()> {
        self.validate()?;
        let (h, w, _) = seq.shape();
        if let Some(mask) = &self.semantic_mask {
            ensure(mask.len() == h * w, || {
                format!("mask has {} entries, frames have {}", mask.len(), h * w)
            })?;
        }
        if self.opposite_view_term && seq.view_count() % 2 != 0 {
            return Err(invalid(format!(
                "the opposite-view term needs an even number of views, got {}",
                seq.view_count()
            )));
        }
        Ok(())
    }
}

/// One row of the loss trace. Record 0 describes the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub update: usize,
    pub t: usize,
    pub view: usize,
    pub pass: usize,
    pub f_total: f64,
    pub l_temp: f64,
    pub l_mv_pose: f64,
    pub l_mv_semantic: f64,
    /// Accepted step length; 0 when the block was left unchanged.
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<TraceRecord>,
}

impl LossTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f_total).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonotoneCheck {
    pub ok: bool,
    pub first_violation: Option<usize>,
}

pub const DEFAULT_MONOTONE_TOL: f64 = 1e-9;

/// `ok` iff `totals[k+1] ≤ totals[k] + tol` for every consecutive pair;
/// `first_violation` is the index `k+1` of the first offending entry.
/// `b <= a + tol`, false if either side is NaN.
pub fn within(a: f64, b: f64, tol: f64) -> bool {
    matches!(
        b.partial_cmp(&(a + tol)),
        Some(std::cmp::Ordering::Less | std::cmp::Ordering::Equal)
    )
}

pub fn check_monotone(totals: &[f64], tol: f64) -> Result<MonotoneCheck> {
    ensure(!totals.is_empty(), || "trace is empty".into())?;
    let first_violation = totals.windows(2).position(|w| !within(w[0], w[1], tol)).map(|k| k + 1);
    Ok(MonotoneCheck {
        ok: first_violation.is_none(),
        first_violation,
    })
}
