//! Rasters, multi-view sequences and keypoints.

use crate::error::{ensure, ensure_finite, Result};
use crate::rig::ViewRig;

/// A multi-channel raster, one channel per skeleton part.
///
/// Pixels are stored channel-planar: value `(c, y, x)` lives at
/// `(c * height + y) * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure(height > 0 && width > 0 && channels > 0, || {
            "frame dimensions must be positive".into()
        })?;
        ensure(data.len() == height * width * channels, || {
            format!(
                "frame data has {} values, expected {}",
                data.len(),
                height * width * channels
            )
        })?;
        ensure_finite(&data, "frame")?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// `T` timestamps of `M` views, indexed `[t][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    rig: ViewRig,
    frames: Vec<Vec<Frame>>,
}

impl FrameSequence {
    pub fn new(rig: ViewRig, frames: Vec<Vec<Frame>>) -> Result<Self> {
        ensure(frames.len() >= 2, || {
            format!("a sequence needs at least 2 timestamps, got {}", frames.len())
        })?;
        let reference = frames[0]
            .first()
            .ok_or_else(|| crate::error::invalid("timestamp 0 has no views"))?
            .clone();
        for (t, row) in frames.iter().enumerate() {
            ensure(row.len() == rig.view_count(), || {
                format!("timestamp {t} has {} views, rig has {}", row.len(), rig.view_count())
            })?;
            for (m, f) in row.iter().enumerate() {
                ensure(f.same_shape(&reference), || {
                    format!("frame [{t}][{m}] differs in shape from frame [0][0]")
                })?;
            }
        }
        Ok(Self { rig, frames })
    }

    pub fn rig(&self) -> &ViewRig {
        &self.rig
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn view_count(&self) -> usize {
        self.rig.view_count()
    }

    pub fn frame(&self, t: usize, m: usize) -> &Frame {
        &self.frames[t][m]
    }

    pub fn frame_mut(&mut self, t: usize, m: usize) -> &mut Frame {
        &mut self.frames[t][m]
    }

    pub fn frames(&self) -> &[Vec<Frame>] {
        &self.frames
    }

    /// Shape `(height, width, channels)` shared by every frame.
    pub fn shape(&self) -> (usize, usize, usize) {
        let f = &self.frames[0][0];
        (f.height(), f.width(), f.channels())
    }

    pub fn with_rig(mut self, rig: ViewRig) -> Result<Self> {
        ensure(rig.view_count() == self.rig.view_count(), || {
            "replacement rig has a different view count".into()
        })?;
        self.rig = rig;
        Ok(self)
    }

    pub fn clamp_unit(&mut self) {
        for f in self.frames.iter_mut().flatten() {
            f.clamp_unit();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointSet {
    pub points: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(points: Vec<Keypoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sum of squared coordinate differences to `other`.
    pub fn squared_distance(&self, other: &KeypointSet) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
            .sum()
    }
}
