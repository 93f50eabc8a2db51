//! Differentiable keypoint extraction by per-channel intensity centroids.

use crate::frame::{Frame, Keypoint, KeypointSet};

/// Blob mass at which confidence saturates: a unit-peak Gaussian of std 1.5 px.
pub const DEFAULT_REF_MASS: f64 = std::f64::consts::TAU * 1.5 * 1.5;
pub const DEFAULT_CENTROID_EPS: f64 = 1e-8;

/// Centroid of one channel together with its normalizing mass.
///
/// The centroid is `(Σ p·I + ε·center) / (Σ I + ε)`: the plain intensity
/// centroid for any channel with real mass, and the image center for an
/// empty one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
    /// `Σ I + ε`.
    pub denom: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseExtractor {
    pub eps: f64,
    pub ref_mass: f64,
}

impl Default for PoseExtractor {
    fn default() -> Self {
        Self {
            eps: DEFAULT_CENTROID_EPS,
            ref_mass: DEFAULT_REF_MASS,
        }
    }
}

impl PoseExtractor {
    pub fn centroids(&self, frame: &Frame) -> Vec<Centroid> {
        let (h, w) = (frame.height(), frame.width());
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        (0..frame.channels())
            .map(|c| {
                let plane = frame.channel(c);
                let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
                for (y, row) in plane.chunks_exact(w).enumerate() {
                    let mut row_mass = 0.0;
                    let mut row_x = 0.0;
                    for (x, &v) in row.iter().enumerate() {
                        row_mass += v;
                        row_x += x as f64 * v;
                    }
                    mass += row_mass;
                    sx += row_x;
                    sy += y as f64 * row_mass;
                }
                let denom = mass + self.eps;
                Centroid {
                    x: (sx + self.eps * cx) / denom,
                    y: (sy + self.eps * cy) / denom,
                    denom,
                }
            })
            .collect()
    }

    /// Keypoints with confidence `min(1, mass / ref_mass)`.
    pub fn extract(&self, frame: &Frame) -> KeypointSet {
        let points = self
            .centroids(frame)
            .into_iter()
            .map(|c| {
                let mass = c.denom - self.eps;
                Keypoint {
                    x: c.x,
                    y: c.y,
                    confidence: (mass / self.ref_mass).clamp(0.0, 1.0),
                }
            })
            .collect();
        KeypointSet::new(points)
    }

    /// Pull a per-keypoint gradient `(∂L/∂x_j, ∂L/∂y_j)` back to pixels,
    /// adding `(g_x (x − x_j) + g_y (y − y_j)) / denom_j` to `out` (laid out
    /// like the frame).
    pub fn pullback(&self, centroids: &[Centroid], grads: &[(f64, f64)], height: usize, width: usize, out: &mut [f64]) {
        let plane = height * width;
        for (c, (cen, &(gx, gy))) in centroids.iter().zip(grads).enumerate() {
            if gx == 0.0 && gy == 0.0 {
                continue;
            }
            let inv = 1.0 / cen.denom;
            let chan = &mut out[c * plane..(c + 1) * plane];
            for (y, row) in chan.chunks_exact_mut(width).enumerate() {
                let base = gy * (y as f64 - cen.y);
                for (x, o) in row.iter_mut().enumerate() {
                    *o += (gx * (x as f64 - cen.x) + base) * inv;
                }
            }
        }
    }
}

/// Convenience wrapper with the default extractor.
pub fn extract_pose(frame: &Frame) -> KeypointSet {
    PoseExtractor::default().extract(frame)
}
