//! Deterministic synthetic multi-view scenes.
//!
//! An articulated 13-joint figure moves with sinusoidal joint rotations, is
//! projected orthographically into `M` azimuthal views, rendered as one
//! Gaussian blob per joint channel (plus faint bones) and finally corrupted
//! with per-view Gaussian pixel noise.

use crate::error::{ensure, Result};
use crate::frame::{Frame, FrameSequence, Keypoint, KeypointSet};
use crate::rig::build_view_rig;
use crate::rng::{derive_seed, SeededRng};

pub const FULL_FIGURE_JOINTS: usize = 13;
pub const MIN_JOINTS: usize = 5;
pub const DEFAULT_BLOB_SIGMA: f64 = 1.5;
pub const BONE_INTENSITY: f64 = 0.2;
const BONE_WIDTH: f64 = 0.5;
/// Depth behind the root at which confidence bottoms out.
const DEPTH_RANGE: f64 = 0.5;
const MIN_CONFIDENCE: f64 = 0.3;
/// Figure height in scene units used to fit the image; rest pose spans head to knees.
const FIGURE_EXTENT: f64 = 1.3;
const FIGURE_MID_HEIGHT: f64 = 0.14;
const FILL_FRACTION: f64 = 0.7;

const MOTION_STREAM: u64 = 1;
const SIGMA_STREAM: u64 = 2;
const CORRUPTION_STREAM: u64 = 3;

/// Parent (`usize::MAX` for the root) and rest offset of each joint:
/// pelvis, chest, head, left arm ×3, right arm ×3, left leg ×2, right leg ×2.
const TEMPLATE: [(usize, [f64; 3]); FULL_FIGURE_JOINTS] = [
    (usize::MAX, [0.0, 0.0, 0.0]),
    (0, [0.0, 0.5, 0.0]),
    (1, [0.0, 0.25, 0.0]),
    (1, [0.2, 0.0, 0.0]),
    (3, [0.05, -0.28, 0.0]),
    (4, [0.0, -0.25, 0.0]),
    (1, [-0.2, 0.0, 0.0]),
    (6, [-0.05, -0.28, 0.0]),
    (7, [0.0, -0.25, 0.0]),
    (0, [0.12, -0.05, 0.0]),
    (9, [0.0, -0.42, 0.0]),
    (0, [-0.12, -0.05, 0.0]),
    (11, [0.0, -0.42, 0.0]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub frames: usize,
    pub joints: usize,
    pub views: usize,
    pub main_index: usize,
    pub height: usize,
    pub width: usize,
    pub blob_sigma: f64,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl SceneConfig {
    /// The desk-scale reference scene: 8 views, 8 frames, 32×32, 13 joints,
    /// per-view noise drawn uniformly from `[0.05, 0.2]`.
    pub fn desk(seed: u64) -> Self {
        let views = 8;
        Self {
            frames: 8,
            joints: FULL_FIGURE_JOINTS,
            views,
            main_index: 0,
            height: 32,
            width: 32,
            blob_sigma: DEFAULT_BLOB_SIGMA,
            sigmas: seeded_sigmas(views, 0.05, 0.2, seed),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.frames >= 2, || {
            format!("need at least 2 frames, got {}", self.frames)
        })?;
        ensure((MIN_JOINTS..=FULL_FIGURE_JOINTS).contains(&self.joints), || {
            format!(
                "joint count must lie in [{MIN_JOINTS}, {FULL_FIGURE_JOINTS}], got {}",
                self.joints
            )
        })?;
        ensure(self.views >= 1, || "need at least one view".into())?;
        ensure(self.main_index < self.views, || "main index out of range".into())?;
        ensure(self.height >= 1 && self.width >= 1, || {
            "image size must be positive".into()
        })?;
        ensure(self.blob_sigma > 0.0 && self.blob_sigma.is_finite(), || {
            "blob sigma must be positive".into()
        })?;
        ensure(self.sigmas.len() == self.views, || {
            format!("{} noise levels for {} views", self.sigmas.len(), self.views)
        })?;
        ensure(self.sigmas.iter().all(|s| s.is_finite() && *s >= 0.0), || {
            "noise levels must be nonnegative".into()
        })
    }
}

/// Per-view noise levels drawn uniformly from `[lo, hi]` under `seed`.
pub fn seeded_sigmas(views: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::stream(seed, &[SIGMA_STREAM]);
    (0..views).map(|_| rng.uniform_range(lo, hi)).collect()
}

/// Sinusoidal joint motion. Joint `j` rotates by
/// `amplitude · sin(velocity · t + phase)` about the x axis (index 0) and the
/// z axis (index 1); the root translates sideways the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionParams {
    pub amplitude: Vec<[f64; 2]>,
    pub angular_velocity: Vec<[f64; 2]>,
    pub phase: Vec<[f64; 2]>,
    pub sway_amplitude: f64,
    pub sway_velocity: f64,
    pub sway_phase: f64,
}

impl MotionParams {
    pub fn seeded(joints: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut amplitude = Vec::with_capacity(joints);
        let mut angular_velocity = Vec::with_capacity(joints);
        let mut phase = Vec::with_capacity(joints);
        for j in 0..joints {
            let (lo, hi) = match j {
                0 => (0.0, 0.0),
                1 | 2 => (0.05, 0.15),
                _ => (0.2, 0.6),
            };
            let mut pair = |lo: f64, hi: f64| [rng.uniform_range(lo, hi), rng.uniform_range(lo, hi)];
            amplitude.push(pair(lo, hi));
            angular_velocity.push(pair(0.3, 0.8));
            phase.push(pair(0.0, std::f64::consts::TAU));
        }
        Self {
            amplitude,
            angular_velocity,
            phase,
            sway_amplitude: rng.uniform_range(0.02, 0.08),
            sway_velocity: rng.uniform_range(0.2, 0.5),
            sway_phase: rng.uniform_range(0.0, std::f64::consts::TAU),
        }
    }

    /// Same pose at every timestamp.
    pub fn frozen(mut self) -> Self {
        for v in &mut self.angular_velocity {
            *v = [0.0, 0.0];
        }
        self.sway_velocity = 0.0;
        self
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Joint positions over time, `[t][j] = [x, y, z]` with y up and z toward
/// the azimuth-0 camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton3D {
    pub positions: Vec<Vec<[f64; 3]>>,
    pub bones: Vec<(usize, usize)>,
    pub motion: MotionParams,
}

impl Skeleton3D {
    pub fn animate(joints: usize, frames: usize, motion: MotionParams) -> Result<Self> {
        ensure((MIN_JOINTS..=FULL_FIGURE_JOINTS).contains(&joints), || {
            format!("joint count must lie in [{MIN_JOINTS}, {FULL_FIGURE_JOINTS}]")
        })?;
        ensure(motion.amplitude.len() >= joints, || {
            "motion covers too few joints".into()
        })?;
        let template = &TEMPLATE[..joints];
        let bones = (1..joints).map(|j| (template[j].0, j)).collect();
        let positions = (0..frames)
            .map(|t| {
                let tf = t as f64;
                let mut rot = vec![IDENTITY; joints];
                let mut pos = vec![[0.0; 3]; joints];
                let sway = motion.sway_amplitude * (motion.sway_velocity * tf + motion.sway_phase).sin();
                pos[0] = [sway, 0.0, 0.0];
                for j in 1..joints {
                    let (parent, offset) = template[j];
                    let angle = |k: usize| {
                        motion.amplitude[j][k] * (motion.angular_velocity[j][k] * tf + motion.phase[j][k]).sin()
                    };
                    let local = mat_mul(&rot_z(angle(1)), &rot_x(angle(0)));
                    rot[j] = mat_mul(&rot[parent], &local);
                    let d = mat_vec(&rot[j], &offset);
                    pos[j] = [0, 1, 2].map(|i| pos[parent][i] + d[i]);
                }
                pos
            })
            .collect();
        Ok(Self {
            positions,
            bones,
            motion,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.positions.len()
    }

    pub fn joint_count(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn bone_length(&self, t: usize, bone: usize) -> f64 {
        let (a, b) = self.bones[bone];
        let (pa, pb) = (self.positions[t][a], self.positions[t][b]);
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt()
    }
}

pub fn make_skeleton_sequence(config: &SceneConfig) -> Result<Skeleton3D> {
    config.validate()?;
    let motion = MotionParams::seeded(config.joints, derive_seed(config.seed, &[MOTION_STREAM]));
    Skeleton3D::animate(config.joints, config.frames, motion)
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// Orthographic keypoints of timestamp `t` seen from `azimuth` degrees.
///
/// The scene is rotated by `−azimuth` about the vertical axis, so the camera
/// at 180° sees the azimuth-0 image mirrored about the vertical center line.
/// Joints behind the root lose confidence linearly down to 0.3.
pub fn project_view(skeleton: &Skeleton3D, t: usize, azimuth: f64, height: usize, width: usize) -> KeypointSet {
    let (s, c) = sin_cos_deg(-azimuth);
    let scale = FILL_FRACTION * height.min(width) as f64 / FIGURE_EXTENT;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let pose = &skeleton.positions[t];
    let root_depth = -pose[0][0] * s + pose[0][2] * c;
    let points = pose
        .iter()
        .map(|p| {
            let x = p[0] * c + p[2] * s;
            let depth = -p[0] * s + p[2] * c - root_depth;
            let confidence = if depth >= 0.0 {
                1.0
            } else {
                (1.0 - (1.0 - MIN_CONFIDENCE) * (-depth / DEPTH_RANGE)).max(MIN_CONFIDENCE)
            };
            Keypoint {
                x: cx + scale * x,
                y: cy - scale * (p[1] - FIGURE_MID_HEIGHT),
                confidence,
            }
        })
        .collect();
    KeypointSet::new(points)
}

/// One Gaussian blob per keypoint channel, peak equal to the confidence.
pub fn render_frame(keypoints: &KeypointSet, height: usize, width: usize, blob_sigma: f64) -> Frame {
    render_figure(keypoints, &[], height, width, blob_sigma)
}

/// Blobs plus bone segments at 0.2 intensity drawn into both endpoint
/// channels; channels combine by maximum and are clamped to `[0, 1]`.
pub fn render_figure(
    keypoints: &KeypointSet,
    bones: &[(usize, usize)],
    height: usize,
    width: usize,
    blob_sigma: f64,
) -> Frame {
    let mut frame = Frame::zeros(height, width, keypoints.len());
    let inv2s2 = 1.0 / (2.0 * blob_sigma * blob_sigma);
    for (j, k) in keypoints.points.iter().enumerate() {
        let chan = frame.channel_mut(j);
        for (y, row) in chan.chunks_exact_mut(width).enumerate() {
            let dy = y as f64 - k.y;
            for (x, v) in row.iter_mut().enumerate() {
                let dx = x as f64 - k.x;
                *v = k.confidence * (-(dx * dx + dy * dy) * inv2s2).exp();
            }
        }
    }
    let inv_bone = 1.0 / (2.0 * BONE_WIDTH * BONE_WIDTH);
    for &(a, b) in bones {
        let (pa, pb) = (keypoints.points[a], keypoints.points[b]);
        for y in 0..height {
            for x in 0..width {
                let d2 = segment_distance_sq(x as f64, y as f64, (pa.x, pa.y), (pb.x, pb.y));
                let v = BONE_INTENSITY * (-d2 * inv_bone).exp();
                for j in [a, b] {
                    if v > frame.get(j, y, x) {
                        frame.set(j, y, x, v);
                    }
                }
            }
        }
    }
    frame.clamp_unit();
    frame
}

fn segment_distance_sq(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let u = if len2 > 0.0 {
        (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + u * vx, a.1 + u * vy);
    (px - qx).powi(2) + (py - qy).powi(2)
}

/// Add `N(0, sigmas[m]²)` noise to every pixel of view `m` and clamp to
/// `[0, 1]`. Frame `(t, m)` draws from its own stream `(seed, t, m)`.
pub fn corrupt_views(clean: &FrameSequence, sigmas: &[f64], seed: u64) -> Result<FrameSequence> {
    ensure(sigmas.len() == clean.view_count(), || {
        format!("{} noise levels for {} views", sigmas.len(), clean.view_count())
    })?;
    ensure(sigmas.iter().all(|s| s.is_finite() && *s >= 0.0), || {
        "noise levels must be nonnegative".into()
    })?;
    let mut out = clean.clone();
    for t in 0..clean.frame_count() {
        for (m, &sigma) in sigmas.iter().enumerate() {
            if sigma == 0.0 {
                continue;
            }
            let mut rng = SeededRng::stream(seed, &[CORRUPTION_STREAM, t as u64, m as u64]);
            for v in out.frame_mut(t, m).data_mut() {
                *v = (*v + sigma * rng.normal()).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// A generated scene: ground-truth keypoints, clean renders and the
/// corrupted sequence handed to the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub skeleton: Skeleton3D,
    /// `[t][m]`.
    pub keypoints: Vec<Vec<KeypointSet>>,
    pub clean: FrameSequence,
    pub corrupted: FrameSequence,
}

pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let rig = build_view_rig(config.views, config.main_index)?;
    let skeleton = make_skeleton_sequence(config)?;
    let keypoints: Vec<Vec<KeypointSet>> = (0..config.frames)
        .map(|t| {
            rig.azimuths()
                .iter()
                .map(|&az| project_view(&skeleton, t, az, config.height, config.width))
                .collect()
        })
        .collect();
    let frames = keypoints
        .iter()
        .map(|row| {
            row.iter()
                .map(|k| render_figure(k, &skeleton.bones, config.height, config.width, config.blob_sigma))
                .collect()
        })
        .collect();
    let clean = FrameSequence::new(rig, frames)?;
    let corrupted = corrupt_views(&clean, &config.sigmas, config.seed)?;
    Ok(Scene {
        config: config.clone(),
        skeleton,
        keypoints,
        clean,
        corrupted,
    })
}

/// Union of rendered foregrounds: 1 where any channel of any frame exceeds
/// `threshold`, else 0. Laid out `H × W`.
pub fn silhouette_mask(seq: &FrameSequence, threshold: f64) -> Vec<f64> {
    let (h, w, c) = seq.shape();
    let mut mask = vec![0.0; h * w];
    for f in seq.frames().iter().flatten() {
        for ch in 0..c {
            for (mk, &v) in mask.iter_mut().zip(f.channel(ch)) {
                if v > threshold {
                    *mk = 1.0;
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::extract_pose;

    #[test]
    fn frozen_motion_is_static() {
        let motion = MotionParams::seeded(13, 4).frozen();
        let sk = Skeleton3D::animate(13, 6, motion).unwrap();
        for t in 1..6 {
            assert_eq!(sk.positions[t], sk.positions[0]);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let cfg = SceneConfig::desk(9);
        assert_eq!(
            make_skeleton_sequence(&cfg).unwrap(),
            make_skeleton_sequence(&cfg).unwrap()
        );
        let other = SceneConfig::desk(10);
        assert_ne!(
            make_skeleton_sequence(&cfg).unwrap(),
            make_skeleton_sequence(&other).unwrap()
        );
    }

    #[test]
    fn bone_lengths_are_rigid() {
        let mut cfg = SceneConfig::desk(1);
        cfg.frames = 16;
        let sk = make_skeleton_sequence(&cfg).unwrap();
        assert_eq!(sk.bones.len(), 12);
        for b in 0..sk.bones.len() {
            let l0 = sk.bone_length(0, b);
            for t in 1..16 {
                assert!((sk.bone_length(t, b) - l0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bones_form_a_tree() {
        let sk = make_skeleton_sequence(&SceneConfig::desk(0)).unwrap();
        let mut has_parent = vec![false; sk.joint_count()];
        for &(p, c) in &sk.bones {
            assert!(p < c, "parents precede children");
            assert!(!has_parent[c]);
            has_parent[c] = true;
        }
        assert_eq!(has_parent.iter().filter(|x| **x).count(), sk.joint_count() - 1);
    }

    #[test]
    fn fewer_joints_truncate_the_template() {
        let mut cfg = SceneConfig::desk(0);
        cfg.joints = 5;
        let sk = make_skeleton_sequence(&cfg).unwrap();
        assert_eq!(sk.joint_count(), 5);
        cfg.joints = 4;
        assert!(make_skeleton_sequence(&cfg).is_err());
        cfg.joints = 14;
        assert!(make_skeleton_sequence(&cfg).is_err());
    }

    #[test]
    fn azimuth_zero_is_frontal() {
        let sk = make_skeleton_sequence(&SceneConfig::desk(2)).unwrap();
        let k = project_view(&sk, 3, 0.0, 32, 32);
        let scale = FILL_FRACTION * 32.0 / FIGURE_EXTENT;
        for (p, q) in k.points.iter().zip(&sk.positions[3]) {
            assert_eq!(p.x, 15.5 + scale * q[0]);
            assert_eq!(p.y, 15.5 - scale * (q[1] - FIGURE_MID_HEIGHT));
        }
    }

    #[test]
    fn azimuth_180_mirrors() {
        let sk = make_skeleton_sequence(&SceneConfig::desk(3)).unwrap();
        for t in 0..sk.frame_count() {
            let front = project_view(&sk, t, 0.0, 32, 40);
            let back = project_view(&sk, t, 180.0, 32, 40);
            for (f, b) in front.points.iter().zip(&back.points) {
                assert!((b.x - (39.0 - f.x)).abs() < 1e-9);
                assert_eq!(b.y, f.y);
            }
        }
    }

    #[test]
    fn azimuth_90_uses_depth() {
        let sk = make_skeleton_sequence(&SceneConfig::desk(5)).unwrap();
        let k = project_view(&sk, 2, 90.0, 32, 32);
        let scale = FILL_FRACTION * 32.0 / FIGURE_EXTENT;
        for (p, q) in k.points.iter().zip(&sk.positions[2]) {
            assert!((p.x - (15.5 - scale * q[2])).abs() < 1e-12);
        }
    }

    #[test]
    fn heights_agree_across_views() {
        let cfg = SceneConfig::desk(6);
        let scene = generate_scene(&cfg).unwrap();
        for row in &scene.keypoints {
            for k in row {
                for (a, b) in k.points.iter().zip(&row[0].points) {
                    assert!((a.y - b.y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn confidences_in_range() {
        let scene = generate_scene(&SceneConfig::desk(8)).unwrap();
        for k in scene.keypoints.iter().flatten() {
            for p in &k.points {
                assert!((MIN_CONFIDENCE..=1.0).contains(&p.confidence));
            }
        }
    }

    #[test]
    fn far_keypoint_renders_dark() {
        let k = KeypointSet::new(vec![Keypoint {
            x: -100.0,
            y: 500.0,
            confidence: 1.0,
        }]);
        let f = render_frame(&k, 16, 16, 1.5);
        assert!(f.data().iter().all(|v| *v < 1e-100));
    }

    #[test]
    fn identical_keypoints_identical_channels() {
        let p = Keypoint {
            x: 6.3,
            y: 4.1,
            confidence: 0.8,
        };
        let f = render_frame(&KeypointSet::new(vec![p, p]), 12, 14, 1.5);
        assert_eq!(f.channel(0), f.channel(1));
    }

    #[test]
    fn render_extract_round_trip() {
        let k = KeypointSet::new(vec![Keypoint {
            x: 10.5,
            y: 7.25,
            confidence: 1.0,
        }]);
        let f = render_frame(&k, 16, 24, 1.5);
        let e = extract_pose(&f);
        assert!((e.points[0].x - 10.5).abs() < 0.5 && (e.points[0].y - 7.25).abs() < 0.5);
        assert!((e.points[0].x - 10.5).abs() < 1e-3 && (e.points[0].y - 7.25).abs() < 1e-3);
    }

    #[test]
    fn render_extract_round_trip_on_scene_keypoints() {
        let scene = generate_scene(&SceneConfig::desk(11)).unwrap();
        for k in scene.keypoints.iter().flatten() {
            let f = render_frame(k, 32, 32, 1.5);
            let e = extract_pose(&f);
            for (p, q) in k.points.iter().zip(&e.points) {
                let inside = p.x >= 4.5 && p.x <= 26.5 && p.y >= 4.5 && p.y <= 26.5;
                if inside {
                    assert!((p.x - q.x).abs() < 0.5 && (p.y - q.y).abs() < 0.5);
                }
            }
        }
    }

    #[test]
    fn zero_noise_is_identity_and_noise_is_seeded() {
        let scene = generate_scene(&SceneConfig::desk(12)).unwrap();
        let same = corrupt_views(&scene.clean, &[0.0; 8], 1).unwrap();
        assert_eq!(same, scene.clean);
        let a = corrupt_views(&scene.clean, &[0.1; 8], 1).unwrap();
        let b = corrupt_views(&scene.clean, &[0.1; 8], 1).unwrap();
        let c = corrupt_views(&scene.clean, &[0.1; 8], 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(corrupt_views(&scene.clean, &[0.1; 3], 1).is_err());
    }

    #[test]
    fn noise_level_on_mid_gray() {
        let rig = build_view_rig(1, 0).unwrap();
        let gray = Frame::filled(100, 100, 10, 0.5);
        let seq = FrameSequence::new(rig, vec![vec![gray.clone()], vec![gray]]).unwrap();
        let noisy = corrupt_views(&seq, &[0.1], 77).unwrap();
        let xs: Vec<f64> = noisy.frame(0, 0).data().iter().map(|v| v - 0.5).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.097..=0.103).contains(&std), "std {std}");
    }

    #[test]
    fn corruption_raises_semantic_term() {
        for seed in 0..20 {
            let scene = generate_scene(&SceneConfig::desk(seed)).unwrap();
            let loss = |seq: &FrameSequence| -> f64 {
                (1..seq.frame_count())
                    .map(|t| crate::mvopt::loss_mv_semantic(seq, t, None).unwrap())
                    .sum()
            };
            assert!(loss(&scene.corrupted) > loss(&scene.clean), "seed {seed}");
        }
    }

    #[test]
    fn sin_cos_exact_quadrants() {
        assert_eq!(sin_cos_deg(-180.0), (0.0, -1.0));
        assert_eq!(sin_cos_deg(-90.0), (-1.0, 0.0));
        assert_eq!(sin_cos_deg(-270.0), (1.0, 0.0));
    }
}
