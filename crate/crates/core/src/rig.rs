//! Azimuthal view rigs.

use crate::error::{ensure, Result};

/// Semantic weight given to the two novel views angularly closest to the main view.
pub const NEAR_VIEW_WEIGHT: f64 = 0.25;
/// Semantic weight given to every other novel view.
pub const FAR_VIEW_WEIGHT: f64 = 0.1;

/// `M` cameras evenly spaced in azimuth around the subject.
///
/// `omega_mv` is aligned with `novel_order`: `omega_mv[k]` weighs view
/// `novel_order[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRig {
    view_count: usize,
    azimuths: Vec<f64>,
    main_index: usize,
    novel_order: Vec<usize>,
    omega_mv: Vec<f64>,
}

/// Build the default rig: view `m` at `m * 360/M` degrees, novel views sorted
/// by circular distance to the main view (lower index first on ties), the two
/// nearest weighted 0.25 and the rest 0.1.
pub fn build_view_rig(view_count: usize, main_index: usize) -> Result<ViewRig> {
    ensure(view_count >= 1, || "view count must be at least 1".into())?;
    ensure(main_index < view_count, || {
        format!("main index {main_index} out of range for {view_count} views")
    })?;
    let step = 360.0 / view_count as f64;
    let azimuths = (0..view_count).map(|m| m as f64 * step).collect();
    let mut novel_order: Vec<usize> = (0..view_count).filter(|&m| m != main_index).collect();
    novel_order.sort_by_key(|&m| (step_distance(view_count, main_index, m), m));
    let omega_mv = (0..novel_order.len())
        .map(|k| if k < 2 { NEAR_VIEW_WEIGHT } else { FAR_VIEW_WEIGHT })
        .collect();
    Ok(ViewRig {
        view_count,
        azimuths,
        main_index,
        novel_order,
        omega_mv,
    })
}

/// Circular distance between views `a` and `b`, counted in rig steps.
fn step_distance(view_count: usize, a: usize, b: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(view_count - d)
}

/// Circular distance between two azimuths in degrees.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl ViewRig {
    /// Assemble a rig from explicit parts, checking every invariant.
    pub fn from_parts(
        azimuths: Vec<f64>,
        main_index: usize,
        novel_order: Vec<usize>,
        omega_mv: Vec<f64>,
    ) -> Result<Self> {
        let m = azimuths.len();
        ensure(m >= 1, || "rig needs at least one view".into())?;
        ensure(main_index < m, || format!("main index {main_index} out of range"))?;
        ensure(
            azimuths.iter().all(|a| a.is_finite() && (0.0..360.0).contains(a))
                && azimuths.windows(2).all(|w| w[0] < w[1]),
            || "azimuths must be strictly increasing in [0, 360)".into(),
        )?;
        let mut seen = vec![false; m];
        seen[main_index] = true;
        ensure(novel_order.len() == m - 1, || {
            format!("novel order must list {} views", m - 1)
        })?;
        for &v in &novel_order {
            ensure(v < m && !seen[v], || format!("novel order is not a permutation ({v})"))?;
            seen[v] = true;
        }
        ensure(omega_mv.len() == m - 1, || {
            format!("omega_mv must have {} entries", m - 1)
        })?;
        ensure(omega_mv.iter().all(|w| w.is_finite() && *w > 0.0), || {
            "omega_mv entries must be positive".into()
        })?;
        Ok(Self {
            view_count: m,
            azimuths,
            main_index,
            novel_order,
            omega_mv,
        })
    }

    pub fn view_count(&self) -> usize {
        self.view_count
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn main_index(&self) -> usize {
        self.main_index
    }

    pub fn novel_order(&self) -> &[usize] {
        &self.novel_order
    }

    pub fn omega_mv(&self) -> &[f64] {
        &self.omega_mv
    }

    /// Novel views paired with their semantic weights, front to back.
    pub fn weighted_novel_views(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.novel_order.iter().copied().zip(self.omega_mv.iter().copied())
    }

    /// Semantic weight of view `m`; `None` for the main view.
    pub fn omega_for_view(&self, m: usize) -> Option<f64> {
        self.weighted_novel_views().find(|&(v, _)| v == m).map(|(_, w)| w)
    }

    /// Replace the semantic weights, keeping the angular order.
    pub fn with_omega(&self, omega_mv: Vec<f64>) -> Result<Self> {
        Self::from_parts(
            self.azimuths.clone(),
            self.main_index,
            self.novel_order.clone(),
            omega_mv,
        )
    }

    /// The view diametrically opposite `m`, defined only for even rigs.
    pub fn opposite(&self, m: usize) -> Option<usize> {
        (self.view_count % 2 == 0 && m < self.view_count).then(|| (m + self.view_count / 2) % self.view_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_view_default_weights() {
        let rig = build_view_rig(8, 0).unwrap();
        assert_eq!(rig.novel_order(), &[1, 7, 2, 6, 3, 5, 4]);
        assert_eq!(rig.omega_mv(), &[0.25, 0.25, 0.1, 0.1, 0.1, 0.1, 0.1]);
        let sum: f64 = rig.omega_mv().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_view_rig_has_no_novel_views() {
        let rig = build_view_rig(1, 0).unwrap();
        assert!(rig.omega_mv().is_empty());
        assert!(rig.novel_order().is_empty());
        assert_eq!(rig.azimuths(), &[0.0]);
    }

    #[test]
    fn four_view_rig() {
        let rig = build_view_rig(4, 0).unwrap();
        assert_eq!(rig.azimuths(), &[0.0, 90.0, 180.0, 270.0]);
        assert_eq!(rig.novel_order(), &[1, 3, 2]);
        assert_eq!(rig.omega_mv(), &[0.25, 0.25, 0.1]);
    }

    #[test]
    fn small_rigs_weight_everything_near() {
        assert_eq!(build_view_rig(2, 1).unwrap().omega_mv(), &[0.25]);
        assert_eq!(build_view_rig(3, 0).unwrap().omega_mv(), &[0.25, 0.25]);
    }

    #[test]
    fn off_center_main_view() {
        let rig = build_view_rig(8, 3).unwrap();
        assert_eq!(rig.novel_order(), &[2, 4, 1, 5, 0, 6, 7]);
        assert_eq!(rig.omega_for_view(2), Some(0.25));
        assert_eq!(rig.omega_for_view(7), Some(0.1));
        assert_eq!(rig.omega_for_view(3), None);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_view_rig(0, 0).is_err());
        assert!(build_view_rig(4, 4).is_err());
    }

    #[test]
    fn opposite_views_are_180_degrees_apart() {
        for m_count in [2usize, 4, 6, 8, 12] {
            let rig = build_view_rig(m_count, 0).unwrap();
            for m in 0..m_count {
                let o = rig.opposite(m).unwrap();
                let d = angular_distance(rig.azimuths()[m], rig.azimuths()[o]);
                assert_eq!(d, 180.0);
            }
        }
        assert_eq!(build_view_rig(5, 0).unwrap().opposite(1), None);
    }

    #[test]
    fn deterministic_and_valid_for_many_sizes() {
        for m_count in 1..=24 {
            for main in 0..m_count {
                let a = build_view_rig(m_count, main).unwrap();
                let b = build_view_rig(m_count, main).unwrap();
                assert_eq!(a, b);
                let again = ViewRig::from_parts(
                    a.azimuths().to_vec(),
                    main,
                    a.novel_order().to_vec(),
                    a.omega_mv().to_vec(),
                );
                assert_eq!(again.unwrap(), a);
                let dists: Vec<f64> = a
                    .novel_order()
                    .iter()
                    .map(|&v| angular_distance(a.azimuths()[v], a.azimuths()[main]))
                    .collect();
                assert!(dists.windows(2).all(|w| w[0] <= w[1] + 1e-9));
            }
        }
    }
}
