//! Alignment of temporal and multi-view attention maps.
//!
//! The energy `E(z) = ½‖z − A_temp z‖² + (λ/2)‖z − A_mv z‖²` is a convex
//! quadratic for any maps; when both maps have spectral norm at most one,
//! the blend `(A_temp + λ A_mv)/(1 + λ)` is nonexpansive as well.

use super::matrix::{norm, Matrix};
use crate::error::{ensure, ensure_finite, Result};
use crate::rng::SeededRng;

pub const DEFAULT_POWER_ITERS: usize = 100;

const ROW_SUM_TOL: f64 = 1e-12;
const NORM_MARGIN: f64 = 1e-6;
const START_VECTOR_SEED: u64 = 0x5EED_0A11_7E5A_u64;

/// Square attention map with an optional row-stochastic certification.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    matrix: Matrix,
    row_stochastic: bool,
}

impl AttentionMap {
    /// An uncertified `n x n` map.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        ensure(data.len() == n * n, || {
            format!("expected {} entries, got {}", n * n, data.len())
        })?;
        ensure_finite(&data, "attention map")?;
        Ok(Self {
            matrix: Matrix::from_row_major(n, n, data),
            row_stochastic: false,
        })
    }

    /// A map whose rows are checked to be probability vectors.
    pub fn row_stochastic(n: usize, data: Vec<f64>) -> Result<Self> {
        let mut map = Self::new(n, data)?;
        for r in 0..n {
            let row = map.matrix.row(r);
            ensure(row.iter().all(|v| *v >= 0.0), || {
                format!("row {r} has a negative entry")
            })?;
            let sum: f64 = row.iter().sum();
            ensure((sum - 1.0).abs() <= ROW_SUM_TOL, || format!("row {r} sums to {sum}"))?;
        }
        map.row_stochastic = true;
        Ok(map)
    }

    /// Row-wise softmax of a score matrix.
    pub fn from_scores(n: usize, scores: &[f64]) -> Result<Self> {
        ensure(scores.len() == n * n, || format!("expected {} scores", n * n))?;
        ensure_finite(scores, "scores")?;
        let data = scores.chunks(n).flat_map(super::block::softmax).collect();
        Self::row_stochastic(n, data)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Matrix::identity(n),
            row_stochastic: true,
        }
    }

    /// Random row-stochastic map: softmax of Gaussian scores with spread `temperature`.
    pub fn random(n: usize, temperature: f64, rng: &mut SeededRng) -> Self {
        let scores: Vec<f64> = (0..n * n).map(|_| temperature * rng.normal()).collect();
        Self::from_scores(n, &scores).expect("softmax rows are stochastic")
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_row_stochastic(&self) -> bool {
        self.row_stochastic
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.matrix.get(r, c)
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(z)
    }

    pub fn apply_transpose(&self, z: &[f64]) -> Vec<f64> {
        self.matrix.tr_mul_vec(z)
    }
}

fn check_shapes(z: &[f64], a_temp: &AttentionMap, a_mv: &AttentionMap, lambda: f64) -> Result<()> {
    let n = z.len();
    ensure(a_temp.size() == n && a_mv.size() == n, || {
        format!(
            "maps are {}x{} and {}x{}, vector has length {n}",
            a_temp.size(),
            a_temp.size(),
            a_mv.size(),
            a_mv.size()
        )
    })?;
    ensure(lambda >= 0.0 && lambda.is_finite(), || {
        "lambda must be nonnegative".into()
    })?;
    ensure_finite(z, "z")
}

fn residual(a: &AttentionMap, z: &[f64]) -> Vec<f64> {
    z.iter().zip(a.apply(z)).map(|(x, ax)| x - ax).collect()
}

/// `(I − A)ᵀ(I − A) z`.
fn normal_residual(a: &AttentionMap, z: &[f64]) -> Vec<f64> {
    let r = residual(a, z);
    r.iter().zip(a.apply_transpose(&r)).map(|(x, y)| x - y).collect()
}

pub fn alignment_energy(z: &[f64], a_temp: &AttentionMap, a_mv: &AttentionMap, lambda: f64) -> Result<f64> {
    check_shapes(z, a_temp, a_mv, lambda)?;
    let rt = norm(&residual(a_temp, z));
    let rm = norm(&residual(a_mv, z));
    Ok(0.5 * rt * rt + 0.5 * lambda * rm * rm)
}

/// `∇E(z) = (I−A_temp)ᵀ(I−A_temp) z + λ (I−A_mv)ᵀ(I−A_mv) z`.
pub fn alignment_gradient(z: &[f64], a_temp: &AttentionMap, a_mv: &AttentionMap, lambda: f64) -> Result<Vec<f64>> {
    check_shapes(z, a_temp, a_mv, lambda)?;
    let gt = normal_residual(a_temp, z);
    let gm = normal_residual(a_mv, z);
    Ok(gt.iter().zip(&gm).map(|(a, b)| a + lambda * b).collect())
}

/// One explicit gradient step `z − η ∇E(z)`.
pub fn alignment_step(
    z: &[f64],
    a_temp: &AttentionMap,
    a_mv: &AttentionMap,
    lambda: f64,
    eta: f64,
) -> Result<Vec<f64>> {
    ensure(eta > 0.0 && eta.is_finite(), || "eta must be positive".into())?;
    let g = alignment_gradient(z, a_temp, a_mv, lambda)?;
    Ok(z.iter().zip(&g).map(|(x, gi)| x - eta * gi).collect())
}

/// Default step `0.1 / (1 + λ)`, below `2/L` for nonexpansive maps.
pub fn default_eta(lambda: f64) -> f64 {
    0.1 / (1.0 + lambda)
}

/// `(A_temp + λ A_mv) / (1 + λ)`.
pub fn build_joint_attention(a_temp: &AttentionMap, a_mv: &AttentionMap, lambda: f64) -> Result<AttentionMap> {
    ensure(a_temp.size() == a_mv.size(), || {
        format!("map sizes differ: {} vs {}", a_temp.size(), a_mv.size())
    })?;
    ensure(lambda >= 0.0 && lambda.is_finite(), || {
        "lambda must be nonnegative".into()
    })?;
    let n = a_temp.size();
    let denom = 1.0 + lambda;
    let data = a_temp
        .matrix
        .data()
        .iter()
        .zip(a_mv.matrix.data())
        .map(|(t, m)| (t + lambda * m) / denom)
        .collect();
    Ok(AttentionMap {
        matrix: Matrix::from_row_major(n, n, data),
        row_stochastic: a_temp.row_stochastic && a_mv.row_stochastic,
    })
}

/// Largest singular value of `A` by power iteration on `AᵀA`.
///
/// Runs at least `power_iters` iterations from a fixed pseudo-random start
/// and keeps going (up to 100x) while the estimate still moves.
pub fn spectral_norm_estimate(a: &AttentionMap, power_iters: usize) -> f64 {
    let n = a.size();
    if n == 0 {
        return 0.0;
    }
    let mut rng = SeededRng::new(START_VECTOR_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| 0.5 + rng.uniform()).collect();
    let mut estimate = 0.0;
    let max_iters = power_iters.max(1) * 100;
    for it in 0..max_iters {
        let nv = norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let av = a.apply(&v);
        let next = norm(&av);
        v = a.apply_transpose(&av);
        let settled = (next - estimate).abs() <= 1e-15 * next;
        estimate = next;
        if it + 1 >= power_iters && settled {
            break;
        }
    }
    estimate
}

/// Rescale `A` so that its spectral norm does not exceed one (up to a 1e-6
/// margin): `A / max(1, ‖A‖₂ (1 + 1e-6))`.
pub fn project_nonexpansive(a: &AttentionMap, power_iters: usize) -> AttentionMap {
    let estimate = spectral_norm_estimate(a, power_iters);
    let divisor = (estimate * (1.0 + NORM_MARGIN)).max(1.0);
    if divisor == 1.0 {
        return a.clone();
    }
    AttentionMap {
        matrix: a.matrix.scaled(1.0 / divisor),
        row_stochastic: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn swap2() -> AttentionMap {
        AttentionMap::row_stochastic(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    fn exact_spectral_norm(a: &AttentionMap) -> f64 {
        let n = a.size();
        let m = DMatrix::from_row_slice(n, n, a.matrix().data());
        m.singular_values().max()
    }

    #[test]
    fn identity_maps_have_zero_energy_and_gradient() {
        let i = AttentionMap::identity(3);
        let z = [0.3, -1.0, 2.0];
        assert_eq!(alignment_energy(&z, &i, &i, 0.7).unwrap(), 0.0);
        assert_eq!(alignment_step(&z, &i, &i, 0.7, 0.1).unwrap(), z.to_vec());
    }

    #[test]
    fn zero_vector() {
        let mut rng = SeededRng::new(2);
        let a = AttentionMap::random(4, 1.0, &mut rng);
        let b = AttentionMap::random(4, 1.0, &mut rng);
        let z = [0.0; 4];
        assert_eq!(alignment_energy(&z, &a, &b, 2.0).unwrap(), 0.0);
        assert_eq!(alignment_step(&z, &a, &b, 2.0, 0.1).unwrap(), z.to_vec());
    }

    #[test]
    fn swap_energy_and_gradient() {
        let z = [1.0, 0.0];
        let e = alignment_energy(&z, &swap2(), &AttentionMap::identity(2), 0.0).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        let g = alignment_gradient(&z, &swap2(), &AttentionMap::identity(2), 0.0).unwrap();
        assert_eq!(g, vec![2.0, -2.0]);
        let step = alignment_step(&z, &swap2(), &AttentionMap::identity(2), 0.0, 0.25).unwrap();
        assert_eq!(step, vec![0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let z = [1.0, 2.0, 3.0];
        assert!(alignment_energy(&z, &swap2(), &swap2(), 1.0).is_err());
        assert!(build_joint_attention(&swap2(), &AttentionMap::identity(3), 1.0).is_err());
        assert!(alignment_energy(&[1.0, 2.0], &swap2(), &swap2(), -1.0).is_err());
    }

    #[test]
    fn joint_map_examples() {
        let mut rng = SeededRng::new(4);
        let a = AttentionMap::random(5, 1.0, &mut rng);
        let b = AttentionMap::random(5, 1.0, &mut rng);
        assert_eq!(build_joint_attention(&a, &b, 0.0).unwrap().matrix(), a.matrix());
        let same = build_joint_attention(&a, &a, 3.7).unwrap();
        for (x, y) in same.matrix().data().iter().zip(a.matrix().data()) {
            assert!((x - y).abs() < 1e-15);
        }
        let j = build_joint_attention(&AttentionMap::identity(2), &swap2(), 1.0).unwrap();
        assert_eq!(j.matrix().data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(j.is_row_stochastic());
    }

    #[test]
    fn row_stochastic_validation() {
        assert!(AttentionMap::row_stochastic(2, vec![0.5, 0.5, 0.2, 0.7]).is_err());
        assert!(AttentionMap::row_stochastic(2, vec![1.5, -0.5, 0.5, 0.5]).is_err());
        let map = AttentionMap::random(6, 2.0, &mut SeededRng::new(9));
        assert!(map.is_row_stochastic());
    }

    #[test]
    fn projection_examples() {
        let i = AttentionMap::identity(4);
        let pi = project_nonexpansive(&i, 50);
        for (x, y) in pi.matrix().data().iter().zip(i.matrix().data()) {
            assert!((x - y).abs() <= 1e-6);
        }
        let z = AttentionMap::new(3, vec![0.0; 9]).unwrap();
        assert_eq!(project_nonexpansive(&z, 50).matrix(), z.matrix());
        let d = AttentionMap::new(2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let p = project_nonexpansive(&d, 50);
        assert!((p.get(0, 0) - 1.0).abs() < 2e-6);
        assert!((p.get(1, 1) - 0.5).abs() < 1e-6);
        assert!(p.get(0, 0) <= 1.0);
    }

    #[test]
    fn power_iteration_matches_svd() {
        let mut rng = SeededRng::new(17);
        for n in 1..=16 {
            let data: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
            let a = AttentionMap::new(n, data).unwrap();
            let est = spectral_norm_estimate(&a, DEFAULT_POWER_ITERS);
            let exact = exact_spectral_norm(&a);
            assert!((est - exact).abs() <= 1e-9 * exact, "n={n}: {est} vs {exact}");
            let p = project_nonexpansive(&a, DEFAULT_POWER_ITERS);
            assert!(exact_spectral_norm(&p) <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn joint_fixed_point_is_stationary() {
        // Row-stochastic maps fix the constant vector.
        let mut rng = SeededRng::new(23);
        let a = AttentionMap::random(6, 1.5, &mut rng);
        let b = AttentionMap::random(6, 0.5, &mut rng);
        let z = vec![0.75; 6];
        let j = build_joint_attention(&a, &b, 2.0).unwrap();
        for (x, y) in j.apply(&z).iter().zip(&z) {
            assert!((x - y).abs() < 1e-14);
        }
        let g = alignment_gradient(&z, &a, &b, 2.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    fn random_pair(n: usize, seed: u64) -> (AttentionMap, AttentionMap, Vec<f64>, Vec<f64>) {
        let mut rng = SeededRng::new(seed);
        let a = project_nonexpansive(&AttentionMap::random(n, 2.0, &mut rng), DEFAULT_POWER_ITERS);
        let b = project_nonexpansive(&AttentionMap::random(n, 2.0, &mut rng), DEFAULT_POWER_ITERS);
        let x = (0..n).map(|_| 3.0 * rng.normal()).collect();
        let y = (0..n).map(|_| 3.0 * rng.normal()).collect();
        (a, b, x, y)
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(n in 1usize..10, seed in 0u64..10_000, lambda in 0.0f64..4.0) {
            let (a, b, x, _) = random_pair(n, seed);
            let g = alignment_gradient(&x, &a, &b, lambda).unwrap();
            let h = 1e-5;
            let mut fd = vec![0.0; n];
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                fd[i] = (alignment_energy(&xp, &a, &b, lambda).unwrap()
                    - alignment_energy(&xm, &a, &b, lambda).unwrap()) / (2.0 * h);
            }
            let diff: f64 = g.iter().zip(&fd).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let scale = norm(&g).max(norm(&fd)).max(1e-12);
            prop_assert!(diff / scale < 1e-6 || diff < 1e-9, "rel err {}", diff / scale);
        }

        #[test]
        fn energy_is_midpoint_convex(n in 1usize..17, seed in 0u64..10_000, lambda in 0.0f64..4.0) {
            let (a, b, x, y) = random_pair(n, seed);
            let mid: Vec<f64> = x.iter().zip(&y).map(|(p, q)| 0.5 * (p + q)).collect();
            let e = |z: &[f64]| alignment_energy(z, &a, &b, lambda).unwrap();
            prop_assert!(e(&mid) <= 0.5 * (e(&x) + e(&y)) + 1e-9);
        }

        #[test]
        fn joint_map_is_nonexpansive(n in 1usize..17, seed in 0u64..10_000, lambda in 0.0f64..4.0) {
            let (a, b, x, y) = random_pair(n, seed);
            let j = build_joint_attention(&a, &b, lambda).unwrap();
            let d: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
            prop_assert!(norm(&j.apply(&d)) <= norm(&d) * (1.0 + 1e-6));
        }

        #[test]
        fn small_steps_do_not_increase_energy(n in 1usize..17, seed in 0u64..10_000, lambda in 0.0f64..4.0) {
            let (a, b, x, _) = random_pair(n, seed);
            let e0 = alignment_energy(&x, &a, &b, lambda).unwrap();
            let next = alignment_step(&x, &a, &b, lambda, default_eta(lambda)).unwrap();
            let e1 = alignment_energy(&next, &a, &b, lambda).unwrap();
            prop_assert!(e1 <= e0 + 1e-12);
        }
    }
}
