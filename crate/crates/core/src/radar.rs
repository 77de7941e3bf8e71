//! Transmit beampattern evaluation, least-squares pattern matching and
//! per-antenna power.

use crate::error::{check_dim, invalid, Result};
use crate::model::{steering_matrix, CMatrix};

/// Floor on the pattern scale; the matching problem requires α > 0.
pub const ALPHA_MIN: f64 = 1e-6;

/// Transmit power per grid angle, split by stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BeampatternProfile {
    pub angles: Vec<f64>,
    /// aᴴ(θ)(PPᴴ)a(θ) per angle.
    pub total: Vec<f64>,
    /// `per_stream[i][m]` = |aᴴ(θ_m) p_i|², stream 0 is the common one.
    pub per_stream: Vec<Vec<f64>>,
    /// α·P_d(θ_m), empty until [`BeampatternProfile::compare`] is called.
    pub desired_scaled: Vec<f64>,
    pub mse_sum: f64,
    pub mse_mean: f64,
}

impl BeampatternProfile {
    /// Attaches the scaled template and the matching error against it.
    pub fn compare(mut self, alpha: f64, desired: &[f64]) -> Result<Self> {
        check_dim("desired pattern", self.total.len(), desired.len())?;
        self.desired_scaled = desired.iter().map(|d| alpha * d).collect();
        self.mse_sum = squared_deviation(alpha, desired, &self.total);
        self.mse_mean = self.mse_sum / self.total.len().max(1) as f64;
        Ok(self)
    }

    pub fn num_streams(&self) -> usize {
        self.per_stream.len()
    }

    /// Index of the grid angle closest to `theta`.
    pub fn nearest_index(&self, theta: f64) -> usize {
        self.angles
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - theta).abs().total_cmp(&(b.1 - theta).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// |aᴴ(θ_m) p_i|² for every stream and angle, given precomputed steering
/// vectors (one per column). Returned stream-major.
pub fn stream_patterns(steering: &CMatrix, precoders: &CMatrix) -> Vec<Vec<f64>> {
    let projected = steering.adjoint() * precoders;
    projected
        .column_iter()
        .map(|col| col.iter().map(|z| z.norm_sqr()).collect())
        .collect()
}

/// Total pattern aᴴ(PPᴴ)a per angle from precomputed steering vectors.
pub fn total_pattern(steering: &CMatrix, precoders: &CMatrix) -> Vec<f64> {
    let projected = steering.adjoint() * precoders;
    projected
        .row_iter()
        .map(|row| row.iter().map(|z| z.norm_sqr()).sum())
        .collect()
}

pub fn beampattern(precoders: &CMatrix, grid: &[f64], spacing: f64) -> Result<BeampatternProfile> {
    if precoders.nrows() == 0 || precoders.ncols() == 0 {
        return Err(invalid("beampattern needs a non-empty precoder"));
    }
    let steering = steering_matrix(grid, precoders.nrows(), spacing);
    let per_stream = stream_patterns(&steering, precoders);
    let total = (0..grid.len())
        .map(|m| per_stream.iter().map(|s| s[m]).sum())
        .collect();
    Ok(BeampatternProfile {
        angles: grid.to_vec(),
        total,
        per_stream,
        desired_scaled: Vec::new(),
        mse_sum: 0.0,
        mse_mean: 0.0,
    })
}

/// Σ_m (α P_d(θ_m) − B(θ_m))².
pub fn squared_deviation(alpha: f64, desired: &[f64], pattern: &[f64]) -> f64 {
    desired
        .iter()
        .zip(pattern)
        .map(|(d, b)| (alpha * d - b).powi(2))
        .sum()
}

/// Grid-summed squared pattern error of `precoders` against α·P_d.
pub fn pattern_mse(
    alpha: f64,
    precoders: &CMatrix,
    desired: &[f64],
    grid: &[f64],
    spacing: f64,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid(format!("pattern scale must be positive, got {alpha}")));
    }
    check_dim("desired pattern", grid.len(), desired.len())?;
    let steering = steering_matrix(grid, precoders.nrows(), spacing);
    Ok(squared_deviation(alpha, desired, &total_pattern(&steering, precoders)))
}

/// Least-squares scale for a fixed pattern, clipped at [`ALPHA_MIN`].
pub fn optimal_scale_for_pattern(desired: &[f64], pattern: &[f64]) -> Result<f64> {
    let denom: f64 = desired.iter().map(|d| d * d).sum();
    if denom == 0.0 {
        return Err(invalid("desired pattern is identically zero"));
    }
    let num: f64 = desired.iter().zip(pattern).map(|(d, b)| d * b).sum();
    Ok((num / denom).max(ALPHA_MIN))
}

pub fn optimal_scale(precoders: &CMatrix, desired: &[f64], grid: &[f64], spacing: f64) -> Result<f64> {
    check_dim("desired pattern", grid.len(), desired.len())?;
    let steering = steering_matrix(grid, precoders.nrows(), spacing);
    optimal_scale_for_pattern(desired, &total_pattern(&steering, precoders))
}

/// Row-wise squared norms of the precoder, i.e. diag(PPᴴ).
pub fn per_antenna_power(precoders: &CMatrix) -> Vec<f64> {
    precoders.row_iter().map(|r| r.norm_squared()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{angle_grid_degrees, generate_channels, steering_vector};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    fn grid() -> Vec<f64> {
        angle_grid_degrees(-90.0, 90.0, 1.0).unwrap()
    }

    #[test]
    fn identity_covariance_is_flat() {
        let p = CMatrix::identity(2, 2);
        let prof = beampattern(&p, &grid(), 0.5).unwrap();
        for b in &prof.total {
            assert_abs_diff_eq!(*b, 2.0, epsilon = 1e-12);
        }
        let desired = vec![2.0; 181];
        assert_abs_diff_eq!(pattern_mse(1.0, &p, &desired, &grid(), 0.5).unwrap(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn steering_aligned_rank_one_peaks_at_nt_squared() {
        let a = steering_vector(0.0, 4, 0.5);
        let p = CMatrix::from_columns(&[a]);
        let prof = beampattern(&p, &[0.0], 0.5).unwrap();
        assert_abs_diff_eq!(prof.total[0], 16.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_precoder() {
        let p = CMatrix::zeros(3, 2);
        let prof = beampattern(&p, &grid(), 0.5).unwrap();
        assert!(prof.total.iter().all(|&b| b == 0.0));
        let desired: Vec<f64> = (0..181).map(|m| (m % 7) as f64).collect();
        let expected: f64 = desired.iter().map(|d| d * d).sum();
        assert_abs_diff_eq!(pattern_mse(1.0, &p, &desired, &grid(), 0.5).unwrap(), expected);
        assert!(pattern_mse(0.0, &p, &desired, &grid(), 0.5).is_err());
        assert_eq!(optimal_scale(&p, &desired, &grid(), 0.5).unwrap(), ALPHA_MIN);
        assert_eq!(per_antenna_power(&p), vec![0.0; 3]);
    }

    #[test]
    fn decomposition_sums_to_total() {
        let cols = generate_channels(3, 4, 5);
        let p = CMatrix::from_columns(&cols);
        let prof = beampattern(&p, &grid(), 0.5).unwrap();
        for m in 0..181 {
            let s: f64 = prof.per_stream.iter().map(|s| s[m]).sum();
            assert_abs_diff_eq!(s, prof.total[m], epsilon = 1e-10);
            assert!(prof.total[m] >= 0.0);
        }
    }

    #[test]
    fn scale_cases() {
        let cols = generate_channels(2, 4, 9);
        let p = CMatrix::from_columns(&cols);
        let g = grid();
        let steering = steering_matrix(&g, 4, 0.5);
        let b = total_pattern(&steering, &p);
        assert_abs_diff_eq!(optimal_scale_for_pattern(&b, &b).unwrap(), 1.0, epsilon = 1e-12);
        let doubled: Vec<f64> = b.iter().map(|x| 2.0 * x).collect();
        assert_abs_diff_eq!(optimal_scale_for_pattern(&doubled, &b).unwrap(), 0.5, epsilon = 1e-12);
        assert!(optimal_scale_for_pattern(&vec![0.0; 181], &b).is_err());
    }

    #[test]
    fn uniform_rows_meet_power_target() {
        let (pt, nt, k) = (100.0, 4usize, 2usize);
        let v = (pt / (nt * (k + 1)) as f64).sqrt();
        let p = DMatrix::from_element(nt, k + 1, Complex64::new(v, 0.0));
        for e in per_antenna_power(&p) {
            assert_abs_diff_eq!(e, pt / nt as f64, epsilon = 1e-12);
        }
        let col = DMatrix::from_fn(nt, 1, |n, _| Complex64::from_polar((pt / nt as f64).sqrt(), n as f64));
        for e in per_antenna_power(&col) {
            assert_abs_diff_eq!(e, pt / nt as f64, epsilon = 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_unitary(n: usize, seed: u64) -> CMatrix {
            let m = CMatrix::from_columns(&generate_channels(n, n, seed));
            m.qr().q()
        }

        proptest! {
            #[test]
            fn optimal_scale_beats_grid_search(seed in 0u64..300) {
                let p = CMatrix::from_columns(&generate_channels(3, 4, seed));
                let g = angle_grid_degrees(-90.0, 90.0, 3.0).unwrap();
                let desired = crate::model::desired_beampattern(&g, 0.0, 0.4, 1.0).unwrap();
                let alpha = optimal_scale(&p, &desired, &g, 0.5).unwrap();
                let best = pattern_mse(alpha, &p, &desired, &g, 0.5).unwrap();
                for i in 1..400 {
                    let a = i as f64 * 0.25;
                    prop_assert!(best <= pattern_mse(a, &p, &desired, &g, 0.5).unwrap() + 1e-9 * best.max(1.0));
                }
            }

            #[test]
            fn unitary_mixing_of_streams_is_invisible(seed in 0u64..300) {
                let p = CMatrix::from_columns(&generate_channels(3, 4, seed));
                let q = random_unitary(3, seed + 1000);
                let mixed = &p * q;
                let g = angle_grid_degrees(-90.0, 90.0, 5.0).unwrap();
                let a = beampattern(&p, &g, 0.5).unwrap();
                let b = beampattern(&mixed, &g, 0.5).unwrap();
                for (x, y) in a.total.iter().zip(&b.total) {
                    prop_assert!((x - y).abs() < 1e-9 * x.max(1.0));
                }
                for (x, y) in per_antenna_power(&p).iter().zip(per_antenna_power(&mixed)) {
                    prop_assert!((x - y).abs() < 1e-9 * x.max(1.0));
                }
                let desired = vec![1.0; g.len()];
                let ea = pattern_mse(1.3, &p, &desired, &g, 0.5).unwrap();
                let eb = pattern_mse(1.3, &mixed, &desired, &g, 0.5).unwrap();
                prop_assert!((ea - eb).abs() < 1e-8 * ea.max(1.0));
            }
        }
    }
}
