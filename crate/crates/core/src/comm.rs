//! Rate-splitting link metrics: SINRs, rates, common-rate split and WSR.
//!
//! Stream layout follows [`PrecoderSolution`](crate::PrecoderSolution):
//! column 0 of the precoder matrix carries the common stream and column
//! `k + 1` the private stream of user `k` (users are 0-based here).

use crate::error::{check_dim, invalid, Result};
use crate::model::{CMatrix, CVector};

/// Slack allowed on Σ C_k ≤ R_c before a report is flagged infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// |h_kᴴ p_i|² for every stream i (common first).
pub fn stream_gains(precoders: &CMatrix, h: &CVector) -> Result<Vec<f64>> {
    check_dim("channel length vs precoder rows", precoders.nrows(), h.len())?;
    Ok(precoders
        .column_iter()
        .map(|p| h.dotc(&p).norm_sqr())
        .collect())
}

/// SINR of the common stream at a user, all private streams treated as noise.
pub fn sinr_common(precoders: &CMatrix, h: &CVector, noise_power: f64) -> Result<f64> {
    if precoders.ncols() < 2 {
        return Err(invalid("precoder needs a common and at least one private column"));
    }
    let gains = stream_gains(precoders, h)?;
    let interference: f64 = gains[1..].iter().sum();
    Ok(gains[0] / (interference + noise_power))
}

/// SINR of user `user`'s private stream after the common stream is removed.
pub fn sinr_private(precoders: &CMatrix, h: &CVector, user: usize, noise_power: f64) -> Result<f64> {
    let streams = precoders.ncols();
    if user + 1 >= streams {
        return Err(invalid(format!(
            "user index {user} out of range for {} private streams",
            streams.saturating_sub(1)
        )));
    }
    let gains = stream_gains(precoders, h)?;
    let interference: f64 = gains[1..]
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != user)
        .map(|(_, g)| g)
        .sum();
    Ok(gains[user + 1] / (interference + noise_power))
}

pub fn rate_bits(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// Per-user common-stream rates R_{c,k}.
pub fn common_stream_rates(precoders: &CMatrix, channels: &[CVector], noise_power: f64) -> Result<Vec<f64>> {
    channels
        .iter()
        .map(|h| sinr_common(precoders, h, noise_power).map(rate_bits))
        .collect()
}

/// R_c = min_k R_{c,k}: the rate every user can decode the common stream at.
pub fn common_rate(precoders: &CMatrix, channels: &[CVector], noise_power: f64) -> Result<f64> {
    if channels.is_empty() {
        return Err(invalid("common rate needs at least one user"));
    }
    Ok(common_stream_rates(precoders, channels, noise_power)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

pub fn private_rates(precoders: &CMatrix, channels: &[CVector], noise_power: f64) -> Result<Vec<f64>> {
    channels
        .iter()
        .enumerate()
        .map(|(k, h)| sinr_private(precoders, h, k, noise_power).map(rate_bits))
        .collect()
}

/// Per-user rate breakdown for one precoder design.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub private_rates: Vec<f64>,
    pub common_portions: Vec<f64>,
    pub common_rate: f64,
    pub weighted_sum_rate: f64,
    /// Σ C_k ≤ R_c holds within [`FEASIBILITY_TOL`].
    pub feasible: bool,
}

impl RateReport {
    pub fn from_parts(
        private_rates: Vec<f64>,
        common_portions: Vec<f64>,
        common_rate: f64,
        weights: &[f64],
    ) -> Self {
        let weighted_sum_rate = weights
            .iter()
            .zip(private_rates.iter().zip(&common_portions))
            .map(|(mu, (r, c))| mu * (c + r))
            .sum();
        let feasible = common_portions.iter().sum::<f64>() <= common_rate + FEASIBILITY_TOL;
        Self {
            private_rates,
            common_portions,
            common_rate,
            weighted_sum_rate,
            feasible,
        }
    }

    pub fn num_users(&self) -> usize {
        self.private_rates.len()
    }

    /// Header matching [`RateReport::csv_fields`]: R_1..R_K, C_1..C_K, WSR.
    pub fn csv_header(num_users: usize) -> Vec<String> {
        (1..=num_users)
            .map(|k| format!("R_{k}"))
            .chain((1..=num_users).map(|k| format!("C_{k}")))
            .chain(std::iter::once("WSR".to_string()))
            .collect()
    }

    pub fn csv_fields(&self) -> Vec<f64> {
        self.private_rates
            .iter()
            .chain(&self.common_portions)
            .copied()
            .chain(std::iter::once(self.weighted_sum_rate))
            .collect()
    }
}

/// Evaluates rates at `precoders` with the common-rate split `allocation`.
pub fn weighted_sum_rate(
    precoders: &CMatrix,
    allocation: &[f64],
    channels: &[CVector],
    weights: &[f64],
    noise_power: f64,
) -> Result<RateReport> {
    check_dim("common-rate allocation", channels.len(), allocation.len())?;
    check_dim("user weights", channels.len(), weights.len())?;
    if allocation.iter().any(|&c| !(c >= 0.0)) {
        return Err(invalid("common-rate allocation must be nonnegative"));
    }
    let rc = common_rate(precoders, channels, noise_power)?;
    let private = private_rates(precoders, channels, noise_power)?;
    Ok(RateReport::from_parts(private, allocation.to_vec(), rc, weights))
}

/// Splits R_c to maximise Σ μ_k C_k: everything to the heaviest user, with
/// exact ties shared evenly.
pub fn allocate_common_rate(common_rate: f64, weights: &[f64]) -> Vec<f64> {
    let rc = common_rate.max(0.0);
    let best = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners = weights.iter().filter(|&&w| w == best).count().max(1);
    weights
        .iter()
        .map(|&w| if w == best { rc / winners as f64 } else { 0.0 })
        .collect()
}

/// Clips negatives and shrinks the split proportionally so Σ C_k ≤ R_c.
pub fn project_allocation(allocation: &[f64], common_rate: f64) -> Vec<f64> {
    let rc = common_rate.max(0.0);
    let clipped: Vec<f64> = allocation.iter().map(|&c| c.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= rc {
        clipped
    } else {
        let scale = rc / total;
        clipped.iter().map(|c| c * scale).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use num_complex::Complex64;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn example_precoders() -> CMatrix {
        // columns: p_c = [1,0], p_1 = [0.5,0], p_2 = [0,1]
        DMatrix::from_row_slice(2, 3, &[c(1.0), c(0.5), c(0.0), c(0.0), c(0.0), c(1.0)])
    }

    #[test]
    fn common_sinr_by_hand() {
        let h = DVector::from_vec(vec![c(1.0), c(0.0)]);
        let p = example_precoders();
        assert_abs_diff_eq!(sinr_common(&p, &h, 1.0).unwrap(), 0.8, epsilon = 1e-15);

        let mut zero_common = p.clone();
        zero_common.column_mut(0).fill(c(0.0));
        assert_eq!(sinr_common(&zero_common, &h, 1.0).unwrap(), 0.0);

        let mut only_common = p.clone();
        only_common.column_mut(1).fill(c(0.0));
        only_common.column_mut(2).fill(c(0.0));
        assert_abs_diff_eq!(sinr_common(&only_common, &h, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn private_sinr_by_hand() {
        let h = DVector::from_vec(vec![c(1.0), c(0.0)]);
        let p = example_precoders();
        assert_abs_diff_eq!(sinr_private(&p, &h, 0, 1.0).unwrap(), 0.25, epsilon = 1e-15);

        let single = DMatrix::from_row_slice(1, 2, &[c(0.3), c(1.0)]);
        let h1 = DVector::from_vec(vec![c(1.0)]);
        assert_abs_diff_eq!(sinr_private(&single, &h1, 0, 1.0).unwrap(), 1.0);

        let mut muted = p.clone();
        muted.column_mut(1).fill(c(0.0));
        assert_eq!(sinr_private(&muted, &h, 0, 1.0).unwrap(), 0.0);
        assert!(sinr_private(&p, &h, 2, 1.0).is_err());
    }

    #[test]
    fn common_rate_is_min_over_users() {
        let p = example_precoders();
        let h1 = DVector::from_vec(vec![c(1.0), c(0.0)]);
        let h2 = DVector::from_vec(vec![c(0.0), c(1.0)]);
        let rc = common_rate(&p, &[h1.clone(), h2], 1.0).unwrap();
        assert_abs_diff_eq!(rc, 0.0);
        let rc_same = common_rate(&p, &[h1.clone(), h1.clone()], 1.0).unwrap();
        assert_abs_diff_eq!(rc_same, 1.8f64.log2(), epsilon = 1e-15);
        assert!(common_rate(&p, &[], 1.0).is_err());
    }

    #[test]
    fn report_wsr_with_zero_split() {
        let p = example_precoders();
        let chans = vec![DVector::from_vec(vec![c(1.0), c(0.0)]), DVector::from_vec(vec![c(0.2), c(0.9)])];
        let w = [0.3, 0.7];
        let r = weighted_sum_rate(&p, &[0.0, 0.0], &chans, &w, 1.0).unwrap();
        let expected: f64 = w.iter().zip(&r.private_rates).map(|(m, r)| m * r).sum();
        assert_abs_diff_eq!(r.weighted_sum_rate, expected, epsilon = 1e-15);
        assert!(r.feasible);
        assert!(weighted_sum_rate(&p, &[-0.1, 0.0], &chans, &w, 1.0).is_err());
    }

    #[test]
    fn zero_precoder_is_infeasible_unless_split_is_zero() {
        let p = CMatrix::zeros(2, 3);
        let chans = vec![DVector::from_vec(vec![c(1.0), c(0.0)]), DVector::from_vec(vec![c(0.0), c(1.0)])];
        let w = [0.5, 0.5];
        let r = weighted_sum_rate(&p, &[0.2, 0.1], &chans, &w, 1.0).unwrap();
        assert!(!r.feasible);
        assert_abs_diff_eq!(r.weighted_sum_rate, 0.15, epsilon = 1e-15);
        assert!(weighted_sum_rate(&p, &[0.0, 0.0], &chans, &w, 1.0).unwrap().feasible);
    }

    #[test]
    fn table_row_layout() {
        let report = RateReport::from_parts(vec![5.2894, 3.9332], vec![1.3454, 1.3454], 2.6908, &[0.5, 0.5]);
        assert_abs_diff_eq!(report.weighted_sum_rate, 5.9567, epsilon = 1e-12);
        assert_eq!(RateReport::csv_header(2), ["R_1", "R_2", "C_1", "C_2", "WSR"]);
        assert_eq!(report.csv_fields().len(), 5);
    }

    #[test]
    fn allocation_rule() {
        let c = allocate_common_rate(2.6908, &[0.5, 0.5]);
        assert_abs_diff_eq!(c[0], 1.3454, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 1.3454, epsilon = 1e-12);
        assert_eq!(allocate_common_rate(0.0, &[0.5, 0.5]), vec![0.0, 0.0]);
        assert_eq!(allocate_common_rate(1.0, &[0.9, 0.1]), vec![1.0, 0.0]);
    }

    #[test]
    fn projection_enforces_budget() {
        let p = project_allocation(&[1.0, -0.5, 1.0], 1.0);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_eq!(p[1], 0.0);
        assert_eq!(project_allocation(&[0.1, 0.2], 1.0), vec![0.1, 0.2]);
    }

    mod props {
        use super::*;
        use crate::model::generate_channels;
        use proptest::prelude::*;

        fn random_precoders(seed: u64, nt: usize, streams: usize) -> CMatrix {
            let cols = generate_channels(streams, nt, seed);
            CMatrix::from_columns(&cols)
        }

        proptest! {
            #[test]
            fn sinr_invariant_under_common_phase(seed in 0u64..1000, phase in 0.0f64..std::f64::consts::TAU) {
                let p = random_precoders(seed, 4, 3);
                let chans = generate_channels(2, 4, seed + 7);
                let rotated = p.map(|z| z * Complex64::from_polar(1.0, phase));
                for (k, h) in chans.iter().enumerate() {
                    let a = sinr_common(&p, h, 1.0).unwrap();
                    let b = sinr_common(&rotated, h, 1.0).unwrap();
                    prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
                    let a = sinr_private(&p, h, k, 1.0).unwrap();
                    let b = sinr_private(&rotated, h, k, 1.0).unwrap();
                    prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
                }
            }

            #[test]
            fn sinr_nonincreasing_in_noise(seed in 0u64..1000, n1 in 0.01f64..10.0, extra in 0.0f64..10.0) {
                let p = random_precoders(seed, 3, 3);
                let h = generate_channels(1, 3, seed + 1).remove(0);
                prop_assert!(sinr_common(&p, &h, n1 + extra).unwrap() <= sinr_common(&p, &h, n1).unwrap());
                prop_assert!(sinr_private(&p, &h, 1, n1 + extra).unwrap() <= sinr_private(&p, &h, 1, n1).unwrap());
            }

            #[test]
            fn common_rate_bounds_every_user(seed in 0u64..1000) {
                let p = random_precoders(seed, 4, 4);
                let chans = generate_channels(3, 4, seed + 3);
                let rc = common_rate(&p, &chans, 1.0).unwrap();
                prop_assert!(rc >= 0.0);
                for r in common_stream_rates(&p, &chans, 1.0).unwrap() {
                    prop_assert!(rc <= r);
                }
            }
        }
    }
}
