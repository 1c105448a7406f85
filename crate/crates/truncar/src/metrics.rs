//! Prediction scoring: point accuracy, CRPS, interval score, coverage, and
//! Frobenius distance between recovered covariances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point-prediction accuracy. `r2` is the squared Pearson correlation between
/// truth and predictions (not 1 - SSE/SST); it is `None` when either vector
/// has zero variance, in which case the correlation is undefined but the
/// absolute-error summaries still stand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScores {
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

/// Full scorecard for one set of predictions at interval level `alpha`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreCard {
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub crps: f64,
    pub int_score: f64,
    pub cvg: f64,
    pub alpha: f64,
    pub n_scored: usize,
}

fn check_pair(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "vector lengths differ: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::InvalidInput(
            "scoring needs at least two locations".into(),
        ));
    }
    Ok(())
}

/// MAE, RMSE, and squared Pearson correlation of `pred` against `truth`.
pub fn point_scores(truth: &[f64], pred: &[f64]) -> Result<PointScores> {
    check_pair(truth, pred)?;
    let n = truth.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        let d = t - p;
        abs_sum += d.abs();
        sq_sum += d * d;
    }
    let mae = abs_sum / n;
    let rmse = (sq_sum / n).sqrt();

    let mean_t = truth.iter().sum::<f64>() / n;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_t = 0.0;
    let mut var_p = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        cov += (t - mean_t) * (p - mean_p);
        var_t += (t - mean_t) * (t - mean_t);
        var_p += (p - mean_p) * (p - mean_p);
    }
    let r2 = if var_t <= 0.0 || var_p <= 0.0 {
        None
    } else {
        Some((cov * cov) / (var_t * var_p))
    };
    Ok(PointScores { r2, mae, rmse })
}

/// Empirical-sample CRPS of one predictive sample against a scalar truth:
/// (1/G) sum_j |x_j - y|  -  (1/(2 G^2)) sum_{j,k} |x_j - x_k|.
///
/// The double sum is evaluated in O(G log G) by sorting; callers average over
/// locations themselves.
pub fn crps_empirical(samples: &[f64], truth: f64) -> Result<f64> {
    let g = samples.len();
    if g < 2 {
        return Err(Error::InvalidInput(
            "CRPS needs at least two predictive draws".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in predictive draws"));

    let gf = g as f64;
    let term1 = sorted.iter().map(|x| (x - truth).abs()).sum::<f64>() / gf;
    // sum_{j,k} |x_j - x_k| = 2 sum_i (2i - G - 1) x_(i) over the sorted order.
    let mut pair_sum = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        pair_sum += (2.0 * (i as f64 + 1.0) - gf - 1.0) * x;
    }
    pair_sum *= 2.0;
    Ok(term1 - pair_sum / (2.0 * gf * gf))
}

/// Mean interval score and empirical coverage at level `alpha`.
///
/// Per location: (u - l) + (2/alpha)(l - y) when y < l, plus
/// (2/alpha)(y - u) when y > u.
pub fn interval_scores(
    lower: &[f64],
    upper: &[f64],
    truth: &[f64],
    alpha: f64,
) -> Result<(f64, f64)> {
    check_pair(truth, lower)?;
    check_pair(truth, upper)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ParameterRange(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let mut score = 0.0;
    let mut covered = 0usize;
    for i in 0..truth.len() {
        let (l, u, y) = (lower[i], upper[i], truth[i]);
        if l > u {
            return Err(Error::InvalidInput(format!(
                "invalid interval at location {i}: lower {l} exceeds upper {u}"
            )));
        }
        let mut s = u - l;
        if y < l {
            s += 2.0 / alpha * (l - y);
        } else if y > u {
            s += 2.0 / alpha * (y - u);
        } else {
            covered += 1;
        }
        score += s;
    }
    let n = truth.len() as f64;
    Ok((score / n, covered as f64 / n))
}

/// Frobenius norm of K - L.
pub fn frobenius_distance(k: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    if k.shape() != l.shape() {
        return Err(Error::ShapeMismatch(format!(
            "matrix shapes differ: {}x{} vs {}x{}",
            k.nrows(),
            k.ncols(),
            l.nrows(),
            l.ncols()
        )));
    }
    Ok((k - l).norm())
}

/// Assemble a full scorecard: point scores on `point`, CRPS averaged over
/// locations, interval score and coverage at level `alpha`.
pub fn score_card(
    truth: &[f64],
    point: &[f64],
    lower: &[f64],
    upper: &[f64],
    samples: &[Vec<f64>],
    alpha: f64,
) -> Result<ScoreCard> {
    let ps = point_scores(truth, point)?;
    let (int_score, cvg) = interval_scores(lower, upper, truth, alpha)?;
    if samples.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "need one predictive sample per location: {} locations, {} samples",
            truth.len(),
            samples.len()
        )));
    }
    let mut crps = 0.0;
    for (s, y) in samples.iter().zip(truth) {
        crps += crps_empirical(s, *y)?;
    }
    crps /= truth.len() as f64;
    Ok(ScoreCard {
        r2: ps.r2,
        mae: ps.mae,
        rmse: ps.rmse,
        crps,
        int_score,
        cvg,
        alpha,
        n_scored: truth.len(),
    })
}

/// Quantile of a sorted slice by linear interpolation of order statistics
/// (the h = (n-1)q convention). `sorted` must be ascending and non-empty.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_zero_error() {
        let t = vec![1.0, -2.0, 3.5, 0.25];
        let s = point_scores(&t, &t).unwrap();
        assert_eq!(s.r2, Some(1.0));
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.rmse, 0.0);
    }

    #[test]
    fn constant_predictions_leave_r2_undefined() {
        let s = point_scores(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(s.r2.is_none());
        assert_relative_eq!(s.mae, 1.0);
        assert_relative_eq!(s.rmse, 1.0);
    }

    #[test]
    fn affine_predictions_have_unit_r2() {
        let t = vec![0.3, 1.7, -0.4, 2.2, 5.0];
        let p: Vec<f64> = t.iter().map(|v| 2.0 * v + 3.0).collect();
        let s = point_scores(&t, &p).unwrap();
        assert_relative_eq!(s.r2.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn point_scores_reject_short_or_mismatched_input() {
        assert!(point_scores(&[1.0], &[1.0]).is_err());
        assert!(point_scores(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn crps_hand_cases() {
        assert_relative_eq!(crps_empirical(&[0.0, 1.0], 0.0).unwrap(), 0.25);
        assert_relative_eq!(crps_empirical(&[0.0, 1.0], 10.0).unwrap(), 9.25);
        assert_relative_eq!(crps_empirical(&[3.0, 3.0, 3.0], 3.0).unwrap(), 0.0);
    }

    // O(G^2) reference for the sorted pair-sum shortcut.
    fn crps_naive(samples: &[f64], truth: f64) -> f64 {
        let g = samples.len() as f64;
        let t1 = samples.iter().map(|x| (x - truth).abs()).sum::<f64>() / g;
        let mut t2 = 0.0;
        for a in samples {
            for b in samples {
                t2 += (a - b).abs();
            }
        }
        t1 - t2 / (2.0 * g * g)
    }

    #[test]
    fn crps_matches_double_sum_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let g = rng.random_range(2..60);
            let samples: Vec<f64> = (0..g).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let truth = rng.random::<f64>() * 6.0 - 3.0;
            let fast = crps_empirical(&samples, truth).unwrap();
            assert_relative_eq!(fast, crps_naive(&samples, truth), epsilon = 1e-10);
        }
    }

    #[test]
    fn interval_score_hand_cases() {
        // Truth inside every interval: mean width, full coverage.
        let (s, c) = interval_scores(&[0.0, 1.0], &[2.0, 3.0], &[1.0, 2.0], 0.05).unwrap();
        assert_relative_eq!(s, 2.0);
        assert_relative_eq!(c, 1.0);
        // Degenerate interval at 0 missing truth 1 at alpha 0.05: 2/0.05 = 40.
        let (s, c) = interval_scores(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 0.05).unwrap();
        assert_relative_eq!(s, 40.0);
        assert_relative_eq!(c, 0.0);
    }

    #[test]
    fn interval_score_rejects_crossed_bounds_and_bad_alpha() {
        let r = interval_scores(&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5], 0.05);
        assert!(r.is_err());
        let r = interval_scores(&[0.0, 0.0], &[1.0, 1.0], &[0.5, 0.5], 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn widening_a_covering_interval_raises_the_score() {
        let (tight, _) = interval_scores(&[0.0, 0.0], &[1.0, 1.0], &[0.5, 0.5], 0.05).unwrap();
        let (wide, _) = interval_scores(&[-1.0, -1.0], &[2.0, 2.0], &[0.5, 0.5], 0.05).unwrap();
        assert!(wide > tight);
    }

    #[test]
    fn frobenius_identity_and_shapes() {
        let k = DMatrix::<f64>::identity(4, 4);
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_relative_eq!(frobenius_distance(&k, &z).unwrap(), 2.0);
        assert_relative_eq!(frobenius_distance(&k, &k).unwrap(), 0.0);
        assert!(frobenius_distance(&k, &DMatrix::zeros(3, 4)).is_err());
        // Homogeneity: scaling both arguments scales the distance.
        let a = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let b = DMatrix::from_fn(3, 3, |i, j| ((i + j) % 2) as f64);
        let d = frobenius_distance(&a, &b).unwrap();
        let d2 = frobenius_distance(&(2.0 * &a), &(2.0 * &b)).unwrap();
        assert_relative_eq!(d2, 2.0 * d, epsilon = 1e-12);
    }

    #[test]
    fn score_card_aggregates_all_pieces() {
        let truth = vec![1.0, 2.0, 3.0];
        let point = vec![1.1, 1.9, 3.2];
        let lower = vec![0.0, 1.0, 2.0];
        let upper = vec![2.0, 3.0, 4.0];
        let samples = vec![vec![0.9, 1.1, 1.0], vec![1.8, 2.0, 2.2], vec![3.0, 3.2, 3.4]];
        let card = score_card(&truth, &point, &lower, &upper, &samples, 0.05).unwrap();
        assert_eq!(card.n_scored, 3);
        assert_relative_eq!(card.cvg, 1.0);
        assert!(card.crps > 0.0);
        assert!(card.mae <= card.rmse);
        let json = serde_json::to_string(&card).unwrap();
        let back: ScoreCard = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n_scored, 3);
    }

    #[test]
    fn quantiles_interpolate_order_statistics() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_relative_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_relative_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_relative_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_relative_eq!(quantile_sorted(&[5.0], 0.3), 5.0);
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_rmse(
            pairs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..40)
        ) {
            let truth: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let s = point_scores(&truth, &pred).unwrap();
            prop_assert!(s.mae <= s.rmse + 1e-12);
        }

        #[test]
        fn crps_translation_and_scale(
            samples in prop::collection::vec(-20.0..20.0f64, 2..30),
            truth in -10.0..10.0f64,
            shift in -5.0..5.0f64,
            scale in 0.1..4.0f64,
        ) {
            let base = crps_empirical(&samples, truth).unwrap();
            prop_assert!(base >= -1e-12);
            let shifted: Vec<f64> = samples.iter().map(|x| x + shift).collect();
            let s1 = crps_empirical(&shifted, truth + shift).unwrap();
            prop_assert!((s1 - base).abs() < 1e-9);
            let scaled: Vec<f64> = samples.iter().map(|x| x * scale).collect();
            let s2 = crps_empirical(&scaled, truth * scale).unwrap();
            prop_assert!((s2 - scale * base).abs() < 1e-9 * scale.max(1.0));
        }
    }
}
