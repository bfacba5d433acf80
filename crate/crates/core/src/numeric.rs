//! Small numeric helpers shared across modules.
//!
//! All per-token averages in this crate go through [`compensated_sum`] so
//! that results do not depend on how work was batched across threads.

/// Kahan-Babuska (Neumaier) compensated summation.
///
/// Keeps a running error term so the result is accurate to within a few ulps
/// even for long, badly scaled inputs.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean via compensated summation. Returns `None` for an empty iterator.
pub fn compensated_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let sum = compensated_sum(values.into_iter().inspect(|_| n += 1));
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

/// Nearest-rank percentile: the smallest sample value whose rank is at least
/// `ceil(p * n)`. `p` is in (0, 1]. The input need not be sorted.
pub fn nearest_rank_percentile(samples: &[u64], p: f64) -> Option<u64> {
    if samples.is_empty() || !(0.0..=1.0).contains(&p) || p == 0.0 {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.max(1) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_matches_exact_on_small_input() {
        assert_eq!(compensated_sum([1.0, 2.0, 3.0]), 6.0);
        assert_eq!(compensated_sum([]), 0.0);
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        // 1 + 1e100 - 1e100 = 1 exactly under compensation; naive sum gives 0.
        let v = [1.0, 1e100, -1e100];
        assert_eq!(compensated_sum(v), 1.0);
    }

    #[test]
    fn mean_of_empty_is_none() {
        assert_eq!(compensated_mean(std::iter::empty()), None);
    }

    #[test]
    fn nearest_rank_p95_of_four() {
        // ceil(0.95 * 4) = 4 -> 4th sorted value.
        assert_eq!(nearest_rank_percentile(&[10, 10, 10, 100], 0.95), Some(100));
        assert_eq!(nearest_rank_percentile(&[10, 10, 10, 100], 0.5), Some(10));
        assert_eq!(nearest_rank_percentile(&[], 0.95), None);
    }
}
