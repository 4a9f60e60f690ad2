use super::SimError;

/// Nearest-rank percentile: the `ceil(q * N)`-th smallest sample (1-based).
pub fn percentile<T: Copy + PartialOrd>(samples: &[T], q: f64) -> Result<T, SimError> {
    if samples.is_empty() {
        return Err(SimError::EmptySamples);
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(SimError::InvalidQuantile(q));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples must be totally ordered"));
    Ok(sorted[nearest_rank(sorted.len(), q) - 1])
}

/// 1-based rank. The small epsilon keeps products like `0.99 * 100` from
/// rounding up past an exact integer.
pub(crate) fn nearest_rank(n: usize, q: f64) -> usize {
    ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

pub fn mean(samples: &[f64]) -> Option<f64> {
    (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&ten, 0.5).unwrap(), 5.0);
        assert_eq!(percentile(&[7.0], 0.01).unwrap(), 7.0);
        assert_eq!(percentile(&[7.0], 0.99).unwrap(), 7.0);
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&hundred, 0.99).unwrap(), 99.0);
        assert_eq!(percentile(&hundred, 0.95).unwrap(), 95.0);
        assert_eq!(percentile(&hundred, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn unsorted_input_and_errors() {
        assert_eq!(percentile(&[3u64, 1, 2], 0.5).unwrap(), 2);
        assert_eq!(percentile::<f64>(&[], 0.5), Err(SimError::EmptySamples));
        assert!(percentile(&[1.0], 0.0).is_err());
        assert!(percentile(&[1.0], 1.5).is_err());
    }

    // Oracle: rank by counting, no sorting.
    #[test]
    fn matches_counting_definition() {
        let samples: Vec<u64> = (0..257).map(|i| (i * 7919) % 1000).collect();
        for q in [0.01, 0.1, 0.5, 0.9, 0.95, 0.99, 0.999] {
            let p = percentile(&samples, q).unwrap();
            let at_or_below = samples.iter().filter(|&&s| s <= p).count() as f64;
            let below = samples.iter().filter(|&&s| s < p).count() as f64;
            let n = samples.len() as f64;
            assert!(at_or_below >= q * n && below < q * n, "q={q}");
        }
    }

    #[test]
    fn mean_of_empty_is_none() {
        assert_eq!(mean(&[]), None);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), Some(3.0));
    }
}
