//! Interquartile-range outlier detection.

/// Quartile `p` (in [0,1]) of sorted values, linearly interpolated at
/// position `p * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(Q1, Q3)` of the values; `None` for fewer than 4 values.
pub fn quartiles(values: &[f64]) -> Option<(f64, f64)> {
    if values.len() < 4 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some((quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75)))
}

/// Indices of values below `Q1 - 1.5 IQR` and above `Q3 + 1.5 IQR`.
pub fn iqr_outliers(values: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let Some((q1, q3)) = quartiles(values) else {
        return (Vec::new(), Vec::new());
    };
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let low = (0..values.len()).filter(|&i| values[i] < lo_fence).collect();
    let high = (0..values.len()).filter(|&i| values[i] > hi_fence).collect();
    (low, high)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to_twelve_plus(extra: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (1..=12).map(f64::from).collect();
        v.push(extra);
        v
    }

    #[test]
    fn high_outlier() {
        let v = one_to_twelve_plus(100.0);
        assert_eq!(quartiles(&v), Some((4.0, 10.0)));
        assert_eq!(iqr_outliers(&v), (vec![], vec![12]));
    }

    #[test]
    fn low_outlier() {
        let v = one_to_twelve_plus(-100.0);
        // Sorted: -100, 1..12; Q1 at position 3 -> 3, Q3 at position 9 -> 9.
        assert_eq!(quartiles(&v), Some((3.0, 9.0)));
        assert_eq!(iqr_outliers(&v), (vec![12], vec![]));
    }

    #[test]
    fn equal_values_and_short_input() {
        assert_eq!(iqr_outliers(&[2.5; 9]), (vec![], vec![]));
        assert_eq!(iqr_outliers(&[1.0, 2.0, 1e9]), (vec![], vec![]));
    }

    #[test]
    fn interpolation_between_order_statistics() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        assert_eq!(quantile_sorted(&s, 0.75), 3.25);
    }
}
