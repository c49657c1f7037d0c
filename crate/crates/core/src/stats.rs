//! Small summary-statistics helpers.

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Sample mean and 95% normal-approximation half-width.
/// The half-width is infinite with fewer than two samples.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * (var / n as f64).sqrt())
}

/// Whether [a − ha, a + ha] and [b − hb, b + hb] intersect.
pub fn intervals_overlap(a: f64, ha: f64, b: f64, hb: f64) -> bool {
    (a - b).abs() <= ha + hb
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_half_width() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((h - Z95 * sd / 2.0).abs() < 1e-15);
        assert!(mean_ci95(&[1.0]).1.is_infinite());
    }
}
