//! Benchmark response surfaces on the unit interval and square.

/// Mean physical response of the 1D example.
pub fn xi_1d(x: f64) -> f64 {
    0.5 * (10.0 * (x - 1.02).powi(2)).sin() - 1.25 * (x - 0.75) * (2.0 * x - 0.25) + 0.2
}

/// Computer model paired with [`xi_1d`].
pub fn f_1d(x: f64) -> f64 {
    0.5 * (10.0 * (x - 1.02).powi(2)).sin() + 0.1
}

/// Mean physical response of the 2D example. At `x2 = 0` the bracket
/// `1 - exp(-1/(2 x2))` takes its limit 1.
pub fn xi_2d(x1: f64, x2: f64) -> f64 {
    let bracket = if x2 <= 0.0 { 1.0 } else { 1.0 - (-1.0 / (2.0 * x2)).exp() };
    let num = 2300.0 * x1.powi(3) + 1900.0 * x1 * x1 + 2092.0 * x1 + 6.0;
    let den = 100.0 * x1.powi(3) + 500.0 * x1 * x1 + 4.0 * x1 + 20.0;
    bracket * num / den
}

/// Computer model paired with [`xi_2d`]: an average of four shifted copies.
pub fn f_2d(x1: f64, x2: f64) -> f64 {
    let h = 1.0 / 20.0;
    let lo = (x2 - h).max(0.0);
    0.25 * (xi_2d(x1 + h, x2 + h) + xi_2d(x1 + h, lo) + xi_2d(x1 - h, x2 + h) + xi_2d(x1 - h, lo))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_difference_is_quadratic() {
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            let d = f_1d(x) - xi_1d(x);
            assert!((d - (1.25 * (x - 0.75) * (2.0 * x - 0.25) - 0.1)).abs() < 1e-14);
        }
    }

    #[test]
    fn one_dimensional_value_at_zero() {
        // 0.5 sin(10.404) - 1.25 * 0.1875 + 0.2
        let expected = 0.5 * 10.404f64.sin() - 0.234375 + 0.2;
        assert!((xi_1d(0.0) - expected).abs() < 1e-15);
        assert!((xi_1d(0.0) + 0.449_406_888_764_306).abs() < 1e-14);
    }

    #[test]
    fn two_dimensional_spot_value() {
        // (1 - e^-1) * 1814.5 / 159.5
        let expected = (1.0 - (-1.0f64).exp()) * 1814.5 / 159.5;
        assert!((xi_2d(0.5, 0.5) - expected).abs() < 1e-13);
        assert!((xi_2d(0.5, 0.5) - 7.191_114_445_106_068).abs() < 1e-12);
    }

    #[test]
    fn bracket_limit_at_zero() {
        for &x1 in &[0.0, 0.3, 1.0] {
            let ratio = (2300.0 * x1 * x1 * x1 + 1900.0 * x1 * x1 + 2092.0 * x1 + 6.0)
                / (100.0 * x1 * x1 * x1 + 500.0 * x1 * x1 + 4.0 * x1 + 20.0);
            assert_eq!(xi_2d(x1, 0.0), ratio);
            assert!((xi_2d(x1, 1e-6) - ratio).abs() < 1e-12);
        }
        assert!(f_2d(0.5, 0.0).is_finite());
        assert!(f_2d(0.0, 0.02).is_finite());
    }
}
