//! Binomial summary statistics shared by the simulator and the metrics module.

use serde::{Deserialize, Serialize};

/// Two-sided standard-normal quantile for 99% coverage.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

/// Closed interval of a proportion estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// True when the two intervals share no point.
    pub fn disjoint(&self, other: &Interval) -> bool {
        self.hi < other.lo || other.hi < self.lo
    }
}

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
///
/// With zero trials the interval is the uninformative `[0, 1]`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Interval {
    if trials == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // Clamp so the point estimate always lies inside despite rounding.
    Interval {
        lo: (centre - half).max(0.0).min(p),
        hi: (centre + half).min(1.0).max(p),
    }
}

/// 99% Wilson interval.
pub fn wilson99(successes: u64, trials: u64) -> Interval {
    wilson_interval(successes, trials, Z_99)
}

/// Standardized distance of an observed proportion from a theoretical one,
/// using the binomial standard deviation implied by the theory value.
///
/// When the theory value is 0 or 1 the deviation is degenerate: the score is
/// 0 if the observation matches exactly and infinite otherwise.
pub fn binomial_zscore(successes: u64, trials: u64, theory: f64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let n = trials as f64;
    let p_hat = successes as f64 / n;
    let sd = (theory * (1.0 - theory) / n).sqrt();
    let diff = p_hat - theory;
    if sd == 0.0 || !sd.is_finite() {
        if diff.abs() < 1e-15 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    } else {
        diff / sd
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_matches_reference_values() {
        // Reference: 45 of 100 at z = 1.96 gives (0.35614, 0.54756).
        let iv = wilson_interval(45, 100, 1.96);
        assert!((iv.lo - 0.356_144).abs() < 1e-5, "{iv:?}");
        assert!((iv.hi - 0.547_556).abs() < 1e-5, "{iv:?}");
    }

    #[test]
    fn wilson_edges() {
        let all = wilson99(50, 50);
        assert_eq!(all.hi, 1.0);
        assert!(all.lo < 1.0 && all.lo > 0.8);
        let none = wilson99(0, 50);
        assert_eq!(none.lo, 0.0);
        assert_eq!(wilson99(0, 0), Interval { lo: 0.0, hi: 1.0 });
    }

    #[test]
    fn zscore_degenerate_theory() {
        assert_eq!(binomial_zscore(10, 10, 1.0), 0.0);
        assert!(binomial_zscore(9, 10, 1.0).is_infinite());
        let z = binomial_zscore(60, 100, 0.5);
        assert!((z - 2.0).abs() < 1e-12);
    }
}
