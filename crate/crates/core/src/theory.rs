//! Analytic accuracy theory of the simplified reasoning task.
//!
//! A task of scale `n` needs `n` correct steps. The self-verifying policy is
//! summarized by four probabilities: planning correctness `mu`, false
//! negative rate `e_minus`, false positive rate `e_plus`, and the rejection
//! rate `f` on negative states. From these follow the instant-reject,
//! correct-accept and incorrect-accept probabilities `alpha`, `beta`, `gamma`
//! and closed forms or recursions for the accuracy of non-reflective
//! reasoning (`mu^n`), RMTP (`(beta / (1 - alpha))^n`) and RTBS of width `m`.
//!
//! The RTBS recursion is evaluated on complements (`1 - delta`,
//! `1 - epsilon`) so that values close to 1 keep full relative precision.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("{0} is NaN")]
    NotANumber(&'static str),
    #[error("a correct answer is never found: (1-mu)*e_plus + mu*(1-e_minus) = 0")]
    NeverCorrect,
    #[error("empty stability band: lower bound {lower} exceeds upper bound {upper}")]
    EmptyBand { lower: f64, upper: f64 },
    #[error("RTBS width must be at least 1")]
    ZeroWidth,
    #[error("{0}")]
    Undefined(&'static str),
    #[error("invalid posterior parameters: {0}")]
    Posterior(String),
}

fn check_probability(name: &'static str, value: f64) -> Result<f64, TheoryError> {
    if value.is_nan() {
        Err(TheoryError::NotANumber(name))
    } else if !(0.0..=1.0).contains(&value) {
        Err(TheoryError::OutOfRange { name, value })
    } else {
        Ok(value)
    }
}

/// The `(mu, e_minus, e_plus, f)` factor tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedParams {
    pub mu: f64,
    pub e_minus: f64,
    pub e_plus: f64,
    pub f: f64,
}

impl SimplifiedParams {
    pub fn new(mu: f64, e_minus: f64, e_plus: f64, f: f64) -> Result<Self, TheoryError> {
        let p = SimplifiedParams { mu, e_minus, e_plus, f };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        check_probability("mu", self.mu)?;
        check_probability("e_minus", self.e_minus)?;
        check_probability("e_plus", self.e_plus)?;
        check_probability("f", self.f)?;
        Ok(())
    }

    pub fn rates(&self) -> DerivedRates {
        derived_rates(self)
    }

    /// Strictly inside the unit interval on `mu`, `e_minus` and `e_plus`.
    pub fn is_nontrivial(&self) -> bool {
        [self.mu, self.e_minus, self.e_plus].iter().all(|&v| v > 0.0 && v < 1.0)
    }
}

/// Per-proposal outcome probabilities on a positive state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedRates {
    /// Proposal rejected on the spot.
    pub alpha: f64,
    /// Correct step accepted.
    pub beta: f64,
    /// Incorrect step accepted.
    pub gamma: f64,
}

impl DerivedRates {
    /// `1 - alpha`, computed without cancellation.
    pub fn pass(&self) -> f64 {
        self.beta + self.gamma
    }

    /// Every proposal is rejected, so RMTP never moves.
    pub fn is_degenerate(&self) -> bool {
        self.pass() == 0.0
    }
}

pub fn derived_rates(p: &SimplifiedParams) -> DerivedRates {
    DerivedRates {
        alpha: p.mu * p.e_minus + (1.0 - p.mu) * (1.0 - p.e_plus),
        beta: p.mu * (1.0 - p.e_minus),
        gamma: (1.0 - p.mu) * p.e_plus,
    }
}

/// Non-reflective accuracy `mu^n`.
pub fn rho_nonreflective(mu: f64, n: u32) -> f64 {
    pow_u32(mu, n)
}

fn pow_u32(x: f64, n: u32) -> f64 {
    if n <= i32::MAX as u32 {
        x.powi(n as i32)
    } else {
        x.powf(f64::from(n))
    }
}

/// Per-step success probability of RMTP, `beta / (1 - alpha)`; 0 when every
/// proposal is rejected.
pub fn rmtp_step_success(p: &SimplifiedParams) -> f64 {
    let r = derived_rates(p);
    if r.is_degenerate() {
        0.0
    } else {
        r.beta / r.pass()
    }
}

/// RMTP accuracy `(beta / (1 - alpha))^n`. Degenerate `alpha = 1` gives 0 for
/// `n >= 1`.
pub fn rho_rmtp(p: &SimplifiedParams, n: u32) -> f64 {
    if n == 0 {
        return 1.0;
    }
    pow_u32(rmtp_step_success(p), n)
}

/// Natural log of [`rho_rmtp`].
pub fn log_rho_rmtp(p: &SimplifiedParams, n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    f64::from(n) * rmtp_step_success(p).ln()
}

/// `1 - (1 - y)^m` evaluated accurately for small `y`.
fn one_minus_pow_complement(y: f64, m: u32) -> f64 {
    if y >= 1.0 {
        return 1.0;
    }
    -(f64::from(m) * (-y).ln_1p()).exp_m1()
}

/// Rows of the RTBS recursion for `n = 0..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtbsRecursionTable {
    pub m: u32,
    /// Probability a proposed step at a positive state is eventually rejected.
    pub delta: Vec<f64>,
    /// The same on a negative state.
    pub epsilon: Vec<f64>,
    /// `1 - delta`, kept separately for precision.
    pub delta_bar: Vec<f64>,
    /// `1 - epsilon`.
    pub epsilon_bar: Vec<f64>,
    /// Probability of not failing back out of a positive state.
    pub sigma: Vec<f64>,
    /// `delta^m`.
    pub phi: Vec<f64>,
    /// `epsilon^m`.
    pub psi: Vec<f64>,
}

impl RtbsRecursionTable {
    pub fn n_max(&self) -> u32 {
        (self.sigma.len() - 1) as u32
    }

    /// Product of `sigma(1..=n)`.
    pub fn rho(&self, n: u32) -> f64 {
        self.sigma[1..=n as usize].iter().product()
    }

    /// Sum of `ln sigma(1..=n)`.
    pub fn log_rho(&self, n: u32) -> f64 {
        self.sigma[1..=n as usize].iter().map(|s| s.ln()).sum()
    }
}

/// Evaluates the RTBS recursion up to `n_max`.
pub fn rtbs_table(p: &SimplifiedParams, m: u32, n_max: u32) -> Result<RtbsRecursionTable, TheoryError> {
    if m == 0 {
        return Err(TheoryError::ZeroWidth);
    }
    p.validate()?;
    let r = derived_rates(p);
    let len = n_max as usize + 1;
    let mut t = RtbsRecursionTable {
        m,
        delta: Vec::with_capacity(len),
        epsilon: Vec::with_capacity(len),
        delta_bar: Vec::with_capacity(len),
        epsilon_bar: Vec::with_capacity(len),
        sigma: Vec::with_capacity(len),
        phi: Vec::with_capacity(len),
        psi: Vec::with_capacity(len),
    };
    let (mut dbar, mut ebar) = (1.0f64, 1.0f64);
    for n in 0..len {
        if n > 0 {
            let cd = one_minus_pow_complement(dbar, m);
            let ce = one_minus_pow_complement(ebar, m);
            dbar = r.beta * cd + r.gamma * ce;
            ebar = (1.0 - p.f) * ce;
        }
        let delta = 1.0 - dbar;
        let epsilon = 1.0 - ebar;
        let sigma = if dbar == 0.0 {
            f64::from(m) * r.beta
        } else {
            r.beta * one_minus_pow_complement(dbar, m) / dbar
        };
        t.delta.push(delta);
        t.epsilon.push(epsilon);
        t.delta_bar.push(dbar);
        t.epsilon_bar.push(ebar);
        t.sigma.push(sigma.min(1.0));
        t.phi.push(pow_u32(delta, m));
        t.psi.push(pow_u32(epsilon, m));
    }
    Ok(t)
}

/// RTBS accuracy, the product of `sigma(1..=n)`.
pub fn rho_rtbs(p: &SimplifiedParams, m: u32, n: u32) -> Result<f64, TheoryError> {
    Ok(rtbs_table(p, m, n)?.rho(n))
}

/// Natural log of [`rho_rtbs`], usable where the product underflows.
pub fn log_rho_rtbs(p: &SimplifiedParams, m: u32, n: u32) -> Result<f64, TheoryError> {
    Ok(rtbs_table(p, m, n)?.log_rho(n))
}

/// RMTP is at least as accurate as non-reflective reasoning at every scale.
pub fn rmtp_improves(p: &SimplifiedParams) -> bool {
    p.e_minus + p.e_plus <= 1.0
}

/// RTBS of width `m` eventually beats RMTP: `f > alpha` and `m > 1/(1-alpha)`.
pub fn rtbs_asymptotically_beats_rmtp(p: &SimplifiedParams, m: u32) -> bool {
    let r = derived_rates(p);
    p.f > r.alpha && f64::from(m) * r.pass() > 1.0
}

/// Expected number of proposals RMTP spends on a correct solution of scale `n`.
pub fn expected_solution_length(p: &SimplifiedParams, n: u32) -> Result<f64, TheoryError> {
    let denom = (1.0 - p.mu) * p.e_plus + p.mu * (1.0 - p.e_minus);
    if denom <= 0.0 {
        return Err(TheoryError::NeverCorrect);
    }
    Ok(f64::from(n) / denom)
}

/// Closed interval of widths for which `sigma_m(n) -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthBand {
    pub lower: f64,
    /// `+inf` when `f = 1`.
    pub upper: f64,
}

impl WidthBand {
    /// Integer widths inside the band (upper end capped at `cap`).
    pub fn integers(&self, cap: u32) -> std::ops::RangeInclusive<u32> {
        let lo = self.lower.ceil().max(1.0) as u32;
        let hi = if self.upper.is_finite() { self.upper.floor().min(f64::from(cap)) as u32 } else { cap };
        lo..=hi
    }
}

/// The band `[1/(mu(1-e_minus)), 1/(1-f)]`.
pub fn sigma_stability_band(p: &SimplifiedParams) -> Result<WidthBand, TheoryError> {
    p.validate()?;
    let beta = p.mu * (1.0 - p.e_minus);
    if beta <= 0.0 {
        return Err(TheoryError::Undefined("stability band needs mu*(1-e_minus) > 0"));
    }
    let lower = 1.0 / beta;
    let upper = if p.f >= 1.0 { f64::INFINITY } else { 1.0 / (1.0 - p.f) };
    if lower > upper {
        return Err(TheoryError::EmptyBand { lower, upper });
    }
    Ok(WidthBand { lower, upper })
}

/// Smallest solution of `x = f + (1-f) x^m` in `[0, 1]`.
///
/// It is below 1 exactly when `f < (m-1)/m`. Found by bisection between `f`
/// and the minimizer of `f + (1-f) x^m - x`.
pub fn epsilon_fixed_point(f: f64, m: u32) -> Result<f64, TheoryError> {
    check_probability("f", f)?;
    if m == 0 {
        return Err(TheoryError::ZeroWidth);
    }
    if f == 0.0 {
        return Ok(0.0);
    }
    let mf = f64::from(m);
    if f * mf >= mf - 1.0 {
        return Ok(1.0);
    }
    let g = |x: f64| f + (1.0 - f) * pow_u32(x, m) - x;
    let mut lo = f;
    let mut hi = (1.0 / (mf * (1.0 - f))).powf(1.0 / (mf - 1.0));
    for _ in 0..200 {
        if hi - lo <= 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest `n <= cap` with `rho_rtbs(m, n) > rho_rmtp(n)`, if any.
pub fn rtbs_crossover(p: &SimplifiedParams, m: u32, cap: u32) -> Result<Option<u32>, TheoryError> {
    let table = rtbs_table(p, m, cap)?;
    let step = rmtp_step_success(p).ln();
    let mut gap = 0.0;
    for n in 1..=cap {
        gap += table.sigma[n as usize].ln() - step;
        if gap > 0.0 {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// CSV of the accuracy curves: `n,rho,rho_rmtp,rho_rtbs_m{m}...`.
pub fn theory_curve_csv(p: &SimplifiedParams, widths: &[u32], n_max: u32) -> Result<String, TheoryError> {
    let tables = widths.iter().map(|&m| rtbs_table(p, m, n_max)).collect::<Result<Vec<_>, _>>()?;
    let mut out = String::from("n,rho,rho_rmtp");
    for m in widths {
        let _ = write!(out, ",rho_rtbs_m{m}");
    }
    out.push('\n');
    let mut running: Vec<f64> = vec![1.0; tables.len()];
    for n in 0..=n_max {
        let _ = write!(out, "{n},{},{}", rho_nonreflective(p.mu, n), rho_rmtp(p, n));
        for (acc, t) in running.iter_mut().zip(&tables) {
            if n > 0 {
                *acc *= t.sigma[n as usize];
            }
            let _ = write!(out, ",{acc}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Attempt-indexed parameters: the `i`-th proposal at a state uses
/// `mu[i-1]`, `e_minus[i-1]`, `e_plus[i-1]`; attempts beyond the end reuse the
/// last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub mu: Vec<f64>,
    pub e_minus: Vec<f64>,
    pub e_plus: Vec<f64>,
    pub f: f64,
    /// Lower bound on the decay ratio `beta_{i+1} / beta_i`.
    pub k: f64,
}

impl PosteriorParams {
    /// Attempt-independent parameters.
    pub fn constant(p: &SimplifiedParams) -> Self {
        PosteriorParams { mu: vec![p.mu], e_minus: vec![p.e_minus], e_plus: vec![p.e_plus], f: p.f, k: 1.0 }
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let len = self.mu.len();
        if len == 0 || self.e_minus.len() != len || self.e_plus.len() != len {
            return Err(TheoryError::Posterior("sequences must be non-empty and of equal length".into()));
        }
        for i in 0..len {
            check_probability("mu_i", self.mu[i])?;
            check_probability("e_minus_i", self.e_minus[i])?;
            check_probability("e_plus_i", self.e_plus[i])?;
        }
        check_probability("f", self.f)?;
        if self.k.is_nan() || self.k < 0.0 {
            return Err(TheoryError::Posterior(format!("k = {} must be nonnegative", self.k)));
        }
        const SLACK: f64 = 1e-12;
        for i in 1..len as u32 {
            let (prev, cur) = (self.rates_at(i), self.rates_at(i + 1));
            if cur.beta > prev.beta + SLACK {
                return Err(TheoryError::Posterior(format!("beta increases at attempt {}", i + 1)));
            }
            if cur.gamma + SLACK < prev.gamma {
                return Err(TheoryError::Posterior(format!("gamma decreases at attempt {}", i + 1)));
            }
            if prev.beta > 0.0 && self.k > cur.beta / prev.beta + SLACK {
                return Err(TheoryError::Posterior(format!("k exceeds the decay ratio at attempt {}", i + 1)));
            }
        }
        Ok(())
    }

    /// Parameters of the 1-based attempt `i`.
    pub fn at(&self, i: u32) -> SimplifiedParams {
        let idx = (i.max(1) as usize - 1).min(self.mu.len() - 1);
        SimplifiedParams { mu: self.mu[idx], e_minus: self.e_minus[idx], e_plus: self.e_plus[idx], f: self.f }
    }

    pub fn rates_at(&self, i: u32) -> DerivedRates {
        derived_rates(&self.at(i))
    }
}

/// Per-step RMTP success probability with attempt-indexed rates:
/// `beta_1 + sum_{i>=2} beta_i * prod_{j<i} alpha_j`.
pub fn posterior_rmtp_step_success(pp: &PosteriorParams) -> Result<f64, TheoryError> {
    pp.validate()?;
    let mut sum = 0.0;
    // Probability that every earlier attempt was rejected on the spot; it
    // bounds the remaining tail of the series.
    let mut reach = 1.0;
    for i in 1..=1_000_000u32 {
        let r = pp.rates_at(i);
        sum += r.beta * reach;
        reach *= r.alpha;
        if reach < 1e-15 {
            break;
        }
    }
    Ok(sum.min(1.0))
}

pub fn posterior_rho_rmtp(pp: &PosteriorParams, n: u32) -> Result<f64, TheoryError> {
    if n == 0 {
        return Ok(1.0);
    }
    Ok(pow_u32(posterior_rmtp_step_success(pp)?, n))
}

/// Rows of the attempt-indexed RTBS recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRtbsTable {
    pub m: u32,
    /// `delta[n][i-1]`: rejection probability of the `i`-th attempt at scale `n`.
    pub delta: Vec<Vec<f64>>,
    pub epsilon: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PosteriorRtbsTable {
    pub fn rho(&self, n: u32) -> f64 {
        self.sigma[1..=n as usize].iter().product()
    }
}

pub fn posterior_rtbs_table(pp: &PosteriorParams, m: u32, n_max: u32) -> Result<PosteriorRtbsTable, TheoryError> {
    if m == 0 {
        return Err(TheoryError::ZeroWidth);
    }
    pp.validate()?;
    let rates: Vec<DerivedRates> = (1..=m).map(|i| pp.rates_at(i)).collect();
    let sigma_of = |delta: &[f64]| {
        let mut s = rates[0].beta;
        let mut prefix = 1.0;
        for j in 1..m as usize {
            prefix *= delta[j - 1];
            s += rates[j].beta * prefix;
        }
        s.min(1.0)
    };
    let mut delta = vec![vec![0.0; m as usize]];
    let mut epsilon = vec![0.0];
    let mut sigma = vec![sigma_of(&delta[0])];
    for n in 1..=n_max as usize {
        let child_fail: f64 = delta[n - 1].iter().product();
        let eps_m = pow_u32(epsilon[n - 1], m);
        let row: Vec<f64> = rates.iter().map(|r| (r.alpha + r.beta * child_fail + r.gamma * eps_m).min(1.0)).collect();
        epsilon.push(pp.f + (1.0 - pp.f) * eps_m);
        sigma.push(sigma_of(&row));
        delta.push(row);
    }
    Ok(PosteriorRtbsTable { m, delta, epsilon, sigma })
}

/// Sufficient condition for RMTP to improve on non-reflective reasoning under
/// attempt-indexed rates: `e1_minus / (k (1 - mu_1)) + sup_i e_plus_i < 1`.
pub fn posterior_sufficient_condition(pp: &PosteriorParams) -> Result<bool, TheoryError> {
    pp.validate()?;
    let mu1 = pp.mu[0];
    if mu1 >= 1.0 {
        return Err(TheoryError::Undefined("sufficient condition is undefined for mu_1 = 1"));
    }
    let e1 = pp.e_minus[0];
    let lead = if e1 == 0.0 { 0.0 } else { e1 / (pp.k * (1.0 - mu1)) };
    let sup_plus = pp.e_plus.iter().copied().fold(0.0, f64::max);
    Ok(lead + sup_plus < 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_params() -> SimplifiedParams {
        SimplifiedParams::new(0.8, 0.3, 0.2, 0.8).unwrap()
    }

    /// Straightforward recursion on delta and epsilon themselves.
    fn naive_rho_rtbs(p: &SimplifiedParams, m: u32, n: u32) -> f64 {
        let r = derived_rates(p);
        let (mut d, mut e, mut acc) = (0.0f64, 0.0f64, 1.0);
        for _ in 0..n {
            let (dm, em) = (d.powi(m as i32), e.powi(m as i32));
            d = r.alpha + r.beta * dm + r.gamma * em;
            e = p.f + (1.0 - p.f) * em;
            acc *= if d == 1.0 { m as f64 * r.beta } else { r.beta * (1.0 - d.powi(m as i32)) / (1.0 - d) };
        }
        acc
    }

    #[test]
    fn derived_rates_examples() {
        let r = reference_params().rates();
        assert!((r.alpha - 0.4).abs() < 1e-15);
        assert!((r.beta - 0.56).abs() < 1e-15);
        assert!((r.gamma - 0.04).abs() < 1e-15);
        let r = SimplifiedParams::new(0.37, 0.0, 0.0, 0.5).unwrap().rates();
        assert_eq!((r.alpha, r.beta, r.gamma), (1.0 - 0.37, 0.37, 0.0));
        let r = SimplifiedParams::new(0.5, 1.0, 0.0, 0.5).unwrap().rates();
        assert_eq!((r.alpha, r.beta), (1.0, 0.0));
    }

    #[test]
    fn validation_rejects_nan_and_out_of_range() {
        assert_eq!(SimplifiedParams::new(f64::NAN, 0.1, 0.1, 0.1), Err(TheoryError::NotANumber("mu")));
        assert!(matches!(SimplifiedParams::new(0.5, 1.1, 0.1, 0.1), Err(TheoryError::OutOfRange { .. })));
        assert!(SimplifiedParams::new(0.0, 1.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn nonreflective_and_rmtp_closed_forms() {
        assert_eq!(rho_nonreflective(1.0, 7), 1.0);
        assert_eq!(rho_nonreflective(0.8, 1), 0.8);
        assert_eq!(rho_nonreflective(0.3, 0), 1.0);
        let p = reference_params();
        assert!((rho_rmtp(&p, 1) - 0.56 / 0.6).abs() < 1e-15);
        let perfect = SimplifiedParams::new(0.3, 0.0, 0.0, 0.5).unwrap();
        assert!((rho_rmtp(&perfect, 9) - 1.0).abs() < 1e-15);
        let boundary = SimplifiedParams::new(0.7, 0.35, 0.65, 0.5).unwrap();
        assert!((rho_rmtp(&boundary, 6) - 0.7f64.powi(6)).abs() < 1e-14);
        let stuck = SimplifiedParams::new(0.5, 1.0, 0.0, 0.5).unwrap();
        assert_eq!(rho_rmtp(&stuck, 3), 0.0);
        assert_eq!(rho_rmtp(&stuck, 0), 1.0);
        assert!(stuck.rates().is_degenerate());
    }

    #[test]
    fn rtbs_table_base_row_and_monotonicity() {
        let p = reference_params();
        let t = rtbs_table(&p, 4, 60).unwrap();
        assert_eq!((t.delta[0], t.epsilon[0]), (0.0, 0.0));
        assert!((t.delta[1] - 0.4).abs() < 1e-15);
        assert!((t.epsilon[1] - 0.8).abs() < 1e-15);
        for w in 1..t.delta.len() {
            assert!(t.delta[w] >= t.delta[w - 1]);
            assert!(t.epsilon[w] >= t.epsilon[w - 1]);
            assert!(t.sigma[w] >= t.sigma[w - 1] - 1e-16);
        }
    }

    #[test]
    fn rtbs_matches_high_precision_values() {
        // Values from a 60-digit evaluation of the recursion.
        let p = reference_params();
        let cases = [
            (4, 10, 0.771_172_024_465_164_6),
            (2, 20, 0.354_447_443_075_548_3),
            (4, 20, 0.759_335_388_956_508_8),
            (1, 5, 0.055_073_177_6),
            (16, 30, 0.134_229_694_436_931_98),
            (64, 30, 0.126_212_923_270_477_37),
        ];
        for (m, n, want) in cases {
            let got = rho_rtbs(&p, m, n).unwrap();
            assert!((got - want).abs() < 1e-13, "m={m} n={n}: {got} vs {want}");
            assert!((got - naive_rho_rtbs(&p, m, n)).abs() < 1e-12);
        }
        assert!(rho_rtbs(&p, 4, 20).unwrap() > rho_rtbs(&p, 2, 20).unwrap());
        assert_eq!(rho_rtbs(&p, 3, 0).unwrap(), 1.0);
    }

    #[test]
    fn sigma_singularity_uses_limit() {
        // alpha = 1: every proposal rejected, delta stays 1.
        let p = SimplifiedParams::new(0.5, 1.0, 0.0, 0.5).unwrap();
        let t = rtbs_table(&p, 3, 4).unwrap();
        assert_eq!(t.delta[2], 1.0);
        assert_eq!(t.sigma[2], 0.0);
    }

    #[test]
    fn large_width_approaches_rmtp() {
        let p = reference_params();
        let rmtp = rho_rmtp(&p, 15);
        let gaps: Vec<f64> = [8, 32, 128, 512].iter().map(|&m| (rho_rtbs(&p, m, 15).unwrap() - rmtp).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
        assert!(gaps[3] < 1e-12);
    }

    #[test]
    fn predicates() {
        let p = reference_params();
        assert!(rmtp_improves(&p));
        assert!(rmtp_improves(&SimplifiedParams::new(0.5, 0.5, 0.5, 0.5).unwrap()));
        assert!(!rmtp_improves(&SimplifiedParams::new(0.5, 0.7, 0.6, 0.5).unwrap()));
        assert!(rtbs_asymptotically_beats_rmtp(&p, 4));
        assert!(!rtbs_asymptotically_beats_rmtp(&p, 1));
        let below_alpha = SimplifiedParams::new(0.8, 0.3, 0.2, 0.35).unwrap();
        assert!(!rtbs_asymptotically_beats_rmtp(&below_alpha, 50));
    }

    #[test]
    fn solution_length() {
        let p = SimplifiedParams::new(1.0, 0.0, 0.3, 0.5).unwrap();
        assert_eq!(expected_solution_length(&p, 9).unwrap(), 9.0);
        let p = SimplifiedParams::new(0.8, 0.0, 0.0, 0.5).unwrap();
        assert!((expected_solution_length(&p, 10).unwrap() - 12.5).abs() < 1e-12);
        let p = SimplifiedParams::new(0.6, 1.0, 0.0, 0.5).unwrap();
        assert_eq!(expected_solution_length(&p, 3), Err(TheoryError::NeverCorrect));
    }

    #[test]
    fn stability_band() {
        let b = sigma_stability_band(&reference_params()).unwrap();
        assert!((b.lower - 1.0 / 0.56).abs() < 1e-12);
        assert!((b.upper - 5.0).abs() < 1e-12);
        assert_eq!(b.integers(100), 2..=5);
        let open = sigma_stability_band(&SimplifiedParams::new(0.8, 0.3, 0.2, 1.0).unwrap()).unwrap();
        assert!(open.upper.is_infinite());
        let empty = SimplifiedParams::new(0.3, 0.5, 0.2, 0.5).unwrap();
        assert!(matches!(sigma_stability_band(&empty), Err(TheoryError::EmptyBand { .. })));
    }

    #[test]
    fn fixed_point() {
        assert_eq!(epsilon_fixed_point(0.75, 4).unwrap(), 1.0);
        assert_eq!(epsilon_fixed_point(0.9, 4).unwrap(), 1.0);
        assert_eq!(epsilon_fixed_point(0.0, 4).unwrap(), 0.0);
        assert_eq!(epsilon_fixed_point(0.0, 1).unwrap(), 0.0);
        assert_eq!(epsilon_fixed_point(0.2, 1).unwrap(), 1.0);
        // 60-digit bisection of x = 0.5 + 0.5 x^4.
        let x = epsilon_fixed_point(0.5, 4).unwrap();
        assert!((x - 0.543_689_012_692_076_4).abs() < 1e-12);
        let mut e = 0.0f64;
        for _ in 0..10_000 {
            e = 0.5 + 0.5 * e.powi(4);
        }
        assert!((e - x).abs() < 1e-9);
    }

    #[test]
    fn crossover_scan() {
        let p = reference_params();
        let n = rtbs_crossover(&p, 4, 200).unwrap().expect("crossover exists");
        assert!(rho_rtbs(&p, 4, n).unwrap() > rho_rmtp(&p, n));
        assert!(rho_rtbs(&p, 4, n - 1).unwrap() <= rho_rmtp(&p, n - 1));
        assert_eq!(rtbs_crossover(&p, 1, 200).unwrap(), None);
    }

    #[test]
    fn curve_csv_header_and_rows() {
        let csv = theory_curve_csv(&reference_params(), &[1, 4], 3).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,rho,rho_rmtp,rho_rtbs_m1,rho_rtbs_m4");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0,1,1,1,1");
    }

    #[test]
    fn posterior_reduces_to_constant_case() {
        let p = reference_params();
        let pp = PosteriorParams::constant(&p);
        for n in [0, 1, 5, 20] {
            assert!((posterior_rho_rmtp(&pp, n).unwrap() - rho_rmtp(&p, n)).abs() < 1e-12);
        }
        for m in [1, 2, 4, 7] {
            let a = rtbs_table(&p, m, 30).unwrap();
            let b = posterior_rtbs_table(&pp, m, 30).unwrap();
            for n in 0..=30 {
                assert!((a.sigma[n] - b.sigma[n]).abs() < 1e-12, "m={m} n={n}");
                assert!((a.epsilon[n] - b.epsilon[n]).abs() < 1e-12);
            }
        }
        let b = posterior_rtbs_table(&pp, 3, 1).unwrap();
        assert!(b.delta[1].iter().all(|d| (d - 0.4).abs() < 1e-15));
    }

    #[test]
    fn posterior_geometric_decay_closed_form() {
        // beta halves per attempt; the last entry repeats, giving a geometric tail.
        let pp = PosteriorParams {
            mu: vec![0.8, 0.4, 0.2],
            e_minus: vec![0.1; 3],
            e_plus: vec![0.2; 3],
            f: 0.5,
            k: 0.5,
        };
        pp.validate().unwrap();
        let r: Vec<DerivedRates> = (1..=3).map(|i| pp.rates_at(i)).collect();
        let want = r[0].beta + r[1].beta * r[0].alpha + r[0].alpha * r[1].alpha * r[2].beta / (1.0 - r[2].alpha);
        let got = posterior_rmtp_step_success(&pp).unwrap();
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        assert!((posterior_rho_rmtp(&pp, 4).unwrap() - want.powi(4)).abs() < 1e-14);
        // Decaying beta lowers sigma relative to the attempt-independent case.
        let flat = PosteriorParams::constant(&pp.at(1));
        let a = posterior_rtbs_table(&pp, 4, 20).unwrap();
        let b = posterior_rtbs_table(&flat, 4, 20).unwrap();
        for n in 1..=20 {
            assert!(a.sigma[n] < b.sigma[n]);
        }
    }

    #[test]
    fn sufficient_condition() {
        let too_fast = PosteriorParams { mu: vec![0.5, 0.4], e_minus: vec![0.3, 0.3], e_plus: vec![0.2, 0.2], f: 0.5, k: 0.9 };
        let decayed = PosteriorParams {
            mu: vec![0.5, 0.25],
            e_minus: vec![0.3, 0.3],
            e_plus: vec![0.2, 0.2],
            f: 0.5,
            k: 0.5,
        };
        assert!(too_fast.validate().is_err());
        assert!(decayed.validate().is_ok());
        assert_eq!(posterior_sufficient_condition(&decayed), Ok(false));
        let zero = PosteriorParams { mu: vec![0.5], e_minus: vec![0.0], e_plus: vec![0.4], f: 0.5, k: 1.0 };
        assert_eq!(posterior_sufficient_condition(&zero), Ok(true));
        let one = PosteriorParams { mu: vec![1.0], e_minus: vec![0.1], e_plus: vec![0.1], f: 0.5, k: 1.0 };
        assert!(posterior_sufficient_condition(&one).is_err());
    }
}
