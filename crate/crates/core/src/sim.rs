//! Monte-Carlo simulation of the simplified reasoning task.
//!
//! States carry a scale (steps left to the answer) and a polarity. On a
//! positive state the synthetic self-verifying policy draws one of four
//! outcomes in a single categorical draw: correct and accepted (`beta`),
//! correct but rejected (`mu * e_minus`), incorrect but accepted (`gamma`),
//! incorrect and rejected. On a negative state it rejects with probability
//! `f` and otherwise descends to another negative state. Episodes run through
//! the same executors as the concrete tasks.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mtp::{
    execute_nonreflective, Counter, MtpError, Outcome, Policy, Query, QueryPayload, ReasoningStep,
    SelfVerifyingPolicy, Task, TaskKind, Transition, TransitionError, Verification, VerifiedStep,
};
use crate::reflect::{execute, ReflectConfig, RootAttempts};
use crate::rng::{Seed, StreamRng};
use crate::stats::{binomial_zscore, wilson99, Interval};
use crate::theory::{self, PosteriorParams, SimplifiedParams, TheoryError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("episodes must be at least 1")]
    NoEpisodes,
    #[error("no episode ended correctly")]
    NoSuccesses,
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Mtp(#[from] MtpError),
}

/// Polarity of a synthetic state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticState {
    pub scale: u32,
    pub polarity: Polarity,
}

impl SyntheticState {
    pub fn positive(scale: u32) -> Self {
        SyntheticState { scale, polarity: Polarity::Positive }
    }

    pub fn negative(scale: u32) -> Self {
        SyntheticState { scale, polarity: Polarity::Negative }
    }

    fn child(&self, polarity: Polarity) -> SyntheticStep {
        SyntheticStep { next: SyntheticState { scale: self.scale.saturating_sub(1), polarity } }
    }
}

/// A synthetic step, identified by the state it leads to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticStep {
    pub next: SyntheticState,
}

impl ReasoningStep for SyntheticStep {
    fn is_answer(&self) -> bool {
        self.next.scale == 0
    }
}

/// The simplified task: a chain of `n` steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticTask;

impl Transition for SyntheticTask {
    type State = SyntheticState;
    type Step = SyntheticStep;

    fn apply(&self, state: &SyntheticState, step: &SyntheticStep) -> Result<SyntheticState, TransitionError> {
        if state.scale == 0 || step.next.scale + 1 != state.scale {
            return Err(TransitionError(format!("scale {} cannot step to {}", state.scale, step.next.scale)));
        }
        if state.polarity == Polarity::Negative && step.next.polarity == Polarity::Positive {
            return Err(TransitionError("negative states only lead to negative states".into()));
        }
        Ok(step.next)
    }
}

impl Task for SyntheticTask {
    fn kind(&self) -> TaskKind {
        TaskKind::Synthetic
    }

    fn initial_state(&self, query: &Query) -> Result<SyntheticState, MtpError> {
        match query.payload {
            QueryPayload::Synthetic { scale } => Ok(SyntheticState::positive(scale)),
            _ => Err(MtpError::TaskMismatch { query: query.task(), task: TaskKind::Synthetic }),
        }
    }

    fn check_answer(&self, _query: &Query, answer: &SyntheticStep) -> bool {
        answer.next.scale == 0 && answer.next.polarity == Polarity::Positive
    }

    fn immediate_answer(&self, state: &SyntheticState) -> Option<SyntheticStep> {
        (state.scale == 0).then_some(SyntheticStep { next: *state })
    }
}

/// Self-verifying policy parameterized by `(mu, e_minus, e_plus, f)`, with
/// optional attempt-indexed overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPolicy {
    pub params: SimplifiedParams,
    pub posterior: Option<PosteriorParams>,
}

impl SyntheticPolicy {
    pub fn new(params: SimplifiedParams) -> Self {
        SyntheticPolicy { params, posterior: None }
    }

    pub fn with_posterior(posterior: PosteriorParams) -> Self {
        SyntheticPolicy { params: posterior.at(1), posterior: Some(posterior) }
    }

    fn params_at(&self, attempt: u32) -> SimplifiedParams {
        match &self.posterior {
            Some(pp) => pp.at(attempt),
            None => self.params,
        }
    }
}

impl SelfVerifyingPolicy<SyntheticState, SyntheticStep> for SyntheticPolicy {
    fn plan(&self, state: &SyntheticState, attempt: u32, rng: &mut StreamRng) -> SyntheticStep {
        match state.polarity {
            Polarity::Positive if rng.uniform() < self.params_at(attempt).mu => state.child(Polarity::Positive),
            _ => state.child(Polarity::Negative),
        }
    }

    fn plan_verified(&self, state: &SyntheticState, attempt: u32, rng: &mut StreamRng) -> VerifiedStep<SyntheticStep> {
        let p = self.params_at(attempt);
        let u = rng.uniform();
        let (polarity, accept) = match state.polarity {
            Polarity::Positive => {
                let r = theory::derived_rates(&p);
                if u < r.beta {
                    (Polarity::Positive, true)
                } else if u < p.mu {
                    (Polarity::Positive, false)
                } else if u < p.mu + r.gamma {
                    (Polarity::Negative, true)
                } else {
                    (Polarity::Negative, false)
                }
            }
            Polarity::Negative => (Polarity::Negative, u >= p.f),
        };
        VerifiedStep::new(state.child(polarity), Verification::verdict(accept))
    }
}

/// Non-reflective use of the synthetic policy.
impl Policy<SyntheticState, SyntheticStep> for SyntheticPolicy {
    fn sample(&self, state: &SyntheticState, rng: &mut StreamRng) -> SyntheticStep {
        self.plan(state, 1, rng)
    }
}

/// Execution mode of a simulated episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "m")]
pub enum Mode {
    None,
    Rmtp,
    Rtbs(u32),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Rmtp => "rmtp",
            Mode::Rtbs(_) => "rtbs",
        }
    }

    pub fn width(&self) -> Option<u32> {
        match self {
            Mode::Rtbs(m) => Some(*m),
            _ => None,
        }
    }

    /// Accuracy predicted by the theory module.
    pub fn theory(&self, p: &SimplifiedParams, n: u32) -> Result<f64, TheoryError> {
        match self {
            Mode::None => Ok(theory::rho_nonreflective(p.mu, n)),
            Mode::Rmtp => Ok(theory::rho_rmtp(p, n)),
            Mode::Rtbs(m) => theory::rho_rtbs(p, *m, n),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    /// `none`, `rmtp`, `rtbs` (width 4) or `rtbs:<m>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        match lower.split_once(':') {
            None => match lower.as_str() {
                "none" | "nonreflective" => Ok(Mode::None),
                "rmtp" => Ok(Mode::Rmtp),
                "rtbs" => Ok(Mode::Rtbs(4)),
                _ => Err(format!("unknown mode {s:?}")),
            },
            Some(("rtbs", m)) => m.parse().map(Mode::Rtbs).map_err(|_| format!("bad RTBS width in {s:?}")),
            Some(_) => Err(format!("unknown mode {s:?}")),
        }
    }
}

/// Proposal cap per simulated episode.
pub const EPISODE_PROPOSAL_CAP: u64 = 1_000_000;

/// Fraction of budget-exhausted episodes above which a result is flagged.
pub const BUDGET_FLAG_FRACTION: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    Ok,
    /// Too many episodes hit the proposal cap for the estimate to be trusted.
    BudgetDominated,
}

/// Outcome counts of one simulated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub episodes: u64,
    pub successes: u64,
    pub accuracy_hat: f64,
    pub wilson_ci: Interval,
    /// Mean proposals over correct episodes; `None` without successes.
    pub mean_length_correct: Option<f64>,
    pub budget_exhausted: u64,
    pub seed: u64,
    pub status: SimStatus,
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    episodes: u64,
    successes: u64,
    exhausted: u64,
    correct_proposals: u64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            episodes: self.episodes + o.episodes,
            successes: self.successes + o.successes,
            exhausted: self.exhausted + o.exhausted,
            correct_proposals: self.correct_proposals + o.correct_proposals,
        }
    }

    fn into_result(self, seed: Seed) -> SimResult {
        let accuracy_hat = self.successes as f64 / self.episodes as f64;
        let status = if self.exhausted as f64 > BUDGET_FLAG_FRACTION * self.episodes as f64 {
            SimStatus::BudgetDominated
        } else {
            SimStatus::Ok
        };
        SimResult {
            episodes: self.episodes,
            successes: self.successes,
            accuracy_hat,
            wilson_ci: wilson99(self.successes, self.episodes),
            mean_length_correct: (self.successes > 0)
                .then(|| self.correct_proposals as f64 / self.successes as f64),
            budget_exhausted: self.exhausted,
            seed: seed.0,
            status,
        }
    }
}

/// Runs one synthetic episode and reports (outcome, proposals).
pub fn run_synthetic_episode(
    policy: &SyntheticPolicy,
    n: u32,
    mode: Mode,
    config: &ReflectConfig,
    rng: &mut StreamRng,
) -> Result<(Outcome, u64), SimError> {
    let query = Query::synthetic(n);
    let mut counter = Counter::default();
    let summary = match mode {
        Mode::None => execute_nonreflective(&SyntheticTask, policy, &query, config.total_budget, rng, &mut counter)?,
        Mode::Rmtp => execute(&SyntheticTask, policy, &query, config, None, rng, &mut counter)?,
        Mode::Rtbs(m) => execute(&SyntheticTask, policy, &query, config, Some(m), rng, &mut counter)?,
    };
    Ok((summary.outcome, counter.proposals))
}

/// Budgets used for simulation: unlimited reflection, a large proposal cap,
/// and the query state limited to `m` attempts like every other state.
pub fn simulation_config(mode: Mode) -> ReflectConfig {
    ReflectConfig {
        reflective_budget: u64::MAX,
        total_budget: EPISODE_PROPOSAL_CAP,
        width: mode.width().unwrap_or(1),
        root: RootAttempts::Width,
    }
}

fn simulate_range(
    policy: &SyntheticPolicy,
    n: u32,
    mode: Mode,
    seed: Seed,
    range: std::ops::Range<u64>,
) -> Result<Tally, SimError> {
    let config = simulation_config(mode);
    range
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.stream(i);
            let (outcome, proposals) = run_synthetic_episode(policy, n, mode, &config, &mut rng)?;
            Ok(Tally {
                episodes: 1,
                successes: u64::from(outcome == Outcome::Correct),
                exhausted: u64::from(outcome == Outcome::BudgetExhausted),
                correct_proposals: if outcome == Outcome::Correct { proposals } else { 0 },
            })
        })
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))
}

/// Estimates the accuracy of `mode` at scale `n`.
pub fn simulate_accuracy(
    params: &SimplifiedParams,
    n: u32,
    mode: Mode,
    episodes: u64,
    seed: Seed,
) -> Result<SimResult, SimError> {
    simulate_policy(&SyntheticPolicy::new(*params), n, mode, episodes, seed)
}

/// [`simulate_accuracy`] for an arbitrary synthetic policy.
pub fn simulate_policy(
    policy: &SyntheticPolicy,
    n: u32,
    mode: Mode,
    episodes: u64,
    seed: Seed,
) -> Result<SimResult, SimError> {
    if episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    policy.params.validate()?;
    Ok(simulate_range(policy, n, mode, seed, 0..episodes)?.into_result(seed))
}

/// Mean solution length of correct RMTP episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthEstimate {
    pub mean: f64,
    pub correct_episodes: u64,
    pub episodes: u64,
}

/// Mean number of proposals (rejected ones included) over RMTP episodes that
/// end correctly.
pub fn simulate_length(params: &SimplifiedParams, n: u32, episodes: u64, seed: Seed) -> Result<LengthEstimate, SimError> {
    if episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    params.validate()?;
    let t = simulate_range(&SyntheticPolicy::new(*params), n, Mode::Rmtp, seed, 0..episodes)?;
    length_from(t)
}

/// Like [`simulate_length`], but keeps adding episodes until at least
/// `min_correct` of them end correctly (or `max_episodes` are spent).
pub fn simulate_length_until(
    params: &SimplifiedParams,
    n: u32,
    min_correct: u64,
    max_episodes: u64,
    seed: Seed,
) -> Result<LengthEstimate, SimError> {
    params.validate()?;
    let policy = SyntheticPolicy::new(*params);
    let batch = min_correct.max(1000);
    let mut total = Tally::default();
    while total.successes < min_correct && total.episodes < max_episodes {
        let end = (total.episodes + batch).min(max_episodes);
        total = total.merge(simulate_range(&policy, n, Mode::Rmtp, seed, total.episodes..end)?);
    }
    length_from(total)
}

fn length_from(t: Tally) -> Result<LengthEstimate, SimError> {
    if t.successes == 0 {
        return Err(SimError::NoSuccesses);
    }
    Ok(LengthEstimate {
        mean: t.correct_proposals as f64 / t.successes as f64,
        correct_episodes: t.successes,
        episodes: t.episodes,
    })
}

/// Theory crossover of RTBS over RMTP, with an optional simulated check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverReport {
    /// Smallest scale where RTBS is predicted to beat RMTP.
    pub crossover_n: Option<u32>,
    /// Scale of the simulated confirmation (`crossover_n + 5`).
    pub check_n: Option<u32>,
    pub rtbs: Option<SimResult>,
    pub rmtp: Option<SimResult>,
}

impl CrossoverReport {
    /// RTBS simulated strictly above RMTP at the check scale.
    pub fn confirmed(&self) -> Option<bool> {
        match (&self.rtbs, &self.rmtp) {
            (Some(a), Some(b)) => Some(a.accuracy_hat > b.accuracy_hat),
            _ => None,
        }
    }
}

/// Scans theory values for the first scale with RTBS above RMTP; when
/// `episodes > 0` simulates both five scales later.
pub fn crossover_scan(
    params: &SimplifiedParams,
    m: u32,
    n_max: u32,
    episodes: u64,
    seed: Seed,
) -> Result<CrossoverReport, SimError> {
    let crossover_n = theory::rtbs_crossover(params, m, n_max)?;
    let mut report = CrossoverReport { crossover_n, check_n: None, rtbs: None, rmtp: None };
    if let (Some(n), true) = (crossover_n, episodes > 0) {
        let check = n + 5;
        report.check_n = Some(check);
        report.rtbs = Some(simulate_accuracy(params, check, Mode::Rtbs(m), episodes, seed.named("rtbs"))?);
        report.rmtp = Some(simulate_accuracy(params, check, Mode::Rmtp, episodes, seed.named("rmtp"))?);
    }
    Ok(report)
}

/// A simulated point next to its theory value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPoint {
    pub n: u32,
    pub mode: Mode,
    pub result: SimResult,
    pub theory: f64,
    pub zscore: f64,
}

/// Seed of the point `(n, mode)` derived from a root seed.
pub fn point_seed(root: Seed, n: u32, mode: Mode) -> Seed {
    root.named(mode.name()).child(u64::from(mode.width().unwrap_or(0))).child(u64::from(n))
}

/// Simulates every `(n, mode)` pair and compares it to theory.
pub fn simulate_grid(
    params: &SimplifiedParams,
    modes: &[Mode],
    ns: &[u32],
    episodes: u64,
    seed: Seed,
) -> Result<Vec<SimPoint>, SimError> {
    let mut points = Vec::with_capacity(modes.len() * ns.len());
    for &mode in modes {
        for &n in ns {
            let result = simulate_accuracy(params, n, mode, episodes, point_seed(seed, n, mode))?;
            let theory = mode.theory(params, n)?;
            let zscore = binomial_zscore(result.successes, result.episodes, theory);
            points.push(SimPoint { n, mode, result, theory, zscore });
        }
    }
    Ok(points)
}

pub const SIM_CSV_HEADER: &str = "n,mode,m,episodes,acc_hat,ci_lo,ci_hi,theory,zscore";

/// CSV rows with header [`SIM_CSV_HEADER`].
pub fn sim_points_csv(points: &[SimPoint]) -> String {
    let mut out = String::from(SIM_CSV_HEADER);
    out.push('\n');
    for p in points {
        let m = p.mode.width().map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.n,
            p.mode.name(),
            m,
            p.result.episodes,
            p.result.accuracy_hat,
            p.result.wilson_ci.lo,
            p.result.wilson_ci.hi,
            p.theory,
            p.zscore
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtp::Disposition;
    use crate::reflect::{run_rmtp, run_rtbs};

    fn reference_params() -> SimplifiedParams {
        SimplifiedParams::new(0.8, 0.3, 0.2, 0.8).unwrap()
    }

    #[test]
    fn perfect_policy_is_always_correct() {
        let p = SimplifiedParams::new(1.0, 0.0, 0.0, 0.5).unwrap();
        for mode in [Mode::None, Mode::Rmtp, Mode::Rtbs(3)] {
            let r = simulate_accuracy(&p, 7, mode, 500, Seed(1)).unwrap();
            assert_eq!(r.successes, 500);
            assert_eq!(r.status, SimStatus::Ok);
        }
        let l = simulate_length(&p, 10, 200, Seed(2)).unwrap();
        assert_eq!(l.mean, 10.0);
    }

    #[test]
    fn scale_zero_is_immediately_correct() {
        let r = simulate_accuracy(&reference_params(), 0, Mode::Rtbs(2), 100, Seed(1)).unwrap();
        assert_eq!(r.successes, 100);
        assert_eq!(r.mean_length_correct, Some(0.0));
    }

    #[test]
    fn same_seed_same_result() {
        let a = simulate_accuracy(&reference_params(), 6, Mode::Rtbs(4), 3000, Seed(77)).unwrap();
        let b = simulate_accuracy(&reference_params(), 6, Mode::Rtbs(4), 3000, Seed(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rmtp_single_step_matches_ratio() {
        let r = simulate_accuracy(&reference_params(), 1, Mode::Rmtp, 200_000, Seed(3)).unwrap();
        assert!(binomial_zscore(r.successes, r.episodes, 0.56 / 0.6).abs() < 4.0);
    }

    #[test]
    fn degenerate_rmtp_is_flagged() {
        let p = SimplifiedParams::new(0.5, 1.0, 0.0, 0.5).unwrap();
        let mut config = simulation_config(Mode::Rmtp);
        config.total_budget = 50;
        let (outcome, proposals) =
            run_synthetic_episode(&SyntheticPolicy::new(p), 3, Mode::Rmtp, &config, &mut Seed(1).stream(0)).unwrap();
        assert_eq!(outcome, Outcome::BudgetExhausted);
        assert_eq!(proposals, 50);
    }

    #[test]
    fn polarity_never_recovers_without_traceback() {
        let policy = SyntheticPolicy::new(SimplifiedParams::new(0.6, 0.2, 0.4, 0.5).unwrap());
        let config = ReflectConfig::unbounded(3, RootAttempts::Width);
        for i in 0..300 {
            let q = Query::synthetic(8);
            for record in [
                run_rmtp(&SyntheticTask, &policy, &q, &config, &mut Seed(5).stream(i)).unwrap(),
                run_rtbs(&SyntheticTask, &policy, &q, &config, &mut Seed(6).stream(i)).unwrap(),
            ] {
                let mut negative = false;
                for e in &record.events {
                    match e.disposition {
                        Disposition::Accepted => {
                            assert!(!(negative && e.step.step.next.polarity == Polarity::Positive));
                            negative = e.step.step.next.polarity == Polarity::Negative;
                        }
                        Disposition::Traceback => negative = e.state.polarity == Polarity::Negative,
                        Disposition::Rejected => {}
                    }
                }
            }
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("rtbs:16".parse::<Mode>().unwrap(), Mode::Rtbs(16));
        assert_eq!("RMTP".parse::<Mode>().unwrap(), Mode::Rmtp);
        assert!("beam".parse::<Mode>().is_err());
    }

    #[test]
    fn csv_layout() {
        let points = simulate_grid(&reference_params(), &[Mode::Rtbs(4)], &[2], 100, Seed(1)).unwrap();
        let csv = sim_points_csv(&points);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SIM_CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("2,rtbs,4,100,"));
    }
}
