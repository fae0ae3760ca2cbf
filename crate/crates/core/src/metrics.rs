//! Evaluation quantities measured from episode logs: first-attempt
//! verification error rates, reflection frequency, accuracy tables and
//! theory-versus-simulation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TaskEpisode;
use crate::mtp::{Disposition, EpisodeRecord, QueryPayload};
use crate::rng::Seed;
use crate::sim::{self, Mode, SimError, SimPoint};
use crate::stats::{wilson99, Interval};
use crate::tasks::mult::{digit_count, MultTask};
use crate::tasks::sudoku::SudokuTask;
use crate::tasks::{DifficultyTier, StepOracle};
use crate::theory::SimplifiedParams;

/// First-attempt verification error rates. A rate is `None` when no step of
/// the conditioning kind was observed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub e_plus_hat: Option<f64>,
    pub e_minus_hat: Option<f64>,
    pub n_first_attempts: u64,
    /// First attempts whose step the oracle judged correct.
    pub n_correct_steps: u64,
    /// Correct steps that were rejected.
    pub false_rejections: u64,
    pub n_incorrect_steps: u64,
    /// Incorrect steps that were accepted.
    pub false_acceptances: u64,
}

impl ErrorEstimate {
    fn from_counts(c: ErrorCounts) -> Self {
        let ratio = |k: u64, n: u64| (n > 0).then(|| k as f64 / n as f64);
        ErrorEstimate {
            e_plus_hat: ratio(c.false_acceptances, c.incorrect),
            e_minus_hat: ratio(c.false_rejections, c.correct),
            n_first_attempts: c.correct + c.incorrect,
            n_correct_steps: c.correct,
            false_rejections: c.false_rejections,
            n_incorrect_steps: c.incorrect,
            false_acceptances: c.false_acceptances,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ErrorCounts {
    correct: u64,
    false_rejections: u64,
    incorrect: u64,
    false_acceptances: u64,
}

impl ErrorCounts {
    fn merge(self, o: ErrorCounts) -> ErrorCounts {
        ErrorCounts {
            correct: self.correct + o.correct,
            false_rejections: self.false_rejections + o.false_rejections,
            incorrect: self.incorrect + o.incorrect,
            false_acceptances: self.false_acceptances + o.false_acceptances,
        }
    }
}

fn count_errors<S: PartialEq, R, O: StepOracle<S, R> + ?Sized>(record: &EpisodeRecord<S, R>, oracle: &O) -> ErrorCounts {
    let mut c = ErrorCounts::default();
    let mut seen: Vec<(u32, &S)> = Vec::new();
    for e in &record.events {
        // Only the first proposal at a state, and only when it was verified.
        if e.attempt != 1 || e.disposition == Disposition::Traceback || e.step.verification.is_empty() {
            continue;
        }
        // Re-entering the same state at the same depth is not a new state.
        if seen.iter().any(|&(d, s)| d == e.depth && *s == e.state) {
            continue;
        }
        seen.push((e.depth, &e.state));
        let rejected = e.disposition == Disposition::Rejected;
        if oracle.step_ok(&e.state, &e.step.step) {
            c.correct += 1;
            c.false_rejections += u64::from(rejected);
        } else {
            c.incorrect += 1;
            c.false_acceptances += u64::from(!rejected);
        }
    }
    c
}

/// Measures `e_plus` and `e_minus` over the first verified proposal at each
/// state of the accepted chain. States revisited after a traceback do not
/// contribute again.
pub fn estimate_verification_errors<S, R, O>(records: &[EpisodeRecord<S, R>], oracle: &O) -> ErrorEstimate
where
    S: PartialEq + Sync,
    R: Sync,
    O: StepOracle<S, R> + Sync + ?Sized,
{
    let counts = records
        .par_iter()
        .map(|r| count_errors(r, oracle))
        .reduce(ErrorCounts::default, ErrorCounts::merge);
    ErrorEstimate::from_counts(counts)
}

/// [`estimate_verification_errors`] over logs of mixed tasks, each judged by
/// its own rule checker.
pub fn estimate_task_errors(episodes: &[TaskEpisode]) -> ErrorEstimate {
    let counts = episodes
        .par_iter()
        .map(|ep| match ep {
            TaskEpisode::Mult(r) => count_errors(r, &MultTask),
            TaskEpisode::Sudoku(r) => count_errors(r, &SudokuTask),
        })
        .reduce(ErrorCounts::default, ErrorCounts::merge);
    ErrorEstimate::from_counts(counts)
}

/// Reflection frequency of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyCell {
    /// Multiplication: digits of `y`. Sudoku: number of blanks.
    pub i: u32,
    /// Multiplication: digits of `x`. Unused for Sudoku.
    pub j: Option<u32>,
    pub steps: u64,
    pub verified_steps: u64,
}

impl FrequencyCell {
    /// Percentage of steps with non-empty verification.
    pub fn percent(&self) -> Option<f64> {
        (self.steps > 0).then(|| 100.0 * self.verified_steps as f64 / self.steps as f64)
    }
}

/// Reflection frequency per difficulty cell, sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub cells: Vec<FrequencyCell>,
}

impl FrequencyGrid {
    pub fn get(&self, i: u32, j: Option<u32>) -> Option<&FrequencyCell> {
        self.cells.iter().find(|c| c.i == i && c.j == j)
    }

    /// CSV with header `i,j,steps,verified_steps,frequency_pct,ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,steps,verified_steps,frequency_pct,ratio\n");
        for c in &self.cells {
            let j = c.j.map(|j| j.to_string()).unwrap_or_default();
            let (pct, ratio) = match c.percent() {
                Some(p) => (format!("{p:.1}"), (p / 100.0).to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(out, "{},{j},{},{},{pct},{ratio}", c.i, c.steps, c.verified_steps);
        }
        out
    }
}

fn cell_key(payload: &QueryPayload) -> Option<(u32, Option<u32>)> {
    match payload {
        QueryPayload::Mult { x, y } => Some((digit_count(*y), Some(digit_count(*x)))),
        QueryPayload::Sudoku { board } => Some((board.blanks() as u32, None)),
        QueryPayload::Synthetic { .. } => None,
    }
}

/// Share of proposed steps (tracebacks excluded) that carry non-empty
/// verification, per query cell.
pub fn reflection_frequency<S, R>(records: &[EpisodeRecord<S, R>]) -> FrequencyGrid {
    let mut cells: BTreeMap<(u32, Option<u32>), (u64, u64)> = BTreeMap::new();
    for r in records {
        let Some(key) = cell_key(&r.query.payload) else { continue };
        let entry = cells.entry(key).or_default();
        for e in r.events.iter().filter(|e| e.disposition != Disposition::Traceback) {
            entry.0 += 1;
            entry.1 += u64::from(!e.step.verification.is_empty());
        }
    }
    FrequencyGrid {
        cells: cells
            .into_iter()
            .map(|((i, j), (steps, verified_steps))| FrequencyCell { i, j, steps, verified_steps })
            .collect(),
    }
}

/// [`reflection_frequency`] over logs of one or more tasks.
pub fn task_reflection_frequency(episodes: &[TaskEpisode]) -> FrequencyGrid {
    let mult: Vec<_> = episodes.iter().filter_map(|e| if let TaskEpisode::Mult(r) = e { Some(r.clone()) } else { None }).collect();
    let sudoku: Vec<_> =
        episodes.iter().filter_map(|e| if let TaskEpisode::Sudoku(r) = e { Some(r.clone()) } else { None }).collect();
    let mut grid = reflection_frequency(&mult);
    grid.cells.extend(reflection_frequency(&sudoku).cells);
    grid
}

/// Accuracy of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub group: String,
    pub count: u64,
    pub correct: u64,
    /// `None` for an empty group.
    pub accuracy: Option<f64>,
    pub wilson_ci: Interval,
}

/// Correct counts and 99% Wilson intervals per group, in key order.
pub fn accuracy_table<K: Ord + ToString>(outcomes: impl IntoIterator<Item = (K, bool)>) -> Vec<AccuracyRow> {
    let mut groups: BTreeMap<K, (u64, u64)> = BTreeMap::new();
    for (k, ok) in outcomes {
        let e = groups.entry(k).or_default();
        e.0 += 1;
        e.1 += u64::from(ok);
    }
    groups.into_iter().map(|(k, (n, s))| accuracy_row(k.to_string(), n, s)).collect()
}

fn accuracy_row(group: String, count: u64, correct: u64) -> AccuracyRow {
    AccuracyRow {
        group,
        count,
        correct,
        accuracy: (count > 0).then(|| correct as f64 / count as f64),
        wilson_ci: wilson99(correct, count),
    }
}

/// Accuracy per difficulty tier; every tier gets a row, empty ones with
/// count 0.
pub fn accuracy_by_tier(outcomes: impl IntoIterator<Item = (DifficultyTier, bool)>) -> Vec<AccuracyRow> {
    let mut counts: BTreeMap<DifficultyTier, (u64, u64)> = DifficultyTier::ALL.iter().map(|&t| (t, (0, 0))).collect();
    for (t, ok) in outcomes {
        let e = counts.entry(t).or_default();
        e.0 += 1;
        e.1 += u64::from(ok);
    }
    DifficultyTier::ALL.iter().map(|t| accuracy_row(t.name().to_string(), counts[t].0, counts[t].1)).collect()
}

/// Accuracy per tier of task episodes; queries are tiered by their payload.
pub fn task_accuracy_table(episodes: &[TaskEpisode]) -> Vec<AccuracyRow> {
    accuracy_by_tier(
        episodes.iter().filter_map(|e| DifficultyTier::classify(e.query()).map(|t| (t, e.is_correct()))),
    )
}

/// CSV with header `group,count,correct,accuracy_pct,accuracy,ci_lo,ci_hi`.
pub fn accuracy_csv(rows: &[AccuracyRow]) -> String {
    let mut out = String::from("group,count,correct,accuracy_pct,accuracy,ci_lo,ci_hi\n");
    for r in rows {
        let (pct, acc) = match r.accuracy {
            Some(a) => (format!("{:.1}", 100.0 * a), a.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(out, "{},{},{},{pct},{acc},{},{}", r.group, r.count, r.correct, r.wilson_ci.lo, r.wilson_ci.hi);
    }
    out
}

/// Which executors a report covers. RTBS rows are produced for every width
/// in the width list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    None,
    Rmtp,
    Rtbs,
}

/// Expands mode kinds and widths into concrete modes.
pub fn expand_modes(kinds: &[ModeKind], widths: &[u32]) -> Vec<Mode> {
    let mut modes = Vec::new();
    for k in kinds {
        match k {
            ModeKind::None => modes.push(Mode::None),
            ModeKind::Rmtp => modes.push(Mode::Rmtp),
            ModeKind::Rtbs => modes.extend(widths.iter().map(|&m| Mode::Rtbs(m))),
        }
    }
    modes
}

/// Simulates every `(n, mode)` and renders one CSV row per point with the
/// theory value, estimate, 99% CI and z-score.
pub fn theory_vs_sim_report(
    params: &SimplifiedParams,
    kinds: &[ModeKind],
    ns: &[u32],
    widths: &[u32],
    episodes: u64,
    seed: Seed,
) -> Result<(Vec<SimPoint>, String), SimError> {
    let points = sim::simulate_grid(params, &expand_modes(kinds, widths), ns, episodes, seed)?;
    let csv = sim::sim_points_csv(&points);
    Ok((points, csv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtp::{Event, Outcome, Paired, Query, Verification, VerifiedStep};
    use crate::reflect::{run_rmtp, run_rtbs, ReflectConfig};
    use crate::tasks::mult::{MultExpert, MultState, MultStep};
    use crate::tasks::{gen_query, make_noisy_mult_policy, NoisyVerifier, OracleVerifier, VerificationStyle};
    use crate::mtp::{TaskKind, Verifier};
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    fn mult_records(noise: f64, e_minus: f64, e_plus: f64, count: u64, seed: u64) -> Vec<EpisodeRecord<MultState, MultStep>> {
        let policy = Paired {
            policy: make_noisy_mult_policy(noise).unwrap(),
            verifier: NoisyVerifier::new(OracleVerifier::new(MultTask, VerificationStyle::Binary), e_minus, e_plus).unwrap(),
        };
        let config = ReflectConfig::default();
        (0..count)
            .map(|i| {
                let mut rng = Seed(seed).stream(i);
                let q = gen_query(TaskKind::Mult, DifficultyTier::IdEasy, &mut rng).unwrap();
                run_rmtp(&MultTask, &policy, &q, &config, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn oracle_verifier_has_no_errors() {
        let est = estimate_verification_errors(&mult_records(0.3, 0.0, 0.0, 300, 1), &MultTask);
        assert_eq!(est.e_plus_hat, Some(0.0));
        assert_eq!(est.e_minus_hat, Some(0.0));
        assert!(est.n_first_attempts > 300);
    }

    #[test]
    fn always_accepting_verifier() {
        struct Accept;
        impl Verifier<MultState, MultStep> for Accept {
            fn verify(&self, _: &MultState, _: &MultStep, _: &mut StreamRng) -> Verification {
                Verification::positive()
            }
        }
        let policy = Paired { policy: make_noisy_mult_policy(0.25).unwrap(), verifier: Accept };
        let records: Vec<_> = (0..400)
            .map(|i| {
                let mut rng = Seed(4).stream(i);
                let q = gen_query(TaskKind::Mult, DifficultyTier::IdHard, &mut rng).unwrap();
                run_rmtp(&MultTask, &policy, &q, &ReflectConfig::default(), &mut rng).unwrap()
            })
            .collect();
        let est = estimate_verification_errors(&records, &MultTask);
        assert_eq!(est.e_minus_hat, Some(0.0));
        assert_eq!(est.e_plus_hat, Some(1.0));
        let share = est.n_incorrect_steps as f64 / est.n_first_attempts as f64;
        assert!((share - 0.25).abs() < 0.03, "{share}");
    }

    #[test]
    fn undefined_rates_are_none() {
        let records = mult_records(0.0, 0.0, 0.0, 20, 2);
        let est = estimate_verification_errors(&records, &MultTask);
        assert_eq!(est.e_plus_hat, None);
        assert_eq!(est.e_minus_hat, Some(0.0));
        assert_eq!(estimate_verification_errors::<MultState, MultStep, _>(&[], &MultTask), ErrorEstimate::default());
    }

    #[test]
    fn injected_errors_are_recovered() {
        let est = estimate_verification_errors(&mult_records(0.3, 0.2, 0.1, 6000, 3), &MultTask);
        assert!(est.n_first_attempts >= 10_000);
        assert!((est.e_minus_hat.unwrap() - 0.2).abs() < 0.02, "{est:?}");
        assert!((est.e_plus_hat.unwrap() - 0.1).abs() < 0.02, "{est:?}");
    }

    #[test]
    fn reentered_state_counts_once() {
        let state = MultState::new(12, 34, 0);
        let step = MultExpert::step(&state);
        let event = |attempt, depth| Event {
            state,
            step: VerifiedStep::new(step.clone(), Verification::positive()),
            disposition: Disposition::Accepted,
            attempt,
            depth,
        };
        let record = EpisodeRecord {
            query: Query::mult(12, 34),
            events: vec![event(1, 0), event(1, 0), event(2, 0), event(1, 1)],
            answer: None,
            outcome: Outcome::BudgetExhausted,
        };
        let est = estimate_verification_errors(&[record], &MultTask);
        assert_eq!(est.n_first_attempts, 2);
    }

    #[test]
    fn revisits_after_traceback_count_once() {
        let policy = Paired {
            policy: make_noisy_mult_policy(0.5).unwrap(),
            verifier: OracleVerifier::new(MultTask, VerificationStyle::Binary),
        };
        let config = ReflectConfig { width: 2, ..ReflectConfig::default() };
        let q = Query::mult(987_654, 321);
        let r = run_rtbs(&MultTask, &policy, &q, &config, &mut Seed(8).stream(0)).unwrap();
        let est = estimate_verification_errors(std::slice::from_ref(&r), &MultTask);
        let mut first: Vec<(u32, MultState)> = r
            .events
            .iter()
            .filter(|e| e.attempt == 1 && e.disposition != Disposition::Traceback)
            .map(|e| (e.depth, e.state))
            .collect();
        first.sort_by_key(|(d, s)| (*d, s.x, s.y, s.z));
        first.dedup();
        assert_eq!(est.n_first_attempts, first.len() as u64);
    }

    #[test]
    fn frequency_grid_axes_and_extremes() {
        let records = mult_records(0.1, 0.0, 0.0, 200, 5);
        let grid = reflection_frequency(&records);
        assert!(grid.cells.iter().all(|c| c.percent() == Some(100.0)));
        for c in &grid.cells {
            let n: u64 = records
                .iter()
                .filter(|r| matches!(r.query.payload, QueryPayload::Mult { x, y } if digit_count(y) == c.i && Some(digit_count(x)) == c.j))
                .map(|r| r.events.iter().filter(|e| e.disposition != Disposition::Traceback).count() as u64)
                .sum();
            assert_eq!(n, c.steps);
        }
        let plain: Vec<_> = (0..50)
            .map(|i| {
                let mut rng = Seed(6).stream(i);
                let q = gen_query(TaskKind::Mult, DifficultyTier::IdEasy, &mut rng).unwrap();
                crate::mtp::run_nonreflective(&MultTask, &MultExpert, &q, 100, &mut rng).unwrap()
            })
            .collect();
        assert!(reflection_frequency(&plain).cells.iter().all(|c| c.percent() == Some(0.0)));
        assert!(grid.to_csv().lines().nth(1).unwrap().ends_with(",100.0,1"));
    }

    #[test]
    fn reflective_budget_caps_frequency() {
        let policy = Paired {
            policy: make_noisy_mult_policy(0.0).unwrap(),
            verifier: OracleVerifier::new(MultTask, VerificationStyle::Detailed),
        };
        let config = ReflectConfig { reflective_budget: 3, total_budget: 100, ..ReflectConfig::default() };
        let r = run_rmtp(&MultTask, &policy, &Query::mult(123_456_789, 987_654_321), &config, &mut Seed(1).stream(0)).unwrap();
        let cell = reflection_frequency(std::slice::from_ref(&r)).cells[0];
        assert_eq!(cell.verified_steps, 3);
        assert_eq!(cell.steps, r.events.len() as u64);
    }

    #[test]
    fn tier_table_includes_empty_tiers() {
        let rows = accuracy_by_tier([(DifficultyTier::IdEasy, true), (DifficultyTier::IdEasy, false)]);
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].count, rows[0].correct, rows[0].accuracy), (2, 1, Some(0.5)));
        assert_eq!((rows[2].count, rows[2].accuracy), (0, None));
        let csv = accuracy_csv(&rows);
        assert!(csv.contains("\nid_easy,2,1,50.0,0.5,"));
        assert!(csv.contains("\nood_hard,0,0,,,"));
    }

    #[test]
    fn accuracy_matches_simulation_counts() {
        let p = SimplifiedParams::new(0.8, 0.3, 0.2, 0.8).unwrap();
        let r = sim::simulate_accuracy(&p, 5, Mode::Rtbs(4), 1000, Seed(2)).unwrap();
        let outcomes = (0..r.episodes).map(|i| ("rtbs", i < r.successes));
        let rows = accuracy_table(outcomes);
        assert_eq!(rows[0].accuracy, Some(r.accuracy_hat));
        assert_eq!(rows[0].wilson_ci, r.wilson_ci);
    }

    #[test]
    fn report_rows_for_trivial_and_boundary_params() {
        let perfect = SimplifiedParams::new(1.0, 0.0, 0.0, 0.5).unwrap();
        let (points, csv) =
            theory_vs_sim_report(&perfect, &[ModeKind::None, ModeKind::Rmtp, ModeKind::Rtbs], &[3, 9], &[2, 4], 500, Seed(3)).unwrap();
        assert_eq!(points.len(), 8);
        assert!(points.iter().all(|p| p.theory == 1.0 && p.result.accuracy_hat == 1.0));
        assert_eq!(csv.lines().count(), 9);
        let boundary = SimplifiedParams::new(0.7, 0.4, 0.6, 0.5).unwrap();
        let (points, _) = theory_vs_sim_report(&boundary, &[ModeKind::None, ModeKind::Rmtp], &[6], &[], 100, Seed(3)).unwrap();
        assert!((points[0].theory - points[1].theory).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn error_estimate_ignores_order(seed in 0u64..1000, rot in 0usize..40) {
            let mut records = mult_records(0.3, 0.2, 0.1, 40, seed);
            let a = estimate_verification_errors(&records, &MultTask);
            records.rotate_left(rot);
            records.reverse();
            prop_assert_eq!(estimate_verification_errors(&records, &MultTask), a);
        }
    }
}
