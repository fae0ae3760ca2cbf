//! Concrete reasoning tasks with rule-based verifiers.
//!
//! [`mult`] and [`sudoku`] define states, expert policies and deterministic
//! transitions. This module holds what they share: difficulty tiers and query
//! generation, oracle verifiers producing binary or detailed labels, and noise
//! wrappers that inject planning and verification errors at controlled rates.

pub mod mult;
pub mod sudoku;

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mtp::{Label, Policy, Query, QueryPayload, TaskKind, Verification, Verifier};
use crate::rng::StreamRng;

use self::sudoku::SudokuBoard;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("state is terminal")]
    Terminal,
    #[error("blank at row {row}, column {col} has no candidate")]
    DeadEnd { row: u8, col: u8 },
    #[error("task {0} has no query generator")]
    Unsupported(TaskKind),
    #[error("{0}")]
    Malformed(String),
}

/// Difficulty tiers by operand digits (Mult) or blank count (Sudoku).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyTier {
    IdEasy,
    IdHard,
    OodHard,
}

impl DifficultyTier {
    pub const ALL: [DifficultyTier; 3] = [DifficultyTier::IdEasy, DifficultyTier::IdHard, DifficultyTier::OodHard];

    /// Digit count of the greater operand.
    pub fn mult_digits(self) -> RangeInclusive<u32> {
        match self {
            DifficultyTier::IdEasy => 1..=5,
            DifficultyTier::IdHard => 6..=8,
            DifficultyTier::OodHard => 9..=10,
        }
    }

    /// Number of blank cells.
    pub fn sudoku_blanks(self) -> RangeInclusive<usize> {
        match self {
            DifficultyTier::IdEasy => 9..=35,
            DifficultyTier::IdHard => 36..=53,
            DifficultyTier::OodHard => 54..=62,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DifficultyTier::IdEasy => "id_easy",
            DifficultyTier::IdHard => "id_hard",
            DifficultyTier::OodHard => "ood_hard",
        }
    }

    /// The tier a query falls in, judged from its payload.
    pub fn classify(query: &Query) -> Option<DifficultyTier> {
        match &query.payload {
            QueryPayload::Mult { x, y } => {
                let d = mult::digit_count(*x.max(y));
                Self::ALL.into_iter().find(|t| t.mult_digits().contains(&d))
            }
            QueryPayload::Sudoku { board } => {
                let b = board.blanks();
                Self::ALL.into_iter().find(|t| t.sudoku_blanks().contains(&b))
            }
            QueryPayload::Synthetic { .. } => None,
        }
    }
}

impl fmt::Display for DifficultyTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DifficultyTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "id_easy" | "ideasy" | "easy" => Ok(DifficultyTier::IdEasy),
            "id_hard" | "idhard" | "hard" => Ok(DifficultyTier::IdHard),
            "ood_hard" | "oodhard" | "ood" => Ok(DifficultyTier::OodHard),
            _ => Err(format!("unknown tier {s:?}")),
        }
    }
}

fn uniform_with_digits(k: u32, rng: &mut StreamRng) -> u128 {
    if k <= 1 {
        return rng.between(0, 9) as u128;
    }
    let lo = 10u64.pow(k - 1);
    rng.between(lo, 10 * lo - 1) as u128
}

/// Draws a query of the given task and tier.
pub fn gen_query(task: TaskKind, tier: DifficultyTier, rng: &mut StreamRng) -> Result<Query, TaskError> {
    match task {
        TaskKind::Mult => {
            let range = tier.mult_digits();
            let d = rng.between(u64::from(*range.start()), u64::from(*range.end())) as u32;
            let d2 = rng.between(1, u64::from(d)) as u32;
            let a = uniform_with_digits(d, rng);
            let b = uniform_with_digits(d2, rng);
            let (x, y) = if rng.bernoulli(0.5) { (a, b) } else { (b, a) };
            Ok(Query::mult(x, y).with_tier(tier))
        }
        TaskKind::Sudoku => {
            let range = tier.sudoku_blanks();
            let b = rng.between(*range.start() as u64, *range.end() as u64) as usize;
            let (puzzle, _) = sudoku::random_puzzle(b, rng);
            Ok(Query::sudoku(puzzle).with_tier(tier))
        }
        TaskKind::Synthetic => Err(TaskError::Unsupported(task)),
    }
}

/// A final answer for [`oracle_answer_check`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Answer {
    Number(u128),
    Board(SudokuBoard),
}

/// Rule-based answer checker: 1 for a correct answer, 0 otherwise.
pub fn oracle_answer_check(query: &Query, answer: &Answer) -> u8 {
    let ok = match (&query.payload, answer) {
        (QueryPayload::Mult { x, y }, Answer::Number(v)) => x.checked_mul(*y) == Some(*v),
        (QueryPayload::Sudoku { board }, Answer::Board(b)) => b.is_complete() && b.is_consistent() && b.extends(board),
        _ => false,
    };
    u8::from(ok)
}

/// Rule-based step checks for a task.
pub trait RuleChecker: Sync {
    type State;
    type Step;

    /// A single label: positive iff the step keeps the task invariant.
    fn verify_binary(&self, state: &Self::State, step: &Self::Step) -> Verification;

    /// One label per checked element, in the task's canonical order.
    fn verify_detailed(&self, state: &Self::State, step: &Self::Step) -> Verification;

    /// Ground truth: the step leads to a valid state.
    fn step_is_correct(&self, state: &Self::State, step: &Self::Step) -> bool;
}

/// Granularity of verification labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStyle {
    Binary,
    Detailed,
}

/// Exact verifier backed by a task's rule checker.
#[derive(Debug, Clone, Copy)]
pub struct OracleVerifier<T> {
    pub task: T,
    pub style: VerificationStyle,
}

impl<T: RuleChecker> OracleVerifier<T> {
    pub fn new(task: T, style: VerificationStyle) -> Self {
        OracleVerifier { task, style }
    }

    pub fn labels(&self, state: &T::State, step: &T::Step) -> Verification {
        match self.style {
            VerificationStyle::Binary => self.task.verify_binary(state, step),
            VerificationStyle::Detailed => self.task.verify_detailed(state, step),
        }
    }
}

impl<T: RuleChecker> Verifier<T::State, T::Step> for OracleVerifier<T> {
    fn verify(&self, state: &T::State, step: &T::Step, _rng: &mut StreamRng) -> Verification {
        self.labels(state, step)
    }
}

/// Oracle verifier whose overall verdict is flipped at fixed rates: a correct
/// step is rejected with probability `e_minus`, an incorrect one accepted
/// with probability `e_plus`.
#[derive(Debug, Clone, Copy)]
pub struct NoisyVerifier<T> {
    pub oracle: OracleVerifier<T>,
    pub e_minus: f64,
    pub e_plus: f64,
}

impl<T: RuleChecker> NoisyVerifier<T> {
    pub fn new(oracle: OracleVerifier<T>, e_minus: f64, e_plus: f64) -> Result<Self, TaskError> {
        for (name, p) in [("e_minus", e_minus), ("e_plus", e_plus)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TaskError::Malformed(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(NoisyVerifier { oracle, e_minus, e_plus })
    }
}

impl<T: RuleChecker> Verifier<T::State, T::Step> for NoisyVerifier<T> {
    fn verify(&self, state: &T::State, step: &T::Step, rng: &mut StreamRng) -> Verification {
        let mut v = self.oracle.labels(state, step);
        if v.is_rejected() {
            if self.e_plus > 0.0 && rng.bernoulli(self.e_plus) {
                v.labels.iter_mut().for_each(|l| *l = Label::Positive);
            }
        } else if self.e_minus > 0.0 && rng.bernoulli(self.e_minus) {
            if v.labels.is_empty() {
                v.labels.push(Label::Negative);
            } else {
                let i = rng.below(v.labels.len());
                v.labels[i] = Label::Negative;
            }
        }
        v
    }
}

/// Produces a wrong version of a correct step.
pub trait StepCorrupter<S, R>: Sync {
    fn corrupt(&self, state: &S, step: &R, rng: &mut StreamRng) -> R;
}

/// Wraps an expert so that each proposal is corrupted with probability
/// `error_prob`.
#[derive(Debug, Clone)]
pub struct NoisyPolicy<P, C> {
    pub expert: P,
    pub corrupter: C,
    pub error_prob: f64,
}

impl<P, C> NoisyPolicy<P, C> {
    pub fn new(expert: P, corrupter: C, error_prob: f64) -> Result<Self, TaskError> {
        if !(0.0..=1.0).contains(&error_prob) {
            return Err(TaskError::Malformed(format!("error probability {error_prob} is not a probability")));
        }
        Ok(NoisyPolicy { expert, corrupter, error_prob })
    }
}

impl<S, R, P: Policy<S, R>, C: StepCorrupter<S, R>> Policy<S, R> for NoisyPolicy<P, C> {
    fn sample(&self, state: &S, rng: &mut StreamRng) -> R {
        let step = self.expert.sample(state, rng);
        if self.error_prob > 0.0 && rng.bernoulli(self.error_prob) {
            self.corrupter.corrupt(state, &step, rng)
        } else {
            step
        }
    }
}

/// Noisy multiplication policy: corrupts one contribution digit.
pub fn make_noisy_mult_policy(error_prob: f64) -> Result<NoisyPolicy<mult::MultExpert, mult::MultCorrupter>, TaskError> {
    NoisyPolicy::new(mult::MultExpert, mult::MultCorrupter::default(), error_prob)
}

/// Noisy Sudoku policy: one fill gets a wrong digit.
pub fn make_noisy_sudoku_policy(
    error_prob: f64,
) -> Result<NoisyPolicy<sudoku::SudokuExpert, sudoku::SudokuCorrupter>, TaskError> {
    NoisyPolicy::new(sudoku::SudokuExpert, sudoku::SudokuCorrupter, error_prob)
}

/// Step-level oracle used to find the first clear error in an episode.
pub trait StepOracle<S, R> {
    fn step_ok(&self, state: &S, step: &R) -> bool;
}

impl<T: RuleChecker> StepOracle<T::State, T::Step> for T {
    fn step_ok(&self, state: &T::State, step: &T::Step) -> bool {
        self.step_is_correct(state, step)
    }
}

#[cfg(test)]
mod tests {
    use super::mult::{MultExpert, MultState, MultTask};
    use super::*;
    use crate::rng::Seed;

    #[test]
    fn tiers_are_respected() {
        let mut rng = Seed(11).stream(0);
        for tier in DifficultyTier::ALL {
            for _ in 0..300 {
                let q = gen_query(TaskKind::Mult, tier, &mut rng).unwrap();
                assert_eq!(DifficultyTier::classify(&q), Some(tier));
            }
            for _ in 0..5 {
                let q = gen_query(TaskKind::Sudoku, tier, &mut rng).unwrap();
                assert_eq!(DifficultyTier::classify(&q), Some(tier));
                q.validate().unwrap();
            }
        }
        assert!(gen_query(TaskKind::Synthetic, DifficultyTier::IdEasy, &mut rng).is_err());
    }

    #[test]
    fn gen_query_is_reproducible() {
        let a = gen_query(TaskKind::Mult, DifficultyTier::IdHard, &mut Seed(3).stream(8)).unwrap();
        let b = gen_query(TaskKind::Mult, DifficultyTier::IdHard, &mut Seed(3).stream(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn answer_checker() {
        let q = Query::mult(12, 34);
        assert_eq!(oracle_answer_check(&q, &Answer::Number(408)), 1);
        assert_eq!(oracle_answer_check(&q, &Answer::Number(407)), 0);
    }

    #[test]
    fn noisy_verifier_extremes() {
        let s = MultState::new(12, 34, 0);
        let good = MultExpert::step(&s);
        let oracle = OracleVerifier::new(MultTask, VerificationStyle::Detailed);
        let always_reject = NoisyVerifier::new(oracle, 1.0, 0.0).unwrap();
        let mut rng = Seed(1).stream(0);
        let v = always_reject.verify(&s, &good, &mut rng);
        assert_eq!(v.negative_positions().len(), 1);
        assert!(NoisyVerifier::new(oracle, 1.5, 0.0).is_err());
    }

    #[test]
    fn zero_noise_policy_matches_expert() {
        let noisy = make_noisy_mult_policy(0.0).unwrap();
        let s = MultState::new(4521, 778, 0);
        let mut a = Seed(2).stream(0);
        let mut b = Seed(2).stream(0);
        assert_eq!(noisy.sample(&s, &mut a), MultExpert.sample(&s, &mut b));
    }

    #[test]
    fn full_noise_policy_is_always_wrong() {
        let noisy = make_noisy_mult_policy(1.0).unwrap();
        let mut rng = Seed(3).stream(0);
        for s in [MultState::new(4521, 778, 0), MultState::new(12, 0, 408)] {
            for _ in 0..50 {
                let step = noisy.sample(&s, &mut rng);
                assert!(MultTask.verify_binary(&s, &step).is_rejected());
            }
        }
    }
}
