//! Multiplication by digit elimination.
//!
//! A state is the expression `x*y+z`. A step picks a digit value `u` that
//! occurs in one operand, multiplies it by the other operand (`delta`),
//! zeroes every occurrence of `u` in the reduced operand and adds
//! `delta * 10^i` to `z` for each zeroed position `i`. The product
//! `x*y+z` is unchanged by a correct step. The state is terminal when either
//! operand is zero, and the answer is `z`.
//!
//! Detailed verification labels follow the canonical order
//! `[delta] + contributions + running_sums + [next]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RuleChecker, StepCorrupter, TaskError};
use crate::mtp::{
    Label, MtpError, Policy, Query, QueryPayload, ReasoningStep, Task, TaskKind, Transition, TransitionError,
    Verification,
};
use crate::rng::StreamRng;

/// Largest supported operand length in decimal digits.
pub const MAX_DIGITS: u32 = 10;

/// The expression `x*y+z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultState {
    pub x: u128,
    pub y: u128,
    pub z: u128,
}

impl MultState {
    pub fn new(x: u128, y: u128, z: u128) -> Self {
        MultState { x, y, z }
    }

    pub fn is_terminal(&self) -> bool {
        self.x == 0 || self.y == 0
    }

    /// `x*y+z`, or `None` on overflow.
    pub fn value(&self) -> Option<u128> {
        self.x.checked_mul(self.y)?.checked_add(self.z)
    }
}

impl fmt::Display for MultState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*{}+{}", self.x, self.y, self.z)
    }
}

impl FromStr for MultState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected `x*y+z`, got {s:?}");
        let (x, rest) = s.split_once('*').ok_or_else(bad)?;
        let (y, z) = rest.split_once('+').ok_or_else(bad)?;
        let parse = |t: &str| t.trim().parse::<u128>().map_err(|_| bad());
        Ok(MultState { x: parse(x)?, y: parse(y)?, z: parse(z)? })
    }
}

impl Serialize for MultState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MultState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Which operand a step reduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    X,
    Y,
}

/// One digit-elimination step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Elimination {
    pub side: Side,
    pub digit: u8,
    /// Zeroed digit positions, units first.
    pub positions: Vec<u32>,
    /// `digit` times the other operand.
    #[serde(with = "crate::serde_u128")]
    pub delta: u128,
    /// `delta * 10^position` for each position.
    #[serde(with = "crate::serde_u128::vec")]
    pub contributions: Vec<u128>,
    /// `z` after adding each contribution in turn.
    #[serde(with = "crate::serde_u128::vec")]
    pub running_sums: Vec<u128>,
    pub next: MultState,
}

/// A multiplication reasoning step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultStep {
    Eliminate(Elimination),
    Answer(#[serde(with = "crate::serde_u128")] u128),
}

impl ReasoningStep for MultStep {
    fn is_answer(&self) -> bool {
        matches!(self, MultStep::Answer(_))
    }
}

/// Decimal digits of `v`, units first; `0` has the single digit 0.
pub fn digits(mut v: u128) -> Vec<u8> {
    if v == 0 {
        return vec![0];
    }
    let mut out = Vec::new();
    while v > 0 {
        out.push((v % 10) as u8);
        v /= 10;
    }
    out
}

pub fn digit_count(v: u128) -> u32 {
    digits(v).len() as u32
}

fn pow10(i: u32) -> Option<u128> {
    10u128.checked_pow(i)
}

/// `v` with the digits at `positions` set to zero.
fn zero_positions(v: u128, positions: &[u32]) -> Option<u128> {
    let mut out = v;
    for &p in positions {
        let d = (v / pow10(p)?) % 10;
        out -= d * pow10(p)?;
    }
    Some(out)
}

/// Builds the correct elimination of digit `u` from `side`.
pub fn eliminate(state: &MultState, side: Side, u: u8) -> Result<Elimination, TaskError> {
    let (reduced, other) = match side {
        Side::Y => (state.y, state.x),
        Side::X => (state.x, state.y),
    };
    let positions: Vec<u32> =
        digits(reduced).iter().enumerate().filter(|(_, &d)| d == u && u != 0).map(|(i, _)| i as u32).collect();
    if positions.is_empty() {
        return Err(TaskError::Malformed(format!("digit {u} does not occur in {reduced}")));
    }
    let overflow = || TaskError::Malformed("arithmetic overflow".into());
    let delta = other.checked_mul(u128::from(u)).ok_or_else(overflow)?;
    let contributions = positions
        .iter()
        .map(|&p| pow10(p).and_then(|s| delta.checked_mul(s)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(overflow)?;
    let mut running_sums = Vec::with_capacity(contributions.len());
    let mut acc = state.z;
    for c in &contributions {
        acc = acc.checked_add(*c).ok_or_else(overflow)?;
        running_sums.push(acc);
    }
    let reduced_next = zero_positions(reduced, &positions).ok_or_else(overflow)?;
    let next = match side {
        Side::Y => MultState::new(state.x, reduced_next, acc),
        Side::X => MultState::new(reduced_next, state.y, acc),
    };
    Ok(Elimination { side, digit: u, positions, delta, contributions, running_sums, next })
}

/// The expert's step: eliminate the smallest nonzero digit value of `y`.
pub fn mult_expert_step(state: &MultState) -> Result<Elimination, TaskError> {
    if state.is_terminal() {
        return Err(TaskError::Terminal);
    }
    let u = digits(state.y).into_iter().filter(|&d| d != 0).min().ok_or(TaskError::Terminal)?;
    eliminate(state, Side::Y, u)
}

/// Returns the state written in the step; only the step's shape is checked.
pub fn mult_apply(state: &MultState, step: &MultStep) -> Result<MultState, TransitionError> {
    match step {
        MultStep::Answer(_) => Ok(*state),
        MultStep::Eliminate(e) => {
            if e.positions.is_empty()
                || e.contributions.len() != e.positions.len()
                || e.running_sums.len() != e.positions.len()
            {
                return Err(TransitionError(format!(
                    "elimination lists {} positions, {} contributions and {} running sums",
                    e.positions.len(),
                    e.contributions.len(),
                    e.running_sums.len()
                )));
            }
            Ok(e.next)
        }
    }
}

/// The multiplication task.
#[derive(Debug, Clone, Copy, Default)]
pub struct MultTask;

impl Transition for MultTask {
    type State = MultState;
    type Step = MultStep;

    fn apply(&self, state: &MultState, step: &MultStep) -> Result<MultState, TransitionError> {
        mult_apply(state, step)
    }
}

impl Task for MultTask {
    fn kind(&self) -> TaskKind {
        TaskKind::Mult
    }

    fn initial_state(&self, query: &Query) -> Result<MultState, MtpError> {
        match query.payload {
            QueryPayload::Mult { x, y } => Ok(MultState::new(x, y, 0)),
            _ => Err(MtpError::TaskMismatch { query: query.task(), task: TaskKind::Mult }),
        }
    }

    fn check_answer(&self, query: &Query, answer: &MultStep) -> bool {
        match (&query.payload, answer) {
            (QueryPayload::Mult { x, y }, MultStep::Answer(v)) => x.checked_mul(*y) == Some(*v),
            _ => false,
        }
    }
}

impl RuleChecker for MultTask {
    type State = MultState;
    type Step = MultStep;

    fn verify_binary(&self, state: &MultState, step: &MultStep) -> Verification {
        Verification::verdict(self.step_is_correct(state, step))
    }

    fn verify_detailed(&self, state: &MultState, step: &MultStep) -> Verification {
        let labels = match step {
            MultStep::Answer(v) => vec![label(state.value() == Some(*v))],
            MultStep::Eliminate(e) => detailed_elimination(state, e),
        };
        Verification { labels }
    }

    fn step_is_correct(&self, state: &MultState, step: &MultStep) -> bool {
        match step {
            MultStep::Answer(v) => state.value() == Some(*v),
            MultStep::Eliminate(e) => match (state.value(), e.next.value()) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            },
        }
    }
}

fn label(ok: bool) -> Label {
    if ok {
        Label::Positive
    } else {
        Label::Negative
    }
}

fn detailed_elimination(state: &MultState, e: &Elimination) -> Vec<Label> {
    let (reduced, other) = match e.side {
        Side::Y => (state.y, state.x),
        Side::X => (state.x, state.y),
    };
    let mut labels = Vec::with_capacity(2 * e.positions.len() + 2);
    labels.push(label(other.checked_mul(u128::from(e.digit)) == Some(e.delta)));
    for (&p, &c) in e.positions.iter().zip(&e.contributions) {
        labels.push(label(pow10(p).and_then(|s| e.delta.checked_mul(s)) == Some(c)));
    }
    let mut prev = state.z;
    for (&c, &r) in e.contributions.iter().zip(&e.running_sums) {
        labels.push(label(prev.checked_add(c) == Some(r)));
        prev = r;
    }
    let digits_ok = e.digit != 0
        && e.positions.iter().all(|&p| pow10(p).is_some_and(|s| (reduced / s) % 10 == u128::from(e.digit)));
    let reduced_ok = zero_positions(reduced, &e.positions).is_some_and(|r| match e.side {
        Side::Y => e.next.y == r && e.next.x == other,
        Side::X => e.next.x == r && e.next.y == other,
    });
    let z_ok = e.running_sums.last() == Some(&e.next.z);
    labels.push(label(digits_ok && reduced_ok && z_ok));
    labels
}

/// Expert multiplication policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct MultExpert;

impl MultExpert {
    pub fn step(state: &MultState) -> MultStep {
        match mult_expert_step(state) {
            Ok(e) => MultStep::Eliminate(e),
            Err(_) => MultStep::Answer(state.z),
        }
    }
}

impl Policy<MultState, MultStep> for MultExpert {
    fn sample(&self, state: &MultState, _rng: &mut StreamRng) -> MultStep {
        MultExpert::step(state)
    }
}

/// Single-element corruptions of a multiplication step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultCorruption {
    Delta,
    Contribution,
    RunningSum,
    NextState,
    AnswerDigit,
}

impl MultCorruption {
    pub const ELIMINATION: [MultCorruption; 4] =
        [MultCorruption::Delta, MultCorruption::Contribution, MultCorruption::RunningSum, MultCorruption::NextState];
}

/// Replaces one decimal digit of `v` by a different digit.
pub fn perturb_digit(v: u128, rng: &mut StreamRng) -> u128 {
    let ds = digits(v);
    let i = rng.below(ds.len());
    let old = ds[i];
    let mut new = rng.below(9) as u8;
    if new >= old {
        new += 1;
    }
    let scale = 10u128.pow(i as u32);
    v - u128::from(old) * scale + u128::from(new) * scale
}

/// Corrupts one element of a step and recomputes everything downstream of
/// it, so that exactly one detailed label turns negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultCorrupter {
    /// Kinds drawn uniformly for elimination steps.
    pub kinds: Vec<MultCorruption>,
}

impl Default for MultCorrupter {
    fn default() -> Self {
        MultCorrupter { kinds: vec![MultCorruption::Contribution] }
    }
}

impl MultCorrupter {
    pub fn all_kinds() -> Self {
        MultCorrupter { kinds: MultCorruption::ELIMINATION.to_vec() }
    }

    /// Applies a specific corruption; returns the corrupted step and the index
    /// of the detailed label it breaks.
    pub fn corrupt_with(&self, step: &MultStep, kind: MultCorruption, rng: &mut StreamRng) -> (MultStep, usize) {
        let e = match step {
            MultStep::Answer(v) => return (MultStep::Answer(perturb_digit(*v, rng)), 0),
            MultStep::Eliminate(e) => e,
        };
        let mut e = e.clone();
        let k = e.positions.len();
        let base_z = e.running_sums[0] - e.contributions[0];
        let (target, from_running) = match kind {
            MultCorruption::Delta | MultCorruption::AnswerDigit => {
                e.delta = perturb_digit(e.delta, rng);
                for (c, &p) in e.contributions.iter_mut().zip(&e.positions) {
                    *c = e.delta * 10u128.pow(p);
                }
                (0, Some(0))
            }
            MultCorruption::Contribution => {
                let j = rng.below(k);
                e.contributions[j] = perturb_digit(e.contributions[j], rng);
                (1 + j, Some(j))
            }
            MultCorruption::RunningSum => {
                let j = rng.below(k);
                e.running_sums[j] = perturb_digit(e.running_sums[j], rng);
                (1 + k + j, Some(j + 1))
            }
            MultCorruption::NextState => {
                e.next.z = perturb_digit(e.next.z, rng);
                return (MultStep::Eliminate(e), 1 + 2 * k);
            }
        };
        if let Some(start) = from_running {
            let mut acc = if start == 0 { base_z } else { e.running_sums[start - 1] };
            for j in start..k {
                acc += e.contributions[j];
                e.running_sums[j] = acc;
            }
            e.next.z = e.running_sums[k - 1];
        }
        (MultStep::Eliminate(e), target)
    }
}

impl StepCorrupter<MultState, MultStep> for MultCorrupter {
    fn corrupt(&self, _state: &MultState, step: &MultStep, rng: &mut StreamRng) -> MultStep {
        let kind = match step {
            MultStep::Answer(_) => MultCorruption::AnswerDigit,
            MultStep::Eliminate(_) => self.kinds[rng.below(self.kinds.len())],
        };
        self.corrupt_with(step, kind, rng).0
    }
}
