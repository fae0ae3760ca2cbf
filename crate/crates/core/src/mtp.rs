//! Markov thought processes: states, steps, verification labels, the
//! policy/verifier/transition interfaces, and the non-reflective runner.
//!
//! A reasoning episode starts from the state built from a [`Query`]. The
//! policy proposes a step, the transition turns (state, step) into the next
//! state, and the episode ends when an answer step is produced. Reflective
//! execution adds a verifier whose labels may reject a step, leaving the
//! state unchanged ([`reflective_transition`]).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;
use crate::tasks::sudoku::SudokuBoard;
use crate::tasks::DifficultyTier;

/// Errors raised while setting up or running an episode.
#[derive(Debug, Error, PartialEq)]
pub enum MtpError {
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("query task {query:?} does not match the task being run ({task:?})")]
    TaskMismatch { query: TaskKind, task: TaskKind },
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

/// A transition was asked to apply a step that does not fit the state.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("step does not fit the state: {0}")]
pub struct TransitionError(pub String);

/// One verification label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn symbol(self) -> char {
        match self {
            Label::Positive => '+',
            Label::Negative => '-',
        }
    }
}

/// Ordered verification labels attached to a proposed step.
///
/// An empty list means verification was omitted; it never means "accepted by a
/// default check".
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Verification {
    pub labels: Vec<Label>,
}

impl Verification {
    pub fn omitted() -> Self {
        Verification { labels: Vec::new() }
    }

    pub fn positive() -> Self {
        Verification { labels: vec![Label::Positive] }
    }

    pub fn negative() -> Self {
        Verification { labels: vec![Label::Negative] }
    }

    /// A single label with the given verdict.
    pub fn verdict(accept: bool) -> Self {
        if accept {
            Self::positive()
        } else {
            Self::negative()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_rejected(&self) -> bool {
        is_rejected(self)
    }

    /// Compact rendering, one `+` or `-` per label.
    pub fn render(&self) -> String {
        self.labels.iter().map(|l| l.symbol()).collect()
    }

    /// Parses the compact `+`/`-` rendering.
    pub fn parse(s: &str) -> Result<Self, String> {
        s.chars()
            .map(|c| match c {
                '+' => Ok(Label::Positive),
                '-' => Ok(Label::Negative),
                other => Err(format!("invalid verification label {other:?}")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|labels| Verification { labels })
    }

    /// Index of every negative label.
    pub fn negative_positions(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Negative)
            .map(|(i, _)| i)
            .collect()
    }
}

impl fmt::Display for Verification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for Verification {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Verification {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Verification::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// True iff any label is negative.
pub fn is_rejected(verification: &Verification) -> bool {
    verification.labels.contains(&Label::Negative)
}

/// A proposed step together with its verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedStep<R> {
    pub step: R,
    pub verification: Verification,
}

impl<R> VerifiedStep<R> {
    pub fn new(step: R, verification: Verification) -> Self {
        VerifiedStep { step, verification }
    }

    pub fn unverified(step: R) -> Self {
        VerifiedStep { step, verification: Verification::omitted() }
    }
}

/// Which reasoning task a query belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Mult,
    Sudoku,
    Synthetic,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Mult => "mult",
            TaskKind::Sudoku => "sudoku",
            TaskKind::Synthetic => "synthetic",
        })
    }
}

/// Task-specific query input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QueryPayload {
    /// Two operands of a multiplication.
    Mult {
        #[serde(with = "crate::serde_u128")]
        x: u128,
        #[serde(with = "crate::serde_u128")]
        y: u128,
    },
    /// A partial Sudoku board.
    Sudoku { board: SudokuBoard },
    /// A synthetic chain of the given scale.
    Synthetic { scale: u32 },
}

/// The input to a reasoning episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub payload: QueryPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<DifficultyTier>,
}

impl Query {
    pub fn mult(x: u128, y: u128) -> Self {
        Query { payload: QueryPayload::Mult { x, y }, tier: None }
    }

    pub fn sudoku(board: SudokuBoard) -> Self {
        Query { payload: QueryPayload::Sudoku { board }, tier: None }
    }

    pub fn synthetic(scale: u32) -> Self {
        Query { payload: QueryPayload::Synthetic { scale }, tier: None }
    }

    pub fn with_tier(mut self, tier: DifficultyTier) -> Self {
        self.tier = Some(tier);
        self
    }

    pub fn task(&self) -> TaskKind {
        match self.payload {
            QueryPayload::Mult { .. } => TaskKind::Mult,
            QueryPayload::Sudoku { .. } => TaskKind::Sudoku,
            QueryPayload::Synthetic { .. } => TaskKind::Synthetic,
        }
    }

    /// Checks that the payload is well formed for its task.
    pub fn validate(&self) -> Result<(), MtpError> {
        match &self.payload {
            QueryPayload::Mult { x, y } => {
                let limit = 10u128.pow(crate::tasks::mult::MAX_DIGITS);
                if *x >= limit || *y >= limit {
                    return Err(MtpError::MalformedQuery(format!(
                        "operands must have at most {} digits",
                        crate::tasks::mult::MAX_DIGITS
                    )));
                }
                Ok(())
            }
            QueryPayload::Sudoku { board } => {
                if board.is_consistent() {
                    Ok(())
                } else {
                    Err(MtpError::MalformedQuery("sudoku givens violate a rule".into()))
                }
            }
            QueryPayload::Synthetic { .. } => Ok(()),
        }
    }
}

/// What happened to a proposed step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disposition {
    Accepted,
    Rejected,
    /// A stored parent step rejected after its child ran out of attempts.
    Traceback,
}

/// Final status of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
    BudgetExhausted,
}

/// One entry of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event<S, R> {
    /// State the step was proposed at (for tracebacks: the restored parent).
    pub state: S,
    pub step: VerifiedStep<R>,
    pub disposition: Disposition,
    /// 1-based attempt index at `state`.
    pub attempt: u32,
    /// Number of accepted steps between the query and `state`.
    pub depth: u32,
}

/// Full trace of one reasoning episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord<S, R> {
    pub query: Query,
    pub events: Vec<Event<S, R>>,
    pub answer: Option<R>,
    pub outcome: Outcome,
}

impl<S, R> EpisodeRecord<S, R> {
    /// Number of logged events.
    pub fn steps_used(&self) -> usize {
        self.events.len()
    }

    /// Events that proposed a new step (everything except tracebacks).
    pub fn proposals(&self) -> impl Iterator<Item = &Event<S, R>> {
        self.events.iter().filter(|e| e.disposition != Disposition::Traceback)
    }

    /// Number of proposals that carried a verification.
    pub fn reflective_proposals(&self) -> usize {
        self.proposals().filter(|e| !e.step.verification.is_empty()).count()
    }

    pub fn rejections(&self) -> usize {
        self.events.iter().filter(|e| e.disposition == Disposition::Rejected).count()
    }

    pub fn is_correct(&self) -> bool {
        self.outcome == Outcome::Correct
    }
}

/// A proposed reasoning step.
pub trait ReasoningStep {
    /// True when the step is a final answer.
    fn is_answer(&self) -> bool;
}

/// Planning policy: proposes the next step at a state.
pub trait Policy<S, R>: Sync {
    fn sample(&self, state: &S, rng: &mut StreamRng) -> R;

    /// Proposal at a given 1-based attempt index; policies with attempt
    /// dependent behaviour override this.
    fn sample_at(&self, state: &S, _attempt: u32, rng: &mut StreamRng) -> R {
        self.sample(state, rng)
    }
}

/// Step verifier.
pub trait Verifier<S, R>: Sync {
    fn verify(&self, state: &S, step: &R, rng: &mut StreamRng) -> Verification;
}

/// Deterministic state transition.
pub trait Transition: Sync {
    type State: Clone;
    type Step: Clone + ReasoningStep;

    fn apply(&self, state: &Self::State, step: &Self::Step) -> Result<Self::State, TransitionError>;
}

/// A transition together with its query encoding and answer oracle.
pub trait Task: Transition {
    fn kind(&self) -> TaskKind;

    /// Builds the initial state from a query.
    fn initial_state(&self, query: &Query) -> Result<Self::State, MtpError>;

    /// Rule-based answer checker.
    fn check_answer(&self, query: &Query, answer: &Self::Step) -> bool;

    /// An answer that is already determined by the initial state, produced
    /// without any proposal (e.g. a synthetic chain of scale 0).
    fn immediate_answer(&self, _state: &Self::State) -> Option<Self::Step> {
        None
    }
}

/// A single model acting as both planner and verifier.
pub trait SelfVerifyingPolicy<S, R>: Sync {
    /// Proposal without verification.
    fn plan(&self, state: &S, attempt: u32, rng: &mut StreamRng) -> R;

    /// Proposal together with its self-verification.
    fn plan_verified(&self, state: &S, attempt: u32, rng: &mut StreamRng) -> VerifiedStep<R>;
}

/// A separate policy and verifier combined into a self-verifying policy.
#[derive(Debug, Clone)]
pub struct Paired<P, V> {
    pub policy: P,
    pub verifier: V,
}

impl<P, V> Paired<P, V> {
    pub fn new(policy: P, verifier: V) -> Self {
        Paired { policy, verifier }
    }
}

impl<S, R, P: Policy<S, R>, V: Verifier<S, R>> SelfVerifyingPolicy<S, R> for Paired<P, V> {
    fn plan(&self, state: &S, attempt: u32, rng: &mut StreamRng) -> R {
        self.policy.sample_at(state, attempt, rng)
    }

    fn plan_verified(&self, state: &S, attempt: u32, rng: &mut StreamRng) -> VerifiedStep<R> {
        let step = self.policy.sample_at(state, attempt, rng);
        let verification = self.verifier.verify(state, &step, rng);
        VerifiedStep { step, verification }
    }
}

/// Receives the engine's events as they happen.
pub trait EventSink<S, R> {
    fn record(&mut self, state: &S, step: &VerifiedStep<R>, disposition: Disposition, attempt: u32, depth: u32);
}

/// Collects full events (state snapshots included).
#[derive(Debug)]
pub struct Recorder<S, R> {
    pub events: Vec<Event<S, R>>,
}

impl<S, R> Default for Recorder<S, R> {
    fn default() -> Self {
        Recorder { events: Vec::new() }
    }
}

impl<S: Clone, R: Clone> EventSink<S, R> for Recorder<S, R> {
    fn record(&mut self, state: &S, step: &VerifiedStep<R>, disposition: Disposition, attempt: u32, depth: u32) {
        self.events.push(Event { state: state.clone(), step: step.clone(), disposition, attempt, depth });
    }
}

/// Counts events without storing them.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Counter {
    pub proposals: u64,
    pub rejected: u64,
    pub tracebacks: u64,
}

impl<S, R> EventSink<S, R> for Counter {
    fn record(&mut self, _: &S, _: &VerifiedStep<R>, disposition: Disposition, _: u32, _: u32) {
        match disposition {
            Disposition::Accepted => self.proposals += 1,
            Disposition::Rejected => {
                self.proposals += 1;
                self.rejected += 1;
            }
            Disposition::Traceback => self.tracebacks += 1,
        }
    }
}

/// Result of an engine run without the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary<R> {
    pub answer: Option<R>,
    pub outcome: Outcome,
}

/// Returns the unchanged state when the step is rejected, otherwise the
/// transition applied to it.
pub fn reflective_transition<T: Transition>(
    state: &T::State,
    verified: &VerifiedStep<T::Step>,
    transition: &T,
) -> Result<T::State, TransitionError> {
    if verified.verification.is_rejected() {
        Ok(state.clone())
    } else {
        transition.apply(state, &verified.step)
    }
}

/// Runs `policy` without reflection until an answer or `budget` proposals.
pub fn run_nonreflective<T, P>(
    task: &T,
    policy: &P,
    query: &Query,
    budget: u64,
    rng: &mut StreamRng,
) -> Result<EpisodeRecord<T::State, T::Step>, MtpError>
where
    T: Task,
    P: Policy<T::State, T::Step> + ?Sized,
{
    let mut recorder = Recorder::default();
    let summary = execute_nonreflective(task, policy, query, budget, rng, &mut recorder)?;
    Ok(EpisodeRecord { query: query.clone(), events: recorder.events, answer: summary.answer, outcome: summary.outcome })
}

/// [`run_nonreflective`] reporting events to a sink instead of a record.
pub fn execute_nonreflective<T, P, K>(
    task: &T,
    policy: &P,
    query: &Query,
    budget: u64,
    rng: &mut StreamRng,
    sink: &mut K,
) -> Result<RunSummary<T::Step>, MtpError>
where
    T: Task,
    P: Policy<T::State, T::Step> + ?Sized,
    K: EventSink<T::State, T::Step>,
{
    if budget == 0 {
        return Err(MtpError::ZeroBudget);
    }
    check_query(task, query)?;
    let mut state = task.initial_state(query)?;
    if let Some(answer) = task.immediate_answer(&state) {
        let outcome = outcome_for(task.check_answer(query, &answer));
        return Ok(RunSummary { answer: Some(answer), outcome });
    }
    for depth in 0..budget {
        let step = VerifiedStep::unverified(policy.sample_at(&state, 1, rng));
        let next = task.apply(&state, &step.step)?;
        sink.record(&state, &step, Disposition::Accepted, 1, depth as u32);
        if step.step.is_answer() {
            let outcome = outcome_for(task.check_answer(query, &step.step));
            return Ok(RunSummary { answer: Some(step.step), outcome });
        }
        state = next;
    }
    Ok(RunSummary { answer: None, outcome: Outcome::BudgetExhausted })
}

pub(crate) fn check_query<T: Task + ?Sized>(task: &T, query: &Query) -> Result<(), MtpError> {
    if query.task() != task.kind() {
        return Err(MtpError::TaskMismatch { query: query.task(), task: task.kind() });
    }
    query.validate()
}

pub(crate) fn outcome_for(correct: bool) -> Outcome {
    if correct {
        Outcome::Correct
    } else {
        Outcome::Incorrect
    }
}
