//! Reflective execution: RMTP (reject and retry at the same state) and
//! reflective trace-back search (RTBS), which abandons a state after `m`
//! rejections and restores its parent from a stack.
//!
//! Both executors share one engine. RMTP is RTBS with no width limit. After
//! `reflective_budget` verified proposals the engine stops asking for
//! verification and continues non-reflectively until an answer or
//! `total_budget` proposals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::mtp::{Counter, EventSink, Recorder, RunSummary};
use crate::mtp::{
    check_query, outcome_for, Disposition, EpisodeRecord, MtpError, Outcome, Query, ReasoningStep,
    SelfVerifyingPolicy, Task, Verification, VerifiedStep,
};
use crate::rng::StreamRng;

#[derive(Debug, Error, PartialEq)]
pub enum ReflectError {
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
}

/// How many attempts the query state itself gets under RTBS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootAttempts {
    /// Retry the query state for as long as budget remains.
    #[default]
    Unlimited,
    /// The query state gets `m` attempts like every other state; exhausting
    /// them ends the episode without an answer.
    Width,
}

/// Budgets and width for reflective execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectConfig {
    /// Verified proposals allowed before verification is skipped.
    pub reflective_budget: u64,
    /// Cap on all proposals, verified or not.
    pub total_budget: u64,
    /// RTBS width `m`.
    pub width: u32,
    #[serde(default)]
    pub root: RootAttempts,
}

impl Default for ReflectConfig {
    fn default() -> Self {
        ReflectConfig { reflective_budget: 64, total_budget: 96, width: 4, root: RootAttempts::Unlimited }
    }
}

impl ReflectConfig {
    pub fn validate(&self) -> Result<(), ReflectError> {
        if self.reflective_budget == 0 {
            return Err(ReflectError::ZeroCount("reflective budget"));
        }
        if self.total_budget == 0 {
            return Err(ReflectError::ZeroCount("total budget"));
        }
        if self.width == 0 {
            return Err(ReflectError::ZeroCount("RTBS width"));
        }
        Ok(())
    }

    /// Budgets so large they practically never bind.
    pub fn unbounded(width: u32, root: RootAttempts) -> Self {
        ReflectConfig { reflective_budget: u64::MAX, total_budget: u64::MAX, width, root }
    }
}

struct Frame<S, R> {
    parent: S,
    attempts: u32,
    step: R,
}

/// The shared RMTP/RTBS engine. `width = None` is RMTP.
pub fn execute<T, P, K>(
    task: &T,
    policy: &P,
    query: &Query,
    config: &ReflectConfig,
    width: Option<u32>,
    rng: &mut StreamRng,
    sink: &mut K,
) -> Result<RunSummary<T::Step>, MtpError>
where
    T: Task,
    P: SelfVerifyingPolicy<T::State, T::Step> + ?Sized,
    K: EventSink<T::State, T::Step>,
{
    config.validate().map_err(|e| MtpError::Config(e.to_string()))?;
    check_query(task, query)?;
    let mut state = task.initial_state(query)?;
    if let Some(answer) = task.immediate_answer(&state) {
        let outcome = outcome_for(task.check_answer(query, &answer));
        return Ok(RunSummary { answer: Some(answer), outcome });
    }
    let mut stack: Vec<Frame<T::State, T::Step>> = Vec::new();
    let mut attempts: u32 = 0;
    let mut depth: u32 = 0;
    let mut proposals: u64 = 0;
    let mut verified_calls: u64 = 0;
    loop {
        if proposals >= config.total_budget {
            return Ok(RunSummary { answer: None, outcome: Outcome::BudgetExhausted });
        }
        proposals += 1;
        attempts = attempts.saturating_add(1);
        let proposal = if verified_calls < config.reflective_budget {
            verified_calls += 1;
            policy.plan_verified(&state, attempts, rng)
        } else {
            VerifiedStep::unverified(policy.plan(&state, attempts, rng))
        };
        if proposal.verification.is_rejected() {
            sink.record(&state, &proposal, Disposition::Rejected, attempts, depth);
            let Some(m) = width else { continue };
            if attempts < m {
                continue;
            }
            if stack.is_empty() {
                match config.root {
                    RootAttempts::Unlimited => continue,
                    RootAttempts::Width => return Ok(RunSummary { answer: None, outcome: Outcome::Incorrect }),
                }
            }
            // Recursively reject ancestors until one has attempts left.
            while attempts >= m {
                let Some(frame) = stack.pop() else { break };
                state = frame.parent;
                attempts = frame.attempts;
                depth -= 1;
                let rejected = VerifiedStep::new(frame.step, Verification::omitted());
                sink.record(&state, &rejected, Disposition::Traceback, attempts, depth);
            }
            if attempts >= m && stack.is_empty() && config.root == RootAttempts::Width {
                return Ok(RunSummary { answer: None, outcome: Outcome::Incorrect });
            }
            continue;
        }
        let next = task.apply(&state, &proposal.step)?;
        sink.record(&state, &proposal, Disposition::Accepted, attempts, depth);
        if proposal.step.is_answer() {
            let outcome = outcome_for(task.check_answer(query, &proposal.step));
            return Ok(RunSummary { answer: Some(proposal.step), outcome });
        }
        if width.is_some() {
            let parent = std::mem::replace(&mut state, next);
            stack.push(Frame { parent, attempts, step: proposal.step });
        } else {
            state = next;
        }
        depth += 1;
        attempts = 0;
    }
}

fn run_recorded<T, P>(
    task: &T,
    policy: &P,
    query: &Query,
    config: &ReflectConfig,
    width: Option<u32>,
    rng: &mut StreamRng,
) -> Result<EpisodeRecord<T::State, T::Step>, MtpError>
where
    T: Task,
    P: SelfVerifyingPolicy<T::State, T::Step> + ?Sized,
{
    let mut recorder = Recorder::default();
    let summary = execute(task, policy, query, config, width, rng, &mut recorder)?;
    Ok(EpisodeRecord { query: query.clone(), events: recorder.events, answer: summary.answer, outcome: summary.outcome })
}

/// Reflective MTP: rejected steps leave the state unchanged and are retried.
pub fn run_rmtp<T, P>(
    task: &T,
    policy: &P,
    query: &Query,
    config: &ReflectConfig,
    rng: &mut StreamRng,
) -> Result<EpisodeRecord<T::State, T::Step>, MtpError>
where
    T: Task,
    P: SelfVerifyingPolicy<T::State, T::Step> + ?Sized,
{
    run_recorded(task, policy, query, config, None, rng)
}

/// Reflective trace-back search with width `config.width`.
pub fn run_rtbs<T, P>(
    task: &T,
    policy: &P,
    query: &Query,
    config: &ReflectConfig,
    rng: &mut StreamRng,
) -> Result<EpisodeRecord<T::State, T::Step>, MtpError>
where
    T: Task,
    P: SelfVerifyingPolicy<T::State, T::Step> + ?Sized,
{
    run_recorded(task, policy, query, config, Some(config.width), rng)
}
