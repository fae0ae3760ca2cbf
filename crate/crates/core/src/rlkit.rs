//! Group-relative advantages and the two RL modifications for reflective
//! reasoners: masking the advantage of rejected steps and truncating
//! trajectories at the first clear error. Pure data transforms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mtp::{Disposition, EpisodeRecord, Outcome};
use crate::tasks::StepOracle;

#[derive(Debug, Error, PartialEq)]
pub enum RlError {
    #[error("a group needs at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("{0}")]
    Misaligned(String),
    #[error("reward {0} is not finite")]
    NonFinite(f64),
}

/// `G` trajectories sampled for one query with their rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup<S, R> {
    pub trajectories: Vec<EpisodeRecord<S, R>>,
    /// Outcome reward per trajectory, usually 0 or 1.
    pub outcome_rewards: Vec<f64>,
    /// Reward per event of each trajectory; an empty row means all zeros.
    pub process_rewards: Vec<Vec<f64>>,
}

impl<S, R> TrajectoryGroup<S, R> {
    /// Outcome rewards from the oracle, no process rewards.
    pub fn from_outcomes(trajectories: Vec<EpisodeRecord<S, R>>) -> Self {
        let outcome_rewards = trajectories.iter().map(|t| if t.is_correct() { 1.0 } else { 0.0 }).collect();
        let process_rewards = vec![Vec::new(); trajectories.len()];
        TrajectoryGroup { trajectories, outcome_rewards, process_rewards }
    }

    fn validate(&self) -> Result<(), RlError> {
        let g = self.trajectories.len();
        if g < 2 {
            return Err(RlError::GroupTooSmall(g));
        }
        if self.outcome_rewards.len() != g || self.process_rewards.len() != g {
            return Err(RlError::Misaligned(format!(
                "{g} trajectories, {} outcome rewards, {} process reward rows",
                self.outcome_rewards.len(),
                self.process_rewards.len()
            )));
        }
        for (i, (t, p)) in self.trajectories.iter().zip(&self.process_rewards).enumerate() {
            if !p.is_empty() && p.len() != t.events.len() {
                return Err(RlError::Misaligned(format!("trajectory {i}: {} events, {} process rewards", t.events.len(), p.len())));
            }
        }
        if let Some(&bad) = self.outcome_rewards.iter().chain(self.process_rewards.iter().flatten()).find(|r| !r.is_finite()) {
            return Err(RlError::NonFinite(bad));
        }
        if self.trajectories.windows(2).any(|w| w[0].query != w[1].query) {
            return Err(RlError::Misaligned("trajectories answer different queries".into()));
        }
        Ok(())
    }
}

/// Advantage of one step plus its masking flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAdvantage {
    pub advantage: f64,
    /// The step tokens get no advantage.
    pub step_masked: bool,
    /// The verification labels keep the advantage.
    pub labels_live: bool,
}

impl StepAdvantage {
    /// Advantage applied to the step tokens.
    pub fn step_advantage(&self) -> f64 {
        if self.step_masked {
            0.0
        } else {
            self.advantage
        }
    }

    /// Advantage applied to the verification labels.
    pub fn label_advantage(&self) -> f64 {
        if self.labels_live {
            self.advantage
        } else {
            0.0
        }
    }
}

/// Per-trajectory, per-step advantages of a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageTable {
    /// Normalized outcome reward of each trajectory.
    pub normalized_outcomes: Vec<f64>,
    pub rows: Vec<Vec<StepAdvantage>>,
}

impl AdvantageTable {
    /// Sum of all unmasked step advantages.
    pub fn total_step_advantage(&self) -> f64 {
        self.rows.iter().flatten().map(StepAdvantage::step_advantage).sum()
    }

    /// CSV with header `g,t,advantage,step_masked,labels_live`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("g,t,advantage,step_masked,labels_live\n");
        for (g, row) in self.rows.iter().enumerate() {
            for (t, a) in row.iter().enumerate() {
                let _ = writeln!(out, "{g},{t},{},{},{}", a.advantage, u8::from(a.step_masked), u8::from(a.labels_live));
            }
        }
        out
    }
}

/// `(x - mean) / std` with the population standard deviation; all zeros
/// when the spread is zero. Sums run over sorted values so the result does
/// not depend on input order.
pub fn normalize_rewards(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Group-relative advantages: the normalized outcome reward plus the sum of
/// normalized process rewards from the step onward. Process rewards are
/// normalized over every step of the group.
pub fn grpo_group_advantages<S, R>(group: &TrajectoryGroup<S, R>) -> Result<AdvantageTable, RlError> {
    group.validate()?;
    let normalized_outcomes = normalize_rewards(&group.outcome_rewards);
    let flat: Vec<f64> = group
        .trajectories
        .iter()
        .zip(&group.process_rewards)
        .flat_map(|(t, p)| if p.is_empty() { vec![0.0; t.events.len()] } else { p.clone() })
        .collect();
    let mut normalized_process = normalize_rewards(&flat).into_iter();
    let rows = group
        .trajectories
        .iter()
        .zip(&normalized_outcomes)
        .map(|(t, &outcome)| {
            let process: Vec<f64> = normalized_process.by_ref().take(t.events.len()).collect();
            let mut to_go = 0.0;
            let mut row: Vec<StepAdvantage> = t
                .events
                .iter()
                .zip(&process)
                .rev()
                .map(|(e, &p)| {
                    to_go += p;
                    StepAdvantage {
                        advantage: outcome + to_go,
                        step_masked: false,
                        labels_live: e.disposition != Disposition::Traceback && !e.step.verification.is_empty(),
                    }
                })
                .collect();
            row.reverse();
            row
        })
        .collect();
    Ok(AdvantageTable { normalized_outcomes, rows })
}

/// Masks the step advantage of every rejected proposal and traceback while
/// verification labels keep theirs.
pub fn mask_rejected_advantages<S, R>(record: &EpisodeRecord<S, R>, row: &[StepAdvantage]) -> Result<Vec<StepAdvantage>, RlError> {
    if row.len() != record.events.len() {
        return Err(RlError::Misaligned(format!("{} events, {} advantages", record.events.len(), row.len())));
    }
    Ok(record
        .events
        .iter()
        .zip(row)
        .map(|(e, a)| match e.disposition {
            Disposition::Accepted => *a,
            Disposition::Rejected => StepAdvantage { step_masked: true, ..*a },
            Disposition::Traceback => StepAdvantage { step_masked: true, labels_live: false, ..*a },
        })
        .collect())
}

/// [`mask_rejected_advantages`] over every trajectory of a group.
pub fn mask_group<S, R>(group: &TrajectoryGroup<S, R>, table: &AdvantageTable) -> Result<AdvantageTable, RlError> {
    if table.rows.len() != group.trajectories.len() {
        return Err(RlError::Misaligned(format!("{} trajectories, {} rows", group.trajectories.len(), table.rows.len())));
    }
    let rows = group
        .trajectories
        .iter()
        .zip(&table.rows)
        .map(|(t, row)| mask_rejected_advantages(t, row))
        .collect::<Result<_, _>>()?;
    Ok(AdvantageTable { normalized_outcomes: table.normalized_outcomes.clone(), rows })
}

/// Cuts the episode right after the first accepted step the oracle marks
/// incorrect and marks it incorrect. Episodes without such a step are
/// returned unchanged.
pub fn early_truncate<S: Clone, R: Clone, O: StepOracle<S, R> + ?Sized>(
    record: &EpisodeRecord<S, R>,
    oracle: &O,
) -> EpisodeRecord<S, R> {
    let first_error = record
        .events
        .iter()
        .position(|e| e.disposition == Disposition::Accepted && !oracle.step_ok(&e.state, &e.step.step));
    match first_error {
        None => record.clone(),
        Some(i) => EpisodeRecord {
            query: record.query.clone(),
            events: record.events[..=i].to_vec(),
            answer: None,
            outcome: Outcome::Incorrect,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtp::Query;
    use crate::reflect::{run_rtbs, ReflectConfig, RootAttempts};
    use crate::rng::{Seed, StreamRng};
    use crate::sim::{Polarity, SyntheticPolicy, SyntheticState, SyntheticStep, SyntheticTask};
    use crate::tasks::mult::{MultCorrupter, MultExpert, MultState, MultStep, MultTask};
    use crate::tasks::{make_noisy_mult_policy, OracleVerifier, VerificationStyle};
    use crate::theory::SimplifiedParams;
    use crate::mtp::{run_nonreflective, Paired, Policy};
    use proptest::prelude::*;

    struct SyntheticOracle;

    impl StepOracle<SyntheticState, SyntheticStep> for SyntheticOracle {
        fn step_ok(&self, _state: &SyntheticState, step: &SyntheticStep) -> bool {
            step.next.polarity == Polarity::Positive
        }
    }

    fn episode(seed: u64, n: u32) -> EpisodeRecord<SyntheticState, SyntheticStep> {
        let policy = SyntheticPolicy::new(SimplifiedParams::new(0.7, 0.3, 0.3, 0.6).unwrap());
        let config = ReflectConfig::unbounded(3, RootAttempts::Width);
        run_rtbs(&SyntheticTask, &policy, &Query::synthetic(n), &config, &mut Seed(seed).stream(0)).unwrap()
    }

    fn group(rewards: &[f64]) -> TrajectoryGroup<SyntheticState, SyntheticStep> {
        let trajectories = (0..rewards.len()).map(|i| episode(i as u64, 4)).collect();
        TrajectoryGroup { trajectories, outcome_rewards: rewards.to_vec(), process_rewards: vec![Vec::new(); rewards.len()] }
    }

    /// Mean and population deviation computed the long way.
    fn reference_normalize(r: &[f64]) -> Vec<f64> {
        let mut sum = 0.0;
        for x in r {
            sum += x;
        }
        let mean = sum / r.len() as f64;
        let mut ss = 0.0;
        for x in r {
            ss += (x - mean) * (x - mean);
        }
        let sd = (ss / r.len() as f64).sqrt();
        r.iter().map(|x| if sd == 0.0 { 0.0 } else { (x - mean) / sd }).collect()
    }

    #[test]
    fn two_of_four_correct() {
        let table = grpo_group_advantages(&group(&[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(table.normalized_outcomes, vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(reference_normalize(&[1.0, 0.0, 0.0, 1.0]), table.normalized_outcomes);
        for (row, &r) in table.rows.iter().zip(&table.normalized_outcomes) {
            assert!(!row.is_empty());
            assert!(row.iter().all(|a| a.advantage == r));
        }
    }

    #[test]
    fn equal_rewards_give_zero() {
        let table = grpo_group_advantages(&group(&[1.0, 1.0, 1.0])).unwrap();
        assert!(table.rows.iter().flatten().all(|a| a.advantage == 0.0));
    }

    #[test]
    fn one_success_in_eight() {
        let mut r = vec![0.0; 8];
        r[3] = 1.0;
        let table = grpo_group_advantages(&group(&r)).unwrap();
        assert!((table.normalized_outcomes[3] - 7f64.sqrt()).abs() < 1e-12);
        assert!((table.normalized_outcomes[0] + 1.0 / 7f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn small_or_misaligned_groups_fail() {
        assert_eq!(grpo_group_advantages(&group(&[1.0])), Err(RlError::GroupTooSmall(1)));
        let mut g = group(&[1.0, 0.0]);
        g.process_rewards[0] = vec![0.5];
        assert!(matches!(grpo_group_advantages(&g), Err(RlError::Misaligned(_))));
        let mut g = group(&[1.0, f64::NAN]);
        g.outcome_rewards[1] = f64::NAN;
        assert!(matches!(grpo_group_advantages(&g), Err(RlError::NonFinite(_))));
    }

    #[test]
    fn process_rewards_accumulate_to_go() {
        let mut g = group(&[1.0, 0.0]);
        let lens: Vec<usize> = g.trajectories.iter().map(|t| t.events.len()).collect();
        g.process_rewards = lens.iter().map(|&l| (0..l).map(|t| t as f64).collect()).collect();
        let table = grpo_group_advantages(&g).unwrap();
        let flat: Vec<f64> = g.process_rewards.iter().flatten().copied().collect();
        let norm = reference_normalize(&flat);
        let first: Vec<f64> = norm[..lens[0]].to_vec();
        let expected0 = table.normalized_outcomes[0] + first.iter().sum::<f64>();
        assert!((table.rows[0][0].advantage - expected0).abs() < 1e-12);
        let last = lens[0] - 1;
        assert!((table.rows[0][last].advantage - (table.normalized_outcomes[0] + first[last])).abs() < 1e-12);
    }

    #[test]
    fn masking_counts_rejections() {
        let record = (0..200).map(|s| episode(s, 6)).find(|r| r.rejections() >= 3).unwrap();
        let row = vec![StepAdvantage { advantage: 1.0, step_masked: false, labels_live: true }; record.events.len()];
        let masked = mask_rejected_advantages(&record, &row).unwrap();
        let rejected = record.events.iter().filter(|e| e.disposition == Disposition::Rejected).count();
        let tracebacks = record.events.iter().filter(|e| e.disposition == Disposition::Traceback).count();
        assert_eq!(masked.iter().filter(|a| a.step_masked).count(), rejected + tracebacks);
        assert!(masked
            .iter()
            .zip(&record.events)
            .filter(|(_, e)| e.disposition == Disposition::Rejected)
            .all(|(a, _)| a.labels_live));
        assert!(mask_rejected_advantages(&record, &row[1..]).is_err());
    }

    #[test]
    fn no_rejections_leaves_table_unchanged() {
        let policy = SyntheticPolicy::new(SimplifiedParams::new(1.0, 0.0, 0.0, 0.5).unwrap());
        let config = ReflectConfig::unbounded(2, RootAttempts::Width);
        let record = run_rtbs(&SyntheticTask, &policy, &Query::synthetic(5), &config, &mut Seed(1).stream(0)).unwrap();
        let row: Vec<StepAdvantage> =
            (0..5).map(|i| StepAdvantage { advantage: i as f64, step_masked: false, labels_live: true }).collect();
        assert_eq!(mask_rejected_advantages(&record, &row).unwrap(), row);
    }

    #[test]
    fn all_rejected_record_is_fully_masked() {
        let policy = SyntheticPolicy::new(SimplifiedParams::new(0.5, 1.0, 0.0, 1.0).unwrap());
        let config = ReflectConfig::unbounded(3, RootAttempts::Width);
        let record = run_rtbs(&SyntheticTask, &policy, &Query::synthetic(5), &config, &mut Seed(1).stream(0)).unwrap();
        assert!(record.events.iter().all(|e| e.disposition == Disposition::Rejected));
        let row = vec![StepAdvantage { advantage: -1.0, step_masked: false, labels_live: true }; record.events.len()];
        let masked = mask_rejected_advantages(&record, &row).unwrap();
        assert!(masked.iter().all(|a| a.step_masked && a.step_advantage() == 0.0));
    }

    #[test]
    fn truncation_keeps_events_through_first_error() {
        let oracle = SyntheticOracle;
        let clean = (0..500).map(|s| episode(s, 5)).find(|r| r.is_correct()).unwrap();
        assert_eq!(early_truncate(&clean, &oracle), clean);
        for s in 0..500 {
            let r = episode(s, 8);
            if let Some(i) = r.events.iter().position(|e| {
                e.disposition == Disposition::Accepted && e.step.step.next.polarity == Polarity::Negative
            }) {
                let t = early_truncate(&r, &oracle);
                assert_eq!(t.events.len(), i + 1);
                assert_eq!(t.outcome, Outcome::Incorrect);
                return;
            }
        }
        panic!("no episode accepted an incorrect step");
    }

    #[test]
    fn corrupted_mult_truncates_at_first_identity_violation() {
        struct Corrupt(MultState);
        impl Policy<MultState, MultStep> for Corrupt {
            fn sample(&self, state: &MultState, rng: &mut StreamRng) -> MultStep {
                let step = MultExpert::step(state);
                if *state == self.0 {
                    MultCorrupter::default().corrupt(state, &step, rng)
                } else {
                    step
                }
            }
        }
        use crate::tasks::StepCorrupter;
        let q = Query::mult(987_654, 123_456);
        let expert_states: Vec<MultState> = {
            let r = run_nonreflective(&MultTask, &MultExpert, &q, 100, &mut Seed(1).stream(0)).unwrap();
            r.events.iter().map(|e| e.state).collect()
        };
        let policy = Corrupt(expert_states[2]);
        let record = run_nonreflective(&MultTask, &policy, &q, 100, &mut Seed(2).stream(0)).unwrap();
        let truncated = early_truncate(&record, &MultTask);
        // Exact recomputation of x*y+z along the chain.
        let target = 987_654u128 * 123_456;
        let first_violation = record
            .events
            .iter()
            .position(|e| match &e.step.step {
                MultStep::Eliminate(el) => el.next.x * el.next.y + el.next.z != target,
                MultStep::Answer(v) => *v != target,
            })
            .unwrap();
        assert_eq!(first_violation, 2);
        assert_eq!(truncated.events.len(), first_violation + 1);
    }

    #[test]
    fn csv_layout() {
        let table = grpo_group_advantages(&group(&[1.0, 0.0])).unwrap();
        let csv = table.to_csv();
        assert!(csv.starts_with("g,t,advantage,step_masked,labels_live\n0,0,1,0,"));
    }

    #[test]
    fn oracle_verified_mult_episode_keeps_labels_live() {
        let policy = Paired { policy: make_noisy_mult_policy(0.3).unwrap(), verifier: OracleVerifier::new(MultTask, VerificationStyle::Detailed) };
        let config = ReflectConfig::default();
        let record = crate::reflect::run_rmtp(&MultTask, &policy, &Query::mult(4321, 8765), &config, &mut Seed(3).stream(0)).unwrap();
        let group = TrajectoryGroup::from_outcomes(vec![record.clone(), record]);
        let table = grpo_group_advantages(&group).unwrap();
        assert!(table.rows[0].iter().all(|a| a.labels_live));
    }

    proptest! {
        #[test]
        fn outcome_advantages_sum_to_zero(rewards in prop::collection::vec(0.0f64..1.0, 2..12)) {
            let table = grpo_group_advantages(&group(&rewards)).unwrap();
            let sum: f64 = table.normalized_outcomes.iter().sum();
            prop_assert!(sum.abs() < 1e-12);
        }

        #[test]
        fn permutation_permutes_rows(rewards in prop::collection::vec(0u8..2, 2..8), rot in 0usize..8) {
            let rewards: Vec<f64> = rewards.into_iter().map(f64::from).collect();
            let g = group(&rewards);
            let k = rot % rewards.len();
            let mut rotated = g.clone();
            rotated.trajectories.rotate_left(k);
            rotated.outcome_rewards.rotate_left(k);
            let a = grpo_group_advantages(&g).unwrap();
            let mut b = grpo_group_advantages(&rotated).unwrap();
            b.rows.rotate_right(k);
            b.normalized_outcomes.rotate_right(k);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn masking_is_idempotent(seed in 0u64..10_000, n in 1u32..10) {
            let record = episode(seed, n);
            let row = vec![StepAdvantage { advantage: 0.5, step_masked: false, labels_live: true }; record.events.len()];
            let once = mask_rejected_advantages(&record, &row).unwrap();
            prop_assert_eq!(mask_rejected_advantages(&record, &once).unwrap(), once);
        }

        #[test]
        fn truncation_is_idempotent(seed in 0u64..10_000, n in 1u32..10) {
            let record = episode(seed, n);
            let once = early_truncate(&record, &SyntheticOracle);
            prop_assert_eq!(early_truncate(&once, &SyntheticOracle), once.clone());
            prop_assert!(once.events.len() <= record.events.len());
        }
    }
}
