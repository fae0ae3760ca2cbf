//! Chain-of-thought training corpora and their JSONL encoding.
//!
//! Non-reflective examples are expert solutions with empty verification.
//! Reflective examples walk the expert solution path, but the step recorded
//! at each state is proposed by a noisy policy and labeled by the oracle
//! verifier. One JSON object per line:
//!
//! ```text
//! {"task":"mult","tier":"id_easy","query":{...},"style":"binary",
//!  "steps":[{"state":"12*34+0","step":{...},"labels":"+"}],"answer":{...}}
//! ```
//!
//! Files ending in `.gz` are gzip-compressed.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mtp::{EpisodeRecord, Policy, Query, ReasoningStep, Task, TaskKind, Transition, Verification};
use crate::rng::{Seed, StreamRng};
use crate::tasks::mult::{MultCorrupter, MultExpert, MultState, MultStep, MultTask};
use crate::tasks::sudoku::{self, SudokuBoard, SudokuCorrupter, SudokuStep, SudokuTask};
use crate::tasks::{
    gen_query, DifficultyTier, NoisyPolicy, OracleVerifier, RuleChecker, StepCorrupter, TaskError, VerificationStyle,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("expert path failed: {0}")]
    Path(String),
}

/// Verification carried by the steps of an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusStyle {
    None,
    Binary,
    Detailed,
    /// Detailed examples plus an equal number of empty-verification copies.
    OptionalDetailed,
}

impl CorpusStyle {
    pub fn verification(self) -> Option<VerificationStyle> {
        match self {
            CorpusStyle::None => None,
            CorpusStyle::Binary => Some(VerificationStyle::Binary),
            CorpusStyle::Detailed | CorpusStyle::OptionalDetailed => Some(VerificationStyle::Detailed),
        }
    }
}

impl std::str::FromStr for CorpusStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(CorpusStyle::None),
            "binary" => Ok(CorpusStyle::Binary),
            "detailed" => Ok(CorpusStyle::Detailed),
            "optional_detailed" | "optional" => Ok(CorpusStyle::OptionalDetailed),
            _ => Err(format!("unknown style {s:?}")),
        }
    }
}

/// A state, the step taken there and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotStep<S, R> {
    pub state: S,
    pub step: R,
    pub labels: Verification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotBody<S, R> {
    pub tier: DifficultyTier,
    pub query: Query,
    pub style: CorpusStyle,
    pub steps: Vec<CotStep<S, R>>,
    /// The expert's final step.
    pub answer: R,
}

impl<S, R> CotBody<S, R> {
    fn without_labels(&self) -> Self
    where
        S: Clone,
        R: Clone,
    {
        let steps = self
            .steps
            .iter()
            .map(|s| CotStep { state: s.state.clone(), step: s.step.clone(), labels: Verification::omitted() })
            .collect();
        CotBody { tier: self.tier, query: self.query.clone(), style: self.style, steps, answer: self.answer.clone() }
    }
}

/// One `(query, steps, answer)` training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum CotExample {
    Mult(CotBody<MultState, MultStep>),
    Sudoku(CotBody<SudokuBoard, SudokuStep>),
}

impl CotExample {
    pub fn task(&self) -> TaskKind {
        match self {
            CotExample::Mult(_) => TaskKind::Mult,
            CotExample::Sudoku(_) => TaskKind::Sudoku,
        }
    }

    pub fn tier(&self) -> DifficultyTier {
        match self {
            CotExample::Mult(b) => b.tier,
            CotExample::Sudoku(b) => b.tier,
        }
    }

    pub fn style(&self) -> CorpusStyle {
        match self {
            CotExample::Mult(b) => b.style,
            CotExample::Sudoku(b) => b.style,
        }
    }

    /// Labels of every step in order.
    pub fn labels(&self) -> Vec<&Verification> {
        match self {
            CotExample::Mult(b) => b.steps.iter().map(|s| &s.labels).collect(),
            CotExample::Sudoku(b) => b.steps.iter().map(|s| &s.labels).collect(),
        }
    }

    /// Recomputes every non-empty label set with the oracle verifier and
    /// reports whether all match.
    pub fn labels_match_oracle(&self) -> bool {
        fn check<T: RuleChecker>(task: T, style: CorpusStyle, steps: &[CotStep<T::State, T::Step>]) -> bool {
            let Some(vs) = style.verification() else {
                return steps.iter().all(|s| s.labels.is_empty());
            };
            let oracle = OracleVerifier::new(task, vs);
            steps.iter().all(|s| {
                (style == CorpusStyle::OptionalDetailed && s.labels.is_empty())
                    || oracle.labels(&s.state, &s.step) == s.labels
            })
        }
        match self {
            CotExample::Mult(b) => check(MultTask, b.style, &b.steps),
            CotExample::Sudoku(b) => check(SudokuTask, b.style, &b.steps),
        }
    }
}

/// Relative weights of the two training tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierMix {
    pub id_easy: f64,
    pub id_hard: f64,
}

impl Default for TierMix {
    fn default() -> Self {
        TierMix { id_easy: 0.5, id_hard: 0.5 }
    }
}

impl TierMix {
    /// Splits `count` examples between the tiers, rounding the easy share to
    /// the nearest integer.
    pub fn split(&self, count: u64) -> (u64, u64) {
        let easy = (count as f64 * self.id_easy / (self.id_easy + self.id_hard)).round() as u64;
        let easy = easy.min(count);
        (easy, count - easy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub task: TaskKind,
    pub example_count: u64,
    #[serde(default)]
    pub tier_mix: TierMix,
    pub style: CorpusStyle,
    #[serde(default)]
    pub proposal_noise: f64,
    pub seed: u64,
}

impl CorpusSpec {
    /// Default example count per task.
    pub fn default_count(task: TaskKind) -> u64 {
        match task {
            TaskKind::Sudoku => 36_000,
            _ => 32_000,
        }
    }

    pub fn new(task: TaskKind, style: CorpusStyle, seed: u64) -> Self {
        CorpusSpec {
            task,
            example_count: Self::default_count(task),
            tier_mix: TierMix::default(),
            style,
            proposal_noise: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !matches!(self.task, TaskKind::Mult | TaskKind::Sudoku) {
            return Err(CorpusError::Spec(format!("no corpus for task {}", self.task)));
        }
        let TierMix { id_easy, id_hard } = self.tier_mix;
        if !(id_easy >= 0.0 && id_hard >= 0.0 && id_easy + id_hard > 0.0 && (id_easy + id_hard).is_finite()) {
            return Err(CorpusError::Spec("tier weights must be nonnegative with a positive sum".into()));
        }
        if !(0.0..=1.0).contains(&self.proposal_noise) {
            return Err(CorpusError::Spec(format!("proposal noise {} is not a probability", self.proposal_noise)));
        }
        Ok(())
    }

    /// Tier of the `i`-th base example: easy examples first.
    pub fn tier_of(&self, i: u64) -> DifficultyTier {
        let (easy, _) = self.tier_mix.split(self.example_count);
        if i < easy {
            DifficultyTier::IdEasy
        } else {
            DifficultyTier::IdHard
        }
    }
}

type PathState<T> = <T as Transition>::State;
type PathStep<T> = <T as Transition>::Step;

/// Walks the expert path from `start`. With `noise`, the step recorded at
/// each state is the expert's step corrupted with the given probability and
/// labeled by the oracle.
fn walk<T, E, C>(
    task: &T,
    start: PathState<T>,
    mut expert: E,
    noise: Option<(&C, f64, &OracleVerifier<T>)>,
    rng: &mut StreamRng,
) -> Result<(Vec<CotStep<PathState<T>, PathStep<T>>>, PathStep<T>), CorpusError>
where
    T: Transition + RuleChecker<State = PathState<T>, Step = PathStep<T>>,
    PathStep<T>: Sync,
    E: FnMut(&PathState<T>, &mut StreamRng) -> Result<PathStep<T>, TaskError>,
    C: StepCorrupter<PathState<T>, PathStep<T>> + Clone,
{
    let mut state = start;
    let mut steps = Vec::new();
    loop {
        let expert_step = expert(&state, rng)?;
        let (step, labels) = match noise {
            Some((corrupter, p, oracle)) => {
                let policy = NoisyPolicy::new(Fixed(expert_step.clone()), corrupter.clone(), p)?;
                let proposal = policy.sample(&state, rng);
                let labels = oracle.labels(&state, &proposal);
                (proposal, labels)
            }
            None => (expert_step.clone(), Verification::omitted()),
        };
        steps.push(CotStep { state: state.clone(), step, labels });
        if expert_step.is_answer() {
            return Ok((steps, expert_step));
        }
        state = task.apply(&state, &expert_step).map_err(|e| CorpusError::Path(e.0))?;
    }
}

/// Replays a fixed step so a noisy policy corrupts the expert's choice.
struct Fixed<R>(R);

impl<S, R: Clone + Sync> Policy<S, R> for Fixed<R> {
    fn sample(&self, _state: &S, _rng: &mut StreamRng) -> R {
        self.0.clone()
    }
}

fn mult_example(spec: &CorpusSpec, tier: DifficultyTier, rng: &mut StreamRng) -> Result<CotExample, CorpusError> {
    let query = gen_query(TaskKind::Mult, tier, rng)?;
    let start = MultTask.initial_state(&query).map_err(|e| CorpusError::Path(e.to_string()))?;
    let expert = |s: &MultState, _: &mut StreamRng| Ok(MultExpert::step(s));
    let corrupter = MultCorrupter::all_kinds();
    let oracle = spec.style.verification().map(|vs| OracleVerifier::new(MultTask, vs));
    let noise = oracle.as_ref().map(|o| (&corrupter, spec.proposal_noise, o));
    let (steps, answer) = walk(&MultTask, start, expert, noise, rng)?;
    Ok(CotExample::Mult(CotBody { tier, query, style: spec.style, steps, answer }))
}

fn sudoku_example(spec: &CorpusSpec, tier: DifficultyTier, rng: &mut StreamRng) -> Result<CotExample, CorpusError> {
    let query = gen_query(TaskKind::Sudoku, tier, rng)?;
    let start = SudokuTask.initial_state(&query).map_err(|e| CorpusError::Path(e.to_string()))?;
    let solution = sudoku::solve(&start).ok_or_else(|| CorpusError::Path("puzzle has no solution".into()))?;
    let expert = |s: &SudokuBoard, rng: &mut StreamRng| sudoku::guided_expert_step(s, &solution, rng);
    let oracle = spec.style.verification().map(|vs| OracleVerifier::new(SudokuTask, vs));
    let noise = oracle.as_ref().map(|o| (&SudokuCorrupter, spec.proposal_noise, o));
    let (steps, answer) = walk(&SudokuTask, start, expert, noise, rng)?;
    Ok(CotExample::Sudoku(CotBody { tier, query, style: spec.style, steps, answer }))
}

/// Generates the corpus described by `spec`, in a deterministic order.
/// Under the optional style each example is followed by its copy with empty
/// verification.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<CotExample>, CorpusError> {
    spec.validate()?;
    let seed = Seed(spec.seed);
    let base: Vec<CotExample> = (0..spec.example_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.stream(i);
            let tier = spec.tier_of(i);
            match spec.task {
                TaskKind::Mult => mult_example(spec, tier, &mut rng),
                _ => sudoku_example(spec, tier, &mut rng),
            }
        })
        .collect::<Result<_, _>>()?;
    if spec.style != CorpusStyle::OptionalDetailed {
        return Ok(base);
    }
    Ok(base
        .into_iter()
        .flat_map(|ex| {
            let empty = match &ex {
                CotExample::Mult(b) => CotExample::Mult(b.without_labels()),
                CotExample::Sudoku(b) => CotExample::Sudoku(b.without_labels()),
            };
            [ex, empty]
        })
        .collect())
}

/// An episode log of a concrete task, one per JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskEpisode {
    Mult(EpisodeRecord<MultState, MultStep>),
    Sudoku(EpisodeRecord<SudokuBoard, SudokuStep>),
}

impl TaskEpisode {
    pub fn query(&self) -> &Query {
        match self {
            TaskEpisode::Mult(r) => &r.query,
            TaskEpisode::Sudoku(r) => &r.query,
        }
    }

    pub fn is_correct(&self) -> bool {
        match self {
            TaskEpisode::Mult(r) => r.is_correct(),
            TaskEpisode::Sudoku(r) => r.is_correct(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Writes one JSON object per line; gzip when the path ends in `.gz`.
pub fn write_jsonl<'a, T, I>(items: I, path: &Path) -> Result<(), CorpusError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut out: Box<dyn Write> = if is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(path)(e.into()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads a JSONL file written by [`write_jsonl`]. Blank lines are skipped;
/// parse errors name the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader: Box<dyn Read> = if is_gz(path) { Box::new(MultiGzDecoder::new(file)) } else { Box::new(file) };
    parse_jsonl(BufReader::new(reader)).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_err(path)(source),
        other => other,
    })
}

/// [`read_jsonl`] over any buffered reader.
pub fn parse_jsonl<T: DeserializeOwned, B: BufRead>(reader: B) -> Result<Vec<T>, CorpusError> {
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: "<reader>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: i + 1, message: e.to_string() })?;
        items.push(item);
    }
    Ok(items)
}
