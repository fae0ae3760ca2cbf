//! `reflect-lab` command-line front end.
//!
//! Every command writes its output file plus `<out>.manifest.json` holding
//! the resolved configuration. Re-running with `--config <manifest>`
//! reproduces the output byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use reflect_lab::corpus::{self, CorpusSpec, CorpusStyle, TaskEpisode, TierMix};
use reflect_lab::metrics::{self, ModeKind};
use reflect_lab::mtp::{run_nonreflective, Paired, Query, TaskKind};
use reflect_lab::reflect::{run_rmtp, run_rtbs, ReflectConfig, RootAttempts};
use reflect_lab::rng::Seed;
use reflect_lab::sim::{self, SimStatus};
use reflect_lab::tasks::mult::MultTask;
use reflect_lab::tasks::sudoku::SudokuTask;
use reflect_lab::tasks::{
    gen_query, make_noisy_mult_policy, make_noisy_sudoku_policy, DifficultyTier, NoisyVerifier, OracleVerifier,
    VerificationStyle,
};
use reflect_lab::theory::{self, SimplifiedParams};

/// Exit code when outputs were written but some statistic is flagged.
const EXIT_FLAGGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "reflect-lab", version, about = "Reflective reasoning experiments", args_override_self = true)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "REFLECT_LAB_THREADS")]
    threads: Option<usize>,
    /// JSON file with flag values; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Accuracy curves of the simplified task from the analytic theory.
    TheoryCurve(TheoryCurveArgs),
    /// Monte-Carlo accuracy of the simplified task next to theory.
    Simulate(SimulateArgs),
    /// Generate a chain-of-thought corpus.
    GenData(GenDataArgs),
    /// Run a concrete task with a noisy policy and verifier.
    RunTask(RunTaskArgs),
    /// First-attempt verification error rates from episode logs.
    EstimateErrors(EstimateArgs),
    /// Accuracy, reflection frequency or theory-vs-simulation tables.
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize, Clone)]
struct ParamArgs {
    /// Planning correctness.
    #[arg(long, default_value_t = 0.8)]
    mu: f64,
    /// False negative rate.
    #[arg(long, default_value_t = 0.3)]
    e_minus: f64,
    /// False positive rate.
    #[arg(long, default_value_t = 0.2)]
    e_plus: f64,
    /// Rejection rate at negative states.
    #[arg(long, default_value_t = 0.8)]
    f: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<SimplifiedParams> {
        Ok(SimplifiedParams::new(self.mu, self.e_minus, self.e_plus, self.f)?)
    }
}

#[derive(Args, Debug, Serialize)]
struct TheoryCurveArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// RTBS widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 16, 64])]
    m: Vec<u32>,
    /// Largest scale.
    #[arg(long, default_value_t = 30)]
    n: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    None,
    Rmtp,
    Rtbs,
}

impl From<ModeArg> for ModeKind {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::None => ModeKind::None,
            ModeArg::Rmtp => ModeKind::Rmtp,
            ModeArg::Rtbs => ModeKind::Rtbs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Executors, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::None, ModeArg::Rmtp, ModeArg::Rtbs])]
    mode: Vec<ModeArg>,
    /// RTBS widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [4])]
    m: Vec<u32>,
    /// Scales: `30`, `1-30` or `1,5,20`.
    #[arg(long, default_value = "1-30")]
    n: String,
    #[arg(long, default_value_t = 200_000)]
    episodes: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TaskArg {
    Mult,
    Sudoku,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Mult => TaskKind::Mult,
            TaskArg::Sudoku => TaskKind::Sudoku,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StyleArg {
    None,
    Binary,
    Detailed,
    OptionalDetailed,
}

impl From<StyleArg> for CorpusStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::None => CorpusStyle::None,
            StyleArg::Binary => CorpusStyle::Binary,
            StyleArg::Detailed => CorpusStyle::Detailed,
            StyleArg::OptionalDetailed => CorpusStyle::OptionalDetailed,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum, default_value_t = StyleArg::None)]
    style: StyleArg,
    /// Probability that a recorded proposal is corrupted.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Base example count (default depends on the task).
    #[arg(long)]
    count: Option<u64>,
    /// Share of ID-Easy examples; the rest are ID-Hard.
    #[arg(long, default_value_t = 0.5)]
    easy_share: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TierArg {
    IdEasy,
    IdHard,
    OodHard,
}

impl From<TierArg> for DifficultyTier {
    fn from(t: TierArg) -> Self {
        match t {
            TierArg::IdEasy => DifficultyTier::IdEasy,
            TierArg::IdHard => DifficultyTier::IdHard,
            TierArg::OodHard => DifficultyTier::OodHard,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VerifyArg {
    Binary,
    Detailed,
}

#[derive(Args, Debug, Serialize)]
struct RunTaskArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum, default_value_t = TierArg::IdHard)]
    tier: TierArg,
    /// Executor.
    #[arg(long, value_enum, default_value_t = ModeArg::Rmtp)]
    mode: ModeArg,
    /// RTBS width.
    #[arg(long, default_value_t = 4)]
    m: u32,
    /// Probability that the policy corrupts a step.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Injected false negative rate of the verifier.
    #[arg(long, default_value_t = 0.0)]
    e_minus: f64,
    /// Injected false positive rate of the verifier.
    #[arg(long, default_value_t = 0.0)]
    e_plus: f64,
    /// Verification labels.
    #[arg(long, value_enum, default_value_t = VerifyArg::Binary)]
    style: VerifyArg,
    #[arg(long, default_value_t = 64)]
    reflective_budget: u64,
    #[arg(long, default_value_t = 96)]
    total_budget: u64,
    /// Queries to run.
    #[arg(long, default_value_t = 2000)]
    episodes: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `csv` writes the accuracy table, `jsonl` the episode logs.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    /// Episode log written by `run-task --format jsonl`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ReportKind {
    Accuracy,
    Frequency,
    TheoryVsSim,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    #[arg(long, value_enum)]
    kind: ReportKind,
    /// Episode logs (accuracy and frequency reports).
    #[arg(long, value_delimiter = ',')]
    input: Vec<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::None, ModeArg::Rmtp, ModeArg::Rtbs])]
    mode: Vec<ModeArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 16, 64])]
    m: Vec<u32>,
    #[arg(long, default_value = "1-30")]
    n: String,
    #[arg(long, default_value_t = 200_000)]
    episodes: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `30`, `1-30` or `1,5,20`.
fn parse_scales(s: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty scale range {part}");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("bad scale {part:?}"))?),
        }
    }
    if out.is_empty() {
        bail!("no scales given");
    }
    Ok(out)
}

/// Turns a JSON config object into flags placed before the user's own.
fn config_flags(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Value::Object(mut map) = value else { bail!("{} is not a JSON object", path.display()) };
    // Manifests nest the flags under "config".
    if let Some(Value::Object(inner)) = map.remove("config") {
        map = inner;
    }
    let mut flags = Vec::new();
    for (key, v) in map {
        if key == "command" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let text = match v {
            Value::Null => continue,
            Value::Bool(true) => {
                flags.push(flag);
                continue;
            }
            Value::Bool(false) => continue,
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            Value::Object(params) => {
                // Flattened parameter groups.
                for (k, p) in params {
                    flags.push(format!("--{}", k.replace('_', "-")));
                    flags.push(p.to_string());
                }
                continue;
            }
        };
        flags.push(flag);
        flags.push(text);
    }
    Ok(flags)
}

/// The `--config` value, found before full parsing so that the config can
/// supply required flags.
fn config_arg(argv: &[String]) -> Option<PathBuf> {
    argv.iter().enumerate().find_map(|(i, a)| match a.strip_prefix("--config") {
        Some("") => argv.get(i + 1).map(PathBuf::from),
        Some(rest) => rest.strip_prefix('=').map(PathBuf::from),
        None => None,
    })
}

fn parse_cli() -> Result<Cli> {
    let argv: Vec<String> = std::env::args().collect();
    let Some(config) = config_arg(&argv) else { return Ok(Cli::parse_from(&argv)) };
    let flags = config_flags(&config)?;
    // Insert the config flags right after the subcommand name.
    let sub = argv
        .iter()
        .position(|a| {
            ["theory-curve", "simulate", "gen-data", "run-task", "estimate-errors", "report"].contains(&a.as_str())
        })
        .context("no subcommand")?;
    let mut merged = argv[..=sub].to_vec();
    merged.extend(flags);
    merged.extend_from_slice(&argv[sub + 1..]);
    Ok(Cli::parse_from(merged))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a Command,
    outputs: Vec<String>,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(command: &Command, out: &Path) -> Result<()> {
    let manifest = Manifest {
        tool: "reflect-lab",
        version: env!("CARGO_PKG_VERSION"),
        config: command,
        outputs: vec![file_name(out)],
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = manifest_path(out);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Outcome of a command: whether some statistic was flagged.
struct Flags(Vec<String>);

fn theory_curve(a: &TheoryCurveArgs) -> Result<Flags> {
    let p = a.params.params()?;
    write_text(&a.out, &theory::theory_curve_csv(&p, &a.m, a.n)?)?;
    let mut flags = Vec::new();
    if p.rates().is_degenerate() {
        flags.push("alpha = 1: RMTP never leaves a positive state".to_string());
    }
    Ok(Flags(flags))
}

fn simulate(a: &SimulateArgs) -> Result<Flags> {
    let p = a.params.params()?;
    let kinds: Vec<ModeKind> = a.mode.iter().map(|&m| m.into()).collect();
    let ns = parse_scales(&a.n)?;
    let modes = metrics::expand_modes(&kinds, &a.m);
    let points = sim::simulate_grid(&p, &modes, &ns, a.episodes, Seed(a.seed))?;
    match a.format {
        Format::Csv => write_text(&a.out, &sim::sim_points_csv(&points))?,
        Format::Jsonl => corpus::write_jsonl(&points, &a.out)?,
    }
    let flags = points
        .iter()
        .filter(|pt| pt.result.status == SimStatus::BudgetDominated)
        .map(|pt| format!("{} m={:?} n={}: {} episodes hit the proposal cap", pt.mode.name(), pt.mode.width(), pt.n, pt.result.budget_exhausted))
        .collect();
    Ok(Flags(flags))
}

fn gen_data(a: &GenDataArgs) -> Result<Flags> {
    let task: TaskKind = a.task.into();
    if !(0.0..=1.0).contains(&a.easy_share) {
        bail!("--easy-share must lie in [0, 1]");
    }
    let spec = CorpusSpec {
        task,
        example_count: a.count.unwrap_or_else(|| CorpusSpec::default_count(task)),
        tier_mix: TierMix { id_easy: a.easy_share, id_hard: 1.0 - a.easy_share },
        style: a.style.into(),
        proposal_noise: a.noise,
        seed: a.seed,
    };
    let examples = corpus::generate_corpus(&spec)?;
    corpus::write_jsonl(&examples, &a.out)?;
    Ok(Flags(Vec::new()))
}

fn run_episodes(a: &RunTaskArgs) -> Result<Vec<TaskEpisode>> {
    let style = match a.style {
        VerifyArg::Binary => VerificationStyle::Binary,
        VerifyArg::Detailed => VerificationStyle::Detailed,
    };
    let config = ReflectConfig {
        reflective_budget: a.reflective_budget,
        total_budget: a.total_budget,
        width: a.m,
        root: RootAttempts::Unlimited,
    };
    config.validate()?;
    let seed = Seed(a.seed);
    let tier: DifficultyTier = a.tier.into();
    let mode = a.mode;
    macro_rules! episodes {
        ($task:expr, $policy:expr, $variant:path) => {{
            let task = $task;
            let policy = Paired { policy: $policy, verifier: NoisyVerifier::new(OracleVerifier::new(task, style), a.e_minus, a.e_plus)? };
            (0..a.episodes)
                .into_par_iter()
                .map(|i| {
                    let mut rng = seed.stream(i);
                    let query: Query = gen_query(task.kind(), tier, &mut rng)?;
                    let record = match mode {
                        ModeArg::None => run_nonreflective(&task, &policy.policy, &query, config.total_budget, &mut rng)?,
                        ModeArg::Rmtp => run_rmtp(&task, &policy, &query, &config, &mut rng)?,
                        ModeArg::Rtbs => run_rtbs(&task, &policy, &query, &config, &mut rng)?,
                    };
                    Ok($variant(record))
                })
                .collect::<Result<Vec<_>>>()
        }};
    }
    use reflect_lab::mtp::Task as _;
    match a.task {
        TaskArg::Mult => episodes!(MultTask, make_noisy_mult_policy(a.noise)?, TaskEpisode::Mult),
        TaskArg::Sudoku => episodes!(SudokuTask, make_noisy_sudoku_policy(a.noise)?, TaskEpisode::Sudoku),
    }
}

fn run_task(a: &RunTaskArgs) -> Result<Flags> {
    let episodes = run_episodes(a)?;
    match a.format {
        Format::Jsonl => corpus::write_jsonl(&episodes, &a.out)?,
        Format::Csv => write_text(&a.out, &metrics::accuracy_csv(&metrics::task_accuracy_table(&episodes)))?,
    }
    Ok(Flags(Vec::new()))
}

fn read_episodes(paths: &[PathBuf]) -> Result<Vec<TaskEpisode>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(corpus::read_jsonl::<TaskEpisode>(p)?);
    }
    Ok(all)
}

fn estimate_errors(a: &EstimateArgs) -> Result<Flags> {
    let episodes = read_episodes(std::slice::from_ref(&a.input))?;
    let est = metrics::estimate_task_errors(&episodes);
    let mut text = serde_json::to_string_pretty(&est)?;
    text.push('\n');
    write_text(&a.out, &text)?;
    let mut flags = Vec::new();
    if est.e_plus_hat.is_none() {
        flags.push("e_plus undefined: no incorrect first attempts".to_string());
    }
    if est.e_minus_hat.is_none() {
        flags.push("e_minus undefined: no correct first attempts".to_string());
    }
    Ok(Flags(flags))
}

fn report(a: &ReportArgs) -> Result<Flags> {
    match a.kind {
        ReportKind::Accuracy | ReportKind::Frequency => {
            if a.input.is_empty() {
                bail!("--input is required for this report");
            }
            let episodes = read_episodes(&a.input)?;
            let text = if a.kind == ReportKind::Accuracy {
                metrics::accuracy_csv(&metrics::task_accuracy_table(&episodes))
            } else {
                metrics::task_reflection_frequency(&episodes).to_csv()
            };
            write_text(&a.out, &text)?;
            Ok(Flags(Vec::new()))
        }
        ReportKind::TheoryVsSim => {
            let p = a.params.params()?;
            let kinds: Vec<ModeKind> = a.mode.iter().map(|&m| m.into()).collect();
            let (points, csv) = metrics::theory_vs_sim_report(&p, &kinds, &parse_scales(&a.n)?, &a.m, a.episodes, Seed(a.seed))?;
            write_text(&a.out, &csv)?;
            let flags = points
                .iter()
                .filter(|pt| pt.result.status == SimStatus::BudgetDominated)
                .map(|pt| format!("{} n={}: budget dominated", pt.mode.name(), pt.n))
                .collect();
            Ok(Flags(flags))
        }
    }
}

fn out_path(command: &Command) -> &Path {
    match command {
        Command::TheoryCurve(a) => &a.out,
        Command::Simulate(a) => &a.out,
        Command::GenData(a) => &a.out,
        Command::RunTask(a) => &a.out,
        Command::EstimateErrors(a) => &a.out,
        Command::Report(a) => &a.out,
    }
}

fn run(cli: &Cli) -> Result<Flags> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
    }
    let flags = match &cli.command {
        Command::TheoryCurve(a) => theory_curve(a)?,
        Command::Simulate(a) => simulate(a)?,
        Command::GenData(a) => gen_data(a)?,
        Command::RunTask(a) => run_task(a)?,
        Command::EstimateErrors(a) => estimate_errors(a)?,
        Command::Report(a) => report(a)?,
    };
    write_manifest(&cli.command, out_path(&cli.command))?;
    Ok(flags)
}

fn main() -> ExitCode {
    let cli = match parse_cli() {
        Ok(cli) => cli,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(Flags(flags)) if flags.is_empty() => ExitCode::SUCCESS,
        Ok(Flags(flags)) => {
            for f in flags {
                eprintln!("flagged: {f}");
            }
            ExitCode::from(EXIT_FLAGGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
