//! File-based workflows: train a checkpoint, tabulate its skills, summarize
//! coverage, and compose skills for a slice request.
//!
//! Exit codes: 0 success, 1 infeasible request, 2 input error, 3 numerical
//! failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use edgeskills::agent::{train_with_progress, AgentError, CheckpointError};
use edgeskills::analysis::{
    self, coverage, read_skills_csv, skill_table, write_coverage_csv, write_skills_csv, AnalysisError,
    DEFAULT_EVAL_INIT,
};
use edgeskills::controller::{compose, CompositionResult, SliceRequest, Status, DEFAULT_MAX_SEQUENCE_LENGTH};
use edgeskills::{Checkpoint, DomainState, EnvConfig, ResourceVector, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "edgeskills", version, about = "Unsupervised skill discovery for edge resource slicing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a skill-discovery agent and write its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out every skill deterministically and write skills.csv.
    Skills {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start allocation as four comma-separated percentages.
        #[arg(long, value_parser = parse_init)]
        init: Option<ResourceVector>,
    },
    /// Summarize per-resource coverage of a skills.csv.
    Coverage {
        #[arg(long)]
        skills: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose skills to satisfy a slice request.
    Compose {
        #[arg(long)]
        skills: PathBuf,
        #[arg(long)]
        request: PathBuf,
    },
}

fn parse_init(s: &str) -> Result<ResourceVector, String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<_, _>>()?;
    let array: [f64; 4] = values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 4 values, got {}", v.len()))?;
    Ok(ResourceVector::from(array))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Agent(a) => a.into(),
            AnalysisError::NoTermination { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub init_state: ResourceVector,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            init_state: ResourceVector::from(DEFAULT_EVAL_INIT),
        }
    }
}

/// Contents of a run configuration file. Every section and key is optional;
/// an empty file gives the default run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config `{}`: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config `{}`: {e}", path.display())))?;
        config.validate().map_err(|e| CliError::Input(format!("invalid config `{}`: {e}", path.display())))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.env.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        let init = self.eval.init_state;
        if !init.iter().all(|v| v.is_finite() && v > 0.0 && v < self.env.cap) {
            return Err(format!("eval.init_state {:?} must lie in (0, cap)", init.0));
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("cannot write `{}`: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot read `{}`: {e}", path.display())))
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("cannot write `{}`: {e}", path.display()))
}

fn read_skills(path: &Path) -> Result<Vec<analysis::SkillSummary>, CliError> {
    read_skills_csv(open(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    episodes: Option<usize>,
    out_path: &Path,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.train.seed = seed;
    }
    if let Some(episodes) = episodes {
        config.train.episodes = episodes;
    }
    config.validate().map_err(CliError::Input)?;
    let total = config.train.episodes;
    let mut write_failed = None;
    let ckpt = train_with_progress(config.env, config.train, |p| {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let line = writeln!(
            stdout,
            "episode {}/{total}  mean_length {:.3}  mean_intrinsic_reward {}  discriminator_accuracy {}  updates {}",
            p.episodes_completed,
            p.mean_episode_length,
            fmt(p.mean_intrinsic_reward),
            fmt(p.discriminator_accuracy),
            p.updates
        );
        if let Err(e) = line {
            write_failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_failed {
        return Err(CliError::Input(format!("cannot write progress: {e}")));
    }
    ckpt.save(out_path)?;
    writeln!(stdout, "wrote checkpoint to {}", out_path.display()).map_err(io_error(out_path))?;
    Ok(())
}

pub fn cmd_skills(
    ckpt_path: &Path,
    out_path: &Path,
    init: Option<ResourceVector>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let init = DomainState::from_allocation(init.unwrap_or(ResourceVector::from(DEFAULT_EVAL_INIT)));
    let profiles = skill_table(&ckpt, &init)?;
    let rows: Vec<_> = profiles.iter().map(|p| p.summary()).collect();
    let mut out = create(out_path)?;
    write_skills_csv(&mut out, &rows)?;
    out.flush().map_err(io_error(out_path))?;
    writeln!(stdout, "wrote {} skills to {}", rows.len(), out_path.display()).map_err(io_error(out_path))?;
    Ok(())
}

pub fn cmd_coverage(skills_path: &Path, out_path: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    let rows = read_skills(skills_path)?;
    let finals: Vec<_> = rows.iter().map(|r| r.final_allocation).collect();
    let report = coverage(&finals, EnvConfig::default().cap)?;
    let mut out = create(out_path)?;
    write_coverage_csv(&mut out, &report)?;
    out.flush().map_err(io_error(out_path))?;
    let mut summary = format!("{:<10} {:>10} {:>10} {:>10}\n", "resource", "min", "max", "span");
    for r in &report.resources {
        summary.push_str(&format!("{:<10} {:>10.6} {:>10.6} {:>10.6}\n", r.resource, r.min, r.max, r.span));
    }
    stdout.write_all(summary.as_bytes()).map_err(io_error(out_path))?;
    Ok(())
}

pub fn format_result(result: &CompositionResult) -> String {
    #[derive(serde::Serialize)]
    struct Printed<'a> {
        status: Status,
        sequence: Vec<usize>,
        total: &'a ResourceVector,
    }
    toml::to_string(&Printed {
        status: result.status,
        sequence: result.sequence.iter().map(|s| s.index()).collect(),
        total: &result.total,
    })
    .expect("composition result serializes")
}

/// Returns whether the request was satisfied.
pub fn cmd_compose(skills_path: &Path, request_path: &Path, stdout: &mut dyn Write) -> Result<bool, CliError> {
    let rows = read_skills(skills_path)?;
    let text = fs::read_to_string(request_path)
        .map_err(|e| CliError::Input(format!("cannot read request `{}`: {e}", request_path.display())))?;
    let request: SliceRequest = toml::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid request `{}`: {e}", request_path.display())))?;
    let result = compose(&rows, &request, DEFAULT_MAX_SEQUENCE_LENGTH)
        .map_err(|e| CliError::Input(format!("invalid request `{}`: {e}", request_path.display())))?;
    stdout
        .write_all(format_result(&result).as_bytes())
        .map_err(|e| CliError::Input(format!("cannot write result: {e}")))?;
    Ok(result.status == Status::Satisfied)
}

/// Runs one parsed command and maps its outcome to an exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let outcome = match cli.command {
        Command::Train {
            config,
            seed,
            episodes,
            out,
        } => cmd_train(&config, seed, episodes, &out, stdout).map(|_| EXIT_OK),
        Command::Skills { ckpt, out, init } => cmd_skills(&ckpt, &out, init, stdout).map(|_| EXIT_OK),
        Command::Coverage { skills, out } => cmd_coverage(&skills, &out, stdout).map(|_| EXIT_OK),
        Command::Compose { skills, request } => {
            cmd_compose(&skills, &request, stdout).map(|ok| if ok { EXIT_OK } else { EXIT_INFEASIBLE })
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, stdout, stderr),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(rendered.as_bytes())
            } else {
                stdout.write_all(rendered.as_bytes())
            };
            code
        }
    }
}
