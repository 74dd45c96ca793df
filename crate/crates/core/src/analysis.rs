//! Inspection of a trained checkpoint: per-skill deterministic rollouts,
//! pairwise distinctness, and per-resource coverage, with their CSV forms.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{sample_skill, AgentError, Networks};
use crate::env::RESOURCE_NAMES;
use crate::{Checkpoint, DomainState, Environment, ResourceVector, SkillId, TerminalKind};

/// Start state of the evaluation rollouts: the midpoint of the default
/// initial range.
pub const DEFAULT_EVAL_INIT: [f64; 4] = [6.0; 4];

pub const DEFAULT_DISTINCT_THRESHOLD: f64 = 1.0;

pub const SKILLS_HEADER: [&str; 7] = [
    "skill_id",
    "power_pct",
    "bandwidth_pct",
    "memory_pct",
    "compute_pct",
    "steps",
    "terminal_kind",
];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("invalid evaluation start state {0:?}: components must lie in (0, cap)")]
    InitState([f64; 4]),
    #[error("skill {skill} did not terminate within {limit} steps")]
    NoTermination { skill: usize, limit: usize },
    #[error("need at least {needed} skills, got {found}")]
    TooFewSkills { needed: usize, found: usize },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Result of rolling out one skill deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillProfile {
    pub skill: SkillId,
    pub final_allocation: ResourceVector,
    pub steps: usize,
    pub terminal_kind: TerminalKind,
    /// Every visited allocation, starting with the initial one.
    pub trajectory: Vec<ResourceVector>,
}

impl SkillProfile {
    pub fn summary(&self) -> SkillSummary {
        SkillSummary {
            skill: self.skill,
            final_allocation: self.final_allocation,
            steps: self.steps,
            terminal_kind: self.terminal_kind,
        }
    }
}

/// One row of `skills.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillSummary {
    pub skill: SkillId,
    pub final_allocation: ResourceVector,
    pub steps: usize,
    pub terminal_kind: TerminalKind,
}

fn check_init(ckpt: &Checkpoint, init: &DomainState) -> Result<(), AnalysisError> {
    let ok = init
        .allocation
        .iter()
        .all(|v| v.is_finite() && v > 0.0 && v < ckpt.env.cap);
    if ok && !init.terminal.is_terminal() {
        Ok(())
    } else {
        Err(AnalysisError::InitState(init.allocation.0))
    }
}

fn rollout_with(
    ckpt: &Checkpoint,
    nets: &Networks,
    env: &Environment,
    skill: SkillId,
    init: &DomainState,
) -> Result<SkillProfile, AnalysisError> {
    // The deterministic policy never draws from the generator.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let limit = ckpt.env.max_episode_steps();
    let mut state = *init;
    let mut trajectory = vec![state.allocation];
    loop {
        let (action, _) = ckpt.act(nets, &state.allocation, skill, &mut unused, true)?;
        let (next, kind) = env.step(&state, &action).map_err(AgentError::from)?;
        trajectory.push(next.allocation);
        state = next;
        if kind.is_terminal() {
            return Ok(SkillProfile {
                skill,
                final_allocation: state.allocation,
                steps: state.step_count,
                terminal_kind: kind,
                trajectory,
            });
        }
        if state.step_count >= limit {
            return Err(AnalysisError::NoTermination {
                skill: skill.index(),
                limit,
            });
        }
    }
}

/// Rolls the mean action of `skill` from `init` until the episode ends.
pub fn rollout_skill(
    ckpt: &Checkpoint,
    skill: SkillId,
    init: &DomainState,
) -> Result<SkillProfile, AnalysisError> {
    check_init(ckpt, init)?;
    let env = Environment::new(ckpt.env).map_err(AgentError::from)?;
    rollout_with(ckpt, &ckpt.networks(), &env, skill, init)
}

/// One profile per skill, all from the same start state, in skill order.
pub fn skill_table(ckpt: &Checkpoint, init: &DomainState) -> Result<Vec<SkillProfile>, AnalysisError> {
    check_init(ckpt, init)?;
    let env = Environment::new(ckpt.env).map_err(AgentError::from)?;
    let nets = ckpt.networks();
    (0..ckpt.train.n_skills)
        .map(|z| rollout_with(ckpt, &nets, &env, SkillId(z), init))
        .collect()
}

/// Top-1 accuracy of the discriminator on next-states visited by the
/// stochastic skill-conditioned policy from fresh episodes.
pub fn discriminator_accuracy(ckpt: &Checkpoint, n_states: usize, seed: u64) -> Result<f64, AnalysisError> {
    let env = Environment::new(ckpt.env).map_err(AgentError::from)?;
    let nets = ckpt.networks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(4 * n_states);
    let mut labels = Vec::with_capacity(n_states);
    while labels.len() < n_states {
        let skill = sample_skill(&mut rng, ckpt.train.n_skills)?;
        let mut state = env.reset(&mut rng);
        while labels.len() < n_states {
            let (action, _) = ckpt.act(&nets, &state.allocation, skill, &mut rng, false)?;
            let (next, kind) = env.step(&state, &action).map_err(AgentError::from)?;
            inputs.extend(next.allocation.iter().map(|v| v / ckpt.env.cap));
            labels.push(skill.index());
            state = next;
            if kind.is_terminal() {
                break;
            }
        }
    }
    if n_states == 0 {
        return Ok(0.0);
    }
    let logits = nets
        .discriminator
        .forward_batch(&ckpt.params.discriminator, &inputs, n_states)
        .map_err(AgentError::from)?
        .into_output();
    let n = ckpt.train.n_skills;
    let correct = logits
        .chunks_exact(n)
        .zip(&labels)
        .filter(|(row, &z)| {
            let argmax = row
                .iter()
                .enumerate()
                .fold(0, |best, (k, &v)| if v > row[best] { k } else { best });
            argmax == z
        })
        .count();
    Ok(correct as f64 / n_states as f64)
}

/// L1 distances between final allocations.
#[derive(Debug, Clone, PartialEq)]
pub struct Distinctness {
    /// Symmetric matrix with a zero diagonal.
    pub distances: Vec<Vec<f64>>,
    pub threshold: f64,
    pub pairs: usize,
    pub distinct_pairs: usize,
    /// Fraction of unordered pairs with distance `>= threshold`.
    pub fraction: f64,
}

pub fn pairwise_distinctness(finals: &[ResourceVector], threshold: f64) -> Result<Distinctness, AnalysisError> {
    if finals.len() < 2 {
        return Err(AnalysisError::TooFewSkills {
            needed: 2,
            found: finals.len(),
        });
    }
    let n = finals.len();
    let mut distances = vec![vec![0.0; n]; n];
    let mut distinct_pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d = finals[i].l1_distance(&finals[j]);
            distances[i][j] = d;
            distances[j][i] = d;
            if d >= threshold {
                distinct_pairs += 1;
            }
        }
    }
    let pairs = n * (n - 1) / 2;
    Ok(Distinctness {
        distances,
        threshold,
        pairs,
        distinct_pairs,
        fraction: distinct_pairs as f64 / pairs as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceCoverage {
    pub resource: &'static str,
    /// Final values of every skill, ascending.
    pub sorted: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub span: f64,
    /// Counts per 1%-wide bin `[k, k + 1)`; the last bin `[floor(cap), ...)`
    /// holds allocations sitting exactly at the cap.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub resources: [ResourceCoverage; 4],
}

pub fn coverage(finals: &[ResourceVector], cap: f64) -> Result<CoverageReport, AnalysisError> {
    if finals.is_empty() {
        return Err(AnalysisError::TooFewSkills { needed: 1, found: 0 });
    }
    let bins = cap.floor() as usize + 1;
    let resources = std::array::from_fn(|r| {
        let mut sorted: Vec<f64> = finals.iter().map(|v| v[r]).collect();
        sorted.sort_by(f64::total_cmp);
        let mut histogram = vec![0; bins];
        for &v in &sorted {
            let bin = (v.max(0.0).floor() as usize).min(bins - 1);
            histogram[bin] += 1;
        }
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        ResourceCoverage {
            resource: RESOURCE_NAMES[r],
            min,
            max,
            span: max - min,
            histogram,
            sorted,
        }
    });
    Ok(CoverageReport { resources })
}

fn csv_error(e: csv::Error) -> AnalysisError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AnalysisError::Io(io),
        other => AnalysisError::Csv {
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_skills_csv<W: Write>(out: W, rows: &[SkillSummary]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SKILLS_HEADER).map_err(csv_error)?;
    for r in rows {
        let v = r.final_allocation;
        w.write_record([
            r.skill.index().to_string(),
            format!("{:.6}", v[0]),
            format!("{:.6}", v[1]),
            format!("{:.6}", v[2]),
            format!("{:.6}", v[3]),
            r.steps.to_string(),
            r.terminal_kind.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `skills.csv`. Errors name the offending line or missing column.
pub fn read_skills_csv<R: Read>(input: R) -> Result<Vec<SkillSummary>, AnalysisError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers().map_err(csv_error)?.clone();
    if let Some(missing) = SKILLS_HEADER.iter().find(|c| !header.iter().any(|h| h == **c)) {
        return Err(AnalysisError::Csv {
            line: 1,
            message: format!("header is missing column `{missing}`"),
        });
    }
    let col = |name: &str| header.iter().position(|h| h == name).expect("checked above");
    let idx: Vec<usize> = SKILLS_HEADER.iter().map(|c| col(c)).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| AnalysisError::Csv { line, message };
        if record.len() != header.len() {
            return Err(bad(format!(
                "expected {} columns, found {}",
                header.len(),
                record.len()
            )));
        }
        let field = |k: usize| &record[idx[k]];
        let skill = field(0)
            .parse::<usize>()
            .map_err(|e| bad(format!("skill_id `{}`: {e}", field(0))))?;
        let mut alloc = [0.0; 4];
        for (r, slot) in alloc.iter_mut().enumerate() {
            let raw = field(1 + r);
            *slot = raw
                .parse::<f64>()
                .map_err(|e| bad(format!("{} `{raw}`: {e}", SKILLS_HEADER[1 + r])))?;
            if !slot.is_finite() || *slot < 0.0 {
                return Err(bad(format!("{} must be finite and >= 0", SKILLS_HEADER[1 + r])));
            }
        }
        let steps = field(5)
            .parse::<usize>()
            .map_err(|e| bad(format!("steps `{}`: {e}", field(5))))?;
        let terminal_kind = field(6).parse::<TerminalKind>().map_err(bad)?;
        rows.push(SkillSummary {
            skill: SkillId(skill),
            final_allocation: ResourceVector::from(alloc),
            steps,
            terminal_kind,
        });
    }
    Ok(rows)
}

/// Long-form rank table followed by a blank line and a min/max/span summary.
pub fn write_coverage_csv<W: Write>(mut out: W, report: &CoverageReport) -> Result<(), AnalysisError> {
    writeln!(out, "resource,skill_rank,value")?;
    for r in &report.resources {
        for (rank, v) in r.sorted.iter().enumerate() {
            writeln!(out, "{},{rank},{v:.6}", r.resource)?;
        }
    }
    writeln!(out)?;
    writeln!(out, "resource,min,max,span")?;
    for r in &report.resources {
        writeln!(out, "{},{:.6},{:.6},{:.6}", r.resource, r.min, r.max, r.span)?;
    }
    out.flush()?;
    Ok(())
}
