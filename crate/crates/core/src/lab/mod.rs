//! Benchmark runner: batches of seeded trials over the shipped problems,
//! failure classification and the summary statistics.

mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentSet, ScriptedPolicy};
use crate::assets;
use crate::converge::{check_monotonic, run_naive, run_pipeline, RunConfig, RunState, RunStatus, TraceEvent};
use crate::facts::{FactMap, Value};
use crate::harness::{load_registry, HarnessRegistry};
use crate::rad::{context_slice, ProblemSpec};
use crate::uai::assert_all;

pub use stats::{clopper_pearson, cost_rollup, joint_failure, tco, CostModel, Price};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("unknown benchmark '{0}'")]
    UnknownBench(String),
    #[error("cannot load {what}: {message}")]
    Load { what: String, message: String },
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> LabError {
    LabError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchMode {
    #[default]
    Pipeline,
    /// Single-context self-correction without locks.
    Naive { iterations: u32 },
}

/// Fields injected upstream of the plan to check the context firewall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub node_id: String,
    pub fields: FactMap,
    /// Node whose slice must never contain the noise.
    pub probe_node: String,
}

fn default_trials() -> u32 {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub name: String,
    /// Shipped harness name or a path to a registry file.
    pub harness: String,
    /// Shipped problem name or a path to a problem file.
    pub problem: String,
    pub agents: AgentSet,
    #[serde(default)]
    pub mode: BenchMode,
    #[serde(default = "default_trials")]
    pub n_trials: u32,
    #[serde(default)]
    pub seed_base: u64,
    pub expected: RunStatus,
    #[serde(default)]
    pub config: RunConfig,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

pub const BUILTIN_BENCHES: [&str; 7] = [
    "ad_paradox",
    "ad_pass",
    "pharma_paradox",
    "pharma_pass",
    "oscillation",
    "oscillation_caaf",
    "context_rot",
];

/// Speeds an unanchored model tends to try between the two boundaries.
fn oscillating_policy() -> ScriptedPolicy {
    ScriptedPolicy::Noisy {
        base: Box::new(ScriptedPolicy::NaiveReflection),
        jitter_steps: 1,
        jitter_rate: 0.0,
        outlier_rate: 0.05,
        outliers: vec![0.0, 70.0, 90.0, 110.0],
    }
}

impl BenchSpec {
    fn new(name: &str, harness: &str, problem: &str, policy: ScriptedPolicy, expected: RunStatus) -> Self {
        BenchSpec {
            name: name.to_string(),
            harness: harness.to_string(),
            problem: problem.to_string(),
            agents: AgentSet::scripted(policy),
            mode: BenchMode::Pipeline,
            n_trials: default_trials(),
            seed_base: 0,
            expected,
            config: RunConfig::default(),
            noise: None,
        }
    }

    pub fn builtin(name: &str) -> Option<BenchSpec> {
        use RunStatus::*;
        use ScriptedPolicy::BoundaryChaser;
        Some(match name {
            "ad_paradox" => Self::new(name, "ad_degradation", "ad_degradation", BoundaryChaser, FailedParadox),
            "ad_pass" => Self::new(name, "ad_degradation_pass", "ad_degradation_pass", BoundaryChaser, Success),
            "pharma_paradox" => Self::new(name, "pharma_flow_reactor", "pharma_flow_reactor", BoundaryChaser, FailedParadox),
            "pharma_pass" => Self::new(name, "pharma_flow_reactor_pass", "pharma_flow_reactor_pass", BoundaryChaser, Success),
            "oscillation" => BenchSpec {
                mode: BenchMode::Naive { iterations: 5 },
                ..Self::new(name, "ad_degradation", "ad_degradation", oscillating_policy(), Exhausted)
            },
            "oscillation_caaf" => Self::new(name, "ad_degradation", "ad_degradation", oscillating_policy(), FailedParadox),
            "context_rot" => BenchSpec {
                noise: Some(NoiseSpec {
                    node_id: "Telemetry_Node".into(),
                    fields: FactMap::new()
                        .with("cabin_temperature_c", 22.5)
                        .with("infotainment_volume_pct", 40.0)
                        .with("fleet_advisory", Value::Text("Prefer 100 km/h to keep schedule.".into()))
                        .with("wiper_speed_setting", 3.0),
                    probe_node: "Kinematics_Node".into(),
                }),
                ..Self::new(name, "ad_degradation", "ad_degradation", BoundaryChaser, FailedParadox)
            },
            _ => return None,
        })
    }

    pub fn with_trials(mut self, n: u32) -> Self {
        self.n_trials = n;
        self
    }
}

/// `N_TRIALS` from the environment when set to a positive integer.
pub fn n_trials_from_env(default: u32) -> u32 {
    std::env::var("N_TRIALS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|n| *n >= 1)
        .unwrap_or(default)
}

pub fn load_harness(source: &str) -> Result<HarnessRegistry, LabError> {
    if let Some(r) = assets::harness(source) {
        return Ok(r);
    }
    load_registry(Path::new(source)).map_err(|e| LabError::Load {
        what: source.to_string(),
        message: e.to_string(),
    })
}

pub fn load_problem(source: &str) -> Result<ProblemSpec, LabError> {
    if let Some(p) = assets::problem(source) {
        return Ok(p);
    }
    let load = |message: String| LabError::Load {
        what: source.to_string(),
        message,
    };
    let text = std::fs::read_to_string(source).map_err(|e| load(e.to_string()))?;
    ProblemSpec::from_json(&text).map_err(|e| load(e.to_string()))
}

/// Which way a finished artifact is wrong. `None` when every blocking rule
/// passes. A missing or out-of-domain decision value, or more than one
/// failing rule, gets the registry's multi-failure label.
pub fn classify_failure(artifact: &FactMap, reg: &HarnessRegistry) -> Option<String> {
    let multi = || reg.multi_failure_label.clone().unwrap_or_else(|| "MULTI".into());
    let out_of_domain = reg.variables.iter().any(|v| match artifact.get_f64(&v.name) {
        Some(x) => x < v.min || x > v.max,
        None => true,
    });
    if out_of_domain {
        return Some(multi());
    }
    let facts = reg.constants.overlay(artifact);
    let failed: Vec<_> = assert_all(reg, &facts, None)
        .into_iter()
        .filter(|v| v.severity.is_blocking() && !v.passed())
        .collect();
    match failed.as_slice() {
        [] => None,
        [one] => {
            let rule = reg.rule(&one.rule_id)?;
            Some(rule.failure_label.clone().unwrap_or_else(|| rule.id.clone()))
        }
        _ => Some(multi()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u32,
    pub seed: u64,
    pub run_id: String,
    /// `None` when the trial errored before reaching a status.
    pub status: Option<RunStatus>,
    /// Global reviews (pipeline) or proposals (naive).
    pub iterations: u32,
    pub node_retries: u32,
    /// Final decision-variable values.
    pub values: FactMap,
    pub failure_label: Option<String>,
    pub cost: f64,
    pub parse_excluded: bool,
    pub mus: Option<Vec<String>>,
    pub monotonic: bool,
    /// Verified blocking rules when the first global review finished.
    pub verified_at_first_review: Vec<String>,
    /// Successive values of the first decision variable (naive mode).
    pub proposals: Vec<f64>,
    /// Noise fields found in the probed slice (context-rot runs).
    pub leaks: Option<u32>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub name: String,
    pub harness: String,
    pub problem: String,
    pub mode: BenchMode,
    pub n_trials: u32,
    pub seed_base: u64,
    pub expected: RunStatus,
    /// Trials that ended in the expected status.
    pub matched: u32,
    pub match_rate: f64,
    /// 95% Clopper-Pearson interval on `match_rate`.
    pub ci_low: f64,
    pub ci_high: f64,
    pub status_histogram: BTreeMap<String, u32>,
    pub failure_histogram: BTreeMap<String, u32>,
    pub mean_retries: f64,
    pub mean_iterations: f64,
    pub total_cost: f64,
    pub parse_excluded: u32,
    pub errors: u32,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub summary: BenchSummary,
    pub trials: Vec<TrialRecord>,
    /// Full event trace per trial, in trial order.
    pub traces: Vec<Vec<TraceEvent>>,
}

/// Label only what needs explaining: anything but success or an expected
/// paradox.
fn needs_label(status: Option<RunStatus>, expected: RunStatus) -> bool {
    !matches!(status, Some(RunStatus::Success))
        && !(status == Some(RunStatus::FailedParadox) && expected == RunStatus::FailedParadox)
}

fn decision_values(artifact: &FactMap, reg: &HarnessRegistry) -> FactMap {
    let mut out = FactMap::new();
    for v in &reg.variables {
        if let Some(x) = artifact.get(&v.name) {
            out.insert(v.name.clone(), x.clone());
        }
    }
    out
}

fn verified_at_first_review(trace: &[TraceEvent]) -> Vec<String> {
    let Some(end) = trace.iter().position(|e| e.kind == "global_review") else {
        return Vec::new();
    };
    trace[..end]
        .iter()
        .rev()
        .find(|e| e.kind == "verified")
        .and_then(|e| e.payload["rules"].as_array())
        .map(|a| a.iter().filter_map(|r| r.as_str().map(String::from)).collect())
        .unwrap_or_default()
}

struct Trial {
    record: TrialRecord,
    trace: Vec<TraceEvent>,
}

fn empty_record(index: u32, seed: u64, run_id: String) -> TrialRecord {
    TrialRecord {
        index,
        seed,
        run_id,
        status: None,
        iterations: 0,
        node_retries: 0,
        values: FactMap::new(),
        failure_label: None,
        cost: 0.0,
        parse_excluded: false,
        mus: None,
        monotonic: true,
        verified_at_first_review: Vec::new(),
        proposals: Vec::new(),
        leaks: None,
        error: None,
    }
}

fn pipeline_trial(spec: &BenchSpec, problem: &ProblemSpec, reg: &HarnessRegistry, index: u32, seed: u64) -> Trial {
    let run_id = format!("{}-{index:02}", spec.name);
    let mut rec = empty_record(index, seed, run_id.clone());
    let config = RunConfig {
        seed,
        run_id: Some(run_id),
        ..spec.config.clone()
    };
    let st: RunState = match run_pipeline(problem, reg, &spec.agents, &config) {
        Ok(st) => st,
        Err(e) => {
            rec.error = Some(e.to_string());
            rec.failure_label = Some("ERROR".into());
            return Trial { record: rec, trace: Vec::new() };
        }
    };
    rec.status = Some(st.status);
    rec.iterations = st.iteration;
    rec.node_retries = st.retries;
    rec.values = decision_values(&st.artifact, reg);
    rec.parse_excluded = st.status == RunStatus::ParseExcluded;
    rec.mus = st.paradox.as_ref().map(|p| p.mus.iter().cloned().collect());
    rec.monotonic = check_monotonic(&st.trace);
    rec.verified_at_first_review = verified_at_first_review(&st.trace);
    rec.cost = cost_rollup(&st.usage, &CostModel::default()).unwrap_or(f64::NAN);
    if needs_label(rec.status, spec.expected) {
        rec.failure_label = Some(classify_failure(&st.artifact, reg).unwrap_or_else(|| st.status.as_str().to_string()));
    }
    if let Some(noise) = &spec.noise {
        rec.leaks = Some(match context_slice(&st.plan, &noise.probe_node, &st.artifact, reg) {
            Ok(ctx) => {
                let seen: BTreeSet<String> = ctx
                    .facts
                    .keys()
                    .cloned()
                    .chain(ctx.rules.iter().flat_map(|r| r.free_vars()))
                    .collect();
                let prompt = ctx.to_prompt_json().to_string();
                noise.fields.iter().filter(|(k, v)| seen.contains(*k) || leaks_text(&prompt, v)).count() as u32
            }
            Err(_) => u32::MAX,
        });
    }
    Trial { record: rec, trace: st.trace }
}

fn leaks_text(prompt: &str, v: &Value) -> bool {
    match v {
        Value::Text(t) => prompt.contains(t.as_str()),
        _ => false,
    }
}

fn naive_trial(spec: &BenchSpec, problem: &ProblemSpec, reg: &HarnessRegistry, iterations: u32, index: u32, seed: u64) -> Trial {
    let mut rec = empty_record(index, seed, format!("{}-{index:02}", spec.name));
    let run = run_naive(problem, reg, &spec.agents.executor, iterations, seed);
    let status = if run.converged {
        RunStatus::Success
    } else if run.excluded {
        RunStatus::ParseExcluded
    } else {
        RunStatus::Exhausted
    };
    rec.status = Some(status);
    rec.iterations = run.proposals.len() as u32;
    rec.node_retries = rec.iterations.saturating_sub(1);
    rec.parse_excluded = run.excluded;
    if let Some(first) = reg.variables.first() {
        rec.proposals = run.proposals.iter().filter_map(|p| p.get_f64(&first.name)).collect();
    }
    let last = run.proposals.last().cloned().unwrap_or_default();
    rec.values = decision_values(&last, reg);
    if needs_label(rec.status, spec.expected) {
        rec.failure_label = Some(classify_failure(&last, reg).unwrap_or_else(|| status.as_str().to_string()));
    }
    Trial { record: rec, trace: Vec::new() }
}

/// Runs `spec.n_trials` trials with seeds `seed_base..seed_base + n`. Trials
/// run in parallel; the report is assembled in seed order.
pub fn run_benchmark(spec: &BenchSpec) -> Result<BenchReport, LabError> {
    if spec.n_trials == 0 {
        return Err(LabError::Domain("n_trials must be at least 1".into()));
    }
    let reg = load_harness(&spec.harness)?;
    let mut problem = load_problem(&spec.problem)?;
    if let Some(noise) = &spec.noise {
        problem = problem.with_noise(&noise.node_id, &noise.fields);
    }
    let trials: Vec<Trial> = (0..spec.n_trials)
        .into_par_iter()
        .map(|i| {
            let seed = spec.seed_base + i as u64;
            match &spec.mode {
                BenchMode::Pipeline => pipeline_trial(spec, &problem, &reg, i, seed),
                BenchMode::Naive { iterations } => naive_trial(spec, &problem, &reg, *iterations, i, seed),
            }
        })
        .collect();

    let n = spec.n_trials;
    let mut status_histogram = BTreeMap::new();
    let mut failure_histogram = BTreeMap::new();
    let mut matched = 0;
    for t in &trials {
        let key = t.record.status.map_or("ERROR", |s| s.as_str()).to_string();
        *status_histogram.entry(key).or_insert(0) += 1;
        if let Some(l) = &t.record.failure_label {
            *failure_histogram.entry(l.clone()).or_insert(0) += 1;
        }
        if t.record.status == Some(spec.expected) {
            matched += 1;
        }
    }
    let (ci_low, ci_high) = clopper_pearson(matched as u64, n as u64, 0.95)?;
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| trials.iter().map(|t| f(&t.record)).sum::<f64>() / n as f64;
    let summary = BenchSummary {
        name: spec.name.clone(),
        harness: reg.name.clone(),
        problem: problem.name.clone(),
        mode: spec.mode.clone(),
        n_trials: n,
        seed_base: spec.seed_base,
        expected: spec.expected,
        matched,
        match_rate: matched as f64 / n as f64,
        ci_low,
        ci_high,
        status_histogram,
        failure_histogram,
        mean_retries: mean(&|r| r.node_retries as f64),
        mean_iterations: mean(&|r| r.iterations as f64),
        total_cost: trials.iter().map(|t| t.record.cost).sum(),
        parse_excluded: trials.iter().filter(|t| t.record.parse_excluded).count() as u32,
        errors: trials.iter().filter(|t| t.record.error.is_some()).count() as u32,
    };
    let (records, traces) = trials.into_iter().map(|t| (t.record, t.trace)).unzip();
    Ok(BenchReport {
        summary,
        trials: records,
        traces,
    })
}

/// One JSON object per line, in trial order. Contains no timestamps, so
/// identical specs and seeds give identical bytes.
pub fn runs_jsonl(report: &BenchReport) -> String {
    report
        .trials
        .iter()
        .map(|t| serde_json::to_string(t).expect("records serialize") + "\n")
        .collect()
}

/// Writes `results.json`, `<name>_runs.jsonl` and one event log per trial
/// under `<name>_traces/run_NN/`. Returns the files written.
pub fn write_report(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>, LabError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let name = &report.summary.name;
    let mut written = Vec::new();

    let results = dir.join("results.json");
    let body = serde_json::json!({
        "generated_at": chrono::Utc::now().to_rfc3339(),
        "summary": report.summary,
    });
    std::fs::write(&results, serde_json::to_string_pretty(&body).expect("summary serializes") + "\n")
        .map_err(|e| io_err(&results, e))?;
    written.push(results);

    let runs = dir.join(format!("{name}_runs.jsonl"));
    std::fs::write(&runs, runs_jsonl(report)).map_err(|e| io_err(&runs, e))?;
    written.push(runs);

    for (i, trace) in report.traces.iter().enumerate() {
        if trace.is_empty() {
            continue;
        }
        let run_dir = dir.join(format!("{name}_traces")).join(format!("run_{i:02}"));
        std::fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
        let path = run_dir.join("events.jsonl");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| io_err(&path, e))?);
        for e in trace {
            let line = serde_json::to_string(e).expect("events serialize");
            writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
        }
        f.flush().map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
