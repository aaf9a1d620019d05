//! `caaf` subcommands. Each returns the process exit code.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use caaf_core::agents::{AgentBackend, AgentSet, HttpChatConfig, ScriptedPolicy};
use caaf_core::converge::{check_monotonic, run_pipeline, RunConfig, RunStatus, TraceEvent};
use caaf_core::harness::{meta_validate, validate_registry, MetaOutcome};
use caaf_core::lab::{load_harness, load_problem, n_trials_from_env, run_benchmark, write_report, BenchSpec, BUILTIN_BENCHES};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "caaf", version, about = "Constraint-anchored agent pipelines: benchmarks, linting, runs and the negotiation service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a benchmark and write results.json, runs.jsonl and traces.
    Bench {
        /// Built-in bench name or a JSON bench spec file.
        name: String,
        /// Trials; defaults to $N_TRIALS, then the spec's own count.
        #[arg(long)]
        n: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to logs/<timestamp>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a harness registry and run its meta-tests.
    Lint { harness: String },
    /// Run one pipeline and print the outcome.
    Run {
        problem: String,
        harness: String,
        #[arg(long, value_enum, default_value_t = Agents::Scripted)]
        agents: Agents,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Chat-completions endpoint for `--agents http`.
        #[arg(long, env = "CAAF_LLM_ENDPOINT", default_value = "https://api.openai.com/v1/chat/completions")]
        endpoint: String,
        #[arg(long, env = "CAAF_LLM_MODEL", default_value = "gpt-4o-mini")]
        model: String,
        /// Write events.jsonl and state.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check and print recorded traces.
    Replay {
        /// A run directory, a bench output or traces directory, or an events file.
        trace_dir: PathBuf,
        /// Only print the per-trace verdict lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = caaf_service::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "caaf-data")]
        data: PathBuf,
        /// Built console bundle to serve under /console.
        #[arg(long)]
        console: Option<PathBuf>,
        /// Allow clients to read constant values from /harnesses/{name}.
        #[arg(long)]
        expose_constants: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Agents {
    Scripted,
    Http,
}

/// Exit code of `run` for a deadlocked pipeline.
pub const EXIT_PARADOX: i32 = 3;
/// Exit code of `run` for any other unsuccessful ending.
pub const EXIT_UNRESOLVED: i32 = 4;

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Bench { name, n, seed, out: dir } => bench(&name, n, seed, dir, out),
        Command::Lint { harness } => lint(&harness, out),
        Command::Run {
            problem,
            harness,
            agents,
            seed,
            endpoint,
            model,
            out: dir,
        } => {
            let agents = match agents {
                Agents::Scripted => AgentSet::scripted(ScriptedPolicy::BoundaryChaser),
                Agents::Http => AgentSet {
                    planner: None,
                    executor: AgentBackend::HttpChat(HttpChatConfig::new(&endpoint, &model)),
                    per_node: Default::default(),
                },
            };
            run(&problem, &harness, &agents, seed, dir.as_deref(), out)
        }
        Command::Replay { trace_dir, quiet } => replay(&trace_dir, quiet, out),
        Command::Serve {
            port,
            host,
            data,
            console,
            expose_constants,
        } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
            let config = caaf_service::ServiceConfig {
                data_dir: data,
                console_dir: console,
                expose_constants,
            };
            serve(config, addr, out)
        }
    }
}

fn bench_spec(name: &str) -> Result<BenchSpec> {
    if let Some(spec) = BenchSpec::builtin(name) {
        return Ok(spec);
    }
    let text = std::fs::read_to_string(name)
        .with_context(|| format!("'{name}' is neither a built-in bench ({}) nor a readable file", BUILTIN_BENCHES.join(", ")))?;
    serde_json::from_str(&text).with_context(|| format!("{name}: not a bench spec"))
}

pub fn bench(name: &str, n: Option<u32>, seed: Option<u64>, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let mut spec = bench_spec(name)?;
    spec.n_trials = n.unwrap_or_else(|| n_trials_from_env(spec.n_trials));
    if let Some(s) = seed {
        spec.seed_base = s;
    }
    let dir = dir.unwrap_or_else(|| Path::new("logs").join(chrono::Local::now().format("%Y%m%d-%H%M%S").to_string()));
    let report = run_benchmark(&spec)?;
    let written = write_report(&report, &dir)?;
    let s = &report.summary;
    writeln!(out, "{}: {} trials on {} ({:?})", s.name, s.n_trials, s.harness, s.mode)?;
    writeln!(
        out,
        "  expected {}: {}/{} ({:.1}%, 95% CI [{:.1}%, {:.1}%])",
        s.expected.as_str(),
        s.matched,
        s.n_trials,
        100.0 * s.match_rate,
        100.0 * s.ci_low,
        100.0 * s.ci_high
    )?;
    writeln!(out, "  statuses: {}", histogram(&s.status_histogram))?;
    if !s.failure_histogram.is_empty() {
        writeln!(out, "  failure modes: {}", histogram(&s.failure_histogram))?;
    }
    writeln!(out, "  mean retries {:.2}, mean global iterations {:.2}", s.mean_retries, s.mean_iterations)?;
    if s.errors > 0 {
        writeln!(out, "  {} trials errored", s.errors)?;
    }
    writeln!(out, "  wrote {} files under {}", written.len(), dir.display())?;
    Ok(0)
}

fn histogram(h: &std::collections::BTreeMap<String, u32>) -> String {
    h.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

pub fn lint(harness: &str, out: &mut dyn Write) -> Result<i32> {
    let reg = load_harness(harness)?;
    writeln!(out, "{} {} ({} rules, {} constants)", reg.name, reg.version, reg.rules.len(), reg.constants.len())?;
    let findings = validate_registry(&reg);
    for f in &findings {
        writeln!(out, "  error: {f}")?;
    }
    let report = meta_validate(&reg);
    for r in &report.results {
        let verdict = match r.outcome {
            MetaOutcome::Ok => "ok".to_string(),
            MetaOutcome::UnexpectedFail => format!("UNEXPECTED_FAIL {:?}", r.unexpected_fail),
            MetaOutcome::MissedDetection => format!("MISSED_DETECTION {:?}", r.missed_detection),
            MetaOutcome::Mismatch => format!("MISMATCH fail {:?} missed {:?}", r.unexpected_fail, r.missed_detection),
        };
        writeln!(out, "  {:?} {}: {verdict}", r.kind, r.label)?;
    }
    let clean = findings.is_empty() && report.passed();
    writeln!(out, "{}", if clean { "clean" } else { "problems found" })?;
    Ok(if clean { 0 } else { 1 })
}

pub fn run(problem: &str, harness: &str, agents: &AgentSet, seed: u64, dir: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let problem = load_problem(problem)?;
    let reg = load_harness(harness)?;
    let st = run_pipeline(&problem, &reg, agents, &RunConfig::with_seed(seed))?;
    writeln!(out, "{} on {} {}: {} (global reviews: {})", st.problem, st.harness, st.harness_version, st.status.as_str(), st.iteration)?;
    for (k, v) in st.artifact.iter() {
        writeln!(out, "  {k} = {v}")?;
    }
    writeln!(out, "  verified: {}", st.verified_rules.iter().cloned().collect::<Vec<_>>().join(", "))?;
    if let Some(p) = &st.paradox {
        writeln!(out)?;
        write!(out, "{}", p.evidence.text)?;
    }
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        let mut lines = String::new();
        for e in &st.trace {
            lines.push_str(&serde_json::to_string(e)?);
            lines.push('\n');
        }
        std::fs::write(dir.join("events.jsonl"), lines)?;
        std::fs::write(dir.join("state.json"), serde_json::to_string_pretty(&st)?)?;
    }
    Ok(match st.status {
        RunStatus::Success => 0,
        RunStatus::FailedParadox => EXIT_PARADOX,
        _ => EXIT_UNRESOLVED,
    })
}

fn event_files(path: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        found.push(path.to_path_buf());
        return Ok(());
    }
    let own = path.join("events.jsonl");
    if own.is_file() {
        found.push(own);
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| path.display().to_string())?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries.into_iter().filter(|p| p.is_dir()) {
        event_files(&p, found)?;
    }
    Ok(())
}

/// One-line summary of an event payload.
fn describe(e: &TraceEvent) -> String {
    let p = &e.payload;
    match e.kind.as_str() {
        "status" => format!("{} {}", p["status"].as_str().unwrap_or("?"), p["artifact"]),
        "verified" => format!("{}", p["rules"]),
        "paradox" => format!("conflict set {}", p["mus"]),
        "override" => format!(
            "{} by {}: {} -> {}",
            p["parameter"].as_str().unwrap_or("?"),
            p["actor"].as_str().unwrap_or("?"),
            p["old_value"],
            p["new_value"]
        ),
        _ => {
            let mut s = p.to_string();
            if s.len() > 120 {
                let cut = (0..=117).rev().find(|i| s.is_char_boundary(*i)).unwrap_or(0);
                s.truncate(cut);
                s.push_str("...");
            }
            s
        }
    }
}

pub fn replay(path: &Path, quiet: bool, out: &mut dyn Write) -> Result<i32> {
    let mut files = Vec::new();
    event_files(path, &mut files)?;
    if files.is_empty() {
        bail!("no events.jsonl under {}", path.display());
    }
    let mut bad = 0;
    for f in &files {
        let text = std::fs::read_to_string(f).with_context(|| f.display().to_string())?;
        let mut events = Vec::new();
        let mut unreadable = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<TraceEvent>(line) {
                Ok(e) => events.push(e),
                Err(_) => unreadable += 1,
            }
        }
        let gap_free = events.iter().enumerate().all(|(i, e)| e.t == i as u64);
        let monotonic = check_monotonic(&events);
        let last = events.iter().rev().find(|e| e.kind == "status").and_then(|e| e.payload["status"].as_str()).unwrap_or("UNFINISHED");
        let ok = unreadable == 0 && gap_free && monotonic;
        if !ok {
            bad += 1;
        }
        if !quiet {
            for e in &events {
                writeln!(out, "{:>4} {:<20} {}", e.t, e.kind, describe(e))?;
            }
        }
        writeln!(
            out,
            "{}: {} events, {last}, {}{}{}",
            f.display(),
            events.len(),
            if gap_free { "gap-free" } else { "SEQUENCE GAP" },
            if monotonic { ", monotonic" } else { ", NOT MONOTONIC" },
            if unreadable > 0 { format!(", {unreadable} unreadable lines") } else { String::new() }
        )?;
    }
    Ok(if bad == 0 { 0 } else { 1 })
}

pub fn serve(config: caaf_service::ServiceConfig, addr: SocketAddr, out: &mut dyn Write) -> Result<i32> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
        writeln!(out, "listening on http://{}", listener.local_addr()?)?;
        writeln!(out, "data in {}", config.data_dir.display())?;
        out.flush()?;
        caaf_service::serve_on(config, listener).await?;
        Ok(0)
    })
}
