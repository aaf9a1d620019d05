//! The closed loop: execute each node, assert, review, lock, retry; then
//! review the merged artifact against the whole registry.

mod gradient;
mod locks;
mod naive;
mod pipeline;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agents::UsageEntry;
use crate::facts::FactMap;
use crate::harness::OverrideRecord;
use crate::paradox::{EvidencePackage, ResolutionOption};
use crate::rad::RadPlan;
use crate::uai::Verdict;

pub use gradient::{
    synthesize_gradient, AuditEntry, AuditResult, AuditStatus, ConflictingVerdicts, Direction, HalfSpace,
    SemanticGradient, LOCK_INSTRUCTION,
};
pub use locks::{enforce_locks, LockEntry, LockSet, LockViolation};
pub use naive::{run_naive, NaiveRun};
pub use pipeline::{
    acknowledge_deadlock, resume_after_override, run_pipeline, run_pipeline_observed, PipelineError, RunConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Running,
    Success,
    FailedParadox,
    Exhausted,
    ParseExcluded,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Running => "RUNNING",
            RunStatus::Success => "SUCCESS",
            RunStatus::FailedParadox => "FAILED_PARADOX",
            RunStatus::Exhausted => "EXHAUSTED",
            RunStatus::ParseExcluded => "PARSE_EXCLUDED",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != RunStatus::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeStatus {
    Pending,
    Converged,
    Failed,
    ParseExcluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub status: NodeStatus,
    /// Iterations used by the most recent execution.
    pub iterations: u32,
    /// How many times the node has been executed (repairs rerun it).
    pub executions: u32,
    pub output: FactMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub run_id: String,
    pub t: u64,
    pub kind: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadoxReport {
    pub mus: BTreeSet<String>,
    pub menu: Vec<ResolutionOption>,
    /// Artifact values the oracle held fixed.
    pub fixed: FactMap,
    pub evidence: EvidencePackage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub problem: String,
    pub harness: String,
    pub harness_version: String,
    pub plan: RadPlan,
    /// Global reviews performed so far.
    pub iteration: u32,
    pub status: RunStatus,
    pub verified_rules: BTreeSet<String>,
    pub artifact: FactMap,
    pub locks: LockSet,
    /// Bumped when an override releases the locks taken under the old rules.
    pub lock_epoch: u32,
    pub nodes: BTreeMap<String, NodeReport>,
    pub node_iterations: u32,
    /// Node iterations beyond the first of each execution.
    pub retries: u32,
    pub global_repairs: u32,
    pub global_verdicts: Vec<Verdict>,
    pub global_audit: Option<AuditResult>,
    pub paradox: Option<ParadoxReport>,
    pub awaiting_authorization: bool,
    pub overrides: Vec<OverrideRecord>,
    pub usage: Vec<UsageEntry>,
    pub trace: Vec<TraceEvent>,
}

impl RunState {
    /// The recorded verified-rule sets, in order.
    pub fn verified_history(&self) -> Vec<BTreeSet<String>> {
        verified_history(&self.trace)
    }
}

fn verified_history(trace: &[TraceEvent]) -> Vec<BTreeSet<String>> {
    trace
        .iter()
        .filter(|e| e.kind == "verified")
        .map(|e| {
            e.payload["rules"]
                .as_array()
                .map(|a| a.iter().filter_map(|r| r.as_str().map(String::from)).collect())
                .unwrap_or_default()
        })
        .collect()
}

/// True iff every recorded verified-rule set contains the one before it.
pub fn check_monotonic(trace: &[TraceEvent]) -> bool {
    verified_history(trace).windows(2).all(|w| w[0].is_subset(&w[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, rules: &[&str]) -> TraceEvent {
        TraceEvent {
            run_id: "r".into(),
            t,
            kind: "verified".into(),
            payload: serde_json::json!({ "rules": rules }),
        }
    }

    #[test]
    fn monotonic_checks() {
        assert!(check_monotonic(&[ev(0, &[]), ev(1, &["A"]), ev(2, &["A", "B"])]));
        assert!(!check_monotonic(&[ev(0, &["A"]), ev(1, &[])]));
        assert!(check_monotonic(&[ev(0, &["A"])]));
        assert!(check_monotonic(&[]));
    }
}
