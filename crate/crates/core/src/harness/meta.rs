//! Meta-validation: does the harness catch what it claims to catch?

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{HarnessRegistry, MetaTestKind};
use crate::uai::{self, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetaOutcome {
    Ok,
    UnexpectedFail,
    MissedDetection,
    /// Both unexpected failures and missed detections.
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTestResult {
    pub label: String,
    pub kind: MetaTestKind,
    pub failing: BTreeSet<String>,
    pub unexpected_fail: BTreeSet<String>,
    pub missed_detection: BTreeSet<String>,
    pub outcome: MetaOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaReport {
    pub results: Vec<MetaTestResult>,
}

impl MetaReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.outcome == MetaOutcome::Ok)
    }
}

/// Runs every meta-test. Golden facts must pass every rule; poisoned facts
/// must fail exactly the listed rules. `ERROR` counts as failing.
pub fn meta_validate(reg: &HarnessRegistry) -> MetaReport {
    let results = reg
        .meta_tests
        .iter()
        .map(|t| {
            let verdicts = uai::assert_all(reg, &t.facts, None);
            let failing: BTreeSet<String> = verdicts
                .iter()
                .filter(|v| v.status != Status::Pass)
                .map(|v| v.rule_id.clone())
                .collect();
            let expected = match t.kind {
                MetaTestKind::Golden => BTreeSet::new(),
                MetaTestKind::Poisoned => t.expected_failing_rules.clone(),
            };
            let unexpected_fail: BTreeSet<String> = failing.difference(&expected).cloned().collect();
            let missed_detection: BTreeSet<String> = expected.difference(&failing).cloned().collect();
            let outcome = match (unexpected_fail.is_empty(), missed_detection.is_empty()) {
                (true, true) => MetaOutcome::Ok,
                (false, true) => MetaOutcome::UnexpectedFail,
                (true, false) => MetaOutcome::MissedDetection,
                (false, false) => MetaOutcome::Mismatch,
            };
            MetaTestResult {
                label: t.label.clone(),
                kind: t.kind,
                failing,
                unexpected_fail,
                missed_detection,
                outcome,
            }
        })
        .collect();
    MetaReport { results }
}
