//! Single-agent self-correction baseline: one context holding every rule,
//! no locks, the last verdicts fed back as free text.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agents::{parse_with_retry, propose, stable_hash, AgentBackend, ProposalRequest, RetryOutcome};
use crate::facts::FactMap;
use crate::harness::HarnessRegistry;
use crate::rad::{FieldType, NodeContext, ProblemSpec};
use crate::uai::{assert_all, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveRun {
    pub proposals: Vec<FactMap>,
    /// Whether each proposal passed every blocking rule.
    pub all_pass: Vec<bool>,
    pub converged: bool,
    /// True when an output never parsed and the loop stopped early.
    pub excluded: bool,
}

fn monolith(reg: &HarnessRegistry, problem: &ProblemSpec) -> NodeContext {
    NodeContext {
        node_id: "Monolith".into(),
        description: problem.statement.clone(),
        facts: problem.givens.clone(),
        rules: reg.rules.clone(),
        expected_schema: reg
            .variables
            .iter()
            .map(|v| (v.name.clone(), if v.integer { FieldType::Int } else { FieldType::Float }))
            .collect(),
        role_tags: BTreeSet::new(),
    }
}

/// Runs up to `iterations` rounds, stopping at the first proposal that
/// passes every blocking rule.
pub fn run_naive(
    problem: &ProblemSpec,
    reg: &HarnessRegistry,
    backend: &AgentBackend,
    iterations: u32,
    seed: u64,
) -> NaiveRun {
    let ctx = monolith(reg, problem);
    let mut run = NaiveRun {
        proposals: Vec::new(),
        all_pass: Vec::new(),
        converged: false,
        excluded: false,
    };
    let mut feedback: Vec<Verdict> = Vec::new();
    for i in 1..=iterations {
        let previous = run.proposals.last().cloned();
        let s = stable_hash(&[&seed.to_le_bytes(), b"naive", &i.to_le_bytes()]);
        let outcome = parse_with_retry(
            |attempt| {
                propose(
                    backend,
                    &ProposalRequest {
                        ctx: &ctx,
                        audit: None,
                        feedback: &feedback,
                        previous: previous.as_ref(),
                        registry: reg,
                        givens: &problem.givens,
                        statement: &problem.statement,
                        seed: s,
                        iteration: i,
                        attempt,
                        ledger: None,
                    },
                )
            },
            &ctx.expected_schema,
            3,
        );
        let RetryOutcome::Parsed { value, .. } = outcome else {
            run.excluded = true;
            break;
        };
        let facts = problem.givens.overlay(&value);
        let verdicts = assert_all(reg, &facts, None);
        let ok = verdicts.iter().all(|v| !v.severity.is_blocking() || v.passed());
        run.proposals.push(value);
        run.all_pass.push(ok);
        if ok {
            run.converged = true;
            break;
        }
        feedback = verdicts;
    }
    run
}
