use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{
    synthesize_gradient, AuditEntry, AuditResult, AuditStatus, Direction, LockSet, NodeReport, NodeStatus,
    ParadoxReport, RunState, RunStatus, SemanticGradient, TraceEvent,
};
use crate::agents::{
    parse_plan_with_retry, parse_with_retry, propose, propose_plan, stable_hash, AgentSet, CostLedger,
    ProposalRequest, RetryOutcome,
};
use crate::converge::enforce_locks;
use crate::facts::{FactMap, Layered};
use crate::harness::{validate_registry_with, Finding, HarnessRegistry, OverrideRecord};
use crate::paradox::{
    evidence_package, fixed_inputs, minimal_unsat_subset, resolution_menu, Oracle, ParadoxError,
};
use crate::rad::{context_slice, descendants, topo_order, validate_plan, PlanError, PlanFinding, ProblemSpec, SliceError};
use crate::uai::{assert_all, assert_rule, solve_boundary, BoundarySolution, Status, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Iterations per node execution.
    pub node_budget: u32,
    /// Global repair rounds after the first global review.
    pub max_global_iters: u32,
    pub parse_attempts: u32,
    pub seed: u64,
    /// Defaults to a hash of the problem, harness and seed.
    pub run_id: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            node_budget: 3,
            max_global_iters: 3,
            parse_attempts: 3,
            seed: 0,
            run_id: None,
        }
    }
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            ..RunConfig::default()
        }
    }

    fn check(&self) -> Result<(), PipelineError> {
        if self.node_budget == 0 {
            return Err(PipelineError::Config("node_budget must be at least 1".into()));
        }
        if self.parse_attempts == 0 {
            return Err(PipelineError::Config("parse_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("registry failed validation: {0:?}")]
    InvalidRegistry(Vec<Finding>),
    #[error("plan failed validation: {0:?}")]
    InvalidPlan(Vec<PlanFinding>),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Oracle(#[from] ParadoxError),
    #[error("run is not awaiting authorization")]
    NotAwaiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeOutcome {
    Converged,
    Failed,
    ParseExcluded,
}

fn push_event(st: &mut RunState, sink: &mut dyn FnMut(&TraceEvent), kind: &str, payload: serde_json::Value) {
    let e = TraceEvent {
        run_id: st.run_id.clone(),
        t: st.trace.len() as u64,
        kind: kind.to_string(),
        payload,
    };
    sink(&e);
    st.trace.push(e);
}

fn records(verdicts: &[Verdict]) -> serde_json::Value {
    serde_json::to_value(verdicts).unwrap_or_default()
}

struct Driver<'a> {
    st: RunState,
    reg: HarnessRegistry,
    problem: &'a ProblemSpec,
    agents: &'a AgentSet,
    cfg: &'a RunConfig,
    sink: &'a mut dyn FnMut(&TraceEvent),
    ledger: CostLedger,
}

impl Driver<'_> {
    fn emit(&mut self, kind: &str, payload: serde_json::Value) {
        push_event(&mut self.st, self.sink, kind, payload);
    }

    /// Blocking rules that pass on `artifact`.
    fn verified(&self, artifact: &FactMap) -> BTreeSet<String> {
        let layers = [artifact, &self.reg.constants];
        let env = Layered(&layers);
        self.reg
            .rules
            .iter()
            .filter(|r| r.severity.is_blocking() && assert_rule(r, &env).status == Status::Pass)
            .map(|r| r.id.clone())
            .collect()
    }

    fn record_verified(&mut self, set: BTreeSet<String>) {
        self.st.verified_rules = set.clone();
        let epoch = self.st.lock_epoch;
        self.emit("verified", json!({ "rules": set, "epoch": epoch }));
    }

    fn finish(&mut self, status: RunStatus, reason: Option<&str>) {
        self.st.status = status;
        self.st.usage = self.ledger.usage();
        let payload = json!({
            "status": status,
            "iteration": self.st.iteration,
            "artifact": self.st.artifact,
            "reason": reason,
        });
        self.emit("status", payload);
    }

    fn boundaries(&self, verdicts: &[Verdict], facts: &FactMap) -> BTreeMap<String, BoundarySolution> {
        let layers = [facts, &self.reg.constants];
        let env = Layered(&layers);
        verdicts
            .iter()
            .filter(|v| v.status == Status::Fail)
            .filter_map(|v| {
                let rule = self.reg.rule(&v.rule_id)?;
                let var = self.reg.variable(&v.target_field)?;
                Some((v.rule_id.clone(), solve_boundary(rule, &env, &var.name, var)))
            })
            .collect()
    }

    fn producer_of(&self, field: &str) -> Option<String> {
        let order = topo_order(&self.st.plan).ok()?;
        order.into_iter().find(|n| self.st.plan.nodes[n].expected_schema.contains_key(field))
    }

    fn node_mut(&mut self, id: &str) -> &mut NodeReport {
        self.st.nodes.get_mut(id).expect("node registered at start")
    }

    fn run_node(&mut self, node_id: &str, seeded: Option<AuditResult>) -> Result<NodeOutcome, PipelineError> {
        let ctx = context_slice(&self.st.plan, node_id, &self.st.artifact, &self.reg)?;
        let execution = {
            let n = self.node_mut(node_id);
            n.executions += 1;
            n.status = NodeStatus::Pending;
            n.executions
        };
        let visible: Vec<&String> = ctx.facts.keys().collect();
        let rules: Vec<&String> = ctx.rules.iter().map(|r| &r.id).collect();
        self.emit(
            "node_started",
            json!({ "node": node_id, "execution": execution, "context_keys": visible, "rules": rules, "seeded": seeded.is_some() }),
        );

        let mut audit = seeded;
        let mut feedback: Vec<Verdict> = Vec::new();
        for i in 1..=self.cfg.node_budget {
            self.st.node_iterations += 1;
            if i > 1 {
                self.st.retries += 1;
            }
            let previous = Some(self.st.nodes[node_id].output.clone()).filter(|o| !o.is_empty());
            let seed = stable_hash(&[
                &self.cfg.seed.to_le_bytes(),
                node_id.as_bytes(),
                &execution.to_le_bytes(),
                &i.to_le_bytes(),
            ]);
            let backend = self.agents.executor_for(node_id);
            let outcome = parse_with_retry(
                |attempt| {
                    let req = ProposalRequest {
                        ctx: &ctx,
                        audit: audit.as_ref(),
                        feedback: &feedback,
                        previous: previous.as_ref(),
                        registry: &self.reg,
                        givens: &self.problem.givens,
                        statement: &self.problem.statement,
                        seed,
                        iteration: i,
                        attempt,
                        ledger: Some(&self.ledger),
                    };
                    propose(backend, &req)
                },
                &ctx.expected_schema,
                self.cfg.parse_attempts,
            );
            let proposal = match outcome {
                RetryOutcome::Excluded { raw, errors } => {
                    self.emit("parse_excluded", json!({ "node": node_id, "iteration": i, "raw": raw, "errors": errors }));
                    let n = self.node_mut(node_id);
                    n.status = NodeStatus::ParseExcluded;
                    n.iterations = i;
                    return Ok(NodeOutcome::ParseExcluded);
                }
                RetryOutcome::Parsed { value, attempts, raw } => {
                    self.emit(
                        "proposal",
                        json!({ "node": node_id, "iteration": i, "attempts": attempts, "raw": raw.last(), "output": value }),
                    );
                    value
                }
            };

            let (enforced, violations) = enforce_locks(&proposal, &self.st.locks, node_id);
            if !violations.is_empty() {
                self.emit("lock_violation", json!({ "node": node_id, "iteration": i, "violations": violations }));
            }
            let candidate = self.st.artifact.overlay(&enforced);
            let next = self.verified(&candidate);
            let lost: Vec<String> = self
                .reg
                .rules
                .iter()
                .filter(|r| self.st.verified_rules.contains(&r.id) && !next.contains(&r.id))
                .map(|r| r.id.clone())
                .collect();

            let local = ctx.facts.overlay(&enforced);
            let mut verdicts: Vec<Verdict> = {
                let layers = [&local, &self.reg.constants];
                let env = Layered(&layers);
                ctx.applicable_rules(&self.reg).map(|r| assert_rule(r, &env)).collect()
            };
            let accepted = lost.is_empty();
            if accepted {
                self.st.artifact = candidate.clone();
                self.node_mut(node_id).output = enforced.clone();
                self.record_verified(next);
            } else {
                self.emit("regression_rejected", json!({ "node": node_id, "iteration": i, "lost": lost }));
                let layers = [&candidate, &self.reg.constants];
                let env = Layered(&layers);
                for id in &lost {
                    if !verdicts.iter().any(|v| &v.rule_id == id) {
                        verdicts.push(assert_rule(self.reg.rule(id).expect("known rule"), &env));
                    }
                }
            }
            let boundaries = self.boundaries(&verdicts, &candidate);
            for v in verdicts.iter_mut() {
                v.boundary = boundaries.get(&v.rule_id).and_then(|b| b.boundary);
            }
            self.emit(
                "verdicts",
                json!({ "node": node_id, "iteration": i, "accepted": accepted, "verdicts": records(&verdicts) }),
            );

            match synthesize_gradient(&verdicts, &boundaries) {
                Err(conflict) => {
                    self.emit("conflict", json!({ "scope": "node", "node": node_id, "iteration": i, "conflict": conflict }));
                    audit = None;
                }
                Ok(a) => {
                    self.emit(
                        "audit",
                        json!({ "scope": "node", "node": node_id, "iteration": i, "audit_results": a.audit_results }),
                    );
                    if accepted {
                        let epoch = self.st.lock_epoch;
                        let passed: Vec<String> = a
                            .passed_fields()
                            .filter(|f| ctx.expected_schema.contains_key(*f))
                            .cloned()
                            .collect();
                        for f in passed {
                            if let Some(v) = enforced.get(&f) {
                                if self.st.locks.lock(node_id, &f, v.clone()) {
                                    self.emit("lock", json!({ "node": node_id, "field": f, "value": v, "epoch": epoch }));
                                }
                            }
                        }
                        if a.all_pass() {
                            let n = self.node_mut(node_id);
                            n.status = NodeStatus::Converged;
                            n.iterations = i;
                            self.emit("node_converged", json!({ "node": node_id, "iteration": i, "output": enforced }));
                            return Ok(NodeOutcome::Converged);
                        }
                    }
                    audit = Some(a);
                }
            }
            feedback = verdicts;
        }
        let budget = self.cfg.node_budget;
        let n = self.node_mut(node_id);
        n.status = NodeStatus::Failed;
        n.iterations = budget;
        self.emit("node_failed", json!({ "node": node_id, "iterations": budget }));
        Ok(NodeOutcome::Failed)
    }

    fn global_loop(&mut self) -> Result<(), PipelineError> {
        loop {
            self.st.iteration += 1;
            let iteration = self.st.iteration;
            let mut verdicts = assert_all(&self.reg, &self.st.artifact, None);
            let v = self.verified(&self.st.artifact);
            self.record_verified(v);
            let boundaries = self.boundaries(&verdicts, &self.st.artifact);
            for v in verdicts.iter_mut() {
                v.boundary = boundaries.get(&v.rule_id).and_then(|b| b.boundary);
            }
            self.emit("global_review", json!({ "iteration": iteration, "verdicts": records(&verdicts) }));
            self.st.global_verdicts = verdicts.clone();

            let audit = synthesize_gradient(&verdicts, &boundaries);
            match &audit {
                Ok(a) => {
                    let epoch = self.st.lock_epoch;
                    for f in a.passed_fields() {
                        let (Some(node), Some(value)) = (self.producer_of(f), self.st.artifact.get(f).cloned()) else {
                            continue;
                        };
                        if self.st.locks.lock(&node, f, value.clone()) {
                            self.emit("lock", json!({ "node": node, "field": f, "value": value, "epoch": epoch }));
                        }
                    }
                    self.st.global_audit = Some(a.clone());
                    self.emit("audit", json!({ "scope": "global", "iteration": iteration, "audit_results": a.audit_results }));
                }
                Err(c) => {
                    self.emit("conflict", json!({ "scope": "global", "iteration": iteration, "conflict": c }));
                }
            }

            if verdicts.iter().all(|v| !v.severity.is_blocking() || v.passed()) {
                self.finish(RunStatus::Success, None);
                return Ok(());
            }

            let fixed = fixed_inputs(&self.reg, &self.st.artifact);
            let blocking = self.reg.blocking_rule_ids();
            let result = Oracle::global().feasible(&self.reg, &blocking, &fixed)?;
            self.emit(
                "oracle",
                json!({
                    "iteration": iteration,
                    "verdict": result.verdict,
                    "witness": result.witness,
                    "scanned_points": result.scanned_points,
                    "refinement_depth": result.refinement_depth,
                }),
            );
            if !result.is_sat() {
                let mus = minimal_unsat_subset(&self.reg, &blocking, &fixed)?;
                let menu = resolution_menu(&self.reg, &mus, &fixed)?;
                self.st.status = RunStatus::FailedParadox;
                let evidence = evidence_package(&self.st, &self.reg, &mus, &menu)?;
                self.emit(
                    "paradox",
                    json!({ "iteration": iteration, "mus": mus, "menu": menu, "evidence": evidence.text }),
                );
                self.st.paradox = Some(ParadoxReport { mus, menu, fixed, evidence });
                self.st.awaiting_authorization = true;
                self.finish(RunStatus::FailedParadox, None);
                return Ok(());
            }
            if self.st.global_repairs >= self.cfg.max_global_iters {
                self.finish(RunStatus::Exhausted, Some("global repair budget used up"));
                return Ok(());
            }

            // Repair: route each failing field's gradient to the node that
            // produces it. Fields without a usable boundary are pointed at the
            // oracle's witness instead.
            let witness = result.witness.unwrap_or_default();
            let mut repair = AuditResult::default();
            let failing: Vec<(String, AuditEntry)> = match audit {
                Ok(a) => a.audit_results.into_iter().filter(|(_, e)| e.status == AuditStatus::Fail).collect(),
                Err(c) => {
                    let rules = verdicts.iter().filter(|v| v.target_field == c.dimension).map(|v| v.rule_id.clone()).collect();
                    vec![(
                        c.dimension.clone(),
                        AuditEntry {
                            status: AuditStatus::Fail,
                            instruction: None,
                            error_trace: Some(c.to_string()),
                            semantic_gradient: None,
                            rules,
                        },
                    )]
                }
            };
            for (field, mut entry) in failing {
                let usable = entry.semantic_gradient.as_ref().is_some_and(|g| g.magnitude.is_some());
                if !usable {
                    if let Some(x) = witness.get_f64(&field) {
                        let rule_id = entry.rules.first().cloned().unwrap_or_default();
                        entry.semantic_gradient = Some(SemanticGradient {
                            dimension: field.clone(),
                            direction: Direction::Set,
                            magnitude: Some(x),
                            rationale: format!("Set {field} to {x} where every rule holds."),
                            rule_id,
                        });
                    }
                }
                repair.audit_results.insert(field, entry);
            }
            let mut producers: BTreeMap<String, Vec<String>> = BTreeMap::new();
            let mut locked = Vec::new();
            for field in repair.audit_results.keys() {
                match self.producer_of(field) {
                    Some(n) if self.st.locks.is_locked(&n, field) => locked.push(field.clone()),
                    Some(n) => producers.entry(n).or_default().push(field.clone()),
                    None => {}
                }
            }
            if producers.is_empty() {
                self.emit("repair_blocked", json!({ "iteration": iteration, "locked_fields": locked }));
                self.finish(RunStatus::Exhausted, Some("every failing field is locked"));
                return Ok(());
            }
            self.st.global_repairs += 1;
            let mut rerun: BTreeSet<String> = producers.keys().cloned().collect();
            for p in producers.keys() {
                rerun.extend(descendants(&self.st.plan, p));
            }
            let order: Vec<String> = topo_order(&self.st.plan)?.into_iter().filter(|n| rerun.contains(n)).collect();
            self.emit(
                "repair",
                json!({ "iteration": iteration, "repair": self.st.global_repairs, "nodes": order, "fields": producers }),
            );
            for node in order {
                let seed = producers.get(&node).map(|fields| AuditResult {
                    audit_results: repair
                        .audit_results
                        .iter()
                        .filter(|(f, _)| fields.contains(f))
                        .map(|(f, e)| (f.clone(), e.clone()))
                        .collect(),
                });
                if self.run_node(&node, seed)? == NodeOutcome::ParseExcluded {
                    self.finish(RunStatus::ParseExcluded, Some("executor output never parsed"));
                    return Ok(());
                }
            }
        }
    }
}

pub fn run_pipeline(
    problem: &ProblemSpec,
    reg: &HarnessRegistry,
    agents: &AgentSet,
    config: &RunConfig,
) -> Result<RunState, PipelineError> {
    run_pipeline_observed(problem, reg, agents, config, &mut |_| {})
}

/// Like [`run_pipeline`], calling `sink` on every trace event as it is
/// recorded.
pub fn run_pipeline_observed(
    problem: &ProblemSpec,
    reg: &HarnessRegistry,
    agents: &AgentSet,
    config: &RunConfig,
    sink: &mut dyn FnMut(&TraceEvent),
) -> Result<RunState, PipelineError> {
    config.check()?;
    let run_id = config.run_id.clone().unwrap_or_else(|| {
        let h = stable_hash(&[
            problem.name.as_bytes(),
            reg.name.as_bytes(),
            reg.version.as_bytes(),
            &config.seed.to_le_bytes(),
        ]);
        format!("run-{h:016x}")
    });
    let st = RunState {
        run_id,
        problem: problem.name.clone(),
        harness: reg.name.clone(),
        harness_version: reg.version.clone(),
        plan: problem.plan.clone(),
        iteration: 0,
        status: RunStatus::Running,
        verified_rules: BTreeSet::new(),
        artifact: FactMap::new(),
        locks: LockSet::new(),
        lock_epoch: 0,
        nodes: BTreeMap::new(),
        node_iterations: 0,
        retries: 0,
        global_repairs: 0,
        global_verdicts: Vec::new(),
        global_audit: None,
        paradox: None,
        awaiting_authorization: false,
        overrides: Vec::new(),
        usage: Vec::new(),
        trace: Vec::new(),
    };
    let mut d = Driver {
        st,
        reg: reg.clone(),
        problem,
        agents,
        cfg: config,
        sink,
        ledger: CostLedger::new(),
    };
    d.emit(
        "run_started",
        json!({ "problem": problem.name, "harness": reg.name, "harness_version": reg.version, "config": config }),
    );

    if let Some(planner) = &agents.planner {
        let plan_json = serde_json::to_string(&problem.plan).unwrap_or_default();
        let outcome = parse_plan_with_retry(
            |_| propose_plan(planner, &problem.statement, &plan_json, Some(&d.ledger)),
            config.parse_attempts,
        );
        match outcome {
            RetryOutcome::Parsed { value, attempts, .. } => {
                d.emit("plan_proposal", json!({ "attempts": attempts }));
                d.st.plan = value;
            }
            RetryOutcome::Excluded { raw, errors } => {
                d.emit("parse_excluded", json!({ "node": null, "raw": raw, "errors": errors }));
                d.finish(RunStatus::ParseExcluded, Some("planner output never parsed"));
                return Ok(d.st);
            }
        }
    }
    let findings = validate_plan(&d.st.plan);
    if !findings.is_empty() {
        return Err(PipelineError::InvalidPlan(findings));
    }
    let produced: BTreeSet<String> =
        d.st.plan.nodes.values().flat_map(|n| n.expected_schema.keys().cloned()).collect();
    let reg_findings = validate_registry_with(reg, &produced);
    if !reg_findings.is_empty() {
        return Err(PipelineError::InvalidRegistry(reg_findings));
    }
    let order = topo_order(&d.st.plan)?;
    for n in &order {
        d.st.nodes.insert(
            n.clone(),
            NodeReport {
                status: NodeStatus::Pending,
                iterations: 0,
                executions: 0,
                output: FactMap::new(),
            },
        );
    }
    d.emit("plan", json!({ "plan": d.st.plan, "order": order }));
    let v0 = d.verified(&FactMap::new());
    d.record_verified(v0);

    for node in &order {
        if d.run_node(node, None)? == NodeOutcome::ParseExcluded {
            d.finish(RunStatus::ParseExcluded, Some("executor output never parsed"));
            return Ok(d.st);
        }
    }
    d.global_loop()?;
    Ok(d.st)
}

/// Continues a paradox run on a relaxed registry: records the override,
/// releases the locks taken under the old rules and re-enters the global
/// review with a fresh repair budget.
pub fn resume_after_override(
    state: RunState,
    problem: &ProblemSpec,
    relaxed: &HarnessRegistry,
    record: &OverrideRecord,
    agents: &AgentSet,
    config: &RunConfig,
    sink: &mut dyn FnMut(&TraceEvent),
) -> Result<RunState, PipelineError> {
    if state.status != RunStatus::FailedParadox || !state.awaiting_authorization {
        return Err(PipelineError::NotAwaiting);
    }
    config.check()?;
    let mut d = Driver {
        st: state,
        reg: relaxed.clone(),
        problem,
        agents,
        cfg: config,
        sink,
        ledger: CostLedger::new(),
    };
    d.emit("override", serde_json::to_value(record).unwrap_or_default());
    d.st.overrides.push(record.clone());
    d.st.awaiting_authorization = false;
    d.st.status = RunStatus::Running;
    d.st.harness_version = relaxed.version.clone();
    d.st.locks = LockSet::new();
    d.st.lock_epoch += 1;
    d.st.global_repairs = 0;
    let epoch = d.st.lock_epoch;
    d.emit("locks_released", json!({ "epoch": epoch }));
    d.global_loop()?;
    Ok(d.st)
}

/// Records that the operator chose to keep every rule. The run stays
/// `FAILED_PARADOX` but no longer waits for a decision.
pub fn acknowledge_deadlock(
    state: &mut RunState,
    actor: &str,
    justification: &str,
    sink: &mut dyn FnMut(&TraceEvent),
) -> Result<(), PipelineError> {
    if state.status != RunStatus::FailedParadox || !state.awaiting_authorization {
        return Err(PipelineError::NotAwaiting);
    }
    state.awaiting_authorization = false;
    push_event(state, sink, "deadlock_acknowledged", json!({ "actor": actor, "justification": justification }));
    Ok(())
}
