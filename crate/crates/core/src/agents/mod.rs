//! Executors and planners behind one interface: deterministic scripted
//! policies, fixture replay, and a chat-completions client.

mod http;
mod parse;
mod scripted;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converge::AuditResult;
use crate::facts::FactMap;
use crate::harness::HarnessRegistry;
use crate::rad::NodeContext;
use crate::uai::Verdict;

pub use http::{call_llm, render_messages, ChatMessage, CostLedger, HttpChatConfig, UsageEntry};
pub use parse::{parse_artifact, parse_plan_with_retry, parse_with_retry, retry_with, RetryOutcome};
pub use scripted::ScriptedPolicy;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("request timed out")]
    Timeout,
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
    #[error("fixture exhausted after {0} responses")]
    FixtureExhausted(usize),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("{0}")]
    Unsupported(String),
}

/// Canned responses replayed in order; clones share the cursor.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockFixture {
    pub responses: Vec<String>,
    #[serde(skip)]
    cursor: Arc<AtomicUsize>,
}

impl MockFixture {
    pub fn new(responses: Vec<String>) -> Self {
        MockFixture {
            responses,
            cursor: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn next(&self) -> Result<String, AgentError> {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.responses.get(i).cloned().ok_or(AgentError::FixtureExhausted(self.responses.len()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentBackend {
    Scripted { policy: ScriptedPolicy },
    HttpChat(HttpChatConfig),
    Mock(MockFixture),
}

impl AgentBackend {
    pub fn scripted(policy: ScriptedPolicy) -> Self {
        AgentBackend::Scripted { policy }
    }

    pub fn cost_free(&self) -> bool {
        !matches!(self, AgentBackend::HttpChat(_))
    }
}

/// Everything a backend may use to produce one proposal. `registry` and
/// `givens` are only consulted by scripted policies, which stand in for a
/// model's domain knowledge; the HTTP backend never sends constant values.
pub struct ProposalRequest<'a> {
    pub ctx: &'a NodeContext,
    pub audit: Option<&'a AuditResult>,
    /// Raw verdicts from the previous attempt, for feedback-only loops.
    pub feedback: &'a [Verdict],
    /// The node's last accepted output.
    pub previous: Option<&'a FactMap>,
    pub registry: &'a HarnessRegistry,
    pub givens: &'a FactMap,
    pub statement: &'a str,
    pub seed: u64,
    pub iteration: u32,
    pub attempt: u32,
    pub ledger: Option<&'a CostLedger>,
}

/// One raw proposal. Scripted policies always produce schema-valid JSON.
pub fn propose(backend: &AgentBackend, req: &ProposalRequest) -> Result<String, AgentError> {
    match backend {
        AgentBackend::Scripted { policy } => Ok(scripted::propose(policy, req)),
        AgentBackend::Mock(f) => f.next(),
        AgentBackend::HttpChat(cfg) => {
            let messages = render_messages(req);
            call_llm(cfg, &messages, req.ledger)
        }
    }
}

/// Which backend plays which role. Nodes without an entry in `per_node`
/// use `executor`; without a planner the problem's own plan is used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSet {
    #[serde(default)]
    pub planner: Option<AgentBackend>,
    pub executor: AgentBackend,
    #[serde(default)]
    pub per_node: BTreeMap<String, AgentBackend>,
}

impl AgentSet {
    pub fn scripted(policy: ScriptedPolicy) -> Self {
        AgentSet {
            planner: None,
            executor: AgentBackend::scripted(policy),
            per_node: BTreeMap::new(),
        }
    }

    pub fn executor_for(&self, node_id: &str) -> &AgentBackend {
        self.per_node.get(node_id).unwrap_or(&self.executor)
    }
}

/// Planner call: scripted planners return the problem's plan verbatim.
pub fn propose_plan(backend: &AgentBackend, statement: &str, plan_json: &str, ledger: Option<&CostLedger>) -> Result<String, AgentError> {
    match backend {
        AgentBackend::Scripted { .. } => Ok(plan_json.to_string()),
        AgentBackend::Mock(f) => f.next(),
        AgentBackend::HttpChat(cfg) => {
            let messages = vec![
                ChatMessage::system(
                    "Decompose the problem into an acyclic graph of atomic nodes. Reply with one JSON object \
                     {\"nodes\": {id: {id, parent_id, description, context_keys, expected_schema}}}.",
                ),
                ChatMessage::user(statement),
            ];
            call_llm(cfg, &messages, ledger)
        }
    }
}

/// FNV-1a over a sequence of byte strings; stable across platforms and
/// releases, unlike the std hasher.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.iter().chain(std::iter::once(&0xffu8)) {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_replays_then_exhausts() {
        let m = AgentBackend::Mock(MockFixture::new(vec!["a".into(), "b".into()]));
        let AgentBackend::Mock(f) = &m else { unreachable!() };
        let shared = f.clone();
        assert_eq!(f.next().unwrap(), "a");
        assert_eq!(shared.next().unwrap(), "b");
        assert_eq!(f.next(), Err(AgentError::FixtureExhausted(2)));
    }

    #[test]
    fn backend_json_shape() {
        let b: AgentBackend = serde_json::from_str(r#"{"kind": "SCRIPTED", "policy": "BOUNDARY_CHASER"}"#).unwrap();
        assert!(matches!(b, AgentBackend::Scripted { policy: ScriptedPolicy::BoundaryChaser }));
        let c: AgentBackend = serde_json::from_str(r#"{"kind": "SCRIPTED", "policy": {"CONSTANT": {"value": 120}}}"#).unwrap();
        assert!(matches!(c, AgentBackend::Scripted { policy: ScriptedPolicy::Constant { value } } if value == 120.0));
        let set: AgentSet = serde_json::from_str(r#"{"executor": {"kind": "MOCK", "responses": ["{}"]}}"#).unwrap();
        assert!(set.planner.is_none());
    }

    #[test]
    fn stable_hash_separates_parts() {
        assert_ne!(stable_hash(&[b"ab", b"c"]), stable_hash(&[b"a", b"bc"]));
        assert_eq!(stable_hash(&[b"x"]), stable_hash(&[b"x"]));
    }
}
