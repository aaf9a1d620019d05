//! Chat-completions client with a per-endpoint in-flight cap, token usage
//! ledger and credential redaction.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AgentError, ProposalRequest};

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_temperature() -> f64 {
    0.7
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl HttpChatConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        HttpChatConfig {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            temperature: default_temperature(),
            seed: None,
            api_key_env: default_key_env(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_in_flight(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: &str) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.to_string(),
        }
    }

    pub fn user(content: &str) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub model: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Token usage and a redacted request log, shared by every call in a run.
#[derive(Debug, Default)]
pub struct CostLedger {
    usage: Mutex<Vec<UsageEntry>>,
    log: Mutex<Vec<String>>,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    pub fn record(&self, entry: UsageEntry) {
        self.usage.lock().expect("ledger poisoned").push(entry);
    }

    pub fn usage(&self) -> Vec<UsageEntry> {
        self.usage.lock().expect("ledger poisoned").clone()
    }

    pub fn log_lines(&self) -> Vec<String> {
        self.log.lock().expect("ledger poisoned").clone()
    }

    fn log(&self, line: String) {
        self.log.lock().expect("ledger poisoned").push(line);
    }
}

fn redact(text: &str, secret: &str) -> String {
    if secret.is_empty() {
        text.to_string()
    } else {
        text.replace(secret, "[REDACTED]")
    }
}

/// Counting semaphore keyed by endpoint URL.
struct InFlight {
    counts: Mutex<HashMap<String, usize>>,
    freed: Condvar,
}

fn in_flight() -> &'static InFlight {
    static SLOTS: OnceLock<InFlight> = OnceLock::new();
    SLOTS.get_or_init(|| InFlight {
        counts: Mutex::new(HashMap::new()),
        freed: Condvar::new(),
    })
}

struct Slot<'a> {
    endpoint: &'a str,
}

impl<'a> Slot<'a> {
    fn acquire(endpoint: &'a str, cap: usize) -> Self {
        let f = in_flight();
        let mut counts = f.counts.lock().expect("in-flight poisoned");
        while counts.get(endpoint).copied().unwrap_or(0) >= cap.max(1) {
            counts = f.freed.wait(counts).expect("in-flight poisoned");
        }
        *counts.entry(endpoint.to_string()).or_default() += 1;
        Slot { endpoint }
    }
}

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        let f = in_flight();
        if let Ok(mut counts) = f.counts.lock() {
            if let Some(c) = counts.get_mut(self.endpoint) {
                *c = c.saturating_sub(1);
            }
        }
        f.freed.notify_all();
    }
}

/// One request, one response. The credential is read from the configured
/// environment variable and never appears in errors or the ledger log.
pub fn call_llm(cfg: &HttpChatConfig, messages: &[ChatMessage], ledger: Option<&CostLedger>) -> Result<String, AgentError> {
    let key = std::env::var(&cfg.api_key_env).map_err(|_| AgentError::MissingCredential(cfg.api_key_env.clone()))?;
    let mut body = serde_json::json!({
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
        "response_format": {"type": "json_object"},
    });
    if let Some(seed) = cfg.seed {
        body["seed"] = seed.into();
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(cfg.timeout_ms))
        .build()
        .map_err(|e| AgentError::NetworkError(redact(&e.to_string(), &key)))?;

    let _slot = Slot::acquire(&cfg.endpoint, cfg.max_in_flight);
    if let Some(l) = ledger {
        l.log(redact(
            &format!("POST {} model={} authorization=Bearer {}", cfg.endpoint, cfg.model, key),
            &key,
        ));
    }
    let resp = client.post(&cfg.endpoint).bearer_auth(&key).json(&body).send().map_err(|e| {
        if e.is_timeout() {
            AgentError::Timeout
        } else {
            AgentError::NetworkError(redact(&e.to_string(), &key))
        }
    })?;
    let status = resp.status();
    if let Some(l) = ledger {
        l.log(format!("<- {} {}", status.as_u16(), cfg.endpoint));
    }
    if !status.is_success() {
        return Err(AgentError::HttpStatus(status.as_u16()));
    }
    let json: serde_json::Value = resp.json().map_err(|e| {
        if e.is_timeout() {
            AgentError::Timeout
        } else {
            AgentError::Protocol(redact(&e.to_string(), &key))
        }
    })?;
    let content = json["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| AgentError::Protocol("no choices[0].message.content".into()))?
        .to_string();
    if let Some(l) = ledger {
        l.record(UsageEntry {
            model: json["model"].as_str().unwrap_or(&cfg.model).to_string(),
            input_tokens: json["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: json["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        });
    }
    Ok(content)
}

/// Executor prompt: the node's firewalled context and the latest audit.
pub fn render_messages(req: &ProposalRequest) -> Vec<ChatMessage> {
    let schema: Vec<String> = req
        .ctx
        .expected_schema
        .iter()
        .map(|(k, t)| format!("\"{k}\": {}", t.as_str()))
        .collect();
    let system = format!(
        "You execute one step of an engineering plan. Reply with a single JSON object with exactly these fields: {{{}}}. \
         Fields marked LOCKED in the audit must keep their previous values.",
        schema.join(", ")
    );
    let mut user = serde_json::json!({ "task": req.ctx.to_prompt_json() });
    if let Some(p) = req.previous {
        user["previous_output"] = serde_json::to_value(p).unwrap_or_default();
    }
    if let Some(a) = req.audit {
        user["audit"] = serde_json::to_value(a).unwrap_or_default();
    }
    if !req.feedback.is_empty() {
        let fb: Vec<_> = req.feedback.iter().map(|v| v.record()).collect();
        user["feedback"] = serde_json::to_value(fb).unwrap_or_default();
    }
    vec![ChatMessage::system(&system), ChatMessage::user(&user.to_string())]
}
