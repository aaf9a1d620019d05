use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use caaf_core::agents::{call_llm, AgentBackend, AgentError, AgentSet, ChatMessage, CostLedger, HttpChatConfig, ScriptedPolicy};
use caaf_core::assets;
use caaf_core::converge::{run_pipeline, RunConfig, RunStatus};
use caaf_core::lab::{cost_rollup, CostModel};

struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

/// Serves `replies` in order, one connection each, and hands back the raw
/// requests it saw.
fn serve(replies: Vec<Reply>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for reply in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let _ = tx.send(head + &String::from_utf8_lossy(&body));
            thread::sleep(reply.delay);
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply.status,
                reply.body.len(),
                reply.body
            );
        }
    });
    (url, rx)
}

fn completion(content: &str, model: &str) -> String {
    serde_json::json!({
        "model": model,
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 1200, "completion_tokens": 30},
    })
    .to_string()
}

fn config(url: &str, key_env: &str, secret: &str) -> HttpChatConfig {
    std::env::set_var(key_env, secret);
    HttpChatConfig {
        api_key_env: key_env.into(),
        timeout_ms: 2_000,
        ..HttpChatConfig::new(url, "gpt-4o-mini")
    }
}

#[test]
fn success_records_usage_and_keeps_the_key_out_of_logs() {
    let (url, seen) = serve(vec![Reply {
        status: 200,
        body: completion("{\"x\": 1}", "gpt-4o-mini-2024-07-18"),
        delay: Duration::ZERO,
    }]);
    let secret = "sk-test-alpha-0001";
    let cfg = config(&url, "CAAF_TEST_KEY_OK", secret);
    let ledger = CostLedger::new();
    let out = call_llm(&cfg, &[ChatMessage::user("hi")], Some(&ledger)).unwrap();
    assert_eq!(out, "{\"x\": 1}");

    let request = seen.recv().unwrap();
    assert!(request.contains(&format!("Bearer {secret}")));
    let body = &request[request.find("\r\n\r\n").unwrap()..];
    assert!(!body.contains(secret));
    assert!(body.contains("\"model\":\"gpt-4o-mini\""));

    let usage = ledger.usage();
    assert_eq!(usage.len(), 1);
    assert_eq!((usage[0].input_tokens, usage[0].output_tokens), (1200, 30));
    let cost = cost_rollup(&usage, &CostModel::default()).unwrap();
    assert!((cost - (1200.0 * 0.15 + 30.0 * 0.60) / 1e6).abs() < 1e-15);
    let log = ledger.log_lines().join("\n");
    assert!(!log.contains(secret), "{log}");
    assert!(log.contains("[REDACTED]"));
}

#[test]
fn rate_limit_surfaces_as_status() {
    let (url, _seen) = serve(vec![Reply {
        status: 429,
        body: "{\"error\": \"slow down\"}".into(),
        delay: Duration::ZERO,
    }]);
    let cfg = config(&url, "CAAF_TEST_KEY_429", "sk-test-beta");
    let ledger = CostLedger::new();
    let err = call_llm(&cfg, &[ChatMessage::user("hi")], Some(&ledger)).unwrap_err();
    assert_eq!(err, AgentError::HttpStatus(429));
    assert!(ledger.usage().is_empty());
}

#[test]
fn slow_server_times_out() {
    let (url, _seen) = serve(vec![Reply {
        status: 200,
        body: completion("{}", "gpt-4o-mini"),
        delay: Duration::from_millis(1500),
    }]);
    let cfg = HttpChatConfig {
        timeout_ms: 300,
        ..config(&url, "CAAF_TEST_KEY_SLOW", "sk-test-gamma")
    };
    let err = call_llm(&cfg, &[ChatMessage::user("hi")], None).unwrap_err();
    assert_eq!(err, AgentError::Timeout);
}

#[test]
fn missing_key_is_reported_by_name() {
    let cfg = HttpChatConfig {
        api_key_env: "CAAF_TEST_KEY_NEVER_SET".into(),
        ..HttpChatConfig::new("http://127.0.0.1:9/", "gpt-4o")
    };
    let err = call_llm(&cfg, &[], None).unwrap_err();
    assert_eq!(err, AgentError::MissingCredential("CAAF_TEST_KEY_NEVER_SET".into()));
}

#[test]
fn pipeline_node_served_over_http() {
    let replies = (0..3)
        .map(|_| Reply {
            status: 200,
            body: completion("{\"vehicle_speed_kmph_t5\": 90}", "gpt-4o"),
            delay: Duration::ZERO,
        })
        .collect();
    let (url, seen) = serve(replies);
    let cfg = HttpChatConfig {
        model: "gpt-4o".into(),
        ..config(&url, "CAAF_TEST_KEY_PIPE", "sk-test-delta")
    };
    let mut agents = AgentSet::scripted(ScriptedPolicy::BoundaryChaser);
    agents.per_node.insert("Kinematics_Node".into(), AgentBackend::HttpChat(cfg));
    let st = run_pipeline(&assets::ad_pass_problem(), &assets::ad_pass_registry(), &agents, &RunConfig::default()).unwrap();
    assert_eq!(st.status, RunStatus::Success);
    assert_eq!(st.artifact.get_f64("vehicle_speed_kmph_t5"), Some(90.0));
    assert_eq!(st.usage.len(), 1);
    let request = seen.recv().unwrap();
    let prompt = &request[request.find("\r\n\r\n").unwrap()..];
    // The executor sees its upstream fact and the rule text, never a constant value.
    assert!(prompt.contains("perception_range_m") && prompt.contains("90.0"));
    assert!(prompt.contains("max_deceleration_limit"));
    assert!(!prompt.contains("120") && !prompt.contains("3.6"));
    assert!(cost_rollup(&st.usage, &CostModel::default()).unwrap() > 0.0);
}
