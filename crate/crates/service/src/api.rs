use std::path::Path;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use caaf_core::agents::{AgentSet, ScriptedPolicy};
use caaf_core::assets;
use caaf_core::converge::{run_pipeline_observed, PipelineError, RunConfig, RunState};
use caaf_core::harness::{load_registry_str, validate_registry_with, HarnessRegistry};
use caaf_core::rad::{validate_plan, ProblemSpec};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::resolution;
use crate::store::Run;
use crate::{ApiError, Shared};

pub(crate) fn routes(state: Shared, console_dir: Option<&Path>) -> Router {
    let router = Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/menu", get(menu))
        .route("/runs/{id}/resolution", post(resolution::resolve))
        .route("/harnesses", get(list_harnesses))
        .route("/harnesses/{name}", get(get_harness));
    let router = match console_dir {
        Some(dir) => router.nest_service("/console", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => router.route("/console", get(console_placeholder)),
    };
    router.with_state(state)
}

async fn console_placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>console</title><p>No console bundle installed. Start the service with <code>--console DIR</code>.</p>")
}

/// Runs `job` on the blocking pool and records its outcome on `run`.
pub(crate) fn drive<F>(run: Arc<Run>, job: F)
where
    F: FnOnce(&Run) -> Result<RunState, PipelineError> + Send + 'static,
{
    let worker = run.clone();
    let task = tokio::task::spawn_blocking(move || job(&worker));
    tokio::spawn(async move {
        let result = match task.await {
            Ok(r) => r.map_err(|e| e.to_string()),
            Err(e) => Err(format!("pipeline task failed: {e}")),
        };
        run.finish(result);
    });
}

pub(crate) fn find(app: &Shared, id: &str) -> Result<Arc<Run>, ApiError> {
    app.store.get(id).ok_or_else(|| ApiError::not_found("run"))
}

fn storage_ok(run: &Run) -> Result<(), ApiError> {
    match &run.lock().io_failure {
        Some(msg) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("run log is not durable: {msg}"))),
        None => Ok(()),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProblemSource {
    Name(String),
    Inline(Value),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HarnessSource {
    Name(String),
    Inline { yaml: String },
}

#[derive(Deserialize)]
struct NewRun {
    problem: ProblemSource,
    harness: HarnessSource,
    #[serde(default)]
    agents: Option<AgentSet>,
    #[serde(default)]
    config: RunConfig,
}

fn resolve_problem(src: ProblemSource) -> Result<ProblemSpec, ApiError> {
    match src {
        ProblemSource::Name(name) => assets::problem(&name).ok_or_else(|| ApiError::invalid(format!("unknown problem '{name}'"))),
        ProblemSource::Inline(v) => ProblemSpec::from_json(&v.to_string()).map_err(|e| ApiError::invalid(e.to_string())),
    }
}

fn resolve_harness(src: HarnessSource) -> Result<HarnessRegistry, ApiError> {
    match src {
        HarnessSource::Name(name) => assets::harness(&name).ok_or_else(|| ApiError::invalid(format!("unknown harness '{name}'"))),
        HarnessSource::Inline { yaml } => load_registry_str(&yaml, "inline").map_err(|e| ApiError::invalid(e.to_string())),
    }
}

async fn create_run(State(app): State<Shared>, Json(req): Json<NewRun>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let problem = resolve_problem(req.problem)?;
    let registry = resolve_harness(req.harness)?;
    let plan_findings = validate_plan(&problem.plan);
    if !plan_findings.is_empty() {
        return Err(ApiError::invalid(format!("plan is invalid: {plan_findings:?}")));
    }
    let produced = problem.plan.nodes.values().flat_map(|n| n.expected_schema.keys().cloned()).collect();
    let findings = validate_registry_with(&registry, &produced);
    if !findings.is_empty() {
        let list: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        return Err(ApiError::invalid(format!("harness is invalid: {}", list.join("; "))));
    }
    if req.config.node_budget == 0 || req.config.parse_attempts == 0 {
        return Err(ApiError::invalid("node_budget and parse_attempts must be at least 1"));
    }
    let agents = req.agents.unwrap_or_else(|| AgentSet::scripted(ScriptedPolicy::BoundaryChaser));

    let run = app.store.create(problem, registry.clone(), agents, req.config).map_err(ApiError::io)?;
    let run_id = run.id.clone();
    tracing::info!(run = %run_id, harness = %registry.name, "run created");
    drive(run, move |r| run_pipeline_observed(&r.problem, &registry, &r.agents, &r.config, &mut |e| r.append(e)));
    Ok((StatusCode::CREATED, Json(json!({ "run_id": run_id }))))
}

async fn list_runs(State(app): State<Shared>) -> Json<Value> {
    Json(json!(app.store.list()))
}

async fn get_run(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let run = find(&app, &id)?;
    storage_ok(&run)?;
    let handle = run.handle();
    let inner = run.lock();
    let mut out = serde_json::to_value(&handle).unwrap_or_default();
    out["event_count"] = json!(inner.events.len());
    out["error"] = json!(inner.error);
    out["state"] = match &inner.state {
        Some(st) => {
            let mut v = serde_json::to_value(st).unwrap_or_default();
            if let Some(m) = v.as_object_mut() {
                m.remove("trace");
            }
            v
        }
        None => Value::Null,
    };
    Ok(Json(out))
}

#[derive(Deserialize)]
struct EventQuery {
    /// First sequence number to send; lets a client reconnect where it left off.
    #[serde(default)]
    from: u64,
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

async fn events(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventQuery>,
) -> Result<Response, ApiError> {
    let run = find(&app, &id)?;
    storage_ok(&run)?;
    let rx = run.subscribe();
    let follow = q.follow;
    let stream = futures::stream::unfold((run, rx, q.from as usize), move |(run, mut rx, next)| async move {
        loop {
            rx.borrow_and_update();
            let (batch, settled) = {
                let inner = run.lock();
                let batch: Vec<String> = inner
                    .events
                    .iter()
                    .skip(next)
                    .filter_map(|e| serde_json::to_string(e).ok())
                    .collect();
                (batch, inner.settled())
            };
            if !batch.is_empty() {
                let n = next + batch.len();
                let mut bytes = batch.join("\n");
                bytes.push('\n');
                return Some((Ok::<_, std::convert::Infallible>(Bytes::from(bytes)), (run, rx, n)));
            }
            if settled || !follow || rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response())
}

async fn menu(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let run = find(&app, &id)?;
    storage_ok(&run)?;
    run.until_idle().await;
    let inner = run.lock();
    let report = inner.state.as_ref().and_then(|s| s.paradox.as_ref());
    match report {
        Some(p) if inner.awaiting => Ok(Json(json!({
            "run_id": id,
            "mus": p.mus,
            "menu": p.menu,
            "evidence": p.evidence,
        }))),
        _ => Err(ApiError::conflict(format!("run is {} and not awaiting authorization", inner.status))),
    }
}

async fn list_harnesses() -> Json<Value> {
    let list: Vec<Value> = assets::HARNESS_NAMES
        .iter()
        .filter_map(|n| assets::harness(n).map(|r| (n, r)))
        .map(|(id, r)| {
            json!({
                "id": id,
                "name": r.name,
                "version": r.version,
                "frozen": r.frozen,
                "rules": r.rules.len(),
                "variables": r.variables.iter().map(|v| &v.name).collect::<Vec<_>>(),
            })
        })
        .collect();
    Json(json!(list))
}

#[derive(Deserialize)]
struct HarnessQuery {
    #[serde(default)]
    constants: bool,
}

async fn get_harness(
    State(app): State<Shared>,
    UrlPath(name): UrlPath<String>,
    Query(q): Query<HarnessQuery>,
) -> Result<Json<Value>, ApiError> {
    let reg = assets::harness(&name).ok_or_else(|| ApiError::not_found("harness"))?;
    if q.constants && !app.expose_constants {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "constant values are not exposed by this service"));
    }
    let rules: Vec<Value> = reg
        .rules
        .iter()
        .map(|r| {
            json!({
                "id": r.id,
                "display_name": r.display_name(),
                "description": r.description,
                "target_field": r.target_field,
                "condition": r.condition,
                "assertion": r.assertion,
                "severity": r.severity,
                "negotiable": r.negotiable,
                "relaxation_parameter": r.relaxation_parameter,
                "scope": r.scope,
                "failure_label": r.failure_label,
            })
        })
        .collect();
    let constant_names: Vec<&String> = reg.constants.keys().collect();
    Ok(Json(json!({
        "id": name,
        "name": reg.name,
        "version": reg.version,
        "frozen": reg.frozen,
        "multi_failure_label": reg.multi_failure_label,
        "rules": rules,
        "variables": reg.variables,
        "meta_tests": reg.meta_tests.len(),
        "constant_names": constant_names,
        "constants_redacted": !q.constants,
        "constants": if q.constants { json!(reg.constants) } else { Value::Null },
    })))
}
