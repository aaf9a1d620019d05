//! The one place a frozen registry may change: an operator picks an option
//! from a deadlocked run's menu.

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use caaf_core::converge::{acknowledge_deadlock, resume_after_override};
use caaf_core::paradox::{apply_resolution, OptionKind};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::api::{drive, find};
use crate::{ApiError, Shared};

#[derive(Deserialize)]
pub(crate) struct ResolutionRequest {
    option_label: String,
    actor: String,
    #[serde(default)]
    justification: String,
}

pub(crate) async fn resolve(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<ResolutionRequest>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let run = find(&app, &id)?;
    run.until_idle().await;
    let mut inner = run.lock();
    if let Some(msg) = &inner.io_failure {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("run log is not durable: {msg}")));
    }
    if !inner.awaiting || inner.busy {
        return Err(ApiError::conflict(format!("run is {} and not awaiting authorization", inner.status)));
    }
    let Some(state) = &inner.state else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "the paradox state of this run was not recovered"));
    };
    let option = state
        .paradox
        .as_ref()
        .and_then(|p| p.menu.iter().find(|o| o.label == req.option_label))
        .cloned()
        .ok_or_else(|| ApiError::invalid(format!("no option '{}' on this run's menu", req.option_label)))?;
    if req.actor.trim().is_empty() {
        return Err(ApiError::invalid("actor is required"));
    }

    let mut body = json!({ "run_id": id, "option_label": option.label, "kind": option.kind });
    match option.kind {
        OptionKind::ReportDeadlock => {
            let mut st = inner.take_state().expect("checked above");
            inner.busy = true;
            inner.awaiting = false;
            drop(inner);
            drive(run.clone(), move |r| {
                acknowledge_deadlock(&mut st, &req.actor, &req.justification, &mut |e| r.append(e))?;
                Ok(st)
            });
        }
        OptionKind::RelaxParameter => {
            let (relaxed, record) = apply_resolution(&inner.registry, &option, &req.actor, &req.justification)
                .map_err(|e| ApiError::invalid(e.to_string()))?;
            let n = state.overrides.len() + 1;
            run.save_override_registry(&relaxed, n).map_err(ApiError::io)?;
            tracing::info!(run = %id, actor = %record.actor, "{} {} -> {}", record.parameter, record.old_value, record.new_value);
            body["override"] = json!(record);
            let st = inner.take_state().expect("checked above");
            inner.registry = relaxed.clone();
            inner.busy = true;
            inner.awaiting = false;
            drop(inner);
            drive(run.clone(), move |r| {
                resume_after_override(st, &r.problem, &relaxed, &record, &r.agents, &r.config, &mut |e| r.append(e))
            });
        }
        OptionKind::StructuralChange => {
            return Err(ApiError::invalid(format!(
                "option {} changes rule structure and cannot be applied here",
                option.label
            )));
        }
    }
    Ok((StatusCode::ACCEPTED, Json(body)))
}
