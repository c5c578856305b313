//! Model backends reached over HTTP.
//!
//! Each role is bound to a URL. A call is one `POST` with
//! `{role, inputs, params}` and the answer is `{output, latency_ms}`, where
//! artifacts travel in their wire form (images as base64 PNG).

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use shrine_core::clock::Millis;
use shrine_core::pipelines::backend::{
    Artifact, BackendError, BackendRole, ModelBackend, StageInputs, StageOutput, WireArtifact,
};
use shrine_core::pipelines::BackendSet;

pub const DEFAULT_TIMEOUT_MS: Millis = 90_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Used for every role without its own entry in `endpoints`.
    pub base_url: Option<String>,
    pub endpoints: BTreeMap<BackendRole, String>,
    pub timeout_ms: Millis,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            endpoints: BTreeMap::new(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl RemoteConfig {
    pub fn url_for(&self, role: BackendRole) -> Option<String> {
        self.endpoints.get(&role).cloned().or_else(|| {
            self.base_url
                .as_ref()
                .map(|b| format!("{}/{}", b.trim_end_matches('/'), role.as_str()))
        })
    }

    /// Binds every role that has a URL.
    pub fn backend_set(&self) -> BackendSet {
        let mut set = BackendSet::new();
        for role in BackendRole::ALL {
            if let Some(url) = self.url_for(role) {
                set.bind(role, Arc::new(RemoteBackend::new(url, self.timeout_ms)));
            }
        }
        set
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InvokeRequest {
    pub role: BackendRole,
    pub inputs: BTreeMap<String, WireArtifact>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InvokeResponse {
    pub output: WireArtifact,
    #[serde(default)]
    pub latency_ms: Option<Millis>,
}

pub struct RemoteBackend {
    url: String,
    timeout: Duration,
    // built on first use: the blocking client must not be created inside
    // an async context
    client: OnceLock<reqwest::blocking::Client>,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, timeout_ms: Millis) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_millis(timeout_ms),
            client: OnceLock::new(),
        }
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(self.timeout)
                .build()
                .expect("http client")
        })
    }
}

impl ModelBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn invoke(&self, role: BackendRole, inputs: &StageInputs) -> Result<StageOutput, BackendError> {
        let body = InvokeRequest {
            role,
            inputs: inputs
                .inputs
                .iter()
                .map(|(k, a)| (k.clone(), WireArtifact::from(a)))
                .collect(),
            params: inputs.params.clone(),
        };
        let started = Instant::now();
        let resp = self
            .client()
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| {
                // timeouts and refused connections are worth another attempt
                BackendError::transient(format!("{role} at {}: {e}", self.url))
            })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let msg = format!("{role} at {}: HTTP {status}: {text}", self.url);
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                BackendError::transient(msg)
            } else {
                BackendError::permanent(msg)
            });
        }
        let parsed: InvokeResponse = resp
            .json()
            .map_err(|e| BackendError::permanent(format!("{role}: bad response body: {e}")))?;
        let artifact = Artifact::try_from(parsed.output)
            .map_err(|e| BackendError::permanent(format!("{role}: bad output artifact: {e}")))?;
        Ok(StageOutput {
            artifact,
            latency_ms: parsed
                .latency_ms
                .unwrap_or(started.elapsed().as_millis() as Millis),
        })
    }
}

/// Serves any in-process backend over the remote protocol at `/{ROLE}`.
/// Stands in for the model servers during rehearsals and tests.
pub fn backend_router(backend: Arc<dyn ModelBackend>) -> Router {
    Router::new()
        .route("/{role}", post(serve_invoke))
        .with_state(backend)
}

async fn serve_invoke(
    State(backend): State<Arc<dyn ModelBackend>>,
    axum::extract::Path(role): axum::extract::Path<String>,
    Json(req): Json<InvokeRequest>,
) -> Response {
    if req.role.as_str() != role {
        return (
            StatusCode::BAD_REQUEST,
            Json(
                json!({"error": format!("path role {role} does not match body role {}", req.role)}),
            ),
        )
            .into_response();
    }
    let mut inputs = StageInputs::new();
    for (name, wire) in req.inputs {
        match Artifact::try_from(wire) {
            Ok(a) => {
                inputs.inputs.insert(name, a);
            }
            Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({"error": e}))).into_response(),
        }
    }
    inputs.params = req.params;
    let result = tokio::task::spawn_blocking(move || backend.invoke(req.role, &inputs)).await;
    match result {
        Ok(Ok(out)) => Json(InvokeResponse {
            output: WireArtifact::from(&out.artifact),
            latency_ms: Some(out.latency_ms),
        })
        .into_response(),
        Ok(Err(e)) => {
            let status = match e.class {
                shrine_core::orchestrator::ErrorClass::Transient => StatusCode::SERVICE_UNAVAILABLE,
                shrine_core::orchestrator::ErrorClass::Permanent => {
                    StatusCode::UNPROCESSABLE_ENTITY
                }
            };
            (status, Json(json!({"error": e.message}))).into_response()
        }
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": e.to_string()})),
        )
            .into_response(),
    }
}
