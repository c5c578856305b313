//! The live show service: REST and WebSocket endpoints over a running
//! [`Show`], plus the HTTP adapter for remote model backends.

pub mod api;
pub mod live;
pub mod remote;

use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use shrine_core::pipelines::{BackendSet, MockBackend};
use shrine_core::show::{Show, ShowConfig, ShowError, ShowOptions, ShowSeeds};

pub use api::{router, ApiError, AppState};
pub use live::{EpochClock, LiveShow};
pub use remote::{backend_router, RemoteBackend, RemoteConfig};

/// Which model backends a live show talks to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Mock,
    Remote(RemoteConfig),
}

impl BackendChoice {
    /// Remote roles without a URL fall back to the mock.
    pub fn backend_set(&self, show: &ShowConfig) -> BackendSet {
        let mock = BackendSet::all(Arc::new(MockBackend::new(show.mock.clone())));
        match self {
            BackendChoice::Mock => mock,
            BackendChoice::Remote(remote) => {
                let mut set = mock;
                for role in shrine_core::pipelines::backend::BackendRole::ALL {
                    if let Some(url) = remote.url_for(role) {
                        set.bind(role, Arc::new(RemoteBackend::new(url, remote.timeout_ms)));
                    }
                }
                set
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub show: ShowConfig,
    pub seeds: ShowSeeds,
    pub options: ShowOptions,
    pub backends: BackendChoice,
    /// See [`LiveShow::new`].
    pub latency_scale: f64,
    pub operator_token: Option<String>,
    /// How often overdue review tickets are swept.
    pub timeout_tick: Duration,
}

impl ServiceConfig {
    pub fn new(show: ShowConfig, seeds: ShowSeeds) -> Self {
        Self {
            show,
            seeds,
            options: ShowOptions {
                keep_previews: true,
                ..ShowOptions::default()
            },
            backends: BackendChoice::Mock,
            latency_scale: 0.0,
            operator_token: None,
            timeout_tick: Duration::from_millis(100),
        }
    }
}

/// A started show with its router. Must be built inside a tokio runtime.
pub struct Service {
    pub live: LiveShow,
    pub router: Router,
}

impl Service {
    pub fn start(config: ServiceConfig) -> Result<Self, ShowError> {
        let backends = config.backends.backend_set(&config.show);
        Self::start_with(config, backends)
    }

    pub fn start_with(config: ServiceConfig, backends: BackendSet) -> Result<Self, ShowError> {
        let show = Show::new(config.show, config.seeds, backends, config.options)?;
        let live = LiveShow::new(show, config.latency_scale);
        live.start_ticker(config.timeout_tick);
        // jobs recovered from a journal go straight back to work
        live.pump();
        let router = router(AppState {
            live: live.clone(),
            operator_token: config.operator_token.map(Arc::from),
        });
        Ok(Self { live, router })
    }

    pub async fn serve(self, listener: TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router).await
    }
}
