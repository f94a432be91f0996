//! HTTP/JSON annotation service over a curation store.
//!
//! Every route authenticates a rater by bearer token (except `/healthz`),
//! decodes its request, calls one operation from `vizmet-core` and encodes the
//! result. Mutating responses carry the record version for optimistic retries.

mod auth;
mod error;
mod routes;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;
use vizmet_core::dataset::Store;

pub use auth::{ApiSession, TokenTable};
pub use error::ApiError;
pub use routes::router;

/// Shared, stateless-per-request service state.
#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub tokens: Arc<TokenTable>,
}

impl AppState {
    pub fn new(store: Store, tokens: TokenTable) -> Self {
        AppState { store: Arc::new(store), tokens: Arc::new(tokens) }
    }
}

/// Binds the listening socket; a busy port is reported here, before serving.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ApiError> {
    TcpListener::bind(addr).await.map_err(|e| ApiError::Config(format!("cannot bind {addr}: {e}")))
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve_listener(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ApiError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState) -> Result<(), ApiError> {
    let listener = bind(addr).await?;
    serve_listener(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    })
    .await
}
