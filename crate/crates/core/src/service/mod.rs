//! Long-running HTTP service over a persistent run store.

mod executor;
mod http;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use executor::{Executor, QueueFull, DEFAULT_QUEUE_CAPACITY};
pub use http::{router, AppState, RunRequest};
pub use store::{
    check_name, DatasetInfo, DatasetUpload, RunRecord, RunStatus, Store, TaxonomyInfo,
    TaxonomyUpload,
};

use crate::error::{Error, Result};

pub const STORE_ENV: &str = "ARTAI_STORE";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_root: PathBuf,
    pub addr: SocketAddr,
    pub parallelism: usize,
    pub queue_capacity: usize,
}

/// Opens the store and starts the workers.
pub fn start(store_root: PathBuf, parallelism: usize, queue_capacity: usize) -> Result<AppState> {
    let store = Arc::new(Store::open(store_root)?);
    let executor = Arc::new(Executor::start(Arc::clone(&store), parallelism, queue_capacity)?);
    Ok(AppState { store, executor })
}

/// Serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let state = start(config.store_root, config.parallelism, config.queue_capacity)?;
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| Error::Runtime(format!("cannot bind {}: {e}", config.addr)))?;
    let local = listener.local_addr().map_err(|e| Error::Runtime(e.to_string()))?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Runtime(format!("server error: {e}")))
}

#[cfg(test)]
mod tests;
