//! HTTP service tying the corpus, map, ROI inference, generation and
//! versioning together into event-sourced design sessions.

pub mod api;
pub mod config;
pub mod error;
pub mod session;

pub use api::{router, AppState};
pub use config::{ConfigError, ServiceConfig};
pub use error::ServiceError;
pub use session::{Engine, Session, SessionEvent};

/// Build everything from `config`, bind, and serve until the process exits.
pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let engine = tokio::task::spawn_blocking({
        let config = config.clone();
        move || config.build_engine()
    })
    .await??;
    if let Some(dir) = &config.data_dir {
        std::fs::create_dir_all(dir)?;
    }
    let state = AppState::new(engine, config.mesh.clone(), config.data_dir.clone());
    let restored = state.restore().await?;
    if restored > 0 {
        log::info!("restored {restored} sessions");
    }
    let app = router(state, &config.cors_origins);
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
