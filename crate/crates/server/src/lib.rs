//! HTTP service around the metrocast engine.
//!
//! One orchestrator thread owns the [`Engine`](metrocast::engine::Engine)
//! and publishes an immutable snapshot per cycle; axum handlers only read
//! published snapshots, and what-ifs run on the blocking pool against the
//! latest snapshot's simulation inputs.

pub mod api;
pub mod orchestrator;
pub mod state;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use metrocast::config::{Mode, ServiceConfig};
use metrocast::engine::{AfcFileTail, Feed, Journal, MemoryFeed, NoFeed, PositionFileTail};
use metrocast::ingest::TrainPositionReport;
use metrocast::pipeline;
use tracing::info;

pub use orchestrator::Orchestrator;
pub use state::{AppState, Published, SnapshotEvent};

/// Build the engine and state from `cfg`, bind, and serve until ctrl-c.
pub async fn serve(cfg: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let engine = pipeline::build_engine(&cfg)?;
    let models = metrocast::models::ModelSet::load(&cfg.model_dir, engine.topology())?;
    let state =
        Arc::new(AppState::new(engine.topology().clone(), *engine.clock(), cfg.mode, models.version, cfg.retain));
    let journal = Some(Journal::open(&cfg.data_dir)?);
    let stop = Arc::new(AtomicBool::new(false));

    let listener =
        tokio::net::TcpListener::bind(&cfg.bind).await.map_err(|e| format!("cannot bind {}: {e}", cfg.bind))?;
    info!(addr = %listener.local_addr()?, mode = ?cfg.mode, "listening");

    let worker = match cfg.mode {
        Mode::Live => {
            let taps = Box::new(AfcFileTail::new(&cfg.sources.afc, engine.topology().clone()));
            let positions: Box<dyn Feed<TrainPositionReport>> = match &cfg.sources.positions {
                Some(p) => Box::new(PositionFileTail::new(p, engine.topology().clone())),
                None => Box::new(NoFeed),
            };
            let orch = Orchestrator::new(engine, taps, positions, journal, state.clone());
            let stop = stop.clone();
            std::thread::spawn(move || orch.run_live(stop))
        }
        Mode::Replay => {
            let (taps, positions) = pipeline::replay_inputs(&cfg, engine.topology())?;
            let (from, to) = pipeline::replay_window(&cfg)?;
            let orch = Orchestrator::new(
                engine,
                Box::new(MemoryFeed::new(taps)),
                Box::new(MemoryFeed::new(positions)),
                journal,
                state.clone(),
            );
            let pause = Duration::from_secs_f64(cfg.replay.speed);
            let stop = stop.clone();
            std::thread::spawn(move || orch.run_replay(from, to, pause, stop))
        }
    };

    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    stop.store(true, Ordering::Relaxed);
    let _ = worker.join();
    Ok(())
}
