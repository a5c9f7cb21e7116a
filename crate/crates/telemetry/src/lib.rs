//! Local monitoring service: virtual pins, relay control, prediction feeding
//! and a server-sent event stream.

pub mod api;
pub mod events;
pub mod hub;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

pub use api::{router, AppState, TOKEN_HEADER};
pub use events::{Event, EventBody, EventLog, Notice, PinBoard, PinId, PinReading};
pub use hub::{ApiError, Hub, HubConfig, PredictRequest, PredictResponse, RelayMode, RelayRequest, RelayResponse};

pub const ADDR_ENV: &str = "RUL_HTTP_ADDR";
pub const TOKEN_ENV: &str = "RUL_API_TOKEN";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

/// Seconds on the controller's time axis.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

/// Monotonic seconds since construction.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn set(&self, t: f64) {
        self.0.store(t.to_bits(), Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::SeqCst))
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("invalid listen address `{0}`")]
    Address(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Listen address and token from the environment.
#[derive(Debug, Clone)]
pub struct ServiceEnv {
    pub addr: SocketAddr,
    pub token: Option<String>,
}

impl ServiceEnv {
    pub fn from_env() -> Result<Self, ServeError> {
        let raw = std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_string());
        let addr = raw.parse().map_err(|_| ServeError::Address(raw))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(ServiceEnv { addr, token })
    }
}

/// Ticks the hub every `interval` seconds until the returned task is aborted.
pub fn spawn_ticker(app: AppState, interval: f64) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut timer = tokio::time::interval(Duration::from_secs_f64(interval));
        timer.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            timer.tick().await;
            if let Err(e) = app.tick() {
                eprintln!("device link error: {e}");
            }
        }
    })
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: AppState,
    ui_dir: Option<PathBuf>,
    interval: f64,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let ticker = spawn_ticker(app.clone(), interval);
    let result = axum::serve(listener, router(app, ui_dir))
        .with_graceful_shutdown(shutdown)
        .await;
    ticker.abort();
    Ok(result?)
}
