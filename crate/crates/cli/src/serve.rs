use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State as AxumState;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ddl_core::env::State;
use ddl_core::goals::{PreferenceProvider, PreferenceResponse};
use ddl_core::trainer::{train, BuiltEnv, EpisodeMetrics, Method, TrainOptions, TrainerConfig};
use serde::Serialize;
use serde_json::json;

use crate::mailbox::{HttpProvider, Mailbox, RespondError};
use crate::{create, CliError, CliResult, LoggingProvider, CONFIG_FILE, METRICS_FILE, QUERIES_FILE};

/// Recent final-distance values kept for `/status`.
const CURVE_LEN: usize = 200;

#[derive(Debug, Clone, Default, Serialize)]
pub struct Status {
    pub env_steps: u64,
    pub episode: u64,
    pub current_goal: Option<State>,
    pub queries_used: u32,
    pub curve: VecDeque<Option<usize>>,
    pub done: bool,
}

impl Status {
    fn record(&mut self, m: &EpisodeMetrics) {
        self.env_steps = m.env_steps;
        self.episode = m.episode;
        self.current_goal = m.goal;
        self.queries_used = m.queries_used;
        if self.curve.len() == CURVE_LEN {
            self.curve.pop_front();
        }
        self.curve.push_back(m.final_distance_to_goal);
    }
}

#[derive(Clone)]
pub struct ServerState {
    pub mailbox: Arc<Mailbox>,
    pub status: Arc<Mutex<Status>>,
}

async fn get_status(AxumState(s): AxumState<ServerState>) -> Json<Status> {
    Json(s.status.lock().unwrap_or_else(|p| p.into_inner()).clone())
}

async fn get_query(AxumState(s): AxumState<ServerState>) -> Response {
    match s.mailbox.pending() {
        Some(p) => (StatusCode::OK, Json(p.payload)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn post_respond(AxumState(s): AxumState<ServerState>, body: Bytes) -> Response {
    let response: PreferenceResponse = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))).into_response(),
    };
    match s.mailbox.respond(response) {
        Ok(()) => (StatusCode::OK, Json(json!({ "accepted": true, "query_id": response.query_id }))).into_response(),
        Err(e @ RespondError::Stale(_)) => (StatusCode::CONFLICT, Json(json!({ "error": e.to_string() }))).into_response(),
        Err(e @ RespondError::OutOfRange { .. }) => {
            (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))).into_response()
        }
    }
}

/// `GET /status`, `GET /query`, `POST /respond`.
pub fn router(state: ServerState) -> Router {
    Router::new()
        .route("/status", get(get_status))
        .route("/query", get(get_query))
        .route("/respond", post(post_respond))
        .with_state(state)
}

/// Trains with preference queries answered over HTTP. Prints the bound
/// address on stdout, returns when training ends (or on Ctrl-C, after
/// writing checkpoints).
pub fn serve(cfg: TrainerConfig, built: BuiltEnv, out: &Path, host: &str, port: u16) -> CliResult<()> {
    if cfg.method != Method::Ddlfp {
        return Err(CliError::Config("serve needs method = ddlfp".into()));
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind((host, port)))
        .map_err(|e| CliError::Runtime(format!("cannot listen on {host}:{port}: {e}")))?;
    let addr = listener.local_addr()?;

    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_kv())?;
    let mut metrics = create(&out.join(METRICS_FILE))?;
    let queries = create(&out.join(QUERIES_FILE))?;

    let state = ServerState {
        mailbox: Mailbox::new(),
        status: Arc::new(Mutex::new(Status::default())),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let (done_tx, done_rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(state.clone());
    let server = runtime.spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = done_rx.await;
            })
            .await
    });
    {
        let (stop, mailbox) = (stop.clone(), state.mailbox.clone());
        runtime.spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                stop.store(true, Ordering::Relaxed);
                mailbox.close();
            }
        });
    }
    println!("listening on http://{addr}");
    std::io::stdout().flush()?;

    let mut http = HttpProvider {
        mailbox: state.mailbox.clone(),
        env: built.env.as_ref(),
        timeout: Duration::from_secs_f64(cfg.provider_timeout_secs),
    };
    let mut provider = LoggingProvider {
        inner: &mut http,
        log: Box::new(queries),
    };
    let status = state.status.clone();
    let mut on_episode = |m: &EpisodeMetrics| status.lock().unwrap_or_else(|p| p.into_inner()).record(m);
    let result = train(
        &built,
        &cfg,
        Some(&mut provider as &mut dyn PreferenceProvider),
        TrainOptions {
            metrics: Some(&mut metrics),
            checkpoint_dir: Some(out.to_path_buf()),
            on_episode: Some(&mut on_episode),
            stop: Some(&stop),
        },
    );
    metrics.flush()?;
    state.status.lock().unwrap_or_else(|p| p.into_inner()).done = true;
    state.mailbox.close();
    let _ = done_tx.send(());
    let _ = runtime.block_on(server);
    let outcome = result?;
    eprintln!(
        "trained {} episodes, {} env steps, {} queries; final goal {:?}",
        outcome.episodes, outcome.env_steps, outcome.queries_used, outcome.final_goal
    );
    Ok(())
}
