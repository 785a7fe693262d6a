use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use ddl_core::env::Env;
use ddl_core::goals::{PreferenceProvider, PreferenceQuery, PreferenceResponse, ProviderError};
use serde_json::{json, Value};
use thiserror::Error;

/// A query waiting for an answer, with its wire payload pre-rendered.
#[derive(Debug, Clone)]
pub struct PendingQuery {
    pub query: PreferenceQuery,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RespondError {
    #[error("query {0} is not the outstanding query")]
    Stale(u64),
    #[error("choice {choice} out of range 0..={keep}")]
    OutOfRange { choice: usize, keep: usize },
}

#[derive(Debug, Default)]
struct Slot {
    pending: Option<PendingQuery>,
    answer: Option<PreferenceResponse>,
    closed: bool,
}

/// Single-slot rendezvous between the trainer (which posts a query and
/// blocks) and the HTTP handlers (which read it and post the answer). At
/// most one query is outstanding; each is answered at most once.
#[derive(Debug, Default)]
pub struct Mailbox {
    slot: Mutex<Slot>,
    changed: Condvar,
}

impl Mailbox {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn lock(&self) -> MutexGuard<'_, Slot> {
        self.slot.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn pending(&self) -> Option<PendingQuery> {
        self.lock().pending.clone()
    }

    /// Accepts an answer for the outstanding query. A second answer to the
    /// same query is stale.
    pub fn respond(&self, response: PreferenceResponse) -> Result<(), RespondError> {
        let mut slot = self.lock();
        let Some(p) = slot.pending.as_ref().filter(|p| p.query.query_id == response.query_id) else {
            return Err(RespondError::Stale(response.query_id));
        };
        let keep = p.query.keep_index();
        if response.choice_index > keep {
            return Err(RespondError::OutOfRange {
                choice: response.choice_index,
                keep,
            });
        }
        slot.pending = None;
        slot.answer = Some(response);
        self.changed.notify_all();
        Ok(())
    }

    /// Fails the outstanding and all future queries with `Disconnected`.
    pub fn close(&self) {
        let mut slot = self.lock();
        slot.closed = true;
        slot.pending = None;
        self.changed.notify_all();
    }

    /// Posts `pending` and blocks until it is answered, the timeout passes,
    /// or the mailbox closes.
    pub fn ask(&self, pending: PendingQuery, timeout: Duration) -> Result<PreferenceResponse, ProviderError> {
        let deadline = Instant::now() + timeout;
        let mut slot = self.lock();
        if slot.closed {
            return Err(ProviderError::Disconnected);
        }
        slot.answer = None;
        slot.pending = Some(pending);
        self.changed.notify_all();
        loop {
            if let Some(answer) = slot.answer.take() {
                return Ok(answer);
            }
            if slot.closed {
                return Err(ProviderError::Disconnected);
            }
            let now = Instant::now();
            if now >= deadline {
                slot.pending = None;
                return Err(ProviderError::Timeout);
            }
            slot = self
                .changed
                .wait_timeout(slot, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }
}

/// Provider that hands queries to a human through the mailbox.
pub struct HttpProvider<'a> {
    pub mailbox: Arc<Mailbox>,
    pub env: &'a dyn Env,
    pub timeout: Duration,
}

impl HttpProvider<'_> {
    fn render(&self, state: Option<usize>) -> Value {
        match (self.env.as_grid(), state) {
            (Some(g), Some(s)) => g
                .render(Some(s), None, None)
                .ok()
                .and_then(|r| serde_json::to_value(r).ok())
                .unwrap_or(Value::Null),
            _ => Value::Null,
        }
    }

    /// `{query_id, candidates: [{index, state, grid_render}], previous_goal}`.
    pub fn payload(&self, query: &PreferenceQuery) -> Value {
        let candidates: Vec<Value> = query
            .candidates
            .iter()
            .enumerate()
            .map(|(i, &s)| json!({ "index": i, "state": s, "grid_render": self.render(Some(s)) }))
            .collect();
        let previous = query
            .previous_goal
            .map(|g| json!({ "index": query.keep_index(), "state": g, "grid_render": self.render(Some(g)) }));
        json!({
            "query_id": query.query_id,
            "candidates": candidates,
            "previous_goal": previous,
            "issued_at_env_step": query.issued_at_env_step,
        })
    }
}

impl PreferenceProvider for HttpProvider<'_> {
    fn ask(&mut self, query: &PreferenceQuery) -> Result<PreferenceResponse, ProviderError> {
        let pending = PendingQuery {
            query: query.clone(),
            payload: self.payload(query),
        };
        self.mailbox.ask(pending, self.timeout)
    }
}
