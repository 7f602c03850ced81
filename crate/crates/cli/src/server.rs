//! JSON-over-HTTP service for interactive composing.
//!
//! The model is shared read-only between requests. Sessions live in a
//! mutex-guarded map and are dropped after sitting idle for the TTL.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use folkgen_core::generation::{continue_with_rng, GenerationConfig, Termination};
use folkgen_core::representation::EncodedSong;
use folkgen_core::{Model, ModelCheckpoint, Rational};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use uuid::Uuid;

use crate::render::{
    encode_seed, parse_one_tune, render_abc, token_notes, SeedError, SongFrame, TokenNote,
};

pub const MAX_CONTINUATIONS: usize = 32;
pub const MAX_LENGTH: usize = 1000;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"error": code, "message": message.into()}),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<SeedError> for ApiError {
    fn from(e: SeedError) -> Self {
        match e {
            SeedError::Vocabulary(v) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({"error": "out_of_vocabulary", "message": v.to_string(), "tokens": v.tokens()}),
            },
            other => Self::new(StatusCode::BAD_REQUEST, "invalid_abc", other.to_string()),
        }
    }
}

/// `Json` whose rejections are JSON 400s.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) => Err(ApiError::bad_request(e.body_text())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OfferStatus {
    Offered,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone)]
struct Offer {
    id: u64,
    batch: u64,
    /// Melody length the continuation was sampled from.
    base_len: usize,
    /// New notes only; a sampled song ending is recorded in `ended`.
    notes: EncodedSong,
    probs: Vec<f64>,
    ended: bool,
    status: OfferStatus,
    accepted_len: Option<usize>,
}

#[derive(Debug, Clone)]
struct Session {
    melody: EncodedSong,
    frame: SongFrame,
    offers: Vec<Offer>,
    /// Melody lengths before each accept, for undo.
    undo: Vec<usize>,
    next_offer: u64,
    next_batch: u64,
    touched: Instant,
}

impl Session {
    fn new(frame: SongFrame) -> Self {
        Session {
            melody: EncodedSong {
                pitches: vec![],
                durations: vec![],
            },
            frame,
            offers: Vec::new(),
            undo: Vec::new(),
            next_offer: 1,
            next_batch: 1,
            touched: Instant::now(),
        }
    }
}

pub struct AppState {
    checkpoint: ModelCheckpoint,
    model: Arc<Model>,
    sessions: Mutex<HashMap<Uuid, Session>>,
    ttl: Duration,
    server_seed: u64,
    requests: AtomicU64,
}

impl AppState {
    /// `server_seed` drives sampling for requests that bring no seed of their own.
    pub fn new(
        checkpoint: ModelCheckpoint,
        ttl: Duration,
        server_seed: u64,
    ) -> Result<Self, String> {
        let model = checkpoint.model().map_err(|e| e.to_string())?;
        Ok(AppState {
            checkpoint,
            model: Arc::new(model),
            sessions: Mutex::new(HashMap::new()),
            ttl,
            server_seed,
            requests: AtomicU64::new(0),
        })
    }

    pub fn session_count(&self) -> usize {
        let mut map = self.sessions.lock().expect("session lock");
        self.evict(&mut map);
        map.len()
    }

    fn evict(&self, map: &mut HashMap<Uuid, Session>) {
        let ttl = self.ttl;
        map.retain(|_, s| s.touched.elapsed() < ttl);
    }

    fn with_session<R>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<R, ApiError>,
    ) -> Result<R, ApiError> {
        let id =
            Uuid::parse_str(id).map_err(|_| ApiError::not_found(format!("no session {id}")))?;
        let mut map = self.sessions.lock().expect("session lock");
        self.evict(&mut map);
        let s = map
            .get_mut(&id)
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))?;
        s.touched = Instant::now();
        f(s)
    }

    fn default_frame(&self) -> SongFrame {
        SongFrame::plain(Rational::new(1, 8))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/model", get(get_model))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/seed", post(seed_session))
        .route("/session/{id}/continuations", post(continuations))
        .route("/session/{id}/accept", post(accept))
        .route("/session/{id}/undo", post(undo))
        .route("/session/{id}/export", get(export))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(
                StatusCode::METHOD_NOT_ALLOWED,
                "method_not_allowed",
                "method not allowed",
            )
        })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(checkpoint: ModelCheckpoint, addr: &str, ttl: Duration) -> std::io::Result<()> {
    let state = AppState::new(checkpoint, ttl, rand::random()).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn get_model(State(st): State<Arc<AppState>>) -> Json<Value> {
    let ck = &st.checkpoint;
    Json(json!({
        "vocab": {
            "pitches": ck.vocab.pitch_tokens(),
            "durations": ck.vocab.duration_tokens(),
        },
        "dims": {"rhythm": ck.rhythm.dims, "melody": ck.melody.dims},
        "training_meta": ck.training_meta,
        "openings": ck.openings.len(),
    }))
}

#[derive(Debug, Serialize)]
struct OfferView {
    id: u64,
    batch: u64,
    status: OfferStatus,
    notes: Vec<TokenNote>,
    probs: Vec<f64>,
    ended: bool,
    accepted_len: Option<usize>,
}

fn session_view(st: &AppState, id: &str, s: &Session) -> Value {
    let vocab = &st.model.vocab;
    let offers: Vec<OfferView> = s
        .offers
        .iter()
        .map(|o| OfferView {
            id: o.id,
            batch: o.batch,
            status: o.status,
            notes: token_notes(&o.notes, vocab),
            probs: o.probs.clone(),
            ended: o.ended,
            accepted_len: o.accepted_len,
        })
        .collect();
    json!({
        "id": id,
        "melody": token_notes(&s.melody, vocab),
        "length": s.melody.len(),
        "offers": offers,
        "can_undo": !s.undo.is_empty(),
    })
}

async fn create_session(State(st): State<Arc<AppState>>) -> (StatusCode, Json<Value>) {
    let id = Uuid::new_v4();
    let session = Session::new(st.default_frame());
    let view = session_view(&st, &id.to_string(), &session);
    let mut map = st.sessions.lock().expect("session lock");
    st.evict(&mut map);
    map.insert(id, session);
    (StatusCode::CREATED, Json(view))
}

async fn get_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    st.with_session(&id, |s| Ok(Json(session_view(&st, &id, s))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedRequest {
    abc: String,
}

async fn seed_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<SeedRequest>,
) -> Result<Json<Value>, ApiError> {
    // Validate before touching the session so a bad seed leaves it unchanged.
    st.with_session(&id, |_| Ok(()))?;
    let score = parse_one_tune(&req.abc)?;
    let (melody, frame) = encode_seed(&score, &st.model.vocab)?;
    if melody.is_empty() {
        return Err(ApiError::bad_request("seed has no notes"));
    }
    st.with_session(&id, |s| {
        *s = Session {
            touched: Instant::now(),
            ..Session::new(frame)
        };
        s.melody = melody;
        Ok(Json(session_view(&st, &id, s)))
    })
}

fn default_n() -> usize {
    1
}

fn default_length() -> usize {
    16
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContinuationRequest {
    #[serde(default = "default_n")]
    n: usize,
    /// New notes per continuation, at most.
    #[serde(default = "default_length")]
    length: usize,
    #[serde(default = "default_temperature")]
    temperature: f64,
    rng_seed: Option<u64>,
    #[serde(default)]
    greedy: bool,
}

#[derive(Debug, Serialize)]
struct ContinuationView {
    id: u64,
    notes: Vec<NoteWithProb>,
    ended: bool,
    abc: String,
}

#[derive(Debug, Serialize)]
struct NoteWithProb {
    pitch: String,
    duration: String,
    prob: f64,
}

/// Mixes the server seed with a request counter so unseeded requests differ.
fn request_seed(server_seed: u64, counter: u64) -> u64 {
    let mut z = server_seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

async fn continuations(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ContinuationRequest>,
) -> Result<Json<Value>, ApiError> {
    if req.n == 0 || req.n > MAX_CONTINUATIONS {
        return Err(ApiError::bad_request(format!(
            "n must be between 1 and {MAX_CONTINUATIONS}"
        )));
    }
    if req.length == 0 || req.length > MAX_LENGTH {
        return Err(ApiError::bad_request(format!(
            "length must be between 1 and {MAX_LENGTH}"
        )));
    }
    if !(req.temperature > 0.0 && req.temperature.is_finite()) {
        return Err(ApiError::bad_request("temperature must be positive"));
    }
    let melody = st.with_session(&id, |s| {
        if s.melody.is_empty() {
            return Err(ApiError::conflict("empty_melody", "seed the session first"));
        }
        Ok(s.melody.clone())
    })?;
    let seed = match req.rng_seed {
        Some(s) => s,
        None => request_seed(st.server_seed, st.requests.fetch_add(1, Ordering::Relaxed)),
    };
    let cfg = GenerationConfig {
        seed,
        max_notes: melody.len() + req.length,
        temperature: req.temperature,
        num_samples: req.n,
        greedy: req.greedy,
    };
    let model = Arc::clone(&st.model);
    let base = melody.clone();
    let generated = tokio::task::spawn_blocking(move || {
        (0..cfg.num_samples)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                continue_with_rng(&model, &base, &cfg, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    .map_err(|e| {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "generation",
            e.to_string(),
        )
    })?;

    let vocab = &st.model.vocab;
    let base_len = melody.len();
    st.with_session(&id, |s| {
        if s.melody != melody {
            return Err(ApiError::conflict("stale", "melody changed while sampling"));
        }
        let batch = s.next_batch;
        s.next_batch += 1;
        let mut views = Vec::new();
        for g in generated {
            let ended = g.termination == Termination::EndedNaturally;
            let end = g.note_count();
            let notes = EncodedSong {
                pitches: g.encoded.pitches[base_len..end].to_vec(),
                durations: g.encoded.durations[base_len..end].to_vec(),
            };
            let probs = g.note_probs[..end - base_len].to_vec();
            let id = s.next_offer;
            s.next_offer += 1;
            let full = EncodedSong {
                pitches: g.encoded.pitches[..end].to_vec(),
                durations: g.encoded.durations[..end].to_vec(),
            };
            let abc =
                render_abc(&full, vocab, &s.frame, 1, &s.frame.header.title).map_err(|e| {
                    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "render", e.to_string())
                })?;
            let shown = token_notes(&notes, vocab)
                .into_iter()
                .zip(&probs)
                .map(|(t, &prob)| NoteWithProb {
                    pitch: t.pitch,
                    duration: t.duration,
                    prob,
                })
                .collect();
            views.push(ContinuationView {
                id,
                notes: shown,
                ended,
                abc,
            });
            s.offers.push(Offer {
                id,
                batch,
                base_len,
                notes,
                probs,
                ended,
                status: OfferStatus::Offered,
                accepted_len: None,
            });
        }
        Ok(Json(
            json!({"batch": batch, "rng_seed": seed, "continuations": views}),
        ))
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AcceptRequest {
    continuation_id: u64,
    prefix_len: usize,
}

async fn accept(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<AcceptRequest>,
) -> Result<Json<Value>, ApiError> {
    st.with_session(&id, |s| {
        let idx = s
            .offers
            .iter()
            .position(|o| o.id == req.continuation_id)
            .ok_or_else(|| {
                ApiError::not_found(format!("no continuation {}", req.continuation_id))
            })?;
        let offer = &s.offers[idx];
        if offer.status != OfferStatus::Offered || offer.base_len != s.melody.len() {
            return Err(ApiError::conflict(
                "stale",
                "continuation no longer extends the melody",
            ));
        }
        if req.prefix_len > offer.notes.len() {
            return Err(ApiError::bad_request(format!(
                "prefix_len {} exceeds the {} notes of continuation {}",
                req.prefix_len,
                offer.notes.len(),
                offer.id
            )));
        }
        let k = req.prefix_len;
        let (pitches, durations) = (
            offer.notes.pitches[..k].to_vec(),
            offer.notes.durations[..k].to_vec(),
        );
        let batch = offer.batch;
        s.undo.push(s.melody.len());
        s.melody.pitches.extend(pitches);
        s.melody.durations.extend(durations);
        for o in s
            .offers
            .iter_mut()
            .filter(|o| o.batch == batch && o.status == OfferStatus::Offered)
        {
            o.status = OfferStatus::Rejected;
        }
        let offer = &mut s.offers[idx];
        offer.status = OfferStatus::Accepted;
        offer.accepted_len = Some(k);
        Ok(Json(session_view(&st, &id, s)))
    })
}

async fn undo(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    st.with_session(&id, |s| {
        let len = s
            .undo
            .pop()
            .ok_or_else(|| ApiError::conflict("nothing_to_undo", "no accepted continuation"))?;
        s.melody.pitches.truncate(len);
        s.melody.durations.truncate(len);
        if let Some(o) = s
            .offers
            .iter_mut()
            .rev()
            .find(|o| o.status == OfferStatus::Accepted)
        {
            o.status = OfferStatus::Rejected;
            o.accepted_len = None;
        }
        Ok(Json(session_view(&st, &id, s)))
    })
}

async fn export(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    st.with_session(&id, |s| {
        if s.melody.is_empty() {
            return Err(ApiError::conflict("empty_melody", "nothing to export"));
        }
        let title = if s.frame.header.title.is_empty() {
            "Untitled"
        } else {
            &s.frame.header.title
        };
        let abc = render_abc(&s.melody, &st.model.vocab, &s.frame, 1, title).map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "render", e.to_string())
        })?;
        Ok(Json(json!({"abc": abc, "length": s.melody.len()})))
    })
}
