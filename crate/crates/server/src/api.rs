//! `/v1` HTTP handlers. Every handler reads one published snapshot and never
//! touches the engine.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDateTime;
use futures::Stream;
use metrocast::decisions::GateClosurePlan;
use metrocast::engine::{CycleSnapshot, HistoryPoint};
use metrocast::forecast::ArrivalForecast;
use metrocast::od::ODForecast;
use metrocast::patterns::Classification;
use metrocast::{StationId, TimeBin};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::state::AppState;

pub const DEFAULT_HISTORY: usize = 16;

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/stations", get(stations))
        .route("/forecast/arrivals", get(arrivals))
        .route("/forecast/od", get(od))
        .route("/sim/loads", get(sim_loads))
        .route("/sim/platforms", get(sim_platforms))
        .route("/alerts", get(alerts))
        .route("/denial", get(denial))
        .route("/whatif/gate-closure", post(whatif))
        .route("/accuracy", get(accuracy))
        .route("/events", get(events));
    Router::new().nest("/v1", v1).with_state(state)
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<metrocast::Error> for ApiError {
    fn from(e: metrocast::Error) -> Self {
        use metrocast::Error as E;
        let code = match e {
            E::UnknownStation(_) => StatusCode::NOT_FOUND,
            E::Plan(_) | E::Json(_) | E::OutOfRange(_) | E::Config(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn latest(state: &AppState) -> Result<Arc<CycleSnapshot>, ApiError> {
    state
        .current()
        .latest()
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "no cycle has completed yet".into()))
}

fn station(state: &AppState, id: Option<String>) -> Result<Option<StationId>, ApiError> {
    match id {
        None => Ok(None),
        Some(s) => {
            let id = StationId::from(s.as_str());
            if state.topology.contains(&id) {
                Ok(Some(id))
            } else {
                Err(ApiError(StatusCode::NOT_FOUND, format!("unknown station `{s}`")))
            }
        }
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let p = state.current();
    Json(match p.latest() {
        None => {
            json!({ "status": "warming", "mode": state.mode, "model_version": state.model_version })
        }
        Some(s) => json!({
            "status": "ok",
            "mode": state.mode,
            "model_version": state.model_version,
            "last_cycle": s.cycle_time,
            "seq": s.seq,
            "snapshots_retained": p.snapshots.len(),
        }),
    })
}

async fn stations(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let t = &state.topology;
    let list: Vec<_> = t.stations().iter().enumerate().map(|(i, s)| json!({ "id": s, "index": i })).collect();
    Json(json!({
        "stations": list,
        "capacity": t.capacity(),
        "headway_s": t.headway_s(),
        "dwell_s": t.dwell_s(),
        "run_s": t.run_s(),
        "covariates": t.exog_schema().names(),
    }))
}

#[derive(Deserialize)]
struct ArrivalsQuery {
    station: Option<String>,
    history: Option<usize>,
}

#[derive(Serialize)]
struct ForecastView<'a> {
    #[serde(flatten)]
    forecast: &'a ArrivalForecast,
    target_start: NaiveDateTime,
    target_end: NaiveDateTime,
}

#[derive(Serialize)]
struct ArrivalsView<'a> {
    seq: u64,
    cycle_time: NaiveDateTime,
    station: &'a StationId,
    last_observed_bin: TimeBin,
    classification: &'a Classification,
    cluster_switched: bool,
    fallback: bool,
    forecasts: Vec<ForecastView<'a>>,
    history: &'a [HistoryPoint],
}

async fn arrivals(State(state): State<Arc<AppState>>, Query(q): Query<ArrivalsQuery>) -> Result<Response, ApiError> {
    let id = station(&state, q.station)?
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "query parameter `station` is required".into()))?;
    let snap = latest(&state)?;
    let published = state.current();
    let s = snap.station(&id).ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no forecasts for {id}")))?;
    let clock = &state.clock;
    let hist = published.history.get(&id).map(Vec::as_slice).unwrap_or_default();
    let n = q.history.unwrap_or(DEFAULT_HISTORY).min(hist.len());
    let view = ArrivalsView {
        seq: snap.seq,
        cycle_time: snap.cycle_time,
        station: &s.station,
        last_observed_bin: snap.last_observed_bin,
        classification: &s.classification,
        cluster_switched: s.cluster_switched,
        fallback: s.fallback,
        forecasts: s
            .arrivals
            .iter()
            .map(|f| ForecastView {
                forecast: f,
                target_start: clock.bin_start(f.target_bin),
                target_end: clock.bin_end(f.target_bin),
            })
            .collect(),
        history: &hist[hist.len() - n..],
    };
    Ok(Json(view).into_response())
}

#[derive(Deserialize)]
struct OriginQuery {
    origin: Option<String>,
}

async fn od(State(state): State<Arc<AppState>>, Query(q): Query<OriginQuery>) -> ApiResult<serde_json::Value> {
    let origin = station(&state, q.origin)?;
    let snap = latest(&state)?;
    let flows: Vec<&ODForecast> = snap
        .stations
        .iter()
        .filter(|s| origin.as_ref().is_none_or(|o| &s.station == o))
        .flat_map(|s| s.od.iter())
        .collect();
    Ok(Json(json!({ "seq": snap.seq, "cycle_time": snap.cycle_time, "forecasts": flows })))
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn csv_response(write: impl FnOnce(&mut Vec<u8>) -> metrocast::Result<()>) -> Result<Response, ApiError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], buf).into_response())
}

async fn sim_loads(State(state): State<Arc<AppState>>, Query(q): Query<FormatQuery>) -> Result<Response, ApiError> {
    let snap = latest(&state)?;
    if q.format.as_deref() == Some("csv") {
        return csv_response(|w| snap.sim.write_trains_csv(w));
    }
    Ok(Json(json!({
        "seq": snap.seq,
        "start": snap.sim_inputs.start,
        "capacity": state.topology.capacity(),
        "departures": snap.sim.departures,
        "totals": snap.sim.totals,
    }))
    .into_response())
}

async fn sim_platforms(State(state): State<Arc<AppState>>, Query(q): Query<FormatQuery>) -> Result<Response, ApiError> {
    let snap = latest(&state)?;
    if q.format.as_deref() == Some("csv") {
        return csv_response(|w| snap.sim.write_platform_csv(w));
    }
    Ok(Json(json!({ "seq": snap.seq, "start": snap.sim_inputs.start, "platforms": snap.sim.platforms }))
        .into_response())
}

async fn alerts(State(state): State<Arc<AppState>>) -> ApiResult<serde_json::Value> {
    let snap = latest(&state)?;
    Ok(Json(json!({ "seq": snap.seq, "cycle_time": snap.cycle_time, "alerts": snap.alerts })))
}

#[derive(Deserialize)]
struct StationQuery {
    station: Option<String>,
}

async fn denial(State(state): State<Arc<AppState>>, Query(q): Query<StationQuery>) -> ApiResult<serde_json::Value> {
    let id = station(&state, q.station)?;
    let snap = latest(&state)?;
    let rows: Vec<_> = snap.denial.iter().filter(|d| id.as_ref().is_none_or(|s| &d.station == s)).collect();
    Ok(Json(json!({ "seq": snap.seq, "cycle_time": snap.cycle_time, "denial": rows })))
}

async fn whatif(State(state): State<Arc<AppState>>, body: String) -> Result<Response, ApiError> {
    let plan: GateClosurePlan =
        serde_json::from_str(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("bad plan: {e}")))?;
    let snap = latest(&state)?;
    let st = state.clone();
    let result = tokio::task::spawn_blocking(move || snap.whatif(&st.topology, &plan))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(result).into_response())
}

async fn accuracy(State(state): State<Arc<AppState>>, Query(q): Query<FormatQuery>) -> Response {
    let p = state.current();
    match q.format.as_deref() {
        Some("text") => p.accuracy.render().into_response(),
        _ => Json(&p.accuracy).into_response(),
    }
}

async fn events(State(state): State<Arc<AppState>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = state.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default()
                        .event("snapshot")
                        .id(ev.seq.to_string())
                        .json_data(&ev)
                        .expect("event serializes");
                    return Some((Ok(event), rx));
                }
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
