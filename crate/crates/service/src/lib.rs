//! HTTP/JSON front end for the online ROM and single FOM solves.
//!
//! Routes:
//! - `GET /health`
//! - `GET /rom/info`
//! - `POST /rom/eval` with an [`EvalRequest`] body
//! - `POST /fom` with a [`FomRequest`] body
//!
//! Errors come back as an [`ErrorBody`] with a 4xx or 5xx status.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use stmor::config::CaseConfig;
use stmor::pipeline::{eval_rom, rom_info, sample_or_center, ErrorBody, EvalRequest, EvalSummary, FomRequest, FomSummary, RomInfo};
use stmor::rom::RomPackage;
use stmor::{Error, Result};

/// What the service can answer. Either part may be absent, in which case the
/// matching routes return `not_loaded`.
#[derive(Default)]
pub struct AppState {
    pub case: Option<CaseConfig>,
    pub package: Option<(RomPackage, String)>,
    pub workers: usize,
}

impl AppState {
    pub fn load(case: Option<&str>, package: Option<&Path>, workers: usize) -> Result<AppState> {
        let case = case.map(CaseConfig::load).transpose()?;
        let package = package.map(stmor::pipeline::load_package).transpose()?;
        if let (Some(c), Some((p, _))) = (&case, &package) {
            if c.case_id != p.provenance.case_id {
                return Err(Error::StaleArtifact(format!("package was built for case '{}', not '{}'", p.provenance.case_id, c.case_id)));
            }
        }
        Ok(AppState { case, package, workers })
    }
}

pub struct ApiError(StatusCode, ErrorBody);

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        let status = match &e {
            Error::InvalidArgument(_) | Error::Parameter(_) | Error::Dimension(_) => StatusCode::BAD_REQUEST,
            Error::NotConverged { .. } | Error::SingularSystem(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, ErrorBody::from(&e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn not_loaded(what: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, ErrorBody { code: "not_loaded".into(), message: format!("the service was started without a {what}") })
}

type Shared = Arc<AppState>;

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "case": s.case.as_ref().map(|c| c.case_id.clone()),
        "package": s.package.as_ref().map(|(_, h)| h.clone()),
    }))
}

async fn info(State(s): State<Shared>) -> Result<Json<RomInfo>, ApiError> {
    let (pkg, hash) = s.package.as_ref().ok_or_else(|| not_loaded("ROM package"))?;
    Ok(Json(rom_info(pkg, hash)))
}

async fn eval(State(s): State<Shared>, Json(req): Json<EvalRequest>) -> Result<Json<EvalSummary>, ApiError> {
    if s.package.is_none() {
        return Err(not_loaded("ROM package"));
    }
    let sizes = req.sizes()?;
    let out = tokio::task::spawn_blocking(move || {
        let (pkg, _) = s.package.as_ref().expect("checked above");
        eval_rom(pkg, req.mu, sizes)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, ErrorBody { code: "internal".into(), message: e.to_string() }))??;
    Ok(Json(out))
}

async fn fom(State(s): State<Shared>, Json(req): Json<FomRequest>) -> Result<Json<FomSummary>, ApiError> {
    if s.case.is_none() {
        return Err(not_loaded("case configuration"));
    }
    let out = tokio::task::spawn_blocking(move || -> Result<FomSummary> {
        let cfg = s.case.as_ref().expect("checked above");
        let problem = cfg.problem()?;
        let mu = sample_or_center(&problem, req.mu);
        problem.parameters.check(&mu)?;
        let sol = stmor::offline::with_workers(s.workers, || problem.solve(&mu, &cfg.solver))??;
        Ok(FomSummary::new(cfg, &problem, &sol, None))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, ErrorBody { code: "internal".into(), message: e.to_string() }))??;
    Ok(Json(out))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/rom/info", get(info))
        .route("/rom/eval", post(eval))
        .route("/fom", post(fom))
        .with_state(Arc::new(state))
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
