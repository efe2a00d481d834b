//! Thin async client for `stmor-service`.

use serde::de::DeserializeOwned;
use serde::Serialize;
use stmor::pipeline::{ErrorBody, EvalRequest, EvalSummary, FomRequest, FomSummary, RomInfo};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    #[error("server error {status} ({}): {}", body.code, body.message)]
    Server { status: u16, body: ErrorBody },
}

impl ClientError {
    pub fn body(&self) -> ErrorBody {
        match self {
            ClientError::Transport(e) => ErrorBody { code: "transport".into(), message: e.to_string() },
            ClientError::Server { body, .. } => body.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Client {
        Client { base: base.into().trim_end_matches('/').to_owned(), http: reqwest::Client::new() }
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody { code: "http".into(), message: text });
        Err(ClientError::Server { status: status.as_u16(), body })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        Self::decode(self.http.get(format!("{}/health", self.base)).send().await?).await
    }

    pub async fn rom_info(&self) -> Result<RomInfo, ClientError> {
        Self::decode(self.http.get(format!("{}/rom/info", self.base)).send().await?).await
    }

    pub async fn eval_rom(&self, req: &EvalRequest) -> Result<EvalSummary, ClientError> {
        self.post("/rom/eval", req).await
    }

    pub async fn fom(&self, req: &FomRequest) -> Result<FomSummary, ClientError> {
        self.post("/fom", req).await
    }
}
