//! Async client for the tuning service.

use lambdatune_core::sweep::InvocationBudget;
use lambdatune_server::api::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use lambdatune_server::api;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {source}")]
    Transport { url: String, source: reqwest::Error },
    #[error("{0}")]
    Api(ApiError),
    #[error("unexpected response from {url} ({status}): {body}")]
    Protocol { url: String, status: u16, body: String },
}

impl ClientError {
    /// Pipeline stage that failed, when the server named one.
    pub fn stage(&self) -> &str {
        match self {
            ClientError::Api(e) => &e.stage,
            ClientError::Transport { .. } | ClientError::Protocol { .. } => "transport",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client { base, http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, ClientError> {
        let url = format!("{}{path}", self.base);
        let transport = |source| ClientError::Transport { url: url.clone(), source };
        let resp = self.http.post(&url).json(body).send().await.map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(transport)?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Protocol {
                url: url.clone(),
                status: status.as_u16(),
                body: e.to_string(),
            });
        }
        match serde_json::from_slice::<ApiError>(&bytes) {
            Ok(err) => Err(ClientError::Api(err)),
            Err(_) => Err(ClientError::Protocol {
                url,
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        let url = format!("{}/health", self.base);
        let resp = self.http.get(&url).send().await.map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ClientError::Protocol { url, status: resp.status().as_u16(), body: String::new() })
        }
    }

    pub async fn lambda(&self, req: &LambdaRequest) -> Result<LambdaResponse, ClientError> {
        self.post("/v1/lambda", req).await
    }

    pub async fn bd_rate(&self, req: &BdRateRequest) -> Result<BdRateResponse, ClientError> {
        self.post("/v1/bdrate", req).await
    }

    pub async fn sweep(&self, req: &SweepRequest) -> Result<SweepResponse, ClientError> {
        self.post("/v1/sweep", req).await
    }

    pub async fn optimize(&self, req: &OptimizeRequest) -> Result<OptimizeResponse, ClientError> {
        self.post("/v1/optimize", req).await
    }

    pub async fn report(&self, req: &ReportRequest) -> Result<ReportResponse, ClientError> {
        self.post("/v1/report", req).await
    }

    pub async fn plot(&self, req: &PlotRequest) -> Result<PlotResponse, ClientError> {
        self.post("/v1/plot", req).await
    }

    pub async fn budget(&self, budget: InvocationBudget) -> Result<u64, ClientError> {
        Ok(self.post::<_, BudgetResponse>("/v1/budget", &budget).await?.invocations)
    }
}
