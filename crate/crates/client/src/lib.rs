//! Typed client for the deepmap HTTP service.

use std::time::Duration;

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use deepmap_api::*;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The server answered with a structured error.
    #[error("{0}")]
    Api(ApiError),
    #[error("server returned {status}: {body}")]
    Status { status: StatusCode, body: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn kind(&self) -> Option<ErrorKind> {
        match self {
            ClientError::Api(e) => Some(e.kind),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Result<Self> {
        // Builds and searches run for minutes; only connecting is bounded.
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .build()?;
        Ok(Self {
            base: base.into().trim_end_matches('/').to_owned(),
            http,
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let body = resp.text().await?;
        Err(match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => ClientError::Api(e),
            Err(_) => ClientError::Status { status, body },
        })
    }

    async fn post<Q: Serialize, T: DeserializeOwned>(&self, route: &str, req: &Q) -> Result<T> {
        let resp = self.http.post(format!("{}{route}", self.base)).json(req).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Health> {
        let resp = self.http.get(format!("{}{}", self.base, routes::HEALTH)).send().await?;
        Self::decode(resp).await
    }

    pub async fn generate(&self, req: &GenerateRequest) -> Result<DatasetSummary> {
        self.post(routes::GENERATE, req).await
    }

    pub async fn ingest(&self, req: &IngestRequest) -> Result<DatasetSummary> {
        self.post(routes::INGEST, req).await
    }

    pub async fn build(&self, req: &BuildRequest) -> Result<StoreSummary> {
        self.post(routes::BUILD, req).await
    }

    pub async fn search(&self, req: &SearchRequest) -> Result<SearchSummary> {
        self.post(routes::SEARCH, req).await
    }

    pub async fn query(&self, req: &QueryRequest) -> Result<QueryResponse> {
        self.post(routes::QUERY, req).await
    }

    pub async fn insert(&self, req: &MutateRequest) -> Result<MutationSummary> {
        self.post(routes::INSERT, req).await
    }

    pub async fn delete(&self, req: &MutateRequest) -> Result<MutationSummary> {
        self.post(routes::DELETE, req).await
    }

    pub async fn update(&self, req: &MutateRequest) -> Result<MutationSummary> {
        self.post(routes::UPDATE, req).await
    }

    pub async fn compact(&self, req: &CompactRequest) -> Result<MutationSummary> {
        self.post(routes::COMPACT, req).await
    }

    pub async fn bench(&self, req: &BenchRequest) -> Result<Report> {
        self.post(routes::BENCH, req).await
    }

    pub async fn compare(&self, req: &CompareRequest) -> Result<Comparison> {
        self.post(routes::COMPARE, req).await
    }
}
