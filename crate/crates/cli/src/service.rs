//! HTTP annotation service. All state is built once at startup and shared
//! read-only between requests.

use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medner::grouping::GroupingStrategy;
use medner::linking::{fuzzy_link, LinkOptions, LinkResult, MappingTable};
use medner::pipeline::{Annotation, Annotator, DictionaryModel, Ensemble, PipelineConfig, TokenModel};
use medner::stacking::MetaNet;
use medner::voting::VotePolicy;
use medner::LabelScheme;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub struct AppState {
    pub annotator: Annotator,
    pub table: Option<MappingTable>,
    pub metanet: Option<MetaNet>,
    pub link_options: LinkOptions,
    pub grouping: GroupingStrategy,
    pub vote: VotePolicy,
}

impl AppState {
    /// Loads the mapping table and meta-network named in `config`. The
    /// demo labeler is replicated once per meta-network input model.
    pub fn from_config(config: &PipelineConfig) -> medner::Result<Self> {
        let table = match &config.linking.mapping_path {
            Some(path) => Some(MappingTable::load_csv(path)?.0),
            None => None,
        };
        let metanet = match &config.service.metanet_path {
            Some(path) => Some(MetaNet::load(path)?),
            None => None,
        };
        Self::new(table, metanet, config)
    }

    pub fn new(table: Option<MappingTable>, metanet: Option<MetaNet>, config: &PipelineConfig) -> medner::Result<Self> {
        let n_models = metanet.as_ref().map_or(1, |n| n.n_models);
        let models: Vec<Box<dyn TokenModel>> = (0..n_models)
            .map(|i| {
                let mut model = DictionaryModel::new(format!("dictionary-{i}"));
                if let Some(t) = &table {
                    model = model.with_drugs_from(t);
                }
                Box::new(model) as Box<dyn TokenModel>
            })
            .collect();
        Ok(AppState {
            annotator: Annotator::new(models, config.chunking.clone())?,
            vote: config.vote.policy(n_models)?,
            table,
            metanet,
            link_options: config.linking.options.clone(),
            grouping: config.grouping,
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError { status, kind: kind.into(), message: message.into() }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), "BadRequest", r.body_text())
    }
}

impl From<medner::Error> for ApiError {
    fn from(e: medner::Error) -> Self {
        use medner::Error::*;
        let status = match e {
            EmptyInput | EmptyQuery | InvalidThreshold { .. } | InvalidConfig(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleChoice {
    /// The configured vote policy.
    #[default]
    Vote,
    MaxVote,
    Majority,
    Stacked,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateRequest {
    pub text: String,
    pub strategy: Option<GroupingStrategy>,
    pub ensemble: Option<EnsembleChoice>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kb {
    #[default]
    Snomed,
    Bnf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRequest {
    pub term: String,
    #[serde(default)]
    pub kb: Kb,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LinkResponse {
    #[serde(flatten)]
    pub result: LinkResult,
    pub kb: Kb,
    /// URL for the requested knowledge base; absent for SNOMED without a match.
    pub url: Option<String>,
}

async fn annotate(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<AnnotateRequest>, JsonRejection>,
) -> Result<Json<Annotation>, ApiError> {
    let Json(req) = payload?;
    let strategy = req.strategy.unwrap_or(state.grouping);
    let choice = req.ensemble.unwrap_or_default();
    if choice == EnsembleChoice::Stacked && state.metanet.is_none() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "MetanetUnavailable", "no meta-network loaded"));
    }
    let annotation = tokio::task::spawn_blocking(move || {
        let n = state.annotator.n_models();
        let ensemble = match choice {
            EnsembleChoice::Vote => Ensemble::Vote(state.vote),
            EnsembleChoice::MaxVote => Ensemble::Vote(VotePolicy::max_alphabetical()),
            EnsembleChoice::Majority => Ensemble::Vote(VotePolicy::majority_for(n)),
            EnsembleChoice::Stacked => Ensemble::Stacked(state.metanet.as_ref().expect("checked above")),
        };
        state.annotator.annotate(&req.text, strategy, ensemble)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    Ok(Json(annotation))
}

async fn link(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<LinkRequest>, JsonRejection>,
) -> Result<Json<LinkResponse>, ApiError> {
    let Json(req) = payload?;
    let Some(table) = &state.table else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "MappingUnavailable", "no mapping table loaded"));
    };
    let result = fuzzy_link(&req.term, table, &state.link_options)?;
    let url = match req.kb {
        Kb::Snomed => result.snomed_url.clone(),
        Kb::Bnf => Some(result.bnf_url.clone()),
    };
    Ok(Json(LinkResponse { result, kb: req.kb, url }))
}

async fn labels() -> Json<serde_json::Value> {
    let scheme = LabelScheme::canonical();
    Json(json!({
        "labels": scheme.labels,
        "entity_classes": scheme.entity_classes,
        "collapsed": scheme.collapsed_labels(),
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "models": state.annotator.n_models(),
        "mapping_entries": state.table.as_ref().map(MappingTable::len),
        "metanet": state.metanet.is_some(),
    }))
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let app = Router::new()
        .route("/annotate", post(annotate))
        .route("/link", post(link))
        .route("/labels", get(labels))
        .route("/health", get(health))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

pub async fn serve(config: &PipelineConfig) -> medner::Result<()> {
    let state = Arc::new(AppState::from_config(config)?);
    let app = router(state, config.service.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(&config.service.bind).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
