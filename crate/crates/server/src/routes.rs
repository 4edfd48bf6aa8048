use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use matchscope_core::explain::{
    importance_maps_weighted, pca_correspondence, render_correspondence_pair, render_heatmap_pair, ExplainError,
    RenderMode,
};
use matchscope_core::features::{query_embedding, rasterize_mask_weights, CellWeights, FeatureError, MaskSpec, DEFAULT_SUPERSAMPLE};
use matchscope_core::index::{search, IndexError, QuerySpec, SearchFilters};
use matchscope_core::report::{render_html, CurateEdit, HtmlOptions, ReportEntry, SearchCriteria};
use matchscope_core::store::SpatialFeatureMap;

use crate::error::ApiError;
use crate::extractor::ExtractorError;
use crate::session::{QuerySession, QuerySource};
use crate::{AppState, DEFAULT_K, PANEL_SIZE};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

pub(crate) fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/api/v1/queries", post(create_query))
        .route("/api/v1/queries/{id}/results", get(query_results))
        .route("/api/v1/queries/{qid}/explain/{image_id}", get(explain))
        .route("/api/v1/hotels/{id}/images", get(hotel_images))
        .route("/api/v1/reports", post(create_report))
        .route("/api/v1/reports/{id}", get(get_report).patch(curate_report))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
        })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn parse_id(raw: &str, what: &str) -> ApiResult<u64> {
    raw.parse().map_err(|_| ApiError::bad_request(format!("{what} {raw:?} is not an unsigned integer")))
}

fn json_body<T: serde::de::DeserializeOwned>(body: &[u8], what: &str) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed {what}: {e}")))
}

fn feature_error(e: FeatureError) -> ApiError {
    match e {
        FeatureError::FullyMasked => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "fully_masked", e.to_string()),
        FeatureError::ZeroNorm(_) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "degenerate_features", e.to_string())
        }
        other => ApiError::bad_request(other.to_string()),
    }
}

fn index_error(e: IndexError) -> ApiError {
    match e {
        IndexError::InvalidQuery(_) | IndexError::InvalidCoordinate { .. } | IndexError::DimensionMismatch { .. } => {
            ApiError::bad_request(e.to_string())
        }
        other => ApiError::internal(other.to_string()),
    }
}

fn extractor_error(e: ExtractorError) -> ApiError {
    ApiError::new(StatusCode::BAD_GATEWAY, "extractor_unavailable", e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedQuery {
    pub query_id: String,
}

async fn create_query(State(state): Shared, multipart: Result<Multipart, MultipartRejection>) -> ApiResult<Response> {
    let mut multipart = multipart.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut parts: HashMap<String, Bytes> = HashMap::new();
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Err(multipart_error(e)),
        };
        let name = field.name().unwrap_or_default().to_string();
        if !matches!(name.as_str(), "tensor" | "image" | "mask" | "filters") {
            return Err(ApiError::bad_request(format!(
                "unknown field {name:?}; expected tensor, image, mask, filters"
            )));
        }
        let bytes = field.bytes().await.map_err(multipart_error)?;
        if parts.insert(name.clone(), bytes).is_some() {
            return Err(ApiError::bad_request(format!("field {name:?} given more than once")));
        }
    }

    let mask: MaskSpec = match parts.get("mask") {
        Some(b) if !b.is_empty() => json_body(b, "mask")?,
        _ => MaskSpec::empty(),
    };
    mask.validate().map_err(|e| ApiError::bad_request(format!("invalid mask: {e}")))?;
    let filters: SearchFilters = match parts.get("filters") {
        Some(b) if !b.is_empty() => json_body(b, "filters")?,
        _ => SearchFilters::default(),
    };
    filters.validate().map_err(|e| ApiError::bad_request(format!("invalid filters: {e}")))?;

    let (features, source, image) = match (parts.remove("tensor"), parts.remove("image")) {
        (Some(t), None) => {
            let map = SpatialFeatureMap::from_sfm1_bytes(&t)
                .map_err(|e| ApiError::bad_request(format!("invalid tensor: {e}")))?;
            (map, QuerySource::Tensor, None)
        }
        (None, Some(img)) => {
            let client = state.extractor.as_ref().ok_or_else(|| extractor_error(ExtractorError::NotConfigured))?;
            let map = client.extract(img.to_vec()).await.map_err(extractor_error)?;
            (map, QuerySource::Image, Some(img))
        }
        _ => return Err(ApiError::bad_request("exactly one of the tensor and image fields is required")),
    };

    let embedding = query_embedding(&features, &mask).map_err(feature_error)?;
    let index = state.index();
    if !index.is_empty() && index.dim() != embedding.dim() {
        return Err(ApiError::bad_request(format!(
            "query has {} channels but the index holds {}-d embeddings",
            embedding.dim(),
            index.dim()
        )));
    }
    let session = QuerySession {
        query_id: uuid::Uuid::new_v4().hyphenated().to_string(),
        source,
        mask,
        filters,
        embedding: embedding.values,
        created_at: Utc::now(),
    };
    let query_id = session.query_id.clone();
    state.sessions.create(session, features, image.as_deref())?;
    Ok((StatusCode::CREATED, Json(CreatedQuery { query_id })).into_response())
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", e.body_text())
    } else {
        ApiError::bad_request(e.body_text())
    }
}

fn session_or_404(state: &AppState, id: &str) -> ApiResult<Arc<crate::session::LoadedSession>> {
    state.sessions.get(id)?.ok_or_else(|| ApiError::not_found(format!("unknown query {id}")))
}

async fn query_results(
    State(state): Shared,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let k = match params.get("k") {
        Some(raw) => match raw.parse::<usize>() {
            Ok(k) if k >= 1 => k,
            _ => return Err(ApiError::bad_request(format!("k must be an integer >= 1, got {raw:?}"))),
        },
        None => DEFAULT_K,
    };
    let loaded = session_or_404(&state, &id)?;
    let query = QuerySpec { embedding: loaded.session.embedding.clone(), k, filters: loaded.session.filters.clone() };
    let result = search(&state.index(), &query).map_err(index_error)?;
    Ok(Json(result).into_response())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Png,
    Json,
}

fn format_param(params: &HashMap<String, String>, allowed: &[&str]) -> ApiResult<String> {
    let value = params.get("format").cloned().unwrap_or_else(|| allowed[0].to_string());
    if !allowed.contains(&value.as_str()) {
        return Err(ApiError::bad_request(format!(
            "unknown format {value:?}; valid formats are {}",
            allowed.join(", ")
        )));
    }
    Ok(value)
}

fn explain_error(e: ExplainError) -> ApiError {
    match e {
        ExplainError::ShapeMismatch { .. } => ApiError::conflict(e.to_string()),
        ExplainError::Feature(f) => feature_error(f),
        ExplainError::ZeroNorm(_) | ExplainError::TooFewCells(_) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unexplainable", e.to_string())
        }
        other => ApiError::internal(other.to_string()),
    }
}

async fn explain(
    State(state): Shared,
    Path((qid, image_id)): Path<(String, String)>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let mode = match params.get("mode") {
        Some(m) => m.parse::<RenderMode>().map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => RenderMode::Heatmap,
    };
    let format = match format_param(&params, &["png", "json"])?.as_str() {
        "json" => Format::Json,
        _ => Format::Png,
    };
    let image_id = parse_id(&image_id, "image id")?;
    let loaded = session_or_404(&state, &qid)?;
    if state.catalog().get(image_id).is_none() {
        return Err(ApiError::not_found(format!("unknown image {image_id}")));
    }
    let result = state
        .data
        .read_features(image_id)?
        .ok_or_else(|| ApiError::not_found(format!("no stored features for image {image_id}")))?;
    let query = &loaded.features;
    if query.shape() != result.shape() {
        return Err(explain_error(ExplainError::ShapeMismatch { query: query.shape(), result: result.shape() }));
    }
    let panel = (
        PANEL_SIZE.max(query.width() as u32),
        PANEL_SIZE.max(query.height() as u32),
    );

    match mode {
        RenderMode::Heatmap => {
            let weights = rasterize_mask_weights(&loaded.session.mask, (query.height(), query.width()), DEFAULT_SUPERSAMPLE)
                .map_err(feature_error)?;
            let uniform = CellWeights::uniform(result.height(), result.width());
            let pair = importance_maps_weighted(query, &weights, &result, &uniform, true).map_err(explain_error)?;
            match format {
                Format::Json => Ok(Json(pair.export()).into_response()),
                Format::Png => png(render_heatmap_pair(&pair, panel).map_err(explain_error)?),
            }
        }
        RenderMode::Correspondence => {
            let map = pca_correspondence(query, &result).map_err(explain_error)?;
            match format {
                Format::Json => Ok(Json(map.export()).into_response()),
                Format::Png => png(render_correspondence_pair(&map, panel).map_err(explain_error)?),
            }
        }
    }
}

fn png(bytes: Vec<u8>) -> ApiResult<Response> {
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn hotel_images(State(state): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    let hotel_id = parse_id(&id, "hotel id")?;
    Ok(Json(state.catalog().get_hotel_images(hotel_id)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateReport {
    #[serde(default)]
    query_ref: String,
    #[serde(default)]
    criteria: SearchCriteria,
    #[serde(default)]
    entries: Vec<ReportEntry>,
}

async fn create_report(State(state): Shared, body: Bytes) -> ApiResult<Response> {
    let req: CreateReport = json_body(&body, "report")?;
    let report = state.reports.create(req.query_ref, req.criteria, req.entries)?;
    Ok((StatusCode::CREATED, Json(report)).into_response())
}

async fn curate_report(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let edit: CurateEdit = json_body(&body, "edit")?;
    Ok(Json(state.reports.curate(&id, edit)?).into_response())
}

async fn get_report(
    State(state): Shared,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let format = format_param(&params, &["json", "html"])?;
    let report = state.reports.get(&id)?;
    if format == "html" {
        let rendered = render_html(&report, state.data.path(), HtmlOptions { hotel_summary: true });
        return Ok(([(header::CONTENT_TYPE, "text/html; charset=utf-8")], rendered.html).into_response());
    }
    Ok(([(header::CONTENT_TYPE, "application/json")], report.to_json()).into_response())
}
