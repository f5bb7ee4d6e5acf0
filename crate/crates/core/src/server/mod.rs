//! HTTP service.
//!
//! | route                                          | method | notes                         |
//! |------------------------------------------------|--------|-------------------------------|
//! | `/tile/{theme}/{level}/{gridid}/{row}/{col}`   | GET    | `?date=`; SPIN-2 decrypted    |
//! | `/page`                                        | GET    | mosaic descriptor, logs a hit |
//! | `/gazetteer`                                   | GET    | ten rows a page, logs a hit   |
//! | `/coverage/{level}/{x}/{y}`                    | GET    | PNG                           |
//! | `/coverage_nav`                                | GET    | pixel to lat/lon              |
//! | `/picks`                                       | GET    |                               |
//! | `/picks`                                       | POST   | admin                         |
//! | `/admin/progress`                              | GET    | admin, loader journal         |
//! | `/admin/hide`                                  | POST   | admin                         |
//! | `/ui/`                                         | GET    | static viewer assets          |
//!
//! Admin routes need `Authorization: Bearer <admin_token>` and are disabled
//! when no token is configured.

pub mod coverage;
pub mod page;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::gazetteer::{Gazetteer, GazetteerError, PlaceHit, SearchQuery};
use crate::pyramid::{crypt, tile_key, tile_nonce};
use crate::spatial_index::GridId;
use crate::store::{HitKind, PickRecord, Store, StoreError};
use crate::{Level, Theme};
use coverage::CoverageLevel;
use page::{build_page, PageError, PageRequest, ViewSize};

/// Service settings, read from TOML and overridden by `TERRATILE_*`
/// environment variables (the upper-cased field name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    pub store_root: PathBuf,
    pub gazetteer: Option<PathBuf>,
    pub admin_token: Option<String>,
    /// Secret from which SPIN-2 tile keys are derived; must match the loader's.
    pub tile_secret: String,
    pub loader_workdir: Option<PathBuf>,
    pub ui_dir: PathBuf,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:8080".into(),
            store_root: PathBuf::from("data/store"),
            gazetteer: None,
            admin_token: None,
            tile_secret: String::new(),
            loader_workdir: None,
            ui_dir: PathBuf::from("ui"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gazetteer(#[from] GazetteerError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServerConfig {
    pub const ENV_PREFIX: &'static str = "TERRATILE_";

    pub fn from_toml(text: &str) -> Result<ServerConfig, ServerError> {
        toml::from_str(text).map_err(|e| ServerError::Config(e.to_string()))
    }

    /// Reads `path` (defaults when `None`) and applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<ServerConfig, ServerError> {
        let mut config = match path {
            Some(p) => ServerConfig::from_toml(&std::fs::read_to_string(p)?)?,
            None => ServerConfig::default(),
        };
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ServerError> {
        for (key, value) in vars {
            let Some(field) = key.strip_prefix(Self::ENV_PREFIX) else {
                continue;
            };
            let opt = |v: &str| (!v.is_empty()).then(|| v.to_string());
            match field {
                "LISTEN" => self.listen = value,
                "STORE_ROOT" => self.store_root = value.into(),
                "GAZETTEER" => self.gazetteer = opt(&value).map(PathBuf::from),
                "ADMIN_TOKEN" => self.admin_token = opt(&value),
                "TILE_SECRET" => self.tile_secret = value,
                "LOADER_WORKDIR" => self.loader_workdir = opt(&value).map(PathBuf::from),
                "UI_DIR" => self.ui_dir = value.into(),
                // Other TERRATILE_ variables belong to other tools.
                _ => {}
            }
        }
        Ok(())
    }
}

/// Shared handles behind every request.
#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub gazetteer: Arc<Gazetteer>,
    pub config: Arc<ServerConfig>,
}

impl AppState {
    /// Rebuilds gazetteer image flags from the store's visible image metas.
    pub fn new(store: Arc<Store>, gazetteer: Arc<Gazetteer>, config: ServerConfig) -> AppState {
        for m in store.image_metas(None) {
            if m.visible {
                gazetteer.register_image(m.theme, m.grid, m.acquired);
            }
        }
        AppState {
            store,
            gazetteer,
            config: Arc::new(config),
        }
    }

    /// Opens the configured store and gazetteer.
    pub fn open(config: ServerConfig) -> Result<AppState, ServerError> {
        let store = Arc::new(Store::open(&config.store_root)?);
        let gazetteer = match &config.gazetteer {
            Some(p) => Gazetteer::load_file(p)?.0,
            None => Gazetteer::new(),
        };
        Ok(AppState::new(store, Arc::new(gazetteer), config))
    }
}

/// A JSON error body with a status.
#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad(msg: impl Into<String>) -> ApiError {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }

    fn not_found(msg: impl Into<String>) -> ApiError {
        ApiError(StatusCode::NOT_FOUND, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotVisible(_) => ApiError(StatusCode::CONFLICT, e.to_string()),
            StoreError::Invariant(_) => ApiError::bad(e.to_string()),
            _ => ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl From<crate::ParseThemeError> for ApiError {
    fn from(e: crate::ParseThemeError) -> Self {
        ApiError::bad(e.to_string())
    }
}

impl From<PageError> for ApiError {
    fn from(e: PageError) -> Self {
        ApiError::bad(e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let ui = ServeDir::new(&state.config.ui_dir);
    Router::new()
        .route("/tile/{theme}/{level}/{gridid}/{row}/{col}", get(tile))
        .route("/page", get(page_descriptor))
        .route("/gazetteer", get(gazetteer_search))
        .route("/coverage/{level}/{x}/{y}", get(coverage_tile))
        .route("/coverage_nav", get(coverage_nav))
        .route("/picks", get(list_picks).post(create_pick))
        .route("/admin/progress", get(admin_progress))
        .route("/admin/hide", axum::routing::post(admin_hide))
        .nest_service("/ui", ui)
        .layer(middleware::from_fn(access_log))
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let listen = config.listen.clone();
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// One line per request: `ts method path status bytes ms`.
async fn access_log(req: Request, next: Next) -> Response {
    let started = Instant::now();
    let method = req.method().clone();
    let path = req
        .uri()
        .path_and_query()
        .map_or_else(|| req.uri().path().to_string(), |p| p.to_string());
    let res = next.run(req).await;
    let bytes = res
        .headers()
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok()?.parse::<u64>().ok())
        .or_else(|| axum::body::HttpBody::size_hint(res.body()).exact())
        .unwrap_or(0);
    tracing::info!(
        target: "terratile::access",
        "{} {} {} {} {} {}",
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        method,
        path,
        res.status().as_u16(),
        bytes,
        started.elapsed().as_millis()
    );
    res
}

#[derive(Debug, Deserialize)]
struct TileQuery {
    date: Option<String>,
}

async fn tile(
    State(st): State<AppState>,
    UrlPath((theme, level, gridid, row, col)): UrlPath<(String, String, String, String, String)>,
    Query(q): Query<TileQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let theme: Theme = theme.parse()?;
    let level: Level = level.parse()?;
    let grid = GridId::parse(theme, &gridid).map_err(|e| ApiError::bad(e.to_string()))?;
    let per_side = if level == Level::Tile {
        theme.tiles_per_side()
    } else {
        1
    };
    let sub = |s: &str| {
        s.parse::<u8>()
            .ok()
            .filter(|&v| (v as u32) < per_side)
            .ok_or_else(|| ApiError::bad(format!("tile position {s:?} outside 0..{per_side}")))
    };
    let (row, col) = (sub(&row)?, sub(&col)?);
    let date = match q.date.as_deref() {
        Some(d) => Some(
            NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|_| ApiError::bad(format!("bad date {d:?}")))?,
        ),
        None => None,
    };
    let rec = st
        .store
        .get_tile(theme, grid, level, row, col, date)?
        .ok_or_else(|| ApiError::not_found("no such tile"))?;

    let etag = format!(
        "\"{theme}-{level}-{grid}-{row}-{col}-{}-{}\"",
        rec.acquired, rec.insert_epoch
    );
    let cache = if date.is_some() {
        "public, max-age=31536000, immutable"
    } else {
        "no-cache"
    };
    let mut res = if headers
        .get(header::IF_NONE_MATCH)
        .is_some_and(|v| v.as_bytes() == etag.as_bytes())
    {
        StatusCode::NOT_MODIFIED.into_response()
    } else {
        let blob = if rec.encrypted {
            let key = tile_key(st.config.tile_secret.as_bytes(), theme, grid, rec.acquired);
            if rec.key_id.as_deref() != Some(crypt::key_id(&key).as_str()) {
                return Err(ApiError(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "tile key does not match the configured secret".into(),
                ));
            }
            crypt::light_decrypt(&rec.blob, &key, &tile_nonce(grid, level, row, col))
                .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        } else {
            rec.blob
        };
        let mut r = Body::from(blob).into_response();
        r.headers_mut()
            .insert(header::CONTENT_TYPE, HeaderValue::from_static("image/jpeg"));
        r
    };
    let h = res.headers_mut();
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static(cache));
    h.insert(header::ETAG, HeaderValue::from_str(&etag).expect("ascii etag"));
    Ok(res)
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    theme: String,
    lat: f64,
    lon: f64,
    level: Option<String>,
    size: Option<String>,
    zone: Option<u8>,
}

async fn page_descriptor(State(st): State<AppState>, Query(q): Query<PageQuery>) -> ApiResult<Response> {
    let req = PageRequest {
        theme: q.theme.parse()?,
        lat: q.lat,
        lon: q.lon,
        level: q.level.as_deref().unwrap_or("browse").parse()?,
        size: q
            .size
            .as_deref()
            .unwrap_or("small")
            .parse::<ViewSize>()
            .map_err(ApiError::bad)?,
        zone: q.zone,
    };
    let page = build_page(&st.store, Some(&st.gazetteer), &req)?;
    st.store
        .record_hit(HitKind::GridRequest, &format!("{}/{}", page.theme, page.center.grid))?;
    Ok(Json(page).into_response())
}

#[derive(Debug, Deserialize)]
struct GazetteerQuery {
    place: Option<String>,
    state: Option<String>,
    country: Option<String>,
    #[serde(rename = "type")]
    feature_type: Option<String>,
    cursor: Option<String>,
}

/// Links to a page per theme with visible imagery at the place.
#[derive(Debug, Serialize)]
struct PlaceLinks {
    usgs: Option<String>,
    spin2: Option<String>,
}

#[derive(Debug, Serialize)]
struct GazetteerRow {
    #[serde(flatten)]
    place: PlaceHit,
    links: PlaceLinks,
}

#[derive(Debug, Serialize)]
struct GazetteerResponse {
    results: Vec<GazetteerRow>,
    next_cursor: Option<String>,
    index: Option<String>,
    rows_examined: usize,
}

fn place_link(p: &PlaceHit, theme: Theme) -> String {
    PageRequest {
        theme,
        lat: p.lat,
        lon: p.lon,
        level: Level::Tile,
        size: ViewSize::Small,
        zone: None,
    }
    .url()
}

async fn gazetteer_search(State(st): State<AppState>, Query(q): Query<GazetteerQuery>) -> ApiResult<Response> {
    let query = SearchQuery {
        name: q.place,
        state: q.state,
        country: q.country,
        feature_type: q.feature_type,
        cursor: q.cursor,
    };
    let page = st.gazetteer.search(&query).map_err(|e| match e {
        GazetteerError::NoCriteria | GazetteerError::BadCursor => ApiError::bad(e.to_string()),
        other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    })?;
    let norm = |v: &Option<String>| v.as_deref().unwrap_or("").trim().to_lowercase();
    st.store.record_hit(
        HitKind::GazetteerRequest,
        &format!(
            "place={}&state={}&country={}&type={}",
            norm(&query.name),
            norm(&query.state),
            norm(&query.country),
            norm(&query.feature_type)
        ),
    )?;
    let results = page
        .results
        .into_iter()
        .map(|place| GazetteerRow {
            links: PlaceLinks {
                usgs: place
                    .ugrid
                    .filter(|&g| st.store.latest_visible_meta(Theme::Usgs, g).is_some())
                    .map(|_| place_link(&place, Theme::Usgs)),
                spin2: Some(place.zgrid)
                    .filter(|&g| st.store.latest_visible_meta(Theme::Spin2, g).is_some())
                    .map(|_| place_link(&place, Theme::Spin2)),
            },
            place,
        })
        .collect();
    Ok(Json(GazetteerResponse {
        results,
        next_cursor: page.next_cursor,
        index: page.index.map(|i| i.to_string()),
        rows_examined: page.rows_examined,
    })
    .into_response())
}

#[derive(Debug, Deserialize)]
struct CoverageQuery {
    theme: Option<String>,
}

fn coverage_cells(st: &AppState, theme: Option<&str>) -> ApiResult<Vec<GridId>> {
    let themes: Vec<Theme> = match theme {
        Some(t) => vec![t.parse()?],
        None => Theme::ALL.to_vec(),
    };
    Ok(themes
        .into_iter()
        .flat_map(|t| st.store.visible_cells(t))
        .collect())
}

async fn coverage_tile(
    State(st): State<AppState>,
    UrlPath((level, x, y)): UrlPath<(String, String, String)>,
    Query(q): Query<CoverageQuery>,
) -> ApiResult<Response> {
    let level: CoverageLevel = level.parse().map_err(ApiError::not_found)?;
    let (x, y) = match (x.parse::<u32>(), y.parse::<u32>()) {
        (Ok(x), Ok(y)) => (x, y),
        _ => return Err(ApiError::bad("tile coordinates must be non-negative integers")),
    };
    let cells = coverage_cells(&st, q.theme.as_deref())?;
    let png = coverage::render(level, x, y, &cells)
        .ok_or_else(|| ApiError::not_found(format!("no {level} tile {x}/{y}")))?;
    let mut res = Body::from(png).into_response();
    res.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    res.headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"));
    Ok(res)
}

#[derive(Debug, Deserialize)]
struct CoverageNavQuery {
    level: String,
    x: u32,
    y: u32,
    px: u32,
    py: u32,
}

async fn coverage_nav(Query(q): Query<CoverageNavQuery>) -> ApiResult<Response> {
    let level: CoverageLevel = q.level.parse().map_err(ApiError::bad)?;
    let (lat, lon) = coverage::pixel_to_geo(level, q.x, q.y, q.px, q.py)
        .ok_or_else(|| ApiError::bad("pixel outside the coverage map"))?;
    Ok(Json(serde_json::json!({ "lat": lat, "lon": lon })).into_response())
}

fn require_admin(st: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let Some(token) = st.config.admin_token.as_deref() else {
        return Err(ApiError(StatusCode::FORBIDDEN, "admin routes are disabled".into()));
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given != Some(token) {
        return Err(ApiError(StatusCode::UNAUTHORIZED, "missing or wrong admin token".into()));
    }
    Ok(())
}

async fn list_picks(State(st): State<AppState>) -> Json<Vec<PickRecord>> {
    Json(st.store.picks())
}

async fn create_pick(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(pick): Json<PickRecord>,
) -> ApiResult<Response> {
    require_admin(&st, &headers)?;
    if pick.grid.theme() != pick.theme {
        return Err(ApiError::bad(format!("{} is not a {} cell", pick.grid, pick.theme)));
    }
    let created = st.store.add_pick(pick.clone())?;
    let status = if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(pick)).into_response())
}

async fn admin_progress(State(st): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    require_admin(&st, &headers)?;
    let dir = st
        .config
        .loader_workdir
        .as_deref()
        .ok_or_else(|| ApiError::not_found("no loader work directory configured"))?;
    let progress = crate::loader::progress(dir).map_err(|e| ApiError::not_found(e.to_string()))?;
    Ok(Json(progress).into_response())
}

#[derive(Debug, Deserialize)]
struct HideRequest {
    theme: Theme,
    #[serde(rename = "gridIds", alias = "grid_ids")]
    grid_ids: Vec<String>,
    visible: bool,
}

async fn admin_hide(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<HideRequest>,
) -> ApiResult<Response> {
    require_admin(&st, &headers)?;
    let grids = req
        .grid_ids
        .iter()
        .map(|g| GridId::parse(req.theme, g).map_err(|e| ApiError::bad(e.to_string())))
        .collect::<ApiResult<Vec<_>>>()?;
    let count = st.store.hide_region(req.theme, &grids, req.visible)?;
    Ok(Json(serde_json::json!({ "count": count })).into_response())
}
