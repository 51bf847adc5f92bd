//! Inspector HTTP service.
//!
//! Serves one scan file to the browser frontend: metadata, single frames,
//! the white-field, the pixel mask, good-frame flags, positions, stored
//! results, and processing jobs. Array payloads use the binary layout in
//! [`wire`]. Every request opens and closes the file itself; while a job is
//! active, edits of the mask and frame flags are refused with 409.
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | GET | `/api/meta` | JSON scan description |
//! | GET | `/api/commands` | JSON command and parameter registry |
//! | GET | `/api/frame/{n}[?normalize=whitefield]` | array |
//! | GET | `/api/whitefield` | array |
//! | GET, PUT | `/api/mask` | packed mask |
//! | GET, PUT | `/api/good_frames` | `{"good_frames": [bool]}` |
//! | GET | `/api/positions` | JSON translations |
//! | POST | `/api/jobs` | `{"command", "params"}` in, job out |
//! | GET | `/api/jobs`, `/api/jobs/{id}` | job state |
//! | GET | `/api/result/{name}` | array stored under the output group |

pub mod jobs;
pub mod wire;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ndarray::{Array2, Ix2};
use pxst::io::{self, read_header, RunConfig};
use pxst::pipeline::{execute, find_command, Context, Params, Progress, COMMANDS};
use pxst::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::jobs::{Job, Jobs};

/// Commands that cannot run against the file being served.
const NOT_JOBS: [&str; 2] = ["simulate", "serve"];

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) | Error::MissingDataset(_) => StatusCode::NOT_FOUND,
            Error::Usage(_) | Error::Config { .. } | Error::InvalidInput(_) | Error::ShapeMismatch { .. } => {
                StatusCode::BAD_REQUEST
            }
            Error::ReadOnlyFile(_) => StatusCode::FORBIDDEN,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    ctx: Context,
    config: Option<RunConfig>,
    jobs: Mutex<Jobs>,
}

/// Shared service state for one scan file.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Fails when the file cannot be read as a scan.
    pub fn new(ctx: Context, config: Option<RunConfig>) -> pxst::Result<Self> {
        read_header(&ctx.path, &ctx.paths)?;
        Ok(Self(Arc::new(Inner { ctx, config, jobs: Mutex::new(Jobs::default()) })))
    }

    fn jobs(&self) -> MutexGuard<'_, Jobs> {
        self.0.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn ctx(&self) -> &Context {
        &self.0.ctx
    }
}

/// Runs file access off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

fn binary(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
}

async fn meta(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let ctx = s.ctx().clone();
    let h = blocking(move || Ok(read_header(&ctx.path, &ctx.paths)?)).await?;
    let c = s.ctx();
    Ok(Json(json!({
        "path": c.path.display().to_string(),
        "n_frames": h.n_frames,
        "frame_shape": [h.frame_shape.0, h.frame_shape.1],
        "wavelength": h.wavelength,
        "distance": h.distance,
        "x_pixel_size": h.x_pixel_size,
        "y_pixel_size": h.y_pixel_size,
        "n_good_frames": h.good_frames.iter().filter(|&&g| g).count(),
        "output_group": c.paths.output_group,
    })))
}

async fn commands() -> Json<Value> {
    let list: Vec<Value> = COMMANDS
        .iter()
        .filter(|c| !NOT_JOBS.contains(&c.name))
        .map(|c| {
            let params: Vec<Value> = c
                .params
                .iter()
                .map(|p| {
                    json!({
                        "name": p.name,
                        "kind": p.kind.to_string(),
                        "default": (!p.default.is_empty()).then_some(p.default),
                        "help": p.help,
                    })
                })
                .collect();
            json!({ "name": c.name, "help": c.help, "params": params })
        })
        .collect();
    Json(Value::Array(list))
}

fn stored_whitefield(ctx: &Context) -> ApiResult<Array2<f64>> {
    let w = io::read_f64_dataset(&ctx.path, &ctx.paths.whitefield)?
        .ok_or_else(|| not_found(format!("no white-field at {}; run make_whitefield", ctx.paths.whitefield)))?;
    w.into_dimensionality::<Ix2>().map_err(|_| bad_request(format!("{} is not 2-D", ctx.paths.whitefield)))
}

#[derive(Deserialize)]
struct FrameQuery {
    normalize: Option<String>,
}

async fn frame(State(s): State<AppState>, Path(n): Path<usize>, Query(q): Query<FrameQuery>) -> ApiResult<Response> {
    let by_whitefield = match q.normalize.as_deref() {
        None | Some("") | Some("none") => false,
        Some("whitefield") => true,
        Some(other) => return Err(bad_request(format!("unknown normalize={other}; use whitefield"))),
    };
    let ctx = s.ctx().clone();
    let bytes = blocking(move || {
        let f = io::read_frame(&ctx.path, &ctx.paths, n)?;
        let f = if by_whitefield {
            let w = stored_whitefield(&ctx)?;
            if w.dim() != f.dim() {
                return Err(Error::shape("whitefield", [f.nrows(), f.ncols()], w.shape()).into());
            }
            ndarray::Zip::from(&f).and(&w).map_collect(|&a, &b| if b > 0.0 { a / b } else { 0.0 })
        } else {
            f
        };
        Ok(wire::encode_array(&f.into_dyn()))
    })
    .await?;
    Ok(binary(bytes))
}

async fn whitefield(State(s): State<AppState>) -> ApiResult<Response> {
    let ctx = s.ctx().clone();
    let w = blocking(move || stored_whitefield(&ctx)).await?;
    Ok(binary(wire::encode_array(&w.into_dyn())))
}

fn current_mask(ctx: &Context) -> ApiResult<Array2<bool>> {
    let shape = read_header(&ctx.path, &ctx.paths)?.frame_shape;
    match io::read_f64_dataset(&ctx.path, &ctx.paths.mask)? {
        Some(m) if m.shape() == [shape.0, shape.1] => {
            Ok(m.into_dimensionality::<Ix2>().expect("checked").mapv(|v| v != 0.0))
        }
        Some(m) => Err(Error::shape(&ctx.paths.mask, [shape.0, shape.1], m.shape()).into()),
        None => Ok(Array2::from_elem(shape, true)),
    }
}

async fn get_mask(State(s): State<AppState>) -> ApiResult<Response> {
    let ctx = s.ctx().clone();
    let m = blocking(move || current_mask(&ctx)).await?;
    Ok(binary(wire::encode_mask(&m)))
}

/// Runs an edit of the file unless a job is active.
async fn edit<T: Send + 'static>(s: &AppState, f: impl FnOnce(&Context) -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    let s = s.clone();
    blocking(move || {
        let jobs = s.jobs();
        if let Some(id) = jobs.active() {
            return Err(ApiError(StatusCode::CONFLICT, format!("job {id} is active; retry when it has finished")));
        }
        // The job table stays locked so no job starts mid-edit.
        let out = f(s.ctx());
        drop(jobs);
        out
    })
    .await
}

fn write_at(ctx: &Context, dataset: &str, v: impl Into<io::Value>) -> ApiResult<()> {
    let (group, name) = io::split_dataset_path(dataset);
    io::write_result(&ctx.path, &group, &name, v)?;
    Ok(())
}

async fn put_mask(State(s): State<AppState>, body: Bytes) -> ApiResult<StatusCode> {
    let mask = wire::decode_mask(&body).map_err(bad_request)?;
    edit(&s, move |ctx| {
        let shape = read_header(&ctx.path, &ctx.paths)?.frame_shape;
        if mask.dim() != shape {
            return Err(Error::shape("mask", [shape.0, shape.1], mask.shape()).into());
        }
        write_at(ctx, &ctx.paths.mask, mask)
    })
    .await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GoodFrames {
    pub good_frames: Vec<bool>,
}

async fn get_good_frames(State(s): State<AppState>) -> ApiResult<Json<GoodFrames>> {
    let ctx = s.ctx().clone();
    let h = blocking(move || Ok(read_header(&ctx.path, &ctx.paths)?)).await?;
    Ok(Json(GoodFrames { good_frames: h.good_frames }))
}

async fn put_good_frames(State(s): State<AppState>, Json(g): Json<GoodFrames>) -> ApiResult<Json<GoodFrames>> {
    edit(&s, move |ctx| {
        let n = read_header(&ctx.path, &ctx.paths)?.n_frames;
        if g.good_frames.len() != n {
            return Err(bad_request(format!("good_frames has {} entries, the scan has {n} frames", g.good_frames.len())));
        }
        write_at(ctx, &ctx.paths.good_frames, g.good_frames.clone())?;
        Ok(Json(g))
    })
    .await
}

async fn positions(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let ctx = s.ctx().clone();
    blocking(move || {
        let h = read_header(&ctx.path, &ctx.paths)?;
        let rows = |a: &ndarray::Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        let pixel = io::read_f64_dataset(&ctx.path, &format!("{}/pixel_translations", ctx.paths.output_group))?
            .and_then(|a| a.into_dimensionality::<Ix2>().ok())
            .map(|a| rows(&a));
        Ok(Json(json!({
            "translations": rows(&h.translations),
            "pixel_translations": pixel,
            "good_frames": h.good_frames,
        })))
    })
    .await
}

async fn result(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult<Response> {
    if name.split('/').any(|p| p.is_empty() || p == "." || p == "..") {
        return Err(bad_request(format!("bad result name {name:?}")));
    }
    let ctx = s.ctx().clone();
    let bytes = blocking(move || {
        let path = format!("{}/{name}", ctx.paths.output_group);
        let v = io::read_dataset(&ctx.path, &path)?.ok_or_else(|| not_found(format!("no dataset {path}")))?;
        Ok(wire::encode_array(&v.to_f64()))
    })
    .await?;
    Ok(binary(bytes))
}

#[derive(Debug, Deserialize)]
pub struct JobRequest {
    pub command: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

/// JSON parameter values in configuration syntax.
fn param_text(key: &str, v: &Value) -> ApiResult<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => (if *b { "True" } else { "False" }).to_string(),
        Value::Array(items) => items.iter().map(|i| param_text(key, i)).collect::<ApiResult<Vec<_>>>()?.join(", "),
        _ => return Err(bad_request(format!("parameter {key} must be a string, number, bool or list"))),
    })
}

async fn submit(State(s): State<AppState>, Json(req): Json<JobRequest>) -> ApiResult<(StatusCode, Json<Job>)> {
    let spec = find_command(&req.command)
        .filter(|c| !NOT_JOBS.contains(&c.name))
        .ok_or_else(|| bad_request(format!("unknown command {:?}", req.command)))?;
    let overrides: BTreeMap<String, String> =
        req.params.iter().map(|(k, v)| Ok((k.clone(), param_text(k, v)?))).collect::<ApiResult<_>>()?;
    let params = Params::resolve(spec, s.0.config.as_ref(), &overrides)?;
    let id = s
        .jobs()
        .submit(spec.name, overrides)
        .map_err(|active| ApiError(StatusCode::CONFLICT, format!("job {active} is already active on this file")))?;
    log::info!("job {id} ({}) queued", spec.name);
    let job = s.jobs().get(id).cloned().expect("just queued");

    let state = s.clone();
    tokio::task::spawn_blocking(move || {
        state.jobs().start(id);
        let mut on_progress = |p: Progress| match p {
            Progress::Fraction(f) => state.jobs().progress(id, f, None),
            Progress::Iteration(it) => {
                let f = if it.max_iters == 0 { 1.0 } else { it.iteration as f64 / it.max_iters as f64 };
                state.jobs().progress(id, f, Some(it.total_error))
            }
        };
        let outcome = execute(state.ctx(), &params, &mut on_progress);
        state.jobs().finish(id, outcome.as_ref().map_err(|e| e.to_string()));
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn job(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Job>> {
    s.jobs().get(id).cloned().map(Json).ok_or_else(|| not_found(format!("no job {id}")))
}

async fn job_list(State(s): State<AppState>) -> Json<Vec<Job>> {
    Json(s.jobs().all().cloned().collect())
}

async fn no_static() -> ApiError {
    not_found("no frontend assets configured; start with static_dir set")
}

/// Routes for `state`, serving frontend assets from `static_dir` at `/`.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/meta", get(meta))
        .route("/api/commands", get(commands))
        .route("/api/frame/{n}", get(frame))
        .route("/api/whitefield", get(whitefield))
        .route("/api/mask", get(get_mask).put(put_mask))
        .route("/api/good_frames", get(get_good_frames).put(put_good_frames))
        .route("/api/positions", get(positions))
        .route("/api/jobs", get(job_list).post(submit))
        .route("/api/jobs/{id}", get(job))
        .route("/api/result/{*name}", get(result))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(no_static),
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub ctx: Context,
    pub config: Option<RunConfig>,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
}

/// Binds the port on the loopback interface.
pub async fn bind(port: u16) -> pxst::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(|e| Error::InvalidInput(format!("cannot listen on port {port}: {e}")))
}

/// Serves until the process is stopped.
pub fn serve(opts: ServeOptions) -> pxst::Result<()> {
    let state = AppState::new(opts.ctx, opts.config)?;
    let app = router(state, opts.static_dir);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = bind(opts.port).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        eprintln!("serving on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}
