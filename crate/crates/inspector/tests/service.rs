use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use ndarray::Array2;
use pxst::io::{load_scan, CxiPaths};
use pxst::pipeline::{execute, find_command, Context, Params};
use pxst_inspector::wire::{decode_array, decode_mask, encode_mask};
use pxst_inspector::{bind, router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn simulate(path: &Path, extra: &[(&str, &str)]) -> Context {
    let ctx = Context::new(path);
    let mut o: BTreeMap<String, String> = [
        ("shape", "40, 40"),
        ("scan_rows", "3"),
        ("scan_cols", "4"),
        ("step", "5"),
        ("texture_sigma", "3"),
        ("texture_contrast", "0.5"),
        ("whitefield", "gaussian"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    o.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    let params = Params::resolve(find_command("simulate").unwrap(), None, &o).unwrap();
    execute(&ctx, &params, &mut |_| {}).unwrap();
    ctx
}

fn app(ctx: &Context) -> Router {
    router(AppState::new(ctx.clone(), None).unwrap(), None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Body) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(body).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Method::GET, uri, Body::empty()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn send_json(app: &Router, method: Method, uri: &str, v: Value) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(v.to_string()))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let b = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

/// Polls a job until it finishes; returns every status seen and the final state.
async fn wait(app: &Router, id: u64) -> (Vec<String>, Value) {
    let mut seen: Vec<String> = Vec::new();
    for _ in 0..6000 {
        let (s, job) = get_json(app, &format!("/api/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        let status = job["status"].as_str().unwrap().to_string();
        if seen.last() != Some(&status) {
            seen.push(status.clone());
        }
        if status == "done" || status == "failed" {
            return (seen, job);
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

async fn run_job(app: &Router, command: &str, params: Value) -> Value {
    let (s, job) = send_json(app, Method::POST, "/api/jobs", json!({ "command": command, "params": params })).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{job}");
    let (_, done) = wait(app, job["id"].as_u64().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    done
}

#[tokio::test]
async fn meta_echoes_the_scan() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = simulate(&dir.path().join("s.cxi"), &[]);
    let app = app(&ctx);
    let (s, m) = get_json(&app, "/api/meta").await;
    assert_eq!(s, StatusCode::OK);
    let scan = load_scan(&ctx.path, &CxiPaths::default(), None).unwrap();
    assert_eq!(m["n_frames"], 12);
    assert_eq!(m["frame_shape"], json!([40, 40]));
    assert_eq!(m["wavelength"].as_f64().unwrap(), scan.wavelength);
    assert_eq!(m["distance"].as_f64().unwrap(), scan.distance);
    assert_eq!(m["x_pixel_size"].as_f64().unwrap(), scan.x_pixel_size);
    assert_eq!(m["y_pixel_size"].as_f64().unwrap(), scan.y_pixel_size);

    let (_, p) = get_json(&app, "/api/positions").await;
    assert_eq!(p["translations"].as_array().unwrap().len(), 12);
    assert_eq!(p["translations"][3].as_array().unwrap().len(), 3);
    assert_eq!(p["translations"][3][0].as_f64().unwrap(), scan.translations[[3, 0]]);
}

#[tokio::test]
async fn frames_and_whitefield_normalisation() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = simulate(&dir.path().join("s.cxi"), &[]);
    let app = app(&ctx);
    let scan = load_scan(&ctx.path, &CxiPaths::default(), None).unwrap();

    let (s, b) = call(&app, Method::GET, "/api/frame/5", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let f = decode_array(&b).unwrap();
    assert_eq!(f.shape, [40, 40]);
    let raw: Vec<f32> = scan.frame(5).iter().map(|&v| v as f32).collect();
    assert_eq!(f.values, raw);
    assert_eq!(f.min, raw.iter().copied().fold(f32::INFINITY, f32::min));
    assert_eq!(f.max, raw.iter().copied().fold(f32::NEG_INFINITY, f32::max));

    // Normalising needs a stored white-field.
    let (s, _) = call(&app, Method::GET, "/api/frame/5?normalize=whitefield", Body::empty()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, "/api/frame/12", Body::empty()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::GET, "/api/frame/5?normalize=sqrt", Body::empty()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    run_job(&app, "make_whitefield", json!({})).await;
    let (s, b) = call(&app, Method::GET, "/api/whitefield", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let w = decode_array(&b).unwrap();
    let (_, b) = call(&app, Method::GET, "/api/frame/5?normalize=whitefield", Body::empty()).await;
    let n = decode_array(&b).unwrap();
    // Oracle: the stored white-field read back in double precision.
    let wf = pxst::io::read_f64_dataset(&ctx.path, "/speckle_tracking/whitefield").unwrap().unwrap();
    for (k, (&v, (&i, &wv))) in n.values.iter().zip(scan.frame(5).iter().zip(wf.iter())).enumerate() {
        let expected = if wv > 0.0 { (i / wv) as f32 } else { 0.0 };
        assert_eq!(v, expected, "pixel {k}");
        assert_eq!(w.values[k], wv as f32);
    }
    assert!(n.min > 0.0 && n.max < 10.0);
}

#[tokio::test]
async fn mask_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = simulate(&dir.path().join("s.cxi"), &[]);
    let app = app(&ctx);
    let (_, b) = call(&app, Method::GET, "/api/mask", Body::empty()).await;
    assert!(decode_mask(&b).unwrap().iter().all(|&g| g));

    let m = Array2::from_shape_fn((40, 40), |(i, j)| (i * 7 + j * 13) % 5 != 0 && (i, j) != (39, 39));
    let (s, _) = call(&app, Method::PUT, "/api/mask", Body::from(encode_mask(&m))).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (_, b) = call(&app, Method::GET, "/api/mask", Body::empty()).await;
    assert_eq!(b, encode_mask(&m));
    assert_eq!(decode_mask(&b).unwrap(), m);

    let wrong = Array2::from_elem((40, 39), true);
    let (s, _) = call(&app, Method::PUT, "/api/mask", Body::from(encode_mask(&wrong))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::PUT, "/api/mask", Body::from(vec![1u8, 2, 3])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn frame_flags_feed_the_next_job() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = simulate(&dir.path().join("s.cxi"), &[]);
    let app = app(&ctx);
    run_job(&app, "generate_pixel_map", json!({ "z1": 1e-3 })).await;
    run_job(&app, "calc_error", json!({})).await;
    let (_, e) = call(&app, Method::GET, "/api/result/error_frame", Body::empty()).await;
    assert_eq!(decode_array(&e).unwrap().shape, [12]);

    let (_, g) = get_json(&app, "/api/good_frames").await;
    let mut flags: Vec<bool> = serde_json::from_value(g["good_frames"].clone()).unwrap();
    assert!(flags.iter().all(|&f| f));
    flags[7] = false;
    let (s, _) = send_json(&app, Method::PUT, "/api/good_frames", json!({ "good_frames": flags })).await;
    assert_eq!(s, StatusCode::OK);
    let (_, g) = get_json(&app, "/api/good_frames").await;
    assert_eq!(g["good_frames"][7], false);
    assert_eq!(g["good_frames"][6], true);
    let (_, m) = get_json(&app, "/api/meta").await;
    assert_eq!(m["n_good_frames"], 11);

    run_job(&app, "calc_error", json!({})).await;
    let (_, e) = call(&app, Method::GET, "/api/result/error_frame", Body::empty()).await;
    assert_eq!(decode_array(&e).unwrap().shape, [11]);

    let (s, _) = send_json(&app, Method::PUT, "/api/good_frames", json!({ "good_frames": [true, false] })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn jobs_report_progress_and_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = simulate(&dir.path().join("s.cxi"), &[("shape", "64, 64"), ("zernike_noll", "4"), ("zernike_coefficients", "1")]);
    let app = app(&ctx);
    run_job(&app, "make_whitefield", json!({})).await;
    run_job(&app, "generate_pixel_map", json!({ "z1": 1e-3 })).await;

    let (s, job) = send_json(
        &app,
        Method::POST,
        "/api/jobs",
        json!({ "command": "run", "params": { "max_iters": 6, "tol": 0, "sigma": [5, 3], "update_translations": false } }),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(job["status"], "queued");
    let id = job["id"].as_u64().unwrap();

    // While the first job is active, other jobs and edits are refused.
    let (s, _) = send_json(&app, Method::POST, "/api/jobs", json!({ "command": "calc_error" })).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = send_json(&app, Method::PUT, "/api/good_frames", json!({ "good_frames": vec![true; 12] })).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (seen, done) = wait(&app, id).await;
    assert_eq!(done["status"], "done", "{done}");
    let order = ["queued", "running", "done"];
    let pos: Vec<usize> = seen.iter().map(|s| order.iter().position(|o| o == s).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{seen:?}");
    assert_eq!(done["progress"], 1.0);
    let history: Vec<f64> = serde_json::from_value(done["history"].clone()).unwrap();
    assert_eq!(history.len(), 7);
    assert!(history.last().unwrap() < &history[0], "{history:?}");
    assert!(done["summary"]["outputs"].as_array().unwrap().iter().any(|o| o == "/speckle_tracking/pixel_map"));

    let (_, b) = call(&app, Method::GET, "/api/result/pixel_map", Body::empty()).await;
    assert_eq!(decode_array(&b).unwrap().shape, [2, 64, 64]);
    let (_, list) = get_json(&app, "/api/jobs").await;
    assert_eq!(list.as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn bad_jobs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = simulate(&dir.path().join("s.cxi"), &[]);
    let app = app(&ctx);
    for body in [
        json!({ "command": "nonsense" }),
        json!({ "command": "simulate" }),
        json!({ "command": "serve" }),
        json!({ "command": "update_pixel_map", "params": { "sigma": "abc" } }),
        json!({ "command": "update_pixel_map", "params": { "bogus": 1 } }),
    ] {
        let (s, e) = send_json(&app, Method::POST, "/api/jobs", body.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert!(e["error"].is_string());
    }
    // A job that fails in the pipeline ends as failed with its diagnostic.
    let (_, job) = send_json(&app, Method::POST, "/api/jobs", json!({ "command": "make_reference" })).await;
    let (_, done) = wait(&app, job["id"].as_u64().unwrap()).await;
    assert_eq!(done["status"], "failed");
    assert!(done["error"].as_str().unwrap().contains("defocus"));
    assert_eq!(get_json(&app, "/api/jobs/999").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn results_and_registry() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = simulate(&dir.path().join("s.cxi"), &[]);
    let app = app(&ctx);
    let (s, b) = call(&app, Method::GET, "/api/result/ground_truth/phase", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(decode_array(&b).unwrap().shape, [40, 40]);
    assert_eq!(call(&app, Method::GET, "/api/result/nothing", Body::empty()).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/api/result/a/../b", Body::empty()).await.0, StatusCode::BAD_REQUEST);

    let (_, c) = get_json(&app, "/api/commands").await;
    let names: Vec<&str> = c.as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"run") && !names.contains(&"serve"));
    let upm = c.as_array().unwrap().iter().find(|c| c["name"] == "update_pixel_map").unwrap();
    let params: Vec<&str> = upm["params"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    for p in ["sigma", "integrate", "quadratic_refinement", "window"] {
        assert!(params.contains(&p), "{p}");
    }
}

#[tokio::test]
async fn static_files_and_startup_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = simulate(&dir.path().join("s.cxi"), &[]);
    let assets = dir.path().join("ui");
    std::fs::create_dir(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<html>inspector</html>").unwrap();
    let app = router(AppState::new(ctx.clone(), None).unwrap(), Some(assets));
    let (s, b) = call(&app, Method::GET, "/", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, b"<html>inspector</html>");

    assert!(matches!(AppState::new(Context::new(dir.path().join("none.cxi")), None), Err(pxst::Error::NotFound(_))));
    let taken = bind(0).await.unwrap();
    let port = taken.local_addr().unwrap().port();
    assert!(bind(port).await.is_err());
}
