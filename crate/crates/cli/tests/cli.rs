use std::path::Path;
use std::process::{Command, Output};

fn st(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_st")).args(args).env_remove("ST_CONFIG").output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn simulate(path: &Path) {
    let p = path.to_str().unwrap();
    let out = st(&[
        "simulate",
        p,
        "--shape",
        "48, 48",
        "--scan_rows",
        "3",
        "--scan_cols",
        "3",
        "--step",
        "6",
        "--texture_sigma",
        "3",
        "--texture_contrast",
        "0.5",
        "--zernike_noll",
        "4",
        "--zernike_coefficients",
        "0.5",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}

#[test]
fn run_with_a_config_prints_the_error_history() {
    let dir = tempfile::tempdir().unwrap();
    let scan = dir.path().join("scan.cxi");
    simulate(&scan);
    let ini = dir.path().join("recon.ini");
    std::fs::write(&ini, "z1 = 1e-3\n\n[run]\nmax_iters = 3\ntol = 0\nsigma = 5, 3\nupdate_translations = False\n").unwrap();
    let out = st(&["run", scan.to_str().unwrap(), "--config", ini.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].starts_with("initial: total error"), "{stdout}");
    for (k, line) in lines.iter().enumerate().take(4).skip(1) {
        assert!(line.starts_with(&format!("iteration {k}/3: total error")), "{stdout}");
    }
    // One summary line naming the command, the total error and the outputs.
    assert_eq!(lines.len(), 5, "{stdout}");
    assert!(lines[4].starts_with("run: total error") && lines[4].contains("/speckle_tracking/pixel_map"), "{stdout}");
}

#[test]
fn config_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let scan = dir.path().join("scan.cxi");
    simulate(&scan);
    let ini = dir.path().join("env.ini");
    std::fs::write(&ini, "[generate_pixel_map]\nz1 = 2e-3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_st"))
        .args(["generate_pixel_map", scan.to_str().unwrap()])
        .env("ST_CONFIG", &ini)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let d = pxst::io::read_f64_dataset(&scan, "/speckle_tracking/defocus").unwrap().unwrap();
    assert_eq!(d.iter().copied().collect::<Vec<_>>(), [2e-3, 2e-3]);

    // A flag wins over the configuration.
    let out = st(&["generate_pixel_map", scan.to_str().unwrap(), "--config", ini.to_str().unwrap(), "--z1", "3e-3"]);
    assert_eq!(out.status.code(), Some(0));
    let d = pxst::io::read_f64_dataset(&scan, "/speckle_tracking/defocus").unwrap().unwrap();
    assert_eq!(d[0], 3e-3);
}

#[test]
fn help_lists_parameters() {
    let out = st(&["update_pixel_map", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for p in ["--sigma", "--integrate", "--quadratic_refinement", "--window"] {
        assert!(help.contains(p), "{p} missing from\n{help}");
    }
    assert!(help.contains("Grid-search"));
}

#[test]
fn missing_file_is_a_data_error() {
    let out = st(&["run", "missing.cxi"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("file not found"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let scan = dir.path().join("scan.cxi");
    simulate(&scan);
    let p = scan.to_str().unwrap();
    let bad_ini = dir.path().join("bad.ini");
    std::fs::write(&bad_ini, "[update_pixel_map]\nsigma = abc\n").unwrap();
    for args in [
        vec!["nonsense", p],
        vec!["run"],
        vec!["run", p, "--bogus", "1"],
        vec!["update_pixel_map", p, "--z1", "1e-3", "--sigma", "abc"],
        vec!["make_reference", p],
        vec!["make_whitefield", p, "--roi", "1,2,3"],
        vec!["make_whitefield", p, "--roi", "0,100,0,10"],
        vec!["make_whitefield", p, "--threads", "0"],
        vec!["update_pixel_map", p, "--config", bad_ini.to_str().unwrap()],
    ] {
        let out = st(&args);
        let err = text(&out.stderr);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let scan = dir.path().join("scan.cxi");
    simulate(&scan);
    // Planes this far from focus need rays outside the propagation grid.
    let out = st(&["focus_profile", scan.to_str().unwrap(), "--z1", "1e-3", "--z_min", "-10", "--z_max", "10"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("sampling violation"));
}

#[test]
fn roi_output_group_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let scan = dir.path().join("scan.cxi");
    simulate(&scan);
    let out = st(&["generate_pixel_map", scan.to_str().unwrap(), "--z1", "1e-3", "--output-group", "alt"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let out = st(&["calc_error", scan.to_str().unwrap(), "--output-group", "alt", "--roi", "4,44,4,44", "--threads", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let line = text(&out.stdout);
    assert!(line.starts_with("calc_error: total error") && line.contains("/alt/error_total"), "{line}");
    let pixel = pxst::io::read_f64_dataset(&scan, "/alt/error_pixel").unwrap().unwrap();
    // Pixels outside the region of interest carry no error.
    assert_eq!(pixel[[0, 0]], 0.0);
    assert!(pixel[[20, 20]] > 0.0);
    assert!(pxst::io::read_dataset(&scan, "/speckle_tracking/error_pixel").unwrap().is_none());
}
