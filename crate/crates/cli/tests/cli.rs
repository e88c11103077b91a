use std::path::Path;
use std::process::{Command, Output};

fn enasep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enasep"))
        .args(args)
        .current_dir(cwd)
        .env("ENASEP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_maps_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = enasep(
        &[
            "simulate",
            "--scenario",
            "s2",
            "--grid-deg",
            "6",
            "--noise",
            "noisy",
            "--seed",
            "4",
            "--out-prefix",
            "sim/a",
        ],
        dir.path(),
    );
    ok(&out);
    for f in ["a_gdf.csv", "a_ribbon.csv", "a_observed.csv", "a_scenario.json"] {
        assert!(dir.path().join("sim").join(f).exists(), "{f} missing");
    }
    let map = enasep::load_map(dir.path().join("sim/a_observed.csv")).unwrap();
    assert_eq!(map.grid.n_lon, 60);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sim/a_scenario.json")).unwrap()).unwrap();
    assert_eq!(sidecar["noise"], "noisy");
    assert_eq!(sidecar["scenario"]["seed"], 4);
    assert_eq!(sidecar["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn reframe_and_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(&enasep(
        &["simulate", "--grid-deg", "6", "--out-prefix", "s"],
        dir.path(),
    ));
    ok(&enasep(
        &[
            "reframe",
            "--input",
            "s_observed.csv",
            "--center",
            "221.5,39",
            "--micro",
            "3",
            "--out",
            "framed.csv",
        ],
        dir.path(),
    ));
    let framed = enasep::load_map(dir.path().join("framed.csv")).unwrap();
    assert_eq!(framed.frame, enasep::make_rotation(221.5, 39.0, 0.0));
    ok(&enasep(
        &[
            "render",
            "--input",
            "framed.csv",
            "--lo",
            "0",
            "--hi",
            "0.3",
            "--out",
            "img/f.pgm",
            "--png",
            "f.png",
        ],
        dir.path(),
    ));
    let pgm = std::fs::read(dir.path().join("img/f.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
    assert!(pgm.len() > 60 * 30);
    assert!(dir.path().join("f.png").exists());
}

#[test]
fn stage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = enasep(&["separate", "--input", "missing.csv", "--out-prefix", "x"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[read]"));

    std::fs::write(dir.path().join("bad.json"), r#"{"seeds": 1}"#).unwrap();
    let out = enasep(&["simulate", "--config", "bad.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));

    let out = enasep(
        &[
            "render",
            "--input",
            "missing.csv",
            "--lo",
            "1",
            "--hi",
            "0",
            "--out",
            "x.pgm",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"grid_deg": 6.0, "seed": 1, "scenario": "s3"}"#,
    )
    .unwrap();
    ok(&enasep(
        &["simulate", "--config", "c.json", "--seed", "9", "--out-prefix", "o"],
        dir.path(),
    ));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o_scenario.json")).unwrap()).unwrap();
    assert_eq!(sidecar["scenario"]["seed"], 9);
    assert_eq!(sidecar["scenario"]["id"], "s3");
    assert_eq!(sidecar["grid_deg"], 6.0);
}

#[test]
fn pipeline_binary_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"grid_deg": 6.0, "draws": 10, "center_iters": 2, "mask_grid": [[90, 20]], "out_prefix": "out/p"}"#,
    )
    .unwrap();
    ok(&enasep(&["pipeline", "--config", "c.json"], dir.path()));
    let read = |f: &str| std::fs::read(dir.path().join("out").join(f)).unwrap();
    let names = [
        "p_report.json",
        "p_center.json",
        "p_evaluation.json",
        "p_sep_separation.csv",
        "p_sep_gdf.csv",
        "p_ribbon.pgm",
    ];
    let first: Vec<Vec<u8>> = names.iter().map(|f| read(f)).collect();
    ok(&enasep(&["pipeline", "--config", "c.json"], dir.path()));
    for (name, bytes) in names.iter().zip(&first) {
        assert_eq!(&read(name), bytes, "{name} changed between runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&first[0]).unwrap();
    assert!(report["center_error_deg"].as_f64().unwrap() < 2.0);
    assert!(report.get("timings").is_none());
    let header = String::from_utf8(read("p_sep_separation.csv")).unwrap();
    assert_eq!(
        header.lines().nth(2).unwrap(),
        "lon_center,lat_center,input,gdf,ribbon,var_g,var_r,cov_gr"
    );
    assert!(dir.path().join("out/p_timings.log").exists());
}
