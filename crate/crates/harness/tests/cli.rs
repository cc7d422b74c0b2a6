use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn expolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expolab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn small_scene() -> serde_json::Value {
    json!({
        "pano_width": 1024,
        "pano_height": 400,
        "dynamic_range": 500.0,
        "path": (0..6).map(|i| json!({"offset_px": 10.0 * i as f64})).collect::<Vec<_>>(),
        "light_events": [{"frame": 3, "scale": 0.25}],
        "noise_sigma": 1.0
    })
}

/// Every file under `dir` with its bytes, by relative path.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = expolab(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(expolab(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn gen_scene_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "scene.json", json!({"seed": 7, "scene": small_scene()}));
    // Same output path both times: the manifest records it.
    let out = tmp.path().join("scene");
    let mut trees = Vec::new();
    for _ in 0..2 {
        if out.exists() {
            fs::remove_dir_all(&out).unwrap();
        }
        let o = expolab(&["gen-scene", "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        trees.push(tree(&out));
    }
    let (ta, tb) = (&trees[0], &trees[1]);
    assert!(ta.iter().any(|(p, _)| p.ends_with("meta.json")));
    assert_eq!(ta.len(), 1 + 1 + 1 + 1 + 6 * 5, "manifest, meta, crf, poses and 30 frames");
    assert_eq!(ta, tb);
}

#[test]
fn missing_sequence_path_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let ghost = tmp.path().join("no_such_sequence");
    let config = write_config(
        tmp.path(),
        "eval.json",
        json!({"seed": 0, "sequences": [ghost], "controllers": [{"kind": "builtin"}], "output_dir": tmp.path().join("out")}),
    );
    let out = expolab(&["eval", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no_such_sequence"), "{}", stderr(&out));
}

#[test]
fn missing_config_file_is_named() {
    let out = expolab(&["train", "--config", "/nonexistent/run.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/run.json"));
}

#[test]
fn malformed_config_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "bad.json", json!({"seed": 0, "sac": {"gamma": "high"}}));
    let out = expolab(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sac.gamma"), "{}", stderr(&out));

    let config = write_config(tmp.path(), "typo.json", json!({"seed": 0, "reward": {"knd": "stat"}}));
    let out = expolab(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("knd"), "{}", stderr(&out));
}

#[test]
fn eval_replay_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    let scene = write_config(tmp.path(), "scene.json", json!({"seed": 3, "scene": small_scene()}));
    let o = expolab(&["gen-scene", "--config", scene.to_str().unwrap(), "--output", seq.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let run = tmp.path().join("run");
    let config = write_config(
        tmp.path(),
        "eval.json",
        json!({
            "seed": 3,
            "sequences": [seq],
            "controllers": [{"kind": "builtin"}, {"kind": "gradient"}, {"kind": "oneshot"}],
            "eval": {"save_frames": true}
        }),
    );
    let o = expolab(&["eval", "--config", config.to_str().unwrap(), "--output", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["builtin", "gradient", "oneshot"] {
        assert!(run.join(name).join("metrics.csv").exists());
        assert!(run.join(name).join("summary.json").exists());
        assert!(run.join(name).join("frames").join("000005.pgm").exists());
    }
    let pgm = fs::read(run.join("builtin").join("frames").join("000000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n512 384\n255\n"));

    let again = tmp.path().join("again");
    let manifest = run.join("manifest.json");
    let o = expolab(&["replay", manifest.to_str().unwrap(), "--output", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["builtin", "gradient", "oneshot"] {
        for file in ["metrics.csv", "summary.json"] {
            assert_eq!(fs::read(run.join(name).join(file)).unwrap(), fs::read(again.join(name).join(file)).unwrap(), "{name}/{file}");
        }
    }
}

#[test]
fn calibrate_crf_writes_a_response() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    let mut spec = small_scene();
    spec["noise_sigma"] = json!(0.0);
    let scene = write_config(tmp.path(), "scene.json", json!({"seed": 5, "scene": spec, "crf": {"gamma": 2.2}}));
    let o = expolab(&["gen-scene", "--config", scene.to_str().unwrap(), "--output", seq.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("cal");
    let config = write_config(tmp.path(), "cal.json", json!({"seed": 5, "sequences": [seq], "output_dir": out}));
    let o = expolab(&["calibrate-crf", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("crf.txt").exists());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    assert!(summary["aligned_rmse"].as_f64().unwrap() < 0.05, "{summary}");
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            expolab_harness::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5, "only {seen} configs");
}
