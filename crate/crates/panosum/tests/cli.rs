use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panosum_core::synthetic::{static_sequence, two_arc_sequence, SyntheticSequence};
use serde_json::Value;
use tempfile::TempDir;

struct Inputs {
    _dir: TempDir,
    frames: PathBuf,
    intrinsics: PathBuf,
}

fn inputs(seq: &SyntheticSequence) -> Inputs {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    let intrinsics = dir.path().join("intrinsics.json");
    seq.write_to(&frames, &intrinsics).unwrap();
    Inputs { _dir: dir, frames, intrinsics }
}

fn run(inputs: &Inputs, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panosum"))
        .arg("run")
        .arg("--frames")
        .arg(&inputs.frames)
        .arg("--intrinsics")
        .arg(&inputs.intrinsics)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn static_sequence_degrades_to_one_raw_keyframe() {
    let inp = inputs(&static_sequence(10, 2));
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let res = run(&inp, &out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("InitializationFailure"));
    let r = report(&out);
    assert_eq!(r["diagnostics"]["initialization_failure"], Value::Bool(true));
    assert_eq!(r["keyframes"].as_array().unwrap().len(), 1);
    assert_eq!(r["clusters"].as_array().unwrap().len(), 0);
    assert_eq!(r["unassigned"], serde_json::json!([0]));
    assert_eq!(listing(&out), ["clusters.svg", "report.json", "unassigned_0.png"]);
}

#[test]
fn missing_intrinsics_exits_one_without_output() {
    let mut inp = inputs(&static_sequence(3, 0));
    inp.intrinsics.set_file_name("absent.json");
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let res = run(&inp, &out, &[]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("error") && stderr.contains("absent.json"), "{stderr}");
    assert!(!out.exists());
    assert_eq!(listing(work.path()), Vec::<String>::new());
}

#[test]
fn empty_frame_directory_is_fatal() {
    let inp = inputs(&static_sequence(1, 0));
    for e in std::fs::read_dir(&inp.frames).unwrap() {
        std::fs::remove_file(e.unwrap().path()).unwrap();
    }
    let work = tempfile::tempdir().unwrap();
    let res = run(&inp, &work.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn flags_override_the_config_file() {
    let inp = inputs(&static_sequence(2, 0));
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("config.json");
    std::fs::write(&cfg, r#"{"seed": 5, "clustering": {"sigma_pos": 0.25}, "stitching": {"blend_levels": 2}}"#).unwrap();
    let out = work.path().join("out");
    let cfg_arg = cfg.to_str().unwrap();
    let res = run(&inp, &out, &["--config", cfg_arg, "--seed", "9", "--no-cylindrical", "--jobs", "1"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let c = &report(&out)["config"];
    assert_eq!(c["seed"], 9);
    assert_eq!(c["clustering"]["sigma_pos"], 0.25);
    assert_eq!(c["stitching"]["blend_levels"], 2);
    assert_eq!(c["stitching"]["cylindrical"], false);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let inp = inputs(&static_sequence(2, 0));
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("config.json");
    std::fs::write(&cfg, r#"{"clustering": {"sigma": 0.25}}"#).unwrap();
    let res = run(&inp, &work.path().join("out"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn rerun_replaces_previous_output() {
    let inp = inputs(&static_sequence(2, 1));
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    assert!(run(&inp, &out, &[]).status.success());
    std::fs::write(out.join("panorama_7_0.png"), b"stale").unwrap();
    assert!(run(&inp, &out, &[]).status.success());
    assert!(!out.join("panorama_7_0.png").exists());
    assert_eq!(listing(work.path()), ["out"]);
}

#[test]
fn two_arcs_give_two_panoramas_deterministically() {
    let inp = inputs(&two_arc_sequence(1));
    let work = tempfile::tempdir().unwrap();
    let (a, b) = (work.path().join("a"), work.path().join("b"));
    assert!(run(&inp, &a, &["--jobs", "2"]).status.success());
    assert!(run(&inp, &b, &["--jobs", "1"]).status.success());
    let names = listing(&a);
    assert_eq!(names, listing(&b));
    for name in &names {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let r = report(&a);
    assert_eq!(r["clusters"].as_array().unwrap().len(), 2);
    assert_eq!(names.iter().filter(|n| n.starts_with("panorama_")).count(), 2);
}
