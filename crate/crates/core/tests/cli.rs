//! The `sacm` binary end to end on a small synthetic subject.

use std::path::Path;
use std::process::{Command, Output};

fn sacm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sacm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = sacm(args);
    assert!(
        out.status.success(),
        "sacm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr)
        .lines()
        .last()
        .unwrap_or_default()
        .to_string();
    serde_json::from_str(&line)
        .unwrap_or_else(|e| panic!("stderr is not a JSON error ({e}): {line}"))
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn pipeline_runs_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    ok(&[
        "synth",
        "--out",
        &s(&raw),
        "--sessions",
        "1",
        "--seeg-rate",
        "1000",
        "--audio-rate",
        "16000",
        "--leak-channels",
        "12",
        "--leak-gain",
        "1.0",
        "--seed",
        "5",
    ]);
    for f in [
        "meta.json",
        "events.jsonl",
        "seeg.f32le",
        "audio.f32le",
        "resolved_config.json",
    ] {
        assert!(raw.join(f).is_file(), "{f}");
    }

    let car = tmp.path().join("car");
    ok(&[
        "preprocess",
        "--in",
        &s(&raw),
        "--out",
        &s(&car),
        "--target-rate",
        "100",
    ]);
    assert!(car.join("skipped_trials.jsonl").is_file());
    let bip = tmp.path().join("bipolar");
    ok(&[
        "preprocess",
        "--in",
        &s(&raw),
        "--out",
        &s(&bip),
        "--reref",
        "bipolar",
        "--target-rate",
        "100",
    ]);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bip.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["channel_names"].as_array().unwrap().len(), 21);

    let check = tmp.path().join("check/report.json");
    let out = ok(&["check", "--in", &s(&raw), "--report", &s(&check)]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&check).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    let flagged = report["flagged_channels"].as_array().unwrap();
    assert!(flagged.contains(&serde_json::json!("A5")), "{flagged:?}");
    assert!(flagged.len() <= 2, "{flagged:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("FLAGGED"));

    let det = tmp.path().join("det/report.json");
    ok(&[
        "detect",
        "--in",
        &s(&raw),
        "--report",
        &s(&det),
        "--seeds",
        "1",
        "--channel-sets",
        "SMC",
        "--target-rate",
        "100",
        "--max-epochs",
        "2",
        "--patience",
        "1",
        "--random-baseline",
    ]);
    let dr: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&det).unwrap()).unwrap();
    assert_eq!(dr["task"], "detect");
    let sets: Vec<&str> = dr["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["channel_set"].as_str().unwrap())
        .collect();
    assert_eq!(sets, ["SMC", "Random"]);
    assert!(tmp.path().join("det/resolved_config.json").is_file());

    let dec = tmp.path().join("dec/report.json");
    ok(&[
        "ablate",
        "--task",
        "decode",
        "--in",
        &s(&car),
        "--report",
        &s(&dec),
        "--seeds",
        "2",
        "--target-rate",
        "100",
        "--hidden",
        "8",
        "--max-epochs",
        "1",
    ]);
    let rr: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dec).unwrap()).unwrap();
    let n_cells = rr["cells"].as_array().unwrap().len();
    // A, B, SMC, FULL and the random baseline, two seeds each.
    assert_eq!(n_cells, 10);
    assert_eq!(rr["ttests"].as_array().unwrap().len(), 5);
    assert!(rr["audio_lda"]["accuracy"].as_f64().unwrap() > 50.0);

    let tables = tmp.path().join("tables");
    ok(&[
        "report",
        "--in",
        &s(&dec),
        "--out",
        &s(&tables),
        "--recording",
        &s(&raw),
        "--max-trials",
        "48",
    ]);
    for f in [
        "summary.csv",
        "cells.csv",
        "marks.csv",
        "ttests.csv",
        "confusion_audio_lda.csv",
        "fig6_audio_amplitude.csv",
        "fig7_band_power.csv",
    ] {
        assert!(tables.join(f).is_file(), "{f}");
    }
    let summary = std::fs::read_to_string(tables.join("summary.csv")).unwrap();
    assert!(summary.lines().count() >= 6, "{summary}");
}

#[test]
fn configuration_errors_are_structured() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    ok(&[
        "synth",
        "--out",
        &s(&raw),
        "--sessions",
        "1",
        "--blocks",
        "10",
        "--seeg-rate",
        "1000",
        "--audio-rate",
        "16000",
        "--snr-db",
        "-inf",
    ]);
    let rep = s(&tmp.path().join("r.json"));

    let e = error_json(&sacm(&[
        "decode",
        "--in",
        &s(&raw),
        "--report",
        &rep,
        "--tau",
        "0",
    ]));
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("tau"));

    let e = error_json(&sacm(&[
        "decode",
        "--in",
        &s(&tmp.path().join("missing")),
        "--report",
        &rep,
    ]));
    assert_eq!(e["error"], "io");

    let e = error_json(&sacm(&[
        "decode",
        "--in",
        &s(&raw),
        "--report",
        &rep,
        "--channel-sets",
        "XYZ",
    ]));
    assert!(e["message"].as_str().unwrap().contains("XYZ"), "{e}");

    let e = error_json(&sacm(&[
        "synth",
        "--out",
        &s(&tmp.path().join("x")),
        "--seeg-rate",
        "200",
    ]));
    assert_eq!(e["error"], "config");

    let e = error_json(&sacm(&[
        "decode",
        "--in",
        &s(&raw),
        "--report",
        &rep,
        "--val-block",
        "11",
    ]));
    assert!(e["message"].as_str().unwrap().contains("11"), "{e}");
    assert!(!Path::new(&rep).exists());
}

#[test]
fn seed_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_sacm"));
        c.args([
            "synth",
            "--out",
            &s(&tmp.path().join(dir)),
            "--sessions",
            "1",
            "--blocks",
            "1",
            "--seeg-rate",
            "1000",
            "--audio-rate",
            "16000",
        ]);
        c.env("RUST_LOG", "warn").env_remove("SACM_SEED");
        if let Some(v) = seed {
            c.env("SACM_SEED", v);
        }
        assert!(c.output().unwrap().status.success());
        std::fs::read(tmp.path().join(dir).join("seeg.f32le")).unwrap()
    };
    let env7 = run("a", Some("7"));
    let flag7 = {
        ok(&[
            "synth",
            "--out",
            &s(&tmp.path().join("b")),
            "--sessions",
            "1",
            "--blocks",
            "1",
            "--seeg-rate",
            "1000",
            "--audio-rate",
            "16000",
            "--seed",
            "7",
        ]);
        std::fs::read(tmp.path().join("b").join("seeg.f32le")).unwrap()
    };
    let default = run("c", None);
    assert_eq!(env7, flag7);
    assert_ne!(env7, default);
}
