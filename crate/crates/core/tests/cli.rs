//! End-to-end runs of the `fcurve` binary: file formats, replay and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use fcurve::ingest::{table_path, CountryEntry, CurvePanel, PanelConfig, Sex};
use fcurve::report::{read_partition_csv, RunManifest};
use fcurve::synthetic::{hmd_table_text, mortality_panel};

const CODES: [&str; 4] = ["AAA", "BBB", "CCC", "DDD"];

fn fcurve(args: &[&str], env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fcurve"));
    cmd.args(args).env_remove("FCURVE_DATA_DIR");
    if let Some(dir) = env {
        cmd.env("FCURVE_DATA_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Synthetic life tables plus the matching country file.
fn setup(dir: &Path) {
    let tables = dir.join("tables");
    std::fs::create_dir_all(&tables).unwrap();
    for sex in [Sex::Male, Sex::Female] {
        let panel = mortality_panel(&CODES, (1960, 1975), sex, 5).unwrap();
        for c in CODES {
            let curves: Vec<_> = panel.curves().iter().filter(|k| k.country == c).collect();
            std::fs::write(table_path(&tables, c, sex), hmd_table_text(c, sex, &curves)).unwrap();
        }
    }
    let cfg = PanelConfig {
        countries: CODES
            .iter()
            .enumerate()
            .map(|(i, c)| CountryEntry {
                code: c.to_string(),
                name: format!("Country {c}"),
                area: if i < 2 { "North" } else { "South" }.into(),
            })
            .collect(),
        excluded: vec![],
        years: (1960, 1975),
    };
    std::fs::write(dir.join("countries.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let countries = d.join("countries.json");
    let panel = d.join("panel.csv");
    // the data directory comes from the environment
    ok(fcurve(
        &["ingest", "--countries", s(&countries), "--sex", "both", "--output", s(&panel)],
        Some(&d.join("tables")),
    ));
    let parsed = CurvePanel::read_csv(&panel).unwrap();
    assert_eq!(parsed.len(), 2 * 4 * 16);

    let smoothed = d.join("female.json");
    ok(fcurve(
        &["smooth", "--input", s(&panel), "--sex", "female", "--lambda-grid", "1e-4:1e2:13", "--output", s(&smoothed)],
        None,
    ));

    let dist = d.join("dist");
    ok(fcurve(
        &[
            "cluster", "--input", s(&smoothed), "--method", "distance", "--K", "3", "--q", "3",
            "--countries", s(&countries), "--out", s(&dist),
        ],
        None,
    ));
    let text = std::fs::read_to_string(dist.join("partition.csv")).unwrap();
    assert!(text.lines().any(|l| l == "country,year,sex,cluster"));
    let (keys, part) = read_partition_csv(&text).unwrap();
    assert_eq!(keys.len(), 64);
    assert_eq!(part.k, 3);
    for f in ["composition.csv", "composition.svg", "cluster_means.svg", "manifest.json"] {
        assert!(dist.join(f).is_file(), "{f} missing");
    }
    let manifest = RunManifest::read(&dist.join("manifest.json")).unwrap();
    assert!(text.contains(&format!("# manifest={}", manifest.hash)));
    let svg = std::fs::read_to_string(dist.join("cluster_means.svg")).unwrap();
    assert!(svg.contains(&manifest.hash));

    let flm = d.join("flm");
    ok(fcurve(
        &["flm", "--input", s(&smoothed), "--K", "1..3", "--seeds", "1", "--countries", s(&countries), "--out", s(&flm)],
        None,
    ));
    let bic = std::fs::read_to_string(flm.join("bic_table.csv")).unwrap();
    assert!(bic.lines().any(|l| l.starts_with("k,variant,seed,loglik,n_params,bic")));
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(flm.join("model.json")).unwrap()).unwrap();
    assert!(model["manifest"].is_string());

    // replay regenerates byte-identical artifacts
    let again = d.join("again");
    ok(fcurve(&["report", "--run", s(&dist.join("manifest.json")), "--out", s(&again)], None));
    for f in ["partition.csv", "composition.csv", "composition.svg", "cluster_means.svg"] {
        assert_eq!(
            std::fs::read(dist.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f} differs on replay"
        );
    }

    // editing the panel makes replay refuse with a data error
    let edited = std::fs::read_to_string(&panel).unwrap().replacen("AAA,1960", "AAA,1960", 1) + "\n";
    std::fs::write(&panel, edited).unwrap();
    let out = fcurve(&["report", "--run", s(&dist.join("manifest.json")), "--out", s(&d.join("x"))], None);
    assert_eq!(code(&out), 3);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let panel = d.join("panel.csv");
    ok(fcurve(
        &["ingest", "--data-dir", s(&d.join("tables")), "--countries", s(&d.join("countries.json")), "--sex", "male", "--output", s(&panel)],
        None,
    ));
    let smoothed = d.join("male.json");
    ok(fcurve(&["smooth", "--input", s(&panel), "--output", s(&smoothed)], None));

    // configuration errors
    assert_eq!(code(&fcurve(&["smooth", "--input", s(&panel), "--mode", "weird", "--output", "x"], None)), 2);
    assert_eq!(code(&fcurve(&["smooth", "--input", s(&panel), "--lambda-grid", "5:1:3", "--output", "x"], None)), 2);
    assert_eq!(code(&fcurve(&["fpca", "--input", s(&smoothed), "--q", "0", "--out", s(&d.join("f"))], None)), 2);
    assert_eq!(code(&fcurve(&["frobnicate"], None)), 2);
    assert_eq!(code(&fcurve(&["flm", "--input", s(&smoothed), "--K", "4..2", "--out", "x"], None)), 2);

    // data errors
    assert_eq!(code(&fcurve(&["smooth", "--input", s(&d.join("missing.csv")), "--output", "x"], None)), 3);
    std::fs::write(d.join("bad.csv"), "country,year,sex,age,value\nAAA,1960,male,0,-1\n").unwrap();
    assert_eq!(code(&fcurve(&["smooth", "--input", s(&d.join("bad.csv")), "--output", "x"], None)), 3);
    let out = fcurve(&["ingest", "--countries", s(&d.join("countries.json")), "--output", "x"], Some(&d.join("nowhere")));
    assert_eq!(code(&out), 3);

    // numerical failure: every FLM fit is impossible
    let out = fcurve(&["flm", "--input", s(&smoothed), "--K", "900", "--seeds", "1", "--out", s(&d.join("g"))], None);
    assert_eq!(code(&out), 4);
}
