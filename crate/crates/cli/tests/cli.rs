use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rtlmp_core::harness::SearchComparison;
use rtlmp_core::{ExperimentResult, ScenarioConfig};
use serde_json::Value;

fn rtlmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtlmp"))
        .args(args)
        .output()
        .expect("spawn rtlmp")
}

fn ok(args: &[&str]) -> String {
    let out = rtlmp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn scenario_path(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn t3_prices_under_congestion() {
    // Equal reactances: an injection at bus 1 puts 2/3 of it on 1-3, one at
    // bus 2 puts 1/3. Serving 1 MW at bus 3 with 1-3 frozen needs
    // Δp1 = -1, Δp2 = 2.
    let (c1, c2) = (10.0, 20.0);
    let (a1, a2) = (2.0 / 3.0, 1.0 / 3.0);
    let dp2 = a1 / (a1 - a2);
    let dp1 = 1.0 - dp2;
    let expect = [c1, c2, c1 * dp1 + c2 * dp2];

    let v = json(&["lmp", "--case", "t3", "--pattern", "1-3"]);
    let lmp = floats(&v["solution"]["lmp"]);
    for (got, want) in lmp.iter().zip(expect) {
        assert!((got - want).abs() < 1e-9, "{lmp:?} vs {expect:?}");
    }
    let csv = ok(&["lmp", "--case", "t3", "--pattern", "1-3", "--format", "csv"]);
    assert_eq!(csv.lines().next(), Some("bus,lmp,lmp_raw"));
    assert_eq!(csv.lines().count(), 4);

    // Uncongested, the cheap unit sits at its incremental cap and the
    // 20 $/MWh unit is marginal everywhere.
    let flat = json(&["lmp", "--case", "t3"]);
    assert!(floats(&flat["solution"]["lmp"])
        .iter()
        .all(|p| (p - c2).abs() < 1e-9));
}

#[test]
fn estimate_from_noiseless_snapshot() {
    // θ2 = -0.01, θ3 = -0.02 rad on T3 (x = 0.1 p.u. everywhere).
    let f12 = 0.01 / 0.1;
    let f13 = 0.02 / 0.1;
    let f23 = 0.01 / 0.1;
    let inj = [f12 + f13, -f12 + f23, -f13 - f23];
    let mut z: Vec<f64> = inj.to_vec();
    for f in [f12, f13, f23] {
        z.push(f);
        z.push(-f);
    }
    let dir = tempfile::tempdir().unwrap();
    let zpath = dir.path().join("snapshot.csv");
    let body: String = std::iter::once("meter,value".to_string())
        .chain(z.iter().enumerate().map(|(i, v)| format!("m{i},{v}")))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&zpath, body).unwrap();
    let zs = zpath.to_str().unwrap();

    let v = json(&["estimate", "--case", "t3", "--z", zs]);
    let x = floats(&v["x_hat"]);
    assert!(
        (x[0] + 0.01).abs() < 1e-10 && (x[1] + 0.02).abs() < 1e-10,
        "{x:?}"
    );
    assert!(v["statistic"].as_f64().unwrap() < 1e-12);
    assert_eq!(v["detected"], Value::Bool(false));
    // 20 MW on 1-3 sits exactly on its limit.
    assert_eq!(v["pattern"], serde_json::json!([2]));

    let out = dir.path().join("est.json");
    let summary = ok(&[
        "estimate",
        "--case",
        "t3",
        "--z",
        zs,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(summary.contains("passed"));
    let saved: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(saved, v);

    let ac = json(&["estimate", "--case", "t3", "--z", zs, "--model", "ac"]);
    assert!(ac["statistic"].as_f64().unwrap().is_finite());
}

#[test]
fn topology_attack_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        ok(&[
            "attack",
            "topology",
            "--case",
            "ieee14",
            "--max-removals",
            "2",
            "--seed",
            "7",
            "--out",
            p.to_str().unwrap(),
        ]);
    }
    let (ta, tb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let v: Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(v["lines"].as_array().unwrap().len(), 2);
    assert_eq!(v["attacks"][0]["plan"]["kind"], "topology");

    let direct = json(&[
        "attack", "topology", "--case", "ieee14", "--remove", "2-3", "--seed", "1",
    ]);
    assert_eq!(direct["removed"], serde_json::json!([3]));
    assert_eq!(
        direct["feasibility"]["meters_accessible"],
        Value::Bool(true)
    );
}

#[test]
fn meter_attack_plan() {
    let v = json(&[
        "attack",
        "meter",
        "--case",
        "ieee14",
        "--model",
        "m3",
        "--suspects",
        "2-3,6-11",
        "--seed",
        "4",
    ]);
    assert_eq!(v["lines"], serde_json::json!([3, 11]));
    let m = v["z"].as_array().unwrap().len();
    let plan = &v["attacks"][0]["plan"];
    assert_eq!(plan["kind"], "meter");
    assert_eq!(plan["a"].as_array().unwrap().len(), m);
    let greedy = json(&[
        "attack",
        "meter",
        "--case",
        "ieee14",
        "--model",
        "m1",
        "--epsilon",
        "5,10",
        "--search",
        "greedy",
        "--seed",
        "4",
    ]);
    assert_eq!(greedy["attacks"].as_array().unwrap().len(), 2);
}

#[test]
fn partition_reports_neighbors() {
    let v = json(&["partition", "--case", "ieee14"]);
    assert!(v["margin"].as_f64().unwrap() >= 0.0);
    let n = v["neighbors"].as_array().unwrap();
    assert!(!n.is_empty());
    for r in n {
        assert!(r["margin"].as_f64().unwrap() > 0.0);
    }
    let csv = ok(&["partition", "--case", "ieee14", "--format", "csv"]);
    assert!(csv.starts_with("pattern,kind,margin,lmp"));
}

#[test]
fn case_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(&[
        "case",
        "--case",
        "ieee14",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    for f in ["case.json", "F.csv", "H.csv", "ptdf.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let again = ok(&[
        "case",
        "--case",
        dir.path().join("case.json").to_str().unwrap(),
    ]);
    assert_eq!(first, again);
    let v: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["detector_dof"], 41);
}

#[test]
fn montecarlo_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let scen = scenario_path("smoke_t3.json");
    for d in [&a, &b] {
        ok(&[
            "montecarlo",
            "--scenario",
            &scen,
            "--out",
            d.to_str().unwrap(),
        ]);
    }
    let ra = fs::read(a.join("results.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("results.json")).unwrap());
    assert_eq!(
        fs::read(a.join("trials.csv")).unwrap(),
        fs::read(b.join("trials.csv")).unwrap()
    );
    let res: ExperimentResult = serde_json::from_slice(&ra).unwrap();
    assert_eq!(res.points.len(), 1);
    // The embedded scenario reproduces the run.
    let cfg_path = dir.path().join("scenario.json");
    fs::write(&cfg_path, serde_json::to_string(&res.scenario).unwrap()).unwrap();
    let c = dir.path().join("c");
    ok(&[
        "montecarlo",
        "--scenario",
        cfg_path.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(ra, fs::read(c.join("results.json")).unwrap());

    let curve = ok(&[
        "montecarlo",
        "--scenario",
        &scen,
        "--out",
        c.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(curve.starts_with("budget,detection_probability,arpp,trials,priced"));
    let trials = fs::read_to_string(a.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 51);
}

#[test]
fn shipped_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            ScenarioConfig::from_json(&fs::read_to_string(&p).unwrap())
                .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn compare_search_single_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    fs::write(
        &cfg,
        r#"{"case":"ieee14","attack":{"kind":"meter","model":"m1","budgets":[30]},"trials":5,"seed":2,"candidate_cap":1}"#,
    )
    .unwrap();
    let out = ok(&["compare-search", "--scenario", cfg.to_str().unwrap()]);
    let r: SearchComparison = serde_json::from_str(&out).unwrap();
    assert_eq!(r.agreement, 1.0);
    assert_eq!(r.trials, 5);
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| rtlmp(args).status.code();
    assert_eq!(code(&["lmp", "--case", "t3", "--bogus"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(
        code(&["estimate", "--case", "t3", "--format", "csv"]),
        Some(2)
    );
    assert_eq!(
        code(&["attack", "meter", "--case", "t3", "--model", "m1"]),
        Some(2)
    );
    assert_eq!(code(&["lmp", "--case", "/nonexistent/case.json"]), Some(1));
    assert_eq!(code(&["lmp", "--case", "t3", "--pattern", "1-9"]), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"case":"t3","trials":1,"alpha":2}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        code(&[
            "montecarlo",
            "--scenario",
            bad.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        Some(1)
    );
    assert_eq!(code(&["--help"]), Some(0));
}
