use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CRITICAL: &str = r#"{
    "name": "critical",
    "trait_dim": 1,
    "trait_domain": { "box": { "lower": [0.0], "upper": [1.0] } },
    "birth": { "expr": "0", "bound": 0.0 },
    "death": { "expr": "0", "bound": 0.0 },
    "allometric": { "expr": "1", "bound": 1.0, "lower": "1" },
    "mutation_prob": "0",
    "mutation": { "kind": "point_mass_zero" }
}"#;

fn tapsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapsim"))
        .args(args)
        .env_remove("TAPSIM_OUT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = tapsim(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rows(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h = r.headers().unwrap().iter().map(String::from).collect();
    (h, r.records().map(Result::unwrap).collect())
}

fn floats(rec: &csv::StringRecord) -> Vec<f64> {
    rec.iter().map(|v| v.parse::<f64>().unwrap()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn same_seed_same_mass_series() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--model", "example1", "--seed", "7", "--horizon", "0.3", "--out", p(out)]);
    }
    assert_eq!(fs::read(a.join("mass.csv")).unwrap(), fs::read(b.join("mass.csv")).unwrap());
    let c = dir.path().join("c");
    ok(&["--threads", "1", "simulate", "--model", "example1", "--seed", "7", "--horizon", "0.3", "--out", p(&c)]);
    assert_eq!(fs::read(a.join("mass.csv")).unwrap(), fs::read(c.join("mass.csv")).unwrap());
}

#[test]
fn meta_json_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&[
        "simulate", "--model", "example2", "--model-overrides", r#"{"sigma": 0.2}"#, "--seed", "3", "--horizon",
        "0.2", "--n", "300", "--count", "250", "--snapshot-cadence", "0.05", "--out", p(&first),
    ]);
    let again = dir.path().join("again");
    ok(&["simulate", "--config", p(&first.join("meta.json")), "--out", p(&again)]);
    assert_eq!(json(&first.join("meta.json")), json(&again.join("meta.json")));
    assert_eq!(fs::read(first.join("mass.csv")).unwrap(), fs::read(again.join("mass.csv")).unwrap());
    for k in 0..5 {
        let f = format!("snapshots/t_{k}.csv");
        assert_eq!(fs::read(first.join(&f)).unwrap(), fs::read(again.join(&f)).unwrap());
    }

    // a replicate directory is enough to rerun that replicate
    let reps = dir.path().join("reps");
    ok(&["simulate", "--seed", "5", "--horizon", "0.1", "--n", "200", "--replicates", "3", "--out", p(&reps)]);
    let one = dir.path().join("one");
    ok(&["simulate", "--config", p(&reps.join("rep_2/meta.json")), "--out", p(&one)]);
    assert_eq!(fs::read(reps.join("rep_2/mass.csv")).unwrap(), fs::read(one.join("mass.csv")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{ "horizon": 0.1, "n": 100, "initial": { "count": 40, "traits": { "kind": "point", "value": [2.0] } }, "seed": 4 }"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&["simulate", "--config", p(&cfg), "--seed", "9", "--out", p(&out)]);
    let meta = json(&out.join("meta.json"));
    assert_eq!(meta["config"]["seed"], 9);
    assert_eq!(meta["config"]["initial"]["count"], 40);
    assert_eq!(meta["initial_count"], 40);
}

#[test]
fn emitted_csvs_follow_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--model", "example1", "--seed", "1", "--horizon", "0.2", "--out", p(&sim)]);
    let (h, recs) = rows(&sim.join("mass.csv"));
    assert_eq!(h, ["t", "mass"]);
    let t: Vec<f64> = recs.iter().map(|r| floats(r)[0]).collect();
    assert!(t.windows(2).all(|w| w[0] <= w[1]));
    let meta = json(&sim.join("meta.json"));
    let times = meta["snapshot_times"].as_array().unwrap();
    for (k, st) in times.iter().enumerate() {
        let (h, recs) = rows(&sim.join(format!("snapshots/t_{k}.csv")));
        assert_eq!(h, ["t", "trait_1", "age", "weight"]);
        for r in recs {
            let v = floats(&r);
            assert_eq!(v[0], st.as_f64().unwrap());
            assert!((0.0..=4.0).contains(&v[1]) && v[2] >= 0.0 && v[3] == 1e-3);
        }
    }

    let ext = dir.path().join("ext");
    ok(&[
        "extinction", "--replicates", "4", "--horizon", "0.5", "--n", "100", "--hit-replicates", "20", "--out",
        p(&ext),
    ]);
    let (h, recs) = rows(&ext.join("extinction.csv"));
    assert_eq!(h, ["example_id", "seed", "extinction_time", "censored", "horizon"]);
    assert_eq!(recs.len(), 8);
    for r in &recs {
        assert!(r[0] == *"example1" || r[0] == *"example2");
        r[1].parse::<u64>().unwrap();
        assert!(r[2].parse::<f64>().unwrap() <= 0.5);
        assert!(r[3] == *"0" || r[3] == *"1");
    }
    let dom = json(&ext.join("domination.json"));
    assert!((dom["domination"]["m0"].as_f64().unwrap() - 187.0588).abs() < 1e-3);
    assert!(dom["domination"]["ci_lower"].as_f64() <= dom["domination"]["ci_upper"].as_f64());

    let cum = dir.path().join("cum");
    ok(&["cumulant", "--model", "example1", "--f0", "2", "--steps", "2000", "--record-every", "500", "--out", p(&cum)]);
    let (h, recs) = rows(&cum.join("cumulant.csv"));
    assert_eq!(h, ["t", "x", "u"]);
    assert_eq!(recs.len(), 5 * 101);
    assert!(recs.iter().all(|r| floats(r)[2] >= 0.0));
}

#[test]
fn equilibrium_of_example1_is_exponential() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["equilibrium", "--model", "example1", "--trait-points", "5", "--out", p(dir.path())]);
    let (h, recs) = rows(&dir.path().join("equilibrium.csv"));
    assert_eq!(h, ["kind", "x", "a", "m_hat", "Z", "A_tail", "b_hat", "d_hat", "r_hat", "pr_hat", "u_hat"]);
    let mut densities = 0;
    for r in &recs {
        if &r[0] == "density" {
            let (a, m): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
            assert!((m - (-a).exp()).abs() < 1e-8, "a={a} m={m}");
            densities += 1;
        } else {
            assert_eq!(&r[0], "summary");
            let x: f64 = r[1].parse().unwrap();
            let b: f64 = r[6].parse().unwrap();
            assert!((b - x * (4.0 - x) / 2.0).abs() < 1e-9);
        }
    }
    assert_eq!(densities, 5 * 2001);
}

#[test]
fn figure_1c_snapshot_at_half() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["reproduce-figure", "--id", "1c", "--out", p(dir.path())]);
    let fig = json(&dir.path().join("figure.json"));
    assert_eq!(fig["simulation"]["initial"]["count"], 1000);
    assert_eq!(fig["simulation"]["initial"]["traits"]["value"][0], 1.5);
    assert_eq!(fig["simulation"]["n"], 1000);
    for sub in ["sigma_1", "sigma_0.8"] {
        let (h, recs) = rows(&dir.path().join(sub).join("snapshot.csv"));
        assert_eq!(h, ["t", "trait_1", "age", "weight"]);
        assert!(recs.iter().all(|r| floats(r)[0] == 0.5));
    }
    assert!(dir.path().join("equilibrium.csv").is_file());
}

#[test]
fn laplace_crosscheck_from_saved_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("critical.json");
    fs::write(&model, CRITICAL).unwrap();
    let runs = dir.path().join("runs");
    ok(&[
        "simulate", "--model", p(&model), "--n", "50", "--trait", "0.5", "--horizon", "0.5", "--snapshot-cadence",
        "0.25", "--replicates", "30", "--mass-recording", "none", "--out", p(&runs),
    ]);
    let out = dir.path().join("cum");
    ok(&[
        "cumulant", "--f0", "1", "--horizon", "0.5", "--steps", "500", "--record-every", "50", "--trajectories",
        p(&runs), "--out", p(&out),
    ]);
    let lap = json(&out.join("laplace.json"));
    assert_eq!(lap["replicates"], 30);
    // exp(-1/(1 + 0.5)) for mass 1, f0 = 1, r̂ = 1
    assert!((lap["prediction"].as_f64().unwrap() - (-1.0f64 / 1.5).exp()).abs() < 1e-6);
    assert!(lap["std_error"].as_f64().unwrap() > 0.0);

    // Example 1 has an interaction kernel
    let bad = tapsim(&["cumulant", "--model", "example1", "--trajectories", p(&runs), "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(5));
}

#[test]
fn diagnose_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "diagnose", "--model", "example1", "--horizon", "0.2", "--n", "200", "--snapshot-cadence", "0.02",
        "--replicates", "6", "--times", "0.1,0.2", "--ks-times", "0.2", "--out", p(dir.path()),
    ]);
    let r = json(&dir.path().join("diagnostics.json"));
    assert_eq!(r["replicates"], 6);
    assert_eq!(r["martingale"][0]["points"].as_array().unwrap().len(), 2);
    assert_eq!(r["martingale"][0]["generator"]["kind"], "laplacian");
    let ci = &r["martingale"][0]["points"][1]["ratio_ci"];
    assert!(ci[0].as_f64() <= ci[1].as_f64());
    assert!(r["averaging"][0]["pooled"]["statistic"].as_f64().unwrap() < 1.0);
    assert!(!r["warnings"].as_array().unwrap().is_empty());

    let bad = tapsim(&[
        "diagnose", "--model", "example1", "--horizon", "0.2", "--replicates", "2", "--times", "0.123", "--out",
        p(dir.path()),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn failures_have_distinct_exit_codes_and_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], i32, &str); 4] = [
        (&["simulate", "--model", "no-such-model"], 3, "unknown_model"),
        (&["simulate", "--no-such-flag"], 2, "usage"),
        (&["simulate", "--scheme", "exact", "--dt", "0.1"], 2, "usage"),
        (&["simulate", "--horizon", "0.01", "--out", "/proc/forbidden/out"], 4, "output"),
    ];
    for (args, code, kind) in cases {
        let mut a: Vec<&str> = args.to_vec();
        let out_dir = dir.path().join("x");
        if !a.contains(&"--out") {
            a.extend(["--out", p(&out_dir)]);
        }
        let out = tapsim(&a);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"], kind);
        assert_eq!(err["exit_code"], code);
    }
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tapsim"))
        .args(["simulate", "--horizon", "0.01", "--n", "10"])
        .env("TAPSIM_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("simulate/meta.json").is_file());
}
