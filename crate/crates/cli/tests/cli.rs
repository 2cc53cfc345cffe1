use std::fs;
use std::path::Path;

use tameflow::presets::MARKET_PRESETS;
use tameflow_cli::config::ExperimentConfig;
use tameflow_cli::{list_presets, run, RunOptions};

fn config(market: &str, steps: usize, paths: usize, task: &str, claim: Option<&str>) -> String {
    let mut s = format!(
        "[market]\npreset = \"{market}\"\n[grid]\nsteps = {steps}\n[noise]\nseed = 5\npaths = {paths}\n[task]\nname = \"{task}\"\n"
    );
    if let Some(c) = claim {
        s.push_str(&format!("[claim]\npreset = \"{c}\"\nstrike = 100\n"));
    }
    s
}

fn run_text(dir: &Path, text: &str) -> i32 {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, text).unwrap();
    run(&RunOptions {
        config: cfg,
        out: dir.join("out"),
        seed: None,
        threads: Some(2),
        paths: None,
    })
}

fn rows(dir: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(dir.join("out/results.csv")).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

#[test]
fn price_eu_on_the_bs_preset() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_text(dir.path(), &config("bs-1stock", 1, 100_000, "price-eu", Some("call"))), 0);
    let r = rows(dir.path());
    let price = r.iter().find(|row| row[0] == "price").unwrap();
    let (v, se): (f64, f64) = (price[2].parse().unwrap(), price[3].parse().unwrap());
    assert!((v - 10.4506).abs() <= 3.0 * se, "{v} +- {se}");
    let s = summary(dir.path());
    assert_eq!(s["status"], "ok");
    assert_eq!(s["inputs_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn check_market_reports_the_witness() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_text(dir.path(), &config("kappa-arbitrage", 10, 10, "check-market", None)), 0);
    let r = rows(dir.path());
    let get = |q: &str| r.iter().find(|row| row[0] == q).map(|row| row[2].parse::<f64>().unwrap());
    assert_eq!(get("free"), Some(0.0));
    assert!((get("worst_kappa_norm").unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
    assert!(get("witness_t").is_some());
    assert_eq!(r.iter().filter(|row| row[0] == "witness_p").count(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(run_text(p, "[market]\npreset = 3\n"), 2);
    assert!(!p.join("out").exists());
    assert_eq!(run_text(p, &config("no-such-market", 10, 10, "simulate", None)), 2);
    assert!(!p.join("out").exists());

    assert_eq!(run_text(p, &config("kappa-arbitrage", 10, 50, "price-eu", Some("call"))), 3);
    assert!(!p.join("out/results.csv").exists());
    assert_eq!(summary(p)["error"]["kind"], "pricing-refused");

    assert_eq!(run_text(p, &config("rank-deficient-2factor", 10, 2000, "hedge-eu", Some("call"))), 4);
    assert!(!p.join("out/results.csv").exists());
    assert_eq!(summary(p)["exit_code"], 4);

    // The claim declared on the spanned factor alone is hedgeable.
    let text = config("rank-deficient-2factor", 10, 2000, "hedge-eu", Some("call")) + "factors = [0]\n";
    assert_eq!(run_text(p, &text), 0);

    let text = config("bs-1stock", 10, 50, "price-eu", Some("call")).replace("[market]\npreset = \"bs-1stock\"", "[market]\npreset = \"bs-1stock\"\ndrift = [\"exp(200 * p1)\"]");
    assert_eq!(run_text(p, &text), 5);
    assert_eq!(summary(p)["status"], "error");
    assert!(!p.join("out/results.csv").exists());
}

#[test]
fn presets_round_trip() {
    let table = list_presets();
    for (name, _) in MARKET_PRESETS {
        assert!(table.contains(name));
        ExperimentConfig::parse(&config(name, 4, 4, "simulate", None)).unwrap();
    }
    assert!(MARKET_PRESETS.len() >= 4);
    assert_eq!(table, list_presets());
}

#[test]
fn seed_and_path_overrides_change_the_digest_only_when_they_should() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, config("state-dependent-vol", 8, 200, "simulate", None)).unwrap();
    let digest = |seed: Option<u64>, threads: usize, tag: &str| {
        let out = dir.path().join(tag);
        let code = run(&RunOptions {
            config: cfg.clone(),
            out: out.clone(),
            seed,
            threads: Some(threads),
            paths: Some(100),
        });
        assert_eq!(code, 0);
        let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        (s["results_digest"].as_str().unwrap().to_string(), s["inputs_digest"].as_str().unwrap().to_string())
    };
    let a = digest(None, 1, "a");
    let b = digest(None, 4, "b");
    let c = digest(Some(99), 1, "c");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
    assert_ne!(a.1, c.1);
}
