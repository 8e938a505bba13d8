use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-fm"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Parsed CSV: header plus rows keyed by column name.
fn read_csv(path: &Path) -> (Vec<String>, Vec<BTreeMap<String, String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(String::from)).collect())
        .collect();
    (header, rows)
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {} is not numeric", row[key]))
}

const TWO_NODE: &str = r#"
[topology]
n_total = 2
split_index = 1
edges = [[1, 2, 1.0]]
[cost]
h_lo = 0.5
[gains]
g = 0.5
h = 1.0
[simulate]
tol = 1e-13
"#;

/// 10-node two-subnetwork instance, small enough for the game to run fast.
const SMALL: &str = r#"
seed = 7
[topology.generator]
n1 = 5
n2 = 5
p_net1 = 0.4
p_net2 = 0.6
intra_edges = 2
"#;

#[test]
fn simulate_two_node_reaches_fixed_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", TWO_NODE);
    let out = run(tmp.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&tmp.path().join("o/powers.csv"));
    assert_eq!(header, ["node", "final_power", "fixed_point", "sinr"]);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        // p = (I - K Gamma H^-1 A G)^-1 K Gamma H^-1 nu = (2, 2) for this instance.
        assert!((num(r, "final_power") - 2.0).abs() <= 1e-8);
        assert!((num(r, "fixed_point") - 2.0).abs() <= 1e-10);
        assert!((num(r, "sinr") - 1.0).abs() <= 1e-8);
    }
    let (theader, traj) = read_csv(&tmp.path().join("o/trajectory.csv"));
    assert_eq!(theader, ["step", "p_1", "p_2"]);
    assert_eq!(traj[0]["p_1"], "0");
    assert!(traj.len() <= 201);

    let status: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(status["status"], "ok");
    let manifest: Value = serde_json::from_slice(&fs::read(tmp.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["versions"]["robust-fm"].is_string());
    assert!(manifest["timings_s"]["simulate"].is_number());
}

#[test]
fn qmax_then_equilibrium_at_qmax_succeeds() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = run(tmp.path(), &["qmax", "--config", cfg.to_str().unwrap(), "--out", "q"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&tmp.path().join("q/qmax.csv"));
    let q2 = num(&rows[0], "q2_star");
    assert!(q2 > 0.0 && q2 < num(&rows[0], "q2_net1").min(num(&rows[0], "q2_net2")));

    let cfg2 = write_config(tmp.path(), "c2.toml", &format!("{SMALL}\n[game]\nq2_bar = {q2}\n"));
    let out = run(tmp.path(), &["equilibrium", "--config", cfg2.to_str().unwrap(), "--out", "e"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, eq) = read_csv(&tmp.path().join("e/equilibrium.csv"));
    assert_eq!(eq[0]["converged"], "true");
    let (_, traj) = read_csv(&tmp.path().join("e/cost_trajectory.csv"));
    for w in traj.windows(2) {
        assert!(num(&w[1], "shifted_total") <= num(&w[0], "shifted_total") + 1e-6);
    }
    let (header, theta) = read_csv(&tmp.path().join("e/theta_star.csv"));
    assert_eq!(header, ["node", "network", "g", "h", "pagerank"]);
    assert_eq!(theta.len(), 10);
}

#[test]
fn attack_respects_norm_bounds() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{SMALL}\n[game]\nq1_bar = 2.25\nq2_bar = 1.8\n[attack]\ntarget = \"initial\"\n");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = run(tmp.path(), &["attack", "--config", cfg.to_str().unwrap(), "--out", "a"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, edges) = read_csv(&tmp.path().join("a/attack_edges.csv"));
    assert!(!edges.is_empty());
    // Column sums and, for a star, the 2-norm sqrt(sum w^2).
    let mut col = BTreeMap::<usize, f64>::new();
    let mut sq = 0.0;
    for e in &edges {
        let w = num(e, "weight");
        assert!(w > 0.0 && w <= 1.0);
        *col.entry(e["i"].parse().unwrap()).or_default() += w;
        *col.entry(e["j"].parse().unwrap()).or_default() += w;
        sq += w * w;
    }
    let one = col.values().copied().fold(0.0, f64::max);
    let (_, summary) = read_csv(&tmp.path().join("a/attack_summary.csv"));
    let s = &summary[0];
    assert!((one - num(s, "one_norm")).abs() <= 1e-9);
    assert!(num(s, "one_norm") <= 2.25 + 1e-9 && num(s, "two_norm") <= 1.8 + 1e-9);
    if edges.len() >= 2 {
        assert!((sq.sqrt() - num(s, "two_norm")).abs() <= 1e-9);
    }
    let slack = (2.25 - num(s, "one_norm")).min(1.8 - num(s, "two_norm"));
    assert!(s["saturated"] == "true" || slack.abs() <= 1e-9, "binding slack {slack}");
    assert!(num(s, "abscissa_after") >= num(s, "abscissa_before"));
}

#[test]
fn outputs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{SMALL}\n[game]\nq2_bar = 0.5\nsweep_grid = [0.0, 0.25, 0.5]\n");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let cfg = cfg.to_str().unwrap();
    for (cmd, files) in [
        ("gen-topology", vec!["topology.toml"]),
        ("attack", vec!["attack_edges.csv", "attack_summary.csv"]),
        ("sweep", vec!["sweep.csv", "sweep_attacks.csv"]),
    ] {
        let a = run(tmp.path(), &[cmd, "--config", cfg, "--out", "a", "--workers", "1"]);
        let b = run(tmp.path(), &[cmd, "--config", cfg, "--out", "b", "--workers", "3"]);
        assert!(a.status.success() && b.status.success(), "{cmd}: {}", String::from_utf8_lossy(&a.stderr));
        for f in files {
            let x = fs::read(tmp.path().join("a").join(f)).unwrap();
            let y = fs::read(tmp.path().join("b").join(f)).unwrap();
            assert_eq!(x, y, "{cmd}: {f} differs between runs");
        }
    }
    let (header, rows) = read_csv(&tmp.path().join("a/sweep.csv"));
    assert_eq!(header, ["q2_over_normA", "cost_net1", "cost_net2", "cost_total", "rounds", "converged", "status"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(num(&rows[0], "q2_over_normA"), 0.0);
    for w in rows.windows(2) {
        assert!(num(&w[1], "cost_total") >= num(&w[0], "cost_total") - 1e-6);
    }

    // A different seed generates a different graph.
    let c = run(tmp.path(), &["gen-topology", "--config", cfg, "--out", "c", "--seed", "8"]);
    assert!(c.status.success());
    assert_ne!(fs::read(tmp.path().join("a/topology.toml")).unwrap(), fs::read(tmp.path().join("c/topology.toml")).unwrap());
}

#[test]
fn generated_topology_feeds_back_in() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    assert!(run(tmp.path(), &["gen-topology", "--config", cfg.to_str().unwrap(), "--out", "g"]).status.success());
    let from_file = write_config(tmp.path(), "f.toml", "[topology]\nfile = \"g/topology.toml\"\n[game]\nq2_bar = 0.3\n[attack]\ntarget = \"initial\"\n");
    let inline = write_config(tmp.path(), "i.toml", &format!("{SMALL}\n[game]\nq2_bar = 0.3\n[attack]\ntarget = \"initial\"\n"));
    for (c, o) in [(&from_file, "x"), (&inline, "y")] {
        let out = run(tmp.path(), &["attack", "--config", c.to_str().unwrap(), "--out", o]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        fs::read(tmp.path().join("x/attack_edges.csv")).unwrap(),
        fs::read(tmp.path().join("y/attack_edges.csv")).unwrap()
    );
}

#[test]
fn report_has_one_row_per_node() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &format!("{SMALL}\n[game]\nq2_bar = 0.5\n"));
    let out = run(tmp.path(), &["report", "--config", cfg.to_str().unwrap(), "--out", "r", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<Value> = serde_json::from_slice(&fs::read(tmp.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    let keys: Vec<&String> = rows[0].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["node", "pagerank", "alpha_cost", "beta_cost", "total_investment", "is_border_node"]);
    let pr_sum: f64 = rows.iter().map(|r| r["pagerank"].as_f64().unwrap()).sum();
    assert!((pr_sum - 1.0).abs() < 1e-9);
    for r in &rows {
        let (a, b, t) = (r["alpha_cost"].as_f64().unwrap(), r["beta_cost"].as_f64().unwrap(), r["total_investment"].as_f64().unwrap());
        assert!((0.0..=1.0 + 1e-9).contains(&a) && (0.0..=1.0 + 1e-9).contains(&b));
        assert!((a + b - t).abs() < 1e-9);
    }
}

#[test]
fn floats_carry_twelve_significant_digits() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    assert!(run(tmp.path(), &["qmax", "--config", cfg.to_str().unwrap(), "--out", "q"]).status.success());
    let (_, rows) = read_csv(&tmp.path().join("q/qmax.csv"));
    for v in rows[0].values() {
        let mantissa = v.split('e').next().unwrap();
        let digits = mantissa.chars().filter(char::is_ascii_digit).collect::<String>();
        assert!(digits.trim_start_matches('0').len() <= 12, "{v}");
    }
    // An irrational-looking value uses all twelve.
    assert_eq!(rows[0]["q2_star"].trim_start_matches("0.").chars().filter(char::is_ascii_digit).count(), 12);
}

#[test]
fn invalid_config_lists_every_problem() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[game]\nvarsigma = 2.0\nc2 = 0\n[cost]\nh_hi = 3.0\n[report]\ndamping = 0\n");
    let out = run(tmp.path(), &["qmax", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let rec: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(rec["status"], "error");
    assert_eq!(rec["kind"], "config");
    let fields: Vec<&str> = rec["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert_eq!(fields.len(), 4, "{fields:?}");
    for f in ["game.varsigma", "game.c2", "cost.h_hi", "report.damping"] {
        assert!(fields.contains(&f), "{f} missing");
    }
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn parse_errors_and_missing_files_are_records() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[game]\nunknown_key = 1\n");
    let out = run(tmp.path(), &["qmax", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let rec: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert!(rec["fields"][0]["problem"].as_str().unwrap().contains("unknown_key"));

    let out = run(tmp.path(), &["qmax", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let rec: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(rec["kind"], "io");
}

#[test]
fn non_coprime_frequencies_warn() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &format!("{SMALL}\n[game]\nc1 = 2\nc2 = 4\n"));
    let out = run(tmp.path(), &["gen-topology", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not coprime"));
    let manifest: Value = serde_json::from_slice(&fs::read(tmp.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["warnings"].as_array().unwrap().len(), 1);
}
