use std::path::Path;
use std::process::{Command, Output};

fn drmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drmdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = drmdp(args);
    assert!(
        out.status.success(),
        "drmdp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_collect_solve_run() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("hard.json");
    let data = dir.path().join("data.jsonl");
    let exact = dir.path().join("exact.json");
    let out = dir.path().join("out.json");
    ok(&[
        "gen-instance",
        "hard",
        "--d",
        "2",
        "--horizon",
        "3",
        "--rho",
        "0.5",
        "--delta",
        "0.5",
        "-o",
        p(&inst),
    ]);
    ok(&[
        "collect",
        "--instance",
        p(&inst),
        "-k",
        "200",
        "--seed",
        "3",
        "-o",
        p(&data),
    ]);
    assert_eq!(
        std::fs::read_to_string(&data).unwrap().lines().count(),
        1 + 200 * 3
    );
    ok(&["solve-exact", "--instance", p(&inst), "-o", p(&exact)]);
    let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&exact).unwrap()).unwrap();
    assert_eq!(sol["policy"][0][0], 3);

    for alg in ["drpvi", "va", "modified_va"] {
        ok(&[
            "run",
            "--instance",
            p(&inst),
            "--data",
            p(&data),
            "--algorithm",
            alg,
            "--beta",
            "0.2",
            "-o",
            p(&out),
        ]);
        let res: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(res["beta"], 0.2);
        assert_eq!(res["q_hat"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn collection_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("r.json");
    ok(&[
        "gen-instance",
        "random",
        "--states",
        "3",
        "--actions",
        "2",
        "--horizon",
        "2",
        "--dim",
        "2",
        "--rho",
        "0.2",
        "-o",
        p(&inst),
    ]);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for f in [&a, &b] {
        ok(&[
            "collect",
            "--instance",
            p(&inst),
            "--policy",
            "uniform",
            "-k",
            "30",
            "--seed",
            "11",
            "-o",
            p(f),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn sweep_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    let outdir = dir.path().join("out");
    std::fs::write(
        &cfg,
        "# small sweep\ninstance = hard\nd = 2\nhorizon = 2\nrho = 0.5\ndelta_gap = 0.5\n\
         k_values = 16, 32\nseeds = 2\nalgorithms = drpvi, modified_va\nbeta_mode = manual\nbeta = 0.1\n",
    )
    .unwrap();
    ok(&["sweep", p(&cfg), "--output-dir", p(&outdir), "--workers", "2"]);
    let csv = std::fs::read_to_string(outdir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
    assert!(csv.starts_with("algorithm,K,seed,run_seed,budget,subopt_init,subopt_s0,subopt_s1,"));
    assert!(outdir.join("subopt.svg").exists());
}

#[test]
fn sweep_rejects_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "instance = hard\nbogus = 1\n").unwrap();
    let out = drmdp(&["sweep", p(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn check_suites_pass() {
    let out = ok(&["check", "--cases", "10"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("FAILED"), "{text}");
    assert!(text.contains("tv_dual"));
}

#[test]
fn sweep_help_documents_columns() {
    let out = ok(&["sweep", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for col in [
        "subopt_init",
        "phi_sigma_star",
        "bound_phi_hard",
        "violation_rate",
        "wall_ms",
    ] {
        assert!(text.contains(col), "{col}");
    }
}
