//! CLI contract tests: exit codes, artifact layout, reproducibility, and
//! the semi-supervised flag path.

use std::process::Command;

use harmsim::commands::{cmd_compare, cmd_generate, cmd_stability, cmd_train, StabilityArgs};
use harmsim::config::{CliOverrides, Method, ResolvedConfig, RunConfig};

fn resolved(out: &std::path::Path, seed: u64, extra: &str) -> ResolvedConfig {
    let file: RunConfig = serde_json::from_str(extra).unwrap();
    let cli = CliOverrides {
        seed: Some(seed),
        out: Some(out.to_path_buf()),
        ..CliOverrides::default()
    };
    ResolvedConfig::resolve(file, &cli).unwrap()
}

const FAST: &str = "{\"max_rounds\": 4, \"local_epochs\": 2, \"patience\": 2}";

#[test]
fn generate_writes_manifest_with_paper_scale_training_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    cmd_generate(&resolved(&out, 1, "{}")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    let counts: Vec<u64> = manifest["sites"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["n_train"].as_u64().unwrap())
        .collect();
    assert_eq!(counts, vec![35, 127, 69, 39]);
    for i in 0..4 {
        assert!(out.join(format!("site{i}.csv")).exists());
    }
}

#[test]
fn generate_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_generate(&resolved(&a, 9, "{}")).unwrap();
    cmd_generate(&resolved(&b, 9, "{}")).unwrap();
    for file in ["site0.csv", "site1.csv", "site2.csv", "site3.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn train_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("nested"); // created on demand
    let mut cfg = resolved(&out, 2, FAST);
    cfg = cfg.with_method(Method::Fedharmony);
    cmd_train(&cfg).unwrap();
    for file in [
        "manifest.json",
        "round_log.jsonl",
        "checkpoint.json",
        "metrics.json",
        "metrics.csv",
        "pca.csv",
        "knowledge_store.json",
    ] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("run_id,method,site,split,mae,sca,overlap,rounds"));
    assert_eq!(metrics.lines().count(), 5); // header + 4 sites
    let pca = std::fs::read_to_string(out.join("pca.csv")).unwrap();
    assert!(pca.starts_with("site,pc1,pc2"));
}

#[test]
fn train_on_reloaded_csv_data_works() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_generate(&resolved(&data, 4, "{}")).unwrap();
    // merge the per-site files into one CSV for ingestion
    let mut merged = String::new();
    for (i, file) in ["site0.csv", "site1.csv", "site2.csv", "site3.csv"]
        .iter()
        .enumerate()
    {
        let text = std::fs::read_to_string(data.join(file)).unwrap();
        for (ln, line) in text.lines().enumerate() {
            if i == 0 || ln > 0 {
                merged.push_str(line);
                merged.push('\n');
            }
        }
    }
    let merged_path = dir.path().join("merged.csv");
    std::fs::write(&merged_path, merged).unwrap();

    let extra = format!(
        "{{\"max_rounds\": 3, \"local_epochs\": 1, \"patience\": 1, \"data\": {{\"source\": \"csv\", \"path\": {merged_path:?}}}}}"
    );
    let out = dir.path().join("train");
    let art = cmd_train(&resolved(&out, 4, &extra)).unwrap();
    assert_eq!(art.datasets.len(), 4);
    assert_eq!(art.datasets[1].n_rows(), 182);
}

#[test]
fn compare_identical_methods_produce_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = resolved(&dir.path().join("cmp"), 5, FAST);
    let out = cmd_compare(&cfg, &[Method::Fedavg, Method::Fedavg]).unwrap();
    let a = &out.rows[0];
    let b = &out.rows[1];
    assert_eq!(a.metrics.per_site_mae, b.metrics.per_site_mae);
    assert_eq!(a.metrics.sca_percent, b.metrics.sca_percent);
    // with identical error vectors the per-site comparison is an exact tie
    assert!(out.significance.iter().all(|s| s.test.tied));
}

#[test]
fn compare_lattice_runs_all_presets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = resolved(&dir.path().join("lattice"), 6, FAST);
    let methods = [
        Method::Fedavg,
        Method::Fedprox,
        Method::Fedequal,
        Method::Fedharmony,
        Method::AblationA,
        Method::AblationB,
        Method::AblationC,
    ];
    let out = cmd_compare(&cfg, &methods).unwrap();
    assert_eq!(out.rows.len(), 7);
    let csv = std::fs::read_to_string(dir.path().join("lattice").join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8); // header + 7 methods
}

#[test]
fn labeled_sites_flag_restricts_training() {
    let dir = tempfile::tempdir().unwrap();
    let file: RunConfig = serde_json::from_str(FAST).unwrap();
    let cli = CliOverrides {
        seed: Some(7),
        out: Some(dir.path().join("semi")),
        labeled_sites: Some(vec!["site0".into()]),
        ..CliOverrides::default()
    };
    let cfg = ResolvedConfig::resolve(file, &cli).unwrap();
    let datasets = cfg.datasets().unwrap();
    let mode = cfg.training_mode(&datasets).unwrap();
    assert_eq!(mode.labeled_sites.len(), 1);
    assert!(mode.labeled_sites.contains("site0"));
    // the run itself still trains (summaries for all, updates from one)
    let art = cmd_train(&cfg).unwrap();
    let log = std::fs::read_to_string(dir.path().join("semi").join("round_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    let trained: Vec<&String> = first["per_site_train_loss"]
        .as_object()
        .unwrap()
        .keys()
        .collect();
    assert_eq!(trained.len(), 1);
    assert_eq!(trained[0], "site0");
    assert_eq!(art.datasets.len(), 4);
}

#[test]
fn stability_csv_has_sizes_times_methods_rows() {
    let dir = tempfile::tempdir().unwrap();
    let train_out = dir.path().join("train");
    let cfg = resolved(&train_out, 8, FAST);
    cmd_train(&cfg.with_method(Method::Fedavg)).unwrap();
    let stab_out = dir.path().join("stab");
    let mut stab_cfg = resolved(&stab_out, 8, "{}");
    stab_cfg.out_dir = stab_out.clone();
    let args = StabilityArgs {
        checkpoint: Some(train_out.join("checkpoint.json")),
        repeats: 20,
        sample_sizes: vec![5, 10, 20],
        ..StabilityArgs::default()
    };
    let rows = cmd_stability(&stab_cfg, &args).unwrap();
    assert_eq!(rows.len(), 6);
    let csv = std::fs::read_to_string(stab_out.join("stability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7); // header + 3 sizes x 2 methods
}

#[test]
fn exit_codes_follow_the_contract() {
    let bin = env!("CARGO_BIN_EXE_harmsim");
    let dir = tempfile::tempdir().unwrap();

    // 2: config error (unknown key)
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, "{\"bogus\": true}").unwrap();
    let status = Command::new(bin)
        .args(["train", "--config", bad_cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2), "unknown config key");

    // 2: config error (missing config file)
    let status = Command::new(bin)
        .args(["train", "--config", "/definitely/not/here.json"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2), "missing config file");

    // 3: numerical divergence (absurd learning rate)
    let div_cfg = dir.path().join("diverge.json");
    std::fs::write(
        &div_cfg,
        "{\"lr\": 1e80, \"max_rounds\": 4, \"local_epochs\": 2, \"patience\": 2}",
    )
    .unwrap();
    let status = Command::new(bin)
        .args([
            "train",
            "--config",
            div_cfg.to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            dir.path().join("div").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3), "divergence");

    // 4: I/O error (output path collides with an existing file)
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "file, not a directory").unwrap();
    let status = Command::new(bin)
        .args([
            "generate",
            "--out",
            blocker.join("sub").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4), "unwritable output dir");

    // 0: success
    let status = Command::new(bin)
        .args([
            "generate",
            "--seed",
            "1",
            "--out",
            dir.path().join("ok").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "successful generate");
}
