//! End-to-end tests of the `gflsim` binary on a shortened fixture.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gflsim_core::eval::MetricReport;
use gflsim_core::graph::{generate_sbm, write_graph, SbmParams};

const BIN: &str = env!("CARGO_BIN_EXE_gflsim");

/// Few rounds and steps so each run takes well under a second.
const QUICK: &str = r#"
[federation]
server_arch = "graphsage"
rounds = 6
[manipulation]
steps = 5
[attack]
epochs = 15
[evaluation]
seeds = [0]
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, body).unwrap();
    p
}

fn gflsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("GFLSIM_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

fn walk(root: &Path) -> impl Iterator<Item = PathBuf> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
}

fn find(root: &Path, name: &str) -> Vec<PathBuf> {
    walk(root).filter(|p| p.file_name().unwrap() == name).collect()
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walk(root)
        .map(|p| (p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()))
        .collect()
}

fn train_and_attack(dir: &Path, config: &str, out: &str) -> MetricReport {
    let cfg = write_config(dir, config);
    let cfg = cfg.to_str().unwrap();
    ok(gflsim(
        &["train", "--config", cfg, "--out", out, "--deterministic"],
        dir,
    ));
    ok(gflsim(
        &["attack", "--config", cfg, "--out", out, "--deterministic"],
        dir,
    ));
    let reports = find(&dir.join(out), "report.json");
    assert_eq!(reports.len(), 1);
    MetricReport::from_json(&fs::read_to_string(&reports[0]).unwrap()).unwrap()
}

#[test]
fn missing_dataset_file_is_an_input_error_in_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[dataset]\nsource = \"files\"\nnodes = \"absent.nodes\"\nedges = \"absent.edges\"\n",
    );
    let o = gflsim(&["train", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("error[load]") && err.contains("absent.nodes"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[federation]\nround = 3\n");
    let o = gflsim(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("error[config]") && err.contains("round"), "{err}");
    assert!(!dir.path().join("gflsim-runs").exists());
}

#[test]
fn attack_requires_a_trained_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let o = gflsim(&["attack", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gflsim train"), "{}", stderr(&o));
}

#[test]
fn files_dataset_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let params = SbmParams {
        num_blocks: 3,
        nodes_per_block: 30,
        p_in: 0.3,
        p_out: 0.02,
        feature_dim: 6,
        feature_shift: 1.5,
    };
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    write_graph(
        &generate_sbm(&params, 4).unwrap(),
        &data.join("g.nodes"),
        &data.join("g.edges"),
    )
    .unwrap();
    let body = format!("[dataset]\nsource = \"files\"\nnodes = \"data/g.nodes\"\nedges = \"data/g.edges\"\n{QUICK}");
    let sub = dir.path().join("cfg");
    fs::create_dir(&sub).unwrap();
    let cfg = write_config(&sub, &body.replace("\"data/", "\"../data/"));
    ok(gflsim(
        &["train", "--config", cfg.to_str().unwrap(), "--out", "o"],
        dir.path(),
    ));
    assert_eq!(find(&dir.path().join("o"), "global_model.txt").len(), 1);
}

#[test]
fn report_has_fixed_keys_and_manifest_records_defense() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{QUICK}\n[defense]\nkind = \"laplace\"\nstrength = 0.05\n");
    train_and_attack(dir.path(), &body, "o");
    let report = find(&dir.path().join("o"), "report.json").remove(0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    let mut want = vec![
        "attack_auc",
        "attack_precision",
        "attack_ap",
        "main_acc",
        "auc_cus_before",
        "auc_cus_after",
        "hist_overlap_l1",
        "seed",
        "config_hash",
    ];
    want.sort();
    let mut got = keys.clone();
    got.sort();
    assert_eq!(got, want);

    let manifest = report.with_file_name("attack.manifest.json");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    assert_eq!(m["defense"]["kind"], "laplace");
    assert_eq!(m["defense"]["strength"], 0.05);
    assert_eq!(m["deterministic"], true);
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["name"].as_str().unwrap())
        .collect();
    assert!(outputs.contains(&"report.json") && outputs.contains(&"scored_pairs.csv"));
}

#[test]
fn all_pairs_evaluation_scores_every_pair() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{QUICK}pairs = \"all\"\n");
    train_and_attack(dir.path(), &config, "o");
    let scored = find(&dir.path().join("o"), "scored_pairs.csv").remove(0);
    let lines = fs::read_to_string(scored).unwrap().lines().count();
    assert_eq!(lines, 1 + 500 * 499 / 2);
}

#[test]
fn report_summarizes_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    train_and_attack(dir.path(), QUICK, "o");
    let out = dir.path().join("o");
    let o = ok(gflsim(&["report", "o"], dir.path()));
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    for key in [
        "attack_auc",
        "attack_ap",
        "main_acc",
        "auc_cus_before",
        "hist_overlap_l1",
    ] {
        assert!(text.contains(key), "{text}");
    }
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
    assert!(out.join("summary.txt").exists());
    assert_eq!(find(&out, "histogram_normalized.csv").len(), 1);

    let report = find(&out, "report.json").remove(0);
    let mut bytes = fs::read(&report).unwrap();
    bytes.extend_from_slice(b" ");
    fs::write(&report, bytes).unwrap();
    let o = ok(gflsim(&["report", "o"], dir.path()));
    let err = stderr(&o);
    assert!(err.contains("warning") && err.contains("report.json"), "{err}");
}

#[test]
fn report_needs_a_readable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let o = gflsim(&["report", "empty"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error[report]"));

    fs::write(dir.path().join("empty/train.manifest.json"), "{ not json").unwrap();
    let o = gflsim(&["report", "empty"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("corrupt manifest"), "{}", stderr(&o));
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    train_and_attack(dir.path(), QUICK, "a");
    train_and_attack(dir.path(), QUICK, "b");
    ok(gflsim(&["report", "a"], dir.path()));
    ok(gflsim(&["report", "b"], dir.path()));
    let (a, b) = (files(&dir.path().join("a")), files(&dir.path().join("b")));
    assert!(a.len() >= 12);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(b[k] == *v, "{} differs", k.display());
    }
}

#[test]
fn attack_seed_changes_only_attack_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let base = train_and_attack(dir.path(), QUICK, "a");
    let other = train_and_attack(dir.path(), &QUICK.replace("epochs = 15", "epochs = 15\nseed = 7"), "b");
    assert_eq!(base.main_acc, other.main_acc);
    assert_eq!(base.auc_cus_before, other.auc_cus_before);
    assert_eq!(base.auc_cus_after, other.auc_cus_after);
    assert_eq!(base.hist_overlap_l1, other.hist_overlap_l1);
    assert_ne!(base.attack_auc, other.attack_auc);
    // same training, so the trained model files match
    let model = |root: &str| fs::read(find(&dir.path().join(root), "global_model.txt").remove(0)).unwrap();
    assert_eq!(model("a"), model("b"));
}

#[test]
fn benign_baseline_leaves_features_alone() {
    let dir = tempfile::tempdir().unwrap();
    let report = train_and_attack(
        dir.path(),
        &QUICK.replace("steps = 5", "steps = 5\nenabled = false"),
        "o",
    );
    assert_eq!(report.auc_cus_before, report.auc_cus_after);
    assert_eq!(report.hist_overlap_l1, 0.0);
    let out = dir.path().join("o");
    assert!(find(&out, "manipulated_features.csv").is_empty());
    assert!(find(&out, "objective_trace.csv").is_empty());
}

#[test]
fn sweep_records_failed_cells_and_report_builds_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{QUICK}\n[sweep.grid]\n\"defense.query_budget\" = [1, 1000000]\n\"attack.epochs\" = [5, 10]\n");
    let cfg = write_config(dir.path(), &body);
    let o = ok(gflsim(
        &[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "s",
            "--workers",
            "2",
        ],
        dir.path(),
    ));
    assert!(stderr(&o).contains("2 runs failed"), "{}", stderr(&o));
    let sweep = find(&dir.path().join("s"), "sweep.csv").remove(0);
    let text = fs::read_to_string(&sweep).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "{text}");
    assert!(lines[0].starts_with("attack.epochs,defense.query_budget,runs_ok,runs_failed"));
    assert!(lines[1].contains("budget exhausted"), "{}", lines[1]);
    assert!(lines[2].starts_with("5,1000000,1,0,"), "{}", lines[2]);

    ok(gflsim(&["report", "s"], dir.path()));
    let matrix = fs::read_to_string(sweep.with_file_name("matrix.csv")).unwrap();
    let rows: Vec<&str> = matrix.lines().collect();
    assert_eq!(rows.len(), 3, "{matrix}");
    assert!(rows[1].starts_with("5,failed,0."), "{matrix}");
    assert!(rows[2].contains('±'));
}

#[test]
fn sweep_without_grid_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let o = gflsim(&["sweep", "--config", cfg.to_str().unwrap(), "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error[sweep]"));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let o = Command::new(BIN)
        .args(["train", "--config", cfg.to_str().unwrap(), "--seed", "3"])
        .current_dir(dir.path())
        .env("GFLSIM_OUT", "from-env")
        .output()
        .unwrap();
    ok(o);
    let runs = find(&dir.path().join("from-env"), "train.manifest.json");
    assert_eq!(runs.len(), 1);
    assert!(runs[0].parent().unwrap().to_str().unwrap().ends_with("seed3"));
}
