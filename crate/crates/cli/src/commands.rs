//! The four verbs: `train`, `attack`, `sweep` and `report`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gflsim_core::eval::MetricReport;
use gflsim_core::nn::{read_model, write_model};
use rayon::prelude::*;

use crate::artifacts::{
    csv_bytes, histogram_csv, matrix_csv, num, objective_trace_csv, read_matrix_csv, round_trace_csv, scored_pairs_csv,
    sha256_hex, OutputSet, RunManifest, VERSION,
};
use crate::config::ExperimentConfig;
use crate::error::{missing, CliError, CliResult, Stage, StageExt};
use crate::run::{attack_and_evaluate, load_dataset, train, AttackOutcome, TrainedView};

/// Settings that come from the command line rather than the config file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_root: PathBuf,
    pub deterministic: bool,
    /// Worker threads; 0 lets the thread pool decide.
    pub workers: usize,
}

fn short(hash: &str) -> &str {
    &hash[..12]
}

pub fn run_dir(cfg: &ExperimentConfig, root: &Path, seed: u64) -> PathBuf {
    root.join(format!("run-{}-seed{seed}", short(&cfg.training_hash())))
}

pub fn attack_dir(cfg: &ExperimentConfig, root: &Path, seed: u64) -> PathBuf {
    run_dir(cfg, root, seed).join(format!("attack-{}", short(&cfg.hash())))
}

/// Wall-clock per stage; records zeros in deterministic mode.
struct Stopwatch {
    deterministic: bool,
    last: Instant,
    seconds: BTreeMap<String, f64>,
}

impl Stopwatch {
    fn new(deterministic: bool) -> Self {
        Self {
            deterministic,
            last: Instant::now(),
            seconds: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: Stage) {
        let s = if self.deterministic {
            0.0
        } else {
            self.last.elapsed().as_secs_f64()
        };
        *self.seconds.entry(stage.to_string()).or_default() += s;
        self.last = Instant::now();
    }
}

fn manifest(command: &str, cfg: &ExperimentConfig, seeds: Vec<u64>, watch: Stopwatch) -> RunManifest {
    RunManifest {
        command: command.into(),
        version: VERSION.into(),
        config_hash: cfg.hash(),
        training_hash: cfg.training_hash(),
        seeds,
        deterministic: watch.deterministic,
        stage_seconds: watch.seconds,
        defense: cfg.defense.setting(),
        outputs: Vec::new(),
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::internal(Stage::Config, format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Trains once per seed and persists the global model, traces and (for
/// manipulated runs) the malicious client's final features.
pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Vec<PathBuf>> {
    in_pool(opts.workers, || {
        cfg.evaluation
            .seeds
            .iter()
            .map(|&seed| train_one(cfg, opts, seed))
            .collect()
    })
}

fn train_one(cfg: &ExperimentConfig, opts: &RunOptions, seed: u64) -> CliResult<PathBuf> {
    let mut watch = Stopwatch::new(opts.deterministic);
    let data = load_dataset(cfg, seed)?;
    watch.lap(Stage::Load);
    let outcome = train(cfg, &data, seed)?;
    watch.lap(Stage::Train);

    let mut files = OutputSet::default();
    files.add("config.toml", cfg.to_toml().into_bytes());
    let mut model = Vec::new();
    write_model(&outcome.state.global_model, &mut model).expect("in-memory write");
    files.add("global_model.txt", model);
    files.add("round_trace.csv", round_trace_csv(&outcome.trace));
    if let Some(attacker) = &outcome.attacker {
        files.add("objective_trace.csv", objective_trace_csv(&attacker.last_trace));
        files.add(
            "manipulated_features.csv",
            matrix_csv(attacker.manipulated_features(&outcome.state)),
        );
    }
    let dir = run_dir(cfg, &opts.out_root, seed);
    files.commit(&dir, manifest("train", cfg, vec![seed], watch))?;
    Ok(dir)
}

/// Reads a file listed in a manifest, refusing it if its digest changed.
fn read_verified(dir: &Path, manifest: &RunManifest, name: &str, stage: Stage) -> CliResult<Vec<u8>> {
    let path = dir.join(name);
    let entry = manifest
        .outputs
        .iter()
        .find(|o| o.name == name)
        .ok_or_else(|| missing(stage, path.clone(), "not listed in the train manifest"))?;
    let bytes = fs::read(&path).map_err(|e| CliError::io(stage, &path, e))?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(CliError::input(
            stage,
            format!("{}: contents do not match the train manifest", path.display()),
        ));
    }
    Ok(bytes)
}

/// Attacks every trained seed and writes scored pairs, the stealth
/// histogram and the report.
pub fn cmd_attack(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Vec<(PathBuf, MetricReport)>> {
    in_pool(opts.workers, || {
        cfg.evaluation
            .seeds
            .iter()
            .map(|&seed| attack_one(cfg, opts, seed))
            .collect()
    })
}

fn attack_one(cfg: &ExperimentConfig, opts: &RunOptions, seed: u64) -> CliResult<(PathBuf, MetricReport)> {
    let mut watch = Stopwatch::new(opts.deterministic);
    let dir = run_dir(cfg, &opts.out_root, seed);
    let manifest_path = dir.join(RunManifest::file_name("train"));
    if !manifest_path.exists() {
        return Err(missing(
            Stage::Attack,
            manifest_path,
            "no trained state for this configuration and seed; run `gflsim train` first",
        ));
    }
    let trained = RunManifest::read(&manifest_path).map_err(|e| CliError {
        stage: Stage::Attack,
        ..e
    })?;
    if trained.training_hash != cfg.training_hash() {
        return Err(CliError::input(
            Stage::Attack,
            format!("{}: trained with a different configuration", dir.display()),
        ));
    }
    let data = load_dataset(cfg, seed)?;
    let model_path = dir.join("global_model.txt");
    let model_bytes = read_verified(&dir, &trained, "global_model.txt", Stage::Load)?;
    let global_model = read_model(model_bytes.as_slice(), &model_path).stage(Stage::Load)?;
    let manipulated = if cfg.manipulation.enabled {
        read_verified(&dir, &trained, "manipulated_features.csv", Stage::Load)?;
        Some(read_matrix_csv(&dir.join("manipulated_features.csv"))?)
    } else {
        None
    };
    watch.lap(Stage::Load);

    let out = attack_and_evaluate(
        cfg,
        &data,
        TrainedView {
            global_model: &global_model,
            manipulated: manipulated.as_ref(),
        },
        seed,
    )?;
    watch.lap(Stage::Attack);
    let dir = attack_dir(cfg, &opts.out_root, seed);
    write_attack_outputs(cfg, &dir, seed, &out, watch)?;
    Ok((dir, out.report))
}

fn write_attack_outputs(
    cfg: &ExperimentConfig,
    dir: &Path,
    seed: u64,
    out: &AttackOutcome,
    watch: Stopwatch,
) -> CliResult<()> {
    let mut files = OutputSet::default();
    files.add("config.toml", cfg.to_toml().into_bytes());
    files.add(
        "scored_pairs.csv",
        scored_pairs_csv(&out.reconstruction.pairs, &out.reconstruction.scores),
    );
    files.add(
        "histogram.csv",
        histogram_csv(&out.clean_histogram, out.manipulated_histogram.as_ref()),
    );
    let mut report = out.report.to_json().into_bytes();
    report.push(b'\n');
    files.add("report.json", report);
    files.commit(dir, manifest("attack", cfg, vec![seed], watch))?;
    Ok(())
}

/// One grid point.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub values: Vec<toml::Value>,
    /// Per seed: the report, or why the run failed.
    pub runs: Vec<(u64, Result<MetricReport, String>)>,
}

impl SweepCell {
    pub fn reports(&self) -> impl Iterator<Item = &MetricReport> {
        self.runs.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    /// Mean and sample standard deviation over the successful seeds.
    pub fn mean_std(&self, metric: impl Fn(&MetricReport) -> f64) -> Option<(f64, f64)> {
        mean_std(&self.reports().map(metric).collect::<Vec<_>>())
    }
}

pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub keys: Vec<String>,
    pub cells: Vec<SweepCell>,
    pub dir: PathBuf,
}

pub const METRICS: [(&str, fn(&MetricReport) -> f64); 7] = [
    ("attack_auc", |r| r.attack_auc),
    ("attack_precision", |r| r.attack_precision),
    ("attack_ap", |r| r.attack_ap),
    ("main_acc", |r| r.main_acc),
    ("auc_cus_before", |r| r.auc_cus_before),
    ("auc_cus_after", |r| r.auc_cus_after),
    ("hist_overlap_l1", |r| r.hist_overlap_l1),
];

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Cartesian product of the grid, in key order with the last key varying
/// fastest.
pub fn expand_grid(cfg: &ExperimentConfig) -> CliResult<(Vec<String>, Vec<(Vec<toml::Value>, ExperimentConfig)>)> {
    let grid = &cfg.sweep.grid;
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(CliError::input(
            Stage::Sweep,
            "sweep.grid must list at least one value per key",
        ));
    }
    let keys: Vec<String> = grid.keys().cloned().collect();
    let mut cells: Vec<Vec<toml::Value>> = vec![Vec::new()];
    for values in grid.values() {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    let configs = cells
        .into_iter()
        .map(|values| {
            let mut c = cfg.clone();
            c.sweep = Default::default();
            for (k, v) in keys.iter().zip(&values) {
                c = c.with_override(k, v).map_err(|e| CliError {
                    stage: Stage::Sweep,
                    ..e
                })?;
            }
            Ok((values, c))
        })
        .collect::<CliResult<_>>()?;
    Ok((keys, configs))
}

/// Runs every grid cell over every seed. Cells sharing a training
/// configuration reuse one trained federation per seed; training groups run
/// in parallel. A failed run is recorded in its cell and does not stop the
/// sweep.
pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<SweepTable> {
    let mut watch = Stopwatch::new(opts.deterministic);
    let (keys, configs) = expand_grid(cfg)?;
    let seeds = cfg.evaluation.seeds.clone();
    let mut groups: BTreeMap<(String, u64), Vec<usize>> = BTreeMap::new();
    for (i, (_, c)) in configs.iter().enumerate() {
        for &seed in &seeds {
            groups.entry((c.training_hash(), seed)).or_default().push(i);
        }
    }
    let groups: Vec<(u64, Vec<usize>)> = groups.into_iter().map(|((_, s), cells)| (s, cells)).collect();
    let results: Vec<Vec<(usize, u64, Result<MetricReport, String>)>> = in_pool(opts.workers, || {
        Ok(groups
            .par_iter()
            .map(|(seed, cells)| run_group(&configs, cells, *seed))
            .collect())
    })?;
    watch.lap(Stage::Sweep);

    let mut table: Vec<SweepCell> = configs
        .iter()
        .map(|(values, _)| SweepCell {
            values: values.clone(),
            runs: Vec::new(),
        })
        .collect();
    for (cell, seed, r) in results.into_iter().flatten() {
        table[cell].runs.push((seed, r));
    }
    for cell in &mut table {
        cell.runs.sort_by_key(|(s, _)| seeds.iter().position(|x| x == s));
    }

    let dir = opts
        .out_root
        .join(format!("sweep-{}", short(&sha256_hex(cfg.to_toml().as_bytes()))));
    let mut files = OutputSet::default();
    files.add("config.toml", cfg.to_toml().into_bytes());
    files.add("sweep.csv", sweep_csv(&keys, &table));
    files.add("cells.csv", cells_csv(&keys, &table));
    files.commit(&dir, manifest("sweep", cfg, seeds, watch))?;
    Ok(SweepTable {
        keys,
        cells: table,
        dir,
    })
}

fn run_group(
    configs: &[(Vec<toml::Value>, ExperimentConfig)],
    cells: &[usize],
    seed: u64,
) -> Vec<(usize, u64, Result<MetricReport, String>)> {
    let base = &configs[cells[0]].1;
    let trained = load_dataset(base, seed).and_then(|data| Ok((train(base, &data, seed)?, data)));
    cells
        .iter()
        .map(|&i| {
            let report = match &trained {
                Ok((outcome, data)) => attack_and_evaluate(&configs[i].1, data, TrainedView::of(outcome), seed)
                    .map(|o| o.report)
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            (i, seed, report)
        })
        .collect()
}

fn sweep_csv(keys: &[String], cells: &[SweepCell]) -> Vec<u8> {
    let mut header: Vec<String> = keys.to_vec();
    header.extend(["runs_ok".into(), "runs_failed".into()]);
    for (m, _) in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header.push("errors".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(
        &header,
        cells.iter().map(|c| {
            let mut row: Vec<String> = c.values.iter().map(value_label).collect();
            let ok = c.reports().count();
            row.push(ok.to_string());
            row.push((c.runs.len() - ok).to_string());
            for (_, f) in METRICS {
                match c.mean_std(f) {
                    Some((m, s)) => row.extend([num(m), num(s)]),
                    None => row.extend([String::new(), String::new()]),
                }
            }
            let errors: Vec<String> = c
                .runs
                .iter()
                .filter_map(|(s, r)| r.as_ref().err().map(|e| format!("seed {s}: {e}")))
                .collect();
            row.push(errors.join("; "));
            row
        }),
    )
}

fn cells_csv(keys: &[String], cells: &[SweepCell]) -> Vec<u8> {
    let mut header: Vec<String> = keys.to_vec();
    header.extend(["seed".into(), "status".into()]);
    header.extend(METRICS.iter().map(|(m, _)| m.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(
        &header,
        cells.iter().flat_map(|c| {
            c.runs.iter().map(move |(seed, r)| {
                let mut row: Vec<String> = c.values.iter().map(value_label).collect();
                row.push(seed.to_string());
                match r {
                    Ok(rep) => {
                        row.push("ok".into());
                        row.extend(METRICS.iter().map(|(_, f)| num(f(rep))));
                    }
                    Err(e) => {
                        row.push(format!("failed: {e}"));
                        row.extend(METRICS.iter().map(|_| String::new()));
                    }
                }
                row
            })
        }),
    )
}

/// What `report` produced.
#[derive(Debug, Clone, Default)]
pub struct ReportSummary {
    pub text: String,
    /// Integrity problems, one per affected file.
    pub warnings: Vec<String>,
    pub written: Vec<PathBuf>,
}

/// Every `*.manifest.json` under `dir`; within a directory, its own files
/// come before its subdirectories.
fn find_manifests(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let walk = walkdir::WalkDir::new(dir)
        .sort_by(|a, b| (a.file_type().is_dir(), a.file_name()).cmp(&(b.file_type().is_dir(), b.file_name())));
    let mut out = Vec::new();
    for entry in walk {
        let entry = entry.map_err(|e| CliError::internal(Stage::Report, e.to_string()))?;
        let is_manifest = entry
            .file_name()
            .to_str()
            .is_some_and(|n| n.ends_with(".manifest.json"));
        if entry.file_type().is_file() && is_manifest {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}

/// Checks every manifest under `dir` against the files it lists, then
/// writes `summary.txt`, a normalized histogram per attack run and an
/// attack AUC matrix per sweep. Digest mismatches are warnings; a missing
/// or unreadable manifest is an error.
pub fn cmd_report(dir: &Path) -> CliResult<ReportSummary> {
    if !dir.is_dir() {
        return Err(missing(Stage::Report, dir.to_path_buf(), "not a directory"));
    }
    let manifests = find_manifests(dir)?;
    if manifests.is_empty() {
        return Err(missing(Stage::Report, dir.to_path_buf(), "no run manifest found"));
    }
    let mut summary = ReportSummary::default();
    let mut text = String::new();
    for path in &manifests {
        let m = RunManifest::read(path)?;
        let run_dir = path.parent().expect("manifest has a parent directory");
        let mut intact = BTreeMap::new();
        for o in &m.outputs {
            let file = run_dir.join(&o.name);
            let ok = match fs::read(&file) {
                Ok(bytes) if sha256_hex(&bytes) == o.sha256 => true,
                Ok(_) => {
                    summary
                        .warnings
                        .push(format!("{}: sha256 does not match the manifest", relative(dir, &file)));
                    false
                }
                Err(_) => {
                    summary
                        .warnings
                        .push(format!("{}: listed in the manifest but missing", relative(dir, &file)));
                    false
                }
            };
            intact.insert(o.name.as_str(), ok);
        }
        let label = match relative(dir, run_dir).as_str() {
            "" => ".".to_string(),
            s => s.to_string(),
        };
        let _ = writeln!(
            text,
            "== {} ({}) seeds {:?} config {} version {}",
            m.command,
            label,
            m.seeds,
            short(&m.config_hash),
            m.version
        );
        if m.defense.is_active() {
            let _ = writeln!(text, "defense: {:?} strength {}", m.defense.kind, m.defense.strength);
        }
        match m.command.as_str() {
            "train" => summarize_train(run_dir, &mut text)?,
            "attack" => {
                summarize_attack(run_dir, &mut text, &mut summary)?;
            }
            "sweep" => summarize_sweep(run_dir, &mut text, &mut summary)?,
            _ => {}
        }
        if intact.values().any(|ok| !ok) {
            let _ = writeln!(text, "WARNING: some outputs failed the integrity check");
        }
        text.push('\n');
    }
    for w in &summary.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    let out = dir.join("summary.txt");
    crate::artifacts::write_atomic(&out, text.as_bytes())?;
    summary.written.push(out);
    summary.text = text;
    Ok(summary)
}

fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let bad = |e: csv::Error| CliError::input(Stage::Report, format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(bad)?;
    let header = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(bad))
        .collect::<CliResult<_>>()?;
    Ok((header, rows))
}

fn summarize_train(dir: &Path, text: &mut String) -> CliResult<()> {
    let (_, rows) = read_csv(&dir.join("round_trace.csv"))?;
    if let Some(last) = rows.last() {
        let _ = writeln!(
            text,
            "rounds {}  final global train acc {}  val acc {}",
            last[0], last[1], last[2]
        );
    }
    Ok(())
}

fn summarize_attack(dir: &Path, text: &mut String, summary: &mut ReportSummary) -> CliResult<()> {
    let path = dir.join("report.json");
    let report = fs::read_to_string(&path)
        .map_err(|e| CliError::io(Stage::Report, &path, e))
        .and_then(|s| MetricReport::from_json(&s).stage(Stage::Report));
    match report {
        Ok(r) => {
            for (name, f) in METRICS {
                let _ = writeln!(text, "{name:<18} {:.4}", f(&r));
            }
            let _ = writeln!(text, "{:<18} {}", "seed", r.seed);
        }
        Err(e) => summary.warnings.push(e.message),
    }

    let (_, rows) = read_csv(&dir.join("histogram.csv"))?;
    let total = |col: usize| -> f64 { rows.iter().filter_map(|r| r[col].parse::<f64>().ok()).sum() };
    let (tc, tm) = (total(2), total(3));
    let frac = |v: &str, t: f64| {
        v.parse::<f64>()
            .ok()
            .filter(|_| t > 0.0)
            .map_or(String::new(), |v| num(v / t))
    };
    let out = dir.join("histogram_normalized.csv");
    crate::artifacts::write_atomic(
        &out,
        &csv_bytes(
            &["bin_left", "bin_right", "clean", "manipulated"],
            rows.iter()
                .map(|r| [r[0].clone(), r[1].clone(), frac(&r[2], tc), frac(&r[3], tm)]),
        ),
    )?;
    summary.written.push(out);
    Ok(())
}

/// `matrix.csv`: attack AUC as `mean±std`, rows over every key but the
/// last, columns over the last key.
fn summarize_sweep(dir: &Path, text: &mut String, summary: &mut ReportSummary) -> CliResult<()> {
    let (header, rows) = read_csv(&dir.join("sweep.csv"))?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(Stage::Report, format!("sweep.csv lacks column {name}")))
    };
    let nkeys = col("runs_ok")?;
    let (mean, std) = (col("attack_auc_mean")?, col("attack_auc_std")?);
    let mut row_labels: Vec<String> = Vec::new();
    let mut col_labels: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), String> = BTreeMap::new();
    for r in &rows {
        let row_label = if nkeys > 1 {
            r[..nkeys - 1].join("/")
        } else {
            "attack_auc".into()
        };
        let col_label = r[nkeys - 1].clone();
        if !row_labels.contains(&row_label) {
            row_labels.push(row_label.clone());
        }
        if !col_labels.contains(&col_label) {
            col_labels.push(col_label.clone());
        }
        let cell = match (r[mean].parse::<f64>(), r[std].parse::<f64>()) {
            (Ok(m), Ok(s)) => format!("{m:.4}±{s:.4}"),
            _ => "failed".into(),
        };
        let _ = writeln!(text, "{:<32} {}", r[..nkeys].join(" "), cell);
        cells.insert((row_label, col_label), cell);
    }
    let corner = if nkeys > 1 {
        header[..nkeys - 1].join("/")
    } else {
        String::new()
    };
    let mut head = vec![format!("{corner} \\ {}", header[nkeys - 1])];
    head.extend(col_labels.iter().cloned());
    let head: Vec<&str> = head.iter().map(String::as_str).collect();
    let out = dir.join("matrix.csv");
    crate::artifacts::write_atomic(
        &out,
        &csv_bytes(
            &head,
            row_labels.iter().map(|rl| {
                std::iter::once(rl.clone())
                    .chain(
                        col_labels
                            .iter()
                            .map(|cl| cells.get(&(rl.clone(), cl.clone())).cloned().unwrap_or_default()),
                    )
                    .collect::<Vec<_>>()
            }),
        ),
    )?;
    summary.written.push(out);
    Ok(())
}
