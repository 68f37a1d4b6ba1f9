use std::path::Path;

use gflsim_cli::commands::expand_grid;
use gflsim_cli::ExperimentConfig;

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn default_config_spells_out_the_defaults() {
    let cfg = ExperimentConfig::load(&configs_dir().join("default.toml")).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn every_shipped_config_loads_and_expands() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            if !cfg.sweep.grid.is_empty() {
                let (_, cells) = expand_grid(&cfg).unwrap();
                assert!(cells.len() > 1, "{}", path.display());
            }
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
