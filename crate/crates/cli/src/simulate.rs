use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rwlab_core::datasim::{augment, make_original, make_test};
use rwlab_core::io;

use crate::config::LabConfig;
use crate::data::{ORIGINALS, POOL, TEST};
use crate::error::{io_at, CliResult};
use crate::manifest::RunDir;

/// One simulation run per seed: originals, pool (with the hidden class
/// column), test set and the effective config.
pub fn simulate(cfg: &LabConfig, seeds: &[u64], out: &Path) -> CliResult<Vec<PathBuf>> {
    let results: Vec<CliResult<PathBuf>> = seeds.par_iter().map(|&s| simulate_one(&cfg.for_seed(s), s, out)).collect();
    results.into_iter().collect()
}

fn simulate_one(cfg: &LabConfig, seed: u64, out: &Path) -> CliResult<PathBuf> {
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let mut run = RunDir::begin(out, "simulate", cfg.run_id(&[seed]), vec![seed], echo, Vec::new())?;
    let res = (|| -> CliResult<()> {
        let originals = make_original(&cfg.sim)?;
        let (pool, truth) = augment(&originals, &cfg.sim)?;
        let test = make_test(&cfg.sim)?;
        io::write_originals(&run.artifact("originals", ORIGINALS)?, &originals)?;
        io::write_pool(&run.artifact("pool", POOL)?, &pool, Some(&truth))?;
        io::write_originals(&run.artifact("test", TEST)?, &test)?;
        let path = run.artifact("config", "config.toml")?;
        io_at(&path, std::fs::write(&path, cfg.to_toml()))
    })();
    run.finish(res).map(|(_, p)| p)
}
