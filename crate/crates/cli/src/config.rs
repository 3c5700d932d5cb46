//! Lab configuration.
//!
//! One TOML file with the sections `[sim]`, `[model]`, `[loss]`, `[trainer]`,
//! `[campaign]` and `[verify]`. Every field has a default, so an empty file is
//! valid; unknown keys are errors. Any key can be overridden from the
//! environment as `RWLAB__SECTION__KEY=value` (nested tables add further
//! `__` segments, e.g. `RWLAB__LOSS__SUPERVISION__STRONG=true`). Values are
//! read as TOML and fall back to a plain string.

use std::path::Path;

use rwlab_core::datasim::SimConfig;
use rwlab_core::losses::LossConfig;
use rwlab_core::models::ModelConfig;
use rwlab_core::theory::DescentMode;
use rwlab_core::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "RWLAB__";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub trainer: TrainerConfig,
    pub campaign: CampaignConfig,
    pub verify: VerifyConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Seeds run when `--seed` is not given. Each seed drives the simulator
    /// and the trainer of its run.
    pub seeds: Vec<u64>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig { seeds: (0..5).collect() }
    }
}

/// Settings of the verification checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub decomposition_n_mc: usize,
    pub t41_n_train: usize,
    pub t41_n_eval: usize,
    pub t41_n_mc: usize,
    pub t41_iterations: usize,
    pub t41_eta: f64,
    pub ordering_tolerance: f64,
    /// Seeds on which the orderings must hold; defaults to 80% of the seeds,
    /// rounded up.
    pub ordering_majority: Option<usize>,
    /// Also run the zero-weight representability comparison.
    pub representability: bool,
    /// Exact for full-batch runs and relaxed otherwise when not given.
    pub descent_mode: Option<DescentMode>,
    pub descent_tolerance: f64,
    pub descent_fraction: f64,
    pub trend_n_values: Vec<usize>,
    pub trend_seeds: Vec<u64>,
    pub trend_reference_n: usize,
    pub trend_n_test_per_class: usize,
    pub separation_min_quality: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            decomposition_n_mc: 100_000,
            t41_n_train: 1000,
            t41_n_eval: 100_000,
            t41_n_mc: 400_000,
            t41_iterations: 1000,
            t41_eta: 0.5,
            ordering_tolerance: 1e-3,
            ordering_majority: None,
            representability: true,
            descent_mode: None,
            descent_tolerance: 1e-9,
            descent_fraction: 0.95,
            trend_n_values: vec![50, 100, 200, 400, 800],
            trend_seeds: (0..5).collect(),
            trend_reference_n: 6400,
            trend_n_test_per_class: 2000,
            separation_min_quality: None,
        }
    }
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> CliResult<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::input(format!("config key `{p}` is not a section")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

impl LabConfig {
    /// Parses TOML text; errors carry the line, column and field.
    pub fn from_toml(text: &str, origin: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::input(format!("{origin}: {e}")))
    }

    /// Reads the file (or starts from defaults) and applies environment
    /// overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let (text, origin) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::input(format!("cannot read config {}: {e}", p.display())))?;
                (text, p.display().to_string())
            }
            None => (String::new(), "<defaults>".to_owned()),
        };
        let base = Self::from_toml(&text, &origin)?;
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        if overrides.is_empty() {
            return Ok(base);
        }
        overrides.sort();
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::input(format!("{origin}: {e}")))?;
        for (key, raw) in &overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_lowercase()).collect();
            if path.len() < 2 || path.iter().any(|s| s.is_empty()) {
                return Err(CliError::input(format!("{key}: expected {ENV_PREFIX}SECTION__KEY")));
            }
            set_path(&mut table, &path, parse_env_value(raw))?;
        }
        let names: Vec<&str> = overrides.iter().map(|(k, _)| k.as_str()).collect();
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::input(format!("{origin} with overrides {}: {e}", names.join(", "))))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Trainer settings with the model and loss sections attached.
    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig { model: self.model.clone(), loss: self.loss.clone(), ..self.trainer.clone() }
    }

    /// The configuration of the run driven by `seed`.
    pub fn for_seed(&self, seed: u64) -> LabConfig {
        let mut c = self.clone();
        c.sim.seed = seed;
        c.trainer.seed = seed;
        c
    }

    /// `--seed` when given, else the campaign seeds.
    pub fn seeds(&self, flag: Option<u64>) -> Vec<u64> {
        flag.map_or_else(|| self.campaign.seeds.clone(), |s| vec![s])
    }

    pub fn validate(&self) -> CliResult<()> {
        self.sim.validate()?;
        self.trainer().validate()?;
        let s = &self.campaign.seeds;
        if s.is_empty() {
            return Err(CliError::input("campaign.seeds is empty"));
        }
        if (1..s.len()).any(|i| s[..i].contains(&s[i])) {
            return Err(CliError::input("campaign.seeds has duplicates"));
        }
        let v = &self.verify;
        if let Some(q) = v.separation_min_quality {
            if !(0.0..=1.0).contains(&q) {
                return Err(CliError::input("verify.separation_min_quality must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&v.descent_fraction) {
            return Err(CliError::input("verify.descent_fraction must lie in [0, 1]"));
        }
        if !(v.ordering_tolerance >= 0.0 && v.descent_tolerance >= 0.0) {
            return Err(CliError::input("verify tolerances must be >= 0"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of this configuration followed by
    /// the seeds.
    pub fn run_id(&self, seeds: &[u64]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        for s in seeds {
            h.update(b"\n");
            h.update(s.to_string().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(LabConfig::from_toml("", "x").unwrap(), LabConfig::default());
    }

    #[test]
    fn unknown_key_is_reported_with_its_line() {
        let err = LabConfig::from_toml("[sim]\ngamma = 0.1\nexpansion = 3\n", "lab.toml").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("expansion"), "{err}");
        let err = LabConfig::from_toml("[simulation]\n", "lab.toml").unwrap_err().to_string();
        assert!(err.contains("simulation"), "{err}");
    }

    #[test]
    fn env_overrides_are_typed() {
        let c = LabConfig::load(
            None,
            env(&[
                ("RWLAB__SIM__GAMMA", "0.5"),
                ("RWLAB__TRAINER__ITERATIONS", "7"),
                ("RWLAB__LOSS__SUPERVISION__STRONG", "true"),
                ("RWLAB__CAMPAIGN__SEEDS", "[3, 4]"),
                ("OTHER", "1"),
            ]),
        )
        .unwrap();
        assert_eq!(c.sim.gamma, 0.5);
        assert_eq!(c.trainer.iterations, 7);
        assert!(c.loss.supervision.strong);
        assert_eq!(c.campaign.seeds, vec![3, 4]);
        let err = LabConfig::load(None, env(&[("RWLAB__SIM__GAMA", "0.5")])).unwrap_err().to_string();
        assert!(err.contains("RWLAB__SIM__GAMA") && err.contains("gama"), "{err}");
    }

    #[test]
    fn run_id_depends_on_config_and_seed_only() {
        let c = LabConfig::default();
        assert_eq!(c.run_id(&[1]), c.clone().run_id(&[1]));
        assert_ne!(c.run_id(&[1]), c.run_id(&[2]));
        let mut d = c.clone();
        d.trainer.eta_theta = 0.01;
        assert_ne!(c.run_id(&[1]), d.run_id(&[1]));
        assert_eq!(c.run_id(&[1]).len(), 64);
    }
}
