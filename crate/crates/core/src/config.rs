//! TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{A2cConfig, DqnConfig, PpoConfig};
use crate::bench::{MAX_OPS, MIN_OPS};
use crate::env::EnvConfig;
use crate::passes::Catalog;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Half-open seed window `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u64; 2]", into = "[u64; 2]")]
pub struct SeedRange {
    pub lo: u64,
    pub hi: u64,
}

impl From<[u64; 2]> for SeedRange {
    fn from([lo, hi]: [u64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<SeedRange> for [u64; 2] {
    fn from(r: SeedRange) -> Self {
        [r.lo, r.hi]
    }
}

impl SeedRange {
    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }

    /// First graph seed of the `count` consecutive seeds used for run seed
    /// `seed`; the whole block must fit inside the window.
    pub fn block_start(&self, seed: u64, count: usize) -> Result<u64, ConfigError> {
        let start = seed
            .checked_mul(count as u64)
            .and_then(|o| o.checked_add(self.lo))
            .filter(|s| s.checked_add(count as u64).is_some_and(|end| end <= self.hi));
        start.ok_or_else(|| {
            ConfigError::Invalid(format!(
                "seed {seed} with {count} graphs does not fit in seed range [{}, {})",
                self.lo, self.hi
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Training graphs.
    pub count: usize,
    /// Test graphs.
    pub test_count: usize,
    /// Inclusive op-count range.
    pub size_range: (usize, usize),
    pub train_seed_range: SeedRange,
    pub test_seed_range: SeedRange,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            count: 100,
            test_count: 50,
            size_range: (10, 80),
            train_seed_range: SeedRange {
                lo: 1_000_000,
                hi: 2_000_000,
            },
            test_seed_range: SeedRange {
                lo: 9_000_000,
                hi: 10_000_000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Defaults to `<directory>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("passgym-out"),
            checkpoint: None,
        }
    }
}

impl OutputConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.directory.join("checkpoint.json"))
    }

    pub fn log_path(&self) -> PathBuf {
        self.directory.join("train_log.jsonl")
    }

    pub fn train_suite_dir(&self) -> PathBuf {
        self.directory.join("suite").join("train")
    }

    pub fn test_suite_dir(&self) -> PathBuf {
        self.directory.join("suite").join("test")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub dqn: DqnConfig,
    pub a2c: A2cConfig,
    pub suite: SuiteConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<(), ConfigError> {
        self.env
            .validate(catalog)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = &self.suite;
        for (name, r) in [("train", s.train_seed_range), ("test", s.test_seed_range)] {
            if r.lo >= r.hi {
                return Err(ConfigError::Invalid(format!(
                    "{name}_seed_range [{}, {}) is empty",
                    r.lo, r.hi
                )));
            }
        }
        if s.train_seed_range.overlaps(&s.test_seed_range) {
            return Err(ConfigError::Invalid("train and test seed ranges overlap".into()));
        }
        if s.count == 0 || s.test_count == 0 {
            return Err(ConfigError::Invalid("suite counts must be positive".into()));
        }
        let (lo, hi) = s.size_range;
        if lo < MIN_OPS || hi > MAX_OPS || lo > hi {
            return Err(ConfigError::Invalid(format!(
                "size_range [{lo}, {hi}] must lie within [{MIN_OPS}, {MAX_OPS}]"
            )));
        }
        for check in [self.ppo.validate(), self.dqn.validate(), self.a2c.validate()] {
            check.map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("", Path::new("x.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate(&Catalog::standard()).unwrap();
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            seed = 3
            [env]
            horizon = 8
            shaping = { enabled = true, scale = "auto" }
            [ppo]
            total_steps = 4096
            hidden_dims = [32, 32]
            value_input_mode = "obs_plus_cost_features"
            [suite]
            size_range = [10, 40]
            train_seed_range = [0, 100]
            test_seed_range = [100, 200]
            [output]
            directory = "out"
        "#;
        let c = RunConfig::from_toml_str(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.env.horizon, 8);
        assert!(c.env.shaping.enabled);
        assert_eq!(c.ppo.hidden_dims, [32, 32]);
        assert_eq!(c.output.checkpoint_path(), Path::new("out/checkpoint.json"));
        c.validate(&Catalog::standard()).unwrap();
        let again = RunConfig::from_toml_str(&c.to_toml_string(), Path::new("y.toml")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let mut c = RunConfig::default();
        c.suite.test_seed_range = SeedRange {
            lo: 1_500_000,
            hi: 1_600_000,
        };
        assert!(c.validate(&Catalog::standard()).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("[ppo]\nlearning_rate = 1.0", Path::new("x")).is_err());
    }

    #[test]
    fn seed_blocks() {
        let r = SeedRange { lo: 100, hi: 200 };
        assert_eq!(r.block_start(0, 50).unwrap(), 100);
        assert_eq!(r.block_start(1, 50).unwrap(), 150);
        assert!(r.block_start(2, 50).is_err());
        assert!(r.block_start(u64::MAX, 50).is_err());
    }
}
