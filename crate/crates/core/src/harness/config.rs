use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attestation::AttestationConfig;
use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointParams;
use crate::learning::{MlpShape, TrainConfig, DEFAULT_SPREAD};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    CircuitScaling,
    SelectionSweep,
    VeriVsRand,
    AdversaryAudit,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::CircuitScaling, Scenario::SelectionSweep, Scenario::VeriVsRand, Scenario::AdversaryAudit];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::CircuitScaling => "circuit-scaling",
            Scenario::SelectionSweep => "selection-sweep",
            Scenario::VeriVsRand => "veri-vs-rand",
            Scenario::AdversaryAudit => "adversary-audit",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    #[default]
    Synthetic,
    /// MNIST-layout IDX files, pooled down to `data.input_dim` features.
    IdxFiles { train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub input_dim: usize,
    pub classes: usize,
    pub samples_per_client: usize,
    pub root_samples: usize,
    pub test_samples: usize,
    /// Feature noise level of each client, fixed for the whole run. Its
    /// length is the number of clients K.
    pub client_noise: Vec<f64>,
    /// Within-class standard deviation of the synthetic blobs.
    pub spread: f64,
    /// Seed of the synthetic class means, shared by every run.
    pub layout_seed: u64,
}

/// Five clients at each of the levels 0, 0.3, 0.6 and 1.0.
pub fn four_level_noise() -> Vec<f64> {
    [0.0, 0.3, 0.6, 1.0].iter().flat_map(|&s| std::iter::repeat(s).take(5)).collect()
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input_dim: 64,
            classes: 10,
            samples_per_client: 600,
            root_samples: 400,
            test_samples: 2000,
            client_noise: four_level_noise(),
            spread: DEFAULT_SPREAD,
            layout_seed: 1,
        }
    }
}

/// Adversarial clients, assigned to the lowest client ids in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryMix {
    pub metric_forgers: usize,
    pub model_swappers: usize,
    pub invalid_proof: usize,
}

impl AdversaryMix {
    pub fn total(&self) -> usize {
        self.metric_forgers + self.model_swappers + self.invalid_proof
    }
}

/// Everything one experiment needs; read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    pub scenario: Scenario,
    /// Circuit sizes swept by `circuit-scaling`.
    pub model_sizes: Vec<usize>,
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub dataset_source: DatasetSource,
    pub data: DataConfig,
    /// Hidden layer widths of the MLP trained in the learning scenarios.
    pub hidden: Vec<usize>,
    pub rounds: usize,
    pub client_train: TrainConfig,
    pub benchmark_train: TrainConfig,
    pub fixed_point: FixedPointParams,
    pub attestation: AttestationConfig,
    pub adversaries: AdversaryMix,
    pub timing_repetitions: usize,
    /// Sweep points run at once; 0 uses every core.
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let client_train = TrainConfig { epochs: 2, lr: 0.5, ..Default::default() };
        ExperimentConfig {
            config_version: CONFIG_VERSION,
            scenario: Scenario::SelectionSweep,
            model_sizes: vec![8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096],
            n_values: vec![4, 8, 12, 16, 20],
            seeds: vec![1, 2, 3, 4, 5],
            dataset_source: DatasetSource::Synthetic,
            data: DataConfig::default(),
            hidden: vec![14],
            rounds: 20,
            benchmark_train: TrainConfig { epochs: 1, ..client_train.clone() },
            client_train,
            fixed_point: FixedPointParams::default(),
            attestation: AttestationConfig::default(),
            adversaries: AdversaryMix::default(),
            timing_repetitions: 5,
            parallelism: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape::new(self.data.input_dim, self.hidden.clone(), self.data.classes)
    }

    pub fn clients(&self) -> usize {
        self.data.client_noise.len()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes to JSON");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.config_version != CONFIG_VERSION {
            return bad(format!("config_version {} is not {CONFIG_VERSION}", self.config_version));
        }
        if self.seeds.is_empty() || self.n_values.is_empty() || self.model_sizes.is_empty() {
            return bad("seeds, n_values and model_sizes must be non-empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if let Some(d) = self.model_sizes.iter().find(|&&d| d == 0 || d > self.fixed_point.max_dim) {
            return bad(format!("model size {d} outside 1..={}", self.fixed_point.max_dim));
        }
        let k = self.clients();
        if k == 0 {
            return bad("client_noise must list at least one client".into());
        }
        if let Some(n) = self.n_values.iter().find(|&&n| n == 0 || n > k) {
            return bad(format!("N = {n} outside 1..={k}"));
        }
        if self.data.client_noise.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("noise levels must be finite and non-negative".into());
        }
        if self.adversaries.total() > k {
            return bad(format!("{} adversaries among {k} clients", self.adversaries.total()));
        }
        let dc = &self.data;
        if dc.input_dim == 0 || dc.classes < 2 || dc.samples_per_client == 0 || dc.root_samples == 0 || dc.test_samples == 0 {
            return bad("data dimensions and sample counts must be positive, with at least two classes".into());
        }
        if !(dc.spread.is_finite() && dc.spread >= 0.0) {
            return bad("spread must be finite and non-negative".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.rounds == 0 || self.timing_repetitions == 0 {
            return bad("rounds and timing_repetitions must be at least 1".into());
        }
        self.fixed_point.validate()?;
        self.attestation.validate()?;
        self.client_train.validate()?;
        self.benchmark_train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.shape().num_params(), 1060);
        assert_eq!(cfg.clients(), 20);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("config_version = 1\nscenario = \"veri-vs-rand\"\nn_values = [4]\n").unwrap();
        assert_eq!(cfg.scenario, Scenario::VeriVsRand);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        let idx = "config_version = 1\n[dataset_source]\nkind = \"idx_files\"\ntrain_images = \"a\"\ntrain_labels = \"b\"\ntest_images = \"c\"\ntest_labels = \"d\"\n";
        assert!(matches!(ExperimentConfig::from_toml(idx).unwrap().dataset_source, DatasetSource::IdxFiles { .. }));
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "config_version = 2",
            "seeds = []",
            "seeds = [1, 1]",
            "n_values = [21]",
            "model_sizes = [5000]",
            "rounds = 0",
            "unknown = 3",
            "[adversaries]\nmetric_forgers = 30",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { rounds: 5, ..a.clone() };
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn scenario_names_parse() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("sweep".parse::<Scenario>().is_err());
    }
}
