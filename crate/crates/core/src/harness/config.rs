use serde::{Deserialize, Serialize};

use crate::data::{NoiseConfig, SynthTaskSpec};
use crate::decode::BeamConfig;
use crate::error::{Error, Result};
use crate::metrics::FreqBuckets;
use crate::model::ModelConfig;
use crate::train::{config_hash, TrainConfig};

/// Corpus sizes drawn from the synthetic language pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSizes {
    /// Genuine bitext, split evenly between the two origins.
    pub bitext: usize,
    pub valid: usize,
    pub test_src_original: usize,
    pub test_tgt_original: usize,
    /// Monolingual sentences per side for denoising pre-training.
    pub mono_pretrain: usize,
    /// Target-side monolingual sentences to back-translate.
    pub mono_bt: usize,
    /// Held-out share of the pre-training corpus used for selection.
    pub pretrain_valid_fraction: f64,
}

impl Default for DataSizes {
    fn default() -> Self {
        DataSizes {
            bitext: 5000,
            valid: 500,
            test_src_original: 250,
            test_tgt_original: 250,
            mono_pretrain: 20000,
            mono_bt: 10000,
            pretrain_valid_fraction: 0.05,
        }
    }
}

/// Everything that defines an experiment. Every table is deny-unknown so a
/// misspelled key is an error, never a silent default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Seed of the shared pre-training and reverse-model runs.
    pub shared_seed: u64,
    pub references: bool,
    pub data: DataSizes,
    pub synth: SynthTaskSpec,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub pretrain: TrainConfig,
    /// From-scratch and PT-initialized training, and the reverse model.
    pub train: TrainConfig,
    /// Fine-tuning of the vanilla model in the BT probe.
    pub finetune: TrainConfig,
    pub beam: BeamConfig,
    /// Beam used to produce the back-translated corpus.
    pub bt_beam: BeamConfig,
    pub buckets: FreqBuckets,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig {
            total_steps: 4000,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            seeds: vec![1, 2, 3],
            shared_seed: 17,
            references: true,
            data: DataSizes::default(),
            synth: SynthTaskSpec::default(),
            model: ModelConfig::default(),
            noise: NoiseConfig::default(),
            pretrain: TrainConfig {
                total_steps: 6000,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                learning_rate: 2.5e-4,
                warmup_steps: 100,
                total_steps: 2000,
                ..TrainConfig::default()
            },
            train,
            beam: BeamConfig::default(),
            bt_beam: BeamConfig::default(),
            buckets: FreqBuckets::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ExperimentConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse_toml(&crate::data::corpus::read_file(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::ExperimentConfig("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::ExperimentConfig("seeds must be distinct".into()));
        }
        let d = &self.data;
        if d.bitext < 2 || d.valid == 0 || d.mono_pretrain < 2 || d.mono_bt == 0 {
            return Err(Error::ExperimentConfig("corpus sizes must be positive".into()));
        }
        if d.test_src_original + d.test_tgt_original == 0 {
            return Err(Error::ExperimentConfig("test set must not be empty".into()));
        }
        if !(d.pretrain_valid_fraction > 0.0 && d.pretrain_valid_fraction < 1.0) {
            return Err(Error::ExperimentConfig("pretrain_valid_fraction must lie in (0,1)".into()));
        }
        self.synth.validate()?;
        let joint = crate::data::vocab::RESERVED.len() + 2 * self.synth.content_vocab_size;
        if self.model.src_vocab_size != joint || self.model.tgt_vocab_size != joint {
            return Err(Error::ExperimentConfig(format!(
                "model vocabularies must equal the joint vocabulary size {joint}"
            )));
        }
        if self.synth.max_len + 2 > self.model.max_positions {
            return Err(Error::ExperimentConfig(format!(
                "max_positions {} too small for sentences of {} tokens",
                self.model.max_positions, self.synth.max_len
            )));
        }
        self.model.validate()?;
        self.noise.validate()?;
        for t in [&self.pretrain, &self.train, &self.finetune] {
            t.validate()?;
        }
        self.beam.validate()?;
        self.bt_beam.validate()?;
        Ok(())
    }

    /// Digest of the full configuration; names the run directory.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Training config of one seed: only `seed` differs between seeds.
    pub fn seeded(base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..base.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse() {
        let desk = ExperimentConfig::parse_toml(include_str!("../../../../configs/desk.toml")).unwrap();
        assert_eq!(desk, ExperimentConfig::default());
        let acc = ExperimentConfig::parse_toml(include_str!("../../../../configs/acceptance.toml")).unwrap();
        assert_eq!(acc.seeds.len(), 3);
        assert_eq!(acc.synth, desk.synth);
    }

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::parse_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse_toml("seedz = [1]\n").unwrap_err().to_string();
        assert!(err.contains("seedz"), "{err}");
        let err = ExperimentConfig::parse_toml("[train]\nlearning_rat = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("learning_rat"), "{err}");
    }

    #[test]
    fn empty_seed_list_rejected() {
        assert!(ExperimentConfig::parse_toml("seeds = []\n").is_err());
    }
}
