use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::corpus::{lines_text, read_file, read_sentences, sentences_digest, write_file};
use crate::data::vocab::TokenId;
use crate::data::{apply_denoise_noise, mix_corpora, CorpusFiles, Origin, SentencePair, SynthTask, Vocab};
use crate::decode::{read_meta, translate_all, write_meta, BackTranslation, BeamConfig, DecodeMeta};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, target_frequencies, EvalReport};
use crate::model::{Checkpoint, InitMask, Model, Provenance, Stage};
use crate::train::{config_hash, train, FreezeMask, RunManifest, TrainConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// All corpora of one experiment, regenerated deterministically from the
/// synthetic task spec.
#[derive(Clone, Debug)]
pub struct Corpora {
    pub bitext: Vec<SentencePair>,
    pub valid: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
    pub mono_src: Vec<Vec<TokenId>>,
    pub mono_tgt: Vec<Vec<TokenId>>,
    /// Target-side monolingual text reserved for back-translation.
    pub mono_bt: Vec<Vec<TokenId>>,
}

impl Corpora {
    pub fn generate(cfg: &ExperimentConfig, task: &SynthTask) -> Result<Self> {
        let d = &cfg.data;
        let half = d.bitext / 2;
        let mut bitext = task.parallel(half, Origin::SrcOriginal, 0)?;
        bitext.extend(task.parallel(d.bitext - half, Origin::TgtOriginal, 0)?);
        let vhalf = d.valid / 2;
        let mut valid = task.parallel(vhalf, Origin::SrcOriginal, 1)?;
        valid.extend(task.parallel(d.valid - vhalf, Origin::TgtOriginal, 1)?);
        let mut test = task.parallel(d.test_src_original, Origin::SrcOriginal, 2)?;
        test.extend(task.parallel(d.test_tgt_original, Origin::TgtOriginal, 2)?);
        Ok(Corpora {
            bitext,
            valid,
            test,
            mono_src: task.monolingual(d.mono_pretrain, Origin::SrcOriginal, 3)?,
            mono_tgt: task.monolingual(d.mono_pretrain, Origin::TgtOriginal, 3)?,
            mono_bt: task.monolingual(d.mono_bt, Origin::TgtOriginal, 4)?,
        })
    }

    /// Role → content digest.
    pub fn digests(&self) -> BTreeMap<String, String> {
        use crate::data::corpus::corpus_digest;
        BTreeMap::from([
            ("bitext".to_string(), corpus_digest(&self.bitext)),
            ("valid".to_string(), corpus_digest(&self.valid)),
            ("test".to_string(), corpus_digest(&self.test)),
            ("mono_src".to_string(), sentences_digest(&self.mono_src)),
            ("mono_tgt".to_string(), sentences_digest(&self.mono_tgt)),
            ("mono_bt".to_string(), sentences_digest(&self.mono_bt)),
        ])
    }

    /// Writes every corpus as line-based files under `dir`.
    pub fn write(&self, dir: &Path, vocab: &Vocab) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (name, pairs) in [("bitext", &self.bitext), ("valid", &self.valid), ("test", &self.test)] {
            let files = CorpusFiles::with_prefix(&dir.join(name));
            crate::data::corpus::write_corpus(&files, vocab, pairs)?;
            out.extend([files.src, files.tgt, files.origin]);
        }
        for (name, sents) in [("mono_src", &self.mono_src), ("mono_tgt", &self.mono_tgt), ("mono_bt", &self.mono_bt)] {
            let p = dir.join(format!("{name}.txt"));
            write_file(&p, &lines_text(vocab, sents.iter().map(Vec::as_slice)))?;
            out.push(p);
        }
        let p = dir.join("vocab.txt");
        write_file(&p, &vocab.to_file_string())?;
        out.push(p);
        Ok(out)
    }
}

/// Denoising pairs (noised → original) from both monolingual sides.
pub fn denoising_corpus(cfg: &ExperimentConfig, mono_src: &[Vec<TokenId>], mono_tgt: &[Vec<TokenId>]) -> Result<Vec<SentencePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let mut out = Vec::with_capacity(mono_src.len() + mono_tgt.len());
    // Interleave the sides so the held-out tail covers both languages.
    let n = mono_src.len().max(mono_tgt.len());
    for i in 0..n {
        for (side, origin) in [(mono_src, Origin::SrcOriginal), (mono_tgt, Origin::TgtOriginal)] {
            if let Some(s) = side.get(i) {
                let (noised, original) = apply_denoise_noise(s, &cfg.noise, &mut rng)?;
                out.push(SentencePair::new(noised, original, origin)?);
            }
        }
    }
    Ok(out)
}

/// Record written next to every command's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Input role → content digest.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
    /// Output name → digest (reports, hypotheses, checkpoints).
    pub outputs: BTreeMap<String, String>,
}

impl CommandManifest {
    pub fn new(command: &str, cfg_hash: &str, seeds: &[u64]) -> Self {
        CommandManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_hash: cfg_hash.to_string(),
            seeds: seeds.to_vec(),
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json())
    }
}

/// Decoded test-set output of one system and seed.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub hyps: Vec<Vec<TokenId>>,
    pub report: EvalReport,
}

/// Experiment state: corpora, and lazily built models, back-translations
/// and evaluations. With a run directory every artifact is persisted there
/// and reused on later calls.
pub struct Workbench {
    cfg: ExperimentConfig,
    hash: String,
    run_dir: Option<PathBuf>,
    task: SynthTask,
    data: Corpora,
    train_freqs: HashMap<TokenId, u64>,
    pretrained: Option<Checkpoint>,
    reverse: Option<Model>,
    bt: Option<BackTranslation>,
    models: BTreeMap<(String, u64), Model>,
    decoded: BTreeMap<(String, u64), Decoded>,
    manifests: BTreeMap<String, RunManifest>,
}

fn ckpt_name(key: &str, seed: u64) -> String {
    format!("{key}.seed{seed}")
}

impl Workbench {
    /// In-memory workbench; nothing is written to disk.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let task = SynthTask::new(cfg.synth.clone())?;
        let data = Corpora::generate(&cfg, &task)?;
        let train_freqs = target_frequencies(data.bitext.iter().map(SentencePair::tgt));
        Ok(Workbench {
            hash: cfg.hash(),
            cfg,
            run_dir: None,
            task,
            data,
            train_freqs,
            pretrained: None,
            reverse: None,
            bt: None,
            models: BTreeMap::new(),
            decoded: BTreeMap::new(),
            manifests: BTreeMap::new(),
        })
    }

    /// Workbench persisting under `<root>/<config hash prefix>/`.
    pub fn with_run_root(cfg: ExperimentConfig, root: &Path) -> Result<Self> {
        let mut wb = Self::new(cfg)?;
        let dir = root.join(&wb.hash[..16]);
        for sub in ["", "data", "models", "hyps", "reports", "manifests"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        write_file(&dir.join("config.toml"), &wb.cfg.to_toml())?;
        wb.run_dir = Some(dir);
        Ok(wb)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.run_dir.as_deref()
    }

    pub fn task(&self) -> &SynthTask {
        &self.task
    }

    pub fn vocab(&self) -> &Vocab {
        self.task.vocab()
    }

    pub fn corpora(&self) -> &Corpora {
        &self.data
    }

    /// Target-side word counts of the genuine bitext.
    pub fn train_freqs(&self) -> &HashMap<TokenId, u64> {
        &self.train_freqs
    }

    /// Per-run training manifests recorded so far, keyed by artifact name.
    pub fn run_manifests(&self) -> &BTreeMap<String, RunManifest> {
        &self.manifests
    }

    fn path(&self, sub: &str) -> Option<PathBuf> {
        self.run_dir.as_ref().map(|d| d.join(sub))
    }

    pub fn write_data(&self) -> Result<Vec<PathBuf>> {
        match self.path("data") {
            Some(dir) => self.data.write(&dir, self.vocab()),
            None => Ok(Vec::new()),
        }
    }

    /// Trains (or reloads) the shared denoising model.
    pub fn pretrain(&mut self) -> Result<&Checkpoint> {
        if self.pretrained.is_none() {
            let path = self.path("models/pretrained.ckpt");
            let ckpt = match &path {
                Some(p) if p.exists() => Checkpoint::load_for(p, &self.cfg.model)?,
                _ => {
                    let corpus = denoising_corpus(&self.cfg, &self.data.mono_src, &self.data.mono_tgt)?;
                    let n_valid = ((corpus.len() as f64 * self.cfg.data.pretrain_valid_fraction).round() as usize).clamp(1, corpus.len() - 1);
                    let (tr, va) = corpus.split_at(corpus.len() - n_valid);
                    let seed = self.cfg.shared_seed;
                    let tcfg = ExperimentConfig::seeded(&self.cfg.pretrain, seed);
                    info!("pretraining on {} denoising pairs", tr.len());
                    let model = Model::build(self.cfg.model.clone(), seed)?;
                    let out = train(model, tr, va, &tcfg, &FreezeMask::none())?;
                    let manifest = self.manifest(&tcfg, "fresh", &FreezeMask::none(), &[("denoise_train", tr), ("denoise_valid", va)], &out);
                    self.record("pretrained", manifest, &out.log)?;
                    let ckpt = Checkpoint::new(out.best, Provenance::new(Stage::Pretrained, seed, out.best_step).labelled("denoising"));
                    if let Some(p) = &path {
                        ckpt.save(p)?;
                    }
                    ckpt
                }
            };
            self.pretrained = Some(ckpt);
        }
        Ok(self.pretrained.as_ref().unwrap())
    }

    /// The pretrained checkpoint, which must already exist in memory or in
    /// the run directory.
    pub fn pretrained(&mut self) -> Result<&Checkpoint> {
        if self.pretrained.is_none() {
            match self.path("models/pretrained.ckpt") {
                Some(p) if p.exists() => self.pretrained = Some(Checkpoint::load_for(&p, &self.cfg.model)?),
                p => {
                    return Err(Error::MissingArtifact {
                        what: "pretrained checkpoint (run `pretrain` first)",
                        path: p.unwrap_or_else(|| PathBuf::from("<memory>")),
                    })
                }
            }
        }
        Ok(self.pretrained.as_ref().unwrap())
    }

    /// Installs an externally produced pretrained checkpoint.
    pub fn set_pretrained(&mut self, ckpt: Checkpoint) -> Result<()> {
        if !ckpt.model.config().same_geometry(&self.cfg.model) {
            return Err(Error::ConfigMismatch("pretrained checkpoint geometry".into()));
        }
        self.pretrained = Some(ckpt);
        Ok(())
    }

    fn manifest(
        &self,
        tcfg: &TrainConfig,
        init: &str,
        mask: &FreezeMask,
        corpora: &[(&str, &[SentencePair])],
        out: &crate::train::TrainOutcome,
    ) -> RunManifest {
        RunManifest {
            seed: tcfg.seed,
            config_hash: config_hash(&(&self.cfg.model, tcfg)),
            model: self.cfg.model.clone(),
            train: tcfg.clone(),
            init: init.to_string(),
            freeze: mask.to_string(),
            corpus_digests: corpora
                .iter()
                .map(|(k, v)| (k.to_string(), crate::data::corpus::corpus_digest(v)))
                .collect(),
            best_step: out.best_step,
            best_valid_ppl: out.best_ppl,
            steps: out.steps,
        }
    }

    fn record(&mut self, name: &str, manifest: RunManifest, log: &crate::train::TrainLog) -> Result<()> {
        if let Some(dir) = self.path("manifests") {
            manifest.save(&dir.join(format!("{name}.json")))?;
            write_file(&dir.join(format!("{name}.log.tsv")), &log.to_tsv())?;
        }
        self.manifests.insert(name.to_string(), manifest);
        Ok(())
    }

    /// Trains `init` under `key`/`seed`, or returns the cached result.
    #[allow(clippy::too_many_arguments)]
    pub fn train_cached(
        &mut self,
        key: &str,
        seed: u64,
        init: impl FnOnce(&mut Self) -> Result<(Model, String)>,
        corpus: &[SentencePair],
        tcfg: &TrainConfig,
        mask: &FreezeMask,
    ) -> Result<Model> {
        let id = (key.to_string(), seed);
        if let Some(m) = self.models.get(&id) {
            return Ok(m.clone());
        }
        let name = ckpt_name(key, seed);
        let path = self.path(&format!("models/{name}.ckpt"));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let m = Checkpoint::load_for(p, &self.cfg.model)?.model;
            if let Some(mp) = self.path(&format!("manifests/{name}.json")).filter(|p| p.exists()) {
                self.manifests.insert(name.clone(), RunManifest::parse(&read_file(&mp)?)?);
            }
            self.models.insert(id, m.clone());
            return Ok(m);
        }
        let (model, init_label) = init(self)?;
        info!("training {name} on {} pairs ({init_label}, update {mask})", corpus.len());
        let out = train(model, corpus, &self.data.valid, tcfg, mask)?;
        let manifest = self.manifest(tcfg, &init_label, mask, &[("train", corpus), ("valid", &self.data.valid)], &out);
        self.record(&name, manifest, &out.log)?;
        if let Some(p) = &path {
            Checkpoint::new(out.best.clone(), Provenance::new(Stage::Trained, seed, out.best_step).labelled(key)).save(p)?;
        }
        self.models.insert(id, out.best.clone());
        Ok(out.best)
    }

    /// Model trained on bitext from an `InitMask`-selected initialization.
    pub fn pt_model(&mut self, mask: InitMask, seed: u64) -> Result<Model> {
        let key = format!("pt-{mask}");
        let tcfg = ExperimentConfig::seeded(&self.cfg.train, seed);
        let bitext = self.data.bitext.clone();
        self.train_cached(
            &key,
            seed,
            |wb| {
                let template = Model::build(wb.cfg.model.clone(), seed)?;
                let model = if mask == InitMask::NN {
                    template
                } else {
                    let ckpt = wb.pretrained()?;
                    crate::model::selective_init(&template, ckpt, mask, seed)?
                };
                Ok((model, format!("init {mask}")))
            },
            &bitext,
            &tcfg,
            &FreezeMask::none(),
        )
    }

    /// Bitext-only from-scratch model; the NN row of the PT probe.
    pub fn vanilla(&mut self, seed: u64) -> Result<Model> {
        self.pt_model(InitMask::NN, seed)
    }

    /// Target→source model trained on the reversed bitext.
    pub fn reverse_model(&mut self) -> Result<Model> {
        if let Some(m) = &self.reverse {
            return Ok(m.clone());
        }
        let seed = self.cfg.shared_seed;
        let path = self.path("models/reverse.ckpt");
        let model = match &path {
            Some(p) if p.exists() => Checkpoint::load_for(p, &self.cfg.model)?.model,
            _ => {
                let tcfg = ExperimentConfig::seeded(&self.cfg.train, seed);
                let rev: Vec<SentencePair> = self.data.bitext.iter().map(SentencePair::reversed).collect();
                let rev_valid: Vec<SentencePair> = self.data.valid.iter().map(SentencePair::reversed).collect();
                info!("training reverse model on {} pairs", rev.len());
                let out = train(Model::build(self.cfg.model.clone(), seed)?, &rev, &rev_valid, &tcfg, &FreezeMask::none())?;
                let manifest = self.manifest(&tcfg, "fresh", &FreezeMask::none(), &[("train", &rev), ("valid", &rev_valid)], &out);
                self.record("reverse", manifest, &out.log)?;
                if let Some(p) = &path {
                    Checkpoint::new(out.best.clone(), Provenance::new(Stage::Trained, seed, out.best_step).labelled("reverse")).save(p)?;
                }
                out.best
            }
        };
        self.reverse = Some(model.clone());
        Ok(model)
    }

    /// Untagged synthetic corpus from back-translating the monolingual
    /// target text with the reverse model.
    pub fn back_translation(&mut self) -> Result<BackTranslation> {
        if let Some(bt) = &self.bt {
            return Ok(bt.clone());
        }
        let files = self.path("data/bt").map(|p| CorpusFiles::with_prefix(&p));
        let meta_path = self.path("data/bt.meta");
        let bt = match (&files, &meta_path) {
            (Some(f), Some(m)) if f.exists() && m.exists() => BackTranslation {
                pairs: crate::data::corpus::read_corpus(f, self.vocab())?,
                meta: read_meta(m)?,
            },
            _ => {
                let reverse = self.reverse_model()?;
                info!("back-translating {} sentences", self.data.mono_bt.len());
                let bt = crate::decode::back_translate(&reverse, &self.data.mono_bt, &self.cfg.bt_beam, false)?;
                if let (Some(f), Some(m)) = (&files, &meta_path) {
                    crate::data::corpus::write_corpus(f, self.vocab(), &bt.pairs)?;
                    write_meta(m, &bt.meta)?;
                }
                bt
            }
        };
        self.bt = Some(bt.clone());
        Ok(bt)
    }

    /// Genuine bitext plus the back-translated corpus.
    pub fn bt_mix(&mut self, tagged: bool) -> Result<Vec<SentencePair>> {
        let bt = self.back_translation()?;
        mix_corpora(&self.data.bitext, &bt.pairs, tagged)
    }

    /// Vanilla model fine-tuned on bitext+BT with the encoder and decoder
    /// updated according to `mask` (`Y` = updated).
    pub fn bt_finetuned(&mut self, mask: FreezeMask, seed: u64) -> Result<Model> {
        if mask.frozen().len() == crate::model::ParamGroup::ALL.len() {
            return self.vanilla(seed);
        }
        let key = format!("bt-{mask}");
        let tcfg = ExperimentConfig::seeded(&self.cfg.finetune, seed);
        let mix = self.bt_mix(false)?;
        self.train_cached(
            &key,
            seed,
            |wb| {
                let v = wb.vanilla(seed)?;
                let label = format!("vanilla {}", v.full_digest());
                Ok((v, label))
            },
            &mix,
            &tcfg,
            &mask,
        )
    }

    /// From-scratch (or PT-initialized) training on bitext+BT.
    pub fn bt_system(&mut self, tagged: bool, pt: bool, seed: u64) -> Result<Model> {
        let key = format!("{}{}", if tagged { "tbt" } else { "bt" }, if pt { "-pt" } else { "" });
        let tcfg = ExperimentConfig::seeded(&self.cfg.train, seed);
        let mix = self.bt_mix(tagged)?;
        self.train_cached(
            &key,
            seed,
            |wb| {
                let template = Model::build(wb.cfg.model.clone(), seed)?;
                if pt {
                    let ckpt = wb.pretrained()?;
                    Ok((crate::model::selective_init(&template, ckpt, InitMask::YY, seed)?, "init YY".to_string()))
                } else {
                    Ok((template, "fresh".to_string()))
                }
            },
            &mix,
            &tcfg,
            &FreezeMask::none(),
        )
    }

    /// Decodes the test set with `model` and scores it; cached by key.
    pub fn decode_test(&mut self, key: &str, seed: u64, model: &Model) -> Result<Decoded> {
        let id = (key.to_string(), seed);
        if let Some(d) = self.decoded.get(&id) {
            return Ok(d.clone());
        }
        let name = ckpt_name(key, seed);
        let path = self.path(&format!("hyps/{name}.txt"));
        let hyps = match &path {
            Some(p) if p.exists() => read_sentences(p, self.vocab())?,
            _ => {
                let srcs: Vec<Vec<TokenId>> = self.data.test.iter().map(|p| p.src().to_vec()).collect();
                let out = translate_all(model, &srcs, &self.cfg.beam)?;
                let hyps: Vec<Vec<TokenId>> = out.iter().map(|h| h.content().to_vec()).collect();
                if let Some(p) = &path {
                    write_file(p, &lines_text(self.vocab(), hyps.iter().map(Vec::as_slice)))?;
                    let meta: Vec<DecodeMeta> = out.iter().map(DecodeMeta::from).collect();
                    write_meta(&p.with_extension("meta"), &meta)?;
                }
                hyps
            }
        };
        let report = evaluate(&self.data.test, &hyps, &self.train_freqs, &self.cfg.buckets, name)?;
        let d = Decoded { hyps, report };
        self.decoded.insert(id, d.clone());
        Ok(d)
    }

    pub fn beam(&self) -> &BeamConfig {
        &self.cfg.beam
    }

    /// Saves a report in text, TSV and JSON under `reports/`.
    pub fn save_report(&self, name: &str, table: &super::ReportTable) -> Result<Vec<PathBuf>> {
        let Some(dir) = self.path("reports") else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for (ext, body) in [("txt", table.to_text()), ("tsv", table.to_tsv()), ("json", table.to_json())] {
            let p = dir.join(format!("{name}.{ext}"));
            write_file(&p, &body)?;
            out.push(p);
        }
        Ok(out)
    }

    pub fn save_command_manifest(&self, m: &CommandManifest) -> Result<Option<PathBuf>> {
        let Some(dir) = self.path("manifests") else {
            return Ok(None);
        };
        let p = dir.join(format!("command-{}.json", m.command));
        m.save(&p)?;
        Ok(Some(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_deterministic_and_labelled() {
        let cfg = ExperimentConfig {
            data: super::super::config::DataSizes {
                bitext: 20,
                valid: 4,
                test_src_original: 3,
                test_tgt_original: 2,
                mono_pretrain: 6,
                mono_bt: 5,
                pretrain_valid_fraction: 0.2,
            },
            ..Default::default()
        };
        let a = Workbench::new(cfg.clone()).unwrap();
        let b = Workbench::new(cfg.clone()).unwrap();
        assert_eq!(a.corpora().digests(), b.corpora().digests());
        let test = &a.corpora().test;
        assert_eq!(test.iter().filter(|p| p.origin() == Origin::SrcOriginal).count(), 3);
        assert_eq!(test.iter().filter(|p| p.origin() == Origin::TgtOriginal).count(), 2);
        let d = denoising_corpus(&cfg, &a.corpora().mono_src, &a.corpora().mono_tgt).unwrap();
        assert_eq!(d.len(), 12);
        assert!(d.iter().all(|p| p.src().len() <= p.tgt().len()));
    }
}
