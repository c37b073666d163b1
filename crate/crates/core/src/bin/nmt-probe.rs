use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use nmt_probe::data::corpus::{corpus_digest, lines_text, read_corpus, read_file, read_sentences, sentences_digest, write_corpus, write_file};
use nmt_probe::data::{CorpusFiles, Vocab};
use nmt_probe::decode::{back_translate, translate_all, write_meta, BeamConfig, DecodeMeta};
use nmt_probe::harness::{
    run_all_analysis, run_bt_probe, run_main_matrix, run_pretrain, run_pt_probe, CommandManifest, ExperimentConfig, ReportTable, Workbench,
};
use nmt_probe::metrics::{evaluate, target_frequencies, FreqBuckets};
use nmt_probe::model::{selective_init, Checkpoint, InitMask, Model, Provenance, Stage};
use nmt_probe::train::{train, FreezeMask};
use nmt_probe::{Error, Result};

#[derive(Parser)]
#[command(name = "nmt-probe", version, about = "Probe pre-training and back-translation on a small NMT model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Experiment {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root under which the run directory (named by config hash) lives.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Replaces the configured seed list; repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Disables the published reference column.
    #[arg(long)]
    no_references: bool,
}

#[derive(Args, Clone)]
struct Decoding {
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 1.0)]
    length_penalty: f64,
    #[arg(long)]
    max_len: Option<usize>,
}

impl Decoding {
    fn config(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam,
            length_penalty: self.length_penalty,
            max_len: self.max_len,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Tsv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpora and vocabulary into the run directory.
    GenData(Experiment),
    /// Train the shared denoising model.
    Pretrain(Experiment),
    /// Train one model on a line-based corpus.
    Train {
        #[command(flatten)]
        exp: Experiment,
        /// Corpus prefix (`.src`, `.tgt`, `.origin`).
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Checkpoint for selective initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value = "NN")]
        init_mask: InitMask,
        /// Updated sides (`NY`, `YN`, `YY`) or `frozen:group,...`.
        #[arg(long, default_value = "YY")]
        update: FreezeMask,
        /// Use the fine-tuning schedule instead of the training one.
        #[arg(long)]
        finetune: bool,
        #[arg(long = "save")]
        save: PathBuf,
    },
    /// Back-translate target monolingual text into a synthetic corpus.
    Backtranslate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output corpus prefix; a `.meta` sidecar is written alongside.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        tagged: bool,
        #[command(flatten)]
        decoding: Decoding,
    },
    /// Translate one sentence per line.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        decoding: Decoding,
    },
    /// Score hypotheses against an origin-labelled test corpus.
    Evaluate {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Bitext prefix whose target side supplies word frequencies.
        #[arg(long)]
        freqs: PathBuf,
        #[arg(long, default_value_t = 50)]
        threshold: u64,
        /// Report path; TSV is written next to it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Selective-initialization probe (needs `pretrain`).
    ProbePt(Experiment),
    /// Selective-freezing probe on bitext plus back-translation.
    ProbeBt(Experiment),
    /// Six-system matrix with BLEU and TER (needs `pretrain`).
    Matrix(Experiment),
    /// Matrix plus origin and word-frequency analysis (needs `pretrain`).
    Analyze(Experiment),
    /// Render a stored report.
    Report {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_config(exp: &Experiment) -> Result<ExperimentConfig> {
    let mut cfg = match &exp.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if !exp.seeds.is_empty() {
        cfg.seeds = exp.seeds.clone();
    }
    if exp.no_references {
        cfg.references = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn workbench(exp: &Experiment) -> Result<Workbench> {
    Workbench::with_run_root(load_config(exp)?, &exp.out)
}

fn base_manifest(wb: &Workbench, command: &str) -> CommandManifest {
    let mut m = CommandManifest::new(command, wb.config_hash(), &wb.config().seeds);
    m.inputs = wb.corpora().digests();
    m
}

fn finish(wb: &Workbench, mut m: CommandManifest, reports: &[(&str, &ReportTable)]) -> Result<()> {
    for (name, table) in reports {
        print!("{}", table.to_text());
        println!();
        m.outputs.insert(format!("report:{name}"), table.digest());
        for p in wb.save_report(name, table)? {
            m.artifacts.push(p.display().to_string());
        }
    }
    if let Some(p) = wb.save_command_manifest(&m)? {
        eprintln!("manifest: {}", p.display());
    }
    Ok(())
}

fn save_side_manifest(path: &Path, m: &CommandManifest) -> Result<()> {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    m.save(Path::new(&p))
}

fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::parse(&read_file(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(exp) => {
            let wb = workbench(&exp)?;
            let mut m = base_manifest(&wb, "gen-data");
            m.artifacts = wb.write_data()?.iter().map(|p| p.display().to_string()).collect();
            if let Some(dir) = wb.run_dir() {
                println!("{}", dir.join("data").display());
            }
            finish(&wb, m, &[])
        }
        Command::Pretrain(exp) => {
            let mut wb = workbench(&exp)?;
            let ckpt = run_pretrain(&mut wb)?;
            let mut m = base_manifest(&wb, "pretrain");
            m.outputs.insert("checkpoint".into(), ckpt.model.full_digest());
            if let Some(dir) = wb.run_dir() {
                m.artifacts.push(dir.join("models/pretrained.ckpt").display().to_string());
            }
            println!("pretrained checkpoint digest {}", ckpt.model.full_digest());
            finish(&wb, m, &[])
        }
        Command::Train {
            exp,
            train: train_prefix,
            valid,
            vocab,
            init,
            init_mask,
            update,
            finetune,
            save,
        } => {
            let cfg = load_config(&exp)?;
            let vocab = load_vocab(&vocab)?;
            let train_files = CorpusFiles::with_prefix(&train_prefix);
            let valid_files = CorpusFiles::with_prefix(&valid);
            let tr = read_corpus(&train_files, &vocab)?;
            let va = read_corpus(&valid_files, &vocab)?;
            let seed = cfg.seeds[0];
            let tcfg = ExperimentConfig::seeded(if finetune { &cfg.finetune } else { &cfg.train }, seed);
            let template = Model::build(cfg.model.clone(), seed)?;
            let model = match &init {
                Some(p) if finetune => Checkpoint::load_for(p, &cfg.model)?.model,
                Some(p) => selective_init(&template, &Checkpoint::load_for(p, &cfg.model)?, init_mask, seed)?,
                None if init_mask != InitMask::NN => {
                    return Err(Error::ExperimentConfig(format!("init mask {init_mask} needs --init")))
                }
                None => template,
            };
            let out = train(model, &tr, &va, &tcfg, &update)?;
            Checkpoint::new(out.best.clone(), Provenance::new(Stage::Trained, seed, out.best_step)).save(&save)?;
            let mut m = CommandManifest::new("train", &cfg.hash(), &[seed]);
            m.inputs.insert("train".into(), corpus_digest(&tr));
            m.inputs.insert("valid".into(), corpus_digest(&va));
            if let Some(p) = &init {
                m.inputs.insert("init".into(), sha(&std::fs::read(p).map_err(|e| Error::Io {
                    context: p.display().to_string(),
                    source: e,
                })?));
            }
            m.outputs.insert("checkpoint".into(), out.best.full_digest());
            m.outputs.insert("best_valid_ppl".into(), out.best_ppl.to_string());
            m.artifacts.push(save.display().to_string());
            write_file(&save.with_extension("log.tsv"), &out.log.to_tsv())?;
            println!("best step {} valid ppl {}", out.best_step, out.best_ppl);
            save_side_manifest(&save, &m)
        }
        Command::Backtranslate {
            model,
            vocab,
            input,
            output,
            tagged,
            decoding,
        } => {
            let vocab = load_vocab(&vocab)?;
            let ckpt = Checkpoint::load(&model)?;
            let mono = read_sentences(&input, &vocab)?;
            let bt = back_translate(&ckpt.model, &mono, &decoding.config(), tagged)?;
            let files = CorpusFiles::with_prefix(&output);
            write_corpus(&files, &vocab, &bt.pairs)?;
            let mut meta_path = output.as_os_str().to_owned();
            meta_path.push(".meta");
            write_meta(Path::new(&meta_path), &bt.meta)?;
            let mut m = CommandManifest::new("backtranslate", "-", &[]);
            m.inputs.insert("model".into(), ckpt.model.full_digest());
            m.inputs.insert("input".into(), sentences_digest(&mono));
            m.outputs.insert("corpus".into(), corpus_digest(&bt.pairs));
            println!("{} pairs, {} truncated", bt.pairs.len(), bt.truncated());
            save_side_manifest(&output, &m)
        }
        Command::Translate {
            model,
            vocab,
            input,
            output,
            decoding,
        } => {
            let vocab = load_vocab(&vocab)?;
            let ckpt = Checkpoint::load(&model)?;
            let src = read_sentences(&input, &vocab)?;
            let hyps = translate_all(&ckpt.model, &src, &decoding.config())?;
            let content: Vec<Vec<u32>> = hyps.iter().map(|h| h.content().to_vec()).collect();
            write_file(&output, &lines_text(&vocab, content.iter().map(Vec::as_slice)))?;
            let meta: Vec<DecodeMeta> = hyps.iter().map(DecodeMeta::from).collect();
            write_meta(&output.with_extension("meta"), &meta)?;
            let mut m = CommandManifest::new("translate", "-", &[]);
            m.inputs.insert("model".into(), ckpt.model.full_digest());
            m.inputs.insert("input".into(), sentences_digest(&src));
            m.outputs.insert("hyps".into(), sentences_digest(&content));
            save_side_manifest(&output, &m)
        }
        Command::Evaluate {
            test,
            hyps,
            vocab,
            freqs,
            threshold,
            output,
        } => {
            let vocab = load_vocab(&vocab)?;
            let testset = read_corpus(&CorpusFiles::with_prefix(&test), &vocab)?;
            let h = read_sentences(&hyps, &vocab)?;
            let bitext = read_corpus(&CorpusFiles::with_prefix(&freqs), &vocab)?;
            let f = target_frequencies(bitext.iter().map(|p| p.tgt()));
            let report = evaluate(&testset, &h, &f, &FreqBuckets { threshold }, hyps.display().to_string())?;
            write_file(&output, &report.to_json())?;
            write_file(&output.with_extension("tsv"), &report.to_tsv())?;
            print!("{}", report.to_tsv());
            let mut m = CommandManifest::new("evaluate", "-", &[]);
            m.inputs.insert("test".into(), corpus_digest(&testset));
            m.inputs.insert("hyps".into(), sentences_digest(&h));
            m.inputs.insert("freqs".into(), corpus_digest(&bitext));
            m.outputs.insert("report".into(), sha(report.to_json().as_bytes()));
            save_side_manifest(&output, &m)
        }
        Command::ProbePt(exp) => {
            let mut wb = workbench(&exp)?;
            let t = run_pt_probe(&mut wb)?;
            finish(&wb, base_manifest(&wb, "probe-pt"), &[("pt_probe", &t)])
        }
        Command::ProbeBt(exp) => {
            let mut wb = workbench(&exp)?;
            let t = run_bt_probe(&mut wb)?;
            finish(&wb, base_manifest(&wb, "probe-bt"), &[("bt_probe", &t)])
        }
        Command::Matrix(exp) => {
            let mut wb = workbench(&exp)?;
            let (t, _) = run_main_matrix(&mut wb)?;
            finish(&wb, base_manifest(&wb, "matrix"), &[("matrix", &t)])
        }
        Command::Analyze(exp) => {
            let mut wb = workbench(&exp)?;
            let (main, o, f) = run_all_analysis(&mut wb)?;
            finish(&wb, base_manifest(&wb, "analyze"), &[("matrix", &main), ("origin", &o), ("fmeasure", &f)])
        }
        Command::Report { input, format } => {
            let t = ReportTable::parse_json(&read_file(&input)?)?;
            match format {
                Format::Text => print!("{}", t.to_text()),
                Format::Tsv => print!("{}", t.to_tsv()),
                Format::Json => println!("{}", t.to_json()),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
