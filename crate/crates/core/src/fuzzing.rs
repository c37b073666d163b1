//! Entry points shared by the cargo-fuzz targets and the seed replay test.
//! Each takes arbitrary bytes, must never panic on malformed input, and
//! asserts that whatever parses re-serializes to a fixed point.

use sha2::{Digest, Sha256};

use crate::data::corpus::{parse_corpus, split_lines};
use crate::data::{SynthTask, SynthTaskSpec, Vocab};
use crate::decode::{meta_to_string, parse_meta};
use crate::harness::{CommandManifest, ExperimentConfig, ReportTable};
use crate::metrics::EvalReport;
use crate::model::Checkpoint;
use crate::train::{RunManifest, TrainLog};

/// Names of all targets, in the order of the fuzz/ directory.
pub const TARGETS: [&str; 9] = [
    "checkpoint",
    "vocab",
    "corpus",
    "experiment_config",
    "report_table",
    "eval_report",
    "train_log",
    "decode_meta",
    "manifest",
];

pub fn run(target: &str, data: &[u8]) {
    match target {
        "checkpoint" => checkpoint(data),
        "vocab" => vocab(data),
        "corpus" => corpus(data),
        "experiment_config" => experiment_config(data),
        "report_table" => report_table(data),
        "eval_report" => eval_report(data),
        "train_log" => train_log(data),
        "decode_meta" => decode_meta(data),
        "manifest" => manifest(data),
        other => panic!("unknown fuzz target `{other}`"),
    }
}

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

/// The input is a checkpoint body; the checksum is appended here so the
/// fuzzer reaches the structural decoding instead of stopping at it.
pub fn checkpoint(data: &[u8]) {
    let mut bytes = data.to_vec();
    bytes.extend_from_slice(&Sha256::digest(data));
    if let Ok(c) = Checkpoint::from_bytes(&bytes) {
        let again = c.to_bytes();
        let back = Checkpoint::from_bytes(&again).expect("re-encoded checkpoint parses");
        assert_eq!(back.to_bytes(), again);
    }
    let _ = Checkpoint::from_bytes(data);
}

pub fn vocab(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(v) = Vocab::parse(t) {
        let s = v.to_file_string();
        assert_eq!(Vocab::parse(&s).expect("re-serialized vocab parses").to_file_string(), s);
        let _ = v.decode(&v.encode(t));
    }
}

/// Source, target and origin documents separated by NUL bytes, read with
/// the default synthetic vocabulary.
pub fn corpus(data: &[u8]) {
    let Some(t) = text(data) else { return };
    let mut parts = t.splitn(3, '\0');
    let (src, tgt, origin) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    let task = SynthTask::new(SynthTaskSpec::default()).expect("default task");
    if let Ok(pairs) = parse_corpus(src, tgt, origin, task.vocab()) {
        assert_eq!(pairs.len(), split_lines(src).len());
        let n = task.vocab().len() as u32;
        assert!(pairs.iter().all(|p| p.src().iter().chain(p.tgt()).all(|&t| t < n)));
    }
}

pub fn experiment_config(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(c) = ExperimentConfig::parse_toml(t) {
        let s = c.to_toml();
        let back = ExperimentConfig::parse_toml(&s).expect("re-serialized config parses");
        assert_eq!(back.to_toml(), s);
        let _ = c.validate();
    }
}

pub fn report_table(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(r) = ReportTable::parse_json(t) {
        let _ = (r.to_text(), r.to_tsv());
        let s = r.to_json();
        assert_eq!(ReportTable::parse_json(&s).expect("re-serialized report parses").to_json(), s);
    }
}

pub fn eval_report(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(r) = EvalReport::parse_json(t) {
        let _ = r.to_tsv();
        let s = r.to_json();
        assert_eq!(EvalReport::parse_json(&s).expect("re-serialized eval report parses").to_json(), s);
    }
}

pub fn train_log(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(l) = TrainLog::parse_tsv(t) {
        let s = l.to_tsv();
        assert_eq!(TrainLog::parse_tsv(&s).expect("re-serialized log parses").to_tsv(), s);
    }
}

pub fn decode_meta(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(m) = parse_meta(t) {
        let s = meta_to_string(&m);
        assert_eq!(meta_to_string(&parse_meta(&s).expect("re-serialized meta parses")), s);
    }
}

/// Both manifest kinds share this target.
pub fn manifest(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(m) = CommandManifest::parse(t) {
        let s = m.to_json();
        assert_eq!(CommandManifest::parse(&s).expect("re-serialized manifest parses").to_json(), s);
    }
    if let Ok(m) = RunManifest::parse(t) {
        let s = m.to_json();
        assert_eq!(RunManifest::parse(&s).expect("re-serialized run manifest parses").to_json(), s);
    }
}
