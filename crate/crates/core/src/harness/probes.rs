use std::collections::HashMap;

use log::info;

use super::report::{ReportRow, ReportTable, SeedCells};
use super::workbench::Workbench;
use crate::data::vocab::TokenId;
use crate::data::{Origin, SentencePair};
use crate::error::{Error, Result};
use crate::metrics::{split_eval_by_origin, word_fmeasure, BleuConfig, Bucket, FreqBuckets};
use crate::model::{Checkpoint, InitMask};
use crate::train::FreezeMask;

/// Published En-Ro values shown next to the desk-scale results.
pub mod reference {
    pub const PT_PROBE: [(&str, f64); 4] = [("NN", 33.7), ("NY", 33.5), ("YN", 36.9), ("YY", 37.7)];
    pub const BT_PROBE: [(&str, f64); 4] = [("NN", 33.7), ("NY", 37.8), ("YN", 35.8), ("YY", 38.3)];
    /// BLEU, TER.
    pub const MAIN: [(&str, [f64; 2]); 6] = [
        ("Vanilla", [33.7, 48.6]),
        ("+PT", [37.7, 45.0]),
        ("+BT", [38.4, 45.0]),
        ("+BT+PT", [41.2, 42.6]),
        ("+Tagged BT", [38.6, 44.9]),
        ("+Tagged BT+PT", [41.6, 42.1]),
    ];
    /// All, Src, Tgt BLEU.
    pub const ORIGIN: [(&str, [f64; 3]); 6] = [
        ("Vanilla", [33.7, 29.4, 38.3]),
        ("+PT", [37.7, 33.8, 42.0]),
        ("+BT", [38.4, 31.5, 45.4]),
        ("+BT+PT", [41.2, 33.3, 48.6]),
        ("+Tagged BT", [38.6, 31.9, 45.6]),
        ("+Tagged BT+PT", [41.6, 34.8, 48.7]),
    ];
    /// All, Low, High word f-measure.
    pub const FMEASURE: [(&str, [f64; 3]); 6] = [
        ("Vanilla", [62.8, 48.5, 64.6]),
        ("+PT", [65.8, 58.2, 66.7]),
        ("+BT", [65.9, 57.5, 67.1]),
        ("+BT+PT", [67.8, 60.8, 68.8]),
        ("+Tagged BT", [66.1, 57.5, 67.3]),
        ("+Tagged BT+PT", [68.3, 61.8, 69.1]),
    ];
}

/// The six systems of the main matrix, in table order.
pub const SYSTEMS: [&str; 6] = ["Vanilla", "+PT", "+BT", "+BT+PT", "+Tagged BT", "+Tagged BT+PT"];

const PROBE_MASKS: [InitMask; 4] = [InitMask::NN, InitMask::NY, InitMask::YN, InitMask::YY];

const EMBEDDING_NOTE: &str = "embeddings are untied; the reference model ties them, so its encoder/decoder split is not identical";

fn attach_reference<const N: usize>(table: &mut ReportTable, refs: &[(&str, [f64; N])]) {
    for row in &mut table.rows {
        if let Some((_, v)) = refs.iter().find(|(l, _)| *l == row.label) {
            row.reference = Some(v.to_vec());
        }
    }
}

/// Trains (or reloads) the shared denoising model.
pub fn run_pretrain(wb: &mut Workbench) -> Result<Checkpoint> {
    wb.pretrain().cloned()
}

/// Four bitext trainings that differ only in which side starts from the
/// pretrained checkpoint. Requires the checkpoint to exist.
pub fn run_pt_probe(wb: &mut Workbench) -> Result<ReportTable> {
    wb.pretrained()?;
    let seeds = wb.config().seeds.clone();
    let mut table = ReportTable::new("PT probe: initialization from the denoising model", &["BLEU"], Some(0));
    for mask in PROBE_MASKS {
        let mut row = ReportRow::new(mask.to_string());
        for &seed in &seeds {
            let model = wb.pt_model(mask, seed)?;
            let d = wb.decode_test(&format!("pt-{mask}"), seed, &model)?;
            info!("PT probe {mask} seed {seed}: BLEU {:.2}", d.report.bleu);
            row.per_seed.push(SeedCells {
                seed,
                cells: vec![Some(d.report.bleu)],
            });
        }
        table.rows.push(row);
    }
    if wb.config().references {
        attach_reference(&mut table, &reference::PT_PROBE.map(|(l, v)| (l, [v])));
    }
    table.notes.push("Y = side initialized from the pretrained checkpoint; all parameters are trained".into());
    table.notes.push(EMBEDDING_NOTE.into());
    Ok(table)
}

/// Vanilla model as-is (NN) and three fine-tunes on bitext+BT in which
/// only the `Y` sides are updated.
pub fn run_bt_probe(wb: &mut Workbench) -> Result<ReportTable> {
    let seeds = wb.config().seeds.clone();
    let mut table = ReportTable::new("BT probe: fine-tuning on bitext+BT with frozen sides", &["BLEU"], Some(0));
    for mask in PROBE_MASKS {
        let freeze = FreezeMask::from_sides(mask.encoder, mask.decoder);
        let mut row = ReportRow::new(mask.to_string());
        for &seed in &seeds {
            let model = wb.bt_finetuned(freeze.clone(), seed)?;
            let key = if mask == InitMask::NN { "pt-NN".to_string() } else { format!("bt-{freeze}") };
            let d = wb.decode_test(&key, seed, &model)?;
            info!("BT probe {mask} seed {seed}: BLEU {:.2}", d.report.bleu);
            row.per_seed.push(SeedCells {
                seed,
                cells: vec![Some(d.report.bleu)],
            });
        }
        table.rows.push(row);
    }
    if wb.config().references {
        attach_reference(&mut table, &reference::BT_PROBE.map(|(l, v)| (l, [v])));
    }
    table.notes.push("Y = side updated during fine-tuning; NN is the vanilla model without fine-tuning".into());
    table.notes.push(EMBEDDING_NOTE.into());
    Ok(table)
}

/// Test-set hypotheses of one system for every seed.
#[derive(Clone, Debug)]
pub struct SystemOutputs {
    pub label: String,
    pub per_seed: Vec<(u64, Vec<Vec<TokenId>>)>,
}

/// Trains (or reloads) one matrix system for one seed and returns its key
/// and decoded output.
fn matrix_system(wb: &mut Workbench, label: &str, seed: u64) -> Result<super::workbench::Decoded> {
    let (key, model) = match label {
        "Vanilla" => ("pt-NN".to_string(), wb.vanilla(seed)?),
        "+PT" => ("pt-YY".to_string(), wb.pt_model(InitMask::YY, seed)?),
        "+BT" => ("bt".to_string(), wb.bt_system(false, false, seed)?),
        "+BT+PT" => ("bt-pt".to_string(), wb.bt_system(false, true, seed)?),
        "+Tagged BT" => ("tbt".to_string(), wb.bt_system(true, false, seed)?),
        "+Tagged BT+PT" => ("tbt-pt".to_string(), wb.bt_system(true, true, seed)?),
        other => return Err(Error::ExperimentConfig(format!("unknown system `{other}`"))),
    };
    wb.decode_test(&key, seed, &model)
}

/// The six-system matrix with BLEU and TER; BT systems are trained from
/// scratch (or from the pretrained checkpoint for the +PT variants).
pub fn run_main_matrix(wb: &mut Workbench) -> Result<(ReportTable, Vec<SystemOutputs>)> {
    wb.pretrained()?;
    let seeds = wb.config().seeds.clone();
    let mut table = ReportTable::new("Main matrix", &["BLEU", "TER"], None);
    let mut outputs = Vec::new();
    for label in SYSTEMS {
        let mut row = ReportRow::new(label);
        let mut out = SystemOutputs {
            label: label.to_string(),
            per_seed: Vec::new(),
        };
        for &seed in &seeds {
            let d = matrix_system(wb, label, seed)?;
            info!("{label} seed {seed}: BLEU {:.2} TER {:.2}", d.report.bleu, d.report.ter);
            row.per_seed.push(SeedCells {
                seed,
                cells: vec![Some(d.report.bleu), Some(d.report.ter)],
            });
            out.per_seed.push((seed, d.hyps));
        }
        table.rows.push(row);
        outputs.push(out);
    }
    if wb.config().references {
        attach_reference(&mut table, &reference::MAIN);
    }
    table.notes.push("TER is reported x100; lower is better".into());
    Ok((table, outputs))
}

/// BLEU on the All/Src/Tgt-original subsets and word F-measure on the
/// All/Low/High-frequency buckets.
pub fn run_analysis(
    systems: &[SystemOutputs],
    testset: &[SentencePair],
    train_freqs: &HashMap<TokenId, u64>,
    buckets: &FreqBuckets,
    references: bool,
) -> Result<(ReportTable, ReportTable)> {
    if let Some(i) = testset.iter().position(|p| p.origin() == Origin::Synthetic) {
        return Err(Error::InvalidPair(format!("test pair {i} has no genuine origin label")));
    }
    let refs: Vec<Vec<TokenId>> = testset.iter().map(|p| p.tgt().to_vec()).collect();
    let mut origin = ReportTable::new("BLEU by test-set origin", &["All", "Src", "Tgt"], None);
    let mut fmeasure = ReportTable::new("Word F-measure by training frequency", &["All", "Low", "High"], None);
    for sys in systems {
        let mut orow = ReportRow::new(&sys.label);
        let mut frow = ReportRow::new(&sys.label);
        for (seed, hyps) in &sys.per_seed {
            let o = split_eval_by_origin(testset, hyps, &BleuConfig::default())?;
            orow.per_seed.push(SeedCells {
                seed: *seed,
                cells: vec![Some(o.all), o.src, o.tgt],
            });
            let hyps: Vec<Vec<TokenId>> = hyps.iter().map(|h| crate::data::strip_bt_tag(h)).collect();
            let f = word_fmeasure(&hyps, &refs, train_freqs, buckets)?;
            frow.per_seed.push(SeedCells {
                seed: *seed,
                cells: [Bucket::All, Bucket::Low, Bucket::High]
                    .iter()
                    .map(|b| {
                        let p = f[b];
                        // A bucket with no words at all is absent, not zero.
                        (p.hyp_count + p.ref_count > 0).then_some(100.0 * p.f1)
                    })
                    .collect(),
            });
        }
        origin.rows.push(orow);
        fmeasure.rows.push(frow);
    }
    if references {
        attach_reference(&mut origin, &reference::ORIGIN);
        attach_reference(&mut fmeasure, &reference::FMEASURE);
    }
    fmeasure.notes.push(format!(
        "word frequencies come from the genuine bitext target side; Low < {} occurrences",
        buckets.threshold
    ));
    Ok((origin, fmeasure))
}

/// Main matrix followed by both analysis reports.
pub fn run_all_analysis(wb: &mut Workbench) -> Result<(ReportTable, ReportTable, ReportTable)> {
    let (main, outputs) = run_main_matrix(wb)?;
    let (o, f) = run_analysis(&outputs, &wb.corpora().test, wb.train_freqs(), &wb.config().buckets, wb.config().references)?;
    Ok((main, o, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(s: &[TokenId], t: &[TokenId], o: Origin) -> SentencePair {
        SentencePair::new(s.to_vec(), t.to_vec(), o).unwrap()
    }

    #[test]
    fn identity_outputs_are_maximal() {
        let test = vec![
            pair(&[6, 7], &[206, 207, 208, 209], Origin::SrcOriginal),
            pair(&[8], &[210, 211, 212, 213, 214], Origin::TgtOriginal),
        ];
        let hyps: Vec<Vec<TokenId>> = test.iter().map(|p| p.tgt().to_vec()).collect();
        let sys = vec![SystemOutputs {
            label: "identity".into(),
            per_seed: vec![(1, hyps)],
        }];
        let freqs: HashMap<TokenId, u64> = [(206, 100), (207, 100)].into();
        let (o, f) = run_analysis(&sys, &test, &freqs, &FreqBuckets::default(), false).unwrap();
        for v in o.medians(0) {
            assert!((v.unwrap() - 100.0).abs() < 1e-9);
        }
        for v in f.medians(0) {
            assert!((v.unwrap() - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn synthetic_test_pairs_rejected() {
        let test = vec![pair(&[6], &[7], Origin::Synthetic)];
        assert!(run_analysis(&[], &test, &HashMap::new(), &FreqBuckets::default(), false).is_err());
    }
}
