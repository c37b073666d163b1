mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nmt_probe::data::vocab::BT_TAG;
use nmt_probe::data::Origin;
use nmt_probe::harness::{run_bt_probe, run_pt_probe, CommandManifest, ReportTable, Workbench, REFERENCE_LABEL};
use nmt_probe::model::{Checkpoint, ParamGroup};
use nmt_probe::train::{FreezeMask, RunManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nmt-probe"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("harness_cli").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, common::TINY_EXPERIMENT).unwrap();
    p
}

fn run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

fn manifest(run: &Path, command: &str) -> CommandManifest {
    CommandManifest::parse(&std::fs::read_to_string(run.join(format!("manifests/command-{command}.json"))).unwrap()).unwrap()
}

#[test]
fn misspelled_config_key_is_named() {
    let dir = scratch("typo");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, common::TINY_EXPERIMENT.replace("[train]\ntotal_steps", "[train]\ntotal_stepz")).unwrap();
    let out = bin().args(["gen-data", "--config"]).arg(&cfg).arg("--out").arg(dir.join("runs")).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("total_stepz"), "{err}");
}

#[test]
fn missing_input_fails_with_message() {
    let dir = scratch("missing");
    let out = bin().args(["report"]).arg(dir.join("nope.json")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    let out = bin().args(["probe-pt", "--config"]).arg(write_config(&dir)).arg("--out").arg(dir.join("runs")).output().unwrap();
    assert!(!out.status.success(), "PT probe without a pretrained checkpoint must fail");
    assert!(String::from_utf8_lossy(&out.stderr).contains("pretrain"));
}

/// Pretrain then PT probe in a fresh run root; returns the run directory.
fn pt_probe_run(name: &str) -> PathBuf {
    let dir = scratch(name);
    let cfg = write_config(&dir);
    let out = dir.join("runs");
    for cmd in ["pretrain", "probe-pt"] {
        ok(bin().arg(cmd).arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--seed", "1"]).output().unwrap());
    }
    run_dir(&out)
}

#[test]
fn pt_probe_reruns_bit_exactly() {
    let a = pt_probe_run("pt_a");
    let b = pt_probe_run("pt_b");
    let (ma, mb) = (manifest(&a, "probe-pt"), manifest(&b, "probe-pt"));
    assert_eq!(ma.outputs["report:pt_probe"], mb.outputs["report:pt_probe"]);
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.seeds, vec![1]);
    assert_eq!(manifest(&a, "pretrain").outputs, manifest(&b, "pretrain").outputs);

    // Report rendering from the stored JSON.
    let json = a.join("reports/pt_probe.json");
    let text = ok(bin().arg("report").arg(&json).output().unwrap());
    assert!(text.contains(REFERENCE_LABEL) && text.contains("YN"), "{text}");
    let tsv = ok(bin().arg("report").arg(&json).args(["--format", "tsv"]).output().unwrap());
    assert!(tsv.starts_with("system\tBLEU\tΔ BLEU"), "{tsv}");
    let table = ReportTable::parse_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(table.digest(), ma.outputs["report:pt_probe"]);

    // The four runs differ only in initialization.
    let runs: Vec<RunManifest> = ["NN", "NY", "YN", "YY"]
        .iter()
        .map(|m| RunManifest::parse(&std::fs::read_to_string(a.join(format!("manifests/pt-{m}.seed1.json"))).unwrap()).unwrap())
        .collect();
    for r in &runs[1..] {
        assert_eq!(r.config_hash, runs[0].config_hash);
        assert_eq!(r.corpus_digests, runs[0].corpus_digests);
        assert_eq!(r.train, runs[0].train);
        assert_eq!(r.steps, runs[0].steps);
    }
    let inits: Vec<&str> = runs.iter().map(|r| r.init.as_str()).collect();
    assert_eq!(inits, ["init NN", "init NY", "init YN", "init YY"]);
}

#[test]
fn train_and_evaluate_commands_write_manifests() {
    let dir = scratch("files");
    let cfg = write_config(&dir);
    let out = dir.join("runs");
    ok(bin().arg("gen-data").arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap());
    let data = run_dir(&out).join("data");
    let save = dir.join("m.ckpt");
    let common_args = |c: &mut Command| {
        c.arg("--config").arg(&cfg).arg("--out").arg(&out).arg("--vocab").arg(data.join("vocab.txt"));
    };
    let mut c = bin();
    c.arg("train").arg("--train").arg(data.join("bitext")).arg("--valid").arg(data.join("valid")).arg("--save").arg(&save);
    common_args(&mut c);
    ok(c.output().unwrap());
    assert!(dir.join("m.ckpt.manifest.json").exists());
    Checkpoint::load(&save).unwrap();

    let hyps = dir.join("hyps.txt");
    ok(bin()
        .arg("translate")
        .arg("--model")
        .arg(&save)
        .arg("--vocab")
        .arg(data.join("vocab.txt"))
        .arg("--input")
        .arg(data.join("test.src"))
        .arg("--output")
        .arg(&hyps)
        .output()
        .unwrap());
    let report = dir.join("eval.json");
    let eval = |out: &Path| {
        ok(bin()
            .arg("evaluate")
            .arg("--test")
            .arg(data.join("test"))
            .arg("--hyps")
            .arg(&hyps)
            .arg("--vocab")
            .arg(data.join("vocab.txt"))
            .arg("--freqs")
            .arg(data.join("bitext"))
            .arg("--output")
            .arg(out)
            .output()
            .unwrap())
    };
    eval(&report);
    eval(&dir.join("eval2.json"));
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(dir.join("eval2.json")).unwrap());
    let m = CommandManifest::parse(&std::fs::read_to_string(dir.join("eval.json.manifest.json")).unwrap()).unwrap();
    assert!(m.inputs.contains_key("hyps") && m.outputs.contains_key("report"));

    let bt = dir.join("bt");
    ok(bin()
        .arg("backtranslate")
        .arg("--model")
        .arg(&save)
        .arg("--vocab")
        .arg(data.join("vocab.txt"))
        .arg("--input")
        .arg(data.join("mono_bt.txt"))
        .arg("--output")
        .arg(&bt)
        .arg("--tagged")
        .output()
        .unwrap());
    let tagged = std::fs::read_to_string(dir.join("bt.src")).unwrap();
    assert!(tagged.lines().all(|l| l.starts_with(ckpt_tag_token(&data).as_str())), "{tagged}");
}

fn ckpt_tag_token(data: &Path) -> String {
    let v = nmt_probe::data::Vocab::parse(&std::fs::read_to_string(data.join("vocab.txt")).unwrap()).unwrap();
    v.token(BT_TAG).unwrap().to_string()
}

#[test]
fn bt_probe_freezes_and_mixes_as_declared() {
    let mut wb = Workbench::new(common::tiny_experiment()).unwrap();
    wb.pretrain().unwrap();
    let pt = run_pt_probe(&mut wb).unwrap();
    assert_eq!(pt.rows.len(), 4);
    let bt = run_bt_probe(&mut wb).unwrap();
    for seed in wb.config().seeds.clone() {
        let vanilla = wb.vanilla(seed).unwrap();
        let ny = wb.bt_finetuned(FreezeMask::from_sides(false, true), seed).unwrap();
        let yn = wb.bt_finetuned(FreezeMask::from_sides(true, false), seed).unwrap();
        let enc = [ParamGroup::SrcEmbed, ParamGroup::Encoder];
        let dec = [ParamGroup::TgtEmbed, ParamGroup::Decoder, ParamGroup::OutProj];
        assert!(common::groups_bit_equal(&vanilla, &ny, &enc));
        assert!(!common::groups_bit_equal(&vanilla, &ny, &dec));
        assert!(common::groups_bit_equal(&vanilla, &yn, &dec));
        // Baseline row equals the PT-probe NN row: same vanilla model.
        assert_eq!(bt.rows[0].per_seed, pt.rows[0].per_seed);
    }
    // Fine-tunes all start from the same vanilla digest and see the same data.
    let m = wb.run_manifests();
    let ft: Vec<&RunManifest> = m.iter().filter(|(k, _)| k.starts_with("bt-") && k.ends_with(".seed1")).map(|(_, v)| v).collect();
    assert_eq!(ft.len(), 3, "{:?}", m.keys().collect::<Vec<_>>());
    for r in &ft[1..] {
        assert_eq!(r.init, ft[0].init);
        assert!(r.init.starts_with("vanilla "));
        assert_eq!(r.corpus_digests, ft[0].corpus_digests);
    }

    let untagged = wb.bt_mix(false).unwrap();
    assert!(untagged.iter().all(|p| !p.src().contains(&BT_TAG)));
    let tagged = wb.bt_mix(true).unwrap();
    for p in &tagged {
        let tags = p.src().iter().filter(|&&t| t == BT_TAG).count();
        match p.origin() {
            Origin::Synthetic => assert!(p.src()[0] == BT_TAG && tags == 1),
            _ => assert_eq!(tags, 0),
        }
    }
    for p in &wb.corpora().bitext {
        assert!(!p.src().contains(&BT_TAG) && !p.tgt().contains(&BT_TAG));
    }
}
