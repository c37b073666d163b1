//! Replays the checked-in fuzz corpus, plus cheap deterministic mutations
//! of every seed, through the same entry points the fuzz targets use.

use std::path::Path;

use nmt_probe::fuzzing::{run, TARGETS};
use rand::{Rng, SeedableRng};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn every_target_has_seeds_and_accepts_them() {
    for t in TARGETS {
        let s = seeds(t);
        assert!(!s.is_empty(), "no seeds for {t}");
        for (_, data) in &s {
            run(t, data);
        }
    }
}

/// Bytes that matter to the TSV, TOML and JSON grammars.
const INSERTS: &[u8] = b"\t\n0-9e.\"{}[]=";

#[test]
fn mutated_seeds_never_panic() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for t in TARGETS {
        for (name, data) in seeds(t) {
            // Truncations at a spread of cut points.
            for k in 0..16 {
                run(t, &data[..data.len() * k / 16]);
            }
            for _ in 0..64 {
                let mut m = data.clone();
                for _ in 0..rng.random_range(1..4) {
                    if m.is_empty() {
                        break;
                    }
                    let i = rng.random_range(0..m.len());
                    match rng.random_range(0..3) {
                        0 => m[i] = rng.random(),
                        1 => {
                            m.remove(i);
                        }
                        _ => m.insert(i, INSERTS[rng.random_range(0..INSERTS.len())]),
                    }
                }
                let r = std::panic::catch_unwind(|| run(t, &m));
                assert!(r.is_ok(), "{t}/{name}: panic on mutated input {:?}", String::from_utf8_lossy(&m));
            }
        }
    }
}
