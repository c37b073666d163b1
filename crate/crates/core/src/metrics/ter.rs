use crate::data::vocab::TokenId;
use crate::error::{Error, Result};

use super::bleu::check_lengths;

/// Longest block considered for a shift.
const MAX_SHIFT_LEN: usize = 10;

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `seq` with `seq[start..start+len]` moved so that it begins at `dest` in
/// the result.
fn apply_shift(seq: &[TokenId], start: usize, len: usize, dest: usize) -> Vec<TokenId> {
    let block = &seq[start..start + len];
    let mut rest: Vec<TokenId> = Vec::with_capacity(seq.len());
    rest.extend_from_slice(&seq[..start]);
    rest.extend_from_slice(&seq[start + len..]);
    let mut out = Vec::with_capacity(seq.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(block);
    out.extend_from_slice(&rest[dest..]);
    out
}

/// Minimum edits (shifts plus Levenshtein edits) found by greedy shifting.
///
/// Each round tries every block that occurs in the reference, moved to a
/// position where it lines up with a reference occurrence, and applies the
/// one that lowers the edit distance most; ties go to the leftmost source,
/// then the shortest block, then the smallest destination. Rounds stop when
/// no shift helps.
pub fn ter_edits(hyp: &[TokenId], reference: &[TokenId]) -> usize {
    let mut cur = hyp.to_vec();
    let mut shifts = 0;
    let mut dist = edit_distance(&cur, reference);
    loop {
        let mut best: Option<(usize, Vec<TokenId>)> = None;
        for start in 0..cur.len() {
            for len in 1..=MAX_SHIFT_LEN.min(cur.len() - start) {
                let block = &cur[start..start + len];
                if reference.get(start..start + len) == Some(block) {
                    continue;
                }
                for dest in 0..=reference.len().saturating_sub(len) {
                    if dest == start || dest + len > cur.len() || reference.get(dest..dest + len) != Some(block) {
                        continue;
                    }
                    let cand = apply_shift(&cur, start, len, dest);
                    let d = edit_distance(&cand, reference);
                    if d < dist && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, cand));
                    }
                }
            }
        }
        match best {
            Some((d, cand)) => {
                cur = cand;
                dist = d;
                shifts += 1;
            }
            None => return shifts + dist,
        }
    }
}

/// Corpus TER ×100: total edits over total reference length.
pub fn ter(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<f64> {
    check_lengths(hyps.len(), refs.len())?;
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        if r.is_empty() {
            return Err(Error::EmptyReference(i + 1));
        }
        edits += ter_edits(h, r);
        ref_len += r.len();
    }
    Ok(100.0 * edits as f64 / ref_len as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        let r = vec![vec![6, 7, 8, 9, 10]];
        assert_eq!(ter(&r, &r).unwrap(), 0.0);
        assert_eq!(ter(&[vec![6, 7, 11, 9, 10]], &r).unwrap(), 20.0);
        assert_eq!(ter(&[vec![7, 6, 8, 9]], &[vec![6, 7, 8, 9]]).unwrap(), 25.0);
        assert!(matches!(ter(&[vec![6]], &[vec![]]), Err(Error::EmptyReference(1))));
    }

    #[test]
    fn block_shift_counts_once() {
        // Moving the block [9 10] to the front costs one shift.
        assert_eq!(ter_edits(&[6, 7, 8, 9, 10], &[9, 10, 6, 7, 8]), 1);
    }

    #[test]
    fn hypothesis_longer_than_reference() {
        assert_eq!(ter_edits(&[6, 7, 8, 9], &[7, 6, 8]), 2);
        assert_eq!(ter_edits(&[6, 6, 6, 6, 6], &[6]), 4);
    }
}
