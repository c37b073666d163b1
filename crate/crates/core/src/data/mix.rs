use super::corpus::{Origin, SentencePair};
use super::vocab::{TokenId, BT_TAG};
use crate::error::{Error, Result};

/// Prepends the back-translation tag. Inputs that already start with the
/// tag are rejected so a source is never tagged twice.
pub fn tag_bt_source(tokens: &[TokenId]) -> Result<Vec<TokenId>> {
    if tokens.first() == Some(&BT_TAG) {
        return Err(Error::AlreadyTagged);
    }
    let mut out = Vec::with_capacity(tokens.len() + 1);
    out.push(BT_TAG);
    out.extend_from_slice(tokens);
    Ok(out)
}

/// Removes every occurrence of the back-translation tag.
pub fn strip_bt_tag(tokens: &[TokenId]) -> Vec<TokenId> {
    tokens.iter().copied().filter(|&t| t != BT_TAG).collect()
}

/// Concatenates genuine bitext and synthetic pairs, keeping origin labels.
/// With `tagged`, every synthetic source gets the tag and no genuine source
/// does. Shuffling is left to the trainer.
pub fn mix_corpora(bitext: &[SentencePair], synthetic: &[SentencePair], tagged: bool) -> Result<Vec<SentencePair>> {
    let mut out = Vec::with_capacity(bitext.len() + synthetic.len());
    for (i, p) in bitext.iter().enumerate() {
        if p.origin() == Origin::Synthetic {
            return Err(Error::InvalidPair(format!("bitext pair {i} is labelled synthetic")));
        }
        if p.src().contains(&BT_TAG) || p.tgt().contains(&BT_TAG) {
            return Err(Error::InvalidPair(format!("bitext pair {i} contains the back-translation tag")));
        }
        out.push(p.clone());
    }
    for (index, p) in synthetic.iter().enumerate() {
        if p.origin() != Origin::Synthetic {
            return Err(Error::NotSynthetic { index });
        }
        if tagged {
            out.push(p.with_src(tag_bt_source(p.src())?)?);
        } else {
            if p.src().contains(&BT_TAG) {
                return Err(Error::InvalidPair(format!("synthetic pair {index} is already tagged")));
            }
            out.push(p.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagging_examples() {
        assert_eq!(tag_bt_source(&[8, 9]).unwrap(), vec![BT_TAG, 8, 9]);
        assert_eq!(tag_bt_source(&[]).unwrap(), vec![BT_TAG]);
        assert!(matches!(tag_bt_source(&[BT_TAG, 8]), Err(Error::AlreadyTagged)));
    }

    #[test]
    fn mixing_contract() {
        let bi = vec![SentencePair::new(vec![7], vec![8], Origin::SrcOriginal).unwrap()];
        let syn = vec![
            SentencePair::new(vec![9], vec![10], Origin::Synthetic).unwrap(),
            SentencePair::new(vec![11, 12], vec![10], Origin::Synthetic).unwrap(),
        ];
        let tagged = mix_corpora(&bi, &syn, true).unwrap();
        assert_eq!(tagged.len(), 3);
        for p in &tagged {
            assert_eq!(p.src()[0] == BT_TAG, p.origin() == Origin::Synthetic);
            assert!(!p.src()[1..].contains(&BT_TAG));
        }
        let plain = mix_corpora(&bi, &syn, false).unwrap();
        assert!(plain.iter().all(|p| !p.src().contains(&BT_TAG)));
        assert!(matches!(mix_corpora(&bi, &bi, false), Err(Error::NotSynthetic { index: 0 })));
    }
}
