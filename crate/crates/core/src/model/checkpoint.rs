//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes   "NMTPCKPT"
//! version   u32 LE    FORMAT_VERSION
//! hlen      u32 LE    length of the JSON header
//! header    hlen bytes UTF-8 JSON {config, provenance, groups, aliases}
//! count     u32 LE    number of tensors
//! tensor*   u16 LE name length, name bytes, u8 ndim, ndim × u64 LE dims,
//!           prod(dims) × f64 LE values (row-major)
//! checksum  32 bytes  SHA-256 of everything above
//! ```
//! Tensors appear grouped in `ParamGroup` order, names sorted within a group.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::{Model, ParamGroup};
use crate::autograd::{Bindings, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NMTPCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrained,
    Trained,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub stage: Stage,
    pub seed: u64,
    pub step: u64,
    /// Free-form label, e.g. the run that produced the checkpoint.
    #[serde(default)]
    pub label: String,
}

impl Provenance {
    pub fn new(stage: Stage, seed: u64, step: u64) -> Self {
        Provenance {
            stage,
            seed,
            step,
            label: String::new(),
        }
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    provenance: Provenance,
    groups: BTreeMap<ParamGroup, Vec<String>>,
    aliases: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn new(model: Model, provenance: Provenance) -> Self {
        Checkpoint { model, provenance }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let model = &self.model;
        let groups: BTreeMap<ParamGroup, Vec<String>> = model
            .groups()
            .into_iter()
            .map(|g| (g, model.names_in(g).map(str::to_string).collect()))
            .collect();
        let header = Header {
            config: model.config().clone(),
            provenance: self.provenance.clone(),
            groups,
            aliases: model.aliases().clone(),
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
        for g in ParamGroup::ALL {
            for name in model.names_in(g) {
                let t = &model.params()[name];
                out.extend_from_slice(&(name.len() as u16).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.push(t.shape().len() as u8);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 8 + 32 {
            return Err(bad("file too short"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        if Sha256::digest(body).as_slice() != sum {
            return Err(bad("checksum mismatch"));
        }
        let hlen = r.u32()? as usize;
        if hlen > MAX_HEADER {
            return Err(bad("header too large"));
        }
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = Bindings::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            let mut n: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?;
                n = n.checked_mul(d).ok_or_else(|| bad("dimension overflow"))?;
                shape.push(d);
            }
            if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
                return Err(Error::Checkpoint(format!("tensor `{name}` runs past end of file")));
            }
            let data: Vec<f64> = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
            if params.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(bad("trailing bytes before checksum"));
        }
        let model = Model::from_parts(header.config, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if &header.aliases != model.aliases() {
            return Err(bad("alias table does not match embedding_tying"));
        }
        for (g, names) in &header.groups {
            if names.iter().any(|n| model.group_of(n) != Some(*g)) || model.names_in(*g).count() != names.len() {
                return Err(Error::Checkpoint(format!("group table for `{g}` does not match the layout")));
            }
        }
        if !model.all_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(Checkpoint {
            model,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and rejects a checkpoint whose geometry differs from `config`.
    pub fn load_for(path: &Path, config: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if !ck.model.config().same_geometry(config) {
            return Err(Error::ConfigMismatch(format!(
                "{} was saved with {:?}, expected {:?}",
                path.display(),
                ck.model.config(),
                config
            )));
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::EmbeddingTying;

    fn ck(tying: EmbeddingTying) -> Checkpoint {
        let cfg = ModelConfig {
            num_layers: 1,
            d_model: 4,
            num_heads: 2,
            d_ff: 4,
            src_vocab_size: 8,
            tgt_vocab_size: 8,
            dropout_rate: 0.2,
            max_positions: 8,
            embedding_tying: tying,
        };
        Checkpoint::new(Model::build(cfg, 9).unwrap(), Provenance::new(Stage::Trained, 9, 42).labelled("t"))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for tying in [EmbeddingTying::Untied, EmbeddingTying::TiedTgtOut, EmbeddingTying::TiedAll] {
            let c = ck(tying);
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(back.provenance, c.provenance);
            for (n, t) in c.model.params() {
                assert!(t.bit_eq(&back.model.params()[n]), "{n}");
            }
            assert_eq!(back.model, c.model);
        }
    }

    #[test]
    fn corruption_detected() {
        let bytes = ck(EmbeddingTying::Untied).to_bytes();
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Checkpoint(m)) if m.contains("version")));
    }

    #[test]
    fn mismatched_config_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = ck(EmbeddingTying::Untied);
        c.save(&p).unwrap();
        let other = ModelConfig {
            d_ff: 8,
            ..c.model.config().clone()
        };
        assert!(matches!(Checkpoint::load_for(&p, &other), Err(Error::ConfigMismatch(_))));
        assert!(Checkpoint::load_for(&p, c.model.config()).is_ok());
    }
}
