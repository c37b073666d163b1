use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::params::{Model, ParamGroup, Side};
use crate::error::{Error, Result};

/// Which side of the network is copied from a pretrained checkpoint (`Y`)
/// and which is freshly initialized (`N`). Written encoder first, e.g. `NY`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct InitMask {
    pub encoder: bool,
    pub decoder: bool,
}

impl InitMask {
    pub const NN: InitMask = InitMask::new(false, false);
    pub const NY: InitMask = InitMask::new(false, true);
    pub const YN: InitMask = InitMask::new(true, false);
    pub const YY: InitMask = InitMask::new(true, true);
    pub const ALL: [InitMask; 4] = [InitMask::NN, InitMask::NY, InitMask::YN, InitMask::YY];

    pub const fn new(encoder: bool, decoder: bool) -> Self {
        InitMask { encoder, decoder }
    }

    pub fn covers(&self, side: Side) -> bool {
        match side {
            Side::Encoder => self.encoder,
            Side::Decoder => self.decoder,
        }
    }
}

impl fmt::Display for InitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yn = |b| if b { 'Y' } else { 'N' };
        write!(f, "{}{}", yn(self.encoder), yn(self.decoder))
    }
}

impl FromStr for InitMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let flag = |c| match c {
            'Y' | 'y' => Ok(true),
            'N' | 'n' => Ok(false),
            _ => Err(Error::Config(format!("bad init mask `{s}`, expected one of NN NY YN YY"))),
        };
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(e), Some(d), None) => Ok(InitMask::new(flag(e)?, flag(d)?)),
            _ => Err(Error::Config(format!("bad init mask `{s}`, expected one of NN NY YN YY"))),
        }
    }
}

impl TryFrom<String> for InitMask {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InitMask> for String {
    fn from(m: InitMask) -> String {
        m.to_string()
    }
}

/// Fails when a tensor shared across the encoder/decoder boundary would be
/// copied on one side and re-initialized on the other.
pub(crate) fn check_split(model: &Model, encoder: bool, decoder: bool, what: &str) -> Result<()> {
    if encoder == decoder {
        return Ok(());
    }
    if let Some((alias, owner)) = model.shared_across_sides().into_iter().next() {
        return Err(Error::SplitSharedTensor(format!(
            "{what} treats the encoder and decoder sides differently, but `{alias}` is tied to `{owner}` \
             (embedding_tying = {:?}); use untied embeddings",
            model.config().embedding_tying
        )));
    }
    Ok(())
}

/// A fresh model from `seed` whose `Y`-side groups are then overwritten
/// with the checkpoint's tensors.
pub fn selective_init(model: &Model, ckpt: &Checkpoint, mask: InitMask, seed: u64) -> Result<Model> {
    let config = model.config();
    if !config.same_geometry(ckpt.model.config()) {
        return Err(Error::ConfigMismatch(format!(
            "model {:?} vs checkpoint {:?}",
            config,
            ckpt.model.config()
        )));
    }
    check_split(model, mask.encoder, mask.decoder, &format!("init mask {mask}"))?;
    let mut out = Model::build(config.clone(), seed)?;
    for group in ParamGroup::ALL {
        if !mask.covers(group.side()) {
            continue;
        }
        let names: Vec<String> = out.names_in(group).map(str::to_string).collect();
        for name in names {
            let src = ckpt.model.params()[&name].clone();
            out.params_mut().insert(name, src);
        }
    }
    out.check_partition()?;
    Ok(out)
}
