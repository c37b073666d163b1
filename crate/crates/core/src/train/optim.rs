use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::autograd::Bindings;
use crate::model::{check_split, Model, ParamGroup, Side};
use crate::error::{Error, Result};

/// Gradients keyed by owned parameter name. A parameter without an entry
/// receives no update and its moments do not advance.
pub type Grads = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    /// Updates applied to each parameter; drives its bias correction.
    pub updates: BTreeMap<String, u64>,
    pub t: u64,
}

/// One Adam step with bias correction at learning rate `lr`.
///
/// Every gradient is checked before anything is modified, so a rejected
/// step leaves parameters and state untouched.
pub fn adam_step(params: &mut Bindings, grads: &Grads, state: &mut OptimState, cfg: &TrainConfig, lr: f64) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter `{name}`")))?;
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                what: "gradient and parameter",
                left: g.len(),
                right: p.len(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                step: state.t + 1,
                param: name.clone(),
            });
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (name, g) in grads {
        let p = params.get_mut(name).unwrap().data_mut();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let k = state.updates.entry(name.clone()).or_insert(0);
        *k += 1;
        let c1 = 1.0 - b1.powi(*k as i32);
        let c2 = 1.0 - b2.powi(*k as i32);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm == 0` disables clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Parameter groups held fixed during training.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    frozen: BTreeSet<ParamGroup>,
}

impl FreezeMask {
    pub fn none() -> Self {
        FreezeMask::default()
    }

    pub fn all() -> Self {
        FreezeMask {
            frozen: ParamGroup::ALL.into_iter().collect(),
        }
    }

    /// `encoder_updated`/`decoder_updated` follow the `Y` = updated,
    /// `N` = fixed convention.
    pub fn from_sides(encoder_updated: bool, decoder_updated: bool) -> Self {
        let mut frozen = BTreeSet::new();
        if !encoder_updated {
            frozen.extend(ParamGroup::on_side(Side::Encoder));
        }
        if !decoder_updated {
            frozen.extend(ParamGroup::on_side(Side::Decoder));
        }
        FreezeMask { frozen }
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let frozen = names.iter().map(|n| n.as_ref().parse()).collect::<Result<_>>()?;
        Ok(FreezeMask { frozen })
    }

    pub fn frozen(&self) -> &BTreeSet<ParamGroup> {
        &self.frozen
    }

    pub fn is_frozen(&self, g: ParamGroup) -> bool {
        self.frozen.contains(&g)
    }

    pub fn side_updated(&self, side: Side) -> bool {
        ParamGroup::on_side(side).all(|g| !self.is_frozen(g))
    }

    /// Rejects masks that would split a tensor tied across the two sides.
    pub fn check(&self, model: &Model) -> Result<()> {
        let enc = ParamGroup::on_side(Side::Encoder).any(|g| self.is_frozen(g));
        let dec = ParamGroup::on_side(Side::Decoder).any(|g| self.is_frozen(g));
        check_split(model, enc, dec, &format!("freeze mask {self}"))
    }
}

impl fmt::Display for FreezeMask {
    /// Two-letter form when the mask is side-aligned (`NY`: encoder fixed,
    /// decoder updated), otherwise the frozen group list.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = self.side_updated(Side::Encoder);
        let d = self.side_updated(Side::Decoder);
        if *self == FreezeMask::from_sides(e, d) {
            let yn = |b| if b { 'Y' } else { 'N' };
            write!(f, "{}{}", yn(e), yn(d))
        } else {
            let names: Vec<&str> = self.frozen.iter().map(|g| g.name()).collect();
            write!(f, "frozen:{}", names.join(","))
        }
    }
}

impl FromStr for FreezeMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(list) = s.strip_prefix("frozen:") {
            let names: Vec<&str> = list.split(',').filter(|x| !x.is_empty()).collect();
            return FreezeMask::from_names(&names);
        }
        let init: crate::model::InitMask = s.parse()?;
        Ok(FreezeMask::from_sides(init.encoder, init.decoder))
    }
}

/// Drops the gradients of frozen parameters, which the optimizer then
/// treats as fixed (no update, no moment change).
pub fn apply_freeze(grads: &mut Grads, model: &Model, mask: &FreezeMask) -> Result<()> {
    for name in grads.keys() {
        if model.group_of(name).is_none() {
            return Err(Error::Config(format!("gradient for unknown parameter `{name}`")));
        }
    }
    grads.retain(|name, _| !mask.is_frozen(model.group_of(name).unwrap()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn scalar_params(x: f64) -> Bindings {
        [("p".to_string(), Tensor::scalar(x))].into()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig {
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            ..Default::default()
        };
        let mut p = scalar_params(0.5);
        let mut st = OptimState::default();
        let g: Grads = [("p".to_string(), vec![1.0])].into();
        adam_step(&mut p, &g, &mut st, &cfg, 1e-3).unwrap();
        assert!((p["p"].data()[0] - (0.5 - 1e-3)).abs() < 1e-10);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let cfg = TrainConfig::default();
        let mut p = scalar_params(0.5);
        let mut st = OptimState::default();
        adam_step(&mut p, &[("p".to_string(), vec![2.0])].into(), &mut st, &cfg, 1e-3).unwrap();
        let (m0, v0) = (st.m["p"][0], st.v["p"][0]);
        let before = p["p"].data()[0];
        let mut q = p.clone();
        let mut st2 = st.clone();
        adam_step(&mut q, &[("p".to_string(), vec![0.0])].into(), &mut st2, &cfg, 0.0).unwrap();
        assert_eq!(q["p"].data()[0], before);
        assert!(st2.m["p"][0].abs() < m0.abs() && st2.v["p"][0] < v0);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut p = scalar_params(0.5);
        let mut st = OptimState::default();
        let err = adam_step(&mut p, &[("p".to_string(), vec![f64::NAN])].into(), &mut st, &TrainConfig::default(), 1.0);
        assert!(matches!(err, Err(Error::NonFiniteGradient { step: 1, .. })));
        assert_eq!(st, OptimState::default());
        assert_eq!(p["p"].data()[0], 0.5);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g: Grads = [("a".to_string(), vec![3.0]), ("b".to_string(), vec![4.0])].into();
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let n = g.values().flatten().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n <= 1.0 + 1e-12);
    }

    #[test]
    fn mask_labels() {
        assert_eq!(FreezeMask::from_sides(false, true).to_string(), "NY");
        assert_eq!("YN".parse::<FreezeMask>().unwrap(), FreezeMask::from_sides(true, false));
        let m: FreezeMask = "frozen:out_proj".parse().unwrap();
        assert_eq!(m.to_string(), "frozen:out_proj");
        assert!(matches!("frozen:nope".parse::<FreezeMask>(), Err(Error::UnknownGroup(_))));
    }
}
