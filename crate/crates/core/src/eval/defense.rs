use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    #[default]
    None,
    Laplace,
    Gaussian,
}

/// Output-noise defense on oracle responses. `strength` is the Laplace
/// scale or the Gaussian standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSetting {
    #[serde(default)]
    pub kind: DefenseKind,
    #[serde(default)]
    pub strength: f64,
    #[serde(default = "yes")]
    pub renormalize: bool,
}

fn yes() -> bool {
    true
}

impl Default for DefenseSetting {
    fn default() -> Self {
        Self {
            kind: DefenseKind::None,
            strength: 0.0,
            renormalize: true,
        }
    }
}

impl DefenseSetting {
    pub fn laplace(strength: f64) -> Self {
        Self {
            kind: DefenseKind::Laplace,
            strength,
            renormalize: true,
        }
    }

    pub fn gaussian(strength: f64) -> Self {
        Self {
            kind: DefenseKind::Gaussian,
            strength,
            renormalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "defense strength must be finite and >= 0, got {}",
                self.strength
            )));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind != DefenseKind::None && self.strength > 0.0
    }
}

/// Zero-mean Laplace draw by inverse CDF.
fn laplace(scale: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Adds i.i.d. noise to every coordinate; with `renormalize` the result
/// is clipped at zero and rescaled to a distribution (uniform if nothing
/// positive survives).
pub fn apply_defense(posterior: &[f64], setting: &DefenseSetting, rng: &mut impl Rng) -> Vec<f64> {
    if !setting.is_active() {
        return posterior.to_vec();
    }
    let mut out: Vec<f64> = match setting.kind {
        DefenseKind::Laplace => posterior.iter().map(|&p| p + laplace(setting.strength, rng)).collect(),
        DefenseKind::Gaussian => {
            let normal = Normal::new(0.0, setting.strength).expect("validated std");
            posterior.iter().map(|&p| p + normal.sample(rng)).collect()
        }
        DefenseKind::None => unreachable!(),
    };
    if setting.renormalize {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        let sum: f64 = out.iter().sum();
        if sum > 0.0 {
            out.iter_mut().for_each(|v| *v /= sum);
        } else {
            let c = out.len() as f64;
            out.iter_mut().for_each(|v| *v = 1.0 / c);
        }
    }
    out
}
