//! JSON population configs: an explicit per-stratum form and a compact
//! generator form that expands deterministically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CrossArm, Population, ShockDistribution, ShockModel, Stratum};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumConfig {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub eps_sd0: Vec<f64>,
    pub eps_sd1: Vec<f64>,
    pub n_treat: usize,
    #[serde(default)]
    pub eta: ShockDistribution,
    #[serde(default)]
    pub eps_cross_arm: CrossArm,
    /// Number of treatment arms; only 2 is supported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    #[serde(default)]
    pub shock_model: ShockModel,
    pub strata: Vec<StratumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStratum<T> {
    All(T),
    Each(Vec<T>),
}

impl<T: Copy> PerStratum<T> {
    fn get(&self, k: usize) -> T {
        match self {
            PerStratum::All(v) => *v,
            PerStratum::Each(v) => v[k],
        }
    }

    fn len_ok(&self, k: usize) -> bool {
        match self {
            PerStratum::All(_) => true,
            PerStratum::Each(v) => v.len() == k,
        }
    }
}

/// Compact population description.
///
/// With `u_i = i / (n_k - 1) - 1/2` indexing units and `v_k = k / (K - 1) - 1/2`
/// indexing strata, the expansion is
/// `y_ik(0) = y0_between v_k + y0_spread u_i` and
/// `y_ik(1) = y_ik(0) + tau + tau_between v_k + tau_within u_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub n_per_stratum: PerStratum<usize>,
    /// Defaults to `floor(n_k / 2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_treat: Option<PerStratum<usize>>,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub tau_between: f64,
    #[serde(default)]
    pub tau_within: f64,
    #[serde(default)]
    pub y0_spread: f64,
    #[serde(default)]
    pub y0_between: f64,
    #[serde(default)]
    pub eps_sd0: f64,
    #[serde(default)]
    pub eps_sd1: f64,
    #[serde(default)]
    pub eps_cross_arm: CrossArm,
    #[serde(default)]
    pub eta: ShockDistribution,
    #[serde(default)]
    pub shock_model: ShockModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<u32>,
}

fn check_arms(arms: Option<u32>, stratum: Option<usize>) -> Result<()> {
    match arms {
        None | Some(2) => Ok(()),
        Some(a) => Err(Error::schema(
            stratum,
            format!("only binary treatment supported, got {a} arms"),
        )),
    }
}

fn centered_grid(i: usize, len: usize) -> f64 {
    if len < 2 {
        0.0
    } else {
        (2.0 * i as f64 - (len - 1) as f64) / (2 * (len - 1)) as f64
    }
}

impl GeneratorConfig {
    /// Constant-zero baseline with the given `(n_k, n_1k)` sizes; every other
    /// field at its default.
    pub fn with_sizes(sizes: &[(usize, usize)]) -> Self {
        Self {
            k: sizes.len(),
            n_per_stratum: PerStratum::Each(sizes.iter().map(|s| s.0).collect()),
            n_treat: Some(PerStratum::Each(sizes.iter().map(|s| s.1).collect())),
            tau: 0.0,
            tau_between: 0.0,
            tau_within: 0.0,
            y0_spread: 0.0,
            y0_between: 0.0,
            eps_sd0: 0.0,
            eps_sd1: 0.0,
            eps_cross_arm: CrossArm::default(),
            eta: ShockDistribution::default(),
            shock_model: ShockModel::default(),
            arms: None,
        }
    }

    pub fn expand(&self) -> Result<PopulationConfig> {
        check_arms(self.arms, None)?;
        if self.k < 2 {
            return Err(Error::schema(
                None,
                format!("need at least 2 strata, got {}", self.k),
            ));
        }
        if !self.n_per_stratum.len_ok(self.k)
            || !self.n_treat.as_ref().is_none_or(|t| t.len_ok(self.k))
        {
            return Err(Error::schema(None, "per-stratum lists must have K entries"));
        }
        let strata = (0..self.k)
            .map(|k| {
                let n = self.n_per_stratum.get(k);
                let v = centered_grid(k, self.k);
                let y0: Vec<f64> = (0..n)
                    .map(|i| self.y0_between * v + self.y0_spread * centered_grid(i, n))
                    .collect();
                let y1 = y0
                    .iter()
                    .enumerate()
                    .map(|(i, y)| {
                        y + self.tau + self.tau_between * v + self.tau_within * centered_grid(i, n)
                    })
                    .collect();
                StratumConfig {
                    y0,
                    y1,
                    eps_sd0: vec![self.eps_sd0; n],
                    eps_sd1: vec![self.eps_sd1; n],
                    n_treat: self.n_treat.as_ref().map_or(n / 2, |t| t.get(k)),
                    eta: self.eta,
                    eps_cross_arm: self.eps_cross_arm,
                    arms: None,
                }
            })
            .collect();
        Ok(PopulationConfig {
            shock_model: self.shock_model,
            strata,
            arms: None,
        })
    }

    pub fn build(&self) -> Result<Population> {
        self.expand()?.build()
    }
}

impl PopulationConfig {
    /// Parses either the explicit form or the generator form (recognised by a
    /// top-level `"K"` key).
    pub fn from_json_str(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        if value.get("K").is_some() {
            let generator: GeneratorConfig = serde_json::from_value(value)?;
            generator.expand()
        } else {
            Ok(serde_json::from_value(value)?)
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<Population> {
        check_arms(self.arms, None)?;
        let strata = self
            .strata
            .iter()
            .enumerate()
            .map(|(k, s)| {
                check_arms(s.arms, Some(k))?;
                Ok(Stratum {
                    id: k,
                    y0: s.y0.clone(),
                    y1: s.y1.clone(),
                    eps_sd0: s.eps_sd0.clone(),
                    eps_sd1: s.eps_sd1.clone(),
                    eps_cross_arm: s.eps_cross_arm,
                    eta: s.eta,
                    n_treat: s.n_treat,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Population::new(strata, self.shock_model)
    }
}

impl From<&Population> for PopulationConfig {
    fn from(pop: &Population) -> Self {
        PopulationConfig {
            shock_model: pop.shock_model(),
            strata: pop
                .strata()
                .iter()
                .map(|s| StratumConfig {
                    y0: s.y0.clone(),
                    y1: s.y1.clone(),
                    eps_sd0: s.eps_sd0.clone(),
                    eps_sd1: s.eps_sd1.clone(),
                    n_treat: s.n_treat,
                    eta: s.eta,
                    eps_cross_arm: s.eps_cross_arm,
                    arms: None,
                })
                .collect(),
            arms: None,
        }
    }
}
