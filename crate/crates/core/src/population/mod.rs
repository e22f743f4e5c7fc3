//! Finite populations with stochastic potential outcomes.
//!
//! Unit `i` of stratum `k` has potential outcomes
//! `Y_ik(d) = y_ik(d) + eta_k(d) + eps_ik(d)` (additive model) or
//! `Y_ik(d) = y_ik(d) (1 + eta_k(d)) + eps_ik(d)` (multiplicative stratum shock),
//! where `y_ik(d)` are fixed means, `eta_k(d)` are stratum-level shocks and
//! `eps_ik(d)` are unit-level shocks, all with mean zero.

mod config;
mod shocks;

pub use config::{GeneratorConfig, PerStratum, PopulationConfig, StratumConfig};
pub use shocks::{CrossArm, ShockDistribution, ShockFamily};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShockModel {
    #[default]
    Additive,
    MultiplicativeEta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    /// 0-based position in the population.
    pub id: usize,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub eps_sd0: Vec<f64>,
    pub eps_sd1: Vec<f64>,
    pub eps_cross_arm: CrossArm,
    pub eta: ShockDistribution,
    pub n_treat: usize,
}

impl Stratum {
    pub fn n(&self) -> usize {
        self.y0.len()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treat
    }

    /// `ATE_k`, the mean of `y_ik(1) - y_ik(0)` in the stratum.
    pub fn ate(&self) -> f64 {
        self.y1
            .iter()
            .zip(&self.y0)
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / self.n() as f64
    }

    fn validate(&self) -> Result<()> {
        let k = Some(self.id);
        let n = self.y0.len();
        if self.y1.len() != n || self.eps_sd0.len() != n || self.eps_sd1.len() != n {
            return Err(Error::schema(
                k,
                "y0, y1, eps_sd0 and eps_sd1 must have equal lengths",
            ));
        }
        if n < 2 {
            return Err(Error::schema(k, "a stratum needs at least 2 units"));
        }
        if self.n_treat < 1 || self.n_treat > n - 1 {
            return Err(Error::schema(
                k,
                format!(
                    "both arms nonempty: n_treat = {} must lie in [1, {}]",
                    self.n_treat,
                    n - 1
                ),
            ));
        }
        if self.y0.iter().chain(&self.y1).any(|v| !v.is_finite()) {
            return Err(Error::schema(k, "baseline outcomes must be finite"));
        }
        if self
            .eps_sd0
            .iter()
            .chain(&self.eps_sd1)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::schema(k, "eps_sd entries must be finite and >= 0"));
        }
        self.eps_cross_arm
            .validate()
            .map_err(|m| Error::schema(k, format!("eps_cross_arm: {m}")))?;
        self.eta
            .validate()
            .map_err(|m| Error::schema(k, format!("eta: {m}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    strata: Vec<Stratum>,
    shock_model: ShockModel,
    n: usize,
}

impl Population {
    /// Validates the strata and assembles a population. Stratum ids are
    /// reassigned to their positions.
    pub fn new(mut strata: Vec<Stratum>, shock_model: ShockModel) -> Result<Self> {
        if strata.len() < 2 {
            return Err(Error::schema(
                None,
                format!("need at least 2 strata, got {}", strata.len()),
            ));
        }
        for (k, s) in strata.iter_mut().enumerate() {
            s.id = k;
            s.validate()?;
        }
        let n = strata.iter().map(Stratum::n).sum();
        Ok(Self {
            strata,
            shock_model,
            n,
        })
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn shock_model(&self) -> ShockModel {
        self.shock_model
    }

    pub fn k(&self) -> usize {
        self.strata.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Mean stratum size `n / K`.
    pub fn n_bar(&self) -> f64 {
        self.n as f64 / self.k() as f64
    }

    /// `(n_k, n_1k)` for every stratum.
    pub fn sizes(&self) -> Vec<(usize, usize)> {
        self.strata.iter().map(|s| (s.n(), s.n_treat)).collect()
    }

    /// Stratum weights `n_k / n_bar`.
    pub fn weights(&self) -> Vec<f64> {
        let nb = self.n_bar();
        self.strata.iter().map(|s| s.n() as f64 / nb).collect()
    }

    pub fn equal_sizes(&self) -> bool {
        self.strata.iter().all(|s| s.n() == self.strata[0].n())
    }

    /// Every arm has at least two units, so robust variances are defined.
    pub fn robust_defined(&self) -> bool {
        self.strata
            .iter()
            .all(|s| s.n_treat >= 2 && s.n_control() >= 2)
    }

    /// Draws the stratum-level shocks; stratum `k` uses child stream `k`.
    pub fn draw_eta(&self, stream: &RandomStream) -> (Vec<f64>, Vec<f64>) {
        self.strata
            .iter()
            .map(|s| s.eta.draw_pair(&mut stream.child(s.id as u64)))
            .unzip()
    }

    /// Draws the unit-level shocks; stratum `k` uses child stream `k`.
    pub fn draw_eps(&self, stream: &RandomStream) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.strata
            .iter()
            .map(|s| {
                let mut rng = stream.child(s.id as u64);
                s.eps_sd0
                    .iter()
                    .zip(&s.eps_sd1)
                    .map(|(&sd0, &sd1)| {
                        let (z0, z1) = shocks::normal_pair(s.eps_cross_arm, &mut rng);
                        (sd0 * z0, sd1 * z1)
                    })
                    .unzip()
            })
            .unzip()
    }

    /// Draws a full shock realization. The stratum shocks come from the
    /// `Eta` child of `stream` and the unit shocks from its `Eps` child.
    pub fn draw_shocks(&self, stream: &RandomStream) -> ShockRealization {
        let (eta0, eta1) = self.draw_eta(&stream.purpose(Purpose::Eta));
        let (eps0, eps1) = self.draw_eps(&stream.purpose(Purpose::Eps));
        ShockRealization {
            eta0,
            eta1,
            eps0,
            eps1,
        }
    }

    /// All-zero shocks of the right shape.
    pub fn zero_shocks(&self) -> ShockRealization {
        ShockRealization {
            eta0: vec![0.0; self.k()],
            eta1: vec![0.0; self.k()],
            eps0: self.strata.iter().map(|s| vec![0.0; s.n()]).collect(),
            eps1: self.strata.iter().map(|s| vec![0.0; s.n()]).collect(),
        }
    }

    pub fn check_shape(&self, shocks: &ShockRealization) -> Result<()> {
        let k = self.k();
        if shocks.eta0.len() != k
            || shocks.eta1.len() != k
            || shocks.eps0.len() != k
            || shocks.eps1.len() != k
        {
            return Err(Error::ShapeMismatch(format!(
                "shock realization does not have {k} strata"
            )));
        }
        for s in &self.strata {
            if shocks.eps0[s.id].len() != s.n() || shocks.eps1[s.id].len() != s.n() {
                return Err(Error::ShapeMismatch(format!(
                    "unit shocks of stratum {} do not have {} entries",
                    s.id,
                    s.n()
                )));
            }
        }
        Ok(())
    }

    /// Realized potential outcomes under `shocks`.
    pub fn realize_outcomes(&self, shocks: &ShockRealization) -> Result<PotentialOutcomes> {
        self.check_shape(shocks)?;
        let combine = |y: f64, eta: f64, eps: f64| match self.shock_model {
            ShockModel::Additive => y + eta + eps,
            ShockModel::MultiplicativeEta => y * (1.0 + eta) + eps,
        };
        let (y0, y1) = self
            .strata
            .iter()
            .map(|s| {
                let k = s.id;
                let y0 =
                    s.y0.iter()
                        .zip(&shocks.eps0[k])
                        .map(|(&y, &e)| combine(y, shocks.eta0[k], e))
                        .collect();
                let y1 =
                    s.y1.iter()
                        .zip(&shocks.eps1[k])
                        .map(|(&y, &e)| combine(y, shocks.eta1[k], e))
                        .collect();
                (y0, y1)
            })
            .unzip();
        Ok(PotentialOutcomes { y0, y1 })
    }
}

/// One draw of every stratum-level and unit-level shock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockRealization {
    pub eta0: Vec<f64>,
    pub eta1: Vec<f64>,
    pub eps0: Vec<Vec<f64>>,
    pub eps1: Vec<Vec<f64>>,
}

/// Realized `Y_ik(0)` and `Y_ik(1)`, ragged by stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
}
