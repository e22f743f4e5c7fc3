use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::RandomStream;

/// Marginal law of a mean-zero shock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ShockFamily {
    Normal {
        sd: f64,
    },
    /// Uniform on `[-half_width, half_width]`.
    Uniform {
        half_width: f64,
    },
    /// Takes `a` with probability `p` and `-a p / (1 - p)` otherwise.
    TwoPoint {
        a: f64,
        #[serde(default = "half")]
        p: f64,
    },
    Degenerate,
}

fn half() -> f64 {
    0.5
}

/// Joint law of the two arm-specific shocks of one unit or stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossArm {
    Identical,
    #[default]
    Independent,
    Correlated(f64),
}

impl CrossArm {
    pub fn rho(&self) -> f64 {
        match *self {
            CrossArm::Identical => 1.0,
            CrossArm::Independent => 0.0,
            CrossArm::Correlated(rho) => rho,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        match *self {
            CrossArm::Correlated(rho) if !(-1.0..=1.0).contains(&rho) => {
                Err(format!("correlation {rho} outside [-1, 1]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockDistribution {
    #[serde(flatten)]
    pub family: ShockFamily,
    #[serde(default)]
    pub cross_arm: CrossArm,
}

impl Default for ShockDistribution {
    fn default() -> Self {
        Self {
            family: ShockFamily::Degenerate,
            cross_arm: CrossArm::Identical,
        }
    }
}

impl ShockFamily {
    pub fn variance(&self) -> f64 {
        match *self {
            ShockFamily::Normal { sd } => sd * sd,
            ShockFamily::Uniform { half_width } => half_width * half_width / 3.0,
            ShockFamily::TwoPoint { a, p } => a * a * p / (1.0 - p),
            ShockFamily::Degenerate => 0.0,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be finite and >= 0, got {v}"))
            }
        };
        match *self {
            ShockFamily::Normal { sd } => nonneg("sd", sd),
            ShockFamily::Uniform { half_width } => nonneg("half_width", half_width),
            ShockFamily::TwoPoint { a, p } => {
                nonneg("a", a)?;
                if p > 0.0 && p < 1.0 {
                    Ok(())
                } else {
                    Err(format!("two-point probability must lie in (0, 1), got {p}"))
                }
            }
            ShockFamily::Degenerate => Ok(()),
        }
    }

    fn draw(&self, rng: &mut RandomStream) -> f64 {
        match *self {
            ShockFamily::Normal { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            ShockFamily::Uniform { half_width } => half_width * (2.0 * rng.uniform() - 1.0),
            ShockFamily::TwoPoint { a, p } => {
                if rng.uniform() < p {
                    a
                } else {
                    -a * p / (1.0 - p)
                }
            }
            ShockFamily::Degenerate => 0.0,
        }
    }
}

impl ShockDistribution {
    pub fn new(family: ShockFamily, cross_arm: CrossArm) -> Self {
        Self { family, cross_arm }
    }

    /// Marginal variance of each arm's shock.
    pub fn variance(&self) -> f64 {
        self.family.variance()
    }

    /// `V(shock(1) - shock(0)) = 2 (1 - rho) V(shock)`.
    pub fn diff_variance(&self) -> f64 {
        match self.cross_arm {
            CrossArm::Identical => 0.0,
            other => 2.0 * (1.0 - other.rho()) * self.variance(),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        self.family.validate()?;
        self.cross_arm.validate()?;
        if let (ShockFamily::TwoPoint { p, .. }, CrossArm::Correlated(_)) =
            (self.family, self.cross_arm)
        {
            if p != 0.5 {
                return Err("correlated two-point shocks require p = 0.5".into());
            }
        }
        Ok(())
    }

    /// Draws `(shock(0), shock(1))`.
    pub fn draw_pair(&self, rng: &mut RandomStream) -> (f64, f64) {
        match (self.family, self.cross_arm) {
            (ShockFamily::Degenerate, _) => (0.0, 0.0),
            (family, CrossArm::Identical) => {
                let x = family.draw(rng);
                (x, x)
            }
            (family, CrossArm::Independent) => {
                let x0 = family.draw(rng);
                let x1 = family.draw(rng);
                (x0, x1)
            }
            (ShockFamily::Normal { sd }, CrossArm::Correlated(rho)) => {
                let z0: f64 = StandardNormal.sample(rng);
                let z: f64 = StandardNormal.sample(rng);
                (sd * z0, sd * (rho * z0 + (1.0 - rho * rho).sqrt() * z))
            }
            // symmetric marginals: matched with prob (1 + rho) / 2, sign-flipped otherwise
            (family, CrossArm::Correlated(rho)) => {
                let x = family.draw(rng);
                if rng.uniform() < 0.5 * (1.0 + rho) {
                    (x, x)
                } else {
                    (x, -x)
                }
            }
        }
    }
}

/// Draws a standard-normal pair with the cross-arm correlation of `mode`.
pub(crate) fn normal_pair(mode: CrossArm, rng: &mut RandomStream) -> (f64, f64) {
    let z0: f64 = StandardNormal.sample(rng);
    match mode {
        CrossArm::Identical => (z0, z0),
        CrossArm::Independent => (z0, StandardNormal.sample(rng)),
        CrossArm::Correlated(rho) => {
            let z: f64 = StandardNormal.sample(rng);
            (z0, rho * z0 + (1.0 - rho * rho).sqrt() * z)
        }
    }
}
