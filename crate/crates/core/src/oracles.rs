//! Closed-form ground truth for a population: estimands, conditional and
//! unconditional variances of the estimator, expected values of both variance
//! estimators, the clustered-minus-robust gap for equal strata, and the
//! finite-K asymptotic variances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{Population, ShockModel, ShockRealization, Stratum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandSet {
    /// Mean of `y_ik(1) - y_ik(0)`.
    pub ate: f64,
    /// Average effect holding the stratum shocks fixed.
    pub ate_given_eta: Option<f64>,
    /// Average effect holding every shock fixed.
    pub ate_given_all: Option<f64>,
}

impl EstimandSet {
    pub fn given_eta(&self) -> Result<f64> {
        self.ate_given_eta.ok_or(Error::MissingShocks)
    }

    pub fn given_all(&self) -> Result<f64> {
        self.ate_given_all.ok_or(Error::MissingShocks)
    }
}

/// `(n - 1)`-denominator variance.
pub(crate) fn sample_variance(x: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = x.len() as f64;
    let mean = x.clone().sum::<f64>() / n;
    x.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn ate(pop: &Population) -> f64 {
    pop.strata()
        .iter()
        .flat_map(|s| s.y1.iter().zip(&s.y0).map(|(a, b)| a - b))
        .sum::<f64>()
        / pop.n() as f64
}

/// `E(Y_ik(d) | eta)` for every unit of stratum `s`.
fn conditional_means(pop: &Population, s: &Stratum, eta0: f64, eta1: f64) -> (Vec<f64>, Vec<f64>) {
    match pop.shock_model() {
        ShockModel::Additive => (
            s.y0.iter().map(|y| y + eta0).collect(),
            s.y1.iter().map(|y| y + eta1).collect(),
        ),
        ShockModel::MultiplicativeEta => (
            s.y0.iter().map(|y| y * (1.0 + eta0)).collect(),
            s.y1.iter().map(|y| y * (1.0 + eta1)).collect(),
        ),
    }
}

pub fn estimands(pop: &Population, shocks: Option<&ShockRealization>) -> Result<EstimandSet> {
    let ate = ate(pop);
    let Some(shocks) = shocks else {
        return Ok(EstimandSet {
            ate,
            ate_given_eta: None,
            ate_given_all: None,
        });
    };
    pop.check_shape(shocks)?;
    let n = pop.n() as f64;
    let ate_given_eta = match pop.shock_model() {
        ShockModel::Additive => {
            ate + pop
                .strata()
                .iter()
                .map(|s| s.n() as f64 * (shocks.eta1[s.id] - shocks.eta0[s.id]))
                .sum::<f64>()
                / n
        }
        ShockModel::MultiplicativeEta => {
            pop.strata()
                .iter()
                .map(|s| {
                    let (m0, m1) = conditional_means(pop, s, shocks.eta0[s.id], shocks.eta1[s.id]);
                    m1.iter().zip(&m0).map(|(a, b)| a - b).sum::<f64>()
                })
                .sum::<f64>()
                / n
        }
    };
    let po = pop.realize_outcomes(shocks)?;
    let ate_given_all = po
        .y1
        .iter()
        .flatten()
        .zip(po.y0.iter().flatten())
        .map(|(a, b)| a - b)
        .sum::<f64>()
        / n;
    Ok(EstimandSet {
        ate,
        ate_given_eta: Some(ate_given_eta),
        ate_given_all: Some(ate_given_all),
    })
}

/// The ingredients of the stratum-level conditional variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumMoments {
    pub s2_y0: f64,
    pub s2_y1: f64,
    pub s2_effect: f64,
    pub mean_sigma2_0: f64,
    pub mean_sigma2_1: f64,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
}

impl StratumMoments {
    /// `V(ATE_hat_k | eta)`.
    pub fn conditional_variance(&self) -> f64 {
        let (n, n1, n0) = (self.n as f64, self.n1 as f64, self.n0 as f64);
        self.s2_y0 / n0 + self.s2_y1 / n1 - self.s2_effect / n
            + self.mean_sigma2_1 / n1
            + self.mean_sigma2_0 / n0
    }

    /// `E(V_rob_k | eta)`.
    pub fn expected_robust(&self) -> f64 {
        let (n1, n0) = (self.n1 as f64, self.n0 as f64);
        (self.s2_y1 + self.mean_sigma2_1) / n1 + (self.s2_y0 + self.mean_sigma2_0) / n0
    }
}

fn eta_or_zero(
    pop: &Population,
    shocks: Option<&ShockRealization>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match (pop.shock_model(), shocks) {
        // additive shocks shift every unit of an arm equally and drop out
        (ShockModel::Additive, _) => Ok((vec![0.0; pop.k()], vec![0.0; pop.k()])),
        (ShockModel::MultiplicativeEta, Some(s)) => {
            pop.check_shape(s)?;
            Ok((s.eta0.clone(), s.eta1.clone()))
        }
        (ShockModel::MultiplicativeEta, None) => Err(Error::MissingShocks),
    }
}

/// Per-stratum moments given the stratum shocks. Shocks are only needed for
/// the multiplicative model.
pub fn stratum_moments(
    pop: &Population,
    shocks: Option<&ShockRealization>,
) -> Result<Vec<StratumMoments>> {
    let (eta0, eta1) = eta_or_zero(pop, shocks)?;
    Ok(pop
        .strata()
        .iter()
        .map(|s| {
            let (m0, m1) = conditional_means(pop, s, eta0[s.id], eta1[s.id]);
            let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
            StratumMoments {
                s2_y0: sample_variance(m0.iter().copied()),
                s2_y1: sample_variance(m1.iter().copied()),
                s2_effect: sample_variance(m1.iter().zip(&m0).map(|(a, b)| a - b)),
                mean_sigma2_0: mean(&sq(&s.eps_sd0)),
                mean_sigma2_1: mean(&sq(&s.eps_sd1)),
                n: s.n(),
                n1: s.n_treat,
                n0: s.n_control(),
            }
        })
        .collect())
}

/// `(1/K^2) sum_k (n_k / n_bar)^2 x_k`.
fn aggregate(pop: &Population, per_stratum: impl Iterator<Item = f64>) -> f64 {
    let k = pop.k() as f64;
    pop.weights()
        .iter()
        .zip(per_stratum)
        .map(|(w, x)| w * w * x)
        .sum::<f64>()
        / (k * k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalVariance {
    pub v_cond_k: Vec<f64>,
    pub v_cond: f64,
}

/// `V(ATE_hat | eta)` and its stratum components.
pub fn true_conditional_variance(
    pop: &Population,
    shocks: Option<&ShockRealization>,
) -> Result<ConditionalVariance> {
    let v_cond_k: Vec<f64> = stratum_moments(pop, shocks)?
        .iter()
        .map(StratumMoments::conditional_variance)
        .collect();
    let v_cond = aggregate(pop, v_cond_k.iter().copied());
    Ok(ConditionalVariance { v_cond_k, v_cond })
}

fn require_additive(pop: &Population, what: &str) -> Result<()> {
    match pop.shock_model() {
        ShockModel::Additive => Ok(()),
        ShockModel::MultiplicativeEta => Err(Error::UnsupportedMode(format!(
            "{what} has no closed form under multiplicative stratum shocks"
        ))),
    }
}

/// `V(eta_k(1) - eta_k(0))` for every stratum.
pub fn eta_diff_variances(pop: &Population) -> Vec<f64> {
    pop.strata().iter().map(|s| s.eta.diff_variance()).collect()
}

/// Unconditional `V(ATE_hat)`.
pub fn true_unconditional_variance(pop: &Population) -> Result<f64> {
    require_additive(pop, "the unconditional variance")?;
    let cond = true_conditional_variance(pop, None)?;
    Ok(aggregate(
        pop,
        cond.v_cond_k
            .iter()
            .zip(eta_diff_variances(pop))
            .map(|(v, d)| v + d),
    ))
}

/// `E(V_rob | eta)`; in the additive model this is also the unconditional
/// expectation.
pub fn expected_robust_variance(
    pop: &Population,
    shocks: Option<&ShockRealization>,
) -> Result<f64> {
    let m = stratum_moments(pop, shocks)?;
    Ok(aggregate(
        pop,
        m.iter().map(StratumMoments::expected_robust),
    ))
}

/// Means and variances of `AD_k = (n_k / n_bar) ATE_hat_k`.
pub fn ad_moments(pop: &Population) -> Result<(Vec<f64>, Vec<f64>)> {
    require_additive(pop, "the moments of AD_k")?;
    let cond = true_conditional_variance(pop, None)?;
    let diff = eta_diff_variances(pop);
    let w = pop.weights();
    let means = pop
        .strata()
        .iter()
        .zip(&w)
        .map(|(s, w)| w * s.ate())
        .collect();
    let vars = cond
        .v_cond_k
        .iter()
        .zip(&diff)
        .zip(&w)
        .map(|((v, d), w)| w * w * (v + d))
        .collect();
    Ok((means, vars))
}

/// Unconditional `E(V_clu)`:
/// `(1/K^2) sum_k V(AD_k) + 1 / (K (K - 1)) sum_k (E AD_k - mean_j E AD_j)^2`.
pub fn expected_clustered_variance(pop: &Population) -> Result<f64> {
    let (means, vars) = ad_moments(pop)?;
    let k = pop.k() as f64;
    let m = mean(&means);
    let between: f64 = means.iter().map(|x| (x - m).powi(2)).sum();
    Ok(vars.iter().sum::<f64>() / (k * k) + between / (k * (k - 1.0)))
}

/// `E[K V_clu] - E[K V_rob]` for equal strata sizes.
pub fn corollary1_gap(pop: &Population) -> Result<f64> {
    require_additive(pop, "the clustered-robust gap")?;
    if !pop.equal_sizes() {
        return Err(Error::UnequalStrataSizes);
    }
    let k = pop.k() as f64;
    let eta_term = eta_diff_variances(pop).iter().sum::<f64>() / k;
    let ates: Vec<f64> = pop.strata().iter().map(Stratum::ate).collect();
    let m = mean(&ates);
    let between = ates.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (k - 1.0);
    let within = stratum_moments(pop, None)?
        .iter()
        .map(|s| s.s2_effect)
        .sum::<f64>()
        / k
        / pop.n_bar();
    Ok(eta_term + between - within)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticVariances {
    /// `(1/K) sum E(AD_k^2) - (1/K) sum E(AD_k)^2`.
    pub sigma2: f64,
    /// `(1/K) sum E(AD_k^2) - ((1/K) sum E(AD_k))^2`.
    pub sigma2_plus: f64,
}

/// Finite-K values of the limiting variance of `sqrt(K) (ATE_hat - ATE)` and
/// of the probability limit of `K V_clu`.
pub fn asymptotic_variances(pop: &Population) -> Result<AsymptoticVariances> {
    let (means, vars) = ad_moments(pop)?;
    let k = pop.k() as f64;
    let second: f64 = means.iter().zip(&vars).map(|(m, v)| v + m * m).sum::<f64>() / k;
    let mean_sq: f64 = means.iter().map(|m| m * m).sum::<f64>() / k;
    let m = mean(&means);
    Ok(AsymptoticVariances {
        sigma2: second - mean_sq,
        sigma2_plus: second - m * m,
    })
}

/// All closed-form quantities available for a population, as embedded in
/// Monte Carlo reports. Entries that need unavailable shocks or an additive
/// model are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueVariances {
    pub estimands: EstimandSet,
    pub v_cond_k: Option<Vec<f64>>,
    pub v_cond: Option<f64>,
    pub v_uncond: Option<f64>,
    pub expected_v_rob: Option<f64>,
    pub expected_v_clu: Option<f64>,
    pub gap_cor1: Option<f64>,
    pub sigma2: Option<f64>,
    pub sigma2_plus: Option<f64>,
}

pub fn theory(pop: &Population, shocks: Option<&ShockRealization>) -> Result<TrueVariances> {
    let cond = true_conditional_variance(pop, shocks).ok();
    let asym = asymptotic_variances(pop).ok();
    Ok(TrueVariances {
        estimands: estimands(pop, shocks)?,
        v_cond_k: cond.as_ref().map(|c| c.v_cond_k.clone()),
        v_cond: cond.map(|c| c.v_cond),
        v_uncond: true_unconditional_variance(pop).ok(),
        expected_v_rob: expected_robust_variance(pop, shocks).ok(),
        expected_v_clu: expected_clustered_variance(pop).ok(),
        gap_cor1: corollary1_gap(pop).ok(),
        sigma2: asym.map(|a| a.sigma2),
        sigma2_plus: asym.map(|a| a.sigma2_plus),
    })
}
