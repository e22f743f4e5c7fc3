//! Replication engine that checks the estimator against the closed-form
//! oracles.
//!
//! Replication `r` derives every random input from `(seed, r)` alone, so runs
//! are reproducible per replication and independent of thread count.
//! Replications are processed in fixed-size chunks; chunk accumulators are
//! merged in chunk order.

mod accum;

pub use accum::Moments;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bootstrap::{wild_cluster_bootstrap, BootstrapMode};
use crate::design::{assign, observe};
use crate::error::{Error, Result};
use crate::estimators::{
    ate_from_strata, estimate_strata, normal_quantile, variance_clustered, variance_robust,
};
use crate::oracles::{self, TrueVariances};
use crate::population::{Population, ShockModel, ShockRealization};
use crate::rng::{Purpose, RandomStream};

const CHUNK: u64 = 256;
/// Allowed shortfall of a coverage rate below the nominal level.
pub const COVERAGE_SLACK: f64 = 0.005;
/// Allowed distance of a bootstrap rejection rate from the nominal level.
pub const SIZE_BAND: f64 = 0.02;
/// KS threshold `KS_SCALE / sqrt(R)`; equals 0.02 at `R = 10^4`.
pub const KS_SCALE: f64 = 2.0;
/// Tolerance multiplier applied to Monte Carlo standard errors.
pub const Z_TOL: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Unbiasedness,
    CondVariance,
    UncondVariance,
    RobConservative,
    CluConservative,
    Cor1Gap,
    Coverage,
    Clt,
    BootstrapSize,
}

impl Target {
    pub const ALL: [Target; 9] = [
        Target::Unbiasedness,
        Target::CondVariance,
        Target::UncondVariance,
        Target::RobConservative,
        Target::CluConservative,
        Target::Cor1Gap,
        Target::Coverage,
        Target::Clt,
        Target::BootstrapSize,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Target::Unbiasedness => "unbiasedness",
            Target::CondVariance => "cond_variance",
            Target::UncondVariance => "uncond_variance",
            Target::RobConservative => "rob_conservative",
            Target::CluConservative => "clu_conservative",
            Target::Cor1Gap => "cor1_gap",
            Target::Coverage => "coverage",
            Target::Clt => "clt",
            Target::BootstrapSize => "bootstrap_size",
        }
    }

    pub fn parse(s: &str) -> Option<Target> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Target::ALL
            .into_iter()
            .find(|t| t.name().replace('_', "") == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCConfig {
    pub replications: u64,
    pub seed: u64,
    /// Draw the stratum shocks once and hold them fixed across replications.
    pub condition_on_eta: bool,
    pub targets: Vec<Target>,
    /// Level for coverage and bootstrap-size targets.
    pub alpha: f64,
    pub bootstrap: BootstrapMode,
    /// Keep every replication's estimates in the summary.
    pub keep_draws: bool,
}

impl MCConfig {
    pub fn new(replications: u64, seed: u64, targets: Vec<Target>) -> Self {
        Self {
            replications,
            seed,
            condition_on_eta: false,
            targets,
            alpha: 0.05,
            bootstrap: BootstrapMode::Sampled(999),
            keep_draws: false,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.condition_on_eta = true;
        self
    }

    /// Checks every target's prerequisites against `pop`.
    pub fn validate(&self, pop: &Population) -> Result<()> {
        if self.replications < 100 {
            return Err(Error::InvalidArgument(format!(
                "need at least 100 replications, got {}",
                self.replications
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        let additive = pop.shock_model() == ShockModel::Additive;
        for &t in &self.targets {
            let fail = |reason: &str| {
                Err(Error::PrerequisiteViolation {
                    target: t.name().into(),
                    reason: reason.into(),
                })
            };
            match t {
                Target::CondVariance if !self.condition_on_eta => {
                    return fail("needs frozen stratum shocks")
                }
                Target::RobConservative if !self.condition_on_eta => {
                    return fail("needs frozen stratum shocks")
                }
                Target::UncondVariance
                | Target::CluConservative
                | Target::Cor1Gap
                | Target::Clt
                    if self.condition_on_eta =>
                {
                    return fail("is an unconditional target; stratum shocks must not be frozen")
                }
                Target::UncondVariance
                | Target::CluConservative
                | Target::Cor1Gap
                | Target::Clt
                    if !additive =>
                {
                    return fail("has no closed-form oracle under multiplicative stratum shocks")
                }
                Target::Cor1Gap if !pop.equal_sizes() => {
                    return fail("needs equal strata sizes (n_k = n_bar for all k)")
                }
                Target::Coverage if !self.condition_on_eta && !additive => {
                    return fail("unconditional coverage needs the additive model")
                }
                Target::BootstrapSize if oracles::ate(pop).abs() > 1e-12 => {
                    return fail("needs a null population (ATE = 0)")
                }
                _ => {}
            }
            let needs_robust = matches!(
                t,
                Target::RobConservative | Target::Cor1Gap | Target::Coverage
            );
            if needs_robust && !pop.robust_defined() {
                return fail("needs at least 2 units in every arm");
            }
        }
        Ok(())
    }

    fn wants(&self, t: Target) -> bool {
        self.targets.contains(&t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub ate_hat: f64,
    pub v_rob: f64,
    pub v_clu: f64,
}

#[derive(Debug, Clone, Default)]
struct Acc {
    ate: Moments,
    /// `ATE_hat - ATE(eta)` for the replication's stratum shocks.
    ate_minus_cond: Moments,
    v_rob: Moments,
    v_clu: Moments,
    k_v_clu: Moments,
    gap: Moments,
    cover_clu: Moments,
    cover_rob_cond: Moments,
    cover_rob: Moments,
    reject: Moments,
    standardized: Vec<f64>,
    draws: Vec<RepRecord>,
}

impl Acc {
    fn merge(&mut self, o: Acc) {
        self.ate.merge(&o.ate);
        self.ate_minus_cond.merge(&o.ate_minus_cond);
        self.v_rob.merge(&o.v_rob);
        self.v_clu.merge(&o.v_clu);
        self.k_v_clu.merge(&o.k_v_clu);
        self.gap.merge(&o.gap);
        self.cover_clu.merge(&o.cover_clu);
        self.cover_rob_cond.merge(&o.cover_rob_cond);
        self.cover_rob.merge(&o.cover_rob);
        self.reject.merge(&o.reject);
        self.standardized.extend(o.standardized);
        self.draws.extend(o.draws);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub target: Target,
    pub check: String,
    pub empirical: f64,
    pub theoretical: f64,
    pub mc_se: f64,
    pub tolerance: f64,
    /// `None` for diagnostics that carry no pass criterion.
    pub pass: Option<bool>,
    pub rule: String,
}

/// Empirical summaries of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Empirical {
    pub mean_ate: f64,
    pub var_ate: f64,
    pub mean_v_rob: Option<f64>,
    pub mean_v_clu: f64,
    pub mean_k_v_clu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCSummary {
    pub replications: u64,
    pub seed: u64,
    pub condition_on_eta: bool,
    pub alpha: f64,
    pub checks: Vec<CheckResult>,
    pub empirical: Empirical,
    pub theory: TrueVariances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<RepRecord>>,
    /// Wall-clock seconds; not serialized so reports stay byte-stable.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl MCSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass != Some(false))
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.check == name)
    }
}

/// `ATE(eta)` for the given stratum shocks.
fn ate_given_eta(pop: &Population, eta0: &[f64], eta1: &[f64]) -> f64 {
    let shocks = ShockRealization {
        eta0: eta0.to_vec(),
        eta1: eta1.to_vec(),
        eps0: pop.strata().iter().map(|s| vec![0.0; s.n()]).collect(),
        eps1: pop.strata().iter().map(|s| vec![0.0; s.n()]).collect(),
    };
    oracles::estimands(pop, Some(&shocks))
        .and_then(|e| e.given_eta())
        .expect("shapes built from the population")
}

/// Stratum shocks frozen by a conditional run with this seed.
pub fn frozen_eta(pop: &Population, seed: u64) -> (Vec<f64>, Vec<f64>) {
    pop.draw_eta(&RandomStream::new(seed).purpose(Purpose::FrozenEta))
}

struct Context<'a> {
    pop: &'a Population,
    cfg: &'a MCConfig,
    ate: f64,
    frozen: Option<(Vec<f64>, Vec<f64>, f64)>,
    sd_uncond: Option<f64>,
    z: f64,
    k: f64,
    robust: bool,
}

impl Context<'_> {
    fn replicate(&self, r: u64, acc: &mut Acc) {
        let base = RandomStream::substream(self.cfg.seed, &[r]);
        let (eta0, eta1, cond_target) = match &self.frozen {
            Some((e0, e1, t)) => (e0.clone(), e1.clone(), *t),
            None => {
                let (e0, e1) = self.pop.draw_eta(&base.purpose(Purpose::Eta));
                let t = ate_given_eta(self.pop, &e0, &e1);
                (e0, e1, t)
            }
        };
        let (eps0, eps1) = self.pop.draw_eps(&base.purpose(Purpose::Eps));
        let shocks = ShockRealization {
            eta0,
            eta1,
            eps0,
            eps1,
        };
        let po = self.pop.realize_outcomes(&shocks).expect("shapes match");
        let a = assign(self.pop, &base.purpose(Purpose::Assign));
        let sample = observe(&po, &a).expect("shapes match");
        let per = estimate_strata(&sample);
        let ate_hat = ate_from_strata(&per);
        let v_clu = variance_clustered(&per, ate_hat).expect("K >= 2");
        let v_rob = if self.robust {
            variance_robust(&per).expect("arms have 2+ units")
        } else {
            f64::NAN
        };

        acc.ate.push(ate_hat);
        acc.ate_minus_cond.push(ate_hat - cond_target);
        acc.v_clu.push(v_clu);
        acc.k_v_clu.push(self.k * v_clu);
        let covers =
            |target: f64, v: f64| f64::from(((ate_hat - target).abs()) <= self.z * v.sqrt());
        acc.cover_clu.push(covers(self.ate, v_clu));
        if self.robust {
            acc.v_rob.push(v_rob);
            acc.gap.push(self.k * (v_clu - v_rob));
            acc.cover_rob_cond.push(covers(cond_target, v_rob));
            acc.cover_rob.push(covers(self.ate, v_rob));
        }
        if let Some(sd) = self.sd_uncond {
            acc.standardized.push((ate_hat - self.ate) / sd);
        }
        if self.cfg.wants(Target::BootstrapSize) {
            let b = wild_cluster_bootstrap(
                &sample,
                self.cfg.bootstrap,
                &base.purpose(Purpose::BootstrapWeights),
            )
            .expect("validated bootstrap settings");
            acc.reject.push(f64::from(b.p_value <= self.cfg.alpha));
        }
        if self.cfg.keep_draws {
            acc.draws.push(RepRecord {
                ate_hat,
                v_rob,
                v_clu,
            });
        }
    }
}

/// Kolmogorov-Smirnov distance between the sample and the standard normal.
pub fn ks_distance_normal(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let normal = Normal::standard();
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn check(
    target: Target,
    name: &str,
    empirical: f64,
    theoretical: f64,
    mc_se: f64,
    tolerance: f64,
    rule: &str,
) -> CheckResult {
    let pass = match rule {
        "abs_diff" => (empirical - theoretical).abs() <= tolerance,
        "at_least" => empirical >= theoretical - tolerance,
        "below" => empirical < theoretical - tolerance,
        "diagnostic" => true,
        other => unreachable!("unknown rule {other}"),
    };
    CheckResult {
        target,
        check: name.into(),
        empirical,
        theoretical,
        mc_se,
        tolerance,
        pass: (rule != "diagnostic").then_some(pass),
        rule: rule.into(),
    }
}

pub fn run_mc(pop: &Population, cfg: &MCConfig) -> Result<MCSummary> {
    cfg.validate(pop)?;
    let start = Instant::now();
    let ate = oracles::ate(pop);
    let frozen = cfg.condition_on_eta.then(|| {
        let (e0, e1) = frozen_eta(pop, cfg.seed);
        let t = ate_given_eta(pop, &e0, &e1);
        (e0, e1, t)
    });
    let frozen_shocks = frozen.as_ref().map(|(e0, e1, _)| ShockRealization {
        eta0: e0.clone(),
        eta1: e1.clone(),
        ..pop.zero_shocks()
    });
    let theory = oracles::theory(pop, frozen_shocks.as_ref())?;
    let sd_uncond = if cfg.wants(Target::Clt) {
        Some(oracles::true_unconditional_variance(pop)?.sqrt())
    } else {
        None
    };
    let ctx = Context {
        pop,
        cfg,
        ate,
        frozen,
        sd_uncond,
        z: normal_quantile(1.0 - cfg.alpha / 2.0),
        k: pop.k() as f64,
        robust: pop.robust_defined(),
    };

    let chunks: Vec<Acc> = (0..cfg.replications.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Acc::default();
            for r in c * CHUNK..((c + 1) * CHUNK).min(cfg.replications) {
                ctx.replicate(r, &mut acc);
            }
            acc
        })
        .collect();
    let mut acc = Acc::default();
    for c in chunks {
        acc.merge(c);
    }

    let r = cfg.replications as f64;
    let var_ate = acc.ate.variance();
    let se_var = acc.ate.se_variance();
    let mut checks = Vec::new();
    for &t in &cfg.targets {
        match t {
            Target::Unbiasedness => {
                let (emp, theo) = match &ctx.frozen {
                    Some((_, _, cond)) => (acc.ate.mean, *cond),
                    None => (acc.ate.mean, ate),
                };
                let se = acc.ate.se_mean();
                checks.push(check(
                    t,
                    "unbiasedness",
                    emp,
                    theo,
                    se,
                    Z_TOL * se,
                    "abs_diff",
                ));
                if ctx.frozen.is_none() {
                    // conditional unbiasedness, replication by replication
                    let se = acc.ate_minus_cond.se_mean();
                    checks.push(check(
                        t,
                        "cond_unbiasedness",
                        acc.ate_minus_cond.mean,
                        0.0,
                        se,
                        Z_TOL * se,
                        "abs_diff",
                    ));
                }
            }
            Target::CondVariance => {
                let theo = theory
                    .v_cond
                    .expect("frozen runs have a conditional variance");
                let tol = Z_TOL * theo * (2.0 / r).sqrt();
                checks.push(check(
                    t,
                    "cond_variance",
                    var_ate,
                    theo,
                    theo * (2.0 / r).sqrt(),
                    tol,
                    "abs_diff",
                ));
            }
            Target::UncondVariance => {
                let theo = theory.v_uncond.expect("additive model");
                let tol = Z_TOL * theo * (2.0 / r).sqrt();
                checks.push(check(
                    t,
                    "uncond_variance",
                    var_ate,
                    theo,
                    theo * (2.0 / r).sqrt(),
                    tol,
                    "abs_diff",
                ));
            }
            Target::RobConservative => {
                let se = acc.v_rob.se_mean().hypot(se_var);
                checks.push(check(
                    t,
                    "rob_ge_var",
                    acc.v_rob.mean,
                    var_ate,
                    se,
                    Z_TOL * se,
                    "at_least",
                ));
                let expected = theory.expected_v_rob.expect("frozen runs");
                let se_m = acc.v_rob.se_mean();
                checks.push(check(
                    t,
                    "rob_mean",
                    acc.v_rob.mean,
                    expected,
                    se_m,
                    Z_TOL * se_m,
                    "abs_diff",
                ));
                let homogeneous = oracles::stratum_moments(pop, frozen_shocks.as_ref())?
                    .iter()
                    .all(|m| m.s2_effect.abs() <= 1e-12);
                if homogeneous {
                    checks.push(check(
                        t,
                        "rob_eq_var",
                        acc.v_rob.mean,
                        var_ate,
                        se,
                        Z_TOL * se,
                        "abs_diff",
                    ));
                }
            }
            Target::CluConservative => {
                let v_cond = theory.v_cond.expect("additive model");
                checks.push(check(
                    t,
                    "var_ge_cond",
                    var_ate,
                    v_cond,
                    se_var,
                    Z_TOL * se_var,
                    "at_least",
                ));
                let se = acc.v_clu.se_mean().hypot(se_var);
                checks.push(check(
                    t,
                    "clu_ge_var",
                    acc.v_clu.mean,
                    var_ate,
                    se,
                    Z_TOL * se,
                    "at_least",
                ));
                let expected = theory.expected_v_clu.expect("additive model");
                let se_m = acc.v_clu.se_mean();
                checks.push(check(
                    t,
                    "clu_mean",
                    acc.v_clu.mean,
                    expected,
                    se_m,
                    Z_TOL * se_m,
                    "abs_diff",
                ));
                let ates: Vec<f64> = pop.strata().iter().map(|s| s.ate()).collect();
                let constant = ates.iter().all(|a| (a - ates[0]).abs() <= 1e-12);
                if pop.equal_sizes() && constant {
                    checks.push(check(
                        t,
                        "clu_eq_var",
                        acc.v_clu.mean,
                        var_ate,
                        se,
                        Z_TOL * se,
                        "abs_diff",
                    ));
                }
            }
            Target::Cor1Gap => {
                let theo = theory.gap_cor1.expect("equal sizes, additive");
                let se = acc.gap.se_mean();
                checks.push(check(
                    t,
                    "cor1_gap",
                    acc.gap.mean,
                    theo,
                    se,
                    Z_TOL * se,
                    "abs_diff",
                ));
            }
            Target::Coverage => {
                let nominal = 1.0 - cfg.alpha;
                let se_of = |m: &Moments| (m.mean * (1.0 - m.mean) / r).sqrt();
                if ctx.frozen.is_some() {
                    checks.push(check(
                        t,
                        "coverage_rob_cond",
                        acc.cover_rob_cond.mean,
                        nominal,
                        se_of(&acc.cover_rob_cond),
                        COVERAGE_SLACK,
                        "at_least",
                    ));
                    checks.push(check(
                        t,
                        "coverage_clu",
                        acc.cover_clu.mean,
                        nominal,
                        se_of(&acc.cover_clu),
                        0.0,
                        "diagnostic",
                    ));
                } else {
                    checks.push(check(
                        t,
                        "coverage_clu",
                        acc.cover_clu.mean,
                        nominal,
                        se_of(&acc.cover_clu),
                        COVERAGE_SLACK,
                        "at_least",
                    ));
                    checks.push(check(
                        t,
                        "coverage_rob_cond",
                        acc.cover_rob_cond.mean,
                        nominal,
                        se_of(&acc.cover_rob_cond),
                        0.0,
                        "diagnostic",
                    ));
                }
                checks.push(check(
                    t,
                    "coverage_rob_uncond",
                    acc.cover_rob.mean,
                    nominal,
                    se_of(&acc.cover_rob),
                    0.0,
                    "diagnostic",
                ));
            }
            Target::Clt => {
                let ks = ks_distance_normal(&acc.standardized);
                checks.push(check(
                    t,
                    "clt_ks",
                    ks,
                    0.0,
                    1.0 / r.sqrt(),
                    KS_SCALE / r.sqrt(),
                    "abs_diff",
                ));
                let sigma2_plus = theory.sigma2_plus.expect("additive model");
                let expected = ctx.k * theory.expected_v_clu.expect("additive model");
                let se = acc.k_v_clu.se_mean();
                checks.push(check(
                    t,
                    "k_vclu_expected",
                    acc.k_v_clu.mean,
                    expected,
                    se,
                    Z_TOL * se,
                    "abs_diff",
                ));
                // E[K V_clu] exceeds sigma2_plus by the between-stratum
                // dispersion over K (K - 1); the limit is only checkable
                // when that term vanishes
                let finite_k_bias = expected - sigma2_plus;
                let rule = if finite_k_bias.abs() <= 1e-12 * sigma2_plus.abs().max(1.0) {
                    "abs_diff"
                } else {
                    "diagnostic"
                };
                checks.push(check(
                    t,
                    "k_vclu_sigma2_plus",
                    acc.k_v_clu.mean,
                    sigma2_plus,
                    se,
                    Z_TOL * se,
                    rule,
                ));
                let sigma2 = theory.sigma2.expect("additive model");
                checks.push(check(
                    t,
                    "k_var_sigma2",
                    ctx.k * var_ate,
                    sigma2,
                    ctx.k * se_var,
                    Z_TOL * ctx.k * se_var,
                    "abs_diff",
                ));
            }
            Target::BootstrapSize => {
                let se = (cfg.alpha * (1.0 - cfg.alpha) / r).sqrt();
                checks.push(check(
                    t,
                    "bootstrap_size",
                    acc.reject.mean,
                    cfg.alpha,
                    se,
                    SIZE_BAND,
                    "abs_diff",
                ));
            }
        }
    }

    Ok(MCSummary {
        replications: cfg.replications,
        seed: cfg.seed,
        condition_on_eta: cfg.condition_on_eta,
        alpha: cfg.alpha,
        checks,
        empirical: Empirical {
            mean_ate: acc.ate.mean,
            var_ate,
            mean_v_rob: ctx.robust.then_some(acc.v_rob.mean),
            mean_v_clu: acc.v_clu.mean,
            mean_k_v_clu: acc.k_v_clu.mean,
        },
        theory,
        draws: cfg.keep_draws.then_some(acc.draws),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub ks: f64,
    /// Empirical variance of `sqrt(K) (ATE_hat - ATE)`.
    pub var_scaled: f64,
    pub sigma2: f64,
    pub sigma2_plus: f64,
    pub mean_k_v_clu: f64,
}

/// Normality diagnostics for a family of populations indexed by `K`.
pub fn clt_diagnostic(
    family: impl Fn(usize) -> Result<Population>,
    k_list: &[usize],
    replications: u64,
    seed: u64,
) -> Result<Vec<CltRow>> {
    k_list
        .iter()
        .map(|&k| {
            let pop = family(k)?;
            let s = run_mc(&pop, &MCConfig::new(replications, seed, vec![Target::Clt]))?;
            Ok(CltRow {
                k,
                ks: s.check("clt_ks").expect("clt target").empirical,
                var_scaled: k as f64 * s.empirical.var_ate,
                sigma2: s.theory.sigma2.expect("additive"),
                sigma2_plus: s.theory.sigma2_plus.expect("additive"),
                mean_k_v_clu: s.empirical.mean_k_v_clu,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{
        CrossArm, GeneratorConfig, PerStratum, ShockDistribution, ShockFamily,
    };

    fn gen(k: usize, n: usize) -> GeneratorConfig {
        let mut g = GeneratorConfig::with_sizes(&vec![(n, n / 2); k]);
        g.n_per_stratum = PerStratum::All(n);
        g.n_treat = None;
        g.tau = 1.0;
        g.y0_spread = 2.0;
        g.eps_sd0 = 1.0;
        g.eps_sd1 = 1.0;
        g
    }

    #[test]
    fn targets_parse() {
        assert_eq!(Target::parse("cor1gap"), Some(Target::Cor1Gap));
        assert_eq!(Target::parse("Unbiasedness"), Some(Target::Unbiasedness));
        assert_eq!(Target::parse("bootstrap-size"), Some(Target::BootstrapSize));
        assert_eq!(Target::parse("nope"), None);
    }

    #[test]
    fn prerequisites() {
        let mut g = gen(4, 6);
        g.n_per_stratum = PerStratum::Each(vec![6, 6, 8, 6]);
        let pop = g.build().unwrap();
        let err = run_mc(&pop, &MCConfig::new(1000, 1, vec![Target::Cor1Gap])).unwrap_err();
        assert!(matches!(err, Error::PrerequisiteViolation { .. }), "{err}");
        assert!(run_mc(&pop, &MCConfig::new(1000, 1, vec![Target::CondVariance])).is_err());
        assert!(run_mc(&pop, &MCConfig::new(1000, 1, vec![Target::BootstrapSize])).is_err());
        assert!(run_mc(&pop, &MCConfig::new(50, 1, vec![Target::Unbiasedness])).is_err());
        assert!(run_mc(
            &pop,
            &MCConfig::new(1000, 1, vec![Target::UncondVariance]).frozen()
        )
        .is_err());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let pop = gen(5, 6).build().unwrap();
        let cfg = MCConfig::new(1000, 9, vec![Target::Unbiasedness, Target::CluConservative]);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| run_mc(&pop, &cfg)).unwrap();
        let b = four.install(|| run_mc(&pop, &cfg)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn identical_eta_makes_conditioning_irrelevant() {
        let mut g = gen(6, 6);
        g.eta = ShockDistribution::new(ShockFamily::Normal { sd: 2.0 }, CrossArm::Identical);
        g.tau_within = 1.0;
        let pop = g.build().unwrap();
        let r = 20_000u64;
        let unfrozen = run_mc(&pop, &MCConfig::new(r, 4, vec![Target::Unbiasedness])).unwrap();
        let frozen = run_mc(
            &pop,
            &MCConfig::new(r, 5, vec![Target::Unbiasedness]).frozen(),
        )
        .unwrap();
        let f = unfrozen.empirical.var_ate / frozen.empirical.var_ate;
        let dist =
            statrs::distribution::FisherSnedecor::new((r - 1) as f64, (r - 1) as f64).unwrap();
        let (lo, hi) = (dist.inverse_cdf(0.005), dist.inverse_cdf(0.995));
        assert!(lo <= f && f <= hi, "F = {f} outside [{lo}, {hi}]");
    }

    #[test]
    fn sigma2_plus_is_diagnostic_under_between_dispersion() {
        let mut g = gen(20, 6);
        g.tau_between = 2.0;
        let pop = g.build().unwrap();
        let s = run_mc(&pop, &MCConfig::new(20_000, 6, vec![Target::Clt])).unwrap();
        assert!(s.passed(), "{:#?}", s.checks);
        assert_eq!(s.check("k_vclu_sigma2_plus").unwrap().pass, None);
        assert_eq!(s.check("k_vclu_expected").unwrap().pass, Some(true));

        let flat = gen(20, 6).build().unwrap();
        let s = run_mc(&flat, &MCConfig::new(20_000, 6, vec![Target::Clt])).unwrap();
        assert_eq!(s.check("k_vclu_sigma2_plus").unwrap().pass, Some(true));
    }

    #[test]
    fn keep_draws_and_json() {
        let pop = gen(3, 4).build().unwrap();
        let mut cfg = MCConfig::new(300, 2, vec![Target::Unbiasedness]);
        cfg.keep_draws = true;
        let s = run_mc(&pop, &cfg).unwrap();
        assert_eq!(s.draws.as_ref().unwrap().len(), 300);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json.get("theory").is_some());
        assert!(json.get("elapsed_seconds").is_none());
    }

    #[test]
    fn ks_distance_of_quantiles_is_small() {
        let normal = Normal::standard();
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        let d = ks_distance_normal(&xs);
        assert!((d - 0.5 / n as f64).abs() < 1e-9, "{d}");
        let shifted: Vec<f64> = xs.iter().map(|x| x + 10.0).collect();
        assert!(ks_distance_normal(&shifted) > 0.99);
    }

    #[test]
    fn multiplicative_model_conditional_checks() {
        let mut g = gen(4, 6);
        g.shock_model = ShockModel::MultiplicativeEta;
        g.y0_between = 3.0;
        g.eta = ShockDistribution::new(
            ShockFamily::Uniform { half_width: 0.5 },
            CrossArm::Independent,
        );
        let pop = g.build().unwrap();
        let s = run_mc(
            &pop,
            &MCConfig::new(
                20_000,
                12,
                vec![
                    Target::Unbiasedness,
                    Target::CondVariance,
                    Target::RobConservative,
                ],
            )
            .frozen(),
        )
        .unwrap();
        assert!(s.passed(), "{:#?}", s.checks);
        assert!(run_mc(&pop, &MCConfig::new(1000, 1, vec![Target::UncondVariance])).is_err());
    }
}
