//! Difference-in-means estimation with robust and cluster-robust variances.
//!
//! `ATE_hat = (1/K) sum_k (n_k / n_bar) ATE_hat_k`,
//! `V_rob = (1/K^2) sum_k (n_k / n_bar)^2 (S2_1k / n_1k + S2_0k / n_0k)` and
//! `V_clu = 1 / (K (K - 1)) sum_k (AD_k - ATE_hat)^2` with
//! `AD_k = (n_k / n_bar) ATE_hat_k`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bootstrap::BootstrapResult;
use crate::design::ObservedSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumEstimate {
    pub ate_k: f64,
    /// `(n_k / n_bar) ate_k`.
    pub ad_k: f64,
    /// `None` when an arm has fewer than two units.
    pub v_rob_k: Option<f64>,
    pub n_k: usize,
    pub n_1k: usize,
    pub n_0k: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct ArmMoments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl ArmMoments {
    fn push(&mut self, y: f64) {
        self.n += 1;
        let delta = y - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (y - self.mean);
    }

    fn sample_variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / (self.n - 1) as f64)
    }
}

/// Per-stratum difference in means and robust variance.
pub fn estimate_strata(s: &ObservedSample) -> Vec<StratumEstimate> {
    let mut arms = vec![[ArmMoments::default(); 2]; s.k()];
    for r in s.rows() {
        arms[r.stratum][usize::from(r.treated)].push(r.y);
    }
    let n_bar = s.n() as f64 / s.k() as f64;
    arms.iter()
        .map(|[control, treated]| {
            let ate_k = treated.mean - control.mean;
            let n_k = control.n + treated.n;
            let v_rob_k = match (treated.sample_variance(), control.sample_variance()) {
                (Some(v1), Some(v0)) => Some(v1 / treated.n as f64 + v0 / control.n as f64),
                _ => None,
            };
            StratumEstimate {
                ate_k,
                ad_k: n_k as f64 / n_bar * ate_k,
                v_rob_k,
                n_k,
                n_1k: treated.n,
                n_0k: control.n,
            }
        })
        .collect()
}

fn mean_size(per_stratum: &[StratumEstimate]) -> f64 {
    per_stratum.iter().map(|e| e.n_k).sum::<usize>() as f64 / per_stratum.len() as f64
}

/// `(1/K) sum_k AD_k`.
pub fn ate_from_strata(per_stratum: &[StratumEstimate]) -> f64 {
    per_stratum.iter().map(|e| e.ad_k).sum::<f64>() / per_stratum.len() as f64
}

pub fn estimate_ate(s: &ObservedSample) -> f64 {
    ate_from_strata(&estimate_strata(s))
}

/// `(1/K^2) sum_k (n_k / n_bar)^2 v_rob_k`.
pub fn variance_robust(per_stratum: &[StratumEstimate]) -> Result<f64> {
    let k = per_stratum.len() as f64;
    let n_bar = mean_size(per_stratum);
    let mut total = 0.0;
    for (idx, e) in per_stratum.iter().enumerate() {
        let v = e.v_rob_k.ok_or(Error::DegenerateArm(idx))?;
        let w = e.n_k as f64 / n_bar;
        total += w * w * v;
    }
    Ok(total / (k * k))
}

/// `1 / (K (K - 1)) sum_k (AD_k - ate_hat)^2`.
pub fn variance_clustered(per_stratum: &[StratumEstimate], ate_hat: f64) -> Result<f64> {
    let k = per_stratum.len();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "clustered variance needs at least 2 clusters".into(),
        ));
    }
    let ss: f64 = per_stratum.iter().map(|e| (e.ad_k - ate_hat).powi(2)).sum();
    Ok(ss / (k * (k - 1)) as f64)
}

/// Cluster-level contributions `AD_g = (G / n) sum_{k in g} n_k ate_k`, whose
/// mean over the `G` clusters is `ate_hat`. With one stratum per cluster these
/// are the stratum `AD_k`.
pub fn cluster_contributions(
    per_stratum: &[StratumEstimate],
    cluster_of: &[usize],
    n_clusters: usize,
) -> Vec<f64> {
    let n: usize = per_stratum.iter().map(|e| e.n_k).sum();
    let scale = n_clusters as f64 / n as f64;
    let mut ad = vec![0.0; n_clusters];
    for (e, &g) in per_stratum.iter().zip(cluster_of) {
        ad[g] += e.n_k as f64 * e.ate_k;
    }
    ad.iter_mut().for_each(|a| *a *= scale);
    ad
}

/// `1 / (G (G - 1)) sum_g (AD_g - mean)^2` over cluster contributions.
pub fn variance_from_contributions(ad: &[f64]) -> Result<f64> {
    let g = ad.len();
    if g < 2 {
        return Err(Error::InvalidArgument(
            "clustered variance needs at least 2 clusters".into(),
        ));
    }
    let mean = ad.iter().sum::<f64>() / g as f64;
    let ss: f64 = ad.iter().map(|a| (a - mean).powi(2)).sum();
    Ok(ss / (g * (g - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportOptions {
    /// Multiply the clustered variance by `G / (G - 1)`, as regression
    /// software does.
    pub small_sample_factor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub ate_hat: f64,
    /// Robust fields are `None` when some arm has fewer than two units.
    pub v_rob: Option<f64>,
    pub v_clu: f64,
    pub se_rob: Option<f64>,
    pub se_clu: f64,
    pub t_rob: Option<f64>,
    pub t_clu: f64,
    /// Two-sided normal p-values for `ATE = 0`.
    pub p_rob: Option<f64>,
    pub p_clu: f64,
    pub ci_rob: Option<(f64, f64)>,
    pub ci_clu: (f64, f64),
    pub alpha: f64,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_clusters: usize,
    pub degenerate_se_rob: bool,
    pub degenerate_se_clu: bool,
    pub per_stratum: Vec<StratumEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wild_bootstrap: Option<BootstrapResult>,
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided standard-normal p-value of `t`.
pub fn normal_p_value(t: f64) -> f64 {
    2.0 * (1.0 - Normal::standard().cdf(t.abs()))
}

/// `ate / se`, or 0 with the degeneracy flag set when `se = 0`.
fn t_stat(ate: f64, se: f64) -> (f64, bool) {
    if se > 0.0 {
        (ate / se, false)
    } else {
        (0.0, true)
    }
}

pub fn report(s: &ObservedSample, alpha: f64, options: ReportOptions) -> Result<EstimateReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let per_stratum = estimate_strata(s);
    let ate_hat = ate_from_strata(&per_stratum);
    let v_rob = match variance_robust(&per_stratum) {
        Ok(v) => Some(v),
        Err(Error::DegenerateArm(_)) => None,
        Err(e) => return Err(e),
    };
    let ad: Vec<f64> = match s.clustering() {
        None => per_stratum.iter().map(|e| e.ad_k).collect(),
        Some(c) => cluster_contributions(&per_stratum, &c.of_stratum, c.labels.len()),
    };
    let mut v_clu = variance_from_contributions(&ad)?;
    if options.small_sample_factor {
        let g = ad.len() as f64;
        v_clu *= g / (g - 1.0);
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let se_rob = v_rob.map(f64::sqrt);
    let se_clu = v_clu.sqrt();
    let (t_rob, degenerate_se_rob) = match se_rob {
        Some(se) => {
            let (t, d) = t_stat(ate_hat, se);
            (Some(t), d)
        }
        None => (None, false),
    };
    let (t_clu, degenerate_se_clu) = t_stat(ate_hat, se_clu);
    Ok(EstimateReport {
        ate_hat,
        v_rob,
        v_clu,
        se_rob,
        se_clu,
        t_rob,
        t_clu,
        p_rob: t_rob.map(normal_p_value),
        p_clu: normal_p_value(t_clu),
        ci_rob: se_rob.map(|se| (ate_hat - z * se, ate_hat + z * se)),
        ci_clu: (ate_hat - z * se_clu, ate_hat + z * se_clu),
        alpha,
        n: s.n(),
        k: s.k(),
        n_clusters: ad.len(),
        degenerate_se_rob,
        degenerate_se_clu,
        per_stratum,
        wild_bootstrap: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Row;
    use proptest::prelude::*;

    /// `(stratum, treated, y)` triples.
    pub(crate) fn sample(rows: &[(usize, bool, f64)]) -> ObservedSample {
        let k = rows.iter().map(|r| r.0).max().unwrap() + 1;
        ObservedSample::new(
            rows.iter()
                .map(|&(stratum, treated, y)| Row {
                    stratum,
                    treated,
                    y,
                })
                .collect(),
            (1..=k).map(|i| i.to_string()).collect(),
        )
        .unwrap()
    }

    /// Two strata of four: ATE_k = (1, 3), every arm variance 2.
    fn hand_fixture() -> ObservedSample {
        sample(&[
            (0, true, 1.0),
            (0, false, 0.0),
            (0, true, 3.0),
            (0, false, 2.0),
            (1, true, 3.0),
            (1, false, 0.0),
            (1, true, 5.0),
            (1, false, 2.0),
        ])
    }

    #[test]
    fn stratum_hand_arithmetic() {
        let e = estimate_strata(&hand_fixture());
        assert_eq!(e[0].ate_k, 1.0);
        assert_eq!(e[0].v_rob_k, Some(2.0));
        assert_eq!(e[1].ate_k, 3.0);
        assert_eq!((e[0].n_k, e[0].n_1k, e[0].n_0k), (4, 2, 2));
    }

    #[test]
    fn aggregate_hand_arithmetic() {
        let s = hand_fixture();
        let e = estimate_strata(&s);
        let ate = estimate_ate(&s);
        assert_eq!(ate, 2.0);
        assert_eq!(variance_robust(&e).unwrap(), 1.0);
        assert_eq!(variance_clustered(&e, ate).unwrap(), 1.0);
        let r = report(&s, 0.05, ReportOptions::default()).unwrap();
        let z = 1.959963984540054;
        assert!((r.ci_clu.0 - (2.0 - z)).abs() < 1e-12);
        assert!((r.ci_clu.1 - (2.0 + z)).abs() < 1e-12);
        assert_eq!(r.t_clu, 2.0);
        let hc1 = report(
            &s,
            0.05,
            ReportOptions {
                small_sample_factor: true,
            },
        )
        .unwrap();
        assert_eq!(hc1.v_clu, 2.0);
        assert_eq!(hc1.v_rob, Some(1.0));
    }

    #[test]
    fn unequal_sizes_weighting() {
        // n = (2, 6), n_bar = 4, ATE_k = (1, 3)
        let s = sample(&[
            (0, true, 1.0),
            (0, false, 0.0),
            (1, true, 3.0),
            (1, true, 3.0),
            (1, true, 3.0),
            (1, false, 0.0),
            (1, false, 0.0),
            (1, false, 0.0),
        ]);
        assert_eq!(estimate_ate(&s), 2.5);
        let e = estimate_strata(&s);
        assert_eq!(e[0].v_rob_k, None);
        assert!(matches!(variance_robust(&e), Err(Error::DegenerateArm(0))));
        // naive route: sum_k n_k ate_k / n
        assert_eq!(estimate_ate(&s), (2.0 * 1.0 + 6.0 * 3.0) / 8.0);
    }

    #[test]
    fn constant_arms_have_zero_robust_variance() {
        let s = sample(&[
            (0, true, 4.0),
            (0, true, 4.0),
            (0, false, 1.0),
            (0, false, 1.0),
            (1, true, 4.0),
            (1, true, 4.0),
            (1, false, 1.0),
            (1, false, 1.0),
        ]);
        let e = estimate_strata(&s);
        assert_eq!(variance_robust(&e).unwrap(), 0.0);
        assert_eq!(variance_clustered(&e, estimate_ate(&s)).unwrap(), 0.0);
    }

    #[test]
    fn null_data_flags_degenerate_se() {
        let s = sample(&[
            (0, true, 1.0),
            (0, true, 1.0),
            (0, false, 1.0),
            (0, false, 1.0),
            (1, true, 1.0),
            (1, true, 1.0),
            (1, false, 1.0),
            (1, false, 1.0),
        ]);
        let r = report(&s, 0.05, ReportOptions::default()).unwrap();
        assert_eq!(r.ate_hat, 0.0);
        assert_eq!((r.t_rob, r.t_clu), (Some(0.0), 0.0));
        assert!(r.degenerate_se_rob && r.degenerate_se_clu);
        assert_eq!(r.p_clu, 1.0);
    }

    #[test]
    fn clustered_below_robust_is_allowed() {
        // identical ATE_k across strata, noisy arms
        let s = sample(&[
            (0, true, 0.0),
            (0, true, 4.0),
            (0, false, -1.0),
            (0, false, 1.0),
            (1, true, 4.0),
            (1, true, 0.0),
            (1, false, 1.0),
            (1, false, -1.0),
        ]);
        let r = report(&s, 0.05, ReportOptions::default()).unwrap();
        assert!(r.v_clu < r.v_rob.unwrap());
    }

    #[test]
    fn clustered_over_grouped_strata() {
        // four strata of four in two clusters {1, 2}, {3, 4}
        let mut rows = Vec::new();
        let ates = [1.0, 3.0, 2.0, 6.0];
        for (k, a) in ates.iter().enumerate() {
            rows.extend([
                (k, true, a + 1.0),
                (k, true, a - 1.0),
                (k, false, 1.0),
                (k, false, -1.0),
            ]);
        }
        let s = sample(&rows)
            .with_clusters(vec![0, 0, 1, 1], vec!["a".into(), "b".into()])
            .unwrap();
        let r = report(&s, 0.05, ReportOptions::default()).unwrap();
        // ate = 3; AD_g = (2/16) (4 * 4, 4 * 8) = (2, 4); V = ((2-3)^2 + (4-3)^2) / 2 = 1
        assert_eq!(r.ate_hat, 3.0);
        assert_eq!(r.v_clu, 1.0);
        assert_eq!(r.n_clusters, 2);
        // each arm has variance 2: v_rob_k = 2, v_rob = 4 * 2 / 16
        assert_eq!(r.v_rob, Some(0.5));
    }

    fn arb_sample() -> impl Strategy<Value = ObservedSample> {
        prop::collection::vec((2usize..5, 2usize..5), 2..5).prop_flat_map(|sizes| {
            let n: usize = sizes.iter().map(|(a, b)| a + b).sum();
            prop::collection::vec(-10.0f64..10.0, n).prop_map(move |ys| {
                let mut rows = Vec::new();
                let mut it = ys.into_iter();
                for (k, &(n1, n0)) in sizes.iter().enumerate() {
                    for i in 0..n1 + n0 {
                        rows.push((k, i < n1, it.next().unwrap()));
                    }
                }
                sample(&rows)
            })
        })
    }

    fn summary(s: &ObservedSample) -> (f64, f64, f64) {
        let e = estimate_strata(s);
        let ate = ate_from_strata(&e);
        (
            ate,
            variance_robust(&e).unwrap(),
            variance_clustered(&e, ate).unwrap(),
        )
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
    }

    proptest! {
        #[test]
        fn translation_invariance(s in arb_sample(), c in -50.0f64..50.0) {
            let (a, vr, vc) = summary(&s);
            let shifted = s.with_outcomes(s.rows().iter().map(|r| r.y + c));
            let (a2, vr2, vc2) = summary(&shifted);
            prop_assert!(close(a, a2) && close(vr, vr2) && close(vc, vc2));
        }

        #[test]
        fn scale_homogeneity(s in arb_sample(), c in -5.0f64..5.0) {
            let (a, vr, vc) = summary(&s);
            let scaled = s.with_outcomes(s.rows().iter().map(|r| c * r.y));
            let (a2, vr2, vc2) = summary(&scaled);
            prop_assert!(close(c * a, a2));
            prop_assert!(close(c * c * vr, vr2));
            prop_assert!(close(c * c * vc, vc2));
        }

        #[test]
        fn weighted_mean_matches_naive(s in arb_sample()) {
            let mut sums = vec![[0.0f64, 0.0]; s.k()];
            let mut counts = vec![[0usize, 0]; s.k()];
            for r in s.rows() {
                sums[r.stratum][usize::from(r.treated)] += r.y;
                counts[r.stratum][usize::from(r.treated)] += 1;
            }
            let naive: f64 = (0..s.k())
                .map(|k| {
                    let nk = (counts[k][0] + counts[k][1]) as f64;
                    nk * (sums[k][1] / counts[k][1] as f64 - sums[k][0] / counts[k][0] as f64)
                })
                .sum::<f64>() / s.n() as f64;
            prop_assert!(close(estimate_ate(&s), naive));
        }

        #[test]
        fn clustered_from_strata_matches_full_path(s in arb_sample()) {
            let r = report(&s, 0.1, ReportOptions::default()).unwrap();
            let e = estimate_strata(&s);
            prop_assert_eq!(variance_clustered(&e, ate_from_strata(&e)).unwrap(), r.v_clu);
        }
    }
}
