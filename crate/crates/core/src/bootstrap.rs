//! Restricted wild cluster bootstrap for `H0: ATE = 0`.
//!
//! Under the null each stratum is fitted by its pooled mean `Y_bar_k`, giving
//! residuals `e_ik = y_ik - Y_bar_k`. A replicate draws one Rademacher sign
//! `w_g` per cluster, sets `y*_ik = Y_bar_k + w_g e_ik` and recomputes the
//! clustered t-statistic. Because the pooled mean cancels in a difference in
//! means, the replicate stratum effects are `w_g (e_bar_1k - e_bar_0k)`, so
//! each replicate costs `O(K)` once the residual contrasts are known.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::ObservedSample;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Largest number of sign vectors full enumeration will visit.
pub const ENUMERATION_CAP: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    FullEnumeration,
    Sampled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    Rademacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub t_obs: f64,
    pub t_draws: Vec<f64>,
    pub p_value: f64,
    pub mode: BootstrapMode,
    pub weight_law: WeightLaw,
    pub n_clusters: usize,
}

/// Null-model ingredients: per-stratum residual contrasts and the mapping to
/// clusters.
#[derive(Debug, Clone)]
struct NullModel {
    /// `n_k (e_bar_1k - e_bar_0k)`.
    weighted_contrast: Vec<f64>,
    cluster_of: Vec<usize>,
    n_clusters: usize,
    /// `G / n`.
    scale: f64,
}

impl NullModel {
    fn new(s: &ObservedSample) -> Self {
        let k = s.k();
        let mut sum = vec![0.0; k];
        for r in s.rows() {
            sum[r.stratum] += r.y;
        }
        let pooled: Vec<f64> = sum
            .iter()
            .zip(s.counts())
            .map(|(t, c)| t / c.n as f64)
            .collect();
        let mut resid = vec![[0.0f64; 2]; k];
        for r in s.rows() {
            resid[r.stratum][usize::from(r.treated)] += r.y - pooled[r.stratum];
        }
        let weighted_contrast = resid
            .iter()
            .zip(s.counts())
            .map(|([e0, e1], c)| c.n as f64 * (e1 / c.n1 as f64 - e0 / c.n0 as f64))
            .collect();
        let n_clusters = s.n_clusters();
        Self {
            weighted_contrast,
            cluster_of: s.cluster_of_stratum(),
            n_clusters,
            scale: n_clusters as f64 / s.n() as f64,
        }
    }

    /// Clustered t-statistic of the data rebuilt with cluster signs `w`.
    /// A zero variance maps to `+inf`, so degenerate replicates always count
    /// as extreme.
    fn t_stat(&self, w: &[f64], ad: &mut [f64]) -> f64 {
        ad.iter_mut().for_each(|a| *a = 0.0);
        for (c, &g) in self.weighted_contrast.iter().zip(&self.cluster_of) {
            ad[g] += w[g] * c;
        }
        let g = self.n_clusters as f64;
        let ate = ad.iter().map(|a| a * self.scale).sum::<f64>() / g;
        let ss: f64 = ad.iter().map(|a| (a * self.scale - ate).powi(2)).sum();
        let v = ss / (g * (g - 1.0));
        if v > 0.0 {
            ate / v.sqrt()
        } else {
            f64::INFINITY
        }
    }

    fn t_for_signs(&self, bits: u64) -> f64 {
        let w: Vec<f64> = (0..self.n_clusters)
            .map(|g| if bits >> g & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        self.t_stat(&w, &mut vec![0.0; self.n_clusters])
    }
}

/// `#{|t*| >= |t_obs|}` over the draws, divided by the draw count (full
/// enumeration) or with the observed statistic added to both counts (sampled).
pub fn p_value_from_draws(t_obs: f64, t_draws: &[f64], mode: BootstrapMode) -> f64 {
    let extreme = t_draws.iter().filter(|t| t.abs() >= t_obs.abs()).count();
    match mode {
        BootstrapMode::FullEnumeration => extreme as f64 / t_draws.len() as f64,
        BootstrapMode::Sampled(_) => (extreme + 1) as f64 / (t_draws.len() + 1) as f64,
    }
}

pub fn wild_cluster_bootstrap(
    s: &ObservedSample,
    mode: BootstrapMode,
    stream: &RandomStream,
) -> Result<BootstrapResult> {
    let model = NullModel::new(s);
    let g = model.n_clusters;
    if g < 2 {
        return Err(Error::InvalidArgument(
            "wild bootstrap needs at least 2 clusters".into(),
        ));
    }
    // all-zero contrasts make every replicate degenerate; the observed
    // statistic is then 0, as in the estimate report
    let t_obs = match model.t_stat(&vec![1.0; g], &mut vec![0.0; g]) {
        t if t.is_infinite() && model.weighted_contrast.iter().all(|&c| c == 0.0) => 0.0,
        t => t,
    };
    let t_draws = match mode {
        BootstrapMode::FullEnumeration => {
            if g >= 64 || (1u64 << g) > ENUMERATION_CAP {
                return Err(Error::TooManyClusters {
                    clusters: g,
                    cap: ENUMERATION_CAP,
                });
            }
            enumerate_halved(&model)
        }
        BootstrapMode::Sampled(b) => {
            if b == 0 {
                return Err(Error::InvalidArgument("bootstrap needs B >= 1".into()));
            }
            (0..b)
                .into_par_iter()
                .with_min_len(64)
                .map_init(
                    || (vec![0.0; g], vec![0.0; g]),
                    |(w, ad), rep| {
                        let mut rng = stream.child(rep as u64);
                        w.iter_mut().for_each(|x| *x = rng.rademacher());
                        model.t_stat(w, ad)
                    },
                )
                .collect()
        }
    };
    Ok(BootstrapResult {
        t_obs,
        p_value: p_value_from_draws(t_obs, &t_draws, mode),
        t_draws,
        mode,
        weight_law: WeightLaw::Rademacher,
        n_clusters: g,
    })
}

/// Visits the `2^(G-1)` sign vectors with `w_0 = +1` and mirrors them:
/// negating every sign negates `t*` exactly. Index `j` of the output is the
/// sign vector whose bit `g` is set when `w_g = -1`.
fn enumerate_halved(model: &NullModel) -> Vec<f64> {
    let g = model.n_clusters;
    let total = 1usize << g;
    let mut out = vec![0.0; total];
    for bits in (0..total).step_by(2) {
        let t = model.t_for_signs(bits as u64);
        out[bits] = t;
        // the direct route never yields -0 (x + (-x) rounds to +0) or -inf
        out[(total - 1) ^ bits] = if t == 0.0 || t.is_infinite() {
            t.abs()
        } else {
            -t
        };
    }
    out
}

#[cfg(test)]
fn enumerate_full(model: &NullModel) -> Vec<f64> {
    (0..1u64 << model.n_clusters)
        .map(|bits| model.t_for_signs(bits))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Row;
    use proptest::prelude::*;

    fn sample(rows: &[(usize, bool, f64)]) -> ObservedSample {
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
    fn two_strata_enumeration_by_hand() {
        // AD = (1, 3): signs (+,+) t = 2; (-,+) AD = (-1, 3), ate 1, V = 4, t = 0.5;
        // (+,-) t = -0.5; (-,-) t = -2
        let r = wild_cluster_bootstrap(
            &hand_fixture(),
            BootstrapMode::FullEnumeration,
            &RandomStream::new(0),
        )
        .unwrap();
        assert!((r.t_obs - 2.0).abs() < 1e-12);
        let expected = [2.0, 0.5, -0.5, -2.0];
        for (t, e) in r.t_draws.iter().zip(expected) {
            assert!((t - e).abs() < 1e-12, "{:?}", r.t_draws);
        }
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn balanced_data_gives_p_one() {
        let s = sample(&[
            (0, true, 1.0),
            (0, false, 1.0),
            (0, true, 2.0),
            (0, false, 2.0),
            (1, true, 0.0),
            (1, false, 0.0),
            (1, true, 7.0),
            (1, false, 7.0),
            (2, true, 3.0),
            (2, false, 3.0),
        ]);
        for mode in [BootstrapMode::FullEnumeration, BootstrapMode::Sampled(99)] {
            let r = wild_cluster_bootstrap(&s, mode, &RandomStream::new(1)).unwrap();
            assert_eq!(r.t_obs, 0.0);
            assert_eq!(r.p_value, 1.0);
        }
    }

    #[test]
    fn too_many_clusters() {
        let rows: Vec<_> = (0..13)
            .flat_map(|k| [(k, true, k as f64), (k, false, 0.0)])
            .collect();
        assert!(matches!(
            wild_cluster_bootstrap(
                &sample(&rows),
                BootstrapMode::FullEnumeration,
                &RandomStream::new(0)
            ),
            Err(Error::TooManyClusters { clusters: 13, .. })
        ));
    }

    #[test]
    fn degenerate_replicates_count_as_extreme() {
        // equal AD_k: observed clustered variance is zero, t_obs = +inf
        let s = sample(&[
            (0, true, 2.0),
            (0, false, 1.0),
            (1, true, 2.0),
            (1, false, 1.0),
        ]);
        let r = wild_cluster_bootstrap(&s, BootstrapMode::FullEnumeration, &RandomStream::new(0))
            .unwrap();
        assert_eq!(r.t_obs, f64::INFINITY);
        // (+,+) and (-,-) are degenerate; the mixed signs give finite t
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn sampled_is_deterministic_and_granular() {
        let s = hand_fixture();
        let a =
            wild_cluster_bootstrap(&s, BootstrapMode::Sampled(199), &RandomStream::new(5)).unwrap();
        let b =
            wild_cluster_bootstrap(&s, BootstrapMode::Sampled(199), &RandomStream::new(5)).unwrap();
        assert_eq!(a, b);
        let extreme = a.t_draws.iter().filter(|t| t.abs() >= 2.0 - 1e-12).count();
        assert_eq!(a.p_value, (extreme + 1) as f64 / 200.0);
    }

    #[test]
    fn residual_route_matches_explicit_reconstruction() {
        use crate::estimators::{ate_from_strata, estimate_strata, variance_clustered};
        let s = sample(&[
            (0, true, 1.3),
            (0, false, 0.2),
            (0, true, 3.1),
            (0, false, 2.7),
            (0, false, -0.4),
            (1, true, 3.5),
            (1, false, 0.9),
            (1, true, 5.2),
            (2, false, 2.0),
            (2, true, 1.0),
            (2, false, 4.0),
            (1, false, 2.2),
        ]);
        let model = NullModel::new(&s);
        let mut sum = [0.0; 3];
        for r in s.rows() {
            sum[r.stratum] += r.y;
        }
        let pooled: Vec<f64> = sum
            .iter()
            .zip(s.counts())
            .map(|(t, c)| t / c.n as f64)
            .collect();
        for bits in 0..8u64 {
            let w = |k: usize| if bits >> k & 1 == 1 { -1.0 } else { 1.0 };
            let star = s.with_outcomes(
                s.rows()
                    .iter()
                    .map(|r| pooled[r.stratum] + w(r.stratum) * (r.y - pooled[r.stratum])),
            );
            let e = estimate_strata(&star);
            let ate = ate_from_strata(&e);
            let t = ate / variance_clustered(&e, ate).unwrap().sqrt();
            assert!((t - model.t_for_signs(bits)).abs() < 1e-10);
        }
    }

    #[test]
    fn clusters_share_one_sign() {
        let rows: Vec<_> = (0..4)
            .flat_map(|k| {
                [
                    (k, true, k as f64 + 1.0),
                    (k, false, 0.0),
                    (k, true, 2.0 * k as f64),
                    (k, false, 1.0),
                ]
            })
            .collect();
        let s = sample(&rows)
            .with_clusters(vec![0, 0, 1, 1], vec!["a".into(), "b".into()])
            .unwrap();
        let r = wild_cluster_bootstrap(&s, BootstrapMode::FullEnumeration, &RandomStream::new(0))
            .unwrap();
        assert_eq!(r.n_clusters, 2);
        assert_eq!(r.t_draws.len(), 4);
        let rep = crate::estimators::report(&s, 0.05, Default::default()).unwrap();
        assert!((r.t_obs - rep.t_clu).abs() < 1e-12);
    }

    fn arb_sample() -> impl Strategy<Value = ObservedSample> {
        prop::collection::vec((1usize..4, 1usize..4), 2..9).prop_flat_map(|sizes| {
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

    proptest! {
        #[test]
        fn halved_enumeration_is_bit_exact(s in arb_sample()) {
            let model = NullModel::new(&s);
            let full = enumerate_full(&model);
            let halved = enumerate_halved(&model);
            prop_assert_eq!(
                full.iter().map(|t| t.to_bits()).collect::<Vec<_>>(),
                halved.iter().map(|t| t.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn scale_invariance(s in arb_sample(), c in 0.01f64..100.0, seed in any::<u64>()) {
            let scaled = s.with_outcomes(s.rows().iter().map(|r| c * r.y));
            for mode in [BootstrapMode::FullEnumeration, BootstrapMode::Sampled(49)] {
                let a = wild_cluster_bootstrap(&s, mode, &RandomStream::new(seed)).unwrap();
                let b = wild_cluster_bootstrap(&scaled, mode, &RandomStream::new(seed)).unwrap();
                prop_assert_eq!(a.p_value, b.p_value);
                for (x, y) in a.t_draws.iter().zip(&b.t_draws) {
                    prop_assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()));
                }
            }
        }

        #[test]
        fn p_value_monotone_in_t_obs(
            draws in prop::collection::vec(-5.0f64..5.0, 1..200),
            a in 0.0f64..6.0,
            b in 0.0f64..6.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for mode in [BootstrapMode::FullEnumeration, BootstrapMode::Sampled(draws.len())] {
                prop_assert!(p_value_from_draws(hi, &draws, mode) <= p_value_from_draws(lo, &draws, mode));
                prop_assert!(p_value_from_draws(-hi, &draws, mode) <= p_value_from_draws(lo, &draws, mode));
            }
        }
    }
}
