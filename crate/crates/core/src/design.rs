//! Stratified complete randomization, exact enumeration of assignments, and
//! the observed sample an analyst gets to see.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::population::{Population, PotentialOutcomes};
use crate::rng::RandomStream;

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Treatment indicators `D_ik`, ragged by stratum.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub d: Vec<Vec<bool>>,
}

impl Assignment {
    pub fn n_treated(&self, k: usize) -> usize {
        self.d[k].iter().filter(|&&x| x).count()
    }
}

/// Draws one stratified complete randomization: in stratum `k` (child stream
/// `k` of `stream`) a fixed multiset of `n_1k` ones and `n_0k` zeros is
/// shuffled uniformly.
pub fn assign(pop: &Population, stream: &RandomStream) -> Assignment {
    let d = pop
        .strata()
        .iter()
        .map(|s| {
            let mut rng = stream.child(s.id as u64);
            let mut d: Vec<bool> = (0..s.n()).map(|i| i < s.n_treat).collect();
            d.shuffle(&mut rng);
            d
        })
        .collect();
    Assignment { d }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `n`-vectors with exactly `k` ones, in lexicographic order of the
/// treated index sets.
fn patterns(n: usize, k: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::with_capacity(binomial(n, k) as usize);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut d = vec![false; n];
        for &i in &idx {
            d[i] = true;
        }
        out.push(d);
        // advance to the next k-subset
        let mut j = k;
        loop {
            if j == 0 {
                return out;
            }
            j -= 1;
            if idx[j] < n - k + j {
                idx[j] += 1;
                for t in j + 1..k {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Iterator over every cross-stratum assignment with its probability.
#[derive(Debug)]
pub struct AssignmentEnumerator {
    patterns: Vec<Vec<Vec<bool>>>,
    position: Vec<usize>,
    probability: f64,
    done: bool,
}

impl Iterator for AssignmentEnumerator {
    type Item = (Assignment, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let d = self
            .patterns
            .iter()
            .zip(&self.position)
            .map(|(p, &i)| p[i].clone())
            .collect();
        // odometer, last stratum fastest
        self.done = true;
        for k in (0..self.position.len()).rev() {
            self.position[k] += 1;
            if self.position[k] < self.patterns[k].len() {
                self.done = false;
                break;
            }
            self.position[k] = 0;
        }
        Some((Assignment { d }, self.probability))
    }
}

/// Number of assignments `prod_k C(n_k, n_1k)`, saturating.
pub fn assignment_count(sizes: &[(usize, usize)]) -> u128 {
    sizes
        .iter()
        .fold(1u128, |acc, &(n, n1)| acc.saturating_mul(binomial(n, n1)))
}

/// Enumerates all assignments for strata of sizes `(n_k, n_1k)`, each with
/// probability `prod_k 1 / C(n_k, n_1k)`.
pub fn enumerate_assignments(sizes: &[(usize, usize)], cap: u128) -> Result<AssignmentEnumerator> {
    if sizes.iter().any(|&(n, n1)| n1 > n) {
        return Err(Error::InvalidArgument("n_1k exceeds n_k".into()));
    }
    let count = assignment_count(sizes);
    if count > cap {
        return Err(Error::CapExceeded { count, cap });
    }
    let probability = sizes
        .iter()
        .map(|&(n, n1)| 1.0 / binomial(n, n1) as f64)
        .product();
    Ok(AssignmentEnumerator {
        patterns: sizes.iter().map(|&(n, n1)| patterns(n, n1)).collect(),
        position: vec![0; sizes.len()],
        probability,
        done: sizes.is_empty(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    /// Index into the sample's stratum labels.
    pub stratum: usize,
    pub treated: bool,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmCounts {
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
}

/// Observed `(stratum, treated, y)` rows. Strata may optionally be nested in
/// coarser clusters used by the clustered variance estimator and the wild
/// bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    rows: Vec<Row>,
    labels: Vec<String>,
    counts: Vec<ArmCounts>,
    clusters: Option<Clustering>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index of every stratum.
    pub of_stratum: Vec<usize>,
    pub labels: Vec<String>,
}

impl ObservedSample {
    /// Builds a sample and checks every stratum has both arms.
    pub fn new(rows: Vec<Row>, labels: Vec<String>) -> Result<Self> {
        let mut counts = vec![ArmCounts { n: 0, n1: 0, n0: 0 }; labels.len()];
        for r in &rows {
            let c = counts.get_mut(r.stratum).ok_or_else(|| {
                Error::Validation(format!("row refers to unknown stratum {}", r.stratum))
            })?;
            c.n += 1;
            if r.treated {
                c.n1 += 1;
            } else {
                c.n0 += 1;
            }
        }
        for (k, c) in counts.iter().enumerate() {
            if c.n1 == 0 || c.n0 == 0 {
                return Err(Error::Validation(format!(
                    "stratum {} has {} treated and {} control units; both arms must be nonempty",
                    labels[k], c.n1, c.n0
                )));
            }
        }
        Ok(Self {
            rows,
            labels,
            counts,
            clusters: None,
        })
    }

    /// Nests strata in clusters; `of_stratum[k]` is the cluster of stratum `k`.
    pub fn with_clusters(mut self, of_stratum: Vec<usize>, labels: Vec<String>) -> Result<Self> {
        if of_stratum.len() != self.labels.len() || of_stratum.iter().any(|&g| g >= labels.len()) {
            return Err(Error::Validation(
                "cluster map does not match strata".into(),
            ));
        }
        let mut used = vec![false; labels.len()];
        for &g in &of_stratum {
            used[g] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::Validation(
                "every cluster must contain a stratum".into(),
            ));
        }
        self.clusters = Some(Clustering { of_stratum, labels });
        Ok(self)
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[ArmCounts] {
        &self.counts
    }

    pub fn clustering(&self) -> Option<&Clustering> {
        self.clusters.as_ref()
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Number of clusters used by the clustered estimator (strata when no
    /// cluster map is set).
    pub fn n_clusters(&self) -> usize {
        self.clusters.as_ref().map_or(self.k(), |c| c.labels.len())
    }

    /// Cluster index of each stratum (identity when no cluster map is set).
    pub fn cluster_of_stratum(&self) -> Vec<usize> {
        self.clusters
            .as_ref()
            .map_or_else(|| (0..self.k()).collect(), |c| c.of_stratum.clone())
    }

    /// Same rows with new outcomes, in row order.
    pub fn with_outcomes(&self, y: impl IntoIterator<Item = f64>) -> Self {
        let mut out = self.clone();
        for (r, v) in out.rows.iter_mut().zip(y) {
            r.y = v;
        }
        out
    }

    /// Writes `stratum,treated,y` CSV (plus a `cluster` column when clusters
    /// are set). Outcomes carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        match &self.clusters {
            None => writeln!(w, "stratum,treated,y")?,
            Some(_) => writeln!(w, "stratum,treated,y,cluster")?,
        }
        for r in &self.rows {
            write!(
                w,
                "{},{},{:.16e}",
                self.labels[r.stratum],
                u8::from(r.treated),
                r.y
            )?;
            if let Some(c) = &self.clusters {
                write!(w, ",{}", c.labels[c.of_stratum[r.stratum]])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Reveals `Y_ik(D_ik)`. Rows come out stratum by stratum, units in order;
/// stratum labels are `1..=K`.
pub fn observe(po: &PotentialOutcomes, a: &Assignment) -> Result<ObservedSample> {
    if po.y0.len() != a.d.len() || po.y1.len() != a.d.len() {
        return Err(Error::ShapeMismatch(
            "assignment and outcomes differ in strata".into(),
        ));
    }
    let mut rows = Vec::with_capacity(a.d.iter().map(Vec::len).sum());
    for (k, d) in a.d.iter().enumerate() {
        if po.y0[k].len() != d.len() || po.y1[k].len() != d.len() {
            return Err(Error::ShapeMismatch(format!(
                "stratum {k}: assignment has {} units, outcomes {} and {}",
                d.len(),
                po.y0[k].len(),
                po.y1[k].len()
            )));
        }
        rows.extend(d.iter().enumerate().map(|(i, &t)| Row {
            stratum: k,
            treated: t,
            y: if t { po.y1[k][i] } else { po.y0[k][i] },
        }));
    }
    ObservedSample::new(rows, (1..=a.d.len()).map(|k| k.to_string()).collect())
}
