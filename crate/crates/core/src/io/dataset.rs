use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{ObservedSample, Row};
use crate::error::{Error, Result};

/// Where a dataset lives and which columns hold what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub stratum: String,
    /// One 0/1 column per treatment contrast. With several columns, contrast
    /// `j` compares units with `treated[j] = 1` to units untreated in every
    /// column.
    pub treated: Vec<String>,
    pub outcome: String,
    /// Coarser clustering level; must be constant within each stratum.
    pub cluster: Option<String>,
}

impl DatasetSpec {
    /// The `stratum,treated,y` layout written by `simulate`.
    pub fn standard(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            stratum: "stratum".into(),
            treated: vec!["treated".into()],
            outcome: "y".into(),
            cluster: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub name: String,
    pub sample: ObservedSample,
}

struct RawRow {
    line: u64,
    stratum: String,
    treated: Vec<bool>,
    y: f64,
    cluster: Option<String>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
}

fn parse_treated(v: &str, line: u64, col: &str) -> Result<bool> {
    match v.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::Validation(format!(
            "line {line}: treatment column `{col}` must be 0 or 1, got `{other}`"
        ))),
    }
}

fn read_rows(reader: impl Read, spec: &DatasetSpec) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let stratum = column(&headers, &spec.stratum)?;
    let outcome = column(&headers, &spec.outcome)?;
    let treated = spec
        .treated
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let cluster = spec
        .cluster
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            match rec.get(i).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    message: format!("missing value in `{name}`"),
                }),
            }
        };
        let y_text = field(outcome, &spec.outcome)?;
        let y: f64 = y_text.parse().map_err(|_| Error::Parse {
            line,
            message: format!("outcome `{y_text}` is not a number"),
        })?;
        if !y.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("outcome `{y_text}` is not finite"),
            });
        }
        let t = treated
            .iter()
            .zip(&spec.treated)
            .map(|(&i, name)| parse_treated(field(i, name)?, line, name))
            .collect::<Result<Vec<_>>>()?;
        if t.iter().filter(|&&x| x).count() > 1 {
            return Err(Error::Validation(format!(
                "line {line}: unit is treated in more than one arm"
            )));
        }
        rows.push(RawRow {
            line,
            stratum: field(stratum, &spec.stratum)?.to_string(),
            treated: t,
            y,
            cluster: cluster
                .map(|i| field(i, spec.cluster.as_deref().unwrap_or_default()).map(str::to_string))
                .transpose()?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

/// Strata labels and cluster labels in order of first appearance.
fn build_sample(rows: &[&RawRow], arm: usize) -> Result<ObservedSample> {
    let mut strata: HashMap<&str, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut cluster_of: Vec<Option<usize>> = Vec::new();
    let mut clusters: HashMap<&str, usize> = HashMap::new();
    let mut cluster_labels = Vec::new();
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let k = *strata.entry(&r.stratum).or_insert_with(|| {
            labels.push(r.stratum.clone());
            cluster_of.push(None);
            labels.len() - 1
        });
        if let Some(c) = &r.cluster {
            let g = *clusters.entry(c).or_insert_with(|| {
                cluster_labels.push(c.clone());
                cluster_labels.len() - 1
            });
            match cluster_of[k] {
                None => cluster_of[k] = Some(g),
                Some(prev) if prev != g => {
                    return Err(Error::Validation(format!(
                        "line {}: stratum {} spans clusters {} and {}",
                        r.line, r.stratum, cluster_labels[prev], c
                    )))
                }
                _ => {}
            }
        }
        out.push(Row {
            stratum: k,
            treated: r.treated[arm],
            y: r.y,
        });
    }
    let sample = ObservedSample::new(out, labels)?;
    if clusters.is_empty() {
        Ok(sample)
    } else {
        let of_stratum = cluster_of
            .into_iter()
            .map(|g| g.expect("every row has a cluster"))
            .collect();
        sample.with_clusters(of_stratum, cluster_labels)
    }
}

/// Reads every contrast described by `spec` from `reader`.
pub fn read_contrasts(reader: impl Read, spec: &DatasetSpec) -> Result<Vec<Contrast>> {
    if spec.treated.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one treatment column".into(),
        ));
    }
    let rows = read_rows(reader, spec)?;
    spec.treated
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let keep: Vec<&RawRow> = rows
                .iter()
                .filter(|r| r.treated[j] || r.treated.iter().all(|t| !t))
                .collect();
            Ok(Contrast {
                name: name.clone(),
                sample: build_sample(&keep, j)?,
            })
        })
        .collect()
}

pub fn load_contrasts(spec: &DatasetSpec) -> Result<Vec<Contrast>> {
    let file = std::fs::File::open(&spec.path)?;
    read_contrasts(std::io::BufReader::new(file), spec)
}

/// Loads a single-contrast dataset.
pub fn load_dataset(spec: &DatasetSpec) -> Result<ObservedSample> {
    if spec.treated.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected one treatment column, got {}",
            spec.treated.len()
        )));
    }
    Ok(load_contrasts(spec)?.remove(0).sample)
}

/// Reads the standard `stratum,treated,y[,cluster]` layout.
pub fn read_sample(reader: impl Read, with_cluster: bool) -> Result<ObservedSample> {
    let mut spec = DatasetSpec::standard("");
    if with_cluster {
        spec.cluster = Some("cluster".into());
    }
    Ok(read_contrasts(reader, &spec)?.remove(0).sample)
}

pub fn load_path(path: &Path, cluster: Option<&str>) -> Result<ObservedSample> {
    let mut spec = DatasetSpec::standard(path);
    spec.cluster = cluster.map(str::to_string);
    load_dataset(&spec)
}
