use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::estimators::EstimateReport;

pub const SCHEMA_VERSION: u32 = 1;

/// `***` below 0.01, `**` below 0.05, `*` below 0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub name: String,
    pub report: EstimateReport,
}

/// One column per treatment contrast; panels for robust, clustered and wild
/// bootstrap inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub schema_version: u32,
    pub alpha: f64,
    pub contrasts: Vec<ContrastReport>,
}

impl ComparisonTable {
    pub fn new(alpha: f64, contrasts: Vec<ContrastReport>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            alpha,
            contrasts,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn render_text(&self) -> String {
        let width = self
            .contrasts
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(14);
        let mut out = String::new();
        let mut line = |label: &str, cells: Vec<String>| {
            let _ = write!(out, "{label:<24}");
            for c in cells {
                let _ = write!(out, " {c:>width$}");
            }
            out.push('\n');
        };
        let reports: Vec<&EstimateReport> = self.contrasts.iter().map(|c| &c.report).collect();
        let est = |p: &dyn Fn(&EstimateReport) -> Option<f64>| -> Vec<String> {
            reports
                .iter()
                .map(|r| format!("{:.4}{:<3}", r.ate_hat, p(r).map_or("", stars)))
                .collect()
        };
        let cell = |v: Option<f64>, open: char, close: char| match v {
            Some(x) => format!("{open}{x:.4}{close}   "),
            None => format!("{open}n/a{close}   "),
        };
        line("", self.contrasts.iter().map(|c| c.name.clone()).collect());
        line("A: Robust SE", vec![]);
        line("  Estimate", est(&|r| r.p_rob));
        line(
            "",
            reports.iter().map(|r| cell(r.se_rob, '(', ')')).collect(),
        );
        line(
            "",
            reports.iter().map(|r| cell(r.p_rob, '[', ']')).collect(),
        );
        line("B: Clustered SE", vec![]);
        line("  Estimate", est(&|r| Some(r.p_clu)));
        line(
            "",
            reports
                .iter()
                .map(|r| cell(Some(r.se_clu), '(', ')'))
                .collect(),
        );
        line(
            "",
            reports
                .iter()
                .map(|r| cell(Some(r.p_clu), '[', ']'))
                .collect(),
        );
        line("C: Wild Bootstrap", vec![]);
        let boot = |r: &EstimateReport| r.wild_bootstrap.as_ref().map(|b| b.p_value);
        line("  Estimate", est(&boot));
        line(
            "",
            reports.iter().map(|r| cell(boot(r), '[', ']')).collect(),
        );
        line("N", reports.iter().map(|r| format!("{}   ", r.n)).collect());
        line(
            "Strata",
            reports.iter().map(|r| format!("{}   ", r.k)).collect(),
        );
        line(
            "Clusters",
            reports
                .iter()
                .map(|r| format!("{}   ", r.n_clusters))
                .collect(),
        );
        out.push_str("Standard errors in parentheses, p-values in brackets.\n");
        out.push_str("*** p < 0.01, ** p < 0.05, * p < 0.1\n");
        out
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
