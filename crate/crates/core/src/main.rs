use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use clusterse::bootstrap::{wild_cluster_bootstrap, BootstrapMode, BootstrapResult};
use clusterse::design::{assign, observe};
use clusterse::estimators::{report, ReportOptions};
use clusterse::io::{self, ComparisonTable, ContrastReport, DatasetSpec};
use clusterse::montecarlo::{run_mc, MCConfig, MCSummary, Target};
use clusterse::population::{
    CrossArm, GeneratorConfig, PerStratum, Population, PopulationConfig, ShockDistribution,
    ShockFamily,
};
use clusterse::rng::{Purpose, RandomStream};
use clusterse::{Error, Result};

#[derive(Parser)]
#[command(
    name = "clusterse",
    version,
    about = "Robust vs clustered standard errors in stratified experiments"
)]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the ATE with robust, clustered and wild-bootstrap inference.
    Estimate(EstimateArgs),
    /// Wild cluster bootstrap test of ATE = 0.
    Bootstrap(EstimateArgs),
    /// Draw one experiment from a population config and write its CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo check of estimator properties against closed forms.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args)]
struct EstimateArgs {
    csv: PathBuf,
    #[arg(long, default_value = "stratum")]
    stratum_col: String,
    /// Treatment column; repeat for several contrasts against a shared control.
    #[arg(long = "treated-col", default_value = "treated")]
    treated_col: Vec<String>,
    #[arg(long, default_value = "y")]
    outcome_col: String,
    /// Cluster column nesting the strata.
    #[arg(long)]
    cluster_col: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Number of bootstrap draws, or `enum` for full enumeration.
    #[arg(long, value_parser = parse_bootstrap)]
    bootstrap: Option<BootstrapMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scale the clustered variance by G/(G-1).
    #[arg(long)]
    small_sample_factor: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Population config; a built-in design is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target name, repeatable; `all` selects every target the design admits.
    #[arg(long = "target", required = true)]
    targets: Vec<String>,
    #[arg(short = 'R', long = "replications", default_value_t = 10_000)]
    replications: u64,
    #[arg(long)]
    seed: u64,
    /// Draw the stratum shocks once and condition on them.
    #[arg(long)]
    freeze_eta: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_parser = parse_bootstrap, default_value = "999")]
    bootstrap: BootstrapMode,
    /// Keep per-replication estimates in the JSON report.
    #[arg(long)]
    dump_draws: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_bootstrap(s: &str) -> std::result::Result<BootstrapMode, String> {
    if s.eq_ignore_ascii_case("enum") {
        return Ok(BootstrapMode::FullEnumeration);
    }
    match s.parse::<usize>() {
        Ok(b) if b > 0 => Ok(BootstrapMode::Sampled(b)),
        _ => Err(format!(
            "expected a positive draw count or `enum`, got `{s}`"
        )),
    }
}

fn bootstrap_seed(mode: BootstrapMode, seed: Option<u64>) -> Result<u64> {
    match (mode, seed) {
        (BootstrapMode::FullEnumeration, s) => Ok(s.unwrap_or(0)),
        (BootstrapMode::Sampled(_), Some(s)) => Ok(s),
        (BootstrapMode::Sampled(_), None) => Err(Error::InvalidArgument(
            "sampled bootstrap needs --seed".into(),
        )),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dataset_spec(a: &EstimateArgs) -> DatasetSpec {
    DatasetSpec {
        path: a.csv.clone(),
        stratum: a.stratum_col.clone(),
        treated: a.treated_col.clone(),
        outcome: a.outcome_col.clone(),
        cluster: a.cluster_col.clone(),
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<ExitCode> {
    let opts = ReportOptions {
        small_sample_factor: a.small_sample_factor,
    };
    let boot = a
        .bootstrap
        .map(|m| bootstrap_seed(m, a.seed).map(|s| (m, s)))
        .transpose()?;
    let contrasts = io::load_contrasts(&dataset_spec(a))?
        .into_iter()
        .enumerate()
        .map(|(j, c)| {
            let mut r = report(&c.sample, a.alpha, opts)?;
            if let Some((mode, seed)) = boot {
                let stream = RandomStream::new(seed)
                    .purpose(Purpose::BootstrapWeights)
                    .child(j as u64);
                r.wild_bootstrap = Some(wild_cluster_bootstrap(&c.sample, mode, &stream)?);
            }
            Ok(ContrastReport {
                name: c.name,
                report: r,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = ComparisonTable::new(a.alpha, contrasts);
    let text = match a.format {
        Format::Json => table.to_json()?,
        Format::Table => table.render_text(),
    };
    emit(a.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct BootstrapOutput {
    schema_version: u32,
    contrasts: Vec<NamedBootstrap>,
}

#[derive(Serialize)]
struct NamedBootstrap {
    name: String,
    result: BootstrapResult,
}

fn cmd_bootstrap(a: &EstimateArgs) -> Result<ExitCode> {
    let mode = a.bootstrap.unwrap_or(BootstrapMode::FullEnumeration);
    let seed = bootstrap_seed(mode, a.seed)?;
    let contrasts = io::load_contrasts(&dataset_spec(a))?
        .into_iter()
        .enumerate()
        .map(|(j, c)| {
            let stream = RandomStream::new(seed)
                .purpose(Purpose::BootstrapWeights)
                .child(j as u64);
            Ok(NamedBootstrap {
                name: c.name,
                result: wild_cluster_bootstrap(&c.sample, mode, &stream)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let text = match a.format {
        Format::Json => io::to_json(&BootstrapOutput {
            schema_version: io::SCHEMA_VERSION,
            contrasts,
        })?,
        Format::Table => contrasts
            .iter()
            .map(|c| {
                format!(
                    "{}: t = {:.4}, wild bootstrap p = {:.4}{} ({} clusters, {} draws)\n",
                    c.name,
                    c.result.t_obs,
                    c.result.p_value,
                    io::stars(c.result.p_value),
                    c.result.n_clusters,
                    c.result.t_draws.len()
                )
            })
            .collect(),
    };
    emit(a.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

/// Experiment drawn by `simulate`; replication 0 of a Monte Carlo run with
/// the same seed sees the same sample.
fn simulate_sample(pop: &Population, seed: u64) -> Result<clusterse::design::ObservedSample> {
    let base = RandomStream::substream(seed, &[0]);
    let (eta0, eta1) = pop.draw_eta(&base.purpose(Purpose::Eta));
    let (eps0, eps1) = pop.draw_eps(&base.purpose(Purpose::Eps));
    let po = pop.realize_outcomes(&clusterse::population::ShockRealization {
        eta0,
        eta1,
        eps0,
        eps1,
    })?;
    observe(&po, &assign(pop, &base.purpose(Purpose::Assign)))
}

fn cmd_simulate(config: &Path, seed: u64, out: &Path) -> Result<ExitCode> {
    let pop = PopulationConfig::from_path(config)?.build()?;
    let sample = simulate_sample(&pop, seed)?;
    let mut buf = Vec::new();
    sample.write_csv(&mut buf)?;
    io::write_atomic(out, &buf)?;
    Ok(ExitCode::SUCCESS)
}

fn default_population() -> Result<Population> {
    GeneratorConfig {
        n_per_stratum: PerStratum::All(10),
        n_treat: None,
        tau: 1.0,
        tau_between: 1.0,
        tau_within: 0.5,
        y0_spread: 1.0,
        y0_between: 1.0,
        eps_sd0: 1.0,
        eps_sd1: 1.0,
        eta: ShockDistribution::new(ShockFamily::Normal { sd: 0.5 }, CrossArm::Independent),
        ..GeneratorConfig::with_sizes(&[(10, 5); 20])
    }
    .build()
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    schema_version: u32,
    population: PopulationConfig,
    skipped: Vec<Skipped>,
    #[serde(flatten)]
    summary: &'a MCSummary,
}

#[derive(Serialize)]
struct Skipped {
    target: Target,
    reason: String,
}

fn cmd_verify(a: &VerifyArgs) -> Result<ExitCode> {
    let pop = match &a.config {
        Some(p) => PopulationConfig::from_path(p)
            .and_then(|c| c.build())
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?,
        None => default_population()?,
    };
    let mut cfg = MCConfig::new(a.replications, a.seed, Vec::new());
    cfg.condition_on_eta = a.freeze_eta;
    cfg.alpha = a.alpha;
    cfg.bootstrap = a.bootstrap;
    cfg.keep_draws = a.dump_draws;
    let mut skipped = Vec::new();
    for name in &a.targets {
        if name.eq_ignore_ascii_case("all") {
            for t in Target::ALL {
                let probe = MCConfig {
                    targets: vec![t],
                    ..cfg.clone()
                };
                match probe.validate(&pop) {
                    Ok(()) => cfg.targets.push(t),
                    Err(e) => skipped.push(Skipped {
                        target: t,
                        reason: e.to_string(),
                    }),
                }
            }
        } else {
            let t = Target::parse(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown target `{name}`")))?;
            cfg.targets.push(t);
        }
    }
    cfg.targets.dedup();
    let summary = run_mc(&pop, &cfg)?;
    let text = match a.format {
        Format::Json => io::to_json(&VerifyOutput {
            schema_version: io::SCHEMA_VERSION,
            population: PopulationConfig::from(&pop),
            skipped,
            summary: &summary,
        })?,
        Format::Table => {
            let mut s = String::new();
            for c in &summary.checks {
                let verdict = match c.pass {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "info",
                };
                s.push_str(&format!(
                    "{verdict} {:<22} empirical {:>14.6e}  theory {:>14.6e}  tol {:.3e}\n",
                    c.check, c.empirical, c.theoretical, c.tolerance
                ));
            }
            for k in &skipped {
                s.push_str(&format!("skip {:<22} {}\n", k.target.name(), k.reason));
            }
            s
        }
    };
    emit(a.out.as_deref(), &text)?;
    if a.out.is_some() {
        eprintln!(
            "{} checks, {} failed, {:.2}s",
            summary.checks.len(),
            summary
                .checks
                .iter()
                .filter(|c| c.pass == Some(false))
                .count(),
            summary.elapsed_seconds
        );
    }
    Ok(if summary.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Simulate { config, seed, out } => cmd_simulate(config, *seed, out),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
