//! Subcommand definitions and their implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;
use tracefda::contaminate::tr_perturbation_bound;
use tracefda::moments::theoretical_scatter;
use tracefda::reduce::{
    self, conjecture_scan, fda, random_pencil, rho_profile, solve_tr, Scaling, TrOptions,
};
use tracefda::rng::Seed;
use tracefda::sim::{self, build_scenario, ScenarioId, StudyConfig};
use tracefda::ScatterPair;

use crate::crossval::{crossval, CvConfig, ScatterEstimator};
use crate::data::load_csv;
use crate::error::{CliError, CliResult};
use crate::output::write_in;
use crate::pairfile::PairFile;

#[derive(Debug, Parser)]
#[command(
    name = "tracefda",
    version,
    about = "Trace-ratio and Fisher discriminant reduction"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "TRACEFDA_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario study; writes records.csv, summary.csv and summary.json.
    Simulate(SimulateArgs),
    /// Stratified cross-validation on a CSV dataset; writes crossval.csv and crossval.json.
    Crossval(CrossvalArgs),
    /// Coefficient matrix and rho profile; writes projection.csv and profile.csv.
    Reduce(ReduceArgs),
    /// Write the population scatter pair of a scenario as JSON.
    Scatter(ScatterArgs),
    /// Perturbation bounds over an epsilon grid; writes bound.csv.
    BoundCheck(BoundArgs),
    /// Trace-of-B monotonicity scan over random pencils; writes conjecture.csv.
    ScanConjecture(ConjectureArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON study configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<ScenarioId>,
    /// Irrelevant variables appended (scenario IV only).
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated contamination levels.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Comma-separated methods, e.g. cTR,rFDA,tQDA.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<sim::Method>>,
    /// Training rows per group.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test rows per group.
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReducerArg {
    Fda,
    Tr,
}

impl From<ReducerArg> for reduce::Method {
    fn from(m: ReducerArg) -> Self {
        match m {
            ReducerArg::Fda => reduce::Method::Fda,
            ReducerArg::Tr => reduce::Method::Tr,
        }
    }
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Label column name or 0-based index.
    #[arg(long, default_value = "class")]
    pub label: String,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = ReducerArg::Fda)]
    pub method: ReducerArg,
    #[arg(long, value_enum, default_value_t = ScatterEstimator::Classical)]
    pub estimator: ScatterEstimator,
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PairSource {
    /// Scatter pair JSON file.
    #[arg(long, conflicts_with = "scenario")]
    pub pair: Option<PathBuf>,
    /// Use the population pair of a scenario instead.
    #[arg(long)]
    pub scenario: Option<ScenarioId>,
    #[arg(long, default_value_t = 0)]
    pub q: usize,
}

impl PairSource {
    fn load(&self) -> CliResult<ScatterPair> {
        match (&self.pair, self.scenario) {
            (Some(p), _) => PairFile::read(p),
            (None, Some(id)) => Ok(theoretical_scatter(&build_scenario(id, self.q)?.models)?),
            (None, None) => Err(CliError::validation(
                "either --pair or --scenario is required",
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[command(flatten)]
    pub source: PairSource,
    #[arg(long, value_enum, default_value_t = ReducerArg::Tr)]
    pub method: ReducerArg,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Largest k in the rho profile (defaults to --k).
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    #[arg(long)]
    pub scenario: ScenarioId,
    #[arg(long, default_value_t = 0)]
    pub q: usize,
    /// Contamination level; the contaminated population pair is written when positive.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, default_value = "I")]
    pub scenario: ScenarioId,
    #[arg(long, default_value_t = 0)]
    pub q: usize,
    /// Comma-separated contamination levels.
    #[arg(long, value_delimiter = ',', default_value = "0.0001,0.001")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ConjectureArgs {
    /// Number of random pencils.
    #[arg(long, default_value_t = 100)]
    pub pencils: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    /// Columns of the Gaussian factor of B.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
}

/// Files written plus a JSON summary for stdout.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let seed = cli.common.seed;
    let out = cli.common.out.as_path();
    match &cli.command {
        Command::Simulate(a) => simulate(a, seed, out),
        Command::Crossval(a) => crossval_cmd(a, seed, out),
        Command::Reduce(a) => reduce_cmd(a, out),
        Command::Scatter(a) => scatter_cmd(a, out),
        Command::BoundCheck(a) => bound_check(a, out),
        Command::ScanConjecture(a) => scan_conjecture(a, seed.unwrap_or(0), out),
    }
}

pub fn study_config(a: &SimulateArgs, seed: Option<u64>) -> CliResult<StudyConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => StudyConfig::default(),
    };
    if let Some(s) = a.scenario {
        cfg.scenario = s;
    }
    if let Some(q) = a.q {
        cfg.q = q;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(e) = &a.eps {
        cfg.epsilons = e.clone();
    }
    if let Some(m) = &a.methods {
        cfg.methods = m.clone();
    }
    if a.n_train.is_some() {
        cfg.n_train = a.n_train;
    }
    if let Some(n) = a.n_test {
        cfg.n_test = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn simulate(a: &SimulateArgs, seed: Option<u64>, out: &Path) -> CliResult<Outcome> {
    let cfg = study_config(a, seed)?;
    let report = sim::run_study(&cfg)?;
    let rows = sim::summarize(&report)?;
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    let summary = json!({ "config": cfg, "failures": failures, "summary": rows });
    let files = vec![
        write_in(out, "records.csv", &report.to_csv())?,
        write_in(out, "summary.csv", &sim::summary_csv(&rows))?,
        write_in(
            out,
            "summary.json",
            &serde_json::to_string_pretty(&summary)?,
        )?,
    ];
    Ok(Outcome {
        files,
        summary: json!({ "scenario": cfg.scenario, "records": report.records.len(), "failures": failures }),
    })
}

fn crossval_cmd(a: &CrossvalArgs, seed: Option<u64>, out: &Path) -> CliResult<Outcome> {
    let loaded = load_csv(&a.data, &a.label)?;
    let cfg = CvConfig {
        folds: a.folds,
        method: a.method.into(),
        estimator: a.estimator,
        seed: seed.unwrap_or(0),
        k_max: a.k_max,
        ..CvConfig::default()
    };
    let report = crossval(&loaded.dataset, &cfg)?;
    let full = json!({ "dataset": loaded.report, "crossval": report });
    let files = vec![
        write_in(out, "crossval.csv", &report.to_csv())?,
        write_in(out, "crossval.json", &serde_json::to_string_pretty(&full)?)?,
    ];
    Ok(Outcome {
        files,
        summary: json!({
            "n": loaded.dataset.n(),
            "p": loaded.dataset.p(),
            "g": loaded.dataset.g(),
            "rows": report.rows,
        }),
    })
}

fn matrix_csv(m: &nalgebra::DMatrix<f64>) -> String {
    let mut s = (1..=m.ncols())
        .map(|j| format!("v{j}"))
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn reduce_cmd(a: &ReduceArgs, out: &Path) -> CliResult<Outcome> {
    let s = a.source.load()?;
    let opts = TrOptions::default();
    let pr = match a.method {
        ReducerArg::Fda => fda(&s, a.k, Scaling::WOrthonormal)?,
        ReducerArg::Tr => solve_tr(&s, a.k, &opts)?,
    };
    let k_max = a.k_max.unwrap_or(a.k);
    let profile = rho_profile(&s, k_max, &opts)?;
    let mut prof = String::from("k,rho,trace_b,trace_w,gap\n");
    for e in &profile {
        let _ = writeln!(
            prof,
            "{},{},{},{},{}",
            e.k,
            e.rho,
            e.trace_b,
            e.trace_w,
            opt(e.gap)
        );
    }
    let files = vec![
        write_in(out, "projection.csv", &matrix_csv(&pr.v))?,
        write_in(out, "profile.csv", &prof)?,
    ];
    Ok(Outcome {
        files,
        summary: json!({
            "method": pr.method,
            "k": pr.k(),
            "rho": pr.rho,
            "gap": pr.gap,
            "converged": pr.converged,
            "iterations": pr.iterations,
            "warnings": pr.warnings,
        }),
    })
}

fn scatter_cmd(a: &ScatterArgs, out: &Path) -> CliResult<Outcome> {
    let spec = build_scenario(a.scenario, a.q)?;
    let pair = if a.eps > 0.0 {
        tracefda::contaminate::contaminated_scatter(&spec.models, &spec.contamination(a.eps)?)?
    } else {
        theoretical_scatter(&spec.models)?
    };
    let text = serde_json::to_string_pretty(&PairFile::from_pair(&pair))?;
    let files = vec![write_in(out, "pair.json", &text)?];
    Ok(Outcome {
        files,
        summary: json!({ "scenario": a.scenario, "p": pair.dim(), "epsilon": a.eps }),
    })
}

fn bound_check(a: &BoundArgs, out: &Path) -> CliResult<Outcome> {
    if a.eps.is_empty() {
        return Err(CliError::validation("empty epsilon grid"));
    }
    let spec = build_scenario(a.scenario, a.q)?;
    let opts = TrOptions::default();
    let reports = a
        .eps
        .par_iter()
        .map(|&e| tr_perturbation_bound(&spec.models, a.k, &spec.contamination(e)?, &opts))
        .collect::<tracefda::Result<Vec<_>>>()?;
    let mut s = String::from(
        "epsilon,sigma,rho,gamma,tau,kappa,general_bound,general_first_order,specialized_bound,specialized_bound_corrected,observed_sin,within_bound\n",
    );
    let mut all_within = true;
    for r in &reports {
        let bound = r.specialized_bound.unwrap_or(r.general_bound);
        let within = r.observed_sin <= bound;
        all_within &= within;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.epsilon,
            r.sigma,
            r.rho,
            r.gamma,
            r.tau,
            r.kappa,
            r.general_bound,
            r.general_first_order,
            opt(r.specialized_bound),
            opt(r.specialized_bound_corrected),
            r.observed_sin,
            within
        );
    }
    let files = vec![write_in(out, "bound.csv", &s)?];
    Ok(Outcome {
        files,
        summary: json!({ "scenario": a.scenario, "rows": reports.len(), "all_within_bound": all_within }),
    })
}

fn scan_conjecture(a: &ConjectureArgs, seed: u64, out: &Path) -> CliResult<Outcome> {
    if a.pencils == 0 {
        return Err(CliError::validation("at least one pencil is required"));
    }
    let opts = TrOptions::default();
    let scans = (0..a.pencils)
        .into_par_iter()
        .map(|i| {
            conjecture_scan(
                &random_pencil(Seed(seed).child(i as u64), a.p, a.m),
                a.k_max,
                &opts,
            )
        })
        .collect::<tracefda::Result<Vec<_>>>()?;
    let mut s = String::from("pencil,k,rho,trace_b,trace_w,gap,violation\n");
    let mut with_violation = 0;
    for (i, scan) in scans.iter().enumerate() {
        with_violation += usize::from(!scan.violations.is_empty());
        for e in &scan.profile {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{}",
                e.k,
                e.rho,
                e.trace_b,
                e.trace_w,
                opt(e.gap),
                scan.violations.contains(&e.k)
            );
        }
    }
    let files = vec![write_in(out, "conjecture.csv", &s)?];
    Ok(Outcome {
        files,
        summary: json!({ "pencils": a.pencils, "pencils_with_violation": with_violation }),
    })
}
