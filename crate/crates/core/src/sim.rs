//! Simulation scenarios, the replication engine and summaries.
//!
//! Every replication draws from streams keyed by `(seed, replication, kind)`,
//! so results do not depend on execution order or thread count.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    nearest_projected_mean_train, projected_mean_rule, robust_projected_train, QdaModel,
};
use crate::contaminate::{sample_contaminated, Component, ContaminationSpec};
use crate::error::{Error, Result};
use crate::linalg::{subspace_angle, SymMatrix};
use crate::moments::{classical_scatter, theoretical_scatter, GroupModel, ScatterPair};
use crate::reduce::{fda, solve_tr, Projection, Scaling, TrOptions};
use crate::rng::Seed;
use crate::robust::{robust_scatter, RobustConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    I,
    II,
    III,
    IV,
}

impl FromStr for ScenarioId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ScenarioId::I),
            "II" | "2" => Ok(ScenarioId::II),
            "III" | "3" => Ok(ScenarioId::III),
            "IV" | "4" => Ok(ScenarioId::IV),
            other => Err(Error::validation(format!("unknown scenario {other:?}"))),
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
            ScenarioId::III => "III",
            ScenarioId::IV => "IV",
        })
    }
}

/// Four equally likely Gaussian groups and their contaminating components.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub q: usize,
    pub models: Vec<GroupModel>,
    /// Contaminating components; `None` where the contaminating mean equals the clean one.
    pub contaminating: Vec<Option<Component>>,
    pub k: usize,
}

impl ScenarioSpec {
    pub fn p(&self) -> usize {
        self.models[0].dim()
    }

    pub fn g(&self) -> usize {
        self.models.len()
    }

    pub fn contamination(&self, epsilon: f64) -> Result<ContaminationSpec> {
        ContaminationSpec::new(epsilon, self.contaminating.clone())
    }
}

fn padded(m: &[f64], q: usize) -> DVector<f64> {
    DVector::from_iterator(
        m.len() + q,
        m.iter().copied().chain(std::iter::repeat_n(0.0, q)),
    )
}

fn padded_cov(s: &SymMatrix, q: usize) -> SymMatrix {
    let p = s.dim();
    let mut m = DMatrix::identity(p + q, p + q);
    m.view_mut((0, 0), (p, p)).copy_from(s.as_matrix());
    SymMatrix::symmetrize(m)
}

/// The four scenarios. `q` irrelevant unit-variance coordinates are only allowed for IV.
pub fn build_scenario(id: ScenarioId, q: usize) -> Result<ScenarioSpec> {
    if q > 0 && id != ScenarioId::IV {
        return Err(Error::validation(format!(
            "scenario {id} takes no irrelevant variables"
        )));
    }
    let diag = SymMatrix::from_diagonal;
    // group means (columns of M), contaminating means, covariances
    let (means, cmeans, covs): ([[f64; 3]; 4], [[f64; 3]; 4], [SymMatrix; 4]) = match id {
        ScenarioId::I => {
            let s =
                SymMatrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, -0.25], &[0.0, -0.25, 1.0]])?;
            (
                [
                    [15.0, 3.0, 0.0],
                    [15.0, -3.0, 0.0],
                    [0.0, 0.0, 2.0],
                    [0.0, 0.0, -2.0],
                ],
                [
                    [15.0, -27.0, 0.0],
                    [15.0, -3.0, 0.0],
                    [0.0, 0.0, 2.0],
                    [0.0, 0.0, -2.0],
                ],
                [s.clone(), s.clone(), s.clone(), s],
            )
        }
        ScenarioId::II | ScenarioId::IV => {
            let s1 = diag(&[1.0, 3.0, 1.0]);
            let s3 = diag(&[3.0, 1.0, 3.0]);
            (
                [
                    [0.0, -3.0, 0.0],
                    [0.0, 3.0, 0.0],
                    [3.0, 0.0, 1.0],
                    [-3.0, 0.0, 1.0],
                ],
                [
                    [0.0, -3.0, 0.0],
                    [0.0, -27.0, 0.0],
                    [3.0, 0.0, 1.0],
                    [-3.0, 0.0, 1.0],
                ],
                [s1.clone(), s1, s3.clone(), s3],
            )
        }
        ScenarioId::III => {
            let s3 =
                SymMatrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 3.0, -0.5], &[0.0, -0.5, 1.0]])?;
            // third coordinate mean is 1 in every group
            (
                [
                    [0.0, -3.0, 1.0],
                    [10.0, 0.0, 1.0],
                    [0.0, 3.0, 1.0],
                    [-10.0, 0.0, 1.0],
                ],
                [
                    [0.0, -3.0, 1.0],
                    [10.0, 0.0, 1.0],
                    [0.0, -27.0, 1.0],
                    [-10.0, 0.0, 1.0],
                ],
                [
                    diag(&[1.0, 3.0, 1.0]),
                    SymMatrix::identity(3),
                    s3,
                    SymMatrix::identity(3),
                ],
            )
        }
    };
    let mut models = Vec::with_capacity(4);
    let mut contaminating = Vec::with_capacity(4);
    for j in 0..4 {
        let sigma = padded_cov(&covs[j], q);
        models.push(GroupModel::new(padded(&means[j], q), sigma.clone(), 0.25)?);
        contaminating.push((means[j] != cmeans[j]).then(|| Component {
            mu: padded(&cmeans[j], q),
            sigma,
        }));
    }
    Ok(ScenarioSpec {
        id,
        q,
        models,
        contaminating,
        k: 2,
    })
}

#[derive(Debug, Clone)]
pub struct TheoreticalSolutions {
    pub scatter: ScatterPair,
    /// `W`-orthonormal FDA coefficients.
    pub fda: Projection,
    pub tr: Projection,
}

pub fn theoretical_solutions(spec: &ScenarioSpec) -> Result<TheoreticalSolutions> {
    let scatter = theoretical_scatter(&spec.models)?;
    let fda = fda(&scatter, spec.k, Scaling::WOrthonormal)?;
    let tr = solve_tr(&scatter, spec.k, &TrOptions::default())?;
    Ok(TheoreticalSolutions { scatter, fda, tr })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cTR")]
    CTr,
    #[serde(rename = "cFDA")]
    CFda,
    #[serde(rename = "rTR")]
    RTr,
    #[serde(rename = "rFDA")]
    RFda,
    #[serde(rename = "tTR")]
    TTr,
    #[serde(rename = "tFDA")]
    TFda,
    #[serde(rename = "tQDA")]
    TQda,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::CTr,
        Method::CFda,
        Method::RTr,
        Method::RFda,
        Method::TTr,
        Method::TFda,
        Method::TQda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CTr => "cTR",
            Method::CFda => "cFDA",
            Method::RTr => "rTR",
            Method::RFda => "rFDA",
            Method::TTr => "tTR",
            Method::TFda => "tFDA",
            Method::TQda => "tQDA",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::validation(format!("unknown method {s:?}")))
    }
}

pub const DEFAULT_EPSILONS: [f64; 7] = [0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: ScenarioId,
    pub q: usize,
    pub epsilons: Vec<f64>,
    /// Training rows per group; 40 for scenario IV and 400 otherwise when absent.
    pub n_train: Option<usize>,
    pub n_test: usize,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub robust: RobustConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scenario: ScenarioId::I,
            q: 0,
            epsilons: DEFAULT_EPSILONS.to_vec(),
            n_train: None,
            n_test: 40,
            replications: 200,
            methods: Method::ALL.to_vec(),
            seed: 0,
            robust: RobustConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn train_size(&self) -> usize {
        self.n_train.unwrap_or(if self.scenario == ScenarioId::IV {
            40
        } else {
            400
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub method: Method,
    pub epsilon: f64,
    pub replication: usize,
    pub accuracy: Option<f64>,
    /// Angle to the theoretical subspace; absent for the theoretical methods.
    pub angle: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub scenario: ScenarioId,
    pub q: usize,
    pub records: Vec<Record>,
}

// stream kinds
const TRAIN: u64 = 1;
const TEST: u64 = 2;
const ROBUST: u64 = 3;

struct Fixed {
    spec: ScenarioSpec,
    theory: TheoreticalSolutions,
    ttr: Option<crate::classify::ClassifierModel>,
    tfda: Option<crate::classify::ClassifierModel>,
    tqda: Option<QdaModel>,
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.replications == 0 || cfg.n_test == 0 || cfg.train_size() < 2 {
        return Err(Error::validation(
            "replications, test and training sizes must be positive",
        ));
    }
    if cfg.methods.is_empty() {
        return Err(Error::validation("no methods selected"));
    }
    if cfg.epsilons.iter().any(|e| !(0.0..1.0).contains(e)) {
        return Err(Error::validation("epsilon values must lie in [0, 1)"));
    }
    let spec = build_scenario(cfg.scenario, cfg.q)?;
    let theory = theoretical_solutions(&spec)?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let has = |m| methods.contains(&m);
    let fixed = Fixed {
        ttr: has(Method::TTr)
            .then(|| projected_mean_rule(&theory.tr.v, &spec.models))
            .transpose()?,
        tfda: has(Method::TFda)
            .then(|| projected_mean_rule(&theory.fda.v, &spec.models))
            .transpose()?,
        tqda: has(Method::TQda)
            .then(|| QdaModel::new(&spec.models))
            .transpose()?,
        spec,
        theory,
    };

    let tasks: Vec<(usize, usize)> = (0..cfg.epsilons.len())
        .flat_map(|e| (0..cfg.replications).map(move |r| (e, r)))
        .collect();
    let chunks: Vec<Vec<Record>> = tasks
        .par_iter()
        .map(|&(e, r)| replicate(cfg, &fixed, &methods, cfg.epsilons[e], r))
        .collect::<Result<_>>()?;
    Ok(StudyReport {
        scenario: cfg.scenario,
        q: cfg.q,
        records: chunks.into_iter().flatten().collect(),
    })
}

fn replicate(
    cfg: &StudyConfig,
    fx: &Fixed,
    methods: &[Method],
    eps: f64,
    rep: usize,
) -> Result<Vec<Record>> {
    let g = fx.spec.g();
    let k = fx.spec.k;
    let master = Seed(cfg.seed);
    let test = sample_contaminated(
        &fx.spec.models,
        &ContaminationSpec::clean(g),
        &vec![cfg.n_test; g],
        master.path(&[rep as u64, TEST]),
    )?
    .data;
    let needs_train = methods
        .iter()
        .any(|m| !matches!(m, Method::TTr | Method::TFda | Method::TQda));
    let train = if needs_train {
        Some(
            sample_contaminated(
                &fx.spec.models,
                &fx.spec.contamination(eps)?,
                &vec![cfg.train_size(); g],
                master.path(&[rep as u64, TRAIN]),
            )?
            .data,
        )
    } else {
        None
    };
    let robust_cfg = cfg.robust.with_seed(master.path(&[rep as u64, ROBUST]).0);
    let tr_basis = fx.theory.tr.orthonormal_basis();
    let fda_basis = fx.theory.fda.orthonormal_basis();

    let classical = if has_any(methods, &[Method::CTr, Method::CFda]) {
        Some(classical_scatter(
            train.as_ref().expect("training set drawn"),
        ))
    } else {
        None
    };
    let robust = if has_any(methods, &[Method::RTr, Method::RFda]) {
        Some(robust_scatter(
            train.as_ref().expect("training set drawn"),
            &robust_cfg,
        ))
    } else {
        None
    };

    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let outcome: Result<(f64, Option<f64>)> = match m {
            Method::TTr => Ok((fx.ttr.as_ref().expect("built").accuracy(&test)?, None)),
            Method::TFda => Ok((fx.tfda.as_ref().expect("built").accuracy(&test)?, None)),
            Method::TQda => Ok((fx.tqda.as_ref().expect("built").accuracy(&test), None)),
            Method::CTr | Method::CFda => {
                let train = train.as_ref().expect("training set drawn");
                let s = classical.as_ref().expect("classical scatter computed");
                fit_projection(m, s, k).and_then(|v| {
                    let basis = if m == Method::CTr {
                        &tr_basis
                    } else {
                        &fda_basis
                    };
                    let acc = nearest_projected_mean_train(train, &v.v)?.accuracy(&test)?;
                    Ok((acc, Some(subspace_angle(&v.orthonormal_basis(), basis)?)))
                })
            }
            Method::RTr | Method::RFda => {
                let train = train.as_ref().expect("training set drawn");
                match robust.as_ref().expect("robust scatter computed") {
                    Err(e) => Err(clone_error(e)),
                    Ok(s) => fit_projection(m, s, k).and_then(|v| {
                        let basis = if m == Method::RTr {
                            &tr_basis
                        } else {
                            &fda_basis
                        };
                        let cls = robust_projected_train(train, Some(&v.v), &robust_cfg)?;
                        let acc = cls.accuracy(&test)?;
                        Ok((acc, Some(subspace_angle(&v.orthonormal_basis(), basis)?)))
                    }),
                }
            }
        };
        out.push(match outcome {
            Ok((acc, angle)) => Record {
                method: m,
                epsilon: eps,
                replication: rep,
                accuracy: Some(acc),
                angle,
                error: None,
            },
            Err(e) => {
                log::warn!("{} eps={eps} rep={rep}: {e}", m.name());
                Record {
                    method: m,
                    epsilon: eps,
                    replication: rep,
                    accuracy: None,
                    angle: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    Ok(out)
}

fn has_any(methods: &[Method], wanted: &[Method]) -> bool {
    methods.iter().any(|m| wanted.contains(m))
}

fn clone_error(e: &Error) -> Error {
    Error::Validation(e.to_string())
}

fn fit_projection(m: Method, s: &ScatterPair, k: usize) -> Result<Projection> {
    match m {
        Method::CTr | Method::RTr => solve_tr(s, k, &TrOptions::default()),
        _ => fda(s, k, Scaling::SPooledOrthonormal),
    }
}

/// Type-1 quantile of sorted data: the `ceil(prob n)`-th smallest value.
pub fn lower_quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    let idx = ((prob * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            q1: lower_quantile(&v, 0.25),
            median: lower_quantile(&v, 0.5),
            q3: lower_quantile(&v, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: ScenarioId,
    pub q: usize,
    pub method: Method,
    pub epsilon: f64,
    pub replications: usize,
    pub failures: usize,
    pub accuracy: Option<Quartiles>,
    pub angle: Option<Quartiles>,
}

/// Medians and quartiles per `(method, epsilon)`, in method then epsilon order.
pub fn summarize(report: &StudyReport) -> Result<Vec<SummaryRow>> {
    if report.records.is_empty() {
        return Err(Error::validation("empty report"));
    }
    let mut keys: Vec<(Method, f64)> = Vec::new();
    for r in &report.records {
        if !keys
            .iter()
            .any(|&(m, e)| m == r.method && e.to_bits() == r.epsilon.to_bits())
        {
            keys.push((r.method, r.epsilon));
        }
    }
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(keys
        .into_iter()
        .map(|(m, e)| {
            let rows: Vec<&Record> = report
                .records
                .iter()
                .filter(|r| r.method == m && r.epsilon.to_bits() == e.to_bits())
                .collect();
            let acc: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
            let ang: Vec<f64> = rows.iter().filter_map(|r| r.angle).collect();
            SummaryRow {
                scenario: report.scenario,
                q: report.q,
                method: m,
                epsilon: e,
                replications: rows.len(),
                failures: rows.iter().filter(|r| r.error.is_some()).count(),
                accuracy: Quartiles::of(&acc),
                angle: Quartiles::of(&ang),
            }
        })
        .collect())
}

impl SummaryRow {
    pub fn median_accuracy(&self) -> f64 {
        self.accuracy.as_ref().map_or(f64::NAN, |q| q.median)
    }

    pub fn median_angle(&self) -> f64 {
        self.angle.as_ref().map_or(f64::NAN, |q| q.median)
    }
}

/// Looks up one summary row.
pub fn find(rows: &[SummaryRow], method: Method, epsilon: f64) -> Option<&SummaryRow> {
    rows.iter()
        .find(|r| r.method == method && (r.epsilon - epsilon).abs() < 1e-12)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl StudyReport {
    /// Long-format CSV: `scenario,method,epsilon,q,replication,accuracy,angle`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,method,epsilon,q,replication,accuracy,angle\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.scenario,
                r.method.name(),
                r.epsilon,
                self.q,
                r.replication,
                opt(r.accuracy),
                opt(r.angle)
            );
        }
        s
    }
}

/// Summary rows as CSV.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "scenario,method,epsilon,q,replications,failures,acc_q1,acc_median,acc_q3,angle_q1,angle_median,angle_q3\n",
    );
    for r in rows {
        let a = r.accuracy.as_ref();
        let g = r.angle.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.method.name(),
            r.epsilon,
            r.q,
            r.replications,
            r.failures,
            opt(a.map(|q| q.q1)),
            opt(a.map(|q| q.median)),
            opt(a.map(|q| q.q3)),
            opt(g.map(|q| q.q1)),
            opt(g.map(|q| q.median)),
            opt(g.map(|q| q.q3)),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_one_table() {
        let s = build_scenario(ScenarioId::I, 0).unwrap();
        let cols: Vec<Vec<f64>> = s.models.iter().map(|m| m.mu.as_slice().to_vec()).collect();
        assert_eq!(
            cols,
            vec![
                vec![15.0, 3.0, 0.0],
                vec![15.0, -3.0, 0.0],
                vec![0.0, 0.0, 2.0],
                vec![0.0, 0.0, -2.0]
            ]
        );
        assert!(s.models.iter().all(|m| m.sigma == s.models[0].sigma));
        assert_eq!(s.models[0].sigma[(1, 2)], -0.25);
        assert_eq!(s.contaminating[0].as_ref().unwrap().mu[1], -27.0);
        assert!(s.contaminating[1..].iter().all(Option::is_none));
    }

    #[test]
    fn scenario_four_padding() {
        let two = build_scenario(ScenarioId::II, 0).unwrap();
        let four = build_scenario(ScenarioId::IV, 0).unwrap();
        for (a, b) in two.models.iter().zip(&four.models) {
            assert_eq!(a, b);
        }
        let padded = build_scenario(ScenarioId::IV, 10).unwrap();
        assert_eq!(padded.p(), 13);
        let s = padded.models[2].sigma.as_matrix();
        assert_eq!(
            s.view((3, 3), (10, 10)).into_owned(),
            DMatrix::<f64>::identity(10, 10)
        );
        assert_eq!(s.view((0, 3), (3, 10)).amax(), 0.0);
        assert!(build_scenario(ScenarioId::I, 5).is_err());
    }

    #[test]
    fn quantile_conventions() {
        assert_eq!(Quartiles::of(&[0.7; 5]).unwrap().median, 0.7);
        assert_eq!(Quartiles::of(&[0.3]).unwrap().median, 0.3);
        assert_eq!(Quartiles::of(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.0);
    }

    #[test]
    fn theoretical_methods_ignore_epsilon() {
        let cfg = StudyConfig {
            epsilons: vec![0.0, 0.2],
            replications: 3,
            methods: vec![Method::TTr, Method::TQda],
            ..StudyConfig::default()
        };
        let rep = run_study(&cfg).unwrap();
        let at = |e: f64| -> Vec<Option<f64>> {
            rep.records
                .iter()
                .filter(|r| r.epsilon == e)
                .map(|r| r.accuracy)
                .collect()
        };
        assert_eq!(at(0.0), at(0.2));
    }
}
