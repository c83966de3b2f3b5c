//! Stratified k-fold evaluation of reduced-dimension robust LDA.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracefda::linalg::{condition_number, range_projection};
use tracefda::moments::classical_scatter;
use tracefda::reduce::{fda, solve_tr, Method, Scaling, TrOptions};
use tracefda::rng::Seed;
use tracefda::robust::{robust_scatter, RobustConfig};
use tracefda::{classify, LabeledDataset, ScatterPair};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScatterEstimator {
    Classical,
    Robust,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub method: Method,
    pub estimator: ScatterEstimator,
    pub seed: u64,
    /// Upper limit on the swept dimension; `None` sweeps up to the rank of `B`.
    pub k_max: Option<usize>,
    pub robust: RobustConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            method: Method::Fda,
            estimator: ScatterEstimator::Classical,
            seed: 0,
            k_max: None,
            robust: RobustConfig::default(),
        }
    }
}

// stream kinds under the master seed
const SHUFFLE: u64 = 1;
const FOLD: u64 = 2;

/// Fold number for every row. Each class is shuffled on its own stream and
/// dealt round-robin, continuing where the previous class stopped.
pub fn assign_folds(d: &LabeledDataset, folds: usize, seed: u64) -> Vec<usize> {
    let mut out = vec![0; d.n()];
    let mut next = 0;
    for j in 0..d.g() {
        let mut idx = d.group_indices(j);
        idx.shuffle(&mut Seed(seed).path(&[SHUFFLE, j as u64]).rng());
        for i in idx {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    /// Reduced dimension; `None` for the full-space rLDA baseline.
    pub k: Option<usize>,
    pub median_accuracy: Option<f64>,
    pub folds_ok: usize,
    pub folds_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub k: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub method: Method,
    pub estimator: ScatterEstimator,
    pub folds: usize,
    /// Baseline first, then `k = 1..=r`.
    pub rows: Vec<CvRow>,
    pub failures: Vec<FoldFailure>,
    /// Folds whose training `W` was singular and was projected onto its range.
    pub projected_folds: Vec<usize>,
}

impl CvReport {
    pub fn baseline(&self) -> &CvRow {
        &self.rows[0]
    }

    pub fn at(&self, k: usize) -> Option<&CvRow> {
        self.rows.iter().find(|r| r.k == Some(k))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,median_accuracy,folds_ok,folds_failed\n");
        for r in &self.rows {
            let k = r.k.map_or_else(|| "rLDA".to_string(), |k| k.to_string());
            let acc = r
                .median_accuracy
                .map_or_else(String::new, |a| a.to_string());
            s.push_str(&format!("{k},{acc},{},{}\n", r.folds_ok, r.folds_failed));
        }
        s
    }
}

struct FoldResult {
    projected: bool,
    baseline: Result<f64, String>,
    per_k: Vec<Result<f64, String>>,
}

/// Largest reduced dimension used for a dataset: `min(g - 1, p)`, capped by `k_max`.
pub fn sweep_limit(d: &LabeledDataset, k_max: Option<usize>) -> usize {
    let r = (d.g() - 1).min(d.p());
    k_max.map_or(r, |m| m.min(r))
}

fn lower_median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(tracefda::sim::lower_quantile(&v, 0.5))
}

pub fn crossval(d: &LabeledDataset, cfg: &CvConfig) -> CliResult<CvReport> {
    if cfg.folds < 2 {
        return Err(CliError::validation("at least 2 folds are required"));
    }
    let min_nj = d.counts().iter().copied().min().unwrap_or(0);
    if cfg.folds > min_nj {
        return Err(CliError::validation(format!(
            "{} folds exceed the smallest class size {min_nj}",
            cfg.folds
        )));
    }
    if cfg.k_max == Some(0) {
        return Err(CliError::validation("k_max must be positive"));
    }
    let r = sweep_limit(d, cfg.k_max);
    let assignment = assign_folds(d, cfg.folds, cfg.seed);
    let results: Vec<FoldResult> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| run_fold(d, &assignment, f, r, cfg))
        .collect::<CliResult<_>>()?;

    let mut failures = Vec::new();
    let mut collect = |k: Option<usize>, outcomes: Vec<&Result<f64, String>>| {
        let mut ok = Vec::new();
        for (fold, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(a) => ok.push(*a),
                Err(m) => failures.push(FoldFailure {
                    fold,
                    k,
                    message: m.clone(),
                }),
            }
        }
        let folds_ok = ok.len();
        CvRow {
            k,
            median_accuracy: lower_median(ok),
            folds_ok,
            folds_failed: cfg.folds - folds_ok,
        }
    };
    let mut rows = vec![collect(
        None,
        results.iter().map(|fr| &fr.baseline).collect(),
    )];
    for k in 1..=r {
        rows.push(collect(
            Some(k),
            results.iter().map(|fr| &fr.per_k[k - 1]).collect(),
        ));
    }
    let projected_folds = results
        .iter()
        .enumerate()
        .filter(|(_, fr)| fr.projected)
        .map(|(f, _)| f)
        .collect();
    Ok(CvReport {
        method: cfg.method,
        estimator: cfg.estimator,
        folds: cfg.folds,
        rows,
        failures,
        projected_folds,
    })
}

fn run_fold(
    d: &LabeledDataset,
    assignment: &[usize],
    f: usize,
    r: usize,
    cfg: &CvConfig,
) -> CliResult<FoldResult> {
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..d.n()).partition(|&i| assignment[i] == f);
    let train = d.subset(&train_idx)?;
    let test = d.subset(&test_idx)?;
    let robust = cfg
        .robust
        .with_seed(Seed(cfg.seed).path(&[FOLD, f as u64]).0);

    let scatter = match cfg.estimator {
        ScatterEstimator::Classical => Ok(classical_scatter(&train)),
        ScatterEstimator::Robust => robust_scatter(&train, &robust),
    };
    let scatter = match scatter {
        Ok(s) => s,
        Err(e) => {
            let msg = format!("scatter: {e}");
            return Ok(FoldResult {
                projected: false,
                baseline: Err(msg.clone()),
                per_k: vec![Err(msg); r],
            });
        }
    };
    let (gamma, s): (Option<DMatrix<f64>>, ScatterPair) = if condition_number(&scatter.w).singular {
        match range_projection(&scatter.w) {
            Ok(basis) => (Some(basis.gamma.clone()), scatter.compress(&basis)),
            Err(e) => {
                let msg = format!("range projection: {e}");
                return Ok(FoldResult {
                    projected: true,
                    baseline: Err(msg.clone()),
                    per_k: vec![Err(msg); r],
                });
            }
        }
    } else {
        (None, scatter)
    };

    let score = |v: Option<&DMatrix<f64>>| -> Result<f64, String> {
        let model =
            classify::robust_projected_train(&train, v, &robust).map_err(|e| e.to_string())?;
        model.accuracy(&test).map_err(|e| e.to_string())
    };
    let baseline = score(gamma.as_ref());
    let per_k = (1..=r)
        .map(|k| {
            let pr = match cfg.method {
                Method::Fda => fda(&s, k, Scaling::SPooledOrthonormal),
                Method::Tr => solve_tr(&s, k, &TrOptions::default()),
            }
            .map_err(|e| format!("reducer: {e}"))?;
            let v = match &gamma {
                Some(g) => g * &pr.v,
                None => pr.v,
            };
            score(Some(&v))
        })
        .collect();
    Ok(FoldResult {
        projected: gamma.is_some(),
        baseline,
        per_k,
    })
}
