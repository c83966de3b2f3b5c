//! Robust location and scatter: fast-MCD with concentration steps, the
//! regularized MRCD variant for small or ill-conditioned groups, and the
//! robust between/within scatter pair built from per-group estimates.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, SymMatrix};
use crate::moments::{qn_scale, LabeledDataset, ScatterPair, ScatterSource};
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    pub alpha: f64,
    pub n_initial_subsets: usize,
    pub n_cstep_candidates: usize,
    pub condition_cap: f64,
    pub rho_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            alpha: 0.75,
            n_initial_subsets: 500,
            n_cstep_candidates: 10,
            condition_cap: 1000.0,
            rho_grid: (0..=100).map(|i| i as f64 / 100.0).collect(),
            seed: 0,
        }
    }
}

impl RobustConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        RobustConfig {
            seed,
            ..self.clone()
        }
    }

    /// `h = ceil(alpha * n)`.
    pub fn h(&self, n: usize) -> usize {
        ((self.alpha * n as f64) - 1e-9).ceil().max(1.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(Error::validation(format!(
                "alpha {} outside [0.5, 1]",
                self.alpha
            )));
        }
        if self.n_initial_subsets == 0 || self.n_cstep_candidates == 0 {
            return Err(Error::validation("subset counts must be positive"));
        }
        if !(self.condition_cap > 1.0) {
            return Err(Error::validation("condition cap must exceed 1"));
        }
        if self.rho_grid.is_empty()
            || self.rho_grid.windows(2).any(|w| w[0] >= w[1])
            || self.rho_grid.iter().any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::validation(
                "rho grid must be strictly ascending within [0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Mcd,
    Mrcd,
}

#[derive(Debug, Clone)]
pub struct RobustEstimate {
    pub mu: DVector<f64>,
    pub sigma: SymMatrix,
    /// Sorted row indices of the optimal h-subset.
    pub support: Vec<usize>,
    /// Regularization weight; zero for plain MCD.
    pub rho: f64,
    /// Log-determinant of the (regularized) subset covariance at the optimum.
    pub objective: f64,
    pub estimator: Estimator,
    /// Number of concentration steps whose determinant decrease was verified.
    pub csteps_checked: usize,
}

/// `alpha / F_{chi2(p+2)}(q_alpha)`, `q_alpha` the `alpha`-quantile of `chi2(p)`.
pub fn consistency_factor(alpha: f64, p: usize) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let q = ChiSquared::new(p as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(alpha);
    let f = ChiSquared::new(p as f64 + 2.0)
        .expect("positive degrees of freedom")
        .cdf(q);
    alpha / f
}

/// Row-major copy of the data with scratch routines for subset moments.
struct Engine {
    rows: Vec<f64>,
    n: usize,
    p: usize,
    h: usize,
    reg: Option<Regularizer>,
}

#[derive(Clone)]
struct Regularizer {
    rho: f64,
    target: Vec<f64>,
    c: f64,
}

struct Fit {
    support: Vec<usize>,
    mean: Vec<f64>,
    /// Lower Cholesky factor of the matrix used for distances, row-major.
    chol: Vec<f64>,
    logdet: f64,
}

const MONOTONE_SLACK: f64 = 1e-10;
const MAX_REFINE_STEPS: usize = 500;

impl Engine {
    fn new(x: &DMatrix<f64>, h: usize, reg: Option<Regularizer>) -> Self {
        let (n, p) = x.shape();
        let mut rows = Vec::with_capacity(n * p);
        for i in 0..n {
            rows.extend(x.row(i).iter());
        }
        Engine { rows, n, p, h, reg }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    fn raw_moments(&self, idx: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
        let p = self.p;
        let m = idx.len() as f64;
        let mut mean = vec![0.0; p];
        for &i in idx {
            for (a, v) in self.row(i).iter().enumerate() {
                mean[a] += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut cov = DMatrix::zeros(p, p);
        let mut d = vec![0.0; p];
        for &i in idx {
            for (a, v) in self.row(i).iter().enumerate() {
                d[a] = v - mean[a];
            }
            for b in 0..p {
                for a in b..p {
                    cov[(a, b)] += d[a] * d[b];
                }
            }
        }
        let denom = (m - 1.0).max(1.0);
        for b in 0..p {
            for a in b..p {
                let v = cov[(a, b)] / denom;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        (mean, cov)
    }

    /// The matrix whose determinant is minimized, from a raw subset covariance.
    fn objective_matrix(&self, mut cov: DMatrix<f64>) -> DMatrix<f64> {
        if let Some(r) = &self.reg {
            if r.rho > 0.0 {
                cov *= (1.0 - r.rho) * r.c;
                for a in 0..self.p {
                    cov[(a, a)] += r.rho * r.target[a];
                }
            }
        }
        cov
    }

    fn fit(&self, support: Vec<usize>) -> Option<Fit> {
        let (mean, cov) = self.raw_moments(&support);
        let k = self.objective_matrix(cov);
        let scale = (0..self.p).map(|a| k[(a, a)]).fold(0.0_f64, f64::max);
        if !(scale > 0.0) {
            return None;
        }
        let chol = k.cholesky()?;
        let l = chol.l();
        let p = self.p;
        let mut logdet = 0.0;
        for a in 0..p {
            let d = l[(a, a)];
            if !(d * d > 1e-12 * scale) {
                return None;
            }
            logdet += 2.0 * d.ln();
        }
        let mut flat = vec![0.0; p * p];
        for a in 0..p {
            for b in 0..=a {
                flat[a * p + b] = l[(a, b)];
            }
        }
        Some(Fit {
            support,
            mean,
            chol: flat,
            logdet,
        })
    }

    /// Squared Mahalanobis distances of all rows.
    fn distances(&self, fit: &Fit) -> Vec<f64> {
        let p = self.p;
        let l = &fit.chol;
        let mut y = vec![0.0; p];
        (0..self.n)
            .map(|i| {
                let x = self.row(i);
                let mut s = 0.0;
                for a in 0..p {
                    let mut v = x[a] - fit.mean[a];
                    for b in 0..a {
                        v -= l[a * p + b] * y[b];
                    }
                    v /= l[a * p + a];
                    y[a] = v;
                    s += v * v;
                }
                s
            })
            .collect()
    }

    fn smallest(&self, d: &[f64]) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = d.iter().copied().zip(0..).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.h < self.n {
            order.select_nth_unstable_by(self.h - 1, cmp);
        }
        let mut idx: Vec<usize> = order[..self.h].iter().map(|t| t.1).collect();
        idx.sort_unstable();
        idx
    }

    /// One concentration step; checks that the determinant does not increase.
    fn c_step(&self, fit: &Fit, checks: &mut usize) -> Result<Option<Fit>> {
        let support = self.smallest(&self.distances(fit));
        if support == fit.support {
            return Ok(None);
        }
        let Some(next) = self.fit(support) else {
            return Err(exact_fit());
        };
        if next.logdet > fit.logdet + MONOTONE_SLACK * (1.0 + fit.logdet.abs()) {
            return Err(Error::Invariant(format!(
                "concentration step increased log det from {} to {}",
                fit.logdet, next.logdet
            )));
        }
        *checks += 1;
        Ok(Some(next))
    }

    fn run(&self, cfg: &RobustConfig) -> Result<(Fit, usize)> {
        let mut checks = 0;
        if self.h >= self.n {
            let fit = self.fit((0..self.n).collect()).ok_or_else(exact_fit)?;
            return Ok((fit, checks));
        }
        let m = (self.p + 1).min(self.h);
        let mut rng = Seed(cfg.seed).rng();
        let max_attempts = 10 * cfg.n_initial_subsets + 100;
        let mut attempts = 0;
        let mut candidates: Vec<Fit> = Vec::with_capacity(cfg.n_initial_subsets);
        while candidates.len() < cfg.n_initial_subsets {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::SubsetsExhausted {
                    attempts: max_attempts,
                });
            }
            let mut elemental = sample(&mut rng, self.n, m).into_vec();
            elemental.sort_unstable();
            let Some(start) = self.fit(elemental) else {
                continue;
            };
            let Some(mut fit) = self.fit(self.smallest(&self.distances(&start))) else {
                continue;
            };
            for _ in 0..2 {
                match self.c_step(&fit, &mut checks)? {
                    Some(next) => fit = next,
                    None => break,
                }
            }
            candidates.push(fit);
        }
        candidates.sort_by(|a, b| a.logdet.total_cmp(&b.logdet));
        let mut finalists: Vec<Fit> = Vec::with_capacity(cfg.n_cstep_candidates);
        for c in candidates {
            if finalists.len() == cfg.n_cstep_candidates {
                break;
            }
            if !finalists.iter().any(|f| f.support == c.support) {
                finalists.push(c);
            }
        }
        let mut best: Option<Fit> = None;
        for mut fit in finalists {
            for _ in 0..MAX_REFINE_STEPS {
                match self.c_step(&fit, &mut checks)? {
                    Some(next) => fit = next,
                    None => break,
                }
            }
            if best.as_ref().is_none_or(|b| fit.logdet < b.logdet) {
                best = Some(fit);
            }
        }
        Ok((best.expect("at least one finalist"), checks))
    }
}

fn exact_fit() -> Error {
    Error::NotPositiveDefinite {
        min_eigenvalue: 0.0,
        max_eigenvalue: f64::NAN,
    }
}

fn validate_data(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::validation("empty data matrix"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("data has non-finite entries"));
    }
    Ok(())
}

/// Minimum covariance determinant estimate by random starts and concentration steps.
pub fn fast_mcd(x: &DMatrix<f64>, cfg: &RobustConfig) -> Result<RobustEstimate> {
    cfg.validate()?;
    validate_data(x)?;
    let (n, p) = x.shape();
    if n < 2 * (p + 1) {
        return Err(Error::validation(format!(
            "fast_mcd needs n >= 2(p+1) = {} observations, got {n}; use mrcd",
            2 * (p + 1)
        )));
    }
    let h = cfg.h(n);
    if h < p + 1 {
        return Err(Error::validation(format!(
            "subset size {h} below p + 1 = {}",
            p + 1
        )));
    }
    let engine = Engine::new(x, h, None);
    let (fit, checks) = engine.run(cfg)?;
    Ok(finish(&engine, fit, cfg, 0.0, None, Estimator::Mcd, checks))
}

fn finish(
    engine: &Engine,
    fit: Fit,
    cfg: &RobustConfig,
    rho: f64,
    target: Option<&[f64]>,
    estimator: Estimator,
    checks: usize,
) -> RobustEstimate {
    let c = consistency_factor(cfg.alpha, engine.p);
    let (mean, cov) = engine.raw_moments(&fit.support);
    let mut sigma = cov * ((1.0 - rho) * c);
    if let Some(t) = target {
        for (a, v) in t.iter().enumerate() {
            sigma[(a, a)] += rho * v;
        }
    }
    RobustEstimate {
        mu: DVector::from_vec(mean),
        sigma: SymMatrix::symmetrize(sigma),
        support: fit.support,
        rho,
        objective: fit.logdet,
        estimator,
        csteps_checked: checks,
    }
}

fn regularized(cov: &DMatrix<f64>, rho: f64, c: f64, target: &[f64]) -> SymMatrix {
    let mut k = cov * ((1.0 - rho) * c);
    for (a, v) in target.iter().enumerate() {
        k[(a, a)] += rho * v;
    }
    SymMatrix::symmetrize(k)
}

fn smallest_feasible_rho(
    cov: &DMatrix<f64>,
    c: f64,
    target: &[f64],
    grid: &[f64],
    cap: f64,
) -> Option<f64> {
    grid.iter().copied().find(|&rho| {
        let cond = condition_number(&regularized(cov, rho, c, target));
        !cond.singular && cond.value <= cap
    })
}

/// Minimum regularized covariance determinant estimate.
///
/// The regularized scatter is `rho T + (1 - rho) c(alpha) cov(H)` with `T` the
/// diagonal of squared Qn scales. `rho` is the smallest grid value keeping the
/// condition number under the cap; with `rho = 0` the search is the plain
/// fast-MCD search on the same random stream.
pub fn mrcd(x: &DMatrix<f64>, cfg: &RobustConfig) -> Result<RobustEstimate> {
    cfg.validate()?;
    validate_data(x)?;
    let (n, p) = x.shape();
    if n < 4 {
        return Err(Error::validation(format!(
            "mrcd needs at least 4 observations, got {n}"
        )));
    }
    let h = cfg.h(n);
    let mut target = Vec::with_capacity(p);
    let mut medians = Vec::with_capacity(p);
    for a in 0..p {
        let col: Vec<f64> = x.column(a).iter().copied().collect();
        let s = qn_scale(&col)?;
        if s == 0.0 {
            return Err(Error::ZeroScale { index: a });
        }
        target.push(s * s);
        medians.push(lower_median(col));
    }
    let c = consistency_factor(cfg.alpha, p);

    // deterministic start: the h rows closest to the coordinatewise median
    let plain = Engine::new(x, h, None);
    let score: Vec<f64> = (0..n)
        .map(|i| {
            plain
                .row(i)
                .iter()
                .zip(&medians)
                .zip(&target)
                .map(|((v, m), t)| (v - m) * (v - m) / t)
                .sum()
        })
        .collect();
    let start = plain.smallest(&score);
    let (_, cov0) = plain.raw_moments(&start);
    let rho = match smallest_feasible_rho(&cov0, c, &target, &cfg.rho_grid, cfg.condition_cap) {
        Some(r) => r,
        None => {
            log::warn!("condition cap not reached on the grid; using rho = 1");
            1.0
        }
    };

    let reg = Regularizer {
        rho,
        target: target.clone(),
        c,
    };
    let engine = Engine::new(x, h, Some(reg));
    let (fit, checks) = engine.run(cfg)?;
    let (_, cov) = engine.raw_moments(&fit.support);
    let final_cond = condition_number(&regularized(&cov, rho, c, &target));
    let rho = if final_cond.singular || final_cond.value > cfg.condition_cap {
        let larger: Vec<f64> = cfg.rho_grid.iter().copied().filter(|&r| r > rho).collect();
        smallest_feasible_rho(&cov, c, &target, &larger, cfg.condition_cap).unwrap_or_else(|| {
            log::warn!("condition cap not reached at the optimum; using rho = 1");
            1.0
        })
    } else {
        rho
    };
    Ok(finish(
        &engine,
        fit,
        cfg,
        rho,
        Some(&target),
        Estimator::Mrcd,
        checks,
    ))
}

fn lower_median(mut v: Vec<f64>) -> f64 {
    let k = (v.len() - 1) / 2;
    *v.select_nth_unstable_by(k, f64::total_cmp).1
}

/// `fast_mcd` when `n >= 2(p+1)`, otherwise `mrcd`.
pub fn estimate(x: &DMatrix<f64>, cfg: &RobustConfig) -> Result<RobustEstimate> {
    if x.nrows() >= 2 * (x.ncols() + 1) {
        fast_mcd(x, cfg)
    } else {
        mrcd(x, cfg)
    }
}

/// Per-group robust estimates, each on its own stream derived from `(cfg.seed, j)`.
pub fn group_estimates(d: &LabeledDataset, cfg: &RobustConfig) -> Result<Vec<RobustEstimate>> {
    (0..d.g())
        .map(|j| {
            let cj = cfg.with_seed(Seed(cfg.seed).child(j as u64).0);
            estimate(&d.group_rows(j), &cj).map_err(|e| e.in_group(j))
        })
        .collect()
}

/// Robust `B~ = sum (n_j/n)(mu~ - mu~_j)(..)^T` and `W~ = sum ((n_j - 1)/(n - g)) S~_j`.
///
/// `W~` already has the pooled normalization, so it also fills `s_pooled`.
pub fn robust_scatter(d: &LabeledDataset, cfg: &RobustConfig) -> Result<ScatterPair> {
    let (n, g, p) = (d.n(), d.g(), d.p());
    if n <= g {
        return Err(Error::validation("robust scatter needs n > g"));
    }
    let est = group_estimates(d, cfg)?;
    pool(&est, d.counts(), p)
}

pub(crate) fn pool(est: &[RobustEstimate], counts: &[usize], p: usize) -> Result<ScatterPair> {
    let n: usize = counts.iter().sum();
    let g = counts.len();
    let mu = est
        .iter()
        .zip(counts)
        .fold(DVector::zeros(p), |acc, (e, &c)| {
            acc + &e.mu * (c as f64 / n as f64)
        });
    let mut b = DMatrix::zeros(p, p);
    let mut w = DMatrix::zeros(p, p);
    for (e, &c) in est.iter().zip(counts) {
        let diff = &mu - &e.mu;
        b += &diff * diff.transpose() * (c as f64 / n as f64);
        w += e.sigma.as_matrix() * ((c as f64 - 1.0) / (n - g) as f64);
    }
    let w = SymMatrix::symmetrize(w);
    Ok(ScatterPair {
        b: SymMatrix::symmetrize(b),
        s_pooled: w.clone(),
        w,
        counts: counts.to_vec(),
        source: ScatterSource::Robust,
    })
}
