//! Group statistics, classical and population scatter pairs, and the Qn scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{SymMatrix, RANK_TOL};

/// An `n x p` sample (one observation per row) with group labels `0..g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: DMatrix<f64>,
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl LabeledDataset {
    /// Infers `g` as one more than the largest label.
    pub fn new(x: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let g = labels.iter().max().map_or(0, |m| m + 1);
        Self::with_groups(x, labels, g)
    }

    pub fn with_groups(x: DMatrix<f64>, labels: Vec<usize>, g: usize) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::validation(format!(
                "{} rows but {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::validation("dataset is empty"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("dataset has non-finite entries"));
        }
        let mut counts = vec![0usize; g];
        for &l in &labels {
            if l >= g {
                return Err(Error::validation(format!("label {l} outside 0..{g}")));
            }
            counts[l] += 1;
        }
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::validation(format!("group {j} is empty")));
        }
        Ok(LabeledDataset { x, labels, counts })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn g(&self) -> usize {
        self.counts.len()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Row indices belonging to group `j`, in order.
    pub fn group_indices(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == j).collect()
    }

    /// The rows of group `j` as a matrix.
    pub fn group_rows(&self, j: usize) -> DMatrix<f64> {
        self.x.select_rows(&self.group_indices(j))
    }

    /// Restriction to the given rows; the group count `g` is kept.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::with_groups(
            self.x.select_rows(rows),
            rows.iter().map(|&i| self.labels[i]).collect(),
            self.g(),
        )
    }

    /// Same labels, features replaced (e.g. by a projection `X V`).
    pub fn with_features(&self, x: DMatrix<f64>) -> Result<Self> {
        Self::with_groups(x, self.labels.clone(), self.g())
    }
}

/// One Gaussian population component.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    pub mu: DVector<f64>,
    pub sigma: SymMatrix,
    pub prior: f64,
}

impl GroupModel {
    pub fn new(mu: DVector<f64>, sigma: SymMatrix, prior: f64) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::validation("mean and covariance dimensions differ"));
        }
        if !(prior > 0.0 && prior <= 1.0) {
            return Err(Error::validation(format!("prior {prior} outside (0, 1]")));
        }
        sigma.cholesky()?;
        Ok(GroupModel { mu, sigma, prior })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Checks a mixture: common dimension, priors summing to one.
pub fn validate_mixture(models: &[GroupModel]) -> Result<usize> {
    let first = models
        .first()
        .ok_or_else(|| Error::validation("no group models"))?;
    let p = first.dim();
    if models.iter().any(|m| m.dim() != p) {
        return Err(Error::validation("group models have different dimensions"));
    }
    let total: f64 = models.iter().map(|m| m.prior).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::validation(format!("priors sum to {total}, not 1")));
    }
    Ok(p)
}

/// `sum_j p_j mu_j`.
pub fn mixture_mean(models: &[GroupModel]) -> DVector<f64> {
    models
        .iter()
        .fold(DVector::zeros(models[0].dim()), |acc, m| {
            acc + &m.mu * m.prior
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterSource {
    Classical,
    Robust,
    Theoretical,
    ContaminatedTheoretical,
}

/// Between and within scatter, plus the pooled covariance used for FDA scaling.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub b: SymMatrix,
    pub w: SymMatrix,
    pub s_pooled: SymMatrix,
    /// Group sizes; empty for population-level pairs.
    pub counts: Vec<usize>,
    pub source: ScatterSource,
}

impl ScatterPair {
    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    /// Numerical rank of `B` (relative threshold `1e-10`).
    pub fn rank_b(&self) -> usize {
        self.b.numerical_rank()
    }

    /// `Gamma^T A Gamma` applied to all three matrices.
    pub fn compress(&self, basis: &crate::linalg::RangeBasis) -> ScatterPair {
        ScatterPair {
            b: basis.compress(&self.b),
            w: basis.compress(&self.w),
            s_pooled: basis.compress(&self.s_pooled),
            counts: self.counts.clone(),
            source: self.source,
        }
    }
}

/// Per-group sample statistics.
#[derive(Debug, Clone)]
pub struct GroupStats {
    pub means: Vec<DVector<f64>>,
    /// Sample covariance (divisor `n_j - 1`); `None` for singleton groups.
    pub covs: Vec<Option<SymMatrix>>,
    pub counts: Vec<usize>,
    pub overall_mean: DVector<f64>,
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.row_mean().transpose()
}

/// Centered cross-product `sum (x_i - m)(x_i - m)^T` of the rows of `x`.
pub(crate) fn cross_product(x: &DMatrix<f64>, m: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= m.transpose();
    }
    c.transpose() * c
}

pub fn group_stats(d: &LabeledDataset) -> GroupStats {
    let n = d.n() as f64;
    let mut means = Vec::with_capacity(d.g());
    let mut covs = Vec::with_capacity(d.g());
    for j in 0..d.g() {
        let xj = d.group_rows(j);
        let m = column_mean(&xj);
        let nj = xj.nrows();
        covs.push(
            (nj >= 2).then(|| SymMatrix::symmetrize(cross_product(&xj, &m) / (nj as f64 - 1.0))),
        );
        means.push(m);
    }
    let overall_mean = means
        .iter()
        .zip(d.counts())
        .fold(DVector::zeros(d.p()), |acc, (m, &c)| {
            acc + m * (c as f64 / n)
        });
    GroupStats {
        means,
        covs,
        counts: d.counts().to_vec(),
        overall_mean,
    }
}

/// Classical `B`, `W` with the `1/n` convention and `S_pooled = n W / (n - g)`.
///
/// When `n == g` (every group a singleton) `S_pooled` is set to zero.
pub fn classical_scatter(d: &LabeledDataset) -> ScatterPair {
    let n = d.n();
    let g = d.g();
    let p = d.p();
    if g < 2 {
        log::warn!("classical scatter with a single group: B is zero");
    }
    let stats = group_stats(d);
    let mut b = DMatrix::zeros(p, p);
    let mut w = DMatrix::zeros(p, p);
    for j in 0..g {
        let diff = &stats.means[j] - &stats.overall_mean;
        b += &diff * diff.transpose() * stats.counts[j] as f64;
        w += cross_product(&d.group_rows(j), &stats.means[j]);
    }
    let b = SymMatrix::symmetrize(b / n as f64);
    let w = SymMatrix::symmetrize(w / n as f64);
    let s_pooled = if n > g {
        w.scale(n as f64 / (n - g) as f64)
    } else {
        SymMatrix::zeros(p)
    };
    ScatterPair {
        b,
        w,
        s_pooled,
        counts: stats.counts,
        source: ScatterSource::Classical,
    }
}

/// Population `B = sum p_j (mu_j - mu)(mu_j - mu)^T` and `W = sum p_j Sigma_j`.
pub fn theoretical_scatter(models: &[GroupModel]) -> Result<ScatterPair> {
    let p = validate_mixture(models)?;
    for (j, m) in models.iter().enumerate() {
        m.sigma.cholesky().map_err(|e| e.in_group(j))?;
    }
    let mu = mixture_mean(models);
    let mut b = DMatrix::zeros(p, p);
    let mut w = DMatrix::zeros(p, p);
    for m in models {
        let diff = &m.mu - &mu;
        b += &diff * diff.transpose() * m.prior;
        w += m.sigma.as_matrix() * m.prior;
    }
    let w = SymMatrix::symmetrize(w);
    Ok(ScatterPair {
        b: SymMatrix::symmetrize(b),
        s_pooled: w.clone(),
        w,
        counts: Vec::new(),
        source: ScatterSource::Theoretical,
    })
}

/// Asymptotic consistency constant of Qn at the normal.
pub const QN_CONSTANT: f64 = 2.2219;

/// `2.2219 * d_(k)`, the `k = C(h, 2)`-th smallest pairwise distance, `h = floor(n/2) + 1`.
pub fn qn_scale(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::validation("Qn needs at least two values"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("Qn of non-finite values"));
    }
    let h = n / 2 + 1;
    let k = h * (h - 1) / 2;
    let mut diffs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            diffs.push((x[i] - x[j]).abs());
        }
    }
    let (_, kth, _) = diffs.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(QN_CONSTANT * *kth)
}

/// Whether `B` satisfies the rank bound `rank(B) <= min(g - 1, p)`.
pub fn rank_bound_holds(s: &ScatterPair, g: usize) -> bool {
    s.b.numerical_rank() <= g.saturating_sub(1).min(s.dim())
}

/// `true` if every eigenvalue is at least `-1e-10 * lambda_max`.
pub fn is_psd(a: &SymMatrix) -> bool {
    let ev = a.eigenvalues();
    let top = ev[0].abs().max(f64::MIN_POSITIVE);
    ev[ev.len() - 1] >= -RANK_TOL * top
}
