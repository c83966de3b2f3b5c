//! Classification rules: nearest projected mean with log-priors, plug-in LDA
//! and QDA, reduced-rank LDA parameters and the robust projected LDA.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{log_det, SymMatrix};
use crate::moments::{group_stats, GroupModel, LabeledDataset, ScatterPair};
use crate::reduce::{Projection, Scaling};
use crate::robust::{self, RobustConfig};

/// Index of the smallest score; the lowest index wins ties.
fn argmin(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, s) in scores.enumerate() {
        if s < best.1 {
            best = (i, s);
        }
    }
    best.0
}

fn mahalanobis2(chol: &Cholesky<f64, Dyn>, d: &DVector<f64>) -> f64 {
    let y = chol
        .l_dirty()
        .solve_lower_triangular(d)
        .expect("Cholesky factor has a positive diagonal");
    y.norm_squared()
}

#[derive(Debug, Clone)]
pub enum Metric {
    Euclidean,
    Mahalanobis(Cholesky<f64, Dyn>),
}

/// A trained rule `argmin_j ||V^T x - c_j||^2_M - 2 log pi_j`.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    /// Coefficient matrix; `None` classifies in the input space.
    pub projection: Option<DMatrix<f64>>,
    pub centers: Vec<DVector<f64>>,
    pub metric: Metric,
    pub log_priors: Vec<f64>,
    input_dim: usize,
}

impl ClassifierModel {
    pub fn new(
        projection: Option<DMatrix<f64>>,
        centers: Vec<DVector<f64>>,
        metric: Metric,
        priors: &[f64],
        input_dim: usize,
    ) -> Result<Self> {
        let dim = projection.as_ref().map_or(input_dim, |v| v.ncols());
        if let Some(v) = &projection {
            if v.nrows() != input_dim {
                return Err(Error::validation(
                    "projection rows differ from input dimension",
                ));
            }
        }
        if centers.len() != priors.len() || centers.is_empty() {
            return Err(Error::validation("need one prior per center"));
        }
        if centers.iter().any(|c| c.len() != dim) {
            return Err(Error::validation("center dimension mismatch"));
        }
        if priors.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::validation("priors must be positive"));
        }
        Ok(ClassifierModel {
            projection,
            centers,
            metric,
            log_priors: priors.iter().map(|p| p.ln()).collect(),
            input_dim,
        })
    }

    pub fn g(&self) -> usize {
        self.centers.len()
    }

    /// Score of each group at `x` (smaller is better).
    pub fn scores(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::validation(format!(
                "observation has {} coordinates, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let u = match &self.projection {
            Some(v) => v.transpose() * x,
            None => x.clone(),
        };
        Ok(self
            .centers
            .iter()
            .zip(&self.log_priors)
            .map(|(c, lp)| {
                let d = &u - c;
                let dist = match &self.metric {
                    Metric::Euclidean => d.norm_squared(),
                    Metric::Mahalanobis(ch) => mahalanobis2(ch, &d),
                };
                dist - 2.0 * lp
            })
            .collect())
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<usize> {
        Ok(argmin(self.scores(x)?.into_iter()))
    }

    /// Labels for every row of `x`.
    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        (0..x.nrows())
            .map(|i| self.predict(&x.row(i).transpose()))
            .collect()
    }

    pub fn accuracy(&self, d: &LabeledDataset) -> Result<f64> {
        let pred = self.predict_rows(d.x())?;
        let hits = pred.iter().zip(d.labels()).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / d.n() as f64)
    }
}

fn sample_priors(d: &LabeledDataset) -> Vec<f64> {
    d.counts()
        .iter()
        .map(|&c| c as f64 / d.n() as f64)
        .collect()
}

/// Euclidean rule on `V^T x` with sample centers `V^T xbar_i` and priors `n_i / n`.
pub fn nearest_projected_mean_train(
    d: &LabeledDataset,
    v: &DMatrix<f64>,
) -> Result<ClassifierModel> {
    if v.nrows() != d.p() {
        return Err(Error::validation(
            "projection rows differ from the number of variables",
        ));
    }
    let st = group_stats(d);
    let centers = st.means.iter().map(|m| v.transpose() * m).collect();
    ClassifierModel::new(
        Some(v.clone()),
        centers,
        Metric::Euclidean,
        &sample_priors(d),
        d.p(),
    )
}

/// Euclidean rule on `V^T x` with known group means and priors.
pub fn projected_mean_rule(v: &DMatrix<f64>, models: &[GroupModel]) -> Result<ClassifierModel> {
    let centers = models.iter().map(|m| v.transpose() * &m.mu).collect();
    let priors: Vec<f64> = models.iter().map(|m| m.prior).collect();
    ClassifierModel::new(
        Some(v.clone()),
        centers,
        Metric::Euclidean,
        &priors,
        v.nrows(),
    )
}

/// Linear discriminant rule `argmin ||x - mu_i||^2_{Sigma^-1} - 2 log p_i`.
pub fn lda_model(
    means: &[DVector<f64>],
    sigma: &SymMatrix,
    priors: &[f64],
) -> Result<ClassifierModel> {
    let chol = sigma.cholesky()?;
    ClassifierModel::new(
        None,
        means.to_vec(),
        Metric::Mahalanobis(chol),
        priors,
        sigma.dim(),
    )
}

pub fn lda_rule(
    x: &DVector<f64>,
    means: &[DVector<f64>],
    sigma: &SymMatrix,
    priors: &[f64],
) -> Result<usize> {
    lda_model(means, sigma, priors)?.predict(x)
}

/// Gaussian quadratic rule with known parameters.
#[derive(Debug, Clone)]
pub struct QdaModel {
    parts: Vec<(DVector<f64>, Cholesky<f64, Dyn>, f64)>,
}

impl QdaModel {
    pub fn new(models: &[GroupModel]) -> Result<Self> {
        let p = models
            .first()
            .ok_or_else(|| Error::validation("no group models"))?
            .dim();
        let parts = models
            .iter()
            .enumerate()
            .map(|(j, m)| {
                if m.dim() != p {
                    return Err(Error::validation("group models have different dimensions"));
                }
                let ch = m.sigma.cholesky().map_err(|e| e.in_group(j))?;
                let ld = log_det(&ch);
                Ok((m.mu.clone(), ch, m.prior.ln() - 0.5 * ld))
            })
            .collect::<Result<_>>()?;
        Ok(QdaModel { parts })
    }

    /// `argmax_i log p_i - log det(Sigma_i)/2 - ||x - mu_i||^2_{Sigma_i^-1}/2`.
    pub fn predict(&self, x: &DVector<f64>) -> usize {
        argmin(
            self.parts
                .iter()
                .map(|(mu, ch, c)| 0.5 * mahalanobis2(ch, &(x - mu)) - c),
        )
    }

    pub fn accuracy(&self, d: &LabeledDataset) -> f64 {
        let hits = (0..d.n())
            .filter(|&i| self.predict(&d.x().row(i).transpose()) == d.labels()[i])
            .count();
        hits as f64 / d.n() as f64
    }
}

pub fn qda_rule(x: &DVector<f64>, models: &[GroupModel]) -> Result<usize> {
    Ok(QdaModel::new(models)?.predict(x))
}

/// Parameters of the LDA model whose centroids are constrained to the FDA subspace.
#[derive(Debug, Clone)]
pub struct ReducedRankLda {
    pub means: Vec<DVector<f64>>,
    pub sigma: SymMatrix,
}

/// `mu^_i = S V V^T xbar_i + (I - S V V^T) xbar`, `Sigma^ = S + (I - S V V^T) B (I - S V V^T)^T`.
pub fn reduced_rank_lda_params(
    s: &ScatterPair,
    proj: &Projection,
    group_means: &[DVector<f64>],
) -> Result<ReducedRankLda> {
    if proj.scaling != Scaling::SPooledOrthonormal {
        return Err(Error::validation(
            "reduced-rank LDA needs an S_pooled-orthonormal projection",
        ));
    }
    let v = &proj.v;
    let sp = s.s_pooled.as_matrix();
    let k = v.ncols();
    let defect = (v.transpose() * sp * v - DMatrix::<f64>::identity(k, k)).amax();
    if defect > 1e-8 {
        return Err(Error::validation(format!(
            "projection is not S_pooled-orthonormal (defect {defect:e})"
        )));
    }
    if group_means.len() != s.counts.len() {
        return Err(Error::validation("need one mean per counted group"));
    }
    let n: usize = s.counts.iter().sum();
    let p = s.dim();
    let xbar = group_means
        .iter()
        .zip(&s.counts)
        .fold(DVector::zeros(p), |acc, (m, &c)| {
            acc + m * (c as f64 / n as f64)
        });
    let proj_op = sp * v * v.transpose();
    let resid = DMatrix::<f64>::identity(p, p) - &proj_op;
    let means = group_means
        .iter()
        .map(|m| &proj_op * m + &resid * &xbar)
        .collect();
    let sigma = SymMatrix::symmetrize(sp + &resid * s.b.as_matrix() * resid.transpose());
    Ok(ReducedRankLda { means, sigma })
}

/// Robust LDA in the space spanned by `v` (or the input space when `v` is `None`).
///
/// Centers are per-group MCD (or MRCD) locations of the projected data; the
/// metric is the pooled robust covariance with weights `(n_j - 1)/(n - g)`.
pub fn robust_projected_train(
    d: &LabeledDataset,
    v: Option<&DMatrix<f64>>,
    cfg: &RobustConfig,
) -> Result<ClassifierModel> {
    let projected = match v {
        Some(v) => {
            if v.nrows() != d.p() {
                return Err(Error::validation(
                    "projection rows differ from the number of variables",
                ));
            }
            d.with_features(d.x() * v)?
        }
        None => d.clone(),
    };
    let k = projected.p();
    if projected.n() <= projected.g() {
        return Err(Error::validation("robust LDA needs n > g"));
    }
    let est = robust::group_estimates(&projected, cfg)?;
    let pooled = robust::pool(&est, projected.counts(), k)?;
    let chol = pooled.w.cholesky()?;
    ClassifierModel::new(
        v.cloned(),
        est.into_iter().map(|e| e.mu).collect(),
        Metric::Mahalanobis(chol),
        &sample_priors(d),
        if v.is_some() { d.p() } else { k },
    )
}
