//! Contamination algebra: per-group Bernoulli mixtures of a clean and a
//! contaminating Gaussian, their exact scatter matrices, the one-group
//! first-order expansion and the trace-ratio perturbation bound.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, SymMatrix};
use crate::moments::{
    mixture_mean, theoretical_scatter, validate_mixture, GroupModel, LabeledDataset, ScatterPair,
    ScatterSource,
};
use crate::reduce::{solve_tr, TrOptions};
use crate::rng::{normal_vector, Seed};

/// A contaminating Gaussian for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub mu: DVector<f64>,
    pub sigma: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    /// `None` for groups that are never contaminated.
    pub components: Vec<Option<Component>>,
}

impl ContaminationSpec {
    pub fn new(epsilon: f64, components: Vec<Option<Component>>) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::validation(format!(
                "epsilon {epsilon} outside [0, 1]"
            )));
        }
        for (j, c) in components.iter().enumerate() {
            if let Some(c) = c {
                if c.mu.len() != c.sigma.dim() {
                    return Err(Error::validation(format!(
                        "group {j}: component dimensions differ"
                    )));
                }
                c.sigma.cholesky().map_err(|e| e.in_group(j))?;
            }
        }
        Ok(ContaminationSpec {
            epsilon,
            components,
        })
    }

    /// No contamination at all.
    pub fn clean(g: usize) -> Self {
        ContaminationSpec {
            epsilon: 0.0,
            components: vec![None; g],
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(epsilon, self.components.clone())
    }

    pub fn flags(&self) -> Vec<bool> {
        self.components.iter().map(Option::is_some).collect()
    }

    fn check(&self, models: &[GroupModel]) -> Result<usize> {
        let p = validate_mixture(models)?;
        if self.components.len() != models.len() {
            return Err(Error::validation(
                "one contamination entry per group is required",
            ));
        }
        if self.components.iter().flatten().any(|c| c.mu.len() != p) {
            return Err(Error::validation("contaminating model dimension differs"));
        }
        Ok(p)
    }

    /// `Delta_j = mu^c_j - mu_j`, zero for clean groups.
    pub fn delta(&self, j: usize, model: &GroupModel) -> DVector<f64> {
        match &self.components[j] {
            Some(c) => &c.mu - &model.mu,
            None => DVector::zeros(model.dim()),
        }
    }

    fn sigma_shift(&self, j: usize, model: &GroupModel) -> DMatrix<f64> {
        match &self.components[j] {
            Some(c) => c.sigma.as_matrix() - model.sigma.as_matrix(),
            None => DMatrix::zeros(model.dim(), model.dim()),
        }
    }
}

/// `E[Z_j] = mu_j + eps Delta_j`, `Var[Z_j] = Sigma_j + eps (Sigma^c_j - Sigma_j) + eps (1 - eps) Delta_j Delta_j^T`.
pub fn contaminated_group_moments(
    model: &GroupModel,
    epsilon: f64,
    component: Option<&Component>,
) -> (DVector<f64>, SymMatrix) {
    let Some(c) = component else {
        return (model.mu.clone(), model.sigma.clone());
    };
    let delta = &c.mu - &model.mu;
    let mean = &model.mu + &delta * epsilon;
    let var = model.sigma.as_matrix()
        + (c.sigma.as_matrix() - model.sigma.as_matrix()) * epsilon
        + &delta * delta.transpose() * (epsilon * (1.0 - epsilon));
    (mean, SymMatrix::symmetrize(var))
}

/// Exact `W_Z` and `B_Z` of the contaminated mixture.
pub fn contaminated_scatter(
    models: &[GroupModel],
    spec: &ContaminationSpec,
) -> Result<ScatterPair> {
    let p = spec.check(models)?;
    let clean = theoretical_scatter(models)?;
    let eps = spec.epsilon;
    let mu = mixture_mean(models);
    let deltas: Vec<DVector<f64>> = models
        .iter()
        .enumerate()
        .map(|(j, m)| spec.delta(j, m))
        .collect();
    let delta_bar = deltas
        .iter()
        .zip(models)
        .fold(DVector::zeros(p), |acc, (d, m)| acc + d * m.prior);

    let mut w = clean.w.as_matrix().clone();
    let mut b = clean.b.as_matrix().clone();
    for (j, m) in models.iter().enumerate() {
        let dj = &deltas[j];
        w += (spec.sigma_shift(j, m) * eps + dj * dj.transpose() * (eps * (1.0 - eps))) * m.prior;
        let centered = dj - &delta_bar;
        let small = &m.mu - &mu;
        let cross = &small * centered.transpose();
        b += (&cross + cross.transpose()) * (eps * m.prior)
            + &centered * centered.transpose() * (eps * eps * m.prior);
    }
    let w = SymMatrix::symmetrize(w);
    Ok(ScatterPair {
        b: SymMatrix::symmetrize(b),
        s_pooled: w.clone(),
        w,
        counts: Vec::new(),
        source: ScatterSource::ContaminatedTheoretical,
    })
}

/// Linear-in-`eps` parts of `B_Z - B` and `W_Z - W` when only the first group is contaminated.
pub fn first_order_one_group(
    models: &[GroupModel],
    spec: &ContaminationSpec,
) -> Result<(SymMatrix, SymMatrix)> {
    spec.check(models)?;
    let flags = spec.flags();
    if !flags[0] || flags[1..].iter().any(|&f| f) {
        return Err(Error::validation(
            "the first-order expansion needs exactly the first group contaminated",
        ));
    }
    let m1 = &models[0];
    let eps = spec.epsilon;
    let d1 = spec.delta(0, m1);
    let small = &m1.mu - mixture_mean(models);
    let dw = (spec.sigma_shift(0, m1) + &d1 * d1.transpose()) * (eps * m1.prior);
    let db = SymMatrix::sym_outer(&small, &d1).scale(eps * m1.prior);
    Ok((db, SymMatrix::symmetrize(dw)))
}

#[derive(Debug, Clone)]
pub struct PerturbationReport {
    pub epsilon: f64,
    /// Exact `B_Z - B` and `W_Z - W`.
    pub delta_b: SymMatrix,
    pub delta_w: SymMatrix,
    /// `||dB|| + rho ||dW||` for the exact perturbation.
    pub sigma: f64,
    /// Clean trace-ratio optimum.
    pub rho: f64,
    /// Clean eigenvalue gap `lambda_k - lambda_{k+1}` of `B - rho W`.
    pub gamma: f64,
    /// Sum of the `k` smallest eigenvalues of `W`.
    pub tau: f64,
    /// `lambda_1(W) / lambda_p(W)`.
    pub kappa: f64,
    /// `(4 sigma / gamma)(1 + (k / tau) ||W + dW||)`.
    pub general_bound: f64,
    /// The same expression with first-order `dB`, `dW` and `||W||` in place of `||W + dW||`.
    pub general_first_order: f64,
    /// `(4/gamma) eps p_1 ||D_1|| (2 ||d_1|| + p_1 rho ||D_1||)(1 + kappa)`; `None` unless only
    /// the first group is contaminated with an unchanged covariance.
    pub specialized_bound: Option<f64>,
    /// As above with `rho ||D_1||` in place of `p_1 rho ||D_1||`, matching `||dW|| = eps p_1 ||D_1||^2`.
    pub specialized_bound_corrected: Option<f64>,
    /// `||V V^T - V~ V~^T||_2` between clean and contaminated TR solutions.
    pub observed_sin: f64,
}

/// Relative gap threshold below which the clean TR solution is not unique.
pub const GAP_TOL: f64 = 1e-8;

pub fn tr_perturbation_bound(
    models: &[GroupModel],
    k: usize,
    spec: &ContaminationSpec,
    opts: &TrOptions,
) -> Result<PerturbationReport> {
    spec.check(models)?;
    let clean = theoretical_scatter(models)?;
    let tr = solve_tr(&clean, k, opts)?;
    let scale = clean.b.norm2() + clean.w.norm2();
    let gamma = tr.gap.unwrap_or(f64::INFINITY);
    if gamma <= GAP_TOL * scale {
        return Err(Error::NonUnique { gap: gamma });
    }
    let rho = tr.rho;
    let contaminated = contaminated_scatter(models, spec)?;
    let delta_b = &contaminated.b - &clean.b;
    let delta_w = &contaminated.w - &clean.w;
    let sigma = delta_b.norm2() + rho * delta_w.norm2();

    let w_eigs = clean.w.eigenvalues();
    let tau: f64 = w_eigs.iter().rev().take(k).sum();
    let kappa = condition_number(&clean.w).value;
    let kf = k as f64;
    let general_bound = 4.0 * sigma / gamma * (1.0 + kf / tau * contaminated.w.norm2());

    let flags = spec.flags();
    let one_group = flags[0] && !flags[1..].iter().any(|&f| f);
    let (general_first_order, specialized_bound, specialized_bound_corrected) = if one_group {
        let (db, dw) = first_order_one_group(models, spec)?;
        let sigma1 = db.norm2() + rho * dw.norm2();
        let gfo = 4.0 * sigma1 / gamma * (1.0 + kf / tau * clean.w.norm2());
        let shape_kept = spec.components[0]
            .as_ref()
            .is_some_and(|c| (c.sigma.as_matrix() - models[0].sigma.as_matrix()).amax() == 0.0);
        if shape_kept {
            let p1 = models[0].prior;
            let d1 = spec.delta(0, &models[0]).norm();
            let small = (&models[0].mu - mixture_mean(models)).norm();
            let eps = spec.epsilon;
            let lead = 4.0 / gamma * eps * p1 * d1 * (1.0 + kappa);
            (
                gfo,
                Some(lead * (2.0 * small + p1 * rho * d1)),
                Some(lead * (2.0 * small + rho * d1)),
            )
        } else {
            (gfo, None, None)
        }
    } else {
        (general_bound, None, None)
    };

    let perturbed = solve_tr(&contaminated, k, opts)?;
    let diff = &tr.v * tr.v.transpose() - &perturbed.v * perturbed.v.transpose();
    let observed_sin = SymMatrix::symmetrize(diff).norm2().min(1.0);

    Ok(PerturbationReport {
        epsilon: spec.epsilon,
        delta_b,
        delta_w,
        sigma,
        rho,
        gamma,
        tau,
        kappa,
        general_bound,
        general_first_order,
        specialized_bound,
        specialized_bound_corrected,
        observed_sin,
    })
}

#[derive(Debug, Clone)]
pub struct ContaminatedSample {
    pub data: LabeledDataset,
    /// Whether each row came from the contaminating component.
    pub outlier: Vec<bool>,
    /// Groups whose realized contamination fraction is more than three standard errors off.
    pub fraction_flags: Vec<usize>,
}

/// Draws `n_per_group[j]` rows for group `j`, each independently contaminated with probability `eps`.
///
/// Group `j` uses the stream `seed.child(j)`. Every row consumes one uniform and
/// `p` normals whether or not it is contaminated, so raising `eps` only turns
/// more of the same rows into outliers.
pub fn sample_contaminated(
    models: &[GroupModel],
    spec: &ContaminationSpec,
    n_per_group: &[usize],
    seed: Seed,
) -> Result<ContaminatedSample> {
    let p = spec.check(models)?;
    if n_per_group.len() != models.len() {
        return Err(Error::validation("one sample size per group is required"));
    }
    let n: usize = n_per_group.iter().sum();
    let mut x = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut outlier = Vec::with_capacity(n);
    let mut fraction_flags = Vec::new();
    let eps = spec.epsilon;
    let mut row = 0;
    for (j, m) in models.iter().enumerate() {
        let l_clean = m.sigma.cholesky().map_err(|e| e.in_group(j))?.l();
        let comp = match &spec.components[j] {
            Some(c) => Some((
                c.mu.clone(),
                c.sigma.cholesky().map_err(|e| e.in_group(j))?.l(),
            )),
            None => None,
        };
        let mut rng = seed.child(j as u64).rng();
        let mut hits = 0usize;
        for _ in 0..n_per_group[j] {
            let u: f64 = rng.random();
            let z = normal_vector(&mut rng, p);
            let draw = match &comp {
                Some((mu_c, l_c)) if u < eps => {
                    hits += 1;
                    outlier.push(true);
                    mu_c + l_c * z
                }
                _ => {
                    outlier.push(false);
                    &m.mu + &l_clean * z
                }
            };
            x.row_mut(row).copy_from(&draw.transpose());
            labels.push(j);
            row += 1;
        }
        let nj = n_per_group[j] as f64;
        if comp.is_some() && eps > 0.0 && eps < 1.0 && nj > 0.0 {
            let frac = hits as f64 / nj;
            if (frac - eps).abs() > 3.0 * (eps * (1.0 - eps) / nj).sqrt() {
                log::warn!("group {j}: contamination fraction {frac} far from {eps}");
                fraction_flags.push(j);
            }
        }
    }
    Ok(ContaminatedSample {
        data: LabeledDataset::with_groups(x, labels, models.len())?,
        outlier,
        fraction_flags,
    })
}
