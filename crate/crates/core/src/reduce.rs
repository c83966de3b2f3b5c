//! FDA and trace-ratio reducers, and the k-profile diagnostics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gen_eig_spd, orthonormalize, sym_eig, SymMatrix};
use crate::moments::ScatterPair;
use crate::rng::{normal_matrix, Seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fda")]
    Fda,
    #[serde(rename = "tr")]
    Tr,
}

/// Column normalization of a coefficient matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scaling {
    /// `V^T W V = I`.
    WOrthonormal,
    /// `V^T S_pooled V = I`.
    SPooledOrthonormal,
    /// `V^T V = I`.
    ColumnOrthonormal,
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub v: DMatrix<f64>,
    pub method: Method,
    pub scaling: Scaling,
    /// Trace ratio `tr(V^T B V) / tr(V^T W V)` at `v`.
    pub rho: f64,
    /// `lambda_k - lambda_{k+1}` of `B - rho W` (TR only, `k < p`).
    pub gap: Option<f64>,
    /// `sum_{i<=k} lambda_i(B - rho W)` at the returned `rho` (TR only).
    pub first_order_residual: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `rho` after each iteration, starting with the initial guess.
    pub rho_trace: Vec<f64>,
    pub warnings: Vec<String>,
    /// Generalized eigenvalues (FDA only).
    pub eigenvalues: Option<Vec<f64>>,
}

impl Projection {
    pub fn k(&self) -> usize {
        self.v.ncols()
    }

    /// An orthonormal basis of the span, as needed for angle comparisons.
    pub fn orthonormal_basis(&self) -> DMatrix<f64> {
        match self.scaling {
            Scaling::ColumnOrthonormal => self.v.clone(),
            _ => orthonormalize(&self.v),
        }
    }

    pub fn is_unique(&self) -> bool {
        self.warnings.is_empty()
    }
}

fn check_k(k: usize, p: usize) -> Result<()> {
    if k == 0 || k > p {
        return Err(Error::validation(format!(
            "reduced dimension {k} outside 1..={p}"
        )));
    }
    Ok(())
}

/// Top-`k` generalized eigenvectors of `(B, W)`.
pub fn fda(s: &ScatterPair, k: usize, scaling: Scaling) -> Result<Projection> {
    let p = s.dim();
    check_k(k, p)?;
    let rank = s.rank_b();
    if k > rank {
        return Err(Error::RankBound { k, rank });
    }
    let metric = match scaling {
        Scaling::SPooledOrthonormal => Some(&s.s_pooled),
        _ => None,
    };
    let eig = gen_eig_spd(&s.b, &s.w, metric)?;
    let mut v = eig.leading(k);
    if scaling == Scaling::ColumnOrthonormal {
        v = orthonormalize(&v);
    }
    let rho = trace_ratio_value(&v, s)?;
    Ok(Projection {
        v,
        method: Method::Fda,
        scaling,
        rho,
        gap: None,
        first_order_residual: None,
        iterations: 0,
        converged: true,
        rho_trace: Vec::new(),
        warnings: Vec::new(),
        eigenvalues: Some(eig.values.iter().copied().collect()),
    })
}

/// `tr(V^T B V) / tr(V^T W V)`.
pub fn trace_ratio_value(v: &DMatrix<f64>, s: &ScatterPair) -> Result<f64> {
    if v.nrows() != s.dim() {
        return Err(Error::validation(
            "coefficient matrix has the wrong number of rows",
        ));
    }
    let num = (v.transpose() * s.b.as_matrix() * v).trace();
    let den = (v.transpose() * s.w.as_matrix() * v).trace();
    if !(den > 0.0) {
        return Err(Error::validation(format!(
            "tr(V^T W V) = {den} is not positive"
        )));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrInit {
    FdaWarmStart,
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrOptions {
    pub tol_rho: f64,
    pub max_iter: usize,
    pub init: TrInit,
}

impl Default for TrOptions {
    fn default() -> Self {
        TrOptions {
            tol_rho: 1e-10,
            max_iter: 200,
            init: TrInit::FdaWarmStart,
        }
    }
}

fn initial_basis(s: &ScatterPair, k: usize, init: TrInit) -> DMatrix<f64> {
    match init {
        TrInit::FdaWarmStart => match gen_eig_spd(&s.b, &s.w, None) {
            Ok(eig) => orthonormalize(&eig.leading(k)),
            Err(_) => sym_eig(&s.b).leading(k),
        },
        TrInit::Random(seed) => orthonormalize(&normal_matrix(&mut Seed(seed).rng(), s.dim(), k)),
    }
}

/// Relative slack allowed when asserting that `rho` never decreases.
const RHO_MONOTONE_SLACK: f64 = 1e-12;

/// Fixed-point iteration `V <- top-k eigenvectors of B - rho(V) W`.
pub fn solve_tr(s: &ScatterPair, k: usize, opts: &TrOptions) -> Result<Projection> {
    let p = s.dim();
    check_k(k, p)?;
    if !(opts.tol_rho > 0.0) {
        return Err(Error::validation("tol_rho must be positive"));
    }
    let rank_w = s.w.numerical_rank();
    if rank_w + k < p + 1 {
        return Err(Error::validation(format!(
            "rank(W) = {rank_w} is below p - k + 1 = {}; the trace ratio is unbounded",
            p + 1 - k
        )));
    }
    let mut v = initial_basis(s, k, opts.init);
    let mut rho = trace_ratio_value(&v, s)?;
    let mut trace = vec![rho];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let eig = sym_eig(&(&s.b - &s.w.scale(rho)));
        v = eig.leading(k);
        let next = trace_ratio_value(&v, s)?;
        if next < rho - RHO_MONOTONE_SLACK * rho.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Invariant(format!(
                "trace ratio decreased from {rho} to {next}"
            )));
        }
        trace.push(next);
        let change = (next - rho).abs();
        rho = next;
        if change <= opts.tol_rho * rho.abs() {
            converged = true;
            break;
        }
    }
    let eig = sym_eig(&(&s.b - &s.w.scale(rho)));
    let residual: f64 = eig.values.iter().take(k).sum();
    let gap = (k < p).then(|| eig.values[k - 1] - eig.values[k]);
    let mut warnings = Vec::new();
    let scale = s.b.norm2() + s.w.norm2();
    if let Some(g) = gap {
        if g <= 1e-8 * scale {
            warnings.push(format!(
                "eigenvalue gap {g:e} of B - rho W at k = {k} is below 1e-8 (|B| + |W|); the optimal subspace is not unique"
            ));
        }
    }
    if !converged {
        log::warn!("trace-ratio iteration stopped after {iterations} steps without converging");
    }
    Ok(Projection {
        v,
        method: Method::Tr,
        scaling: Scaling::ColumnOrthonormal,
        rho,
        gap,
        first_order_residual: Some(residual),
        iterations,
        converged,
        rho_trace: trace,
        warnings,
        eigenvalues: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEntry {
    pub k: usize,
    pub rho: f64,
    pub trace_b: f64,
    pub trace_w: f64,
    pub gap: Option<f64>,
}

fn profile_entries(s: &ScatterPair, k_max: usize, opts: &TrOptions) -> Result<Vec<ProfileEntry>> {
    check_k(k_max, s.dim())?;
    (1..=k_max)
        .map(|k| {
            let pr = solve_tr(s, k, opts)?;
            let trace_b = (pr.v.transpose() * s.b.as_matrix() * &pr.v).trace();
            let trace_w = (pr.v.transpose() * s.w.as_matrix() * &pr.v).trace();
            Ok(ProfileEntry {
                k,
                rho: pr.rho,
                trace_b,
                trace_w,
                gap: pr.gap,
            })
        })
        .collect()
}

/// Optimal trace ratio for `k = 1..=k_max`; fails if `rho^(k)` ever increases.
pub fn rho_profile(s: &ScatterPair, k_max: usize, opts: &TrOptions) -> Result<Vec<ProfileEntry>> {
    let entries = profile_entries(s, k_max, opts)?;
    for w in entries.windows(2) {
        if w[1].rho > w[0].rho + 1e-8 * w[0].rho.abs().max(1.0) {
            return Err(Error::Invariant(format!(
                "rho increased from {} at k = {} to {} at k = {}",
                w[0].rho, w[0].k, w[1].rho, w[1].k
            )));
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjectureReport {
    pub profile: Vec<ProfileEntry>,
    /// Values of `k` with `tr_B^(k+1) < tr_B^(k) - 1e-8`.
    pub violations: Vec<usize>,
}

/// Records where `tr(V^T B V)` of the TR solution fails to grow with `k`. Observational only.
pub fn conjecture_scan(
    s: &ScatterPair,
    k_max: usize,
    opts: &TrOptions,
) -> Result<ConjectureReport> {
    let profile = profile_entries(s, k_max, opts)?;
    let violations = profile
        .windows(2)
        .filter(|w| w[1].trace_b < w[0].trace_b - 1e-8)
        .map(|w| w[0].k)
        .collect();
    Ok(ConjectureReport {
        profile,
        violations,
    })
}

/// A pair from explicit matrices, e.g. for pencils not tied to data.
pub fn pencil(b: SymMatrix, w: SymMatrix) -> ScatterPair {
    ScatterPair {
        s_pooled: w.clone(),
        b,
        w,
        counts: Vec::new(),
        source: crate::moments::ScatterSource::Theoretical,
    }
}

/// `W = diag(1..p)`, `B = A A^T` with `A` a `p x m` Gaussian matrix with centered columns.
pub fn random_pencil(seed: Seed, p: usize, m: usize) -> ScatterPair {
    let mut a = normal_matrix(&mut seed.rng(), p, m);
    for mut col in a.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let w: Vec<f64> = (1..=p).map(|i| i as f64).collect();
    pencil(
        SymMatrix::symmetrize(&a * a.transpose()),
        SymMatrix::from_diagonal(&w),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormality_defect, subspace_angle};
    use approx::assert_abs_diff_eq;

    fn double_eigen() -> ScatterPair {
        pencil(
            SymMatrix::from_diagonal(&[2.0, 4.0]),
            SymMatrix::from_diagonal(&[1.0, 2.0]),
        )
    }

    #[test]
    fn double_eigenvalue_profile() {
        let s = double_eigen();
        let prof = rho_profile(&s, 2, &TrOptions::default()).unwrap();
        assert_abs_diff_eq!(prof[0].rho, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prof[1].rho, 2.0, epsilon = 1e-12);
        let one = solve_tr(&s, 1, &TrOptions::default()).unwrap();
        assert!(!one.is_unique());
    }

    #[test]
    fn trace_ratio_examples() {
        let s = double_eigen();
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(trace_ratio_value(&e1, &s).unwrap(), 2.0);
        let s = pencil(
            SymMatrix::from_rows(&[&[3.0, 1.0], &[1.0, 5.0]]).unwrap(),
            SymMatrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]).unwrap(),
        );
        let full = orthonormalize(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]));
        assert_abs_diff_eq!(
            trace_ratio_value(&full, &s).unwrap(),
            8.0 / 3.0,
            epsilon = 1e-14
        );
        let zero = DMatrix::zeros(2, 1);
        assert!(trace_ratio_value(&zero, &s).is_err());
    }

    #[test]
    fn trace_ratio_matches_double_sum() {
        let s = random_pencil(Seed(4), 6, 3);
        let v = orthonormalize(&normal_matrix(&mut Seed(5).rng(), 6, 2));
        let (mut num, mut den) = (0.0, 0.0);
        for c in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    num += v[(i, c)] * s.b[(i, j)] * v[(j, c)];
                    den += v[(i, c)] * s.w[(i, j)] * v[(j, c)];
                }
            }
        }
        assert_abs_diff_eq!(
            trace_ratio_value(&v, &s).unwrap(),
            num / den,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fda_equal_pencil() {
        let b = SymMatrix::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]).unwrap();
        let s = pencil(b.clone(), b);
        let pr = fda(&s, 2, Scaling::WOrthonormal).unwrap();
        for l in pr.eigenvalues.unwrap() {
            assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn fda_rank_bound() {
        let s = pencil(
            SymMatrix::from_diagonal(&[1.0, 0.0, 0.0]),
            SymMatrix::identity(3),
        );
        assert!(matches!(
            fda(&s, 2, Scaling::WOrthonormal),
            Err(Error::RankBound { k: 2, rank: 1 })
        ));
    }

    #[test]
    fn fda_profile_is_running_mean_of_eigenvalues() {
        let s = random_pencil(Seed(12), 8, 5);
        let lam = fda(&s, 1, Scaling::WOrthonormal)
            .unwrap()
            .eigenvalues
            .unwrap();
        for k in 1..=5 {
            let pr = fda(&s, k, Scaling::WOrthonormal).unwrap();
            let mean: f64 = lam[..k].iter().sum::<f64>() / k as f64;
            assert_abs_diff_eq!(pr.rho, mean, epsilon = 1e-10 * mean);
        }
    }

    #[test]
    fn k_one_tr_matches_fda_line() {
        let s = random_pencil(Seed(2), 10, 4);
        let f = fda(&s, 1, Scaling::WOrthonormal).unwrap();
        let t = solve_tr(&s, 1, &TrOptions::default()).unwrap();
        let angle = subspace_angle(&f.orthonormal_basis(), &t.v).unwrap();
        assert!(angle < 1e-6, "{angle}");
    }

    #[test]
    fn tr_solution_properties() {
        let s = random_pencil(Seed(21), 20, 10);
        for k in [1, 3, 6] {
            let t = solve_tr(&s, k, &TrOptions::default()).unwrap();
            assert!(t.converged);
            assert!(orthonormality_defect(&t.v) < 1e-8);
            let scale = s.b.norm2() + t.rho * s.w.norm2();
            assert!(t.first_order_residual.unwrap().abs() <= 1e-6 * scale);
            assert!(t
                .rho_trace
                .windows(2)
                .all(|w| w[1] >= w[0] - RHO_MONOTONE_SLACK * w[0].abs()));
        }
    }

    #[test]
    fn random_start_agrees_with_warm_start() {
        let s = random_pencil(Seed(31), 12, 6);
        let warm = solve_tr(&s, 3, &TrOptions::default()).unwrap();
        let cold = solve_tr(
            &s,
            3,
            &TrOptions {
                init: TrInit::Random(5),
                ..TrOptions::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(warm.rho, cold.rho, epsilon = 1e-9 * warm.rho);
        assert!(subspace_angle(&warm.v, &cold.v).unwrap() < 1e-6);
    }

    #[test]
    fn diagonal_pencil_nests() {
        let s = pencil(
            SymMatrix::from_diagonal(&[5.0, 3.0, 2.0, 0.5]),
            SymMatrix::from_diagonal(&[1.0, 2.0, 1.0, 3.0]),
        );
        let r = conjecture_scan(&s, 4, &TrOptions::default()).unwrap();
        assert!(r.violations.is_empty());
        let single = conjecture_scan(&s, 1, &TrOptions::default()).unwrap();
        assert!(single.violations.is_empty());
    }

    #[test]
    fn unbounded_ratio_is_rejected() {
        let s = pencil(
            SymMatrix::identity(3),
            SymMatrix::from_diagonal(&[1.0, 0.0, 0.0]),
        );
        assert!(solve_tr(&s, 1, &TrOptions::default()).is_err());
    }
}
