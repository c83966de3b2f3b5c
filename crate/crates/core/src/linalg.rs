//! Dense symmetric eigen-computations, subspace geometry and rank handling.
//!
//! Everything here is a pure function of its inputs. Eigenvectors are returned
//! in a canonical sign (largest-magnitude entry positive) so that downstream
//! angle and coefficient outputs are reproducible bit-for-bit.

use std::ops::{Add, Deref, Mul, Sub};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which a PSD matrix is treated as singular.
pub const RANK_TOL: f64 = 1e-10;

/// Relative threshold on the smallest eigenvalue for a matrix to count as SPD.
pub const SPD_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;
const ORTHONORMAL_TOL: f64 = 1e-8;

/// A dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates squareness, finiteness and symmetry (up to `1e-12 * (1 + max|a_ij|)`).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::validation(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::validation("empty matrix"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("matrix has non-finite entries"));
        }
        let scale = 1.0 + m.amax();
        let asymmetry = asymmetry(&m);
        if asymmetry > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { asymmetry });
        }
        Ok(SymMatrix(m))
    }

    /// Averages `m` with its transpose. For matrices that are symmetric up to rounding.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Builds a symmetric matrix from row-major nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation("rows must form a square matrix"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// `v v^T`.
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMatrix(v * v.transpose())
    }

    /// `a b^T + b a^T`.
    pub fn sym_outer(a: &DVector<f64>, b: &DVector<f64>) -> Self {
        let ab = a * b.transpose();
        let ba = ab.transpose();
        SymMatrix(ab + ba)
    }

    /// `X^T A X` for a `dim x k` matrix `X`.
    pub fn congruence(&self, x: &DMatrix<f64>) -> Self {
        SymMatrix::symmetrize(x.transpose() * &self.0 * x)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn norm2(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        SymMatrix(&self.0 * alpha)
    }

    /// Eigenvalues in non-increasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// Number of eigenvalues above `RANK_TOL * max(lambda_1, 0)`.
    pub fn numerical_rank(&self) -> usize {
        let ev = self.eigenvalues();
        let top = ev.first().copied().unwrap_or(0.0).max(0.0);
        if top == 0.0 {
            return 0;
        }
        ev.iter().filter(|&&l| l > RANK_TOL * top).count()
    }

    /// Cholesky factor, if the matrix passes the SPD threshold.
    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        check_spd(self)?;
        Cholesky::new(self.0.clone()).ok_or(Error::NotPositiveDefinite {
            min_eigenvalue: 0.0,
            max_eigenvalue: self.norm2(),
        })
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        SymMatrix(&self.0 * rhs)
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues (non-increasing) and eigenvectors of a symmetric or symmetric-definite problem.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    /// Eigenvectors as columns, normalized so that `V^T M V = I`.
    pub vectors: DMatrix<f64>,
    /// The normalizing matrix `M`; `None` means the identity.
    pub metric: Option<DMatrix<f64>>,
}

impl EigenDecomposition {
    /// The first `k` eigenvectors.
    pub fn leading(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }
}

/// Flips each column so that its largest-magnitude entry is positive.
/// Entries within `1e-12` relative of the maximum count as ties; the first one wins.
pub fn canonical_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let amax = col.amax();
        if amax == 0.0 {
            continue;
        }
        let lead = col
            .iter()
            .position(|x| x.abs() >= amax * (1.0 - 1e-12))
            .expect("column has a maximal entry");
        if col[lead] < 0.0 {
            col.neg_mut();
        }
    }
}

fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    canonical_signs(&mut vectors);
    (values, vectors)
}

/// Eigendecomposition of a symmetric matrix, values non-increasing.
pub fn sym_eig(a: &SymMatrix) -> EigenDecomposition {
    let (values, vectors) = sorted_eigen(a.as_matrix().clone());
    EigenDecomposition {
        values,
        vectors,
        metric: None,
    }
}

fn check_spd(w: &SymMatrix) -> Result<()> {
    let ev = w.eigenvalues();
    let max = ev[0];
    let min = ev[ev.len() - 1];
    if !(max > 0.0) || min <= SPD_TOL * max {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

/// Solves `B v = lambda W v` for SPD `W` via Cholesky reduction.
///
/// Eigenvectors are `W`-orthonormal, or `M`-orthonormal when `metric` is given
/// (used for the `S_pooled` normalization).
pub fn gen_eig_spd(
    b: &SymMatrix,
    w: &SymMatrix,
    metric: Option<&SymMatrix>,
) -> Result<EigenDecomposition> {
    let p = b.dim();
    if w.dim() != p || metric.is_some_and(|m| m.dim() != p) {
        return Err(Error::validation(
            "pencil matrices must share one dimension",
        ));
    }
    let chol = w.cholesky()?;
    let l = chol.l();
    // C = L^{-1} B L^{-T}
    let lb = l
        .solve_lower_triangular(b.as_matrix())
        .ok_or_else(|| Error::validation("singular Cholesky factor"))?;
    let c = l
        .solve_lower_triangular(&lb.transpose())
        .ok_or_else(|| Error::validation("singular Cholesky factor"))?;
    let (values, u) = sorted_eigen(SymMatrix::symmetrize(c).into_inner());
    let mut vectors = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::validation("singular Cholesky factor"))?;
    if let Some(m) = metric {
        for mut col in vectors.column_iter_mut() {
            let q = col.dot(&(m.as_matrix() * &col));
            if !(q > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    min_eigenvalue: q,
                    max_eigenvalue: m.norm2(),
                });
            }
            col /= q.sqrt();
        }
    }
    canonical_signs(&mut vectors);
    Ok(EigenDecomposition {
        values,
        vectors,
        metric: Some(metric.unwrap_or(w).as_matrix().clone()),
    })
}

/// Largest deviation of `V^T V` from the identity.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let k = g.nrows();
    (g - DMatrix::<f64>::identity(k, k)).amax()
}

/// Orthonormal basis of the column span (thin QR), canonical signs.
pub fn orthonormalize(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = v.clone().qr().q();
    canonical_signs(&mut q);
    q
}

/// `arcsin ||V1 V1^T - V2 V2^T||_2`, the largest principal angle between the spans.
pub fn subspace_angle(v1: &DMatrix<f64>, v2: &DMatrix<f64>) -> Result<f64> {
    if v1.nrows() != v2.nrows() {
        return Err(Error::validation(format!(
            "bases live in different spaces ({} vs {} rows)",
            v1.nrows(),
            v2.nrows()
        )));
    }
    for (name, v) in [("first", v1), ("second", v2)] {
        let defect = orthonormality_defect(v);
        if defect > ORTHONORMAL_TOL {
            return Err(Error::validation(format!(
                "{name} basis is not column-orthonormal (defect {defect:e})"
            )));
        }
    }
    let diff = v1 * v1.transpose() - v2 * v2.transpose();
    let norm = SymMatrix::symmetrize(diff).norm2();
    Ok(norm.min(1.0).asin())
}

/// Column-orthonormal basis of the numerical range of a PSD matrix.
#[derive(Debug, Clone)]
pub struct RangeBasis {
    pub gamma: DMatrix<f64>,
    pub kept_values: Vec<f64>,
}

impl RangeBasis {
    /// Dimension `m` of the retained range.
    pub fn dim(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient_dim()
    }

    /// `Gamma^T A Gamma`.
    pub fn compress(&self, a: &SymMatrix) -> SymMatrix {
        a.congruence(&self.gamma)
    }

    /// Maps observations stored as rows into range coordinates (`X Gamma`).
    pub fn project_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * &self.gamma
    }

    /// Maps coefficient columns from range coordinates back to the ambient space.
    pub fn lift(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.gamma * v
    }
}

/// Retains the eigenvectors of `w` with `lambda_i > 1e-10 * lambda_1`.
pub fn range_projection(w: &SymMatrix) -> Result<RangeBasis> {
    let eig = sym_eig(w);
    let top = eig.values[0];
    if !(top > 0.0) {
        return Err(Error::validation(
            "range projection of a zero (or negative) matrix",
        ));
    }
    let bottom = eig.values[eig.values.len() - 1];
    if bottom < -RANK_TOL * top {
        return Err(Error::validation(format!(
            "matrix is not positive semidefinite (eigenvalue {bottom:e})"
        )));
    }
    let m = eig.values.iter().filter(|&&l| l > RANK_TOL * top).count();
    Ok(RangeBasis {
        gamma: eig.leading(m),
        kept_values: eig.values.iter().take(m).copied().collect(),
    })
}

/// `lambda_1 / lambda_p`, with an infinite sentinel for singular matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub value: f64,
    pub singular: bool,
}

pub fn condition_number(w: &SymMatrix) -> Condition {
    let ev = w.eigenvalues();
    let max = ev[0];
    let min = ev[ev.len() - 1];
    if !(max > 0.0) || min <= SPD_TOL * max {
        Condition {
            value: f64::INFINITY,
            singular: true,
        }
    } else {
        Condition {
            value: max / min,
            singular: false,
        }
    }
}

/// Largest singular value of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v))
}

/// `log det` of an SPD matrix from its Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}
