//! Symmetric eigendecomposition and the two spectral measures built from it.
//!
//! A symmetric matrix `A = Σ_j λ_j φ_j φ_jᵀ` gives rise to
//!
//! * the *tracial* measure, uniform over the eigenvalues, and
//! * for any vector `ψ`, the *induced* measure that puts weight `⟨ψ, φ_j⟩²`
//!   on `λ_j`. Its total mass is `‖ψ‖²` and `∫ f dμ = ⟨ψ, f(A) ψ⟩`.
//!
//! Both are stored as a [`DiscreteMeasure`]: a descending support vector and
//! a parallel weight vector.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Support points closer than `DEFAULT_MERGE_REL_TOL · (max − min + 1)` are
/// merged into one atom.
pub const DEFAULT_MERGE_REL_TOL: f64 = 1e-9;

/// Dense real symmetric matrix. Symmetrized on construction so that
/// `m[(i, j)] == m[(j, i)]` holds bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    entries: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self { entries: sym })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("rows of a symmetric matrix must all have length d"));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        Self { entries: DMatrix::identity(d, d) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `self + scale · v vᵀ`
    pub fn rank_one_update(&self, v: &DVector<f64>, scale: f64) -> Result<Self> {
        check_len(v.len(), self.dim())?;
        Self::new(&self.entries + (v * v.transpose()) * scale)
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.entries * v
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!("dimension mismatch: expected {want}, got {got}")));
    }
    Ok(())
}

/// Eigenvalues in descending order and the matching orthonormal eigenvectors
/// (column `j` belongs to eigenvalue `j`).
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// Coefficients `⟨ψ, φ_j⟩` of `ψ` in the eigenbasis.
    pub fn coefficients(&self, psi: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(psi.len(), self.dim())?;
        Ok(self.eigenvectors.tr_mul(psi))
    }

    /// `f(A) = Σ_j f(λ_j) φ_j φ_jᵀ`
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.eigenvectors[(i, j)] * f(self.eigenvalues[j])
        });
        scaled * self.eigenvectors.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.apply_fn(|x| x)
    }

    /// The vector `(1/√d) Σ_j φ_j`, whose induced measure is the tracial one.
    pub fn tracial_inducing_vector(&self) -> DVector<f64> {
        let d = self.dim() as f64;
        self.eigenvectors.column_sum() / d.sqrt()
    }
}

pub fn eigendecompose(m: &SymMatrix) -> Result<EigenDecomposition> {
    if !m.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let d = m.dim();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        // fix the sign so the largest-magnitude component is positive
        let pivot = col.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

/// Finite measure on the real line with nonnegative weights. The support is
/// kept strictly descending; nearly coincident points are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::with_merge_tolerance(support, weights, DEFAULT_MERGE_REL_TOL)
    }

    pub fn with_merge_tolerance(support: Vec<f64>, weights: Vec<f64>, rel_tol: f64) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::invalid("support and weights differ in length"));
        }
        if support.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("support points must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if !(rel_tol >= 0.0) {
            return Err(Error::invalid("merge tolerance must be nonnegative"));
        }
        let mut atoms: Vec<(f64, f64)> = support.into_iter().zip(weights).collect();
        atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(Self::merge_sorted(&atoms, rel_tol))
    }

    fn merge_sorted(atoms: &[(f64, f64)], rel_tol: f64) -> Self {
        let mut support = Vec::with_capacity(atoms.len());
        let mut weights = Vec::with_capacity(atoms.len());
        let Some(&(hi, _)) = atoms.first() else {
            return Self { support, weights };
        };
        let lo = atoms[atoms.len() - 1].0;
        let tol = rel_tol * (hi - lo + 1.0);

        let mut start = 0;
        for i in 1..=atoms.len() {
            if i < atoms.len() && atoms[i - 1].0 - atoms[i].0 < tol {
                continue;
            }
            let group = &atoms[start..i];
            let loc = group.iter().map(|a| a.0).sum::<f64>() / group.len() as f64;
            support.push(loc);
            weights.push(group.iter().map(|a| a.1).sum());
            start = i;
        }
        Self { support, weights }
    }

    pub fn dirac(at: f64, weight: f64) -> Result<Self> {
        Self::new(vec![at], vec![weight])
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ_j w_j f(s_j)`
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms().map(|(s, w)| w * f(s)).sum()
    }

    /// `Σ_j w_j s_j^k`; negative `k` requires every atom to be nonzero.
    pub fn moment(&self, k: i32) -> Result<f64> {
        if k < 0 && self.support.contains(&0.0) {
            return Err(Error::SingularSupport);
        }
        Ok(self.expectation(|s| s.powi(k)))
    }

    /// Same support, weights multiplied by `factor ≥ 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) || !factor.is_finite() {
            return Err(Error::invalid("scale factor must be finite and nonnegative"));
        }
        Ok(Self {
            support: self.support.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        })
    }

    /// Drops atoms whose weight does not exceed `floor`.
    pub fn pruned(&self, floor: f64) -> Self {
        let (support, weights) = self.atoms().filter(|&(_, w)| w > floor).unzip();
        Self { support, weights }
    }

    /// Largest absolute atom-by-atom difference (support or weight, whichever
    /// is larger) after pruning atoms with weight `≤ floor`. `None` if the
    /// pruned measures have different numbers of atoms.
    pub fn max_atom_discrepancy(&self, other: &Self, floor: f64) -> Option<f64> {
        let a = self.pruned(floor);
        let b = other.pruned(floor);
        if a.len() != b.len() {
            return None;
        }
        Some(
            a.atoms()
                .zip(b.atoms())
                .map(|((s1, w1), (s2, w2))| (s1 - s2).abs().max((w1 - w2).abs()))
                .fold(0.0, f64::max),
        )
    }
}

/// Uniform probability measure over the eigenvalues.
pub fn tracial_measure(e: &EigenDecomposition) -> DiscreteMeasure {
    let d = e.dim();
    let w = 1.0 / d as f64;
    let atoms: Vec<(f64, f64)> = e.eigenvalues.iter().map(|&l| (l, w)).collect();
    DiscreteMeasure::merge_sorted(&atoms, DEFAULT_MERGE_REL_TOL)
}

/// Measure putting weight `⟨ψ, φ_j⟩²` on `λ_j`; total mass `‖ψ‖²`.
pub fn induced_measure(e: &EigenDecomposition, psi: &DVector<f64>) -> Result<DiscreteMeasure> {
    let coeffs = e.coefficients(psi)?;
    let atoms: Vec<(f64, f64)> =
        e.eigenvalues.iter().zip(coeffs.iter()).map(|(&l, &c)| (l, c * c)).collect();
    Ok(DiscreteMeasure::merge_sorted(&atoms, DEFAULT_MERGE_REL_TOL))
}
