//! Estimating the confounding strength from `(Σ_XX, Σ_XY)`.
//!
//! The observed spectral weights `w_j ∝ ⟨â, φ_j⟩²` are compared with a
//! two-parameter family of weight vectors
//!
//! ```text
//! w_j(β, η) = (1 − β)/d + β ⟨v, ψ_j⟩²
//! ```
//!
//! where `ψ_j` are the (descending) eigenvectors of `T = diag(λ) + η g gᵀ`,
//! `g = (1, …, 1)/√d` and `v ∝ T⁻¹ g ∝ diag(λ)⁻¹ g` (Sherman–Morrison). The
//! weight `⟨v, ψ_j⟩²` is attached to the `j`-th eigenvalue of `Σ_XX`.
//! The fit minimizes `‖K (w − w(β, η))‖₁` over a grid, with a Gaussian
//! smoothing kernel `K` on the eigenvalues.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result, Warning};
use crate::scm::{empirical_covariances, regression_vector, Dataset};
use crate::spectral::{eigendecompose, EigenDecomposition, SymMatrix};

pub const DEFAULT_SIGMA_FACTOR: f64 = 0.2;
pub const DEFAULT_GRID_STEPS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridConfig {
    /// Number of β values in `[0, 1]`, endpoints included.
    pub beta_steps: usize,
    /// Number of η values in `[0, λ_1]`, endpoints included.
    pub eta_steps: usize,
    /// Kernel bandwidth as a fraction of the spectral range `λ_1 − λ_d`.
    pub sigma_factor: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            beta_steps: DEFAULT_GRID_STEPS,
            eta_steps: DEFAULT_GRID_STEPS,
            sigma_factor: DEFAULT_SIGMA_FACTOR,
        }
    }
}

impl GridConfig {
    fn validate(&self) -> Result<()> {
        if self.beta_steps == 0 || self.eta_steps == 0 {
            return Err(Error::invalid("grid sizes must be positive"));
        }
        if !(self.sigma_factor > 0.0) || !self.sigma_factor.is_finite() {
            return Err(Error::invalid("sigma factor must be positive"));
        }
        Ok(())
    }

    pub fn beta_at(&self, i: usize) -> f64 {
        grid_point(i, self.beta_steps, 1.0)
    }

    pub fn eta_at(&self, j: usize, lambda_max: f64) -> f64 {
        grid_point(j, self.eta_steps, lambda_max)
    }
}

fn grid_point(i: usize, steps: usize, hi: f64) -> f64 {
    if steps == 1 {
        0.0
    } else if i + 1 == steps {
        hi
    } else {
        hi * i as f64 / (steps - 1) as f64
    }
}

/// Member of the model family, indexed against the descending spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyWeights {
    pub beta: f64,
    pub eta: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfoundingEstimate {
    pub beta_hat: f64,
    pub eta_hat: f64,
    pub beta_index: usize,
    pub eta_index: usize,
    pub distance: f64,
    pub eigenvalues: Vec<f64>,
    pub observed_weights: Vec<f64>,
    pub fitted_weights: Vec<f64>,
    pub a_hat_norm_sq: f64,
    /// η̂ does not track the true η in simulations; it is reported for
    /// completeness only. Always true.
    pub eta_unreliable: bool,
    pub warnings: Vec<Warning>,
}

fn observed_from_eigen(e: &EigenDecomposition, a_hat: &DVector<f64>) -> Result<Vec<f64>> {
    let coeffs = e.coefficients(a_hat)?;
    let raw: Vec<f64> = coeffs.iter().map(|c| c * c).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroRegressionVector);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Descending eigenvalues of `Σ_XX` and the normalized weights `⟨â, φ_j⟩² / ‖â‖²`.
pub fn observed_weights(sigma_xx: &SymMatrix, a_hat: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = eigendecompose(sigma_xx)?;
    let w = observed_from_eigen(&e, a_hat)?;
    Ok((e.eigenvalues().iter().copied().collect(), w))
}

fn check_spectrum(eigenvalues: &[f64]) -> Result<()> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) || eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("eigenvalues must be finite and sorted in descending order"));
    }
    if eigenvalues[eigenvalues.len() - 1] <= 0.0 {
        return Err(Error::SingularCovariance("smallest eigenvalue is not positive".into()));
    }
    Ok(())
}

/// Weights of the confounded part for a given η: squared coefficients of
/// `v ∝ diag(λ)⁻¹ g` in the descending eigenbasis of `diag(λ) + η g gᵀ`.
pub fn confounded_weights(eigenvalues: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_spectrum(eigenvalues)?;
    let lambda_max = eigenvalues[0];
    if !(eta >= 0.0) || eta > lambda_max * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("eta = {eta} outside [0, {lambda_max}]")));
    }
    let d = eigenvalues.len();
    let g = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let t = SymMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues)))?
        .rank_one_update(&g, eta)?;
    let v = DVector::from_iterator(d, eigenvalues.iter().map(|l| 1.0 / l)).normalize();
    let coeffs = eigendecompose(&t)?.coefficients(&v)?;
    Ok(coeffs.iter().map(|c| c * c).collect())
}

fn mix(confounded: &[f64], beta: f64) -> Vec<f64> {
    let causal = (1.0 - beta) / confounded.len() as f64;
    confounded.iter().map(|c| causal + beta * c).collect()
}

pub fn family_weights(eigenvalues: &[f64], beta: f64, eta: f64) -> Result<FamilyWeights> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta = {beta} outside [0, 1]")));
    }
    let conf = confounded_weights(eigenvalues, eta)?;
    Ok(FamilyWeights { beta, eta, weights: mix(&conf, beta) })
}

fn is_degenerate(eigenvalues: &[f64]) -> bool {
    let hi = eigenvalues[0];
    let lo = eigenvalues[eigenvalues.len() - 1];
    hi - lo <= 1e-12 * hi.abs().max(1.0)
}

/// `K(i, j) = exp(−(λ_i − λ_j)² / 2σ²)` with `σ = sigma_factor · (λ_1 − λ_d)`,
/// or `σ = 1` when the spectrum is flat.
pub fn smoothing_matrix(eigenvalues: &[f64], sigma_factor: f64) -> Result<DMatrix<f64>> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if !(sigma_factor > 0.0) || !sigma_factor.is_finite() {
        return Err(Error::invalid("sigma factor must be positive"));
    }
    let range = eigenvalues[0] - eigenvalues[eigenvalues.len() - 1];
    let sigma = if range > 0.0 { sigma_factor * range } else { 1.0 };
    let d = eigenvalues.len();
    let two_s2 = 2.0 * sigma * sigma;
    Ok(DMatrix::from_fn(d, d, |i, j| {
        let diff = eigenvalues[i] - eigenvalues[j];
        (-diff * diff / two_s2).exp()
    }))
}

/// `‖K (w − w′)‖₁`
pub fn distance(w: &[f64], w_prime: &[f64], k: &DMatrix<f64>) -> Result<f64> {
    if w.len() != w_prime.len() || k.nrows() != w.len() || k.ncols() != w.len() {
        return Err(Error::invalid("weight vectors and kernel must have matching dimensions"));
    }
    let diff = DVector::from_iterator(w.len(), w.iter().zip(w_prime).map(|(a, b)| a - b));
    Ok((k * diff).lp_norm(1))
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    beta_index: usize,
    eta_index: usize,
}

impl Candidate {
    /// Smallest distance wins; ties go to the smaller β, then the smaller η.
    fn better(self, other: Self) -> Self {
        let key = |c: &Self| (c.beta_index, c.eta_index);
        match self.distance.total_cmp(&other.distance) {
            std::cmp::Ordering::Less => self,
            std::cmp::Ordering::Greater => other,
            std::cmp::Ordering::Equal => {
                if key(&self) <= key(&other) {
                    self
                } else {
                    other
                }
            }
        }
    }
}

fn search_grid(eigenvalues: &[f64], observed: &[f64], k: &DMatrix<f64>, cfg: &GridConfig) -> Result<Candidate> {
    let lambda_max = eigenvalues[0];
    let per_eta: Vec<Result<Candidate>> = (0..cfg.eta_steps)
        .into_par_iter()
        .map(|j| {
            let conf = confounded_weights(eigenvalues, cfg.eta_at(j, lambda_max))?;
            let mut best: Option<Candidate> = None;
            for i in 0..cfg.beta_steps {
                let fitted = mix(&conf, cfg.beta_at(i));
                let cand = Candidate { distance: distance(observed, &fitted, k)?, beta_index: i, eta_index: j };
                best = Some(best.map_or(cand, |b| b.better(cand)));
            }
            Ok(best.expect("beta grid is non-empty"))
        })
        .collect();
    let mut best: Option<Candidate> = None;
    for cand in per_eta {
        let cand = cand?;
        best = Some(best.map_or(cand, |b| b.better(cand)));
    }
    Ok(best.expect("eta grid is non-empty"))
}

/// Grid search for `(β̂, η̂)` given population or empirical covariances.
pub fn estimate(sigma_xx: &SymMatrix, sigma_xy: &DVector<f64>, cfg: &GridConfig) -> Result<ConfoundingEstimate> {
    cfg.validate()?;
    let a_hat = regression_vector(sigma_xx, sigma_xy)?;
    let e = eigendecompose(sigma_xx)?;
    let observed = observed_from_eigen(&e, &a_hat)?;
    let eigenvalues: Vec<f64> = e.eigenvalues().iter().copied().collect();
    check_spectrum(&eigenvalues)?;
    let k = smoothing_matrix(&eigenvalues, cfg.sigma_factor)?;

    let mut warnings = Vec::new();
    let best = if is_degenerate(&eigenvalues) {
        log::warn!("{}", Warning::DegenerateSpectrum);
        warnings.push(Warning::DegenerateSpectrum);
        let uniform = vec![1.0 / eigenvalues.len() as f64; eigenvalues.len()];
        Candidate { distance: distance(&observed, &uniform, &k)?, beta_index: 0, eta_index: 0 }
    } else {
        search_grid(&eigenvalues, &observed, &k, cfg)?
    };

    let beta_hat = cfg.beta_at(best.beta_index);
    let eta_hat = cfg.eta_at(best.eta_index, eigenvalues[0]);
    let fitted = family_weights(&eigenvalues, beta_hat, eta_hat)?.weights;
    Ok(ConfoundingEstimate {
        beta_hat,
        eta_hat,
        beta_index: best.beta_index,
        eta_index: best.eta_index,
        distance: best.distance,
        eigenvalues,
        observed_weights: observed,
        fitted_weights: fitted,
        a_hat_norm_sq: a_hat.norm_squared(),
        eta_unreliable: true,
        warnings,
    })
}

pub fn estimate_from_data(ds: &Dataset, cfg: &GridConfig) -> Result<ConfoundingEstimate> {
    let (sxx, sxy) = empirical_covariances(ds)?;
    estimate(&sxx, &sxy, cfg)
}

/// Centers every predictor and scales it to unit sample variance (`n − 1`).
/// `Y` is left untouched.
pub fn normalize_dataset(ds: &Dataset) -> Result<(Dataset, Warning)> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::invalid("need at least 2 samples to normalize"));
    }
    let mut x = ds.x().clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
        let scale = col.amax().max(mean.abs());
        if !(sd > 1e-12 * scale) {
            return Err(Error::ConstantColumn { column: ds.names()[j].clone() });
        }
        col /= sd;
    }
    log::warn!("{}", Warning::NormalizedPredictors);
    Ok((ds.replace_x(x), Warning::NormalizedPredictors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn observed_weights_examples() {
        let s = SymMatrix::from_diagonal(&[3.0, 1.0]).unwrap();
        let (ev, w) = observed_weights(&s, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(ev, vec![3.0, 1.0]);
        assert_eq!(w, vec![1.0, 0.0]);
        assert!(matches!(
            observed_weights(&s, &DVector::from_vec(vec![0.0, 0.0])),
            Err(Error::ZeroRegressionVector)
        ));
    }

    #[test]
    fn causal_floor_only_when_beta_is_zero() {
        let ev = [5.0, 3.0, 2.5, 1.0];
        for eta in [0.0, 1.0, 5.0] {
            let f = family_weights(&ev, 0.0, eta).unwrap();
            assert!(f.weights.iter().all(|w| *w == 0.25));
        }
    }

    #[test]
    fn family_weights_two_by_two_without_perturbation() {
        // T = diag(2, 1), v ∝ (1/2, 1): weights 0.25/1.25 and 1/1.25
        let f = family_weights(&[2.0, 1.0], 1.0, 0.0).unwrap();
        assert!(close(f.weights[0], 0.2, 1e-14));
        assert!(close(f.weights[1], 0.8, 1e-14));
    }

    #[test]
    fn family_weights_reject_bad_arguments() {
        assert!(matches!(family_weights(&[2.0, 0.0], 0.5, 0.0), Err(Error::SingularCovariance(_))));
        assert!(matches!(family_weights(&[2.0, 1.0], 0.5, 2.5), Err(Error::InvalidInput(_))));
        assert!(matches!(family_weights(&[2.0, 1.0], 0.5, -0.1), Err(Error::InvalidInput(_))));
        assert!(matches!(family_weights(&[2.0, 1.0], 1.5, 0.0), Err(Error::InvalidInput(_))));
        assert!(matches!(family_weights(&[1.0, 2.0], 0.5, 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn smoothing_matrix_examples() {
        let k = smoothing_matrix(&[1.0, 0.0], 0.2).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert!(close(k[(0, 1)], (-12.5_f64).exp(), 1e-18));
        assert_eq!(k[(0, 1)], k[(1, 0)]);

        let wide = smoothing_matrix(&[1000.0, 500.0, 1.0], 0.01).unwrap();
        assert!(close(wide[(0, 1)], 0.0, 1e-300) && close(wide[(1, 2)], 0.0, 1e-300));

        let flat = smoothing_matrix(&[2.0, 2.0], 0.2).unwrap();
        assert!(flat.iter().all(|x| *x == 1.0));
        assert!(smoothing_matrix(&[2.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let id = DMatrix::identity(3, 3);
        let w = [0.2, 0.3, 0.5];
        assert_eq!(distance(&w, &w, &id).unwrap(), 0.0);
        assert!(close(distance(&w, &[0.5, 0.3, 0.2], &id).unwrap(), 0.6, 1e-15));
        let q = 0.3;
        let k = DMatrix::from_row_slice(2, 2, &[1.0, q, q, 1.0]);
        assert!(close(distance(&[1.0, 0.0], &[0.0, 1.0], &k).unwrap(), 2.0 * (1.0 - q), 1e-15));
        assert!(distance(&[1.0], &[0.0, 1.0], &k).is_err());
    }

    #[test]
    fn degenerate_spectrum_returns_zero_with_warning() {
        let s = SymMatrix::identity(3);
        let est = estimate(&s, &DVector::from_vec(vec![1.0, 2.0, 0.5]), &GridConfig::default()).unwrap();
        assert_eq!(est.beta_hat, 0.0);
        assert_eq!(est.warnings, vec![Warning::DegenerateSpectrum]);
    }

    #[test]
    fn estimate_from_single_sample_is_invalid() {
        let ds = Dataset::new(DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), DVector::from_vec(vec![1.0])).unwrap();
        assert!(matches!(estimate_from_data(&ds, &GridConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let cfg = GridConfig { beta_steps: 7, eta_steps: 3, sigma_factor: 0.2 };
        assert_eq!(cfg.beta_at(0), 0.0);
        assert_eq!(cfg.beta_at(6), 1.0);
        assert_eq!(cfg.eta_at(2, 4.2), 4.2);
        assert_eq!(cfg.eta_at(1, 4.0), 2.0);
    }

    #[test]
    fn normalization_examples() {
        let ds = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]),
            DVector::from_vec(vec![5.0, 7.0]),
        )
        .unwrap();
        let (norm, warning) = normalize_dataset(&ds).unwrap();
        assert_eq!(warning, Warning::NormalizedPredictors);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(norm.x()[(0, 0)], -h, 1e-15) && close(norm.x()[(1, 0)], h, 1e-15));
        assert_eq!(norm.y(), ds.y());
        let (again, _) = normalize_dataset(&norm).unwrap();
        assert!((again.x() - norm.x()).amax() <= 1e-12);

        let constant = Dataset::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 4.0, 3.0, 4.0]),
            DVector::from_vec(vec![0.0, 1.0, 2.0]),
        )
        .unwrap();
        match normalize_dataset(&constant) {
            Err(Error::ConstantColumn { column }) => assert_eq!(column, "x2"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
