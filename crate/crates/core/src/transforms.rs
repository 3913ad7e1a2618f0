//! Transforms of finite discrete measures.
//!
//! * [`cauchy_transform`]: `F_ν(z) = Σ_j w_j / (z − s_j)` on the upper half plane.
//! * [`rank_one_perturb`] (`R`): realizes `ν` as multiplication by `s` on
//!   `L²(ν)` and returns the measure induced by `id + 1⟨1, ·⟩` and the
//!   constant function `1`. For `ν = μ_{A,ψ}` this is `μ_{A+ψψᵀ, ψ}`, and
//!   `F_{R(ν)} = F_ν / (1 − F_ν)`.
//! * [`multiplication_map`] (`M`): reweights by `s⁻²`, so that
//!   `M(μ_{A,ψ}) = μ_{A, A⁻¹ψ}`.
//!
//! Together they express the spectral measure of the confounding part of the
//! regression vector, `μ_{Σ_XX, c Σ_XX⁻¹ b} = c² M[R[μ_{Σ_EE, b}]]`, and the
//! large-dimension limit of β.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result, Warning};
use crate::scm::solve_symmetric;
use crate::spectral::{eigendecompose, induced_measure, DiscreteMeasure, SymMatrix};

/// Point of the open upper half plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexPoint(Complex64);

impl ComplexPoint {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !(im > 0.0) || !re.is_finite() || !im.is_finite() {
            return Err(Error::invalid(format!("{re}+{im}i is not in the upper half plane")));
        }
        Ok(Self(Complex64::new(re, im)))
    }

    pub fn value(self) -> Complex64 {
        self.0
    }
}

pub fn cauchy_transform(mu: &DiscreteMeasure, z: ComplexPoint) -> Complex64 {
    mu.atoms().map(|(s, w)| w / (z.0 - s)).sum()
}

/// Convenience wrapper that validates `z` first.
pub fn cauchy_transform_at(mu: &DiscreteMeasure, re: f64, im: f64) -> Result<Complex64> {
    Ok(cauchy_transform(mu, ComplexPoint::new(re, im)?))
}

/// `R(ν)`, computed by diagonalizing `diag(s) + u uᵀ` with `u_j = √w_j`.
pub fn rank_one_perturb(mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    if mu.is_empty() {
        return Ok(mu.clone());
    }
    let m = mu.len();
    let u = DVector::from_iterator(m, mu.weights().iter().map(|w| w.sqrt()));
    let b = SymMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(mu.support())))?
        .rank_one_update(&u, 1.0)?;
    induced_measure(&eigendecompose(&b)?, &u)
}

/// `M(ν)`: same support, weights divided by `s²`.
pub fn multiplication_map(mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    if mu.support().contains(&0.0) {
        return Err(Error::SingularSupport);
    }
    let weights = mu.atoms().map(|(s, w)| w / (s * s)).collect();
    DiscreteMeasure::new(mu.support().to_vec(), weights)
}

/// `c² M[R[μ_{Σ_EE, b}]]`, which equals `μ_{Σ_XX, c Σ_XX⁻¹ b}`.
pub fn confounding_measure_identity(sigma_ee: &SymMatrix, b: &DVector<f64>, c: f64) -> Result<DiscreteMeasure> {
    let sigma_xx = sigma_ee.rank_one_update(b, 1.0)?;
    // conditioning guard only; the solution itself is not needed
    solve_symmetric(&sigma_xx, b)?;
    let base = induced_measure(&eigendecompose(sigma_ee)?, b)?;
    multiplication_map(&rank_one_perturb(&base)?)?.scaled(c * c)
}

/// Large-dimension limit of the structural strength for a limiting
/// spectral distribution `mu_inf` (a probability measure on `(0, ∞)`):
/// `β = c² m / (c² m + r_a²)` with `m = M[R[r_b² μ∞]](ℝ)`.
pub fn asymptotic_beta(mu_inf: &DiscreteMeasure, r_a: f64, r_b: f64, c: f64) -> Result<f64> {
    if (mu_inf.mass() - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(format!("limit measure must have mass 1, got {}", mu_inf.mass())));
    }
    if mu_inf.support().iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("limit measure must be supported on (0, ∞)"));
    }
    if !(r_a >= 0.0) || !r_b.is_finite() || !c.is_finite() {
        return Err(Error::invalid("r_a must be nonnegative and r_b, c finite"));
    }
    let m = multiplication_map(&rank_one_perturb(&mu_inf.scaled(r_b * r_b)?)?)?.mass();
    let num = c * c * m;
    let den = num + r_a * r_a;
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

/// Result of a β ↔ γ conversion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conversion {
    pub value: f64,
    pub warning: Option<Warning>,
}

/// Which root of the quadratic `θ m₋₁ α² − √m₋₂ α + θ = 0` to use when
/// recovering `α = ‖b‖` from `θ = ‖Σ_XX⁻¹ b‖`. The two roots multiply to
/// `1/m₋₁`; `Upper` is the one with `m₋₁ α² ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[default]
    Upper,
    Lower,
}

fn check_spectral_inputs(m_minus1: f64, m_minus2: f64, norm_sxy_sq: f64, norm_ahat_sq: f64) -> Result<()> {
    let vals = [m_minus1, m_minus2, norm_sxy_sq, norm_ahat_sq];
    if vals.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("moments and norms must be positive and finite"));
    }
    Ok(())
}

/// `β ≈ γ m₋₂ ‖Σ_XY‖² / (‖â‖² (1 + γ m₋₁ ‖Σ_XY‖²)²)`, clamped to `[0, 1]`.
pub fn gamma_to_beta(
    gamma: f64,
    m_minus1: f64,
    m_minus2: f64,
    norm_sxy_sq: f64,
    norm_ahat_sq: f64,
) -> Result<Conversion> {
    check_spectral_inputs(m_minus1, m_minus2, norm_sxy_sq, norm_ahat_sq)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma = {gamma} outside [0, 1]")));
    }
    let denom_root = 1.0 + gamma * m_minus1 * norm_sxy_sq;
    let raw = gamma * m_minus2 * norm_sxy_sq / (norm_ahat_sq * denom_root * denom_root);
    Ok(clamp_unit(raw))
}

fn clamp_unit(raw: f64) -> Conversion {
    if (0.0..=1.0).contains(&raw) {
        Conversion { value: raw, warning: None }
    } else {
        let warning = Warning::Clamped { raw };
        log::warn!("{warning}");
        Conversion { value: raw.clamp(0.0, 1.0), warning: Some(warning) }
    }
}

/// `γ ≈ (√m₋₂ + √(m₋₂ − 4 m₋₁ β ‖â‖²))² / (4 m₋₁² β ‖â‖² ‖Σ_XY‖²)`.
/// `β = 0` maps to `γ = 0`.
pub fn beta_to_gamma(beta: f64, m_minus1: f64, m_minus2: f64, norm_sxy_sq: f64, norm_ahat_sq: f64) -> Result<f64> {
    beta_to_gamma_branch(beta, m_minus1, m_minus2, norm_sxy_sq, norm_ahat_sq, Branch::Upper)
}

pub fn beta_to_gamma_branch(
    beta: f64,
    m_minus1: f64,
    m_minus2: f64,
    norm_sxy_sq: f64,
    norm_ahat_sq: f64,
    branch: Branch,
) -> Result<f64> {
    check_spectral_inputs(m_minus1, m_minus2, norm_sxy_sq, norm_ahat_sq)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta = {beta} outside [0, 1]")));
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    let theta_sq = beta * norm_ahat_sq;
    let disc = m_minus2 - 4.0 * m_minus1 * theta_sq;
    if disc < 0.0 {
        return Err(Error::OutOfDomain(format!(
            "m_-2 - 4 m_-1 beta |a_hat|^2 = {disc:.6e} < 0; beta is inconsistent with the spectrum"
        )));
    }
    let root = match branch {
        Branch::Upper => m_minus2.sqrt() + disc.sqrt(),
        Branch::Lower => {
            // (√m₋₂ − √disc) rewritten to avoid cancellation
            4.0 * m_minus1 * theta_sq / (m_minus2.sqrt() + disc.sqrt())
        }
    };
    Ok(root * root / (4.0 * m_minus1 * m_minus1 * theta_sq * norm_sxy_sq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(s: &[f64], w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(s.to_vec(), w.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cauchy_transform_examples() {
        let f = cauchy_transform_at(&measure(&[0.0], &[1.0]), 0.0, 1.0).unwrap();
        assert!(close(f.re, 0.0, 1e-15) && close(f.im, -1.0, 1e-15));
        assert!(cauchy_transform_at(&measure(&[1.0], &[1.0]), 2.0, 0.0).is_err());
        let f = cauchy_transform_at(&measure(&[1.0], &[1.0]), 2.0, 1.0).unwrap();
        assert!(close(f.re, 0.5, 1e-15) && close(f.im, -0.5, 1e-15));
        let mu = measure(&[2.0, 0.0], &[0.5, 0.5]);
        let z = Complex64::new(0.0, 1.0);
        let expected = 0.5 / (z - 2.0) + 0.5 / z;
        let f = cauchy_transform_at(&mu, 0.0, 1.0).unwrap();
        assert!((f - expected).norm() < 1e-15);
        assert!(f.im < 0.0);
    }

    #[test]
    fn rank_one_perturbation_of_a_dirac() {
        let r = rank_one_perturb(&measure(&[1.5], &[0.7])).unwrap();
        assert_eq!(r.len(), 1);
        assert!(close(r.support()[0], 2.2, 1e-15));
        assert!(close(r.weights()[0], 0.7, 1e-15));
    }

    #[test]
    fn multiplication_map_reweights() {
        let m = multiplication_map(&measure(&[2.0, 1.0], &[1.0, 1.0])).unwrap();
        assert_eq!(m.support(), &[2.0, 1.0]);
        assert_eq!(m.weights(), &[0.25, 1.0]);
        assert!(matches!(
            multiplication_map(&measure(&[1.0, 0.0], &[1.0, 1.0])),
            Err(Error::SingularSupport)
        ));
    }

    #[test]
    fn confounding_measure_small_cases() {
        let zero = confounding_measure_identity(&SymMatrix::identity(3), &DVector::zeros(3), 0.8).unwrap();
        assert_eq!(zero.mass(), 0.0);

        let mu = confounding_measure_identity(&SymMatrix::identity(2), &DVector::from_vec(vec![1.0, 0.0]), 1.0)
            .unwrap()
            .pruned(0.0);
        assert_eq!(mu.len(), 1);
        assert!(close(mu.support()[0], 2.0, 1e-14));
        assert!(close(mu.weights()[0], 0.25, 1e-14));

        let singular = SymMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            confounding_measure_identity(&singular, &DVector::from_vec(vec![1.0, 0.0]), 1.0),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn asymptotic_beta_examples() {
        let delta = measure(&[1.0], &[1.0]);
        assert_eq!(asymptotic_beta(&delta, 1.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(close(asymptotic_beta(&delta, 1.0, 1.0, 1.0).unwrap(), 0.2, 1e-15));
        assert_eq!(asymptotic_beta(&delta, 0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(asymptotic_beta(&measure(&[1.0], &[0.5]), 1.0, 1.0, 1.0).is_err());
        assert!(asymptotic_beta(&measure(&[0.0], &[1.0]), 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn gamma_to_beta_examples() {
        assert_eq!(gamma_to_beta(0.0, 0.75, 0.625, 2.0, 1.25).unwrap().value, 0.0);
        let b = gamma_to_beta(0.5, 0.75, 0.625, 2.0, 1.25).unwrap();
        assert!(close(b.value, 0.625 / (1.25 * 1.75 * 1.75), 1e-15));
        assert!(b.warning.is_none());
        assert!(matches!(gamma_to_beta(0.5, 0.0, 0.625, 2.0, 1.25), Err(Error::InvalidInput(_))));
        assert!(matches!(gamma_to_beta(0.5, 0.75, -1.0, 2.0, 1.25), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gamma_to_beta_clamps_with_warning() {
        let b = gamma_to_beta(1.0, 0.01, 100.0, 1.0, 0.01).unwrap();
        assert_eq!(b.value, 1.0);
        assert!(matches!(b.warning, Some(Warning::Clamped { raw }) if raw > 1.0));
    }

    #[test]
    fn beta_to_gamma_examples() {
        assert_eq!(beta_to_gamma(0.0, 0.75, 0.625, 2.0, 1.25).unwrap(), 0.0);
        assert!(matches!(beta_to_gamma(0.9, 1.0, 0.1, 2.0, 1.0), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn both_branches_solve_the_quadratic() {
        let (m1, m2, s, a) = (0.8, 0.9, 1.7, 1.3);
        let beta = 0.05;
        for branch in [Branch::Upper, Branch::Lower] {
            let g = beta_to_gamma_branch(beta, m1, m2, s, a, branch).unwrap();
            let alpha_sq = g * s;
            let theta_sq = m2 * alpha_sq / (1.0 + m1 * alpha_sq).powi(2);
            assert!(close(theta_sq, beta * a, 1e-13), "{branch:?}");
        }
        let hi = beta_to_gamma_branch(beta, m1, m2, s, a, Branch::Upper).unwrap();
        let lo = beta_to_gamma_branch(beta, m1, m2, s, a, Branch::Lower).unwrap();
        assert!(close(hi * s * lo * s, 1.0 / (m1 * m1), 1e-12));
    }
}
