//! The confounded linear structural model
//!
//! ```text
//! X = b Z + E
//! Y = ⟨a, X⟩ + c Z + F
//! ```
//!
//! with a scalar hidden confounder `Z` of unit variance, noise `E` with
//! covariance `Σ_EE` and `F` with standard deviation `σ_F`. Regressing `Y` on
//! `X` yields `â = a + c Σ_XX⁻¹ b`, where `Σ_XX = Σ_EE + b bᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{eigendecompose, EigenDecomposition, SymMatrix};

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Ground-truth structural parameters.
#[derive(Debug, Clone)]
pub struct ModelParams {
    a: DVector<f64>,
    b: DVector<f64>,
    c: f64,
    sigma_ee: SymMatrix,
    sigma_f: f64,
    /// `L` with `L Lᵀ = Σ_EE`, used to draw `E = L Ẽ`.
    noise_factor: Option<DMatrix<f64>>,
}

impl ModelParams {
    pub fn new(a: DVector<f64>, b: DVector<f64>, c: f64, sigma_ee: SymMatrix, sigma_f: f64) -> Result<Self> {
        let d = sigma_ee.dim();
        if a.len() != d || b.len() != d {
            return Err(Error::invalid(format!(
                "a and b must have length {d}, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        if !(sigma_f >= 0.0) || !sigma_f.is_finite() || !c.is_finite() {
            return Err(Error::invalid("c must be finite and sigma_f finite and nonnegative"));
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("a and b must be finite"));
        }
        let e = eigendecompose(&sigma_ee)?;
        if e.min_eigenvalue() < -1e-10 * e.max_eigenvalue().abs().max(1.0) {
            return Err(Error::invalid(format!(
                "sigma_ee is not positive semi-definite (min eigenvalue {})",
                e.min_eigenvalue()
            )));
        }
        Ok(Self { a, b, c, sigma_ee, sigma_f, noise_factor: None })
    }

    /// Parameters whose noise covariance is `factor · factorᵀ`; samples are
    /// drawn as `E = factor · Ẽ` with standard normal `Ẽ`.
    pub fn with_noise_factor(
        a: DVector<f64>,
        b: DVector<f64>,
        c: f64,
        factor: DMatrix<f64>,
        sigma_f: f64,
    ) -> Result<Self> {
        let sigma_ee = SymMatrix::new(&factor * factor.transpose())?;
        let mut p = Self::new(a, b, c, sigma_ee, sigma_f)?;
        p.noise_factor = Some(factor);
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sigma_ee(&self) -> &SymMatrix {
        &self.sigma_ee
    }

    pub fn sigma_f(&self) -> f64 {
        self.sigma_f
    }

    fn noise_factor(&self) -> Result<DMatrix<f64>> {
        if let Some(f) = &self.noise_factor {
            return Ok(f.clone());
        }
        let e = eigendecompose(&self.sigma_ee)?;
        Ok(e.apply_fn(|l| l.max(0.0).sqrt()))
    }
}

/// Observed samples: rows of `x` are draws of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    z: Option<DVector<f64>>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, None, names)
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DVector<f64>,
        z: Option<DVector<f64>>,
        names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one row and one predictor"));
        }
        if y.len() != x.nrows() || z.as_ref().is_some_and(|z| z.len() != x.nrows()) {
            return Err(Error::invalid("row counts of x, y and z disagree"));
        }
        if names.len() != x.ncols() {
            return Err(Error::invalid("one column name per predictor is required"));
        }
        Ok(Self { x, y, z, names })
    }

    pub fn with_confounder(mut self, z: DVector<f64>) -> Result<Self> {
        if z.len() != self.n() {
            return Err(Error::invalid("confounder length differs from row count"));
        }
        self.z = Some(z);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> Option<&DVector<f64>> {
        self.z.as_ref()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub(crate) fn replace_x(&self, x: DMatrix<f64>) -> Self {
        Self { x, ..self.clone() }
    }

    /// Copy with the response multiplied by `factor`.
    pub fn scale_y(&self, factor: f64) -> Self {
        Self { y: &self.y * factor, ..self.clone() }
    }
}

/// Exact strengths of a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub a_hat_pop: Vec<f64>,
}

fn unit_sphere<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.norm();
        if norm > 0.0 {
            return v * (radius / norm);
        }
    }
}

/// Random model: `Σ_EE = G Gᵀ` with i.i.d. standard normal `G`, `c, r_a, r_b`
/// uniform on `[0, 1)`, `a, b` uniform on spheres of radius `r_a, r_b`, and
/// `σ_F = 1`.
pub fn sample_params<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<ModelParams> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let g = DMatrix::from_row_iterator(d, d, (0..d * d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let c: f64 = rng.random();
    let r_a: f64 = rng.random();
    let r_b: f64 = rng.random();
    let a = unit_sphere(d, r_a, rng);
    let b = unit_sphere(d, r_b, rng);
    ModelParams::with_noise_factor(a, b, c, g, 1.0)
}

/// Draws `n` rows. Per row the draw order is `z`, `f`, then the `d`
/// components of the standardized noise.
pub fn sample_dataset<R: Rng + ?Sized>(p: &ModelParams, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let d = p.dim();
    let factor = p.noise_factor()?;
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    let mut raw = DVector::zeros(d);
    for i in 0..n {
        let zi: f64 = rng.sample(StandardNormal);
        let fi: f64 = rng.sample(StandardNormal);
        for r in raw.iter_mut() {
            *r = rng.sample(StandardNormal);
        }
        let xi = &p.b * zi + &factor * &raw;
        y[i] = p.a.dot(&xi) + p.c * zi + p.sigma_f * fi;
        z[i] = zi;
        x.set_row(i, &xi.transpose());
    }
    Dataset::new(x, y)?.with_confounder(z)
}

/// `Σ_XX = Σ_EE + b bᵀ`
pub fn true_sigma_xx(p: &ModelParams) -> SymMatrix {
    p.sigma_ee
        .rank_one_update(&p.b, 1.0)
        .expect("b has the model dimension")
}

/// `Σ_XY = Σ_XX a + c b`
pub fn true_sigma_xy(p: &ModelParams) -> DVector<f64> {
    true_sigma_xx(p).mul_vec(&p.a) + &p.b * p.c
}

fn check_conditioning(e: &EigenDecomposition) -> Result<()> {
    let max = e.eigenvalues().iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let min = e.eigenvalues().iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));
    if max == 0.0 || !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::SingularCovariance(format!(
            "condition number {:.3e} exceeds {MAX_CONDITION:.0e}",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    Ok(())
}

/// Solves `m x = rhs`, refusing ill-conditioned systems.
pub fn solve_symmetric(m: &SymMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if rhs.len() != m.dim() {
        return Err(Error::invalid("right-hand side length differs from matrix dimension"));
    }
    check_conditioning(&eigendecompose(m)?)?;
    let mat = m.as_matrix().clone();
    if let Some(chol) = mat.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    mat.lu()
        .solve(rhs)
        .ok_or_else(|| Error::SingularCovariance("LU factorization failed".into()))
}

/// `Σ_XX⁻¹ Σ_XY`
pub fn regression_vector(sigma_xx: &SymMatrix, sigma_xy: &DVector<f64>) -> Result<DVector<f64>> {
    solve_symmetric(sigma_xx, sigma_xy)
}

fn ratio(num: f64, other: f64) -> f64 {
    let den = num + other;
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn ground_truth(p: &ModelParams) -> Result<GroundTruth> {
    let sxx = true_sigma_xx(p);
    let confounding = solve_symmetric(&sxx, &p.b)? * p.c;
    let cb_sq = p.b.norm_squared() * p.c * p.c;
    let gamma = ratio(cb_sq, sxx.mul_vec(&p.a).norm_squared());
    let beta = ratio(confounding.norm_squared(), p.a.norm_squared());
    Ok(GroundTruth {
        beta,
        gamma,
        eta: p.b.norm_squared(),
        a_hat_pop: (&p.a + confounding).iter().copied().collect(),
    })
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Sample covariance of `X` and cross-covariance of `X` with `Y`
/// (mean-centered, denominator `n − 1`).
pub fn empirical_covariances(ds: &Dataset) -> Result<(SymMatrix, DVector<f64>)> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    let xc = centered(&ds.x);
    let y_mean = ds.y.mean();
    let yc = ds.y.add_scalar(-y_mean);
    let denom = (n - 1) as f64;
    let sxx = SymMatrix::new(xc.tr_mul(&xc) / denom)?;
    let sxy = xc.tr_mul(&yc) / denom;
    Ok((sxx, sxy))
}

/// Confounding strength computed from data in which the confounder `Z` was
/// recorded: `Z` is standardized, `b` is estimated as `Cov(X, Z)`, and
/// `(a, c)` by regressing `Y` on `(X, Z)` jointly. `None` without `Z`.
pub fn beta_prime(ds: &Dataset) -> Result<Option<f64>> {
    let Some(z) = ds.z.as_ref() else {
        return Ok(None);
    };
    let n = ds.n();
    if n < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    let d = ds.d();
    let zc = z.add_scalar(-z.mean());
    let sd = (zc.norm_squared() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::ConstantColumn { column: "confounder".into() });
    }
    let mut joint = DMatrix::zeros(n, d + 1);
    joint.view_mut((0, 0), (n, d)).copy_from(&ds.x);
    joint.set_column(d, &(zc / sd));
    let joint_ds = Dataset::new(joint, ds.y.clone())?;
    let (s_joint, s_joint_y) = empirical_covariances(&joint_ds)?;
    let coef = solve_symmetric(&s_joint, &s_joint_y)?;
    let a = coef.rows(0, d).into_owned();
    let c = coef[d];
    let full = s_joint.as_matrix();
    let sxx = SymMatrix::new(full.view((0, 0), (d, d)).into_owned())?;
    let b = full.view((0, d), (d, 1)).column(0).into_owned();
    let confounding = solve_symmetric(&sxx, &b)? * c;
    Ok(Some(ratio(confounding.norm_squared(), a.norm_squared())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::root_rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn two_dim_model() -> ModelParams {
        ModelParams::new(v(&[0.0, 1.0]), v(&[1.0, 0.0]), 1.0, SymMatrix::identity(2), 1.0).unwrap()
    }

    #[test]
    fn sampling_params_is_deterministic() {
        let p1 = sample_params(3, &mut root_rng(11)).unwrap();
        let p2 = sample_params(3, &mut root_rng(11)).unwrap();
        assert_eq!(p1.a(), p2.a());
        assert_eq!(p1.b(), p2.b());
        assert_eq!(p1.c(), p2.c());
        assert_eq!(p1.sigma_ee(), p2.sigma_ee());
        assert_eq!(p1.sigma_f(), 1.0);
        assert!(sample_params(0, &mut root_rng(1)).is_err());
    }

    #[test]
    fn sampling_data_is_deterministic() {
        let p = sample_params(5, &mut root_rng(3)).unwrap();
        let d1 = sample_dataset(&p, 100, &mut root_rng(4)).unwrap();
        let d2 = sample_dataset(&p, 100, &mut root_rng(4)).unwrap();
        assert_eq!(d1, d2);
        assert!(sample_dataset(&p, 0, &mut root_rng(4)).is_err());
    }

    #[test]
    fn purely_anticausal_limit_gives_y_equal_z() {
        let p = ModelParams::new(v(&[0.0, 0.0, 0.0]), v(&[0.3, 0.1, 0.2]), 1.0, SymMatrix::identity(3), 0.0)
            .unwrap();
        let ds = sample_dataset(&p, 500, &mut root_rng(9)).unwrap();
        assert_eq!(ds.y(), ds.z().unwrap());
    }

    #[test]
    fn disconnected_confounder_is_uncorrelated() {
        let p = ModelParams::new(v(&[0.5, 0.5]), v(&[0.0, 0.0]), 0.0, SymMatrix::identity(2), 1.0).unwrap();
        let ds = sample_dataset(&p, 10_000, &mut root_rng(5)).unwrap();
        let z = ds.z().unwrap();
        for j in 0..2 {
            let x = ds.x().column(j).into_owned();
            let xc = x.add_scalar(-x.mean());
            let zc = z.add_scalar(-z.mean());
            let corr = xc.dot(&zc) / (xc.norm() * zc.norm());
            assert!(corr.abs() <= 0.05, "corr {corr}");
        }
    }

    #[test]
    fn true_covariance_examples() {
        let p = two_dim_model();
        let s = true_sigma_xx(&p);
        assert_eq!(s.as_matrix(), &DMatrix::from_diagonal(&v(&[2.0, 1.0])));
        let p0 = ModelParams::new(v(&[1.0, 0.0]), v(&[0.0, 0.0]), 1.0, SymMatrix::identity(2), 1.0).unwrap();
        assert_eq!(true_sigma_xx(&p0), SymMatrix::identity(2));
    }

    #[test]
    fn ground_truth_two_dimensional_case() {
        let gt = ground_truth(&two_dim_model()).unwrap();
        assert!((gt.beta - 0.2).abs() < 1e-15);
        assert!((gt.gamma - 0.5).abs() < 1e-15);
        assert_eq!(gt.eta, 1.0);
        assert!((gt.a_hat_pop[0] - 0.5).abs() < 1e-15 && (gt.a_hat_pop[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ground_truth_extremes() {
        let causal = ModelParams::new(v(&[0.3, 0.4]), v(&[1.0, 0.5]), 0.0, SymMatrix::identity(2), 1.0).unwrap();
        let gt = ground_truth(&causal).unwrap();
        assert_eq!((gt.beta, gt.gamma), (0.0, 0.0));
        let confounded =
            ModelParams::new(v(&[0.0, 0.0]), v(&[1.0, 0.5]), 0.7, SymMatrix::identity(2), 1.0).unwrap();
        let gt = ground_truth(&confounded).unwrap();
        assert_eq!((gt.beta, gt.gamma), (1.0, 1.0));
        let nothing = ModelParams::new(v(&[0.0, 0.0]), v(&[0.0, 0.0]), 0.0, SymMatrix::identity(2), 1.0).unwrap();
        let gt = ground_truth(&nothing).unwrap();
        assert_eq!((gt.beta, gt.gamma), (0.0, 0.0));
    }

    #[test]
    fn singular_covariance_is_reported() {
        let sing = SymMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let p = ModelParams::new(v(&[1.0, 1.0]), v(&[1.0, 0.0]), 1.0, sing, 1.0).unwrap();
        assert!(matches!(ground_truth(&p), Err(Error::SingularCovariance(_))));
    }

    #[test]
    fn regression_vector_examples() {
        let one = SymMatrix::from_diagonal(&[2.0]).unwrap();
        assert!((regression_vector(&one, &v(&[4.0])).unwrap()[0] - 2.0).abs() < 1e-14);

        let p = two_dim_model();
        let r = regression_vector(&true_sigma_xx(&p), &v(&[1.0, 1.0])).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
        assert_eq!(true_sigma_xy(&p), v(&[1.0, 1.0]));

        let ill = SymMatrix::from_diagonal(&[1.0, 1e-13]).unwrap();
        assert!(matches!(regression_vector(&ill, &v(&[1.0, 1.0])), Err(Error::SingularCovariance(_))));
    }

    #[test]
    fn purely_causal_population_regression_recovers_a() {
        let mut rng = root_rng(21);
        let p = sample_params(6, &mut rng).unwrap();
        let causal = ModelParams::new(p.a().clone(), p.b().clone(), 0.0, p.sigma_ee().clone(), 1.0).unwrap();
        let r = regression_vector(&true_sigma_xx(&causal), &true_sigma_xy(&causal)).unwrap();
        assert!((r - p.a()).amax() <= 1e-10 * p.a().amax());
    }

    #[test]
    fn empirical_covariance_by_hand() {
        let ds = Dataset::new(DMatrix::from_column_slice(2, 1, &[0.0, 2.0]), v(&[0.0, 2.0])).unwrap();
        let (sxx, sxy) = empirical_covariances(&ds).unwrap();
        assert_eq!(sxx.get(0, 0), 2.0);
        assert_eq!(sxy[0], 2.0);

        let ds = Dataset::new(DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 4.0, 5.0]), v(&[1.0, 2.0, 3.0]))
            .unwrap();
        let (sxx, _) = empirical_covariances(&ds).unwrap();
        assert_eq!(sxx.get(1, 1), 0.0);
        assert_eq!(sxx.get(0, 1), 0.0);

        let one = Dataset::new(DMatrix::from_column_slice(1, 1, &[1.0]), v(&[1.0])).unwrap();
        assert!(matches!(empirical_covariances(&one), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn beta_prime_tracks_truth_with_many_samples() {
        let p = ModelParams::new(
            v(&[0.3, -0.2, 0.1]),
            v(&[0.8, 0.4, -0.3]),
            0.9,
            SymMatrix::from_diagonal(&[1.0, 2.0, 0.5]).unwrap(),
            1.0,
        )
        .unwrap();
        let ds = sample_dataset(&p, 200_000, &mut root_rng(77)).unwrap();
        let bp = beta_prime(&ds).unwrap().unwrap();
        let gt = ground_truth(&p).unwrap();
        assert!((bp - gt.beta).abs() < 0.03, "beta' {bp} vs beta {}", gt.beta);
        let no_z = Dataset::new(ds.x().clone(), ds.y().clone()).unwrap();
        assert_eq!(beta_prime(&no_z).unwrap(), None);
    }
}
