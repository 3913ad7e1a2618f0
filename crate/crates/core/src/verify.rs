//! Self-check suite: runs the numerical invariants of every module on
//! seeded random instances and reports each measured quantity against its
//! threshold.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::estimator::{estimate, family_weights, smoothing_matrix, distance, GridConfig};
use crate::rng::{stream_rng, SimRng};
use crate::scm::{ground_truth, regression_vector, true_sigma_xx, true_sigma_xy, ModelParams};
use crate::spectral::{eigendecompose, induced_measure, tracial_measure, DiscreteMeasure, SymMatrix};
use crate::transforms::{
    asymptotic_beta, beta_to_gamma, cauchy_transform, confounding_measure_identity, gamma_to_beta,
    multiplication_map, rank_one_perturb, ComplexPoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteSize {
    Small,
    Full,
}

impl std::str::FromStr for SuiteSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "small" => Ok(SuiteSize::Small),
            "full" => Ok(SuiteSize::Full),
            other => Err(format!("unknown suite size `{other}` (expected small or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub size: SuiteSize,
    pub seed: u64,
    /// Threshold overrides keyed by check name.
    pub thresholds: BTreeMap<String, f64>,
}

impl VerifyConfig {
    pub fn new(size: SuiteSize, seed: u64) -> Self {
        Self { size, seed, thresholds: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub description: &'static str,
    pub measured: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub passed: bool,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let op = match self.comparison {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
        };
        write!(
            f,
            "[{}] {:<28} measured {:.3e} {op} {:.3e}  ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.description
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub size: SuiteSize,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Sizes {
    trials: usize,
    dim: usize,
    orth_draws: usize,
    convergence_seeds: usize,
    continuity_dims: &'static [usize],
    roundtrip_tuples: usize,
    estimator_seeds: usize,
}

impl Sizes {
    fn of(size: SuiteSize) -> Self {
        match size {
            SuiteSize::Small => Sizes {
                trials: 20,
                dim: 10,
                orth_draws: 200,
                convergence_seeds: 100,
                continuity_dims: &[10, 100, 400],
                roundtrip_tuples: 300,
                estimator_seeds: 15,
            },
            SuiteSize::Full => Sizes {
                trials: 50,
                dim: 10,
                orth_draws: 200,
                convergence_seeds: 100,
                continuity_dims: &[10, 100, 1000],
                roundtrip_tuples: 1000,
                estimator_seeds: 40,
            },
        }
    }
}

struct Check {
    name: &'static str,
    description: &'static str,
    comparison: Comparison,
    threshold: f64,
    run: fn(&Sizes, u64) -> Result<f64>,
}

const CHECKS: &[Check] = &[
    Check {
        name: "eigen_reconstruction",
        description: "relative Frobenius residual of sum lambda_j phi_j phi_j^T",
        comparison: Comparison::AtMost,
        threshold: 1e-8,
        run: check_reconstruction,
    },
    Check {
        name: "eigen_orthonormality",
        description: "max |<phi_i, phi_j> - delta_ij|",
        comparison: Comparison::AtMost,
        threshold: 1e-10,
        run: check_orthonormality,
    },
    Check {
        name: "induced_mass",
        description: "relative |mu_{A,psi}(R) - |psi|^2|",
        comparison: Comparison::AtMost,
        threshold: 1e-10,
        run: check_induced_mass,
    },
    Check {
        name: "polynomial_expectation",
        description: "relative gap between E_mu[f] and <psi, f(A) psi> for degree-6 f",
        comparison: Comparison::AtMost,
        threshold: 1e-8,
        run: check_polynomial_expectation,
    },
    Check {
        name: "tracial_inducing_vector",
        description: "atomwise gap between mu_{A,g} and the tracial measure",
        comparison: Comparison::AtMost,
        threshold: 1e-10,
        run: check_tracial_inducing,
    },
    Check {
        name: "interlacing",
        description: "max interlacing violation (and excess interval-count difference)",
        comparison: Comparison::AtMost,
        threshold: 1e-10,
        run: check_interlacing,
    },
    Check {
        name: "asymptotic_orthogonality",
        description: "max over d of d * mean <v, c>^2 (bound 5)",
        comparison: Comparison::AtMost,
        threshold: 5.0,
        run: check_orthogonality,
    },
    Check {
        name: "regression_identity",
        description: "relative gap between Sxx^-1 Sxy and a + c Sxx^-1 b",
        comparison: Comparison::AtMost,
        threshold: 1e-10,
        run: check_regression_identity,
    },
    Check {
        name: "strength_bounds",
        description: "beta, gamma outside [0,1] or eta != |b|^2 (count)",
        comparison: Comparison::AtMost,
        threshold: 0.0,
        run: check_strength_bounds,
    },
    Check {
        name: "gamma_rescaling",
        description: "|gamma(s b, c/s) - gamma(b, c)|",
        comparison: Comparison::AtMost,
        threshold: 1e-12,
        run: check_gamma_rescaling,
    },
    Check {
        name: "family_normalization",
        description: "max |sum w - 1| and causal-floor violation over the grid",
        comparison: Comparison::AtMost,
        threshold: 1e-10,
        run: check_family_normalization,
    },
    Check {
        name: "beta_hat_scale_invariance",
        description: "|beta_hat(s Y) - beta_hat(Y)|",
        comparison: Comparison::AtMost,
        threshold: 0.0,
        run: check_scale_invariance,
    },
    Check {
        name: "rank_one_identity",
        description: "atomwise gap R(mu_{A,psi}) vs mu_{A+psi psi^T, psi}",
        comparison: Comparison::AtMost,
        threshold: 1e-8,
        run: check_rank_one_identity,
    },
    Check {
        name: "rank_one_mass",
        description: "relative mass change under R",
        comparison: Comparison::AtMost,
        threshold: 1e-10,
        run: check_rank_one_mass,
    },
    Check {
        name: "multiplication_identity",
        description: "atomwise gap M(mu_{A,psi}) vs mu_{A, A^-1 psi}",
        comparison: Comparison::AtMost,
        threshold: 1e-8,
        run: check_multiplication_identity,
    },
    Check {
        name: "confounding_identity",
        description: "atomwise gap c^2 M[R[mu_{See,b}]] vs mu_{Sxx, c Sxx^-1 b}",
        comparison: Comparison::AtMost,
        threshold: 1e-8,
        run: check_confounding_identity,
    },
    Check {
        name: "aronszajn_krein",
        description: "|F_R(nu) - F_nu / (1 - F_nu)| at random z in C+",
        comparison: Comparison::AtMost,
        threshold: 1e-8,
        run: check_aronszajn_krein,
    },
    Check {
        name: "weak_continuity",
        description: "non-decreasing steps in the moment error of R(nu_d), M(nu_d)",
        comparison: Comparison::AtMost,
        threshold: 0.0,
        run: check_weak_continuity,
    },
    Check {
        name: "moment_convergence",
        description: "non-decreasing steps in median moment deviation over d = 25, 100, 400",
        comparison: Comparison::AtMost,
        threshold: 0.0,
        run: check_moment_convergence,
    },
    Check {
        name: "asymptotic_beta",
        description: "median |asymptotic beta - true beta| for See = I, d = 50, 200",
        comparison: Comparison::AtMost,
        threshold: 0.05,
        run: check_asymptotic_beta,
    },
    Check {
        name: "beta_gamma_roundtrip",
        description: "max |beta_to_gamma(gamma_to_beta(gamma)) - gamma|",
        comparison: Comparison::AtMost,
        threshold: 1e-8,
        run: check_roundtrip,
    },
    Check {
        name: "population_extremes",
        description: "beta_hat for tracial causal input, and 1 - beta_hat for pure confounding",
        comparison: Comparison::AtMost,
        threshold: 0.1,
        run: check_population_extremes,
    },
];

/// Names of every check, in execution order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if let Some(unknown) = cfg.thresholds.keys().find(|k| !CHECKS.iter().any(|c| c.name == k.as_str())) {
        return Err(crate::Error::invalid(format!("unknown check `{unknown}`")));
    }
    let sizes = Sizes::of(cfg.size);
    let mut checks = Vec::with_capacity(CHECKS.len());
    for (i, check) in CHECKS.iter().enumerate() {
        let measured = (check.run)(&sizes, cfg.seed.wrapping_add(i as u64 * 0x9E37_79B9))?;
        let threshold = cfg.thresholds.get(check.name).copied().unwrap_or(check.threshold);
        let passed = match check.comparison {
            Comparison::AtMost => measured <= threshold,
            Comparison::AtLeast => measured >= threshold,
        };
        checks.push(CheckResult {
            name: check.name,
            description: check.description,
            measured,
            comparison: check.comparison,
            threshold,
            passed,
        });
    }
    Ok(VerifyReport { size: cfg.size, seed: cfg.seed, checks })
}

fn normal_vec(d: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn sphere(d: usize, radius: f64, rng: &mut SimRng) -> DVector<f64> {
    let v = normal_vec(d, rng);
    let n = v.norm();
    v * (radius / n)
}

fn random_symmetric(d: usize, rng: &mut SimRng) -> SymMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::new(g / (d as f64).sqrt()).expect("square")
}

fn random_spd(d: usize, rng: &mut SimRng) -> SymMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::new(&g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2).expect("square")
}

fn max_over_trials(sizes: &Sizes, seed: u64, f: impl Fn(&mut SimRng) -> Result<f64> + Sync) -> Result<f64> {
    let vals: Result<Vec<f64>> = (0..sizes.trials)
        .into_par_iter()
        .map(|t| f(&mut stream_rng(seed, t as u64)))
        .collect();
    Ok(vals?.into_iter().fold(0.0, f64::max))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn non_decreasing_steps(v: &[f64]) -> f64 {
    v.windows(2).filter(|w| w[1] >= w[0]).count() as f64
}

fn measure_gap(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    a.max_atom_discrepancy(b, 1e-12).unwrap_or(f64::INFINITY)
}

fn check_reconstruction(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let m = random_symmetric(s.dim, rng);
        let e = eigendecompose(&m)?;
        Ok((e.reconstruct() - m.as_matrix()).norm() / m.as_matrix().norm())
    })
}

fn check_orthonormality(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let e = eigendecompose(&random_symmetric(s.dim, rng))?;
        let gram = e.eigenvectors().tr_mul(e.eigenvectors());
        Ok((gram - DMatrix::identity(s.dim, s.dim)).amax())
    })
}

fn check_induced_mass(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let e = eigendecompose(&random_symmetric(s.dim, rng))?;
        let psi = normal_vec(s.dim, rng) * 3.0;
        let mu = induced_measure(&e, &psi)?;
        Ok((mu.mass() - psi.norm_squared()).abs() / psi.norm_squared())
    })
}

fn check_polynomial_expectation(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let a = random_symmetric(s.dim, rng);
        let psi = normal_vec(s.dim, rng);
        let coeffs: Vec<f64> = (0..=6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        // Horner in the matrix: f(A) ψ without any eigendecomposition
        let mut acc = psi.clone() * coeffs[6];
        for c in coeffs[..6].iter().rev() {
            acc = a.mul_vec(&acc) + &psi * *c;
        }
        let direct = psi.dot(&acc);
        let mu = induced_measure(&eigendecompose(&a)?, &psi)?;
        let poly = |x: f64| coeffs.iter().rev().fold(0.0, |p, c| p * x + c);
        let abs_poly = |x: f64| coeffs.iter().rev().fold(0.0, |p, c| p * x.abs() + c.abs());
        let scale = mu.expectation(abs_poly).max(f64::MIN_POSITIVE);
        Ok((mu.expectation(poly) - direct).abs() / scale)
    })
}

fn check_tracial_inducing(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let e = eigendecompose(&random_symmetric(s.dim, rng))?;
        let mu = induced_measure(&e, &e.tracial_inducing_vector())?;
        Ok(measure_gap(&mu, &tracial_measure(&e)))
    })
}

fn check_interlacing(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let see = random_spd(s.dim, rng);
        let b = normal_vec(s.dim, rng);
        let sxx = see.rank_one_update(&b, 1.0)?;
        let ve = eigendecompose(&see)?.eigenvalues().clone();
        let vx = eigendecompose(&sxx)?.eigenvalues().clone();
        let tol = 1e-12 * vx[0].abs().max(1.0);
        let mut worst = 0.0_f64;
        for j in 0..s.dim {
            worst = worst.max(ve[j] - vx[j] - tol);
            if j >= 1 {
                worst = worst.max(vx[j] - ve[j - 1] - tol);
            }
        }
        // interval counts: every [lo, hi] with endpoints drawn from the spectra
        let count = |v: &DVector<f64>, lo: f64, hi: f64| v.iter().filter(|&&x| x >= lo && x <= hi).count() as i64;
        let mut excess = 0.0_f64;
        for _ in 0..50 {
            let lo = rng.random_range(0.0..vx[0]);
            let hi = rng.random_range(lo..=vx[0] * 1.1);
            let diff = (count(&ve, lo, hi) - count(&vx, lo, hi)).abs();
            excess = excess.max((diff - 1).max(0) as f64);
        }
        Ok(worst.max(0.0) + excess)
    })
}

fn check_orthogonality(s: &Sizes, seed: u64) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (k, &d) in [50usize, 200, 800].iter().enumerate() {
        let mut rng = stream_rng(seed, k as u64);
        let v = DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let mean = (0..s.orth_draws).map(|_| v.dot(&sphere(d, 1.0, &mut rng)).powi(2)).sum::<f64>()
            / s.orth_draws as f64;
        worst = worst.max(mean * d as f64);
    }
    Ok(worst)
}

fn random_model(d: usize, rng: &mut SimRng) -> Result<ModelParams> {
    let c = rng.random_range(-2.0..2.0);
    ModelParams::new(normal_vec(d, rng), normal_vec(d, rng), c, random_spd(d, rng), 1.0)
}

fn check_regression_identity(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let p = random_model(s.dim, rng)?;
        let sxx = true_sigma_xx(&p);
        let lhs = regression_vector(&sxx, &true_sigma_xy(&p))?;
        let rhs = p.a() + regression_vector(&sxx, p.b())? * p.c();
        Ok((lhs - &rhs).amax() / rhs.amax())
    })
}

fn check_strength_bounds(s: &Sizes, seed: u64) -> Result<f64> {
    let bad: Result<Vec<f64>> = (0..s.trials)
        .into_par_iter()
        .map(|t| {
            let p = random_model(s.dim, &mut stream_rng(seed, t as u64))?;
            let gt = ground_truth(&p)?;
            let ok = (0.0..=1.0).contains(&gt.beta)
                && (0.0..=1.0).contains(&gt.gamma)
                && (gt.eta - p.b().norm_squared()).abs() <= 1e-12 * gt.eta.max(1.0);
            Ok(if ok { 0.0 } else { 1.0 })
        })
        .collect();
    Ok(bad?.iter().sum())
}

fn check_gamma_rescaling(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let p = random_model(s.dim, rng)?;
        let scale = rng.random_range(0.2..5.0);
        let q = ModelParams::new(p.a().clone(), p.b() * scale, p.c() / scale, p.sigma_ee().clone(), 1.0)?;
        // γ depends on Σ_XX, which changes with b; rescale inside the same Σ_XX
        let sxx = true_sigma_xx(&p);
        let gamma = |b: &DVector<f64>, c: f64| {
            let cb = b.norm_squared() * c * c;
            cb / (sxx.mul_vec(q.a()).norm_squared() + cb)
        };
        Ok((gamma(p.b(), p.c()) - gamma(q.b(), q.c())).abs())
    })
}

fn check_family_normalization(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let e = eigendecompose(&random_spd(s.dim, rng))?;
        let ev: Vec<f64> = e.eigenvalues().iter().copied().collect();
        let grid = GridConfig { beta_steps: 11, eta_steps: 11, ..GridConfig::default() };
        let mut worst = 0.0_f64;
        for i in 0..grid.beta_steps {
            for j in 0..grid.eta_steps {
                let beta = grid.beta_at(i);
                let fw = family_weights(&ev, beta, grid.eta_at(j, ev[0]))?;
                worst = worst.max((fw.weights.iter().sum::<f64>() - 1.0).abs());
                let floor = (1.0 - beta) / s.dim as f64 - 1e-12;
                let below = fw.weights.iter().map(|w| floor - w).fold(0.0, f64::max);
                worst = worst.max(below);
            }
        }
        Ok(worst)
    })
}

fn check_scale_invariance(s: &Sizes, seed: u64) -> Result<f64> {
    let grid = GridConfig { beta_steps: 21, eta_steps: 21, ..GridConfig::default() };
    let vals: Result<Vec<f64>> = (0..s.estimator_seeds.min(10))
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let p = random_model(s.dim, &mut rng)?;
            let sxx = true_sigma_xx(&p);
            let sxy = true_sigma_xy(&p);
            let scale = rng.random_range(0.1..10.0);
            let a = estimate(&sxx, &sxy, &grid)?;
            let b = estimate(&sxx, &(sxy * scale), &grid)?;
            Ok((a.beta_hat - b.beta_hat).abs().max((a.eta_hat - b.eta_hat).abs()))
        })
        .collect();
    Ok(vals?.into_iter().fold(0.0, f64::max))
}

fn check_rank_one_identity(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let a = random_symmetric(s.dim, rng);
        let psi = normal_vec(s.dim, rng);
        let lhs = rank_one_perturb(&induced_measure(&eigendecompose(&a)?, &psi)?)?;
        let rhs = induced_measure(&eigendecompose(&a.rank_one_update(&psi, 1.0)?)?, &psi)?;
        Ok(measure_gap(&lhs, &rhs))
    })
}

fn check_rank_one_mass(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let m = s.dim;
        let support: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..2.0)).collect();
        let nu = DiscreteMeasure::new(support, weights)?;
        Ok((rank_one_perturb(&nu)?.mass() - nu.mass()).abs() / nu.mass())
    })
}

fn check_multiplication_identity(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let a = random_spd(s.dim, rng);
        let psi = normal_vec(s.dim, rng);
        let e = eigendecompose(&a)?;
        let lhs = multiplication_map(&induced_measure(&e, &psi)?)?;
        let rhs = induced_measure(&e, &regression_vector(&a, &psi)?)?;
        Ok(measure_gap(&lhs, &rhs))
    })
}

fn check_confounding_identity(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let see = random_spd(s.dim, rng);
        let b = normal_vec(s.dim, rng);
        let c = rng.random_range(-2.0..2.0);
        let lhs = confounding_measure_identity(&see, &b, c)?;
        let sxx = see.rank_one_update(&b, 1.0)?;
        let rhs = induced_measure(&eigendecompose(&sxx)?, &(regression_vector(&sxx, &b)? * c))?;
        Ok(measure_gap(&lhs, &rhs))
    })
}

fn check_aronszajn_krein(s: &Sizes, seed: u64) -> Result<f64> {
    max_over_trials(s, seed, |rng| {
        let m = s.dim;
        let support: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let nu = DiscreteMeasure::new(support, weights)?;
        let r = rank_one_perturb(&nu)?;
        let mut worst = 0.0_f64;
        for _ in 0..20 {
            let z = ComplexPoint::new(rng.random_range(-5.0..5.0), rng.random_range(0.05..3.0))?;
            let f = cauchy_transform(&nu, z);
            worst = worst.max((cauchy_transform(&r, z) - f / (1.0 - f)).norm());
        }
        Ok(worst)
    })
}

const CONTINUITY_CENTERS: [f64; 3] = [1.0, 2.0, 3.5];

/// Tracial measure of `d` points clustered around three centers, spread
/// within `1/d` of them.
pub fn clustered_tracial(d: usize) -> Result<DiscreteMeasure> {
    let support: Vec<f64> = (0..d)
        .map(|i| CONTINUITY_CENTERS[i % 3] + (i as f64 / d as f64) / d as f64)
        .collect();
    DiscreteMeasure::new(support, vec![1.0 / d as f64; d])
}

fn moment_error(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    let mut worst = 0.0_f64;
    for k in 1..=3 {
        worst = worst.max((a.moment(k)? - b.moment(k)?).abs());
    }
    Ok(worst)
}

fn check_weak_continuity(s: &Sizes, _seed: u64) -> Result<f64> {
    let limit = DiscreteMeasure::new(CONTINUITY_CENTERS.to_vec(), vec![1.0 / 3.0; 3])?;
    let r_limit = rank_one_perturb(&limit)?;
    let m_limit = multiplication_map(&limit)?;
    let mut r_err = Vec::new();
    let mut m_err = Vec::new();
    for &d in s.continuity_dims {
        let nu = clustered_tracial(d)?;
        r_err.push(moment_error(&rank_one_perturb(&nu)?, &r_limit)?);
        m_err.push(moment_error(&multiplication_map(&nu)?, &m_limit)?);
    }
    Ok(non_decreasing_steps(&r_err) + non_decreasing_steps(&m_err))
}

const BASE_SPECTRUM: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

/// Diagonal covariance repeating a fixed five-point spectrum.
pub fn replicated_spectrum(d: usize) -> Vec<f64> {
    (0..d).map(|i| BASE_SPECTRUM[i % BASE_SPECTRUM.len()]).collect()
}

fn check_moment_convergence(s: &Sizes, seed: u64) -> Result<f64> {
    let dims = [25usize, 100, 400];
    let mut medians = [[0.0; 3]; 3];
    for (di, &d) in dims.iter().enumerate() {
        let see = SymMatrix::from_diagonal(&replicated_spectrum(d))?;
        let devs: Result<Vec<[f64; 3]>> = (0..s.convergence_seeds)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(seed, (di * 100_000 + t) as u64);
                let r_a: f64 = rng.random_range(0.2..1.0);
                let a = sphere(d, r_a, &mut rng);
                let b = sphere(d, 0.7, &mut rng);
                let e = eigendecompose(&see.rank_one_update(&b, 1.0)?)?;
                let mu = induced_measure(&e, &a)?;
                let tr = tracial_measure(&e);
                let mut out = [0.0; 3];
                for k in 1..=3 {
                    out[k - 1] = (mu.moment(k as i32)? - r_a * r_a * tr.moment(k as i32)?).abs();
                }
                Ok(out)
            })
            .collect();
        let devs = devs?;
        for k in 0..3 {
            medians[k][di] = median(devs.iter().map(|v| v[k]).collect());
        }
    }
    Ok(medians.iter().map(|m| non_decreasing_steps(m)).sum())
}

fn check_asymptotic_beta(s: &Sizes, seed: u64) -> Result<f64> {
    let delta = DiscreteMeasure::dirac(1.0, 1.0)?;
    let mut worst = 0.0_f64;
    for (k, &d) in [50usize, 200].iter().enumerate() {
        let gaps: Result<Vec<f64>> = (0..s.convergence_seeds)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(seed, (k * 100_000 + t) as u64);
                let (c, r_a, r_b): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
                let a = sphere(d, r_a, &mut rng);
                let b = sphere(d, r_b, &mut rng);
                let p = ModelParams::new(a, b, c, SymMatrix::identity(d), 1.0)?;
                Ok((asymptotic_beta(&delta, r_a, r_b, c)? - ground_truth(&p)?.beta).abs())
            })
            .collect();
        worst = worst.max(median(gaps?));
    }
    Ok(worst)
}

/// Random `(γ, m₋₁, m₋₂, ‖Σ_XY‖², ‖â‖²)` on the branch where the closed-form
/// inverse applies (`γ m₋₁ ‖Σ_XY‖² ≥ 1`) and the forward map stays in `[0, 1]`.
pub fn random_upper_branch_tuple(rng: &mut SimRng) -> (f64, f64, f64, f64, f64) {
    loop {
        let m1: f64 = rng.random_range(0.1..3.0);
        let m2 = m1 * m1 * rng.random_range(1.0..4.0);
        let sxy: f64 = rng.random_range(0.1..20.0);
        let ahat: f64 = rng.random_range(0.05..5.0);
        let gamma: f64 = rng.random_range(0.0..=1.0);
        if gamma * m1 * sxy < 1.0 {
            continue;
        }
        let root = 1.0 + gamma * m1 * sxy;
        let beta = gamma * m2 * sxy / (ahat * root * root);
        if beta <= 1.0 {
            return (gamma, m1, m2, sxy, ahat);
        }
    }
}

fn check_roundtrip(s: &Sizes, seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut worst = 0.0_f64;
    for _ in 0..s.roundtrip_tuples {
        let (gamma, m1, m2, sxy, ahat) = random_upper_branch_tuple(&mut rng);
        let beta = gamma_to_beta(gamma, m1, m2, sxy, ahat)?.value;
        worst = worst.max((beta_to_gamma(beta, m1, m2, sxy, ahat)? - gamma).abs());
    }
    Ok(worst)
}

fn check_population_extremes(s: &Sizes, seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, 0);
    let d = s.dim;
    let grid = GridConfig::default();

    let see = random_spd(d, &mut rng);
    let b = normal_vec(d, &mut rng);
    let sxx = see.rank_one_update(&b, 1.0)?;
    let a = eigendecompose(&sxx)?.tracial_inducing_vector();
    let causal = estimate(&sxx, &sxx.mul_vec(&a), &grid)?.beta_hat;

    let b = sphere(d, 10f64.sqrt(), &mut rng);
    let p = ModelParams::new(DVector::zeros(d), b, 1.0, SymMatrix::identity(d), 1.0)?;
    let confounded = estimate(&true_sigma_xx(&p), &true_sigma_xy(&p), &grid)?.beta_hat;

    // the smoothed distance itself must vanish on an exact fit
    let ev: Vec<f64> = eigendecompose(&sxx)?.eigenvalues().iter().copied().collect();
    let k = smoothing_matrix(&ev, grid.sigma_factor)?;
    let uniform = vec![1.0 / d as f64; d];
    let self_gap = distance(&uniform, &family_weights(&ev, 0.0, 0.0)?.weights, &k)?;

    Ok(causal.max(1.0 - confounded).max(self_gap))
}
