use confspec::estimator::{distance, family_weights, observed_weights, smoothing_matrix, GridConfig};
use confspec::rng::stream_rng;
use confspec::scm::{ground_truth, true_sigma_xx, true_sigma_xy, regression_vector, ModelParams};
use confspec::spectral::{eigendecompose, induced_measure, DiscreteMeasure, SymMatrix};
use confspec::transforms::{multiplication_map, rank_one_perturb};
use confspec::estimate;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn symmetric(d: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-3.0..3.0f64, d * d).prop_map(move |v| SymMatrix::new(DMatrix::from_vec(d, d, v)).unwrap())
}

fn spd(d: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-2.0..2.0f64, d * d).prop_map(move |v| {
        let g = DMatrix::from_vec(d, d, v);
        SymMatrix::new(&g * g.transpose() + DMatrix::identity(d, d) * 0.5).unwrap()
    })
}

fn vector(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, d).prop_map(DVector::from_vec)
}

fn descending_spectrum() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1..10.0f64, 2..12).prop_map(|mut v| {
        v.sort_by(|a, b| b.total_cmp(a));
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn induced_mass_is_squared_norm((a, psi) in (2usize..8).prop_flat_map(|d| (symmetric(d), vector(d)))) {
        let mu = induced_measure(&eigendecompose(&a).unwrap(), &psi).unwrap();
        prop_assert!((mu.mass() - psi.norm_squared()).abs() <= 1e-10 * psi.norm_squared().max(1.0));
    }

    #[test]
    fn quadratic_forms_are_measure_expectations(
        (a, psi) in (2usize..7).prop_flat_map(|d| (symmetric(d), vector(d))),
        coeffs in prop::collection::vec(-1.0..1.0f64, 1..6),
    ) {
        // f(A)ψ by repeated multiplication, no eigenvectors involved
        let mut power = psi.clone();
        let mut f_psi = DVector::zeros(psi.len());
        for c in &coeffs {
            f_psi += &power * *c;
            power = a.as_matrix() * power;
        }
        let direct = psi.dot(&f_psi);
        let mu = induced_measure(&eigendecompose(&a).unwrap(), &psi).unwrap();
        let via_measure = mu.expectation(|x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c));
        let scale = mu.expectation(|x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x.abs() + c.abs()));
        prop_assert!((direct - via_measure).abs() <= 1e-8 * scale.max(1.0), "{direct} vs {via_measure}");
    }

    #[test]
    fn rank_one_perturbation_keeps_mass(
        atoms in prop::collection::vec((-5.0..5.0f64, 0.01..3.0f64), 1..15),
    ) {
        let (s, w): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        let nu = DiscreteMeasure::new(s, w).unwrap();
        let r = rank_one_perturb(&nu).unwrap();
        prop_assert!((r.mass() - nu.mass()).abs() <= 1e-10 * nu.mass());
        // the perturbation pushes mass upward: first moment grows by the squared mass
        prop_assert!((r.moment(1).unwrap() - nu.moment(1).unwrap() - nu.mass() * nu.mass()).abs() <= 1e-8 * (1.0 + nu.mass()).powi(2));
    }

    #[test]
    fn multiplication_mass_is_inverse_quadratic_form((a, psi) in (2usize..7).prop_flat_map(|d| (spd(d), vector(d)))) {
        let mu = induced_measure(&eigendecompose(&a).unwrap(), &psi).unwrap();
        let m = multiplication_map(&mu).unwrap();
        let inv_psi = regression_vector(&a, &psi).unwrap();
        prop_assert!((m.mass() - inv_psi.norm_squared()).abs() <= 1e-8 * inv_psi.norm_squared().max(1.0));
    }

    #[test]
    fn family_weights_are_normalized_with_causal_floor(
        ev in descending_spectrum(),
        beta in 0.0..=1.0f64,
        eta_frac in 0.0..=1.0f64,
    ) {
        let d = ev.len() as f64;
        let fw = family_weights(&ev, beta, eta_frac * ev[0]).unwrap();
        prop_assert!((fw.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        for w in &fw.weights {
            prop_assert!(*w >= (1.0 - beta) / d - 1e-12);
        }
    }

    #[test]
    fn distance_is_a_symmetric_seminorm(ev in descending_spectrum(), seed in any::<u64>()) {
        let d = ev.len();
        let mut rng = stream_rng(seed, 0);
        let mut draw = || {
            let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let t: f64 = v.iter().sum();
            v.into_iter().map(|x| x / t).collect::<Vec<f64>>()
        };
        let (u, v, w) = (draw(), draw(), draw());
        let k = smoothing_matrix(&ev, 0.2).unwrap();
        let uv = distance(&u, &v, &k).unwrap();
        prop_assert_eq!(distance(&u, &u, &k).unwrap(), 0.0);
        prop_assert!((uv - distance(&v, &u, &k).unwrap()).abs() <= 1e-12);
        prop_assert!(uv <= distance(&u, &w, &k).unwrap() + distance(&w, &v, &k).unwrap() + 1e-12);
    }

    #[test]
    fn estimate_ignores_the_scale_of_y(seed in any::<u64>(), scale in 0.01..100.0f64) {
        let mut rng = stream_rng(seed, 1);
        let d = 5;
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sxx = SymMatrix::new(&g * g.transpose() + DMatrix::identity(d, d)).unwrap();
        let sxy = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let grid = GridConfig { beta_steps: 26, eta_steps: 26, ..GridConfig::default() };
        let a = estimate(&sxx, &sxy, &grid).unwrap();
        let b = estimate(&sxx, &(&sxy * scale), &grid).unwrap();
        prop_assert_eq!((a.beta_index, a.eta_index), (b.beta_index, b.eta_index));
        let (_, wa) = observed_weights(&sxx, &regression_vector(&sxx, &sxy).unwrap()).unwrap();
        for (x, y) in wa.iter().zip(&b.observed_weights) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn strengths_stay_in_unit_interval(
        (a, b, see) in (2usize..6).prop_flat_map(|d| (vector(d), vector(d), spd(d))),
        c in -3.0..3.0f64,
    ) {
        let p = ModelParams::new(a, b, c, see, 1.0).unwrap();
        let gt = ground_truth(&p).unwrap();
        prop_assert!((0.0..=1.0).contains(&gt.beta) && (0.0..=1.0).contains(&gt.gamma));
        prop_assert!((gt.eta - p.b().norm_squared()).abs() <= 1e-12 * gt.eta.max(1.0));
    }
}

fn sphere(d: usize, radius: f64, rng: &mut impl Rng) -> DVector<f64> {
    let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &v * (radius / v.norm())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// With generic orientation, the observed weights approach the family member
/// at the true parameters. The raw distance grows with `d` because the
/// smoothing kernel is unnormalized, so it is compared per dimension.
#[test]
fn observed_weights_approach_the_true_family_member() {
    let base = [0.5, 1.0, 1.5, 2.0, 2.5];
    let mut per_dim = Vec::new();
    for (k, d) in [20usize, 80, 320].into_iter().enumerate() {
        let spectrum: Vec<f64> = (0..d).map(|i| base[i % 5]).collect();
        let see = SymMatrix::from_diagonal(&spectrum).unwrap();
        let gaps: Vec<f64> = (0..25)
            .map(|s| {
                let mut rng = stream_rng(77, (k * 1000 + s) as u64);
                let (c, r_a, r_b): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
                let p = ModelParams::new(sphere(d, r_a, &mut rng), sphere(d, r_b, &mut rng), c, see.clone(), 1.0).unwrap();
                let gt = ground_truth(&p).unwrap();
                let sxx = true_sigma_xx(&p);
                let a_hat = DVector::from_vec(gt.a_hat_pop.clone());
                let (ev, w) = observed_weights(&sxx, &a_hat).unwrap();
                let fw = family_weights(&ev, gt.beta, gt.eta).unwrap();
                let kern = smoothing_matrix(&ev, 0.2).unwrap();
                distance(&w, &fw.weights, &kern).unwrap() / d as f64
            })
            .collect();
        per_dim.push(median(gaps));
    }
    assert!(per_dim[0] > per_dim[1] && per_dim[1] > per_dim[2], "{per_dim:?}");
}

#[test]
fn population_regression_vector_is_observed_exactly() {
    let mut rng = stream_rng(5, 5);
    let d = 6;
    let p = ModelParams::new(sphere(d, 0.8, &mut rng), sphere(d, 0.6, &mut rng), 0.9, SymMatrix::identity(d), 1.0).unwrap();
    let sxx = true_sigma_xx(&p);
    let from_cov = regression_vector(&sxx, &true_sigma_xy(&p)).unwrap();
    let gt = ground_truth(&p).unwrap();
    for (x, y) in from_cov.iter().zip(&gt.a_hat_pop) {
        assert!((x - y).abs() <= 1e-12);
    }
}
