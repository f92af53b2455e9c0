use jointid::density::BaseDensity;
use jointid::estimators::{self, FitConfig};
use jointid::linalg::min_eigenvalue;
use jointid::optim::{self, OptimConfig, OptimProblem, OptimStatus};
use jointid::sim::{self, SystemParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn pd_matrix(d: usize, entries: &[f64], diag: &[f64]) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |i, j| entries[i * d + j]);
    let mut s = &b * b.transpose();
    for i in 0..d {
        s[(i, i)] += diag[i];
    }
    (&s + s.transpose()) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn flatten_round_trips(
        d in 1usize..5,
        entries in prop::collection::vec(-2.0..2.0f64, 16),
        diag in prop::collection::vec(0.05..3.0f64, 4),
        a in prop::collection::vec(-3.0..3.0f64, 16),
    ) {
        let sigma = pd_matrix(d, &entries, &diag);
        let a = DMatrix::from_fn(d, d, |i, j| a[i * d + j]);
        let p = SystemParams::new(a, sigma).unwrap();
        let x = optim::flatten(&p).unwrap();
        prop_assert_eq!(x.len(), optim::flat_len(d));
        let q = optim::unflatten(d, &x).unwrap();
        let scale = p.sigma().amax().max(1.0);
        prop_assert!((q.a() - p.a()).amax() <= 1e-12);
        prop_assert!((q.sigma() - p.sigma()).amax() <= 1e-12 * scale);
    }

    #[test]
    fn unflatten_is_always_pd(x in prop::collection::vec(-4.0..4.0f64, 9)) {
        // d = 2: 4 entries of A, 3 of the Cholesky factor
        let v = DVector::from_vec(x[..7].to_vec());
        let p = optim::unflatten(2, &v).unwrap();
        prop_assert!(min_eigenvalue(p.sigma()) > 0.0);
    }
}

#[test]
fn identity_sigma_has_zero_cholesky_block() {
    let p = SystemParams::new(DMatrix::from_element(3, 3, 0.5), DMatrix::identity(3, 3)).unwrap();
    let x = optim::flatten(&p).unwrap();
    assert!(x.rows(9, x.len() - 9).iter().all(|&v| v == 0.0));
}

#[test]
fn quadratic_is_solved_exactly() {
    let c = DVector::from_vec(vec![1.0, -2.0, 3.5, 0.25]);
    let cc = c.clone();
    let problem = OptimProblem::new(
        4,
        move |x: &DVector<f64>| {
            let r = x - &cc;
            (0.5 * r.norm_squared(), r)
        },
        OptimConfig::default(),
    );
    let out = optim::minimize(&problem, &DVector::from_vec(vec![10.0, 4.0, -7.0, 0.0])).unwrap();
    assert_eq!(out.status, OptimStatus::Converged);
    assert!((&out.x_star - &c).amax() < 1e-10);
    assert!(out.iterations <= 5);
}

#[test]
fn rosenbrock_from_the_standard_start() {
    let problem = OptimProblem::new(
        2,
        |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            (f, g)
        },
        OptimConfig::default(),
    );
    let out = optim::minimize(&problem, &DVector::from_vec(vec![-1.2, 1.0])).unwrap();
    assert!((out.x_star[0] - 1.0).abs() < 1e-6 && (out.x_star[1] - 1.0).abs() < 1e-6);
}

#[test]
fn gaussian_likelihood_minimizer_is_ols() {
    let g = BaseDensity::gaussian(2).unwrap();
    let data = sim::simulate_trajectory(&sim::benchmark_2d_system(), &g, &DVector::zeros(2), 300, 4).unwrap();
    let ols = estimators::ols_fit(&data).unwrap();
    let d = 2;
    let problem = OptimProblem::new(
        optim::flat_len(d),
        |x: &DVector<f64>| {
            // trial steps may overflow the log-diagonal; report them as +inf
            match optim::unflatten(d, x).and_then(|p| estimators::mle_loss(&p, &data, &g)) {
                Ok(e) => (e.value, e.grad_flat),
                Err(_) => (f64::INFINITY, DVector::zeros(x.len())),
            }
        },
        FitConfig::default().optim,
    );
    let start = optim::flatten(&SystemParams::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap()).unwrap();
    let out = optim::minimize(&problem, &start).unwrap();
    let p = optim::unflatten(d, &out.x_star).unwrap();
    assert!((p.a() - &ols.a).amax() < 1e-6);
    assert!((p.sigma() - &ols.sigma).amax() < 1e-6);
}
