use jointid::density::BaseDensity;
use jointid::estimators;
use jointid::sim::{self, Layout, SystemParams};
use nalgebra::{DMatrix, DVector};

#[test]
fn zero_noise_rollout_is_power_iteration() {
    let truth = sim::benchmark_2d_system();
    let x0 = DVector::from_vec(vec![1.0, -1.0]);
    let data = sim::rollout(&truth, &x0, &DMatrix::zeros(6, 2), None).unwrap();
    let mut x = x0.clone();
    for i in 0..6 {
        assert_eq!(data.states().row(i).transpose(), x);
        x = truth.a() * x;
        assert_eq!(data.next_states().row(i).transpose(), x);
    }
}

#[test]
fn ols_noise_covariance_converges() {
    let truth = sim::benchmark_2d_system();
    let density = BaseDensity::student_t(2, 5.0).unwrap();
    let err = |n: usize| {
        let mut v: Vec<f64> = (0..21)
            .map(|s| {
                let data = sim::simulate_trajectory(&truth, &density, &DVector::zeros(2), n, 40 + s).unwrap();
                estimators::ols_fit(&data).unwrap().errors(&truth).1
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[10]
    };
    let (small, large) = (err(256), err(16384));
    assert!(large < 0.3 * small, "{small} -> {large}");
    assert!(large < 0.15);
}

#[test]
fn simulation_is_deterministic() {
    let truth = sim::make_tridiagonal_system(4).unwrap();
    let density = BaseDensity::perturbed_student_t(4, 5.0, 0.05).unwrap();
    let x0 = DVector::zeros(4);
    let a = sim::simulate_bursts(&truth, &density, &x0, 4, 64, 17).unwrap();
    let b = sim::simulate_bursts(&truth, &density, &x0, 4, 64, 17).unwrap();
    assert_eq!(a.states(), b.states());
    assert_eq!(a.next_states(), b.next_states());
    assert_eq!(a.layout(), Layout::MultiTrajectory);
    let c = sim::simulate_bursts(&truth, &density, &x0, 4, 64, 18).unwrap();
    assert_ne!(a.next_states(), c.next_states());
}

#[test]
fn single_trajectory_chains() {
    let truth = sim::benchmark_2d_system();
    let density = BaseDensity::gaussian(2).unwrap();
    let data = sim::simulate_trajectory(&truth, &density, &DVector::zeros(2), 50, 1).unwrap();
    assert_eq!(data.len(), 50);
    assert_eq!(data.layout(), Layout::SingleTrajectory);
    for i in 1..50 {
        assert_eq!(data.states().row(i), data.next_states().row(i - 1));
    }
    assert_eq!(data.truth().unwrap(), &truth);
}

#[test]
fn fixed_state_layout() {
    let truth = SystemParams::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
    let x = DVector::from_element(2, 1.0);
    let data = sim::make_fixed_state_dataset(&BaseDensity::gaussian(2).unwrap(), &truth, &x, 10, 3).unwrap();
    assert_eq!(data.layout(), Layout::FixedState);
    assert!(data.states().iter().all(|&v| v == 1.0));
}

#[test]
fn tridiagonal_examples() {
    let two = sim::make_tridiagonal_system(2).unwrap();
    assert_eq!(two.a(), &DMatrix::from_element(2, 2, 1.0));
    assert_eq!(two.sigma(), &DMatrix::identity(2, 2));
    let one = sim::make_tridiagonal_system(1).unwrap();
    assert_eq!(one.a()[(0, 0)], 1.0);
    let four = sim::make_tridiagonal_system(4).unwrap();
    assert_eq!(four.a().row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0, 0.0]);
}
