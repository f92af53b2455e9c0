use std::f64::consts::PI;

use jointid::density::{normalize_perturbed_t, BaseDensity, DensitySpec};
use jointid::quadrature::gauss_legendre;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

fn rotation(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

fn all_kinds(d: usize) -> Vec<BaseDensity> {
    vec![
        BaseDensity::gaussian(d).unwrap(),
        BaseDensity::student_t(d, 5.0).unwrap(),
        BaseDensity::perturbed_student_t(d, 5.0, 0.1).unwrap(),
    ]
}

/// 2-d tensor Gauss-Legendre over a box, used as an oracle independent of
/// the radial quadrature inside the library.
fn box_mass(density: &BaseDensity, r: f64, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(10);
    let width = 2.0 * r / panels as f64;
    let nodes: Vec<(f64, f64)> = (0..panels)
        .flat_map(|p| {
            let lo = -r + p as f64 * width;
            x.iter()
                .zip(&w)
                .map(move |(xi, wi)| (lo + 0.5 * width * (xi + 1.0), 0.5 * width * wi))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut total = 0.0;
    for &(s, ws) in &nodes {
        for &(t, wt) in &nodes {
            total += ws * wt * density.log_density(&DVector::from_vec(vec![s, t])).unwrap().exp();
        }
    }
    total
}

#[test]
fn student_t_origin_matches_closed_form_and_integrates_to_one() {
    let nu: f64 = 5.0;
    let t = BaseDensity::student_t(2, nu).unwrap();
    let want = ln_gamma((nu + 2.0) / 2.0) - ln_gamma(nu / 2.0) - ((nu - 2.0) * PI).ln();
    let got = t.log_density(&DVector::zeros(2)).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!((box_mass(&t, 60.0, 240) - 1.0).abs() < 1e-4);
}

#[test]
fn perturbed_t_is_normalized() {
    for eps in [0.0, 0.05, 0.1, 0.2] {
        let p = BaseDensity::perturbed_student_t(2, 5.0, eps).unwrap();
        let mass = box_mass(&p, 60.0, 240);
        assert!((mass - 1.0).abs() <= 1e-4, "eps {eps}: {mass}");
    }
}

#[test]
fn perturbed_normalizer_at_zero_is_the_t_constant() {
    // Z_0 = Γ(ν/2) ((ν-2)π)^{d/2} / Γ((ν+d)/2)
    for d in 1..=4 {
        let nu: f64 = 5.0;
        let want = ln_gamma(nu / 2.0) + 0.5 * d as f64 * ((nu - 2.0) * PI).ln() - ln_gamma((nu + d as f64) / 2.0);
        let z = normalize_perturbed_t(nu, 0.0, d).unwrap();
        assert!((z.ln() - want).abs() < 1e-9, "d {d}");
    }
}

#[test]
fn rho_tau_closed_forms() {
    let g = BaseDensity::gaussian(2).unwrap();
    assert_eq!(g.rho_tau(7.3).unwrap(), (-1.0, 0.0));
    let t = BaseDensity::student_t(2, 5.0).unwrap();
    let (rho, tau) = t.rho_tau(1.0).unwrap();
    assert!((rho + 7.0 / 4.0).abs() < 1e-14);
    assert!((tau - 7.0 / 8.0).abs() < 1e-14);
}

#[test]
fn student_t_rho_vanishes_from_below() {
    let t = BaseDensity::student_t(3, 5.0).unwrap();
    let mut prev = t.rho_tau(0.0).unwrap().0;
    for z in [1.0, 10.0, 1e3, 1e6, 1e9] {
        let rho = t.rho_tau(z).unwrap().0;
        assert!(rho < 0.0 && rho > prev);
        prev = rho;
    }
    assert!(prev > -1e-8);
}

#[test]
fn tau_is_twice_the_derivative_of_rho() {
    let h = 1e-5;
    for density in all_kinds(3) {
        for z in [0.3, 1.0, 2.5, 9.0] {
            let rp = density.rho_tau(z + h).unwrap().0;
            let rm = density.rho_tau(z - h).unwrap().0;
            let tau = density.rho_tau(z).unwrap().1;
            let fd = (rp - rm) / (2.0 * h);
            assert!((tau - 2.0 * fd).abs() <= 1e-6 * tau.abs().max(1e-3), "{:?} z {z}", density.kind());
        }
    }
}

#[test]
fn score_is_rho_w_and_hessian_matches_the_radial_form() {
    // ∇ log φ = ρ w, ∇² log φ = ρ I + τ w wᵀ
    let w = DVector::from_vec(vec![0.4, -1.2, 0.7]);
    let z = w.dot(&w);
    for density in all_kinds(3) {
        let (rho, tau) = density.rho_tau(z).unwrap();
        let s = density.score(&w).unwrap();
        assert!((&s.grad - &w * rho).norm() < 1e-12);
        let want = DMatrix::identity(3, 3) * rho + &w * w.transpose() * tau;
        assert!((&s.hess - want).norm() < 1e-12);
    }
}

#[test]
fn gaussian_values() {
    let g = BaseDensity::gaussian(2).unwrap();
    assert!((g.log_density(&DVector::zeros(2)).unwrap() + (2.0 * PI).ln()).abs() < 1e-14);
    let g1 = BaseDensity::gaussian(1).unwrap();
    let want = -2.0 - 0.5 * (2.0 * PI).ln();
    assert!((g1.log_density(&DVector::from_element(1, 2.0)).unwrap() - want).abs() < 1e-14);
}

#[test]
fn sampler_covariance_is_identity() {
    for (spec, tol) in [(DensitySpec::Gaussian, 0.05), (DensitySpec::StudentT { nu: 5.0 }, 0.08)] {
        let density = spec.build(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = density.sample(&mut rng, 100_000);
        let cov = w.transpose() * &w / w.nrows() as f64;
        let err = (cov - DMatrix::identity(2, 2)).norm();
        assert!(err <= tol, "{spec}: {err}");
    }
}

#[test]
fn perturbed_sampler_matches_its_radial_law() {
    // E[wᵀw] under the perturbed density, computed with the box oracle
    let p = BaseDensity::perturbed_student_t(2, 5.0, 0.1).unwrap();
    let (x, wts) = gauss_legendre(10);
    let (r, panels) = (60.0, 240);
    let width = 2.0 * r / panels as f64;
    let mut second = 0.0;
    for a in 0..panels {
        for (xa, wa) in x.iter().zip(&wts) {
            let s = -r + a as f64 * width + 0.5 * width * (xa + 1.0);
            for b in 0..panels {
                for (xb, wb) in x.iter().zip(&wts) {
                    let t = -r + b as f64 * width + 0.5 * width * (xb + 1.0);
                    let dens = p.log_density(&DVector::from_vec(vec![s, t])).unwrap().exp();
                    second += 0.25 * width * width * wa * wb * dens * (s * s + t * t);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = p.sample(&mut rng, 200_000);
    let z: Vec<f64> = w.row_iter().map(|r| r.norm_squared()).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    // heavy tails: variance of z is large, allow a few standard errors
    assert!((mean - second).abs() < 0.05 * second, "{mean} vs {second}");
}

proptest! {
    #[test]
    fn log_density_is_rotation_invariant(theta in 0.0..(2.0 * PI), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let w = DVector::from_vec(vec![x, y]);
        let rw = rotation(theta) * &w;
        for density in all_kinds(2) {
            let a = density.log_density(&w).unwrap();
            let b = density.log_density(&rw).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn weights_downweight_outliers(z1 in 0.0..50.0f64, dz in 0.01..50.0f64) {
        let t = BaseDensity::student_t(2, 5.0).unwrap();
        let (r1, _) = t.rho_tau(z1).unwrap();
        let (r2, _) = t.rho_tau(z1 + dz).unwrap();
        prop_assert!(r2.abs() < r1.abs());
    }
}

#[test]
fn same_seed_same_samples() {
    let t = BaseDensity::perturbed_student_t(3, 5.0, 0.2).unwrap();
    let a = t.sample(&mut ChaCha8Rng::seed_from_u64(9), 500);
    let b = t.sample(&mut ChaCha8Rng::seed_from_u64(9), 500);
    assert_eq!(a, b);
}
