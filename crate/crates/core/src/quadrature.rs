//! Gauss–Legendre rules and the radial integral used to normalize
//! elliptical densities.

use std::f64::consts::PI;
use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

/// Nodes per panel of the composite radial rule.
const PANEL_NODES: usize = 32;
/// Number of geometrically spaced panels; 16 x 32 = 512 nodes in total.
const PANELS: usize = 16;
pub const RADIAL_CUTOFF: f64 = 1e3;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_NODES))
}

/// Panel edges: 0 followed by `RADIAL_CUTOFF * 2^{k-15}` for k = 0..15.
fn panel_edges() -> Vec<f64> {
    let mut edges = vec![0.0];
    edges.extend((0..PANELS).map(|k| RADIAL_CUTOFF * 2f64.powi(k as i32 - (PANELS as i32 - 1))));
    edges
}

/// Integrates `f` over [0, RADIAL_CUTOFF] with the composite rule.
pub fn integrate_radial_range(f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = panel_rule();
    let edges = panel_edges();
    let mut total = 0.0;
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        total += nodes
            .iter()
            .zip(weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half;
    }
    total
}

/// Surface area of the unit sphere in R^d.
pub fn log_sphere_area(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    std::f64::consts::LN_2 + half * PI.ln() - ln_gamma(half)
}

/// Result of integrating a radial kernel `g(wᵀw)` over R^d.
#[derive(Debug, Clone, Copy)]
pub struct RadialIntegral {
    pub value: f64,
    /// `R^d g(R^2)` times the sphere area at the cutoff, a proxy for the
    /// neglected tail mass.
    pub tail_proxy: f64,
}

/// Integrates `exp(log_kernel(wᵀw))` over R^d in polar coordinates.
pub fn integrate_radial_kernel(dim: usize, log_kernel: impl Fn(f64) -> f64) -> RadialIntegral {
    let area = log_sphere_area(dim).exp();
    let d = dim as f64;
    let value = area
        * integrate_radial_range(|r| {
            if r == 0.0 {
                return 0.0;
            }
            ((d - 1.0) * r.ln() + log_kernel(r * r)).exp()
        });
    let r = RADIAL_CUTOFF;
    let tail_proxy = area * (d * r.ln() + log_kernel(r * r)).exp();
    RadialIntegral { value, tail_proxy }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let sum_w: f64 = w.iter().sum();
        assert!((sum_w - 2.0).abs() < 1e-14);
        // exact through degree 15
        let m14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((m14 - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_kernel_integrates_to_normalizer() {
        for dim in 1..=4 {
            let got = integrate_radial_kernel(dim, |z| -0.5 * z);
            let want = (2.0 * PI).powf(dim as f64 / 2.0);
            assert!((got.value / want - 1.0).abs() < 1e-12, "dim {dim}");
        }
    }

    #[test]
    fn slow_tails_show_up_in_tail_proxy() {
        let heavy = integrate_radial_kernel(2, |z| -1.2 * (1.0 + z).ln());
        assert!(heavy.tail_proxy > 1e-3 * heavy.value);
        let light = integrate_radial_kernel(2, |z| -3.5 * (1.0 + z).ln());
        assert!(light.tail_proxy < 1e-6 * light.value);
    }
}
