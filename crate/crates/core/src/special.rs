//! Quadrature rules and special functions used by the spectral oracle.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // Tricomi's initial guess for the i-th largest root.
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Points per panel of the composite rule.
pub const PANEL_ORDER: usize = 32;

/// Composite Gauss–Legendre rule on `[lower, upper]` with equal-width panels.
#[derive(Clone, Debug)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(lower: f64, upper: f64, panels: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let width = (upper - lower) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let lo = lower + p as f64 * width;
            let mid = lo + 0.5 * width;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + 0.5 * width * xi);
                weights.push(0.5 * width * wi);
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Exponentially scaled modified Bessel functions `e^{−x} I_k(x)` for `k = 0..=k_max`, `x ≥ 0`.
///
/// Miller's backward recurrence `I_{k−1} = (2k/x) I_k + I_{k+1}`, normalized by the
/// generating-function identity `Σ_{k∈ℤ} I_k(x) = e^x`.
pub fn bessel_i_scaled(k_max: usize, x: f64) -> Vec<f64> {
    assert!(x >= 0.0 && x.is_finite(), "bessel_i_scaled needs finite x >= 0");
    let mut out = vec![0.0; k_max + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = k_max + 30 + (x + 10.0 * x.sqrt()).ceil() as usize;
    let mut above = 0.0;
    let mut current = 1e-300;
    let mut sum = 0.0;
    for k in (1..=start).rev() {
        let below = (2.0 * k as f64 / x) * current + above;
        above = current;
        current = below;
        if k - 1 <= k_max {
            out[k - 1] = current;
        }
        if k - 1 >= 1 {
            sum += 2.0 * current;
        } else {
            sum += current;
        }
        if current > 1e250 {
            above *= 1e-250;
            current *= 1e-250;
            sum *= 1e-250;
            out.iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in [1usize, 2, 5, 16, 32, 64] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn composite_rule_integrates_oscillation() {
        let rule = CompositeRule::new(0.0, 2.0, 64, PANEL_ORDER);
        let got = rule.integrate(|x| (300.0 * x).cos());
        assert_relative_eq!(got, (600.0f64).sin() / 300.0, epsilon = 1e-13);
    }

    #[test]
    fn scaled_bessel_matches_reference_values() {
        // Reference values from an independent special-function library.
        let cases = [
            (0usize, 1.0, 0.4657596075936404),
            (1, 1.0, 0.20791041534970842),
            (0, 100.0, 0.03994437929909668),
            (1, 100.0, 0.039744153025130256),
            (5, 30.0, 0.04792520316872123),
            (16, 141.4213562373095, 0.013551441000501973),
            (3, 0.01, 2.0626167116168738e-08),
            (40, 200.0, 0.0005187173038351751),
            (0, 200.0, 0.02822715994911192),
        ];
        for (k, x, want) in cases {
            let got = bessel_i_scaled(k, x)[k];
            assert_relative_eq!(got, want, max_relative = 1e-13);
        }
    }

    #[test]
    fn scaled_bessel_at_zero() {
        assert_eq!(bessel_i_scaled(3, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normal_cdf_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-10);
    }
}
