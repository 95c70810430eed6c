//! Fourier-mode oracle for ensemble statistics of one-degree-of-freedom maps.
//!
//! With `G(I, θ) = Σ_k Ĝ_k(I) e^{ikθ}` and `ρ₀(I, θ) = Σ_k ρ̂₀,k(I) e^{ikθ}`,
//!
//! ```text
//! ⟨G⟩_j = 2π ∫ Σ_k Ĝ_k(I) ρ̂₀,−k(I) e^{ikjω(I)} a_j^{(k)} dI
//! ```
//!
//! where `a_j^{(k)}` is the modal damping of the perturbation (`1` without noise).
//! The `I`-integral uses a composite Gauss–Legendre rule on `[0, I_max]`, the
//! angular coefficients come from an FFT of `G(I, ·)` at each node.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::dynamics::{FnFactor, ModalFactor, NoiseProcess, PerturbationModel};
use crate::error::{usage, Error, Result};
use crate::phase::{rotation, FrequencyModel, Observable};
use crate::sampling::{gaussian_fourier_coeffs, rho_fourier_coeffs, InitialDensity};
use crate::special::{CompositeRule, PANEL_ORDER};

/// Default truncation order.
pub const DEFAULT_K_MAX: usize = 16;
/// Default number of `I` nodes for short horizons.
pub const DEFAULT_I_NODES: usize = 400;
/// Tail-to-head ratio above which a table carries a truncation warning.
pub const TRUNCATION_WARNING_RATIO: f64 = 1e-3;
/// Phase swept per quadrature panel when sizing the rule for a horizon.
const PHASE_PER_PANEL: f64 = 12.0;
/// Relative size below which a mode of `G` counts as absent.
const ACTIVE_MODE_CUTOFF: f64 = 1e-15;
const MIN_ANGLE_POINTS: usize = 256;

/// Coefficients `Ĝ_k(I)`, `ρ̂₀,k(I)` and `ω(I)` on an `I`-quadrature grid.
///
/// `Ĝ` is stored for `|k| ≤ k_max`, `ρ̂₀` for `|k| ≤ 2·k_max` so that the
/// covariance double sum can reach `ρ̂₀,−(m+n)`.
#[derive(Clone, Debug)]
pub struct SpectralTable {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    k_max: usize,
    g_hat: Vec<Vec<Complex64>>,
    rho_hat: Vec<Vec<Complex64>>,
    omega: Vec<f64>,
    active: Vec<i64>,
    /// `2π·w·Ĝ_k·ρ̂₀,−k` per active mode.
    modal_weights: Vec<Vec<Complex64>>,
    tail_estimate: f64,
    head_estimate: f64,
}

/// Number of `I` nodes that keeps `e^{ikjω(I)}` resolved up to step `j_max`.
///
/// Never fewer than [`DEFAULT_I_NODES`]; the result is a whole number of panels.
pub fn nodes_for_horizon(model: &FrequencyModel, action_max: f64, k_max: usize, j_max: u64) -> Result<usize> {
    let grid = 1024;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..=grid {
        let w = model.frequency_1d(action_max * i as f64 / grid as f64)?;
        lo = lo.min(w);
        hi = hi.max(w);
    }
    let sweep = k_max as f64 * j_max as f64 * (hi - lo);
    let panels = ((sweep / PHASE_PER_PANEL).ceil() as usize).max(DEFAULT_I_NODES.div_ceil(PANEL_ORDER));
    Ok(panels * PANEL_ORDER)
}

/// Tabulate the spectral data on `[0, action_max]`.
///
/// `i_nodes` is rounded up to a whole number of Gauss–Legendre panels.
pub fn build_spectral_table(
    observable: &Observable,
    rho: &InitialDensity,
    model: &FrequencyModel,
    k_max: usize,
    i_nodes: usize,
    action_max: f64,
) -> Result<SpectralTable> {
    if k_max < 1 {
        return usage("spectral table needs k_max >= 1");
    }
    if i_nodes < 8 {
        return usage(format!("spectral table needs at least 8 I nodes, got {i_nodes}"));
    }
    if model.dim() != 1 {
        return Err(Error::Unsupported("the spectral oracle covers one degree of freedom".into()));
    }
    if !(action_max > 0.0) || !action_max.is_finite() {
        return usage(format!("I_max must be positive, got {action_max}"));
    }
    let rule = CompositeRule::new(0.0, action_max, i_nodes.div_ceil(PANEL_ORDER), PANEL_ORDER);
    let k = k_max as i64;
    let g_points = (4 * k_max + 16).next_power_of_two().max(MIN_ANGLE_POINTS);
    let rho_points = (8 * k_max + 16).next_power_of_two().max(4 * MIN_ANGLE_POINTS);

    struct Node {
        g: Vec<Complex64>,
        rho: Vec<Complex64>,
        omega: f64,
    }
    let fft = FftPlanner::new().plan_fft_forward(g_points);
    let per_node: Vec<Node> = rule
        .nodes
        .par_iter()
        .map(|&action| -> Result<Node> {
            let mut buf: Vec<Complex64> = (0..g_points)
                .map(|n| observable.eval(action, TAU * n as f64 / g_points as f64))
                .collect();
            fft.process(&mut buf);
            let g = (-k..=k)
                .map(|m| buf[m.rem_euclid(g_points as i64) as usize] / g_points as f64)
                .collect();
            let rho = match rho {
                InitialDensity::GaussianPhaseSpace { q0, p0, eps0 } => {
                    gaussian_fourier_coeffs(*q0, *p0, *eps0, action, 2 * k)
                }
                InitialDensity::Product(law) => {
                    let mut v = vec![Complex64::new(0.0, 0.0); 4 * k_max + 1];
                    v[2 * k_max] = Complex64::new(law.pdf(action) / TAU, 0.0);
                    v
                }
                InitialDensity::Custom(_) => rho_fourier_coeffs(rho, action, 2 * k, rho_points)?,
            };
            Ok(Node {
                g,
                rho,
                omega: model.frequency_1d(action)?,
            })
        })
        .collect::<Result<_>>()?;

    let transpose = |width: usize, pick: &dyn Fn(&Node) -> &Vec<Complex64>| -> Vec<Vec<Complex64>> {
        (0..width)
            .map(|slot| per_node.iter().map(|n| pick(n)[slot]).collect())
            .collect()
    };
    let g_hat = transpose(2 * k_max + 1, &|n| &n.g);
    let rho_hat = transpose(4 * k_max + 1, &|n| &n.rho);
    let omega = per_node.iter().map(|n| n.omega).collect();

    let dominant = g_hat
        .iter()
        .flat_map(|row| row.iter().map(|v| v.norm()))
        .fold(0.0, f64::max);
    let active: Vec<i64> = (-k..=k)
        .filter(|&m| {
            let peak = g_hat[(m + k) as usize].iter().map(|v| v.norm()).fold(0.0, f64::max);
            peak > ACTIVE_MODE_CUTOFF * dominant
        })
        .collect();

    let mut table = SpectralTable {
        nodes: rule.nodes,
        weights: rule.weights,
        k_max,
        g_hat,
        rho_hat,
        omega,
        active: Vec::new(),
        modal_weights: Vec::new(),
        tail_estimate: 0.0,
        head_estimate: 0.0,
    };
    table.modal_weights = active.iter().map(|&m| table.mean_weights(m)).collect();
    table.active = active;
    table.head_estimate = (-k..=k)
        .map(|m| table.mean_weights(m).iter().map(|v| v.norm()).sum::<f64>())
        .sum();
    table.tail_estimate = [-k, k]
        .iter()
        .map(|&m| table.mean_weights(m).iter().map(|v| v.norm()).sum::<f64>())
        .sum();
    Ok(table)
}

/// A table whose `I` rule resolves every active mode of `G` up to step `j_max`.
///
/// A first table with `min_nodes` nodes finds the active modes; the table is
/// rebuilt on a finer rule when the horizon needs it. `mode_factor` scales the
/// highest active mode, e.g. `2` for covariances where `m + n` can double it.
pub fn build_table_for_horizon(
    observable: &Observable,
    rho: &InitialDensity,
    model: &FrequencyModel,
    k_max: usize,
    min_nodes: usize,
    action_max: f64,
    j_max: u64,
    mode_factor: usize,
) -> Result<SpectralTable> {
    let coarse = build_spectral_table(observable, rho, model, k_max, min_nodes, action_max)?;
    let top = coarse.active.iter().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
    let needed = nodes_for_horizon(model, action_max, top * mode_factor.max(1), j_max)?;
    if needed <= coarse.nodes.len() {
        Ok(coarse)
    } else {
        build_spectral_table(observable, rho, model, k_max, needed, action_max)
    }
}

impl SpectralTable {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// `Ĝ_k` at every node; `|k| ≤ k_max`.
    pub fn g_hat(&self, k: i64) -> &[Complex64] {
        &self.g_hat[(k + self.k_max as i64) as usize]
    }

    /// `ρ̂₀,k` at every node; `|k| ≤ 2·k_max`.
    pub fn rho_hat(&self, k: i64) -> &[Complex64] {
        &self.rho_hat[(k + 2 * self.k_max as i64) as usize]
    }

    /// Modes of `G` that are numerically present.
    pub fn active_modes(&self) -> &[i64] {
        &self.active
    }

    /// `2π∫(|Ĝ_{k_max}ρ̂₀,−k_max| + |Ĝ_{−k_max}ρ̂₀,k_max|) dI`, the size of the
    /// last retained modes.
    pub fn tail_estimate(&self) -> f64 {
        self.tail_estimate
    }

    /// `2π∫Σ_k |Ĝ_kρ̂₀,−k| dI`.
    pub fn head_estimate(&self) -> f64 {
        self.head_estimate
    }

    pub fn tail_ratio(&self) -> f64 {
        if self.head_estimate > 0.0 {
            self.tail_estimate / self.head_estimate
        } else {
            0.0
        }
    }

    pub fn truncation_warning(&self) -> bool {
        self.tail_ratio() > TRUNCATION_WARNING_RATIO
    }

    /// `2π·w·Ĝ_k·ρ̂₀,−k` per node.
    fn mean_weights(&self, k: i64) -> Vec<Complex64> {
        self.mean_weights_shifted(k, 0)
    }

    /// `2π·w·Ĝ_m·Ĝ_n·ρ̂₀,−(m+n)` per node.
    fn pair_weights(&self, m: i64, n: i64) -> Vec<Complex64> {
        let gn = self.g_hat(n);
        self.mean_weights_shifted(m, n)
            .into_iter()
            .zip(gn)
            .map(|(v, &g)| v * g)
            .collect()
    }

    /// `2π·w·Ĝ_m·ρ̂₀,−(m+n)` per node.
    fn mean_weights_shifted(&self, m: i64, n: i64) -> Vec<Complex64> {
        let g = self.g_hat(m);
        let rho = self.rho_hat(-(m + n));
        self.weights
            .iter()
            .zip(g)
            .zip(rho)
            .map(|((&w, &gm), &r)| TAU * w * gm * r)
            .collect()
    }

    /// Contribution of mode `k` to `⟨G⟩_j`; zero for modes absent from `G`.
    pub fn modal_mean(&self, k: i64, j: u64, factor: &dyn ModalFactor) -> Result<Complex64> {
        match self.active.iter().position(|&m| m == k) {
            Some(slot) => self.mode_sum(slot, j, factor),
            None => Ok(Complex64::new(0.0, 0.0)),
        }
    }

    fn mode_sum(&self, slot: usize, j: u64, factor: &dyn ModalFactor) -> Result<Complex64> {
        let k = self.active[slot];
        let w = &self.modal_weights[slot];
        if factor.depends_on_frequency() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (wi, &om) in w.iter().zip(&self.omega) {
                let a = factor.factor(k, j, om)?;
                acc += wi * Complex64::cis(rotation(j, k as f64 * om)) * a;
            }
            Ok(acc)
        } else {
            let a = factor.factor(k, j, f64::NAN)?;
            if a == Complex64::new(0.0, 0.0) {
                return Ok(a);
            }
            let acc: Complex64 = if k == 0 {
                w.iter().sum()
            } else {
                w.iter()
                    .zip(&self.omega)
                    .map(|(wi, &om)| wi * Complex64::cis(rotation(j, k as f64 * om)))
                    .sum()
            };
            Ok(a * acc)
        }
    }

    fn mean_with(&self, j: u64, factor: &dyn ModalFactor) -> Result<Complex64> {
        let mut total = Complex64::new(0.0, 0.0);
        for slot in 0..self.active.len() {
            total += self.mode_sum(slot, j, factor)?;
        }
        Ok(total)
    }
}

struct Undamped;

impl ModalFactor for Undamped {
    fn factor(&self, _k: i64, _j: u64, _omega: f64) -> Result<Complex64> {
        Ok(Complex64::new(1.0, 0.0))
    }
}

/// `⟨G⟩_j` for the deterministic map.
pub fn oracle_mean_deterministic(table: &SpectralTable, j: u64) -> Complex64 {
    table.mean_with(j, &Undamped).expect("undamped factor cannot fail")
}

/// `⟨G⟩_j` for the Brownian map with intensity `c ≥ 0`.
pub fn oracle_mean_brownian(table: &SpectralTable, j: u64, c: f64) -> Result<Complex64> {
    if !(c >= 0.0) || !c.is_finite() {
        return usage(format!("noise intensity must be >= 0, got {c}"));
    }
    let damping = FnFactor(move |k: i64, j: u64| -> Result<Complex64> {
        let t = c * k as f64;
        Ok(Complex64::new((-0.5 * t * t * j as f64).exp(), 0.0))
    });
    table.mean_with(j, &damping)
}

/// `⟨G⟩_j` with mode `k` damped by `a_j^{(k)}`.
pub fn oracle_mean_general(table: &SpectralTable, j: u64, char_seq: &dyn ModalFactor) -> Result<Complex64> {
    table.mean_with(j, char_seq)
}

/// `⟨G⟩_j` for `j = 0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSeries {
    pub values: Vec<Complex64>,
    pub truncation_error_estimate: f64,
}

impl OracleSeries {
    /// Horizon `N`.
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }
}

/// The full series `⟨G⟩_0, …, ⟨G⟩_n`, each entry evaluated independently.
pub fn oracle_series(table: &SpectralTable, n: u64, char_seq: &dyn ModalFactor) -> Result<OracleSeries> {
    let steps: Vec<u64> = (0..=n).collect();
    Ok(OracleSeries {
        values: oracle_values(table, &steps, char_seq)?,
        truncation_error_estimate: table.tail_estimate(),
    })
}

/// `⟨G⟩_j` at the listed steps.
pub fn oracle_values(table: &SpectralTable, steps: &[u64], char_seq: &dyn ModalFactor) -> Result<Vec<Complex64>> {
    steps.par_iter().map(|&j| table.mean_with(j, char_seq)).collect()
}

/// `V_N = (1/N)Σ_{j=1}^{N} v_j` over a series that starts at `j = 0`.
pub fn cesaro_average(values: &[Complex64], n: usize) -> Result<Complex64> {
    if n < 1 {
        return usage("Cesàro average needs N >= 1");
    }
    if n >= values.len() {
        return usage(format!(
            "Cesàro average to N = {n} needs {} entries, got {}",
            n + 1,
            values.len()
        ));
    }
    Ok(values[1..=n].iter().sum::<Complex64>() / n as f64)
}

/// `V_1, …, V_N` for `N = len − 1`, as running means in index order.
pub fn cesaro_series(values: &[Complex64]) -> Vec<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    values
        .iter()
        .enumerate()
        .skip(1)
        .map(|(n, v)| {
            acc += v;
            acc / n as f64
        })
        .collect()
}

/// `⟨Ḡ⟩₀ = 2π∫Ĝ_0ρ̂₀,0 dI`, the Cesàro limit under nonresonance.
pub fn limit_value(table: &SpectralTable) -> Complex64 {
    table.mean_weights(0).iter().sum()
}

fn covariance_supported(noise: &PerturbationModel) -> Result<()> {
    match noise.process() {
        NoiseProcess::None | NoiseProcess::Brownian | NoiseProcess::Iid(_) | NoiseProcess::Resonant(_) => Ok(()),
        _ => Err(Error::Unsupported(
            "oracle covariance needs independent increments; use the Monte Carlo estimator".into(),
        )),
    }
}

/// Precomputed pair weights for `E[G(step j)·G(step j+h)]`.
struct PairSum<'a> {
    table: &'a SpectralTable,
    pairs: Vec<(i64, i64, Vec<Complex64>)>,
}

impl<'a> PairSum<'a> {
    fn new(table: &'a SpectralTable) -> Self {
        let mut pairs = Vec::new();
        for &m in &table.active {
            for &n in &table.active {
                pairs.push((m, n, table.pair_weights(m, n)));
            }
        }
        Self { table, pairs }
    }

    /// `Σ_{m,n} 2π∫Ĝ_mĜ_nρ̂₀,−(m+n) e^{i(m+n)jω + inhω} a_j^{(m+n)} a_h^{(n)} dI`.
    ///
    /// The factorization of the noise term holds for processes whose increments
    /// are independent and stationary, and for deterministic linear drifts.
    fn second_moment(&self, j: u64, h: u64, noise: &PerturbationModel) -> Result<Complex64> {
        let per_node = noise.depends_on_frequency();
        let mut total = Complex64::new(0.0, 0.0);
        for (m, n, w) in &self.pairs {
            let s = m + n;
            let mut acc = Complex64::new(0.0, 0.0);
            if per_node {
                for (wi, &om) in w.iter().zip(&self.table.omega) {
                    let a = noise.factor(s, j, om)? * noise.factor(*n, h, om)?;
                    let phase = rotation(j, s as f64 * om) + rotation(h, *n as f64 * om);
                    acc += wi * Complex64::cis(phase) * a;
                }
            } else {
                let a = noise.factor(s, j, f64::NAN)? * noise.factor(*n, h, f64::NAN)?;
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (wi, &om) in w.iter().zip(&self.table.omega) {
                    let phase = rotation(j, s as f64 * om) + rotation(h, *n as f64 * om);
                    acc += wi * Complex64::cis(phase);
                }
                acc *= a;
            }
            total += acc;
        }
        Ok(total)
    }

    fn covariance(&self, j: u64, h: u64, noise: &PerturbationModel) -> Result<Complex64> {
        let second = self.second_moment(j, h, noise)?;
        let mean_j = self.table.mean_with(j, noise)?;
        let mean_jh = self.table.mean_with(j + h, noise)?;
        Ok(second - mean_j * mean_jh)
    }
}

/// `E[G_j·G_{j+h}] − E[G_j]·E[G_{j+h}]` with `G_j = G(step j)`, no conjugation.
pub fn oracle_covariance(table: &SpectralTable, j: u64, h: u64, noise: &PerturbationModel) -> Result<Complex64> {
    covariance_supported(noise)?;
    PairSum::new(table).covariance(j, h, noise)
}

/// `A_{N,h} = (1/(N−h)) Σ_{j=1}^{N−h} Cov(G_j, G_{j+h})` for each listed lag.
pub fn oracle_lag_covariances(
    table: &SpectralTable,
    n: u64,
    lags: &[u64],
    noise: &PerturbationModel,
) -> Result<Vec<Complex64>> {
    covariance_supported(noise)?;
    if let Some(&bad) = lags.iter().find(|&&h| h >= n) {
        return usage(format!("lag {bad} must be below N = {n}"));
    }
    let pairs = PairSum::new(table);
    lags.iter()
        .map(|&h| {
            let terms: Vec<Complex64> = (1..=n - h)
                .into_par_iter()
                .map(|j| pairs.covariance(j, h, noise))
                .collect::<Result<_>>()?;
            Ok(terms.iter().sum::<Complex64>() / (n - h) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::characteristic_sequence;
    use crate::sampling::{density_value, gaussian_fourier_coeff};
    use crate::special::gauss_legendre;
    use crate::phase::TorusAngle;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    const I_MAX: f64 = 2.0;

    fn reference_model() -> FrequencyModel {
        FrequencyModel::cubic(0.3, 0.1, 0.005).unwrap()
    }

    fn reference_rho() -> InitialDensity {
        InitialDensity::gaussian(1.0, 0.0, 0.01).unwrap()
    }

    fn table_for(obs: &Observable, k_max: usize, nodes: usize) -> SpectralTable {
        build_spectral_table(obs, &reference_rho(), &reference_model(), k_max, nodes, I_MAX).unwrap()
    }

    #[test]
    fn single_mode_observables() {
        let t = table_for(&Observable::position(I_MAX), 4, 64);
        assert_eq!(t.active_modes(), &[-1]);
        for (i, &x) in t.nodes().iter().enumerate() {
            assert_relative_eq!(t.g_hat(-1)[i].re, (2.0 * x).sqrt(), epsilon = 1e-13);
        }
        let t = table_for(&Observable::action_cosine(I_MAX), 4, 64);
        assert_eq!(t.active_modes(), &[-1, 1]);
        for (i, &x) in t.nodes().iter().enumerate() {
            assert_relative_eq!(t.g_hat(1)[i].re, x / 2.0, epsilon = 1e-14);
            assert_relative_eq!(t.g_hat(-1)[i].re, x / 2.0, epsilon = 1e-14);
        }
        let t = table_for(&Observable::action_power(2.0, I_MAX), 4, 64);
        assert_eq!(t.active_modes(), &[0]);
        assert!(t.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn rho_hat_is_conjugate_symmetric() {
        let rho = InitialDensity::gaussian(0.8, 0.3, 0.02).unwrap();
        let t = build_spectral_table(&Observable::position(I_MAX), &rho, &reference_model(), 3, 64, I_MAX).unwrap();
        for k in 1..=6i64 {
            for (a, b) in t.rho_hat(k).iter().zip(t.rho_hat(-k)) {
                assert!((a - b.conj()).norm() <= 1e-12 * a.norm().max(1e-300));
            }
        }
    }

    /// Direct `∫∫ G·ρ₀` by Gauss–Legendre in `I` and the trapezoid rule in `θ`.
    fn direct_mean(obs: &Observable) -> Complex64 {
        let rule = CompositeRule::new(0.0, I_MAX, 40, PANEL_ORDER);
        let m = 2048;
        let h = TAU / m as f64;
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&i, &w)| {
                let inner: Complex64 = (0..m)
                    .map(|n| {
                        let t = n as f64 * h;
                        obs.eval(i, t) * density_value(&reference_rho(), i, TorusAngle::new(t).unwrap()).unwrap()
                    })
                    .sum();
                w * h * inner
            })
            .sum()
    }

    #[test]
    fn parseval_matches_direct_quadrature() {
        for obs in [Observable::position(I_MAX), Observable::action_cosine(I_MAX)] {
            let t = table_for(&obs, DEFAULT_K_MAX, DEFAULT_I_NODES);
            let oracle = oracle_mean_deterministic(&t, 0);
            let direct = direct_mean(&obs);
            assert!((oracle - direct).norm() <= 1e-8 * direct.norm(), "{oracle} vs {direct}");
        }
        let t = table_for(&Observable::position(I_MAX), DEFAULT_K_MAX, DEFAULT_I_NODES);
        assert!((oracle_mean_deterministic(&t, 0) - 1.0).norm() < 1e-6);
    }

    #[test]
    fn one_mode_by_hand() {
        // 2π∫√(2I)·ρ̂₀,1·e^{−iωj} dI on a single 400-point rule.
        let (x, w) = gauss_legendre(400);
        let t = table_for(&Observable::position(I_MAX), 1, 800);
        for j in [0u64, 5, 50] {
            let mut want = Complex64::new(0.0, 0.0);
            for (xi, wi) in x.iter().zip(&w) {
                let i = 0.5 * I_MAX * (xi + 1.0);
                let om = 0.3 + 0.2 * i + 0.015 * i * i;
                let rho1 = gaussian_fourier_coeff(1.0, 0.0, 0.01, 1, i);
                want += 0.5 * I_MAX * wi * 2.0 * PI * (2.0 * i).sqrt() * rho1 * Complex64::cis(-om * j as f64);
            }
            let got = oracle_mean_deterministic(&t, j);
            assert!((got - want).norm() < 1e-12, "j={j}: {got} vs {want}");
        }
    }

    #[test]
    fn theta_independent_mean_is_constant() {
        let t = table_for(&Observable::action_power(1.0, I_MAX), 4, 128);
        let v0 = oracle_mean_deterministic(&t, 0);
        assert_relative_eq!(v0.re, 0.51, epsilon = 1e-10);
        for j in [1u64, 17, 1000] {
            assert!((oracle_mean_deterministic(&t, j) - v0).norm() < 1e-14);
        }
        assert_relative_eq!(limit_value(&t).re, 0.51, epsilon = 1e-10);
    }

    #[test]
    fn limit_value_of_oscillating_observables() {
        for obs in [Observable::position(I_MAX), Observable::action_cosine(I_MAX)] {
            assert!(limit_value(&table_for(&obs, 4, 128)).norm() < 1e-10);
        }
    }

    #[test]
    fn brownian_damping() {
        let t = table_for(&Observable::position(I_MAX), 4, 416);
        let det = oracle_mean_deterministic(&t, 100);
        let b = oracle_mean_brownian(&t, 100, 0.1).unwrap();
        assert!((b - det * (-0.5f64).exp()).norm() < 1e-15);
        assert_eq!(oracle_mean_brownian(&t, 100, 0.0).unwrap(), det);
        assert!((oracle_mean_brownian(&t, 3, 50.0).unwrap() - limit_value(&t)).norm() < 1e-15);
    }

    #[test]
    fn general_factor_reduces_to_special_cases() {
        let t = table_for(&Observable::action_cosine(I_MAX), 4, 416);
        let ones = FnFactor(|_k: i64, _j: u64| Ok(Complex64::new(1.0, 0.0)));
        let model = PerturbationModel::brownian(0.2).unwrap();
        for j in [0u64, 3, 90] {
            assert_eq!(oracle_mean_general(&t, j, &ones).unwrap(), oracle_mean_deterministic(&t, j));
            let g = oracle_mean_general(&t, j, &model).unwrap();
            let b = oracle_mean_brownian(&t, j, 0.2).unwrap();
            assert!((g - b).norm() < 1e-14);
        }
    }

    #[test]
    fn resonant_mode_is_constant() {
        let model = reference_model();
        let res = PerturbationModel::resonant(0.1, -1, &model, None).unwrap();
        let t = table_for(&Observable::position(I_MAX), 2, 416);
        let first = t.modal_mean(-1, 1, &res).unwrap();
        for j in [2u64, 10, 1000, 10_000] {
            assert!((t.modal_mean(-1, j, &res).unwrap() - first).norm() < 1e-12);
        }
    }

    #[test]
    fn cesaro_examples() {
        let v = vec![Complex64::new(2.0, -1.0); 11];
        assert_eq!(cesaro_average(&v, 10).unwrap(), Complex64::new(2.0, -1.0));
        let alt: Vec<Complex64> = (0..=10).map(|j| Complex64::cis(PI * j as f64)).collect();
        assert!(cesaro_average(&alt, 10).unwrap().norm() < 1e-15);
        assert!(matches!(cesaro_average(&v, 0), Err(Error::Usage(_))));
        assert!(matches!(cesaro_average(&v, 11), Err(Error::Usage(_))));
        let running = cesaro_series(&alt);
        assert_eq!(running.len(), 10);
        assert!((running[9] - cesaro_average(&alt, 10).unwrap()).norm() < 1e-15);
    }

    #[test]
    fn cesaro_decays_like_one_over_n() {
        let model = reference_model();
        let obs = Observable::position(I_MAX);
        let nodes = nodes_for_horizon(&model, I_MAX, 1, 10_000).unwrap();
        let t = build_spectral_table(&obs, &reference_rho(), &model, 1, nodes, I_MAX).unwrap();
        let series = oracle_series(&t, 10_000, &Undamped).unwrap();
        let limit = limit_value(&t);
        let v = cesaro_series(&series.values);
        let at = |n: usize| (v[n - 1] - limit).norm();
        let slope = (at(10_000) / at(100)).ln() / 100f64.ln();
        assert!((-1.2..=-0.8).contains(&slope), "slope {slope}");
        assert!(at(10_000) <= 1e-2 * series.values[0].norm());
    }

    #[test]
    fn brownian_mean_bound_is_exponential() {
        let t = table_for(&Observable::position(I_MAX), 2, 2048);
        let c = 0.2f64;
        let limit = limit_value(&t);
        let a = t.modal_weights[0].iter().map(|w| w.norm()).sum::<f64>();
        for j in (25..=600u64).step_by(25) {
            let d = (oracle_mean_brownian(&t, j, c).unwrap() - limit).norm();
            assert!(d <= a * (-0.5 * c * c * j as f64).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn truncation_change_is_below_tail() {
        let obs = Observable::with_bound("bumpy", true, 2.0 * 1f64.exp(), |i, t| {
            Complex64::new(i * t.cos().exp(), 0.0)
        })
        .unwrap();
        let coarse = table_for(&obs, 4, 416);
        let fine = table_for(&obs, 8, 416);
        assert!(coarse.tail_estimate() > 0.0);
        for j in [0u64, 1, 10] {
            let d = (oracle_mean_deterministic(&coarse, j) - oracle_mean_deterministic(&fine, j)).norm();
            assert!(d <= coarse.tail_estimate() + 1e-14, "j={j}: {d} vs {}", coarse.tail_estimate());
        }
        assert!(fine.tail_estimate() < coarse.tail_estimate());
    }

    #[test]
    fn covariance_of_theta_independent_observable() {
        let t = table_for(&Observable::action_power(1.0, I_MAX), 4, 128);
        let none = PerturbationModel::none();
        for (j, h) in [(0u64, 0u64), (5, 3), (100, 40)] {
            assert_relative_eq!(oracle_covariance(&t, j, h, &none).unwrap().re, 0.0101, epsilon = 1e-10);
        }
    }

    #[test]
    fn variance_tends_to_theta_average_variance() {
        // Ḡ = 0 for I·cosθ, and ⟨Ḡ²⟩₀ with Ḡ² meaning the θ-average of G² = I²/2.
        let t = table_for(&Observable::action_cosine(I_MAX), 2, 4096);
        let v = oracle_covariance(&t, 5000, 0, &PerturbationModel::none()).unwrap();
        let ei2 = 0.51f64.powi(2) + 0.0101;
        assert_relative_eq!(v.re, ei2 / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn brownian_covariance_decays() {
        // One constant C and one rate η′ bound |Cov(j, j+h)| for every j.
        let t = table_for(&Observable::action_cosine(I_MAX), 2, 1024);
        let noise = PerturbationModel::brownian(0.2).unwrap();
        for j in [1u64, 10, 100] {
            for h in (0..=300u64).step_by(5) {
                let c = oracle_covariance(&t, j, h, &noise).unwrap().norm();
                assert!(c <= 0.2 * (-0.015 * h as f64).exp(), "j={j} h={h}: {c}");
            }
        }
    }

    #[test]
    fn covariance_rejects_dependent_increments() {
        let t = table_for(&Observable::action_cosine(I_MAX), 2, 64);
        let ar = PerturbationModel::ar1(0.1, 0.5, 1.0, crate::dynamics::Ar1Start::Stationary).unwrap();
        assert!(matches!(oracle_covariance(&t, 1, 1, &ar), Err(Error::Unsupported(_))));
    }

    #[test]
    fn lag_average_matches_pointwise_sum() {
        let t = table_for(&Observable::action_cosine(I_MAX), 2, 256);
        let noise = PerturbationModel::brownian(0.2).unwrap();
        let a = oracle_lag_covariances(&t, 40, &[0, 3], &noise).unwrap();
        let direct: Complex64 =
            (1..=37u64).map(|j| oracle_covariance(&t, j, 3, &noise).unwrap()).sum::<Complex64>() / 37.0;
        assert!((a[1] - direct).norm() < 1e-14);
        let _ = characteristic_sequence(&noise, 1, 1).unwrap();
    }

    #[test]
    fn table_preconditions() {
        let obs = Observable::position(I_MAX);
        assert!(build_spectral_table(&obs, &reference_rho(), &reference_model(), 0, 64, I_MAX).is_err());
        assert!(build_spectral_table(&obs, &reference_rho(), &reference_model(), 2, 4, I_MAX).is_err());
    }
}
