//! Action-angle phase space.
//!
//! Angles live on the torus with period `2π`. A state is a pair of equal-length
//! vectors `(I, θ)`; the one-degree-of-freedom case is the one exercised by the
//! stochastic maps and the spectral oracle, so it gets allocation-free helpers.
//!
//! The Hamiltonian is integrable, `H(I, θ) = h(I)`, and its frequency map
//! `ω = h'(I)` is the per-step angle advance of the iteration map.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::error::{domain, usage, Error, Result};

/// Low part of `2π` once the `f64` representation of `TAU` is subtracted.
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// Reduce `x` to `[0, 2π)` without checking finiteness.
#[inline]
pub(crate) fn wrap_raw(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly TAU.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// The rotation `j·ω mod 2π`, accurate to a few ulps of `2π` for `j` up to ~1e7.
///
/// The product is split into its rounded value and the exact `fma` residual, and
/// the multiple of `2π` is removed with a two-part constant, so no digits of the
/// angle are lost to the magnitude of `j·ω`.
#[inline]
pub fn rotation(j: u64, omega: f64) -> f64 {
    let jf = j as f64;
    let p = jf * omega;
    let residual = jf.mul_add(omega, -p);
    let turns = (p / TAU).round();
    let r = (-turns).mul_add(TAU, p);
    let r = (-turns).mul_add(TAU_LO, r) + residual;
    wrap_raw(r)
}

/// Circular distance between two angles, in `[0, π]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_raw(a - b);
    d.min(TAU - d)
}

/// A point on the circle `ℝ / 2πℤ`, stored as its representative in `[0, 2π)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct TorusAngle(f64);

impl TorusAngle {
    pub const ZERO: TorusAngle = TorusAngle(0.0);

    pub fn new(x: f64) -> Result<Self> {
        wrap_angle(x)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Shift by `delta` radians. Non-finite shifts are a caller bug.
    #[inline]
    pub fn advance(self, delta: f64) -> Self {
        debug_assert!(delta.is_finite());
        TorusAngle(wrap_raw(self.0 + delta))
    }

    #[inline]
    pub(crate) fn from_wrapped(x: f64) -> Self {
        debug_assert!((0.0..TAU).contains(&x));
        TorusAngle(x)
    }
}

impl fmt::Display for TorusAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Canonical torus representative of `x`.
pub fn wrap_angle(x: f64) -> Result<TorusAngle> {
    if !x.is_finite() {
        return domain(format!("cannot wrap non-finite angle {x}"));
    }
    Ok(TorusAngle(wrap_raw(x)))
}

/// A phase-space point `(I, θ)` with `n ≥ 1` degrees of freedom.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionAngleState {
    action: SmallVec<[f64; 2]>,
    angle: SmallVec<[TorusAngle; 2]>,
}

impl ActionAngleState {
    pub fn new(action: &[f64], angle: &[f64]) -> Result<Self> {
        if action.is_empty() || action.len() != angle.len() {
            return usage(format!(
                "action and angle must have equal nonzero length (got {} and {})",
                action.len(),
                angle.len()
            ));
        }
        if let Some(bad) = action.iter().find(|a| !a.is_finite()) {
            return domain(format!("non-finite action component {bad}"));
        }
        let angle = angle
            .iter()
            .map(|&x| wrap_angle(x))
            .collect::<Result<SmallVec<_>>>()?;
        Ok(Self {
            action: SmallVec::from_slice(action),
            angle,
        })
    }

    /// One degree of freedom.
    pub fn planar(action: f64, angle: f64) -> Result<Self> {
        Self::new(&[action], &[angle])
    }

    #[inline]
    pub(crate) fn planar_unchecked(action: f64, angle: TorusAngle) -> Self {
        let mut a = SmallVec::new();
        a.push(action);
        let mut t = SmallVec::new();
        t.push(angle);
        Self { action: a, angle: t }
    }

    pub fn dim(&self) -> usize {
        self.action.len()
    }

    pub fn action(&self) -> &[f64] {
        &self.action
    }

    pub fn angle(&self) -> &[TorusAngle] {
        &self.angle
    }

    /// First action component; the whole action when `n = 1`.
    #[inline]
    pub fn action_1d(&self) -> f64 {
        self.action[0]
    }

    #[inline]
    pub fn angle_1d(&self) -> TorusAngle {
        self.angle[0]
    }

    pub(crate) fn with_angles(&self, angle: SmallVec<[TorusAngle; 2]>) -> Self {
        debug_assert_eq!(angle.len(), self.action.len());
        Self {
            action: self.action.clone(),
            angle,
        }
    }
}

/// Closed interval of admissible action values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionDomain {
    pub lower: f64,
    pub upper: f64,
}

impl ActionDomain {
    /// `[0, +∞)`, the half line of the planar oscillator example.
    pub const HALF_LINE: ActionDomain = ActionDomain {
        lower: 0.0,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return usage(format!("invalid action domain [{lower}, {upper}]"));
        }
        Ok(Self { lower, upper })
    }

    #[inline]
    pub fn contains(&self, action: f64) -> bool {
        action >= self.lower && action <= self.upper
    }

    fn check(&self, action: f64) -> Result<()> {
        if self.contains(action) {
            Ok(())
        } else {
            domain(format!(
                "action {action} outside [{}, {}]",
                self.lower, self.upper
            ))
        }
    }
}

/// `h(I) = Σ a_n I^n` for one degree of freedom, with its exact derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialHamiltonian {
    coeffs: Vec<f64>,
    derivative: Vec<f64>,
    domain: ActionDomain,
}

impl PolynomialHamiltonian {
    /// `coeffs[n]` multiplies `I^n`.
    pub fn new(coeffs: Vec<f64>, domain: ActionDomain) -> Result<Self> {
        if coeffs.is_empty() {
            return usage("polynomial Hamiltonian needs at least one coefficient");
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return domain_err("non-finite Hamiltonian coefficient");
        }
        let derivative = coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, &a)| n as f64 * a)
            .collect();
        Ok(Self {
            coeffs,
            derivative,
            domain,
        })
    }

    /// `h(I) = αI + βI² + γI³` on the half line.
    pub fn cubic(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        Self::new(vec![0.0, alpha, beta, gamma], ActionDomain::HALF_LINE)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn domain(&self) -> ActionDomain {
        self.domain
    }

    #[inline]
    fn horner(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &a| acc.mul_add(x, a))
    }

    pub fn energy(&self, action: f64) -> Result<f64> {
        self.domain.check(action)?;
        Ok(Self::horner(&self.coeffs, action))
    }

    pub fn frequency(&self, action: f64) -> Result<f64> {
        self.domain.check(action)?;
        Ok(Self::horner(&self.derivative, action))
    }

    #[inline]
    pub(crate) fn frequency_unchecked(&self, action: f64) -> f64 {
        Self::horner(&self.derivative, action)
    }
}

fn domain_err<T>(msg: &str) -> Result<T> {
    domain(msg.to_string())
}

type EnergyFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type FrequencyFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// User-supplied `(h, ω)` pair for `n ≥ 1` degrees of freedom.
///
/// The caller is responsible for `ω = ∇h`; [`CustomFrequency::max_derivative_mismatch`]
/// spot-checks it by central differences.
#[derive(Clone)]
pub struct CustomFrequency {
    dim: usize,
    domain: ActionDomain,
    energy: Arc<EnergyFn>,
    frequency: Arc<FrequencyFn>,
}

impl CustomFrequency {
    pub fn new(
        dim: usize,
        domain: ActionDomain,
        energy: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        frequency: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return usage("custom frequency model needs dim >= 1");
        }
        Ok(Self {
            dim,
            domain,
            energy: Arc::new(energy),
            frequency: Arc::new(frequency),
        })
    }

    /// Largest relative mismatch between `ω` and a central difference of `h`
    /// at the given points.
    pub fn max_derivative_mismatch(&self, points: &[Vec<f64>], step: f64) -> f64 {
        let mut worst: f64 = 0.0;
        let mut omega = vec![0.0; self.dim];
        for p in points {
            (self.frequency)(p, &mut omega);
            for i in 0..self.dim {
                let mut up = p.clone();
                let mut dn = p.clone();
                up[i] += step;
                dn[i] -= step;
                let fd = ((self.energy)(&up) - (self.energy)(&dn)) / (2.0 * step);
                let rel = (fd - omega[i]).abs() / omega[i].abs().max(1e-300);
                worst = worst.max(rel);
            }
        }
        worst
    }
}

impl fmt::Debug for CustomFrequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFrequency")
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

/// The integrable Hamiltonian `h(I)` together with its frequency map `ω = h'`.
#[derive(Clone, Debug)]
pub enum FrequencyModel {
    Polynomial(PolynomialHamiltonian),
    Custom(CustomFrequency),
}

impl FrequencyModel {
    pub fn cubic(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        Ok(Self::Polynomial(PolynomialHamiltonian::cubic(
            alpha, beta, gamma,
        )?))
    }

    /// Constant frequency `ω ≡ omega` on the half line (`h(I) = ωI`).
    pub fn constant_frequency(omega: f64) -> Result<Self> {
        Ok(Self::Polynomial(PolynomialHamiltonian::new(
            vec![0.0, omega],
            ActionDomain::HALF_LINE,
        )?))
    }

    pub fn dim(&self) -> usize {
        match self {
            FrequencyModel::Polynomial(_) => 1,
            FrequencyModel::Custom(c) => c.dim,
        }
    }

    pub fn domain(&self) -> ActionDomain {
        match self {
            FrequencyModel::Polynomial(p) => p.domain,
            FrequencyModel::Custom(c) => c.domain,
        }
    }

    fn check_action(&self, action: &[f64]) -> Result<()> {
        if action.len() != self.dim() {
            return usage(format!(
                "action has {} components, model expects {}",
                action.len(),
                self.dim()
            ));
        }
        let d = self.domain();
        action.iter().try_for_each(|&a| d.check(a))
    }

    pub fn energy(&self, action: &[f64]) -> Result<f64> {
        self.check_action(action)?;
        Ok(match self {
            FrequencyModel::Polynomial(p) => p.energy(action[0])?,
            FrequencyModel::Custom(c) => (c.energy)(action),
        })
    }

    pub fn frequency_vec(&self, action: &[f64]) -> Result<SmallVec<[f64; 2]>> {
        self.check_action(action)?;
        Ok(match self {
            FrequencyModel::Polynomial(p) => {
                let mut v = SmallVec::new();
                v.push(p.frequency_unchecked(action[0]));
                v
            }
            FrequencyModel::Custom(c) => {
                let mut v: SmallVec<[f64; 2]> = SmallVec::from_elem(0.0, c.dim);
                (c.frequency)(action, &mut v);
                v
            }
        })
    }

    /// `ω(I)` for one degree of freedom.
    pub fn frequency_1d(&self, action: f64) -> Result<f64> {
        match self {
            FrequencyModel::Polynomial(p) => p.frequency(action),
            FrequencyModel::Custom(c) if c.dim == 1 => {
                c.domain.check(action)?;
                let mut w = [0.0];
                (c.frequency)(&[action], &mut w);
                Ok(w[0])
            }
            FrequencyModel::Custom(c) => usage(format!(
                "scalar frequency requested from a {}-dimensional model",
                c.dim
            )),
        }
    }

    pub fn energy_1d(&self, action: f64) -> Result<f64> {
        self.energy(&[action])
    }
}

/// `ω(I) = h'(I)` for a one-degree-of-freedom model.
pub fn frequency(model: &FrequencyModel, action: f64) -> Result<f64> {
    model.frequency_1d(action)
}

/// One grid point where `k·ω(I)` falls within tolerance of `2πm`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResonantPoint {
    pub action: f64,
    pub k: i64,
    pub m: i64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonresonanceReport {
    pub k_max: i64,
    pub grid: Vec<f64>,
    pub tolerance: f64,
    /// `min |k·ω(I) − 2πm|` over the grid, `0 < |k| ≤ k_max`, `m ∈ ℤ`.
    pub worst_margin: f64,
    pub worst_action: f64,
    pub worst_k: i64,
    pub resonant_points: Vec<ResonantPoint>,
}

impl NonresonanceReport {
    pub fn is_nonresonant(&self) -> bool {
        self.resonant_points.is_empty()
    }
}

/// Scan `k·ω(I)` against `2πℤ` on a grid of actions.
///
/// Only positive `k` are scanned; `−k` has the same distance to `2πℤ`.
pub fn check_nonresonance(
    model: &FrequencyModel,
    grid: &[f64],
    k_max: i64,
    tol: f64,
) -> Result<NonresonanceReport> {
    if grid.is_empty() {
        return usage("nonresonance check needs a nonempty action grid");
    }
    if k_max < 1 {
        return usage(format!("k_max must be >= 1, got {k_max}"));
    }
    let mut report = NonresonanceReport {
        k_max,
        grid: grid.to_vec(),
        tolerance: tol,
        worst_margin: f64::INFINITY,
        worst_action: grid[0],
        worst_k: 1,
        resonant_points: Vec::new(),
    };
    for &action in grid {
        let omega = model.frequency_1d(action)?;
        for k in 1..=k_max {
            let phase = k as f64 * omega;
            let m = (phase / TAU).round();
            let margin = (phase - m * TAU).abs();
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.worst_action = action;
                report.worst_k = k;
            }
            if margin <= tol {
                report.resonant_points.push(ResonantPoint {
                    action,
                    k,
                    m: m as i64,
                    margin,
                });
            }
        }
    }
    Ok(report)
}

/// `(q, p) ↦ (I, θ)` with `q + ip = √(2I)·e^{−iθ}`.
pub fn canonical_to_action_angle(q: f64, p: f64) -> Result<ActionAngleState> {
    if !q.is_finite() || !p.is_finite() {
        return domain(format!("non-finite canonical point ({q}, {p})"));
    }
    if q == 0.0 && p == 0.0 {
        return Err(Error::Degenerate(
            "angle undefined at the origin (q, p) = (0, 0)".into(),
        ));
    }
    let action = 0.5 * (q * q + p * p);
    let angle = wrap_raw(-p.atan2(q));
    Ok(ActionAngleState::planar_unchecked(
        action,
        TorusAngle::from_wrapped(angle),
    ))
}

/// `(I, θ) ↦ (q, p) = (√(2I) cos θ, −√(2I) sin θ)`.
pub fn action_angle_to_canonical(state: &ActionAngleState) -> Result<(f64, f64)> {
    if state.dim() != 1 {
        return usage("canonical transform is defined for one degree of freedom");
    }
    let action = state.action_1d();
    if action < 0.0 {
        return domain(format!("negative action {action}"));
    }
    Ok(canonical_unchecked(action, state.angle_1d().value()))
}

#[inline]
pub(crate) fn canonical_unchecked(action: f64, angle: f64) -> (f64, f64) {
    let r = (2.0 * action).sqrt();
    let (s, c) = angle.sin_cos();
    (r * c, -r * s)
}

type ObservableFn = dyn Fn(f64, f64) -> Complex64 + Send + Sync;

/// A complex observable `G(I, θ)` on one degree of freedom, with a sup-norm bound.
#[derive(Clone)]
pub struct Observable {
    name: String,
    eval: Arc<ObservableFn>,
    bound: f64,
    bound_estimated: bool,
    real_valued: bool,
}

/// Grid size per axis for estimated sup-norm bounds.
pub const BOUND_GRID: usize = 256;
/// Inflation applied to a grid-estimated sup norm.
pub const BOUND_INFLATION: f64 = 1.05;

impl Observable {
    /// An observable with a certified bound `‖G‖∞ ≤ bound`.
    pub fn with_bound(
        name: impl Into<String>,
        real_valued: bool,
        bound: f64,
        eval: impl Fn(f64, f64) -> Complex64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(bound >= 0.0) {
            return usage(format!("sup-norm bound must be >= 0, got {bound}"));
        }
        Ok(Self {
            name: name.into(),
            eval: Arc::new(eval),
            bound,
            bound_estimated: false,
            real_valued,
        })
    }

    /// An observable whose bound is the max of `|G|` over a 256×256 grid on
    /// `(0, action_max] × [0, 2π)`, inflated by 5%.
    pub fn with_estimated_bound(
        name: impl Into<String>,
        real_valued: bool,
        action_max: f64,
        eval: impl Fn(f64, f64) -> Complex64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(action_max > 0.0) || !action_max.is_finite() {
            return usage(format!("action_max must be positive, got {action_max}"));
        }
        let mut peak: f64 = 0.0;
        for a in 1..=BOUND_GRID {
            let action = action_max * a as f64 / BOUND_GRID as f64;
            for t in 0..BOUND_GRID {
                let angle = TAU * t as f64 / BOUND_GRID as f64;
                peak = peak.max(eval(action, angle).norm());
            }
        }
        let mut obs = Self::with_bound(name, real_valued, peak * BOUND_INFLATION, eval)?;
        obs.bound_estimated = true;
        Ok(obs)
    }

    /// `G = √(2I)·e^{−iθ} = q + ip`, the phase-space position.
    pub fn position(action_max: f64) -> Self {
        Self::with_bound("sqrt2I_exp", false, (2.0 * action_max).sqrt(), |i, t| {
            Complex64::from_polar((2.0 * i).sqrt(), -t)
        })
        .expect("bound is nonnegative")
    }

    /// `G = I·cos θ`.
    pub fn action_cosine(action_max: f64) -> Self {
        Self::with_bound("I_cos", true, action_max, |i, t| {
            Complex64::new(i * t.cos(), 0.0)
        })
        .expect("bound is nonnegative")
    }

    /// `G = I^power`, independent of the angle.
    pub fn action_power(power: f64, action_max: f64) -> Self {
        Self::with_bound(
            format!("I^{power}"),
            true,
            action_max.powf(power),
            move |i, _| Complex64::new(i.powf(power), 0.0),
        )
        .expect("bound is nonnegative")
    }

    /// `G = I^power · e^{ikθ}`, a single Fourier mode.
    pub fn fourier_mode(k: i64, power: f64, action_max: f64) -> Self {
        Self::with_bound(
            format!("I^{power}*exp(i{k}theta)"),
            k == 0,
            action_max.powf(power),
            move |i, t| Complex64::from_polar(i.powf(power), k as f64 * t),
        )
        .expect("bound is nonnegative")
    }

    /// `G ≡ value`.
    pub fn constant(value: f64) -> Self {
        Self::with_bound("constant", true, value.abs(), move |_, _| {
            Complex64::new(value, 0.0)
        })
        .expect("bound is nonnegative")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, action: f64, angle: f64) -> Complex64 {
        (self.eval)(action, angle)
    }

    #[inline]
    pub fn eval_state(&self, state: &ActionAngleState) -> Complex64 {
        (self.eval)(state.action_1d(), state.angle_1d().value())
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn bound_is_estimated(&self) -> bool {
        self.bound_estimated
    }

    pub fn is_real(&self) -> bool {
        self.real_valued
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .field("bound_estimated", &self.bound_estimated)
            .field("real_valued", &self.real_valued)
            .finish()
    }
}

/// Smallest trapezoid rule accepted by [`theta_average`].
pub const MIN_THETA_POINTS: usize = 16;

/// `Ḡ(I) = (1/2π)∫ G(I, θ) dθ` by the periodic trapezoid rule.
///
/// Exact for trigonometric polynomials of degree below `points / 2`.
pub fn theta_average(obs: &Observable, action: f64, points: usize) -> Result<Complex64> {
    if points < MIN_THETA_POINTS {
        return usage(format!(
            "theta quadrature needs at least {MIN_THETA_POINTS} points, got {points}"
        ));
    }
    let h = TAU / points as f64;
    let sum: Complex64 = (0..points).map(|n| obs.eval(action, n as f64 * h)).sum();
    Ok(sum / points as f64)
}
