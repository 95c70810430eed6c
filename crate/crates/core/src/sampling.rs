//! Initial ensembles: densities `ρ₀(I, θ)`, exact samplers, and the angular
//! Fourier coefficients `ρ̂₀,k(I)` consumed by the spectral oracle.
//!
//! The Gaussian phase-space density is sampled in Cartesian form: with
//! `q + ip = √(2I)e^{−iθ}` the map `(q, p) ↦ (I, θ)` has unit Jacobian, so
//! drawing `(q, p) ~ N((q₀, p₀), ε₀·Id)` and transforming gives exactly
//! `ρ₀(I, θ) = (1/2πε₀)·exp(−[(q−q₀)² + (p−p₀)²]/(2ε₀))`.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{domain, usage, Error, Result};
use crate::phase::{canonical_to_action_angle, ActionAngleState, TorusAngle};
use crate::special::{bessel_i_scaled, CompositeRule, PANEL_ORDER};

/// Independent random-number domains derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamKind {
    InitialCondition,
    Noise,
    Characteristic,
    Auxiliary,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::InitialCondition => 0x1,
            StreamKind::Noise => 0x2,
            StreamKind::Characteristic => 0x3,
            StreamKind::Auxiliary => 0x4,
        }
    }
}

/// Counter-based seeding: `(master_seed, kind, index)` names a ChaCha8 stream.
///
/// The key comes from the master seed and the stream kind; the index selects
/// the ChaCha stream, so substreams never overlap and can be created in any
/// order on any thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedPlan {
    pub master_seed: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedPlan {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn rng(&self, kind: StreamKind, index: u64) -> ChaCha8Rng {
        let mut state = self.master_seed ^ kind.tag().wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

/// Law of the action for a product density `f(I)·(1/2π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionLaw {
    Uniform { lower: f64, upper: f64 },
    Exponential { mean: f64 },
}

impl ActionLaw {
    pub fn pdf(&self, action: f64) -> f64 {
        match *self {
            ActionLaw::Uniform { lower, upper } => {
                if (lower..=upper).contains(&action) {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
            ActionLaw::Exponential { mean } => (-action / mean).exp() / mean,
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            ActionLaw::Uniform { lower, upper } => rng.random_range(lower..upper),
            ActionLaw::Exponential { mean } => {
                Exp::new(1.0 / mean).expect("validated mean").sample(rng)
            }
        }
    }
}

type PdfFn = dyn Fn(f64, f64) -> f64 + Send + Sync;
type SamplerFn = dyn Fn(&mut dyn RngCore) -> (f64, f64) + Send + Sync;

/// A user density on `(I, θ)` with an optional exact sampler.
#[derive(Clone)]
pub struct CustomDensity {
    pub pdf: Arc<PdfFn>,
    pub sampler: Option<Arc<SamplerFn>>,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("has_sampler", &self.sampler.is_some())
            .finish()
    }
}

/// The initial probability density `ρ₀` on `[0, ∞) × 𝕋`.
#[derive(Clone, Debug)]
pub enum InitialDensity {
    /// Isotropic Gaussian in `(q, p)` with mean `(q0, p0)` and variance `eps0`.
    GaussianPhaseSpace { q0: f64, p0: f64, eps0: f64 },
    /// `f(I)` times the uniform law on the angle.
    Product(ActionLaw),
    Custom(CustomDensity),
}

impl InitialDensity {
    pub fn gaussian(q0: f64, p0: f64, eps0: f64) -> Result<Self> {
        if !(eps0 > 0.0) || !eps0.is_finite() {
            return domain(format!("eps0 must be positive, got {eps0}"));
        }
        if !q0.is_finite() || !p0.is_finite() {
            return domain("non-finite Gaussian centre".to_string());
        }
        Ok(Self::GaussianPhaseSpace { q0, p0, eps0 })
    }

    pub fn product(law: ActionLaw) -> Result<Self> {
        match law {
            ActionLaw::Uniform { lower, upper } if !(0.0 <= lower && lower < upper) => {
                domain(format!("invalid uniform action law [{lower}, {upper}]"))
            }
            ActionLaw::Exponential { mean } if !(mean > 0.0) => {
                domain(format!("exponential action law needs mean > 0, got {mean}"))
            }
            _ => Ok(Self::Product(law)),
        }
    }

    pub fn custom(
        pdf: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sampler: Option<Arc<SamplerFn>>,
    ) -> Self {
        Self::Custom(CustomDensity {
            pdf: Arc::new(pdf),
            sampler,
        })
    }

    /// `ρ₀(I, θ)` without the domain check.
    #[inline]
    pub(crate) fn value_unchecked(&self, action: f64, angle: f64) -> f64 {
        match self {
            InitialDensity::GaussianPhaseSpace { q0, p0, eps0 } => {
                let r = (2.0 * action).sqrt();
                let (s, c) = angle.sin_cos();
                let dq = r * c - q0;
                let dp = -r * s - p0;
                (-(dq * dq + dp * dp) / (2.0 * eps0)).exp() / (TAU * eps0)
            }
            InitialDensity::Product(law) => law.pdf(action) / TAU,
            InitialDensity::Custom(c) => (c.pdf)(action, angle),
        }
    }
}

/// Pointwise `ρ₀(I, θ)`.
pub fn density_value(rho: &InitialDensity, action: f64, angle: TorusAngle) -> Result<f64> {
    if !(action >= 0.0) || !action.is_finite() {
        return domain(format!("action {action} outside [0, inf)"));
    }
    Ok(rho.value_unchecked(action, angle.value()))
}

/// Draw one initial point.
pub fn sample_point(rho: &InitialDensity, rng: &mut dyn RngCore) -> Result<ActionAngleState> {
    match rho {
        InitialDensity::GaussianPhaseSpace { q0, p0, eps0 } => {
            let sd = eps0.sqrt();
            loop {
                let zq: f64 = StandardNormal.sample(rng);
                let zp: f64 = StandardNormal.sample(rng);
                match canonical_to_action_angle(q0 + sd * zq, p0 + sd * zp) {
                    Err(Error::Degenerate(_)) => continue,
                    other => return other,
                }
            }
        }
        InitialDensity::Product(law) => {
            let action = law.sample(rng);
            let angle = rng.random_range(0.0..TAU);
            ActionAngleState::planar(action, angle)
        }
        InitialDensity::Custom(c) => match &c.sampler {
            Some(s) => {
                let (action, angle) = s(rng);
                ActionAngleState::planar(action, angle)
            }
            None => Err(Error::Unsupported(
                "custom density has no sampler".to_string(),
            )),
        },
    }
}

/// `M` independent draws; point `i` uses substream `(InitialCondition, i)`.
pub fn sample_initial(
    rho: &InitialDensity,
    count: usize,
    plan: &SeedPlan,
) -> Result<Vec<ActionAngleState>> {
    if count < 1 {
        return usage("sample count must be >= 1");
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_point(rho, &mut plan.rng(StreamKind::InitialCondition, i)))
        .collect()
}

/// Smallest angular grid for a mode-`k` coefficient.
pub fn min_fourier_points(k: i64) -> usize {
    4 * k.unsigned_abs() as usize + 16
}

/// Angular Fourier coefficients `ρ̂₀,k(I) = (1/2π)∫ρ₀(I,θ)e^{−ikθ}dθ` for
/// `k = −k_max..=k_max`, by FFT on `points` equispaced angles.
///
/// Entry `k + k_max` of the result holds mode `k`.
pub fn rho_fourier_coeffs(
    rho: &InitialDensity,
    action: f64,
    k_max: i64,
    points: usize,
) -> Result<Vec<Complex64>> {
    if points < min_fourier_points(k_max) {
        return usage(format!(
            "{points} angular points cannot resolve mode {k_max} (need >= {})",
            min_fourier_points(k_max)
        ));
    }
    if !(action >= 0.0) {
        return domain(format!("action {action} outside [0, inf)"));
    }
    let mut buf: Vec<Complex64> = (0..points)
        .map(|n| Complex64::new(rho.value_unchecked(action, TAU * n as f64 / points as f64), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(points).process(&mut buf);
    Ok(fourier_modes(&buf, k_max))
}

/// Pick modes `−k_max..=k_max` out of an unnormalized forward FFT.
pub(crate) fn fourier_modes(spectrum: &[Complex64], k_max: i64) -> Vec<Complex64> {
    let n = spectrum.len() as i64;
    (-k_max..=k_max)
        .map(|k| spectrum[k.rem_euclid(n) as usize] / n as f64)
        .collect()
}

/// Single coefficient `ρ̂₀,k(I)`.
pub fn rho_fourier_coeff(
    rho: &InitialDensity,
    k: i64,
    action: f64,
    points: usize,
) -> Result<Complex64> {
    if points < min_fourier_points(k) {
        return usage(format!(
            "{points} angular points cannot resolve mode {k} (need >= {})",
            min_fourier_points(k)
        ));
    }
    let all = rho_fourier_coeffs(rho, action, k.abs(), points)?;
    Ok(all[(k + k.abs()) as usize])
}

/// Closed form of `ρ̂₀,k(I)` for the Gaussian phase-space density:
/// `(1/2πε₀)·e^{−I/ε₀ − |z₀|²/2ε₀}·I_k(|z₀|√(2I)/ε₀)·e^{ikφ}` with `z₀ = q₀ + ip₀ = |z₀|e^{iφ}`.
pub fn gaussian_fourier_coeff(q0: f64, p0: f64, eps0: f64, k: i64, action: f64) -> Complex64 {
    let k_abs = k.unsigned_abs() as i64;
    gaussian_fourier_coeffs(q0, p0, eps0, action, k_abs)[(k + k_abs) as usize]
}

/// All Gaussian coefficients `ρ̂₀,k(I)` for `k = −k_max..=k_max`, entry `k + k_max`.
pub fn gaussian_fourier_coeffs(q0: f64, p0: f64, eps0: f64, action: f64, k_max: i64) -> Vec<Complex64> {
    let radius = q0.hypot(p0);
    let phase = p0.atan2(q0);
    let x = radius * (2.0 * action).sqrt() / eps0;
    let ive = bessel_i_scaled(k_max as usize, x);
    let envelope = (x - action / eps0 - radius * radius / (2.0 * eps0)).exp() / (TAU * eps0);
    (-k_max..=k_max)
        .map(|k| Complex64::from_polar(envelope * ive[k.unsigned_abs() as usize], k as f64 * phase))
        .collect()
}

/// `∫₀^{I_max}∫𝕋 ρ₀ dθ dI` by composite Gauss–Legendre in `I` and the trapezoid rule in `θ`.
pub fn total_mass(rho: &InitialDensity, action_max: f64, panels: usize, angle_points: usize) -> f64 {
    let rule = CompositeRule::new(0.0, action_max, panels, PANEL_ORDER);
    let h = TAU / angle_points as f64;
    rule.integrate(|i| (0..angle_points).map(|n| rho.value_unchecked(i, n as f64 * h)).sum::<f64>() * h)
}
