//! Iteration maps on action-angle phase space.
//!
//! Deterministic: `F^j(I, θ) = (I, θ + jω(I))`.
//! Perturbed: `S^j(I, θ) = (I, θ + jω(I) + c·X_j)` where `X_j` is a noise process
//! independent of the initial point. The process enters only through its
//! cumulative value at integer times, which is what [`NoisePath`] stores.
//!
//! Every perturbation also exposes its characteristic sequence
//! `a_j^{(k)} = E[exp(i·c·k·X_j)]`, the modewise damping factor used by the
//! spectral oracle.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use smallvec::SmallVec;

use crate::error::{domain, usage, Error, Result};
use crate::phase::{rotation, wrap_raw, ActionAngleState, FrequencyModel, TorusAngle};
use crate::sampling::{SeedPlan, StreamKind};

/// Law of one increment of an independent-increment process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IncrementLaw {
    Normal { sd: f64 },
    Uniform { half_width: f64 },
    Rademacher { scale: f64 },
}

impl IncrementLaw {
    /// `E[exp(i·t·ξ)]`.
    pub fn characteristic(&self, t: f64) -> f64 {
        match *self {
            IncrementLaw::Normal { sd } => (-0.5 * sd * sd * t * t).exp(),
            IncrementLaw::Uniform { half_width } => {
                let x = half_width * t;
                if x == 0.0 {
                    1.0
                } else {
                    x.sin() / x
                }
            }
            IncrementLaw::Rademacher { scale } => (scale * t).cos(),
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            IncrementLaw::Normal { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            IncrementLaw::Uniform { half_width } => rng.random_range(-half_width..half_width),
            IncrementLaw::Rademacher { scale } => {
                if rng.random::<bool>() {
                    scale
                } else {
                    -scale
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            IncrementLaw::Normal { sd } => sd,
            IncrementLaw::Uniform { half_width } => half_width,
            IncrementLaw::Rademacher { scale } => scale,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            domain(format!("increment law parameter must be finite and >= 0, got {v}"))
        }
    }
}

/// Initial state of the AR(1) increment recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ar1Start {
    /// `u₀ ~ N(0, s²/(1−r²))`, so the increments are strictly stationary.
    #[default]
    Stationary,
    /// `u₀ = 0`.
    Zero,
}

/// Increments `u_j = r·u_{j−1} + s·ε_j` with Gaussian innovations; the angle
/// sees their running sum `X_j = u₁ + … + u_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ar1Process {
    pub r: f64,
    pub innovation_scale: f64,
    pub start: Ar1Start,
}

impl Ar1Process {
    fn initial_variance(&self) -> f64 {
        match self.start {
            Ar1Start::Stationary => {
                self.innovation_scale * self.innovation_scale / (1.0 - self.r * self.r)
            }
            Ar1Start::Zero => 0.0,
        }
    }

    /// `Var(X_j)` in closed form.
    pub fn cumulative_variance(&self, j: u64) -> f64 {
        let r = self.r;
        let s2 = self.innovation_scale * self.innovation_scale;
        let jf = j as f64;
        let rj = r.powf(jf);
        let carry = r * (1.0 - rj) / (1.0 - r);
        let innovations = jf - 2.0 * r * (1.0 - rj) / (1.0 - r)
            + r * r * (1.0 - rj * rj) / (1.0 - r * r);
        self.initial_variance() * carry * carry + s2 / ((1.0 - r) * (1.0 - r)) * innovations
    }
}

/// Where the resonant construction takes its frequency from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResonanceLock {
    /// One reference action for the whole ensemble; `X_j` is independent of the sample.
    Reference { action: f64, frequency: f64 },
    /// Each sample cancels its own rotation; `X_j` depends on the sample's action.
    PerSample,
}

/// Deterministic `X_j = −j·ω_lock / c`, which cancels the oscillation
/// `e^{ijkω}` against `a_j^{(k)} = e^{−ijkω}` for every mode `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResonantProcess {
    /// The mode singled out for reporting; must be nonzero.
    pub k: i64,
    pub lock: ResonanceLock,
}

type PathSampler = dyn Fn(&mut dyn RngCore, usize) -> Vec<f64> + Send + Sync;
type CharacteristicFn = dyn Fn(i64, u64, f64) -> Complex64 + Send + Sync;

/// Monte Carlo settings for characteristic sequences without a closed form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonteCarloCharacteristic {
    pub paths: usize,
    pub seed: u64,
}

impl Default for MonteCarloCharacteristic {
    fn default() -> Self {
        Self {
            paths: 10_000,
            seed: 0x5EED,
        }
    }
}

/// A user process given by an increment sampler and, optionally, its
/// characteristic sequence `(k, j, c) ↦ a_j^{(k)}`.
#[derive(Clone)]
pub struct CustomProcess {
    pub sampler: Arc<PathSampler>,
    pub characteristic: Option<Arc<CharacteristicFn>>,
    pub monte_carlo: Option<MonteCarloCharacteristic>,
}

impl fmt::Debug for CustomProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomProcess")
            .field("closed_form", &self.characteristic.is_some())
            .field("monte_carlo", &self.monte_carlo)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum NoiseProcess {
    None,
    /// Standard Brownian motion sampled at integer times.
    Brownian,
    /// Running sum of i.i.d. increments.
    Iid(IncrementLaw),
    Ar1(Ar1Process),
    Resonant(ResonantProcess),
    Custom(CustomProcess),
}

/// A noise process together with its intensity `c`.
#[derive(Clone, Debug)]
pub struct PerturbationModel {
    process: NoiseProcess,
    intensity: f64,
}

impl PerturbationModel {
    pub fn none() -> Self {
        Self {
            process: NoiseProcess::None,
            intensity: 0.0,
        }
    }

    pub fn brownian(c: f64) -> Result<Self> {
        positive_intensity(c)?;
        Ok(Self {
            process: NoiseProcess::Brownian,
            intensity: c,
        })
    }

    pub fn iid(c: f64, law: IncrementLaw) -> Result<Self> {
        positive_intensity(c)?;
        law.validate()?;
        Ok(Self {
            process: NoiseProcess::Iid(law),
            intensity: c,
        })
    }

    pub fn ar1(c: f64, r: f64, innovation_scale: f64, start: Ar1Start) -> Result<Self> {
        positive_intensity(c)?;
        if !(r > 0.0 && r < 1.0) {
            return domain(format!("AR(1) coefficient must lie in (0, 1), got {r}"));
        }
        if !(innovation_scale >= 0.0) || !innovation_scale.is_finite() {
            return domain(format!(
                "AR(1) innovation scale must be >= 0, got {innovation_scale}"
            ));
        }
        Ok(Self {
            process: NoiseProcess::Ar1(Ar1Process {
                r,
                innovation_scale,
                start,
            }),
            intensity: c,
        })
    }

    /// Resonant construction for mode `k`. With `reference_action = None` every
    /// sample is locked to its own frequency.
    pub fn resonant(
        c: f64,
        k: i64,
        model: &FrequencyModel,
        reference_action: Option<f64>,
    ) -> Result<Self> {
        positive_intensity(c)?;
        if k == 0 {
            return usage("resonant construction needs a nonzero mode k");
        }
        let lock = match reference_action {
            Some(action) => ResonanceLock::Reference {
                action,
                frequency: model.frequency_1d(action)?,
            },
            None => ResonanceLock::PerSample,
        };
        Ok(Self {
            process: NoiseProcess::Resonant(ResonantProcess { k, lock }),
            intensity: c,
        })
    }

    pub fn custom(c: f64, process: CustomProcess) -> Result<Self> {
        positive_intensity(c)?;
        Ok(Self {
            process: NoiseProcess::Custom(process),
            intensity: c,
        })
    }

    pub fn process(&self) -> &NoiseProcess {
        &self.process
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn is_none(&self) -> bool {
        matches!(self.process, NoiseProcess::None)
    }

    /// True when `a_j^{(k)}` depends on the sample's frequency.
    pub fn depends_on_frequency(&self) -> bool {
        matches!(
            self.process,
            NoiseProcess::Resonant(ResonantProcess {
                lock: ResonanceLock::PerSample,
                ..
            })
        )
    }

    /// Independent increments, for which the lag structure factorizes modewise.
    pub fn has_independent_increments(&self) -> bool {
        matches!(
            self.process,
            NoiseProcess::None | NoiseProcess::Brownian | NoiseProcess::Iid(_)
        )
    }

    /// `E[exp(i·t·(X_{j+h} − X_j))]` for independent-increment processes.
    pub fn increment_characteristic(&self, t: f64, steps: u64) -> Result<f64> {
        match &self.process {
            NoiseProcess::None => Ok(1.0),
            NoiseProcess::Brownian => Ok((-0.5 * t * t * steps as f64).exp()),
            NoiseProcess::Iid(law) => Ok(law.characteristic(t).powf(steps as f64)),
            _ => Err(Error::Unsupported(
                "increment characteristic needs independent increments".into(),
            )),
        }
    }
}

fn positive_intensity(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        domain(format!("noise intensity c must be positive, got {c}"))
    }
}

/// `X_0 = 0, X_1, …, X_N` at integer times.
///
/// `increments[j − 1] = X_j − X_{j−1}` and `cumulative[j] = X_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NoisePath {
    pub fn from_increments(increments: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(increments.len() + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for &d in &increments {
            acc += d;
            cumulative.push(acc);
        }
        Self {
            increments,
            cumulative,
        }
    }

    /// The all-zero path of length `n`.
    pub fn zeros(n: usize) -> Self {
        Self::from_increments(vec![0.0; n])
    }

    /// Number of steps `N`.
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `X_j`, with `X_0 = 0`.
    pub fn at(&self, j: usize) -> f64 {
        self.cumulative[j]
    }
}

/// Angle advance `j·ω` for one sample.
#[inline]
pub fn advance_angle(angle: f64, omega: f64, j: u64) -> f64 {
    wrap_raw(angle + rotation(j, omega))
}

/// `F^j(I, θ) = (I, θ + jω(I))` in closed form.
pub fn iterate_deterministic(
    state: &ActionAngleState,
    model: &FrequencyModel,
    j: u64,
) -> Result<ActionAngleState> {
    if j == 0 {
        return Ok(state.clone());
    }
    let omega = model.frequency_vec(state.action())?;
    let angles: SmallVec<[TorusAngle; 2]> = state
        .angle()
        .iter()
        .zip(&omega)
        .map(|(a, &w)| TorusAngle::new(advance_angle(a.value(), w, j)).expect("wrapped angle"))
        .collect();
    Ok(state.with_angles(angles))
}

/// `S^j(I, θ) = (I, θ + jω(I) + c·X_j)` along a recorded path.
pub fn iterate_stochastic(
    state: &ActionAngleState,
    model: &FrequencyModel,
    noise: &NoisePath,
    c: f64,
    j: usize,
) -> Result<ActionAngleState> {
    if j > noise.len() {
        return usage(format!(
            "step {j} exceeds the noise path length {}",
            noise.len()
        ));
    }
    if state.dim() != 1 {
        return usage("stochastic maps are defined for one degree of freedom");
    }
    if j == 0 {
        return Ok(state.clone());
    }
    let omega = model.frequency_1d(state.action_1d())?;
    let angle = wrap_raw(advance_angle(state.angle_1d().value(), omega, j as u64) + c * noise.at(j));
    Ok(ActionAngleState::planar_unchecked(
        state.action_1d(),
        TorusAngle::new(angle)?,
    ))
}

/// A path of `n` steps. Per-sample resonant locking needs the sample's
/// frequency; use [`sample_noise_path_for`] there.
pub fn sample_noise_path(
    model: &PerturbationModel,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<NoisePath> {
    if model.depends_on_frequency() {
        return usage("per-sample resonant noise needs the sample frequency");
    }
    sample_noise_path_for(model, n, rng, f64::NAN)
}

/// A path of `n` steps for a sample whose frequency is `omega`.
pub fn sample_noise_path_for(
    model: &PerturbationModel,
    n: usize,
    rng: &mut dyn RngCore,
    omega: f64,
) -> Result<NoisePath> {
    if n < 1 {
        return usage("noise path needs at least one step");
    }
    let c = model.intensity;
    let increments = match &model.process {
        NoiseProcess::None => vec![0.0; n],
        NoiseProcess::Brownian => (0..n)
            .map(|_| StandardNormal.sample(rng))
            .collect::<Vec<f64>>(),
        NoiseProcess::Iid(law) => (0..n).map(|_| law.sample(rng)).collect(),
        NoiseProcess::Ar1(p) => {
            let z0: f64 = StandardNormal.sample(rng);
            let mut u = p.initial_variance().sqrt() * z0;
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    u = p.r * u + p.innovation_scale * z;
                    u
                })
                .collect()
        }
        NoiseProcess::Resonant(res) => {
            let w = locked_frequency(res, omega)?;
            let cumulative: Vec<f64> = (0..=n).map(|j| -(j as f64) * w / c).collect();
            let increments = cumulative.windows(2).map(|p| p[1] - p[0]).collect();
            return Ok(NoisePath {
                increments,
                cumulative,
            });
        }
        NoiseProcess::Custom(cp) => {
            let inc = (cp.sampler)(rng, n);
            if inc.len() != n {
                return usage(format!(
                    "custom sampler returned {} increments, expected {n}",
                    inc.len()
                ));
            }
            inc
        }
    };
    Ok(NoisePath::from_increments(increments))
}

fn locked_frequency(res: &ResonantProcess, omega: f64) -> Result<f64> {
    match res.lock {
        ResonanceLock::Reference { frequency, .. } => Ok(frequency),
        ResonanceLock::PerSample if omega.is_finite() => Ok(omega),
        ResonanceLock::PerSample => usage("per-sample resonant noise needs the sample frequency"),
    }
}

/// `c·X_j` at an increasing list of steps, for a sample with frequency `omega`.
///
/// Gaussian independent-increment processes jump straight between the listed
/// steps; other processes are simulated step by step.
pub fn scaled_noise_at(
    model: &PerturbationModel,
    steps: &[u64],
    rng: &mut dyn RngCore,
    omega: f64,
) -> Result<Vec<f64>> {
    let c = model.intensity;
    let gaussian_sd = match &model.process {
        NoiseProcess::None => return Ok(vec![0.0; steps.len()]),
        NoiseProcess::Resonant(res) => {
            let w = locked_frequency(res, omega)?;
            return Ok(steps.iter().map(|&j| -(j as f64) * w).collect());
        }
        NoiseProcess::Brownian => Some(1.0),
        NoiseProcess::Iid(IncrementLaw::Normal { sd }) => Some(*sd),
        _ => None,
    };
    if let Some(sd) = gaussian_sd {
        let mut out = Vec::with_capacity(steps.len());
        let mut prev = 0u64;
        let mut acc = 0.0;
        for &j in steps {
            if j > prev {
                let z: f64 = StandardNormal.sample(rng);
                acc += sd * ((j - prev) as f64).sqrt() * z;
                prev = j;
            }
            out.push(c * acc);
        }
        return Ok(out);
    }
    let n = steps.last().copied().unwrap_or(0) as usize;
    if n == 0 {
        return Ok(vec![0.0; steps.len()]);
    }
    let path = sample_noise_path_for(model, n, rng, omega)?;
    Ok(steps.iter().map(|&j| c * path.at(j as usize)).collect())
}

/// A characteristic-sequence value, with a standard error when estimated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Characteristic {
    pub value: Complex64,
    /// Zero for closed forms.
    pub std_error: f64,
}

impl Characteristic {
    fn exact(value: Complex64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }
}

/// `a_j^{(k)} = E[exp(i·c·k·X_j)]` for processes whose law does not depend on
/// the sample.
pub fn characteristic_sequence(model: &PerturbationModel, k: i64, j: u64) -> Result<Characteristic> {
    if model.depends_on_frequency() {
        return usage("per-sample resonant noise: use characteristic_at with the sample frequency");
    }
    characteristic_at(model, k, j, f64::NAN)
}

/// `a_j^{(k)}` for a sample with frequency `omega`.
pub fn characteristic_at(
    model: &PerturbationModel,
    k: i64,
    j: u64,
    omega: f64,
) -> Result<Characteristic> {
    let c = model.intensity;
    let t = c * k as f64;
    let value = match &model.process {
        NoiseProcess::None => Complex64::new(1.0, 0.0),
        NoiseProcess::Brownian => Complex64::new((-0.5 * t * t * j as f64).exp(), 0.0),
        NoiseProcess::Iid(law) => Complex64::new(law.characteristic(t), 0.0).powu(j as u32),
        NoiseProcess::Ar1(p) => Complex64::new((-0.5 * t * t * p.cumulative_variance(j)).exp(), 0.0),
        NoiseProcess::Resonant(res) => {
            let w = locked_frequency(res, omega)?;
            // exp(−ijkω), reduced mod 2π exactly like the map's own rotation.
            Complex64::from_polar(1.0, -rotation(j, k as f64 * w))
        }
        NoiseProcess::Custom(cp) => match (&cp.characteristic, cp.monte_carlo) {
            (Some(f), _) => f(k, j, c),
            (None, Some(mc)) => return estimate_characteristic(model, &[k], j, mc).map(|v| v[0]),
            (None, None) => {
                return Err(Error::Unsupported(
                    "custom process has no closed-form characteristic sequence and Monte Carlo is disabled"
                        .into(),
                ))
            }
        },
    };
    Ok(Characteristic::exact(value))
}

/// Monte Carlo estimate of `a_j^{(k)}` for each `k`, sharing one set of paths.
pub fn estimate_characteristic(
    model: &PerturbationModel,
    modes: &[i64],
    j: u64,
    settings: MonteCarloCharacteristic,
) -> Result<Vec<Characteristic>> {
    let table = CharacteristicTable::estimate(model, modes, j as usize, settings)?;
    modes.iter().map(|&k| table.get(k, j)).collect()
}

/// `a_j^{(k)}` tabulated for `j = 0..=n` and a set of modes, estimated from
/// shared Monte Carlo paths.
#[derive(Clone, Debug)]
pub struct CharacteristicTable {
    modes: Vec<i64>,
    steps: usize,
    values: Vec<Complex64>,
    std_errors: Vec<f64>,
}

impl CharacteristicTable {
    pub fn estimate(
        model: &PerturbationModel,
        modes: &[i64],
        steps: usize,
        settings: MonteCarloCharacteristic,
    ) -> Result<Self> {
        if settings.paths < 2 {
            return usage("characteristic estimate needs at least two paths");
        }
        let plan = SeedPlan::new(settings.seed);
        let c = model.intensity;
        let width = modes.len() * (steps + 1);
        // Per-path phasors, then an index-ordered reduction.
        let per_path: Vec<Vec<Complex64>> = (0..settings.paths as u64)
            .into_par_iter()
            .map(|p| -> Result<Vec<Complex64>> {
                let mut rng = plan.rng(StreamKind::Characteristic, p);
                let path = if steps == 0 {
                    NoisePath::zeros(0)
                } else {
                    sample_noise_path(model, steps, &mut rng)?
                };
                let mut row = Vec::with_capacity(width);
                for &k in modes {
                    for j in 0..=steps {
                        row.push(Complex64::from_polar(1.0, c * k as f64 * path.at(j)));
                    }
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        let n = settings.paths as f64;
        let mut mean = vec![Complex64::new(0.0, 0.0); width];
        for row in &per_path {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for row in &per_path {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).norm_sqr();
            }
        }
        let std_errors = var.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect();
        Ok(Self {
            modes: modes.to_vec(),
            steps,
            values: mean,
            std_errors,
        })
    }

    pub fn get(&self, k: i64, j: u64) -> Result<Characteristic> {
        let slot = self
            .modes
            .iter()
            .position(|&m| m == k)
            .ok_or_else(|| Error::Usage(format!("mode {k} not tabulated")))?;
        if j as usize > self.steps {
            return usage(format!("step {j} beyond tabulated horizon {}", self.steps));
        }
        let idx = slot * (self.steps + 1) + j as usize;
        Ok(Characteristic {
            value: self.values[idx],
            std_error: self.std_errors[idx],
        })
    }
}

/// Modewise damping `a_j^{(k)}` seen by the spectral oracle at a node with frequency `omega`.
pub trait ModalFactor: Sync {
    fn factor(&self, k: i64, j: u64, omega: f64) -> Result<Complex64>;

    /// Whether `factor` reads `omega`; if not, it is evaluated once per `(k, j)`.
    fn depends_on_frequency(&self) -> bool {
        false
    }
}

impl ModalFactor for PerturbationModel {
    fn factor(&self, k: i64, j: u64, omega: f64) -> Result<Complex64> {
        if k == 0 {
            return Ok(Complex64::new(1.0, 0.0));
        }
        match &self.process {
            NoiseProcess::Custom(CustomProcess {
                characteristic: None,
                ..
            }) => Err(Error::Unsupported(
                "custom process without closed form: tabulate it with CharacteristicTable".into(),
            )),
            _ => characteristic_at(self, k, j, omega).map(|c| c.value),
        }
    }

    fn depends_on_frequency(&self) -> bool {
        PerturbationModel::depends_on_frequency(self)
    }
}

impl ModalFactor for CharacteristicTable {
    fn factor(&self, k: i64, j: u64, _omega: f64) -> Result<Complex64> {
        if k == 0 {
            return Ok(Complex64::new(1.0, 0.0));
        }
        self.get(k, j).map(|c| c.value)
    }
}

/// Adapter for closures `(k, j) ↦ a_j^{(k)}`.
pub struct FnFactor<F>(pub F);

impl<F> ModalFactor for FnFactor<F>
where
    F: Fn(i64, u64) -> Result<Complex64> + Sync,
{
    fn factor(&self, k: i64, j: u64, _omega: f64) -> Result<Complex64> {
        (self.0)(k, j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::circular_distance;
    use crate::sampling::SeedPlan;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::{Rng, RngCore};
    use std::f64::consts::PI;

    fn reference_model() -> FrequencyModel {
        FrequencyModel::cubic(0.3, 0.1, 0.005).unwrap()
    }

    #[test]
    fn deterministic_examples() {
        let m = reference_model();
        let s0 = ActionAngleState::planar(1.0, 0.0).unwrap();
        assert_eq!(iterate_deterministic(&s0, &m, 0).unwrap(), s0);
        let s2 = iterate_deterministic(&s0, &m, 2).unwrap();
        assert_relative_eq!(s2.angle_1d().value(), 1.030, epsilon = 1e-14);
        assert_eq!(s2.action_1d(), 1.0);

        let pi_model = FrequencyModel::constant_frequency(PI).unwrap();
        let s4 = iterate_deterministic(&s0, &pi_model, 4).unwrap();
        assert!(circular_distance(s4.angle_1d().value(), 0.0) < 1e-14);
    }

    #[test]
    fn deterministic_map_in_two_dimensions() {
        let model = FrequencyModel::Custom(
            crate::phase::CustomFrequency::new(
                2,
                crate::phase::ActionDomain::HALF_LINE,
                |a| 0.5 * a[0] * a[0] + a[0] * a[1],
                |a, w| {
                    w[0] = a[0] + a[1];
                    w[1] = a[0];
                },
            )
            .unwrap(),
        );
        let s = ActionAngleState::new(&[0.3, 0.2], &[0.1, 6.0]).unwrap();
        let out = iterate_deterministic(&s, &model, 3).unwrap();
        assert_eq!(out.action(), s.action());
        assert!(circular_distance(out.angle()[0].value(), 0.1 + 1.5) < 1e-14);
        assert!(circular_distance(out.angle()[1].value(), 6.0 + 0.9) < 1e-14);
    }

    proptest! {
        #[test]
        fn semigroup_and_action_conservation(
            action in 0.0f64..3.0,
            angle in 0.0f64..6.28,
            j1 in 0u64..500_000,
            j2 in 0u64..500_000,
        ) {
            let m = reference_model();
            let s = ActionAngleState::planar(action, angle).unwrap();
            let once = iterate_deterministic(&s, &m, j1 + j2).unwrap();
            let twice = iterate_deterministic(&iterate_deterministic(&s, &m, j1).unwrap(), &m, j2).unwrap();
            prop_assert_eq!(once.action_1d().to_bits(), action.to_bits());
            prop_assert!(circular_distance(once.angle_1d().value(), twice.angle_1d().value()) < 1e-9);
        }
    }

    #[test]
    fn brownian_path_variance() {
        // Var(B_100 / 10) over 10^4 paths should be 1 within 3 standard errors.
        let model = PerturbationModel::brownian(0.1).unwrap();
        let plan = SeedPlan::new(11);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = plan.rng(StreamKind::Noise, i);
                sample_noise_path(&model, 100, &mut rng).unwrap().at(100) / 10.0
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // Var of the sample variance of a normal is 2σ⁴/(n−1).
        let se = (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "variance {var}");
    }

    #[test]
    fn resonant_path_cancels_rotation() {
        let m = reference_model();
        let c = 0.1;
        let model = PerturbationModel::resonant(c, 1, &m, Some(0.5)).unwrap();
        let w = m.frequency_1d(0.5).unwrap();
        let path = sample_noise_path(&model, 1000, &mut SeedPlan::new(0).rng(StreamKind::Noise, 0)).unwrap();
        for j in 0..=1000usize {
            let phase = Complex64::from_polar(1.0, w * j as f64 + c * path.at(j));
            assert!((phase - 1.0).norm() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn degenerate_ar1_is_zero() {
        let model = PerturbationModel::ar1(0.1, 0.6, 0.0, Ar1Start::Zero).unwrap();
        let path = sample_noise_path(&model, 50, &mut SeedPlan::new(3).rng(StreamKind::Noise, 0)).unwrap();
        assert!(path.cumulative().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn noise_path_rejects_empty() {
        let model = PerturbationModel::brownian(0.1).unwrap();
        let mut rng = SeedPlan::new(0).rng(StreamKind::Noise, 0);
        assert!(matches!(sample_noise_path(&model, 0, &mut rng), Err(Error::Usage(_))));
    }

    #[test]
    fn stochastic_reduces_to_deterministic() {
        let m = reference_model();
        let s = ActionAngleState::planar(0.7, 2.0).unwrap();
        let model = PerturbationModel::brownian(0.3).unwrap();
        let path = sample_noise_path(&model, 40, &mut SeedPlan::new(5).rng(StreamKind::Noise, 1)).unwrap();
        let zero = NoisePath::zeros(40);
        for j in [0usize, 1, 17, 40] {
            let det = iterate_deterministic(&s, &m, j as u64).unwrap();
            let a = iterate_stochastic(&s, &m, &path, 0.0, j).unwrap();
            let b = iterate_stochastic(&s, &m, &zero, 0.3, j).unwrap();
            assert_eq!(a.angle_1d(), det.angle_1d());
            assert_eq!(b.angle_1d(), det.angle_1d());
        }
        assert!(matches!(
            iterate_stochastic(&s, &m, &path, 0.3, 41),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn stochastic_matches_scalar_recomputation() {
        let m = reference_model();
        let path = NoisePath::from_increments(vec![0.3, -1.2, 0.5, 2.0, -0.1]);
        let (i0, t0, c) = (0.5f64, 1.0f64, 0.1f64);
        let w = 0.3 + 2.0 * 0.1 * i0 + 3.0 * 0.005 * i0 * i0;
        let s = ActionAngleState::planar(i0, t0).unwrap();
        let mut b = 0.0;
        for (j, inc) in path.increments().iter().enumerate() {
            b += inc;
            let want = (t0 + (j + 1) as f64 * w + c * b).rem_euclid(std::f64::consts::TAU);
            let got = iterate_stochastic(&s, &m, &path, c, j + 1).unwrap();
            assert!(circular_distance(got.angle_1d().value(), want) < 1e-14);
            assert_eq!(got.action_1d(), i0);
        }
    }

    #[test]
    fn characteristic_examples() {
        let model = PerturbationModel::brownian(0.1).unwrap();
        let a = characteristic_sequence(&model, 1, 100).unwrap();
        assert_relative_eq!(a.value.re, (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(a.value.re, 0.60653, epsilon = 1e-5);
        for j in [1, 10, 1000] {
            assert_eq!(characteristic_sequence(&model, 0, j).unwrap().value, Complex64::new(1.0, 0.0));
        }
        let m = reference_model();
        let res = PerturbationModel::resonant(0.1, 1, &m, Some(0.5)).unwrap();
        let w = m.frequency_1d(0.5).unwrap();
        let a3 = characteristic_sequence(&res, 1, 3).unwrap().value;
        assert!((a3 - Complex64::from_polar(1.0, -3.0 * w)).norm() < 1e-15);
        assert_relative_eq!(a3.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn brownian_characteristic_law_by_monte_carlo() {
        let settings = MonteCarloCharacteristic { paths: 10_000, seed: 99 };
        for c in [0.05, 0.1, 0.2] {
            let model = PerturbationModel::brownian(c).unwrap();
            let table = CharacteristicTable::estimate(&model, &[1, 2], 100, settings).unwrap();
            for k in [1i64, 2] {
                for j in [1u64, 10, 100] {
                    let est = table.get(k, j).unwrap();
                    let exact = (-0.5 * c * c * (k * k) as f64 * j as f64).exp();
                    let z = (est.value - exact).norm() / est.std_error.max(1e-300);
                    assert!(z < 4.0 || (est.value - exact).norm() < 1e-12, "c={c} k={k} j={j}: z={z}");
                }
            }
        }
    }

    #[test]
    fn ar1_variance_closed_form_matches_brute_force() {
        for start in [Ar1Start::Stationary, Ar1Start::Zero] {
            let p = Ar1Process { r: 0.7, innovation_scale: 0.4, start };
            let s2 = 0.16f64;
            let v0 = p.initial_variance();
            // Var(u_i) and Cov(u_i, u_l) = r^{|i−l|} Var(u_min).
            let var_u = |i: i32| 0.7f64.powi(2 * i) * v0 + s2 * (1.0 - 0.7f64.powi(2 * i)) / (1.0 - 0.49);
            for j in [1i32, 2, 5, 30] {
                let mut brute = 0.0;
                for i in 1..=j {
                    for l in 1..=j {
                        brute += 0.7f64.powi((i - l).abs()) * var_u(i.min(l));
                    }
                }
                assert_relative_eq!(p.cumulative_variance(j as u64), brute, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn ar1_cesaro_decay_has_unit_slope() {
        let model = PerturbationModel::ar1(0.2, 0.5, 1.0, Ar1Start::Stationary).unwrap();
        let cesaro = |n: u64| -> f64 {
            (1..=n)
                .map(|j| characteristic_sequence(&model, 1, j).unwrap().value.norm())
                .sum::<f64>()
                / n as f64
        };
        let (a, b) = (cesaro(100), cesaro(10_000));
        let slope = (b / a).ln() / 100f64.ln();
        assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
        // Geometric bound: |a_j| ≤ ρ^j with ρ = exp(−c²s²/(2(1−r)²)·(1 − ε)).
        let rho = (-0.5 * 0.04 * 1.0 / 0.25 * 0.5f64).exp();
        let c0 = (1..=200u64)
            .map(|j| characteristic_sequence(&model, 1, j).unwrap().value.norm() / rho.powf(j as f64))
            .fold(0.0, f64::max);
        for n in [10u64, 100, 1000] {
            assert!(cesaro(n) <= c0 * rho / ((1.0 - rho) * n as f64) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn counterexample_cesaro_is_exactly_one() {
        let m = reference_model();
        let model = PerturbationModel::resonant(0.2, 1, &m, Some(0.5)).unwrap();
        let w = m.frequency_1d(0.5).unwrap();
        let mut sum = Complex64::new(0.0, 0.0);
        for j in 1..=5000u64 {
            let a = characteristic_sequence(&model, 1, j).unwrap().value;
            sum += Complex64::from_polar(1.0, rotation(j, w)) * a;
            let mean = sum / j as f64;
            assert!((mean - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn custom_process_without_characteristic() {
        let sampler: Arc<PathSampler> = Arc::new(|rng: &mut dyn RngCore, n: usize| {
            (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
        });
        let disabled = PerturbationModel::custom(
            0.3,
            CustomProcess { sampler: sampler.clone(), characteristic: None, monte_carlo: None },
        )
        .unwrap();
        assert!(matches!(
            characteristic_sequence(&disabled, 1, 4),
            Err(Error::Unsupported(_))
        ));
        let enabled = PerturbationModel::custom(
            0.3,
            CustomProcess {
                sampler,
                characteristic: None,
                monte_carlo: Some(MonteCarloCharacteristic { paths: 20_000, seed: 1 }),
            },
        )
        .unwrap();
        // ±1 steps: a_j = cos(0.3)^j.
        let est = characteristic_sequence(&enabled, 1, 4).unwrap();
        let exact = 0.3f64.cos().powi(4);
        assert!((est.value.re - exact).abs() < 4.0 * est.std_error);
        assert!(est.std_error > 0.0);
    }

    #[test]
    fn snapshot_sampling_matches_brownian_law() {
        let model = PerturbationModel::brownian(1.0).unwrap();
        let plan = SeedPlan::new(8);
        let n = 20_000;
        let mut s2 = [0.0; 3];
        for i in 0..n {
            let x = scaled_noise_at(&model, &[4, 4, 25], &mut plan.rng(StreamKind::Noise, i), 0.0).unwrap();
            assert_eq!(x[0], x[1]);
            s2[0] += x[0] * x[0];
            s2[2] += x[2] * x[2];
        }
        assert!((s2[0] / n as f64 - 4.0).abs() < 4.0 * 4.0 * (2.0 / n as f64).sqrt());
        assert!((s2[2] / n as f64 - 25.0).abs() < 4.0 * 25.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(PerturbationModel::brownian(0.0).is_err());
        assert!(PerturbationModel::ar1(0.1, 1.0, 1.0, Ar1Start::Zero).is_err());
        assert!(PerturbationModel::resonant(0.1, 0, &reference_model(), Some(0.5)).is_err());
    }
}
