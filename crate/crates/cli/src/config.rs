//! Experiment configuration files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use twist_core::dynamics::{Ar1Start, IncrementLaw, PerturbationModel};
use twist_core::phase::{FrequencyModel, Observable};
use twist_core::sampling::{ActionLaw, InitialDensity};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub hamiltonian: HamiltonianConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub observable: ObservableConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub clt: CltConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub envelope: EnvelopeConfig,
    #[serde(default)]
    pub counterexample: CounterexampleConfig,
    #[serde(default)]
    pub nonresonance: NonresonanceConfig,
}

/// `h(I) = αI + βI² + γI³`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for HamiltonianConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.1,
            gamma: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Gaussian { q0: f64, p0: f64, eps0: f64 },
    UniformAction { lower: f64, upper: f64 },
    ExponentialAction { mean: f64 },
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig::Gaussian {
            q0: 1.0,
            p0: 0.0,
            eps0: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum ObservableConfig {
    /// `√(2I)·e^{−iθ}`, the position `q + ip`.
    #[serde(rename = "sqrt2I_exp")]
    Sqrt2IExp,
    /// `I·cos θ`.
    #[serde(rename = "I_cos")]
    ICos,
    /// `I^power`.
    #[serde(rename = "action_power")]
    ActionPower { power: f64 },
    /// `I^power·e^{ikθ}`.
    #[serde(rename = "fourier_mode")]
    FourierMode { k: i64, power: f64 },
    #[serde(rename = "constant")]
    Constant { value: f64 },
}

impl Default for ObservableConfig {
    fn default() -> Self {
        ObservableConfig::Sqrt2IExp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    None,
    Brownian {
        c: f64,
    },
    Iid {
        c: f64,
        law: LawConfig,
        scale: f64,
    },
    Ar1 {
        c: f64,
        r: f64,
        innovation_scale: f64,
        #[serde(default)]
        start: StartConfig,
    },
    Resonant {
        c: f64,
        k: i64,
        /// Lock every sample to `ω(reference_action)`; absent means each sample
        /// cancels its own rotation.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference_action: Option<f64>,
    },
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawConfig {
    Normal,
    Uniform,
    Rademacher,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartConfig {
    #[default]
    Stationary,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Ensemble size `M`.
    pub samples: usize,
    pub steps: Vec<u64>,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            steps: vec![0, 1, 10, 100, 1000, 10_000],
            master_seed: 20_240_601,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub k_max: usize,
    /// Minimum number of `I` nodes; long horizons get more.
    pub i_nodes: usize,
    pub i_max: f64,
    /// Last step `N` of the oracle series.
    pub horizon: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            k_max: 16,
            i_nodes: 400,
            i_max: 2.0,
            horizon: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltConfig {
    pub replicas: usize,
    /// Replica count under `--full-scale`.
    pub full_scale_replicas: usize,
    /// Horizons `N` of the ladder; the largest one sets `σ*²`.
    pub ladder: Vec<usize>,
    /// Replicas used for the lag covariances; capped by `replicas`.
    pub covariance_replicas: usize,
    /// Largest lag `H`; defaults to `N/4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<usize>,
    /// Steps averaged for `σ²`; defaults to the last quartile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_window: Option<usize>,
    pub ks_threshold: f64,
    pub eps_grid: Vec<f64>,
    /// Lags used for the exponential fit of `|A_{N,h}|`.
    pub fit_lags: usize,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            replicas: 10_000,
            full_scale_replicas: 1_000_000,
            ladder: vec![10, 100, 1000],
            covariance_replicas: 10_000,
            max_lag: None,
            sigma2_window: None,
            ks_threshold: 0.02,
            eps_grid: vec![0.01, 0.05, 0.1, 0.5],
            fit_lags: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub z_threshold: f64,
    /// Evaluate the oracle with this Brownian intensity instead of the configured noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_c: Option<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            z_threshold: 5.0,
            oracle_c: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeConfig {
    /// Dense Monte Carlo series `j = 0..=horizon` for the envelope file.
    pub horizon: u64,
    pub samples: usize,
    pub window: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            horizon: 1000,
            samples: 10_000,
            window: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub ladder: Vec<u64>,
    /// Brownian intensity of the control run.
    pub control_c: f64,
    /// Distance from the limit that separates "converged" from "stuck".
    pub tolerance: f64,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            ladder: vec![10, 100, 1000, 10_000],
            control_c: 0.2,
            tolerance: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonresonanceConfig {
    pub k_max: i64,
    pub i_min: f64,
    pub i_max: f64,
    pub grid_points: usize,
    pub tolerance: f64,
}

impl Default for NonresonanceConfig {
    fn default() -> Self {
        Self {
            k_max: 8,
            i_min: 0.01,
            i_max: 2.0,
            grid_points: 200,
            tolerance: 1e-9,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.run.samples < 1 {
            return bad("run.samples must be >= 1".into());
        }
        if self.run.steps.is_empty() || self.run.steps.windows(2).any(|w| w[1] <= w[0]) {
            return bad("run.steps must be a nonempty strictly increasing list".into());
        }
        if self.oracle.k_max < 1 || self.oracle.i_nodes < 8 || !(self.oracle.i_max > 0.0) {
            return bad("oracle needs k_max >= 1, i_nodes >= 8 and i_max > 0".into());
        }
        if self.oracle.horizon < 1 {
            return bad("oracle.horizon must be >= 1".into());
        }
        if self.clt.replicas < 1 || self.clt.full_scale_replicas < 1 || self.clt.covariance_replicas < 1 {
            return bad("clt replica counts must be >= 1".into());
        }
        if self.clt.ladder.is_empty() || self.clt.ladder.iter().any(|&n| n < 1) {
            return bad("clt.ladder must list horizons >= 1".into());
        }
        if !(self.clt.ks_threshold > 0.0) || self.clt.eps_grid.iter().any(|&e| !(e > 0.0)) {
            return bad("clt.ks_threshold and clt.eps_grid must be positive".into());
        }
        if !(self.compare.z_threshold > 0.0) {
            return bad("compare.z_threshold must be positive".into());
        }
        if self.envelope.window < 1 || self.envelope.samples < 1 {
            return bad("envelope.window and envelope.samples must be >= 1".into());
        }
        if self.counterexample.ladder.is_empty() || self.counterexample.ladder.iter().any(|&n| n < 1) {
            return bad("counterexample.ladder must list horizons >= 1".into());
        }
        if self.nonresonance.k_max < 1 || self.nonresonance.grid_points < 1 {
            return bad("nonresonance needs k_max >= 1 and grid_points >= 1".into());
        }
        self.frequency_model()?;
        self.density()?;
        self.observable()?;
        self.noise()?;
        Ok(())
    }

    pub fn frequency_model(&self) -> Result<FrequencyModel, CliError> {
        let h = &self.hamiltonian;
        Ok(FrequencyModel::cubic(h.alpha, h.beta, h.gamma)?)
    }

    pub fn density(&self) -> Result<InitialDensity, CliError> {
        Ok(match self.density {
            DensityConfig::Gaussian { q0, p0, eps0 } => InitialDensity::gaussian(q0, p0, eps0)?,
            DensityConfig::UniformAction { lower, upper } => {
                InitialDensity::product(ActionLaw::Uniform { lower, upper })?
            }
            DensityConfig::ExponentialAction { mean } => InitialDensity::product(ActionLaw::Exponential { mean })?,
        })
    }

    /// The reference `q₀` for centroid norms, when the density has one.
    pub fn reference_q0(&self) -> Option<f64> {
        match self.density {
            DensityConfig::Gaussian { q0, .. } if q0 != 0.0 => Some(q0),
            _ => None,
        }
    }

    pub fn observable(&self) -> Result<Observable, CliError> {
        let i_max = self.oracle.i_max;
        Ok(match self.observable {
            ObservableConfig::Sqrt2IExp => Observable::position(i_max),
            ObservableConfig::ICos => Observable::action_cosine(i_max),
            ObservableConfig::ActionPower { power } => Observable::action_power(power, i_max),
            ObservableConfig::FourierMode { k, power } => Observable::fourier_mode(k, power, i_max),
            ObservableConfig::Constant { value } => Observable::constant(value),
        })
    }

    pub fn noise(&self) -> Result<PerturbationModel, CliError> {
        Ok(match &self.noise {
            NoiseConfig::None => PerturbationModel::none(),
            NoiseConfig::Brownian { c } => PerturbationModel::brownian(*c)?,
            NoiseConfig::Iid { c, law, scale } => {
                let law = match law {
                    LawConfig::Normal => IncrementLaw::Normal { sd: *scale },
                    LawConfig::Uniform => IncrementLaw::Uniform { half_width: *scale },
                    LawConfig::Rademacher => IncrementLaw::Rademacher { scale: *scale },
                };
                PerturbationModel::iid(*c, law)?
            }
            NoiseConfig::Ar1 {
                c,
                r,
                innovation_scale,
                start,
            } => {
                let start = match start {
                    StartConfig::Stationary => Ar1Start::Stationary,
                    StartConfig::Zero => Ar1Start::Zero,
                };
                PerturbationModel::ar1(*c, *r, *innovation_scale, start)?
            }
            NoiseConfig::Resonant {
                c,
                k,
                reference_action,
            } => PerturbationModel::resonant(*c, *k, &self.frequency_model()?, *reference_action)?,
        })
    }

    pub fn noise_kind(&self) -> &'static str {
        match self.noise {
            NoiseConfig::None => "none",
            NoiseConfig::Brownian { .. } => "brownian",
            NoiseConfig::Iid { .. } => "iid",
            NoiseConfig::Ar1 { .. } => "ar1",
            NoiseConfig::Resonant { .. } => "resonant",
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            hamiltonian: HamiltonianConfig::default(),
            density: DensityConfig::default(),
            observable: ObservableConfig::default(),
            noise: NoiseConfig::default(),
            run: RunConfig::default(),
            oracle: OracleConfig::default(),
            clt: CltConfig::default(),
            compare: CompareConfig::default(),
            envelope: EnvelopeConfig::default(),
            counterexample: CounterexampleConfig::default(),
            nonresonance: NonresonanceConfig::default(),
        }
    }
}
