//! Monte Carlo ensemble estimators and the statistical tests built on them.
//!
//! Every estimator splits its samples into fixed-size chunks, reduces each chunk
//! sequentially and merges the chunk results in index order, so results do not
//! depend on the number of worker threads.

use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{scaled_noise_at, PerturbationModel};
use crate::error::{usage, Error, Result};
use crate::phase::{rotation, wrap_angle, wrap_raw, ActionAngleState, FrequencyModel, Observable, TorusAngle};
use crate::sampling::{density_value, sample_point, InitialDensity, SeedPlan, StreamKind};
use crate::special::{gauss_legendre, normal_cdf};

/// Samples per reduction chunk.
pub const CHUNK: usize = 1024;
/// Smallest ensemble accepted by [`mc_ensemble_series`].
pub const MIN_ENSEMBLE: usize = 100;
/// Smallest replica count accepted by [`estimate_lag_covariances`].
pub const MIN_REPLICAS: usize = 100;
/// Default KS acceptance threshold.
pub const DEFAULT_KS_THRESHOLD: f64 = 0.02;

fn chunk_ranges(count: usize) -> Vec<Range<usize>> {
    (0..count.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(count))
        .collect()
}

/// Running mean and sum of squared deviations, mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count / n;
        self.m2 += other.m2 + d * d * self.count * other.count / n;
        self.count = n;
    }

    /// Unbiased sample variance; `NaN` below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2.0 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count).sqrt()
    }
}

/// The physical setup shared by all ensemble estimators.
#[derive(Clone, Copy)]
pub struct Ensemble<'a> {
    pub observable: &'a Observable,
    pub density: &'a InitialDensity,
    pub model: &'a FrequencyModel,
    pub noise: &'a PerturbationModel,
    pub plan: SeedPlan,
}

impl Ensemble<'_> {
    /// Initial point of trajectory `index` and its angles at the listed steps.
    pub fn trajectory(&self, index: u64, steps: &[u64]) -> Result<(f64, Vec<f64>)> {
        if self.model.dim() != 1 {
            return Err(Error::Unsupported("ensembles run with one degree of freedom".into()));
        }
        let start = sample_point(self.density, &mut self.plan.rng(StreamKind::InitialCondition, index))?;
        let action = start.action_1d();
        let angle = start.angle_1d().value();
        let omega = self.model.frequency_1d(action)?;
        let angles = if self.noise.is_none() {
            steps.iter().map(|&j| wrap_raw(angle + rotation(j, omega))).collect()
        } else {
            let mut rng = self.plan.rng(StreamKind::Noise, index);
            let shift = scaled_noise_at(self.noise, steps, &mut rng, omega)?;
            steps
                .iter()
                .zip(shift)
                .map(|(&j, s)| wrap_raw(angle + rotation(j, omega) + s))
                .collect()
        };
        Ok((action, angles))
    }

    /// `G` along trajectory `index` at the listed steps.
    pub fn observe(&self, index: u64, steps: &[u64]) -> Result<Vec<Complex64>> {
        let (action, angles) = self.trajectory(index, steps)?;
        Ok(angles.into_iter().map(|t| self.observable.eval(action, t)).collect())
    }
}

fn check_steps(steps: &[u64]) -> Result<()> {
    if steps.is_empty() {
        return usage("the step list is empty");
    }
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return usage("steps must be strictly increasing");
    }
    Ok(())
}

/// Phase-space clouds at each listed step: `result[s][i]` is sample `i` at `steps[s]`.
pub fn ensemble_snapshots(ens: &Ensemble<'_>, count: usize, steps: &[u64]) -> Result<Vec<Vec<ActionAngleState>>> {
    check_steps(steps)?;
    if count < 1 {
        return usage("ensemble needs at least one sample");
    }
    let rows: Vec<(f64, Vec<f64>)> = (0..count as u64)
        .into_par_iter()
        .map(|i| ens.trajectory(i, steps))
        .collect::<Result<_>>()?;
    (0..steps.len())
        .map(|s| {
            rows.iter()
                .map(|(action, angles)| Ok(ActionAngleState::planar(*action, angles[s])?))
                .collect()
        })
        .collect()
}

/// Monte Carlo `⟨G⟩_j` with standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleReport {
    pub j_values: Vec<u64>,
    pub means: Vec<Complex64>,
    pub stderr_re: Vec<f64>,
    pub stderr_im: Vec<f64>,
    /// Running means `V_N` when `j_values` is a contiguous run starting at 0 or 1; otherwise empty.
    pub cesaro: Vec<Complex64>,
    /// `|⟨G⟩_j / q₀|` when a reference `q₀` was supplied.
    pub centroid_norm: Option<Vec<f64>>,
    pub sample_count: usize,
}

/// `⟨G⟩_j` over `count` trajectories with no minimum ensemble size.
///
/// Standard errors are `NaN` for a single sample.
pub fn ensemble_series(ens: &Ensemble<'_>, count: usize, steps: &[u64]) -> Result<EnsembleReport> {
    check_steps(steps)?;
    if count < 1 {
        return usage("ensemble needs at least one sample");
    }
    let width = steps.len();
    let partials: Vec<Vec<[Moments; 2]>> = chunk_ranges(count)
        .into_par_iter()
        .map(|range| -> Result<Vec<[Moments; 2]>> {
            let mut acc = vec![[Moments::default(); 2]; width];
            for i in range {
                for (slot, g) in acc.iter_mut().zip(ens.observe(i as u64, steps)?) {
                    slot[0].push(g.re);
                    slot[1].push(g.im);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![[Moments::default(); 2]; width];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t[0].merge(&p[0]);
            t[1].merge(&p[1]);
        }
    }
    let means: Vec<Complex64> = total.iter().map(|m| Complex64::new(m[0].mean, m[1].mean)).collect();
    let contiguous = steps.windows(2).all(|w| w[1] == w[0] + 1) && steps[0] <= 1;
    let cesaro = if contiguous {
        let offset = if steps[0] == 0 { 1 } else { 0 };
        let mut acc = Complex64::new(0.0, 0.0);
        means[offset..]
            .iter()
            .enumerate()
            .map(|(n, v)| {
                acc += v;
                acc / (n + 1) as f64
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(EnsembleReport {
        j_values: steps.to_vec(),
        stderr_re: total.iter().map(|m| m[0].std_error()).collect(),
        stderr_im: total.iter().map(|m| m[1].std_error()).collect(),
        means,
        cesaro,
        centroid_norm: None,
        sample_count: count,
    })
}

/// [`ensemble_series`] with at least [`MIN_ENSEMBLE`] samples.
pub fn mc_ensemble_series(ens: &Ensemble<'_>, count: usize, steps: &[u64]) -> Result<EnsembleReport> {
    if count < MIN_ENSEMBLE {
        return usage(format!("ensemble estimates need M >= {MIN_ENSEMBLE}, got {count}"));
    }
    ensemble_series(ens, count, steps)
}

/// `|⟨G⟩_j| / |q₀|` for every reported step.
pub fn centroid_norm(report: &EnsembleReport, q0: f64) -> Result<Vec<f64>> {
    if q0 == 0.0 || !q0.is_finite() {
        return usage("centroid norm needs a finite nonzero q0");
    }
    Ok(report.means.iter().map(|m| m.norm() / q0.abs()).collect())
}

/// Rolling maximum over a trailing window of `window` entries.
pub fn rolling_max(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return usage("rolling window must be >= 1");
    }
    Ok((0..values.len())
        .map(|i| {
            values[i.saturating_sub(window - 1)..=i]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

/// `X_j = G(step j) − center` for `j = 1..=n` along trajectory `index`.
pub fn replica_series(ens: &Ensemble<'_>, index: u64, n: usize, center: Complex64) -> Result<Vec<Complex64>> {
    let steps: Vec<u64> = (1..=n as u64).collect();
    Ok(ens.observe(index, &steps)?.into_iter().map(|g| g - center).collect())
}

/// `𝒳_N = N^{−1/2} Σ_{j=1}^{N} X_j` for `replicas` independent trajectories,
/// each with one initial draw and one noise path.
pub fn clt_samples(ens: &Ensemble<'_>, n: usize, replicas: usize, center: Complex64) -> Result<Vec<Complex64>> {
    if n < 1 || replicas < 1 {
        return usage("CLT sampling needs N >= 1 and R >= 1");
    }
    let scale = 1.0 / (n as f64).sqrt();
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| Ok(replica_series(ens, r, n, center)?.iter().sum::<Complex64>() * scale))
        .collect()
}

/// Which component of a complex observable feeds a real-valued estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

impl Part {
    pub fn of(self, z: Complex64) -> f64 {
        match self {
            Part::Re => z.re,
            Part::Im => z.im,
        }
    }
}

/// Real replica sequences `X_1..X_N`, produced on demand.
pub trait ReplicaSource: Sync {
    fn replicas(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Fill `out` (length `horizon()`) with replica `r`.
    fn fill(&self, r: usize, out: &mut [f64]) -> Result<()>;
}

/// Replicas held in memory, one row each.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaMatrix {
    rows: Vec<Vec<f64>>,
}

impl ReplicaMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return usage("replica rows must be nonempty and of equal length");
        }
        Ok(Self { rows })
    }
}

impl ReplicaSource for ReplicaMatrix {
    fn replicas(&self) -> usize {
        self.rows.len()
    }

    fn horizon(&self) -> usize {
        self.rows[0].len()
    }

    fn fill(&self, r: usize, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.rows[r]);
        Ok(())
    }
}

/// Replicas regenerated from the ensemble's seed plan on every pass.
pub struct TrajectoryReplicas<'a> {
    pub ensemble: Ensemble<'a>,
    pub replicas: usize,
    pub horizon: usize,
    pub center: Complex64,
    pub part: Part,
}

impl ReplicaSource for TrajectoryReplicas<'_> {
    fn replicas(&self) -> usize {
        self.replicas
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn fill(&self, r: usize, out: &mut [f64]) -> Result<()> {
        let x = replica_series(&self.ensemble, r as u64, self.horizon, self.center)?;
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.part.of(v);
        }
        Ok(())
    }
}

/// Per-step moments of a replica source, in replica order.
pub fn step_moments(source: &dyn ReplicaSource) -> Result<Vec<Moments>> {
    let n = source.horizon();
    let partials: Vec<Vec<Moments>> = chunk_ranges(source.replicas())
        .into_par_iter()
        .map(|range| -> Result<Vec<Moments>> {
            let mut acc = vec![Moments::default(); n];
            let mut row = vec![0.0; n];
            for r in range {
                source.fill(r, &mut row)?;
                for (m, &x) in acc.iter_mut().zip(&row) {
                    m.push(x);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![Moments::default(); n];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(total)
}

/// Cesàro limit of one lag covariance, judged by comparing horizons `N` and `N/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LagLimit {
    pub lag: usize,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `|A_{N,h} − A_{N/2,h}|` is inside the combined 95% interval.
    pub converged: bool,
}

/// Lag covariances `A_{N,h}` and the long-run variance built from them.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceReport {
    pub horizon: usize,
    pub replicas: usize,
    /// `A_{N,0}`, the step-averaged variance.
    pub a_n_0: f64,
    /// `A_{N,h}` for `h = 1..=H`.
    pub a_n: Vec<f64>,
    pub a_n_stderr: Vec<f64>,
    /// `A_{N/2,h}` for `h = 1..=H`.
    pub a_half: Vec<f64>,
    pub limits: Vec<LagLimit>,
    /// Mean of `Var(X_j)` over the last `sigma2_window` steps.
    pub sigma2: f64,
    pub sigma2_window: usize,
    /// `σ² + 2Σ_{h≤H} c_h`.
    pub sigma_star2: f64,
    /// Bound on `2Σ_{h>H}|c_h|` from an exponential fit to the upper half of the lags;
    /// infinite when the fit does not decay.
    pub tail_bound: f64,
    pub tail_rate: Option<f64>,
}

impl CovarianceReport {
    pub fn lags(&self) -> Vec<usize> {
        (1..=self.a_n.len()).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.limits.iter().all(|l| l.converged)
    }
}

/// Centered lag sums `Σ_{j<m−h} y_j y_{j+h}` for `h = 0..=max_lag` by zero-padded FFT.
fn lag_products(y: &[f64], max_lag: usize, fft: &dyn rustfft::Fft<f64>, ifft: &dyn rustfft::Fft<f64>) -> Vec<f64> {
    let len = fft.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (b, &v) in buf.iter_mut().zip(y) {
        b.re = v;
    }
    fft.process(&mut buf);
    for b in buf.iter_mut() {
        *b = Complex64::new(b.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    buf[..=max_lag].iter().map(|v| v.re / len as f64).collect()
}

/// Estimate `A_{N,h}`, `c_h`, `σ²` and `σ*²` from a replica source.
///
/// `max_lag` must not exceed `N/4`; `sigma2_window` defaults to the last quartile.
pub fn estimate_lag_covariances(
    source: &dyn ReplicaSource,
    max_lag: usize,
    sigma2_window: Option<usize>,
) -> Result<CovarianceReport> {
    let n = source.horizon();
    let replicas = source.replicas();
    if replicas < MIN_REPLICAS {
        return usage(format!("lag covariances need R >= {MIN_REPLICAS}, got {replicas}"));
    }
    if max_lag < 1 || max_lag > n / 4 {
        return usage(format!("lag range H = {max_lag} must satisfy 1 <= H <= N/4 = {}", n / 4));
    }
    let window = sigma2_window.unwrap_or(n / 4).clamp(1, n);
    let moments = step_moments(source)?;
    let mu: Vec<f64> = moments.iter().map(|m| m.mean).collect();
    let half = n / 2;

    let mut planner = FftPlanner::new();
    let full = (planner.plan_fft_forward(2 * n), planner.plan_fft_inverse(2 * n));
    let short = (planner.plan_fft_forward(2 * half), planner.plan_fft_inverse(2 * half));

    // Per replica: a_r(h) = Σ_j y_j y_{j+h} / (N − h) at N and N/2.
    let partials: Vec<(Vec<Moments>, Vec<Moments>)> = chunk_ranges(replicas)
        .into_par_iter()
        .map(|range| -> Result<(Vec<Moments>, Vec<Moments>)> {
            let mut at_n = vec![Moments::default(); max_lag + 1];
            let mut at_half = vec![Moments::default(); max_lag + 1];
            let mut row = vec![0.0; n];
            for r in range {
                source.fill(r, &mut row)?;
                for (x, m) in row.iter_mut().zip(&mu) {
                    *x -= m;
                }
                let p = lag_products(&row, max_lag, full.0.as_ref(), full.1.as_ref());
                for (h, (acc, v)) in at_n.iter_mut().zip(p).enumerate() {
                    acc.push(v / (n - h) as f64);
                }
                let p = lag_products(&row[..half], max_lag, short.0.as_ref(), short.1.as_ref());
                for (h, (acc, v)) in at_half.iter_mut().zip(p).enumerate() {
                    acc.push(v / (half - h) as f64);
                }
            }
            Ok((at_n, at_half))
        })
        .collect::<Result<_>>()?;
    let mut at_n = vec![Moments::default(); max_lag + 1];
    let mut at_half = vec![Moments::default(); max_lag + 1];
    for (a, b) in &partials {
        for (t, p) in at_n.iter_mut().zip(a) {
            t.merge(p);
        }
        for (t, p) in at_half.iter_mut().zip(b) {
            t.merge(p);
        }
    }
    // Centering by the estimated means costs one degree of freedom.
    let unbias = replicas as f64 / (replicas as f64 - 1.0);
    let a_n: Vec<f64> = at_n.iter().map(|m| m.mean * unbias).collect();
    let a_n_stderr: Vec<f64> = at_n.iter().map(|m| m.std_error()).collect();
    let a_half: Vec<f64> = at_half.iter().map(|m| m.mean * unbias).collect();
    let half_stderr: Vec<f64> = at_half.iter().map(|m| m.std_error()).collect();

    let limits: Vec<LagLimit> = (1..=max_lag)
        .map(|h| {
            let half_width = 1.96 * a_n_stderr[h];
            let combined = 1.96 * a_n_stderr[h].hypot(half_stderr[h]);
            LagLimit {
                lag: h,
                value: a_n[h],
                ci_low: a_n[h] - half_width,
                ci_high: a_n[h] + half_width,
                converged: (a_n[h] - a_half[h]).abs() < combined,
            }
        })
        .collect();

    let sigma2 = moments[n - window..].iter().map(|m| m.variance()).sum::<f64>() / window as f64;
    let sigma_star2 = sigma2 + 2.0 * a_n[1..].iter().sum::<f64>();

    let upper: Vec<usize> = ((max_lag / 2).max(1)..=max_lag).collect();
    let xs: Vec<f64> = upper.iter().map(|&h| h as f64).collect();
    let ys: Vec<f64> = upper.iter().map(|&h| a_n[h].abs()).collect();
    let (tail_bound, tail_rate) = match fit_decay(&xs, &ys, DecayModel::Exponential) {
        Ok(fit) if fit.rate() > 0.0 => {
            let q = (-fit.rate()).exp();
            let first = fit.prefactor * (-(fit.rate()) * (max_lag + 1) as f64).exp();
            (2.0 * first / (1.0 - q), Some(fit.rate()))
        }
        _ => (f64::INFINITY, None),
    };

    Ok(CovarianceReport {
        horizon: n,
        replicas,
        a_n_0: a_n[0],
        a_n: a_n[1..].to_vec(),
        a_n_stderr: a_n_stderr[1..].to_vec(),
        a_half: a_half[1..].to_vec(),
        limits,
        sigma2,
        sigma2_window: window,
        sigma_star2,
        tail_bound,
        tail_rate,
    })
}

/// Kolmogorov–Smirnov distance to `Normal(0, σ²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn ks_normality_test(samples: &[f64], sigma: f64, threshold: f64) -> Result<KsResult> {
    if samples.is_empty() {
        return usage("KS test needs samples");
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return usage(format!("KS test needs sigma > 0, got {sigma}"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return usage("KS samples contain NaN");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x / sigma);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic,
        threshold,
        pass: statistic < threshold,
    })
}

/// Monte Carlo Lindeberg sum at one `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LindebergPoint {
    pub eps: f64,
    /// `Σ_j E[Y²_{N,j} 1{|Y_{N,j}| > ε}]` with `Y_{N,j} = X_j/√N`.
    pub estimate: f64,
    pub std_error: f64,
    /// `(2‖G‖∞)³ / (ε√N)`.
    pub bound: f64,
}

impl LindebergPoint {
    pub fn within_bound(&self, sigmas: f64) -> bool {
        self.estimate <= self.bound + sigmas * self.std_error
    }
}

pub fn lindeberg_diagnostic(source: &dyn ReplicaSource, eps_grid: &[f64], sup_norm: f64) -> Result<Vec<LindebergPoint>> {
    if eps_grid.iter().any(|&e| !(e > 0.0)) {
        return usage("Lindeberg thresholds must be positive");
    }
    if source.replicas() < 2 {
        return usage("Lindeberg estimate needs at least two replicas");
    }
    let n = source.horizon();
    let scale = 1.0 / (n as f64).sqrt();
    let partials: Vec<Vec<Moments>> = chunk_ranges(source.replicas())
        .into_par_iter()
        .map(|range| -> Result<Vec<Moments>> {
            let mut acc = vec![Moments::default(); eps_grid.len()];
            let mut row = vec![0.0; n];
            for r in range {
                source.fill(r, &mut row)?;
                for (m, &eps) in acc.iter_mut().zip(eps_grid) {
                    let s: f64 = row
                        .iter()
                        .map(|x| x * scale)
                        .filter(|y| y.abs() > eps)
                        .map(|y| y * y)
                        .sum();
                    m.push(s);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![Moments::default(); eps_grid.len()];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    let m3 = (2.0 * sup_norm).powi(3);
    Ok(eps_grid
        .iter()
        .zip(&total)
        .map(|(&eps, m)| LindebergPoint {
            eps,
            estimate: m.mean,
            std_error: m.std_error(),
            bound: m3 / (eps * (n as f64).sqrt()),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayModel {
    /// `y = A·e^{slope·x}`.
    Exponential,
    /// `y = A·x^{slope}`.
    PowerLaw,
}

/// Least-squares line through `log y` against `x` or `log x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub model: DecayModel,
    pub slope: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// Points dropped for being nonpositive or non-finite.
    pub dropped: usize,
}

impl DecayFit {
    /// Decay rate `−slope`.
    pub fn rate(&self) -> f64 {
        -self.slope
    }

    /// Power-law exponent, the slope itself.
    pub fn exponent(&self) -> f64 {
        self.slope
    }
}

pub fn fit_decay(xs: &[f64], ys: &[f64], model: DecayModel) -> Result<DecayFit> {
    if xs.len() != ys.len() {
        return usage("fit_decay needs equally long x and y");
    }
    let points: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| y > 0.0 && y.is_finite() && x.is_finite() && (model == DecayModel::Exponential || x > 0.0))
        .map(|(&x, &y)| {
            let u = if model == DecayModel::PowerLaw { x.ln() } else { x };
            (u, y.ln())
        })
        .collect();
    let dropped = xs.len() - points.len();
    if points.len() < 4 {
        return usage(format!("fit_decay needs at least 4 usable points, got {}", points.len()));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return usage("fit_decay needs at least two distinct x values");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(DecayFit {
        model,
        slope,
        prefactor: intercept.exp(),
        r_squared,
        dropped,
    })
}

/// `E|𝒳_N|³`, which equals `E|S_N|³ / N^{3/2}`.
pub fn third_absolute_moment(samples: &[f64]) -> f64 {
    samples.iter().map(|x| x.abs().powi(3)).sum::<f64>() / samples.len() as f64
}

/// Empirical `log E[e^{iu𝒳}]` on a grid of `u`.
pub fn empirical_log_characteristic(samples: &[f64], us: &[f64]) -> Vec<Complex64> {
    let n = samples.len() as f64;
    us.iter()
        .map(|&u| (samples.iter().map(|&x| Complex64::cis(u * x)).sum::<Complex64>() / n).ln())
        .collect()
}

/// Chi-square goodness of fit of observed counts against expected counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Cells with expected count below `min_expected` are pooled into one cell.
pub fn chi_square_test(observed: &[u64], expected: &[f64], min_expected: f64) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() || observed.is_empty() {
        return usage("chi-square test needs matching nonempty cell lists");
    }
    let mut statistic = 0.0;
    let mut cells = 0usize;
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e < min_expected {
            pooled_obs += o as f64;
            pooled_exp += e;
        } else {
            statistic += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        statistic += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    } else if pooled_obs > 0.0 {
        return Err(Error::Domain("observations fell in cells of zero expected mass".into()));
    }
    if cells < 2 {
        return usage("chi-square test needs at least two cells");
    }
    let dof = cells - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

/// Histogram of initial points on an `(I, θ)` grid; `θ` in `[θ_lo, θ_hi)` may straddle 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseGrid {
    pub action_lo: f64,
    pub action_hi: f64,
    pub angle_lo: f64,
    pub angle_hi: f64,
    pub bins: usize,
}

impl PhaseGrid {
    /// Cell index, or `None` outside the grid.
    pub fn cell(&self, action: f64, angle: TorusAngle) -> Option<usize> {
        let mut t = angle.value();
        if t >= std::f64::consts::PI {
            t -= std::f64::consts::TAU;
        }
        if action < self.action_lo || action >= self.action_hi || t < self.angle_lo || t >= self.angle_hi {
            return None;
        }
        let b = self.bins as f64;
        let i = (((action - self.action_lo) / (self.action_hi - self.action_lo)) * b) as usize;
        let k = (((t - self.angle_lo) / (self.angle_hi - self.angle_lo)) * b) as usize;
        Some(i.min(self.bins - 1) * self.bins + k.min(self.bins - 1))
    }

    pub fn cells(&self) -> usize {
        self.bins * self.bins
    }
}

/// Chi-square test of `count` initial draws against the density on `grid`.
///
/// Expected cell masses come from a 6×6 Gauss–Legendre rule per cell; draws
/// outside the grid form one extra cell holding the remaining mass.
pub fn density_chi_square(
    density: &InitialDensity,
    grid: &PhaseGrid,
    count: usize,
    plan: SeedPlan,
) -> Result<ChiSquareResult> {
    let cells = grid.cells();
    let partials: Vec<Vec<u64>> = chunk_ranges(count)
        .into_par_iter()
        .map(|range| -> Result<Vec<u64>> {
            let mut hist = vec![0u64; cells + 1];
            for i in range {
                let s = sample_point(density, &mut plan.rng(StreamKind::InitialCondition, i as u64))?;
                match grid.cell(s.action_1d(), s.angle_1d()) {
                    Some(c) => hist[c] += 1,
                    None => hist[cells] += 1,
                }
            }
            Ok(hist)
        })
        .collect::<Result<_>>()?;
    let mut observed = vec![0u64; cells + 1];
    for part in &partials {
        for (o, p) in observed.iter_mut().zip(part) {
            *o += p;
        }
    }
    let (x, w) = gauss_legendre(6);
    let b = grid.bins;
    let di = (grid.action_hi - grid.action_lo) / b as f64;
    let dt = (grid.angle_hi - grid.angle_lo) / b as f64;
    let mut expected: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let (ci, ct) = (c / b, c % b);
            let mut mass = 0.0;
            for (xa, wa) in x.iter().zip(&w) {
                let action = grid.action_lo + di * (ci as f64 + 0.5 * (xa + 1.0));
                for (xt, wt) in x.iter().zip(&w) {
                    let angle = grid.angle_lo + dt * (ct as f64 + 0.5 * (xt + 1.0));
                    let v = density_value(density, action, wrap_angle(angle).expect("finite angle"))
                        .expect("action inside grid");
                    mass += 0.25 * di * dt * wa * wt * v;
                }
            }
            mass * count as f64
        })
        .collect();
    let inside: f64 = expected.iter().sum();
    expected.push((count as f64 - inside).max(0.0));
    chi_square_test(&observed, &expected, 5.0)
}
