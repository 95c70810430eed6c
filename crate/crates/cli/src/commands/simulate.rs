use serde_json::json;

use twist_core::phase::action_angle_to_canonical;
use twist_core::stats::{centroid_norm, ensemble_series, ensemble_snapshots, rolling_max, EnsembleReport};

use crate::error::CliError;
use crate::output::{num, Sink};
use crate::Setup;

/// Level set drawn in the reference phase portrait.
pub const REFERENCE_LEVEL: f64 = 0.181;

fn norms(setup: &Setup, report: &EnsembleReport) -> Result<Vec<f64>, CliError> {
    Ok(match setup.config.reference_q0() {
        Some(q0) => centroid_norm(report, q0)?,
        None => report.means.iter().map(|m| m.norm()).collect(),
    })
}

pub fn run(setup: &Setup, sink: &mut Sink) -> Result<(), CliError> {
    let cfg = &setup.config;
    let ens = setup.ensemble();
    let steps = &cfg.run.steps;
    let count = cfg.run.samples;

    let clouds = ensemble_snapshots(&ens, count, steps)?;
    for (&j, cloud) in steps.iter().zip(&clouds) {
        let rows = cloud
            .iter()
            .map(|s| {
                let (q, p) = action_angle_to_canonical(s)?;
                Ok(vec![num(q), num(p), num(s.action_1d()), num(s.angle_1d().value())])
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        sink.csv(&format!("phase_t{j}.csv"), &["q", "p", "I", "theta"], rows)?;
    }

    let report = ensemble_series(&ens, count, steps)?;
    let centroid = norms(setup, &report)?;
    let rows = (0..steps.len()).map(|s| {
        vec![
            steps[s].to_string(),
            num(report.means[s].re),
            num(report.means[s].im),
            num(report.stderr_re[s]),
            num(report.stderr_im[s]),
            num(centroid[s]),
        ]
    });
    sink.csv(
        "ensemble_means.csv",
        &["j", "re_mean", "im_mean", "stderr_re", "stderr_im", "centroid_norm"],
        rows,
    )?;

    let env = &cfg.envelope;
    let dense: Vec<u64> = (0..=env.horizon).collect();
    let dense_report = ensemble_series(&ens, env.samples, &dense)?;
    let dense_norm = norms(setup, &dense_report)?;
    let envelope = rolling_max(&dense_norm, env.window)?;
    let rows = dense
        .iter()
        .zip(dense_norm.iter().zip(&envelope))
        .map(|(j, (n, e))| vec![j.to_string(), num(*n), num(*e)]);
    sink.csv("envelope.csv", &["j", "centroid_norm", "rolling_max"], rows)?;

    let first = steps.iter().position(|&j| j == 0).unwrap_or(0);
    let mut energies = clouds[first]
        .iter()
        .map(|s| setup.model.energy_1d(s.action_1d()))
        .collect::<Result<Vec<f64>, _>>()?;
    energies.sort_by(|a, b| a.total_cmp(b));
    let n = energies.len() as f64;
    let mean = energies.iter().sum::<f64>() / n;
    let sd = (energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let quantile = |q: f64| energies[((q * (n - 1.0)).round() as usize).min(energies.len() - 1)];
    let (lo, hi) = (energies[0], energies[energies.len() - 1]);

    sink.json(
        "simulate_summary.json",
        json!({
            "samples": count,
            "steps": steps,
            "observable": setup.observable.name(),
            "noise": cfg.noise_kind(),
            "centroid_reference_q0": cfg.reference_q0(),
            "energy_at_step": steps[first],
            "energy": {
                "mean": mean,
                "sd": sd,
                "min": lo,
                "q01": quantile(0.01),
                "median": quantile(0.5),
                "q99": quantile(0.99),
                "max": hi,
                "at_half_action": setup.model.energy_1d(0.5)?,
                "reference_level": REFERENCE_LEVEL,
                "reference_level_within_spread": lo <= REFERENCE_LEVEL && REFERENCE_LEVEL <= hi,
            },
            "envelope": {
                "horizon": env.horizon,
                "samples": env.samples,
                "window": env.window,
            },
        }),
    )
}
