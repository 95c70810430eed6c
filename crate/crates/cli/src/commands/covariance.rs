use num_complex::Complex64;
use serde_json::json;

use twist_core::spectral::{limit_value, oracle_lag_covariances};
use twist_core::stats::{estimate_lag_covariances, fit_decay, CovarianceReport, DecayModel, Part, TrajectoryReplicas};
use twist_core::Error;

use crate::analysis::fit_json;
use crate::commands::compare::z_score;
use crate::commands::oracle::{table, table_json};
use crate::error::CliError;
use crate::output::{num, Sink};
use crate::Setup;

/// The LLN limit `⟨Ḡ⟩₀` used to centre `X_j`.
pub fn centre(setup: &Setup) -> Result<Complex64, CliError> {
    Ok(limit_value(&table(setup, 1, 1)?))
}

/// Horizon of the covariance and CLT estimates: the largest ladder entry.
pub fn horizon(setup: &Setup) -> usize {
    *setup.config.clt.ladder.iter().max().expect("validated nonempty")
}

pub fn covariance_replicas(setup: &Setup) -> usize {
    setup.config.clt.covariance_replicas.min(setup.config.clt.replicas)
}

pub fn max_lag(setup: &Setup, n: usize) -> usize {
    setup.config.clt.max_lag.unwrap_or(n / 4)
}

/// Lag covariances of `Re X_j` along fresh trajectories.
pub fn estimate(setup: &Setup, centre: Complex64) -> Result<CovarianceReport, CliError> {
    let n = horizon(setup);
    let source = TrajectoryReplicas {
        ensemble: setup.ensemble(),
        replicas: covariance_replicas(setup),
        horizon: n,
        center: centre,
        part: Part::Re,
    };
    Ok(estimate_lag_covariances(&source, max_lag(setup, n), setup.config.clt.sigma2_window)?)
}

pub fn lag_table_json(report: &CovarianceReport) -> serde_json::Value {
    json!(report
        .limits
        .iter()
        .map(|l| json!({
            "lag": l.lag,
            "c": l.value,
            "ci": [l.ci_low, l.ci_high],
            "converged": l.converged,
        }))
        .collect::<Vec<_>>())
}

pub fn require_real(setup: &Setup) -> Result<(), CliError> {
    if setup.observable.is_real() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "observable {} is complex; choose a real observable such as I_cos",
            setup.observable.name()
        )))
    }
}

pub fn run(setup: &Setup, sink: &mut Sink) -> Result<(), CliError> {
    require_real(setup)?;
    let centre = centre(setup)?;
    let report = estimate(setup, centre)?;
    let n = report.horizon;
    let fit_lags = setup.config.clt.fit_lags.min(report.a_n.len());

    let lags: Vec<u64> = (1..=fit_lags as u64).collect();
    let oracle = if fit_lags > 0 {
        let table = table(setup, n as u64, 2)?;
        match oracle_lag_covariances(&table, n as u64, &lags, &setup.noise) {
            Ok(values) => Some((values, table)),
            Err(Error::Unsupported(_)) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };

    let scale = setup.observable.bound().powi(2);
    let threshold = setup.config.compare.z_threshold;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for (i, l) in report.limits.iter().enumerate() {
        let (o, z) = match &oracle {
            Some((values, _)) if i < values.len() => {
                let z = z_score(report.a_n[i], values[i].re, report.a_n_stderr[i], scale);
                worst = worst.max(z.abs());
                (values[i].re, z)
            }
            _ => (f64::NAN, f64::NAN),
        };
        rows.push(vec![
            l.lag.to_string(),
            num(report.a_n[i]),
            num(report.a_n_stderr[i]),
            num(report.a_half[i]),
            num(l.ci_low),
            num(l.ci_high),
            u8::from(l.converged).to_string(),
            num(o),
            num(z),
        ]);
    }
    sink.csv(
        "covariance.csv",
        &["h", "a_n", "stderr", "a_half", "ci_low", "ci_high", "converged", "oracle", "z"],
        rows,
    )?;

    let xs: Vec<f64> = (1..=fit_lags).map(|h| h as f64).collect();
    let ys: Vec<f64> = report.a_n[..fit_lags].iter().map(|a| a.abs()).collect();
    let fit = fit_decay(&xs, &ys, DecayModel::Exponential).ok();
    let pass = oracle.is_none() || worst <= threshold;
    sink.json(
        "covariance_report.json",
        json!({
            "observable": setup.observable.name(),
            "noise": setup.config.noise_kind(),
            "centre": [centre.re, centre.im],
            "horizon": n,
            "replicas": report.replicas,
            "a_n_0": report.a_n_0,
            "sigma2": report.sigma2,
            "sigma2_window": report.sigma2_window,
            "sigma_star2": report.sigma_star2,
            "tail_bound": if report.tail_bound.is_finite() { json!(report.tail_bound) } else { json!("inf") },
            "tail_rate": report.tail_rate,
            "all_converged": report.all_converged(),
            "abs_a_n_exponential": fit_json(fit, 1, fit_lags as u64),
            "oracle_cross_check": match &oracle {
                Some((_, table)) => json!({
                    "lags": lags,
                    "max_abs_z": worst,
                    "z_threshold": threshold,
                    "pass": worst <= threshold,
                    "table": table_json(table),
                }),
                None => json!({ "skipped": "no oracle covariance for this noise kind" }),
            },
            "lags": lag_table_json(&report),
        }),
    )?;
    if !pass {
        return Err(CliError::Gate(format!("covariance oracle cross-check: max |z| = {worst:.3}")));
    }
    Ok(())
}
