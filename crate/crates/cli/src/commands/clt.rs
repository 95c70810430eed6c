use serde_json::json;

use twist_core::special::normal_cdf;
use twist_core::stats::{
    clt_samples, empirical_log_characteristic, ks_normality_test, lindeberg_diagnostic, third_absolute_moment,
    KsResult, Part, TrajectoryReplicas, MIN_REPLICAS,
};

use crate::commands::covariance::{centre, covariance_replicas, estimate, horizon, lag_table_json, require_real};
use crate::error::CliError;
use crate::output::{num, Sink};
use crate::Setup;

/// `E|Z|³` for a standard normal.
pub const GAUSSIAN_THIRD_MOMENT: f64 = 1.595_769_121_605_730_7;

/// Slack for "non-increasing" KS statistics: the 95% KS critical value at `R` samples.
pub fn ks_slack(replicas: usize) -> f64 {
    1.36 / (replicas as f64).sqrt()
}

pub fn is_non_increasing(ks: &[f64], slack: f64) -> bool {
    ks.windows(2).all(|w| w[1] <= w[0] + slack)
}

pub fn run(setup: &Setup, sink: &mut Sink) -> Result<(), CliError> {
    require_real(setup)?;
    let cfg = &setup.config.clt;
    let replicas = cfg.replicas;
    if replicas < MIN_REPLICAS {
        return Err(CliError::Usage(format!("clt needs R >= {MIN_REPLICAS} replicas, got {replicas}")));
    }
    let n_max = horizon(setup);
    if n_max < 4 {
        return Err(CliError::Usage("clt needs a ladder reaching N >= 4".into()));
    }
    let centre = centre(setup)?;
    let cov = estimate(setup, centre)?;
    let scale = setup.observable.bound().max(f64::MIN_POSITIVE).powi(2);
    let degenerate = cov.sigma_star2.abs() <= 1e-12 * scale;
    let sigma_star = cov.sigma_star2.max(0.0).sqrt();
    let negative = !degenerate && cov.sigma_star2 <= 0.0;
    let skip_ks = degenerate || negative;

    let mut ladder = cfg.ladder.clone();
    ladder.sort_unstable();
    ladder.dedup();
    let us = [0.25, 0.5, 1.0, 1.5, 2.0];
    let grid: Vec<f64> = (0..=32).map(|i| -4.0 + 0.25 * i as f64).collect();
    let mut per_n = Vec::new();
    let mut ks_values = Vec::new();
    let mut last_ks: Option<KsResult> = None;
    for &n in &ladder {
        let samples: Vec<f64> = clt_samples(&setup.ensemble(), n, replicas, centre)?
            .into_iter()
            .map(|z| z.re)
            .collect();
        let standard: Vec<f64> = samples
            .iter()
            .map(|x| if skip_ks { f64::NAN } else { x / sigma_star })
            .collect();
        sink.csv(
            &format!("clt_samples_N{n}.csv"),
            &["replica", "x", "standardized"],
            samples
                .iter()
                .zip(&standard)
                .enumerate()
                .map(|(r, (x, z))| vec![r.to_string(), num(*x), num(*z)]),
        )?;
        let entry = if skip_ks {
            let reason = if degenerate { "degenerate limit" } else { "negative variance estimate" };
            json!({ "N": n, "ks": null, "skipped": reason })
        } else {
            let ks = ks_normality_test(&samples, sigma_star, cfg.ks_threshold)?;
            ks_values.push(ks.statistic);
            last_ks = Some(ks);
            let mut sorted = standard.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let ecdf: Vec<_> = grid
                .iter()
                .map(|&x| {
                    let below = sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64;
                    json!([x, below, normal_cdf(x)])
                })
                .collect();
            let log_char: Vec<_> = empirical_log_characteristic(&standard, &us)
                .iter()
                .zip(&us)
                .map(|(l, u)| json!({ "u": u, "re": l.re, "im": l.im, "gaussian": -0.5 * u * u }))
                .collect();
            json!({
                "N": n,
                "ks": ks.statistic,
                "ks_pass": ks.pass,
                "sample_variance": samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64,
                "third_absolute_moment": third_absolute_moment(&standard),
                "log_characteristic": log_char,
                "ecdf": ecdf,
            })
        };
        per_n.push(entry);
    }

    let slack = ks_slack(replicas);
    let monotone = is_non_increasing(&ks_values, slack);
    let lindeberg_source = TrajectoryReplicas {
        ensemble: setup.ensemble(),
        replicas: covariance_replicas(setup),
        horizon: n_max,
        center: centre,
        part: Part::Re,
    };
    let lindeberg = lindeberg_diagnostic(&lindeberg_source, &cfg.eps_grid, setup.observable.bound())?;
    let lindeberg_ok = lindeberg.iter().all(|p| p.within_bound(3.0));
    let ks_ok = last_ks.is_none_or(|k| k.pass);
    let pass = degenerate || (!negative && ks_ok && monotone && lindeberg_ok);

    sink.json(
        "clt_report.json",
        json!({
            "observable": setup.observable.name(),
            "noise": setup.config.noise_kind(),
            "replicas": replicas,
            "ladder": ladder,
            "centre": [centre.re, centre.im],
            "covariance": {
                "horizon": cov.horizon,
                "replicas": cov.replicas,
                "sigma2": cov.sigma2,
                "sigma2_window": cov.sigma2_window,
                "sigma_star2": cov.sigma_star2,
                "tail_bound": if cov.tail_bound.is_finite() { json!(cov.tail_bound) } else { json!("inf") },
                "all_converged": cov.all_converged(),
                "c_k": lag_table_json(&cov),
            },
            "degenerate": degenerate,
            "negative_variance": negative,
            "ks_threshold": cfg.ks_threshold,
            "ks_monotone": { "pass": monotone, "slack": slack },
            "gaussian_third_moment": GAUSSIAN_THIRD_MOMENT,
            "per_n": per_n,
            "lindeberg": lindeberg.iter().map(|p| json!({
                "eps": p.eps,
                "estimate": p.estimate,
                "std_error": p.std_error,
                "bound": p.bound,
                "within_bound": p.within_bound(3.0),
            })).collect::<Vec<_>>(),
            "pass": pass,
        }),
    )?;
    if !pass {
        return Err(CliError::Gate(format!(
            "clt: negative_variance={negative} ks_pass={ks_ok} monotone={monotone} lindeberg={lindeberg_ok}"
        )));
    }
    Ok(())
}
