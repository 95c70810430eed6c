use num_complex::Complex64;
use serde_json::json;

use twist_core::dynamics::PerturbationModel;
use twist_core::spectral::oracle_values;
use twist_core::stats::mc_ensemble_series;
use twist_core::Error;

use crate::commands::oracle::{table, table_json};
use crate::error::CliError;
use crate::output::{num, Sink};
use crate::Setup;

/// `(mc − oracle)/stderr`; a zero stderr means the component is deterministic.
pub fn z_score(mc: f64, oracle: f64, stderr: f64, scale: f64) -> f64 {
    let diff = mc - oracle;
    if stderr > 0.0 {
        diff / stderr
    } else if diff.abs() <= 1e-10 * scale.max(1.0) {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

pub fn run(setup: &Setup, sink: &mut Sink) -> Result<(), CliError> {
    let cfg = &setup.config;
    let steps = &cfg.run.steps;
    let oracle_noise = match cfg.compare.oracle_c {
        Some(c) => PerturbationModel::brownian(c)?,
        None => setup.noise.clone(),
    };
    let horizon = *steps.last().expect("validated nonempty");
    let table = table(setup, horizon.max(1), 1)?;
    let oracle = oracle_values(&table, steps, &oracle_noise).map_err(|e| match e {
        Error::Unsupported(msg) => CliError::Usage(format!(
            "no oracle for noise kind {}: {msg}; run `simulate` for Monte Carlo only",
            cfg.noise_kind()
        )),
        other => other.into(),
    })?;
    let mc = mc_ensemble_series(&setup.ensemble(), cfg.run.samples, steps)?;

    let scale = setup.observable.bound();
    let threshold = cfg.compare.z_threshold;
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut worst = 0.0f64;
    for (s, &j) in steps.iter().enumerate() {
        let m: Complex64 = mc.means[s];
        let o = oracle[s];
        let z_re = z_score(m.re, o.re, mc.stderr_re[s], scale);
        let z_im = z_score(m.im, o.im, mc.stderr_im[s], scale);
        worst = worst.max(z_re.abs()).max(z_im.abs());
        rows.push(vec![
            j.to_string(),
            num(m.re),
            num(m.im),
            num(o.re),
            num(o.im),
            num(mc.stderr_re[s]),
            num(mc.stderr_im[s]),
            num(z_re),
            num(z_im),
        ]);
        entries.push(json!({
            "j": j,
            "mc": [m.re, m.im],
            "oracle": [o.re, o.im],
            "stderr": [mc.stderr_re[s], mc.stderr_im[s]],
            "z": [z_re, z_im],
            "pass": z_re.abs() <= threshold && z_im.abs() <= threshold,
        }));
    }
    sink.csv(
        "compare.csv",
        &["j", "mc_re", "mc_im", "oracle_re", "oracle_im", "stderr_re", "stderr_im", "z_re", "z_im"],
        rows,
    )?;
    let pass = worst <= threshold;
    sink.json(
        "compare_report.json",
        json!({
            "observable": setup.observable.name(),
            "noise": cfg.noise_kind(),
            "oracle_intensity_override": cfg.compare.oracle_c,
            "samples": cfg.run.samples,
            "z_threshold": threshold,
            "max_abs_z": if worst.is_finite() { json!(worst) } else { json!("inf") },
            "pass": pass,
            "table": table_json(&table),
            "steps": entries,
        }),
    )?;
    if !pass {
        return Err(CliError::Gate(format!("max |z| = {worst:.3} exceeds {threshold}")));
    }
    Ok(())
}
