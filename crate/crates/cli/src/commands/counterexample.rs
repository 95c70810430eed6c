use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use twist_core::dynamics::{NoiseProcess, PerturbationModel};
use twist_core::spectral::{cesaro_series, limit_value, oracle_series, SpectralTable};

use crate::commands::oracle::{table, table_json};
use crate::error::CliError;
use crate::output::{num, Sink};
use crate::Setup;

/// Relative tolerance for "constant in N".
pub const CONSTANT_TOL: f64 = 1e-12;

/// Cesàro averages of mode `k` alone, `N = 1..=n`.
pub fn modal_cesaro(table: &SpectralTable, k: i64, n: u64, noise: &PerturbationModel) -> Result<Vec<Complex64>, CliError> {
    let values = (0..=n)
        .into_par_iter()
        .map(|j| table.modal_mean(k, j, noise))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(cesaro_series(&values))
}

pub fn run(setup: &Setup, sink: &mut Sink) -> Result<(), CliError> {
    let cfg = &setup.config.counterexample;
    let k = match setup.noise.process() {
        NoiseProcess::Resonant(p) => p.k,
        _ => {
            return Err(CliError::Usage(format!(
                "counterexample needs resonant noise, config has {}",
                setup.config.noise_kind()
            )))
        }
    };
    let mut ladder = cfg.ladder.clone();
    ladder.sort_unstable();
    ladder.dedup();
    let n_max = *ladder.last().expect("validated nonempty");
    let table = table(setup, n_max, 1)?;
    let limit = limit_value(&table);

    let modal = modal_cesaro(&table, k, n_max, &setup.noise)?;
    let first = modal[0];
    let drift = modal.iter().map(|v| (v - first).norm()).fold(0.0, f64::max);
    let constant = drift <= CONSTANT_TOL * first.norm().max(1.0);

    let total = cesaro_series(&oracle_series(&table, n_max, &setup.noise)?.values);
    let control_noise = PerturbationModel::brownian(cfg.control_c)?;
    let control = cesaro_series(&oracle_series(&table, n_max, &control_noise)?.values);

    let at = |series: &[Complex64], n: u64| series[n as usize - 1];
    let gap = |series: &[Complex64], n: u64| (at(series, n) - limit).norm();
    let rows = ladder.iter().map(|&n| {
        let m = at(&modal, n);
        let t = at(&total, n);
        vec![
            n.to_string(),
            num(m.re),
            num(m.im),
            num(t.re),
            num(t.im),
            num(gap(&total, n)),
            num(gap(&control, n)),
        ]
    });
    sink.csv(
        "counterexample.csv",
        &["N", "modal_re", "modal_im", "total_re", "total_im", "total_gap", "control_gap"],
        rows,
    )?;

    let stuck = first.norm() > cfg.tolerance && gap(&total, n_max) > cfg.tolerance;
    let control_converges = gap(&control, n_max) <= cfg.tolerance;
    let detected = constant && stuck;
    sink.json(
        "counterexample_report.json",
        json!({
            "observable": setup.observable.name(),
            "mode": k,
            "ladder": ladder,
            "limit_value": [limit.re, limit.im],
            "modal_cesaro_first": [first.re, first.im],
            "modal_cesaro_max_drift": drift,
            "modal_constant": constant,
            "total_gap": ladder.iter().map(|&n| gap(&total, n)).collect::<Vec<_>>(),
            "control": {
                "c": cfg.control_c,
                "gap": ladder.iter().map(|&n| gap(&control, n)).collect::<Vec<_>>(),
                "converges": control_converges,
            },
            "tolerance": cfg.tolerance,
            "non_convergence_detected": detected,
            "table": table_json(&table),
        }),
    )?;
    if !detected {
        return Err(CliError::Gate(format!(
            "non-convergence not detected: modal drift {drift:.3e}, gap {:.3e}",
            gap(&total, n_max)
        )));
    }
    Ok(())
}
