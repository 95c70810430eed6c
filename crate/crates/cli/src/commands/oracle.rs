use num_complex::Complex64;
use serde_json::json;

use twist_core::dynamics::ModalFactor;
use twist_core::spectral::{build_table_for_horizon, cesaro_series, limit_value, oracle_series, SpectralTable};

use crate::analysis::{exponential_fit, fit_json, power_law_fit};
use crate::error::CliError;
use crate::output::{num, Sink};
use crate::Setup;

/// Tail-to-head ratio above which the oracle refuses to report.
pub const TAIL_GATE: f64 = 1e-2;

/// Spectral table resolving the configured observable up to step `horizon`.
pub fn table(setup: &Setup, horizon: u64, mode_factor: usize) -> Result<SpectralTable, CliError> {
    let o = &setup.config.oracle;
    Ok(build_table_for_horizon(
        &setup.observable,
        &setup.density,
        &setup.model,
        o.k_max,
        o.i_nodes,
        o.i_max,
        horizon,
        mode_factor,
    )?)
}

pub fn table_json(table: &SpectralTable) -> serde_json::Value {
    json!({
        "k_max": table.k_max(),
        "i_nodes": table.nodes().len(),
        "active_modes": table.active_modes(),
        "head_estimate": table.head_estimate(),
        "tail_estimate": table.tail_estimate(),
        "tail_ratio": table.tail_ratio(),
        "truncation_warning": table.truncation_warning(),
    })
}

pub fn run(setup: &Setup, sink: &mut Sink) -> Result<(), CliError> {
    let horizon = setup.config.oracle.horizon;
    let table = table(setup, horizon, 1)?;
    let factor: &dyn ModalFactor = &setup.noise;
    let series = oracle_series(&table, horizon, factor)?;
    let cesaro = cesaro_series(&series.values);
    let limit = limit_value(&table);

    sink.csv(
        "oracle_means.csv",
        &["j", "re", "im"],
        series
            .values
            .iter()
            .enumerate()
            .map(|(j, v)| vec![j.to_string(), num(v.re), num(v.im)]),
    )?;
    sink.csv(
        "oracle_cesaro.csv",
        &["N", "re", "im", "abs"],
        cesaro
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), num(v.re), num(v.im), num(v.norm())]),
    )?;

    let abs_means: Vec<f64> = series.values.iter().map(|v| v.norm()).collect();
    let centred_means: Vec<f64> = series.values.iter().map(|v| (v - limit).norm()).collect();
    let mut cesaro_abs = vec![f64::NAN];
    cesaro_abs.extend(cesaro.iter().map(|v| v.norm()));
    let mut cesaro_gap = vec![f64::NAN];
    cesaro_gap.extend(cesaro.iter().map(|v| (v - limit).norm()));
    let fit_lo = 100.min(horizon / 4).max(1);

    let tail_ratio = table.tail_ratio();
    let last: Complex64 = cesaro.last().copied().unwrap_or_default();
    sink.json(
        "oracle_summary.json",
        json!({
            "observable": setup.observable.name(),
            "noise": setup.config.noise_kind(),
            "horizon": horizon,
            "limit_value": { "re": limit.re, "im": limit.im, "abs": limit.norm() },
            "final_cesaro": { "re": last.re, "im": last.im, "gap_to_limit": (last - limit).norm() },
            "truncation_error_estimate": series.truncation_error_estimate,
            "table": table_json(&table),
            "fits": {
                "cesaro_abs_power_law": fit_json(power_law_fit(&cesaro_abs, fit_lo, horizon), fit_lo, horizon),
                "cesaro_gap_power_law": fit_json(power_law_fit(&cesaro_gap, fit_lo, horizon), fit_lo, horizon),
                "mean_gap_power_law": fit_json(power_law_fit(&centred_means, 10.min(horizon), horizon), 10.min(horizon), horizon),
                "mean_abs_exponential": fit_json(exponential_fit(&abs_means, 0, horizon), 0, horizon),
            },
            "tail_gate": TAIL_GATE,
            "tail_gate_pass": tail_ratio <= TAIL_GATE,
        }),
    )?;
    if tail_ratio > TAIL_GATE {
        return Err(CliError::Gate(format!(
            "Fourier tail is {tail_ratio:.3e} of the head (limit {TAIL_GATE:e}); raise oracle.k_max"
        )));
    }
    Ok(())
}
