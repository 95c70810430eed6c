use serde_json::json;

use twist_core::phase::check_nonresonance;

use crate::error::CliError;
use crate::output::Sink;
use crate::Setup;

pub fn run(setup: &Setup, sink: &mut Sink) -> Result<(), CliError> {
    let cfg = &setup.config.nonresonance;
    let points = cfg.grid_points;
    let grid: Vec<f64> = if points == 1 {
        vec![cfg.i_min]
    } else {
        (0..points)
            .map(|i| cfg.i_min + (cfg.i_max - cfg.i_min) * i as f64 / (points - 1) as f64)
            .collect()
    };
    let report = check_nonresonance(&setup.model, &grid, cfg.k_max, cfg.tolerance)?;
    sink.json(
        "nonresonance_report.json",
        json!({
            "k_max": report.k_max,
            "grid": { "i_min": cfg.i_min, "i_max": cfg.i_max, "points": points },
            "tolerance": report.tolerance,
            "worst_margin": report.worst_margin,
            "worst_action": report.worst_action,
            "worst_k": report.worst_k,
            "nonresonant": report.is_nonresonant(),
            "resonant_points": report.resonant_points.iter().map(|p| json!({
                "action": p.action, "k": p.k, "m": p.m, "margin": p.margin,
            })).collect::<Vec<_>>(),
        }),
    )
}
