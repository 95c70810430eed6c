//! Decay fits over oracle and Monte Carlo series.

use serde_json::{json, Value};
use twist_core::stats::{fit_decay, DecayFit, DecayModel};

/// About `count` integers spread geometrically over `[lo, hi]`, deduplicated.
pub fn log_spaced(lo: u64, hi: u64, count: usize) -> Vec<u64> {
    assert!(lo >= 1 && hi >= lo && count >= 2);
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<u64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as u64)
        .map(|x| x.clamp(lo, hi))
        .collect();
    out.dedup();
    out
}

/// Power-law fit of `ys[x]` over log-spaced `x ∈ [lo, hi]`.
pub fn power_law_fit(ys: &[f64], lo: u64, hi: u64) -> Option<DecayFit> {
    let hi = hi.min(ys.len() as u64 - 1);
    if lo < 1 || hi <= lo {
        return None;
    }
    let xs = log_spaced(lo, hi, 60);
    let y: Vec<f64> = xs.iter().map(|&x| ys[x as usize]).collect();
    let x: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
    fit_decay(&x, &y, DecayModel::PowerLaw).ok()
}

/// Exponential fit of `ys[x]` over every `x ∈ [lo, hi]`.
pub fn exponential_fit(ys: &[f64], lo: u64, hi: u64) -> Option<DecayFit> {
    let hi = hi.min(ys.len() as u64 - 1);
    if hi <= lo {
        return None;
    }
    let x: Vec<f64> = (lo..=hi).map(|x| x as f64).collect();
    fit_decay(&x, &ys[lo as usize..=hi as usize], DecayModel::Exponential).ok()
}

pub fn fit_json(fit: Option<DecayFit>, lo: u64, hi: u64) -> Value {
    match fit {
        Some(f) => json!({
            "model": match f.model {
                DecayModel::Exponential => "exponential",
                DecayModel::PowerLaw => "power_law",
            },
            "range": [lo, hi],
            "slope": f.slope,
            "prefactor": f.prefactor,
            "r_squared": f.r_squared,
            "dropped": f.dropped,
        }),
        None => Value::Null,
    }
}
