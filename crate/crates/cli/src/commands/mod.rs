pub mod clt;
pub mod compare;
pub mod counterexample;
pub mod covariance;
pub mod nonresonance;
pub mod oracle;
pub mod simulate;
