//! Deterministic CSV emission (RFC 4180 quoting). The metrics file holds only
//! seed-reproducible columns; wall-clock timings go to a separate log so the
//! CSV is byte-identical across reruns.

use vlae_core::models::Metrics;

/// Quote a field if it contains a comma, quote, or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_row(fields: &[String]) -> String {
    fields
        .iter()
        .map(|f| csv_field(f))
        .collect::<Vec<_>>()
        .join(",")
}

pub const METRICS_HEADER: &str = "epoch,train_elbo,val_elbo,val_iwae,sigma2";

pub fn metrics_row(m: &Metrics) -> String {
    csv_row(&[
        m.epoch.to_string(),
        format!("{}", m.train_elbo),
        format!("{}", m.val_elbo),
        format!("{}", m.val_iwae),
        format!("{}", m.sigma2),
    ])
}

pub const TIMING_HEADER: &str = "epoch,wall_clock_seconds";

pub fn timing_row(m: &Metrics) -> String {
    format!("{},{}", m.epoch, m.wall_clock_seconds)
}
