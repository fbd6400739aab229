//! Per-epoch metrics and their CSV rendering.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// One evaluation row. `median_time_to_goal` counts failures as the
/// horizon. Loss fields not applicable to a learner are reported as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub success_rate: f64,
    pub median_time_to_goal: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub aimer_loss: f64,
    pub wall_seconds: f64,
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,success_rate,median_time_to_goal,critic_loss,actor_loss,aimer_loss,wall_seconds";

/// Render a float with the given number of significant digits, plain
/// decimal notation.
pub fn format_significant(v: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    let exp = v.abs().log10().floor() as i32;
    if exp >= digits as i32 {
        // Integer part alone exceeds the precision: round to the leading
        // `digits` digits.
        let scale = 10f64.powi(exp - digits as i32 + 1);
        return format!("{:.0}", (v / scale).round() * scale);
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, v)
}

pub fn metrics_csv_row(m: &EpochMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        m.epoch,
        format_significant(m.success_rate, 6),
        format_significant(m.median_time_to_goal, 6),
        format_significant(m.critic_loss, 6),
        format_significant(m.actor_loss, 6),
        format_significant(m.aimer_loss, 6),
        format_significant(m.wall_seconds, 6),
    )
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{METRICS_CSV_HEADER}")?;
    for m in metrics {
        writeln!(file, "{}", metrics_csv_row(m))?;
    }
    Ok(())
}

/// Write the metric-accuracy table (`true_distance,estimate` per row).
pub fn write_accuracy_csv(path: &Path, table: &[(f64, f64)]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "true_distance,estimate")?;
    for (truth, est) in table {
        writeln!(
            file,
            "{},{}",
            format_significant(*truth, 6),
            format_significant(*est, 6)
        )?;
    }
    Ok(())
}
