//! Cumulative inference-optimization accounting: each preset row applies
//! one technique on top of the previous ones; the report prints modeled
//! latency, frequency, and speedup against the published measurements.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cumulative-optimization row of the bundled preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRow {
    pub name: String,
    pub steps: usize,
    /// Measured per-step cost; absent where only end-to-end latency was
    /// published (cache and action-only rows) — then fitted from it.
    pub per_step_ms: Option<f64>,
    /// Fixed overhead outside the denoising loop. Back-solved from the
    /// baseline row for eager execution; zero once the graph is compiled.
    pub overhead_ms: f64,
    pub published_latency_s: f64,
    pub published_frequency_hz: f64,
    pub published_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Preset {
    pub row: Vec<PresetRow>,
}

impl Table3Preset {
    /// The six bundled rows (also shipped as `presets/table3.toml`).
    pub fn builtin() -> Self {
        let row = |name: &str,
                   steps: usize,
                   per_step_ms: Option<f64>,
                   overhead_ms: f64,
                   lat: f64,
                   freq: f64,
                   speedup: f64| PresetRow {
            name: name.to_string(),
            steps,
            per_step_ms,
            overhead_ms,
            published_latency_s: lat,
            published_frequency_hz: freq,
            published_speedup: speedup,
        };
        Table3Preset {
            row: vec![
                row("baseline", 50, Some(95.0), 150.0, 4.90, 0.20, 1.00),
                row("noise_sampling", 30, Some(95.0), 150.0, 2.90, 0.34, 1.69),
                row("graph_compile", 30, Some(32.7), 0.0, 0.98, 1.02, 5.00),
                row("fp8_quant", 30, Some(29.3), 0.0, 0.88, 1.14, 5.57),
                row("dit_cache", 30, None, 0.0, 0.20, 5.00, 24.5),
                row("v2a_suffix", 30, None, 0.0, 0.09, 11.11, 54.4),
            ],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let preset: Table3Preset =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if preset.row.is_empty() {
            return Err(Error::InvalidConfig("preset needs at least one row".into()));
        }
        Ok(preset)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("preset serializes")
    }
}

/// One computed report row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub steps: usize,
    /// Given per-step cost, or fitted as `published latency / steps`.
    pub per_step_ms: f64,
    pub per_step_fitted: bool,
    /// Affine-model latency `steps · per_step + overhead`, seconds.
    pub model_latency_s: f64,
    pub published_latency_s: f64,
    /// `1 / published latency`.
    pub frequency_hz: f64,
    /// `baseline published latency / this row's published latency`.
    pub speedup: f64,
    /// `|model - published| / published`.
    pub residual_frac: f64,
}

/// Compute latency, frequency, and cumulative speedup for every row.
pub fn table3_report(preset: &Table3Preset) -> Result<Vec<BenchRow>> {
    let baseline = preset
        .row
        .first()
        .ok_or_else(|| Error::invalid("empty preset"))?;
    let mut rows = Vec::with_capacity(preset.row.len());
    for r in &preset.row {
        if !(r.published_latency_s > 0.0) || r.steps == 0 {
            return Err(Error::invalid(format!(
                "row {:?} needs positive latency and steps",
                r.name
            )));
        }
        let (per_step_ms, fitted) = match r.per_step_ms {
            Some(ms) => (ms, false),
            None => (
                (r.published_latency_s * 1000.0 - r.overhead_ms) / r.steps as f64,
                true,
            ),
        };
        let model_latency_s = (r.steps as f64 * per_step_ms + r.overhead_ms) / 1000.0;
        rows.push(BenchRow {
            name: r.name.clone(),
            steps: r.steps,
            per_step_ms,
            per_step_fitted: fitted,
            model_latency_s,
            published_latency_s: r.published_latency_s,
            frequency_hz: 1.0 / r.published_latency_s,
            speedup: baseline.published_latency_s / r.published_latency_s,
            residual_frac: (model_latency_s - r.published_latency_s).abs()
                / r.published_latency_s,
        });
    }
    Ok(rows)
}

/// Human-readable report table.
pub fn render_report(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>5} {:>12} {:>12} {:>12} {:>10} {:>9} {:>9}",
        "technique", "steps", "per-step ms", "model lat s", "published s", "freq Hz", "speedup", "residual"
    );
    for r in rows {
        let fitted = if r.per_step_fitted { "*" } else { "" };
        let _ = writeln!(
            out,
            "{:<16} {:>5} {:>11.2}{} {:>12.3} {:>12.2} {:>10.2} {:>8.2}x {:>8.2}%",
            r.name,
            r.steps,
            r.per_step_ms,
            if fitted.is_empty() { " " } else { "*" },
            r.model_latency_s,
            r.published_latency_s,
            r.frequency_hz,
            r.speedup,
            r.residual_frac * 100.0
        );
    }
    out.push_str("(* per-step fitted from the published end-to-end latency)\n");
    out
}
