//! Geometric decay-rate fitting for error series.
//!
//! A series `e(t)` is summarized by a least-squares line through
//! `(t, ln e(t))` over the last 60% of its samples, so the early transient
//! does not bias the slope. Tail samples at or below the floating-point
//! floor are dropped.

use serde::{Deserialize, Serialize};

/// Samples below this value are treated as numerically zero.
pub const DEFAULT_FLOOR: f64 = 1e-13;

/// Fraction of the series used for the tail fit.
pub const TAIL_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayFit {
    /// `e(t) ≈ prefactor · rate^t`; `residual` is the RMS deviation of
    /// `ln e(t)` from the fitted line over the tail window.
    Fitted {
        rate: f64,
        prefactor: f64,
        residual: f64,
        samples: usize,
    },
    /// Too few samples above the floor to fit a line; the series has
    /// already collapsed to numerical zero.
    Floor,
}

impl DecayFit {
    /// Fitted rate, with a floored series counted as rate zero.
    pub fn rate(&self) -> f64 {
        match self {
            DecayFit::Fitted { rate, .. } => *rate,
            DecayFit::Floor => 0.0,
        }
    }

    pub fn residual(&self) -> f64 {
        match self {
            DecayFit::Fitted { residual, .. } => *residual,
            DecayFit::Floor => 0.0,
        }
    }

    pub fn is_floor(&self) -> bool {
        matches!(self, DecayFit::Floor)
    }
}

pub fn fit_geometric(series: &[f64]) -> DecayFit {
    fit_geometric_with_floor(series, DEFAULT_FLOOR)
}

pub fn fit_geometric_with_floor(series: &[f64], floor: f64) -> DecayFit {
    let start = series.len() - ((series.len() as f64) * TAIL_FRACTION).round() as usize;
    let points: Vec<(f64, f64)> = (start..series.len())
        .filter(|&t| series[t] > floor && series[t].is_finite())
        .map(|t| (t as f64, series[t].ln()))
        .collect();
    if points.len() < 3 {
        return DecayFit::Floor;
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_t) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    DecayFit::Fitted {
        rate: slope.exp(),
        prefactor: intercept.exp(),
        residual: (sse / n).sqrt(),
        samples: points.len(),
    }
}
