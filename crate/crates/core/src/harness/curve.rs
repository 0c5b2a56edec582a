use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::router::ModelRegistry;

pub const DEFAULT_GRID_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: f64,
    pub mean_quality: f64,
}

/// Budget versus mean delivered quality, budgets strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    points: Vec<CurvePoint>,
}

impl Curve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        for p in &points {
            if !p.budget.is_finite() || !p.mean_quality.is_finite() {
                return Err(Error::invalid("curve points must be finite"));
            }
        }
        check_increasing(points.iter().map(|p| p.budget))?;
        Ok(Curve { points })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Curve::new(
            pairs
                .iter()
                .map(|&(budget, mean_quality)| CurvePoint {
                    budget,
                    mean_quality,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc: f64,
    /// AUC divided by the budget span, i.e. the average quality over the grid.
    pub normalized: f64,
}

pub(crate) fn check_increasing(budgets: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev: Option<f64> = None;
    for b in budgets {
        if let Some(p) = prev {
            if b <= p {
                return Err(Error::invalid(format!(
                    "budgets must be strictly increasing, got {p} then {b}"
                )));
            }
        }
        prev = Some(b);
    }
    Ok(())
}

/// Trapezoidal area under the curve.
pub fn auc_trapezoid(curve: &Curve) -> Result<AucReport> {
    let pts = curve.points();
    if pts.len() < 2 {
        return Err(Error::invalid("AUC needs at least two points"));
    }
    let auc: f64 = pts
        .windows(2)
        .map(|w| (w[1].budget - w[0].budget) * (w[0].mean_quality + w[1].mean_quality) / 2.0)
        .sum();
    let span = pts[pts.len() - 1].budget - pts[0].budget;
    Ok(AucReport {
        auc,
        normalized: auc / span,
    })
}

/// `points` evenly spaced budgets from the cheapest to the dearest
/// available model.
pub fn budget_grid(registry: &ModelRegistry, points: usize) -> Result<Vec<f64>> {
    let (lo, hi) = match (registry.min_cost(), registry.max_cost()) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => return Err(Error::NoAvailableModels),
    };
    if points < 2 {
        return Err(Error::config("budget grid needs at least 2 points"));
    }
    if hi <= lo {
        return Err(Error::config(
            "all available models cost the same; the budget axis is degenerate",
        ));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    grid[points - 1] = hi;
    Ok(grid)
}
