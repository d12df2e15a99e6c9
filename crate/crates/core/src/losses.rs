//! Training and fine-tuning loss compositions.

use serde::{Deserialize, Serialize};

use crate::bev::{compose, BevRaster};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Weighting angle between the decision and prediction terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    alpha_deg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_deg: 60.0 }
    }
}

impl LossWeights {
    pub fn new(alpha_deg: f64) -> Result<Self> {
        if !(0.0..=90.0).contains(&alpha_deg) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0, 90] degrees, got {alpha_deg}"
            )));
        }
        Ok(Self { alpha_deg })
    }

    pub fn alpha_deg(&self) -> f64 {
        self.alpha_deg
    }

    /// (decision weight, prediction weight) = (sin alpha, cos alpha).
    pub fn weights(&self) -> (f64, f64) {
        self.alpha_deg.to_radians().sin_cos()
    }
}

/// Mean squared error over all 2N scalar entries.
pub fn decision_loss(p_de: &[Vec2], p_gt: &[Vec2]) -> Result<f64> {
    if p_de.len() != p_gt.len() || p_de.is_empty() {
        return Err(Error::invalid(format!(
            "decision shapes differ: {} vs {} rows",
            p_de.len(),
            p_gt.len()
        )));
    }
    let sum: f64 = p_de.iter().zip(p_gt).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok(sum / (2 * p_de.len()) as f64)
}

fn raster_mse(a: &BevRaster, b: &BevRaster) -> Result<f64> {
    a.same_spec(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `100 * MSE(compose(env_gt, bev_pr), bev_gt)`.
pub fn prediction_loss(env_gt: &BevRaster, bev_pr: &BevRaster, bev_gt: &BevRaster) -> Result<f64> {
    Ok(100.0 * raster_mse(&compose(env_gt, bev_pr)?, bev_gt)?)
}

/// `sin(alpha) * ld + cos(alpha) * lp`.
pub fn combined_loss(ld: f64, lp: f64, w: &LossWeights) -> f64 {
    let (s, c) = w.weights();
    s * ld + c * lp
}

/// `MSE(compose(env_er, bev_pr), bev_sm)`, without the factor 100.
pub fn finetune_loss(env_er: &BevRaster, bev_pr: &BevRaster, bev_sm: &BevRaster) -> Result<f64> {
    raster_mse(&compose(env_er, bev_pr)?, bev_sm)
}
