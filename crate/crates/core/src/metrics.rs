//! Unoriented angle error and its two summaries, RMSE and PGP-alpha.

use std::io::Write;

use nalgebra::Vector3;

use crate::{Error, Result};

/// Unoriented angle between two directions in degrees: arccos of the absolute
/// cosine similarity, so antiparallel vectors score 0. The cosine is clamped
/// into [-1, 1] before arccos; unit-vector dot products can exceed 1 by a few
/// ulps.
pub fn unoriented_angle_deg(pred: &Vector3<f64>, gt: &Vector3<f64>) -> Result<f64> {
    let np = pred.norm();
    let ng = gt.norm();
    if np == 0.0 || ng == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = (pred.dot(gt).abs() / (np * ng)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Per-point angle errors in degrees, aligned with point indices.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleErrorSet {
    values: Vec<f64>,
}

impl AngleErrorSet {
    /// Wraps precomputed errors; every value must lie in [0, 90].
    pub fn from_degrees(values: Vec<f64>) -> Result<Self> {
        for (i, &b) in values.iter().enumerate() {
            if !(0.0..=90.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "angle error {} out of [0, 90]: {}",
                    i, b
                )));
            }
        }
        Ok(AngleErrorSet { values })
    }

    /// Computes errors for aligned prediction/ground-truth pairs.
    pub fn compute(preds: &[Vector3<f64>], gts: &[Vector3<f64>]) -> Result<Self> {
        if preds.len() != gts.len() {
            return Err(Error::InvalidArgument(format!(
                "prediction count {} != ground-truth count {}",
                preds.len(),
                gts.len()
            )));
        }
        let values = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| unoriented_angle_deg(p, g))
            .collect::<Result<_>>()?;
        Ok(AngleErrorSet { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Root mean square of the angle errors, degrees.
    pub fn rmse(&self) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("empty error set".into()));
        }
        let mean_sq =
            self.values.iter().map(|b| b * b).sum::<f64>() / self.values.len() as f64;
        Ok(mean_sq.sqrt())
    }

    /// Fraction of points with error strictly below `alpha` degrees.
    pub fn pgp(&self, alpha: f64) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("empty error set".into()));
        }
        if alpha <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {}",
                alpha
            )));
        }
        let good = self.values.iter().filter(|&&b| b < alpha).count();
        Ok(good as f64 / self.values.len() as f64)
    }

    /// Writes `index,beta_deg` rows with a header.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "index,beta_deg")?;
        for (i, b) in self.values.iter().enumerate() {
            writeln!(w, "{},{:.12e}", i, b)?;
        }
        Ok(())
    }

    /// One-line summary: `rmse_deg=... pgp5=... pgp10=...`.
    pub fn summary(&self) -> Result<String> {
        Ok(format!(
            "rmse_deg={:.4} pgp5={:.4} pgp10={:.4}",
            self.rmse()?,
            self.pgp(5.0)?,
            self.pgp(10.0)?
        ))
    }
}
