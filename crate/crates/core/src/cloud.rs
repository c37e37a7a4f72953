//! Point-cloud container and unit-sphere normalization.

use nalgebra::Vector3;

use crate::{Error, Result};

/// Tolerance on stored ground-truth normals: length must be within this of 1.
pub const NORMAL_UNIT_TOL: f64 = 1e-6;

/// Ordered set of 3D points with optional per-point unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            points,
            normals: None,
        }
    }

    /// Attaches normals, enforcing equal cardinality and unit length.
    pub fn with_normals(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::CountMismatch {
                path: "<memory>".into(),
                points: points.len(),
                normals: normals.len(),
            });
        }
        for (i, n) in normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > NORMAL_UNIT_TOL {
                return Err(Error::InvalidArgument(format!(
                    "normal {} has length {}, expected 1",
                    i,
                    n.norm()
                )));
            }
        }
        Ok(PointCloud {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn centroid(&self) -> Result<Vector3<f64>> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Ok(sum / self.points.len() as f64)
    }
}

/// Centers the cloud on its centroid and scales so the farthest point sits on
/// the unit sphere: q = (p - shift) / scale. Normals pass through unchanged.
/// A cloud of coincident points gets scale 1.
pub fn normalize_to_unit_sphere(cloud: &PointCloud) -> Result<(PointCloud, f64, Vector3<f64>)> {
    let shift = cloud.centroid()?;
    let max_r = cloud
        .points
        .iter()
        .map(|p| (p - shift).norm())
        .fold(0.0f64, f64::max);
    let scale = if max_r > 0.0 { max_r } else { 1.0 };
    let points = cloud.points.iter().map(|p| (p - shift) / scale).collect();
    Ok((
        PointCloud {
            points,
            normals: cloud.normals.clone(),
        },
        scale,
        shift,
    ))
}

/// Inverse of [`normalize_to_unit_sphere`]: p = q * scale + shift.
pub fn denormalize(cloud: &PointCloud, scale: f64, shift: Vector3<f64>) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|q| q * scale + shift).collect(),
        normals: cloud.normals.clone(),
    }
}
