//! Synthetic experiment datasets at desk scale: mixed-shape patch sets for
//! training, crease-heavy sets for neighbourhood sweeps, and cuboid suites
//! for registration runs. Everything is a pure function of its seeds.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::cloud::{normalize_to_unit_sphere, PointCloud};
use crate::io::synth::{synth_shape, ShapeKind, SyntheticShapeSpec};
use crate::knn::{extract_patch, Patch, SpatialIndex};
use crate::{Error, Result};

/// A realized shape: unit-sphere-normalized cloud with ground-truth normals,
/// a prebuilt spatial index, and per-point ambiguity flags (edge/crease
/// points whose true normal is ill-defined).
pub struct LabeledCloud {
    pub name: String,
    pub cloud: PointCloud,
    pub index: SpatialIndex,
    pub ambiguous: Vec<bool>,
}

/// One evaluation site: a point on one cloud with its ground-truth normal.
/// Keeping the site rather than an extracted patch lets the same split be
/// re-extracted at different k.
#[derive(Clone, Debug)]
pub struct EvalPoint {
    pub cloud: usize,
    pub center: usize,
    pub gt: Vector3<f64>,
}

/// Mixed spheres, cuboids, and creased planes; `per_kind` of each. Parameter
/// variation comes from the index, point placement from derived seeds.
pub fn mixed_shape_specs(
    per_kind: usize,
    points_per_shape: usize,
    base_seed: u64,
) -> Vec<(String, SyntheticShapeSpec)> {
    let mut specs = Vec::new();
    for i in 0..per_kind {
        let f = i as f64;
        specs.push((
            format!("sphere_{}", i),
            SyntheticShapeSpec {
                kind: ShapeKind::Sphere {
                    radius: 0.6 + 0.2 * f,
                },
                count: points_per_shape,
                seed: base_seed.wrapping_add(3 * i as u64),
            },
        ));
        specs.push((
            format!("cube_{}", i),
            SyntheticShapeSpec {
                kind: ShapeKind::Cube {
                    half_extents: [0.5 + 0.12 * f, 0.45 + 0.08 * f, 0.35 + 0.1 * f],
                },
                count: points_per_shape,
                seed: base_seed.wrapping_add(3 * i as u64 + 1),
            },
        ));
        specs.push((
            format!("crease_{}", i),
            SyntheticShapeSpec {
                kind: ShapeKind::CreasedPlane {
                    half_width: 0.8,
                    half_depth: 0.6,
                    dihedral_deg: 60.0 + 25.0 * f,
                },
                count: points_per_shape,
                seed: base_seed.wrapping_add(3 * i as u64 + 2),
            },
        ));
    }
    specs
}

/// Creased planes only: the sharp-feature stressor where large
/// neighbourhoods hurt plane-fitting estimators.
pub fn crease_shape_specs(
    count: usize,
    points_per_shape: usize,
    base_seed: u64,
) -> Vec<(String, SyntheticShapeSpec)> {
    (0..count)
        .map(|i| {
            (
                format!("crease_{}", i),
                SyntheticShapeSpec {
                    kind: ShapeKind::CreasedPlane {
                        half_width: 0.8,
                        half_depth: 0.6,
                        dihedral_deg: 60.0 + 20.0 * i as f64,
                    },
                    count: points_per_shape,
                    seed: base_seed.wrapping_add(i as u64),
                },
            )
        })
        .collect()
}

/// Cuboids with varying aspect ratios for registration runs. Cuboids have no
/// continuous symmetry, so the registration ground truth is unique and the
/// point-to-point stopping threshold is reachable.
pub fn cube_shape_specs(
    count: usize,
    points_per_shape: usize,
    base_seed: u64,
) -> Vec<(String, SyntheticShapeSpec)> {
    (0..count)
        .map(|i| {
            let f = i as f64;
            (
                format!("cube_{}", i),
                SyntheticShapeSpec {
                    kind: ShapeKind::Cube {
                        half_extents: [1.0 + 0.15 * f, 0.8 - 0.05 * f, 0.6 + 0.1 * f],
                    },
                    count: points_per_shape,
                    seed: base_seed.wrapping_add(i as u64),
                },
            )
        })
        .collect()
}

/// Generates and unit-sphere-normalizes every spec.
pub fn realize_shapes(specs: &[(String, SyntheticShapeSpec)]) -> Result<Vec<LabeledCloud>> {
    specs
        .iter()
        .map(|(name, spec)| {
            let synth = synth_shape(spec)?;
            let (cloud, _, _) = normalize_to_unit_sphere(&synth.cloud)?;
            let index = SpatialIndex::build(&cloud)?;
            Ok(LabeledCloud {
                name: name.clone(),
                cloud,
                index,
                ambiguous: synth.ambiguous,
            })
        })
        .collect()
}

/// Samples `per_cloud` distinct evaluation sites per cloud, skipping
/// ambiguous points (their ground truth is arbitrary between faces).
pub fn sample_eval_points(
    clouds: &[LabeledCloud],
    per_cloud: usize,
    seed: u64,
) -> Result<Vec<EvalPoint>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for (ci, lc) in clouds.iter().enumerate() {
        let eligible: Vec<usize> = (0..lc.cloud.len())
            .filter(|&i| !lc.ambiguous[i])
            .collect();
        if eligible.len() < per_cloud {
            return Err(Error::InvalidArgument(format!(
                "cloud {} has {} unambiguous points, need {}",
                lc.name,
                eligible.len(),
                per_cloud
            )));
        }
        let normals = lc
            .cloud
            .normals()
            .ok_or_else(|| Error::InvalidArgument("cloud lacks normals".into()))?;
        for idx in rand::seq::index::sample(&mut rng, eligible.len(), per_cloud) {
            let center = eligible[idx];
            points.push(EvalPoint {
                cloud: ci,
                center,
                gt: normals[center],
            });
        }
    }
    Ok(points)
}

/// Extracts the k-neighbourhood patch at every site.
pub fn patches_at_k(
    clouds: &[LabeledCloud],
    points: &[EvalPoint],
    k: usize,
) -> Result<Vec<Patch>> {
    points
        .iter()
        .map(|p| {
            let lc = &clouds[p.cloud];
            extract_patch(&lc.cloud, &lc.index, p.center, k)
        })
        .collect()
}

/// Training pairs (patch, ground-truth normal) at fixed k.
pub fn labeled_patches(
    clouds: &[LabeledCloud],
    points: &[EvalPoint],
    k: usize,
) -> Result<Vec<(Patch, Vector3<f64>)>> {
    Ok(patches_at_k(clouds, points, k)?
        .into_iter()
        .zip(points.iter())
        .map(|(patch, p)| (patch, p.gt))
        .collect())
}
