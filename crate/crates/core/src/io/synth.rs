//! Synthetic shapes with analytic normals: desk-scale stand-ins for scanned
//! datasets, plus sharp-feature stressors.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::{Error, Result};

/// Geometry ties closer than this to a second surface element are flagged
/// ambiguous.
const AMBIG_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShapeKind {
    Sphere {
        radius: f64,
    },
    /// Axis-aligned cuboid surface; faces sampled proportionally to area.
    Cube {
        half_extents: [f64; 3],
    },
    /// Lateral surface only, no caps; axis along z.
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// Axis along z; sampling corrects for the area density in the tube
    /// angle.
    Torus {
        major_radius: f64,
        minor_radius: f64,
    },
    /// Two rectangular half-planes meeting along the x-axis at the given
    /// dihedral angle (180 = flat). The sharp-feature stressor.
    CreasedPlane {
        half_width: f64,
        half_depth: f64,
        dihedral_deg: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShapeSpec {
    pub kind: ShapeKind,
    pub count: usize,
    pub seed: u64,
}

/// Generated cloud plus per-point ambiguity flags (edge/crease points whose
/// true normal is ill-defined; they carry the nearest face's normal).
#[derive(Clone, Debug)]
pub struct SynthCloud {
    pub cloud: PointCloud,
    pub ambiguous: Vec<bool>,
}

fn validate(spec: &SyntheticShapeSpec) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidArgument(msg));
    if spec.count < 1 {
        return bad("point count must be at least 1".into());
    }
    match &spec.kind {
        ShapeKind::Sphere { radius } => {
            if *radius <= 0.0 {
                return bad(format!("radius must be positive, got {}", radius));
            }
        }
        ShapeKind::Cube { half_extents } => {
            if half_extents.iter().any(|&e| e <= 0.0) {
                return bad(format!("half extents must be positive, got {:?}", half_extents));
            }
        }
        ShapeKind::Cylinder { radius, height } => {
            if *radius <= 0.0 || *height <= 0.0 {
                return bad("cylinder radius and height must be positive".into());
            }
        }
        ShapeKind::Torus {
            major_radius,
            minor_radius,
        } => {
            if *minor_radius <= 0.0 || *major_radius <= *minor_radius {
                return bad(format!(
                    "torus needs 0 < minor {} < major {}",
                    minor_radius, major_radius
                ));
            }
        }
        ShapeKind::CreasedPlane {
            half_width,
            half_depth,
            dihedral_deg,
        } => {
            if *half_width <= 0.0 || *half_depth <= 0.0 {
                return bad("creased plane extents must be positive".into());
            }
            if !(*dihedral_deg > 0.0 && *dihedral_deg < 360.0) {
                return bad(format!(
                    "dihedral angle must be in (0, 360), got {}",
                    dihedral_deg
                ));
            }
        }
    }
    Ok(())
}

/// Deterministic surface sampler: the same spec always produces bit-identical
/// output.
pub fn synth_shape(spec: &SyntheticShapeSpec) -> Result<SynthCloud> {
    validate(spec)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n = spec.count;
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut ambiguous = vec![false; n];

    match &spec.kind {
        ShapeKind::Sphere { radius } => {
            for _ in 0..n {
                let d: [f64; 3] = UnitSphere.sample(&mut rng);
                let dir = Vector3::new(d[0], d[1], d[2]);
                points.push(dir * *radius);
                normals.push(dir);
            }
        }
        ShapeKind::Cube { half_extents } => {
            let he = Vector3::new(half_extents[0], half_extents[1], half_extents[2]);
            // Face order: +x, -x, +y, -y, +z, -z.
            let areas = [
                he.y * he.z,
                he.y * he.z,
                he.x * he.z,
                he.x * he.z,
                he.x * he.y,
                he.x * he.y,
            ];
            let total: f64 = areas.iter().sum();
            for i in 0..n {
                let mut u = rng.random_range(0.0..total);
                let mut face = 0;
                for (f, a) in areas.iter().enumerate() {
                    if u < *a || f == 5 {
                        face = f;
                        break;
                    }
                    u -= a;
                }
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut p = Vector3::zeros();
                p[axis] = sign * he[axis];
                p[a1] = rng.random_range(-he[a1]..he[a1]);
                p[a2] = rng.random_range(-he[a2]..he[a2]);
                let mut normal = Vector3::zeros();
                normal[axis] = sign;
                // Distance to the closest face other than the sampled one.
                let second = (he[a1] - p[a1].abs()).min(he[a2] - p[a2].abs());
                ambiguous[i] = second < AMBIG_TOL;
                points.push(p);
                normals.push(normal);
            }
        }
        ShapeKind::Cylinder { radius, height } => {
            for _ in 0..n {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(-height / 2.0..height / 2.0);
                points.push(Vector3::new(radius * t.cos(), radius * t.sin(), z));
                normals.push(Vector3::new(t.cos(), t.sin(), 0.0));
            }
        }
        ShapeKind::Torus {
            major_radius: big_r,
            minor_radius: r,
        } => {
            // Surface area density along the tube angle v is proportional to
            // R + r cos v; accept/reject keeps sampling uniform over area.
            for _ in 0..n {
                let (u, v) = loop {
                    let u = rng.random_range(0.0..std::f64::consts::TAU);
                    let v = rng.random_range(0.0..std::f64::consts::TAU);
                    let accept = (big_r + r * v.cos()) / (big_r + r);
                    if rng.random_range(0.0..1.0) < accept {
                        break (u, v);
                    }
                };
                let ring = big_r + r * v.cos();
                points.push(Vector3::new(ring * u.cos(), ring * u.sin(), r * v.sin()));
                normals.push(Vector3::new(
                    v.cos() * u.cos(),
                    v.cos() * u.sin(),
                    v.sin(),
                ));
            }
        }
        ShapeKind::CreasedPlane {
            half_width,
            half_depth,
            dihedral_deg,
        } => {
            // Half A spans y in [0, depth] at z = 0 with normal +z; half B
            // folds about the x-axis so the faces meet at the dihedral angle.
            let beta = std::f64::consts::PI - dihedral_deg.to_radians();
            let nb = Vector3::new(0.0, beta.sin(), beta.cos());
            for i in 0..n {
                let x = rng.random_range(-half_width..*half_width);
                let s = rng.random_range(0.0..*half_depth);
                let pick_a = rng.random_range(0.0..1.0) < 0.5;
                if pick_a {
                    points.push(Vector3::new(x, s, 0.0));
                    normals.push(Vector3::z());
                } else {
                    points.push(Vector3::new(x, -s * beta.cos(), s * beta.sin()));
                    normals.push(nb);
                }
                ambiguous[i] = s < AMBIG_TOL;
            }
        }
    }

    Ok(SynthCloud {
        cloud: PointCloud::with_normals(points, normals)?,
        ambiguous,
    })
}
