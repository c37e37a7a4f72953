//! Point-to-plane ICP with a Levenberg-Marquardt inner solver.
//!
//! Outer loop: re-pair every source point with its nearest destination point,
//! then minimize the point-to-plane energy over a 6-DoF update with LM until
//! the step stalls, then refresh correspondences. The run stops once the
//! point-to-point energy (a sum, not a mean, so it scales with point count)
//! drops below the configured threshold.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::knn::SpatialIndex;
use crate::{Error, Result};

/// Damping beyond this is declared hopeless.
const DAMPING_CAP: f64 = 1e12;

/// SE(3) element acting as p -> R p + t.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// self after other: (self * other)(p) = self(other(p)).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Max of |R^T R - I| entries and |det R - 1|.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        gram.amax().max((self.rotation.determinant() - 1.0).abs())
    }
}

/// Rodrigues exponential of an axis-angle vector.
pub fn rotation_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = Matrix3::new(
        0.0, -omega.z, omega.y, omega.z, 0.0, -omega.x, -omega.y, omega.x, 0.0,
    );
    if theta < 1e-12 {
        return Matrix3::identity() + k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * (k * k)
}

/// Gram-Schmidt on the columns; the third column is rebuilt as a cross
/// product, so the result is a proper rotation.
fn reorthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = m.column(0).normalize();
    let mut c1 = m.column(1).into_owned();
    c1 -= c0 * c0.dot(&c1);
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Perturbation transform from per-axis angles: R = Rz * Ry * Rx, applied in
/// x-y-z order, plus a translation.
pub fn make_perturbation(angles_deg: &Vector3<f64>, translation: &Vector3<f64>) -> RigidTransform {
    let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), angles_deg.x.to_radians());
    let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), angles_deg.y.to_radians());
    let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), angles_deg.z.to_radians());
    RigidTransform {
        rotation: (rz * ry * rx).into_inner(),
        translation: *translation,
    }
}

/// Sum of squared distances between paired points.
pub fn point_to_point_energy(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    pairs: &[(usize, usize)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty correspondence list".into()));
    }
    Ok(pairs
        .iter()
        .map(|&(s, d)| (src[s] - dst[d]).norm_squared())
        .sum())
}

/// Sum of squared distances along the destination normals after transforming
/// the source.
pub fn point_to_plane_energy(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    normals_d: &[Vector3<f64>],
    pairs: &[(usize, usize)],
    transform: &RigidTransform,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty correspondence list".into()));
    }
    Ok(pairs
        .iter()
        .map(|&(s, d)| {
            let r = normals_d[d].dot(&(transform.apply(&src[s]) - dst[d]));
            r * r
        })
        .sum())
}

/// Pairs every source point with its nearest destination point; no rejection
/// filtering.
pub fn find_correspondences(
    src_transformed: &[Vector3<f64>],
    dst_index: &SpatialIndex,
) -> Vec<(usize, usize)> {
    src_transformed
        .par_iter()
        .enumerate()
        .map(|(i, p)| (i, dst_index.nearest_one(p)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct IcpConfig {
    /// Point-to-point stopping threshold on the energy sum.
    pub stop_threshold: f64,
    /// Outer iteration budget; exceeding it is reported as failure.
    pub max_iterations: usize,
    pub lm_damping_init: f64,
    pub lm_damping_up: f64,
    pub lm_damping_down: f64,
    /// Inner LM iterations per correspondence refresh.
    pub lm_max_inner: usize,
    /// Damping escalations within one solve before giving up on the step.
    pub lm_max_retries: usize,
    /// Inner loop stops once an accepted step is shorter than this.
    pub lm_step_tol: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            stop_threshold: 1e-5,
            max_iterations: 200,
            lm_damping_init: 1e-4,
            lm_damping_up: 10.0,
            lm_damping_down: 0.3,
            lm_max_inner: 50,
            lm_max_retries: 20,
            lm_step_tol: 1e-10,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_threshold > 0.0) {
            return Err(Error::InvalidConfig("stop_threshold must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.lm_damping_init >= 0.0)
            || !(self.lm_damping_up > 1.0)
            || !(self.lm_damping_down > 0.0 && self.lm_damping_down < 1.0)
        {
            return Err(Error::InvalidConfig("invalid LM damping schedule".into()));
        }
        Ok(())
    }
}

/// Outcome of one LM attempt: candidate transform, the 6-vector step
/// (rotation increment, then translation), updated damping, and whether the
/// step was accepted.
#[derive(Clone, Debug)]
pub struct LmStep {
    pub transform: RigidTransform,
    pub delta: Vector6<f64>,
    pub damping: f64,
    pub accepted: bool,
    pub energy_before: f64,
    pub energy_after: f64,
}

/// Builds the point-to-plane residual r_j = n_d . (T x_s - x_d) with its
/// Jacobian row [(y x n)^T | n^T] at y = T x_s, and solves the damped normal
/// equations (J^T J + lambda diag(J^T J)) delta = -J^T r.
///
/// Acceptance demands a strict energy decrease; the zero-residual fixed point
/// (delta = 0) is also accepted. On rejection the damping is escalated and
/// the solve retried; rank-deficient systems fall back to the minimal-norm
/// solution.
pub fn lm_solve_step(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    normals_d: &[Vector3<f64>],
    pairs: &[(usize, usize)],
    current: &RigidTransform,
    damping: f64,
    cfg: &IcpConfig,
) -> Result<LmStep> {
    if pairs.len() < 6 {
        return Err(Error::InvalidArgument(format!(
            "need at least 6 correspondences, got {}",
            pairs.len()
        )));
    }
    let energy_before = point_to_plane_energy(src, dst, normals_d, pairs, current)?;

    let mut jtj = Matrix6::<f64>::zeros();
    let mut jtr = Vector6::<f64>::zeros();
    for &(s, d) in pairs {
        let y = current.apply(&src[s]);
        let n = normals_d[d];
        let r = n.dot(&(y - dst[d]));
        let rot = y.cross(&n);
        let row = Vector6::new(rot.x, rot.y, rot.z, n.x, n.y, n.z);
        jtj += row * row.transpose();
        jtr += row * r;
    }

    let mut lambda = damping;
    for _ in 0..cfg.lm_max_retries.max(1) {
        let mut a = jtj;
        for i in 0..6 {
            a[(i, i)] += lambda * jtj[(i, i)];
        }
        let delta = match solve_spd(&a, &(-jtr)) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                lambda *= cfg.lm_damping_up;
                if lambda > DAMPING_CAP {
                    return Err(Error::SolverStalled);
                }
                continue;
            }
        };
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let dt = Vector3::new(delta[3], delta[4], delta[5]);
        let incr_rot = rotation_exp(&omega);
        let candidate = RigidTransform {
            rotation: reorthonormalize(&(incr_rot * current.rotation)),
            translation: incr_rot * current.translation + dt,
        };
        let energy_after = point_to_plane_energy(src, dst, normals_d, pairs, &candidate)?;
        if energy_after < energy_before || delta.norm() == 0.0 {
            return Ok(LmStep {
                transform: candidate,
                delta,
                damping: (lambda * cfg.lm_damping_down).max(1e-15),
                accepted: true,
                energy_before,
                energy_after,
            });
        }
        lambda *= cfg.lm_damping_up;
        if lambda > DAMPING_CAP {
            break;
        }
    }
    Ok(LmStep {
        transform: current.clone(),
        delta: Vector6::zeros(),
        damping: lambda,
        accepted: false,
        energy_before,
        energy_after: energy_before,
    })
}

/// Cholesky fast path with a minimal-norm fallback for rank-deficient
/// systems (e.g. a strictly planar cloud, where in-plane motion leaves the
/// energy flat).
fn solve_spd(a: &Matrix6<f64>, b: &Vector6<f64>) -> Option<Vector6<f64>> {
    if let Some(chol) = a.cholesky() {
        return Some(chol.solve(b));
    }
    let svd = a.svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    svd.solve(b, eps).ok()
}

#[derive(Clone, Debug)]
pub struct IterationTrace {
    /// 1-based outer iteration.
    pub iteration: usize,
    pub e_pt_pt: f64,
    pub e_pt_plane: f64,
    /// Damping after the inner solve finished.
    pub lambda: f64,
    /// Point-to-plane energy after each accepted inner step, in order.
    pub accepted_energies: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Outer iterations executed.
    pub iterations: usize,
    /// True iff the point-to-point energy dropped below the threshold.
    pub converged: bool,
    pub trace: Vec<IterationTrace>,
}

/// Registers `src` onto `dst` given destination normals. Normal signs are
/// irrelevant: the energy squares every projection.
pub fn icp(
    src: &PointCloud,
    dst: &PointCloud,
    normals_d: &[Vector3<f64>],
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    cfg.validate()?;
    if src.is_empty() || dst.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if normals_d.len() != dst.len() {
        return Err(Error::InvalidArgument(format!(
            "normal count {} != destination size {}",
            normals_d.len(),
            dst.len()
        )));
    }
    let dst_index = SpatialIndex::build(dst)?;
    let mut transform = RigidTransform::identity();
    let mut trace = Vec::new();

    for iteration in 1..=cfg.max_iterations {
        let transformed: Vec<Vector3<f64>> =
            src.points().iter().map(|p| transform.apply(p)).collect();
        let pairs = find_correspondences(&transformed, &dst_index);

        // Damping restarts fresh for each correspondence set.
        let mut lambda = cfg.lm_damping_init;
        let mut accepted_energies = Vec::new();
        for _ in 0..cfg.lm_max_inner {
            let step = lm_solve_step(
                src.points(),
                dst.points(),
                normals_d,
                &pairs,
                &transform,
                lambda,
                cfg,
            )?;
            lambda = step.damping;
            if !step.accepted {
                break;
            }
            transform = step.transform.clone();
            accepted_energies.push(step.energy_after);
            if step.delta.norm() < cfg.lm_step_tol {
                break;
            }
        }

        let e_pt_pt = pairs
            .iter()
            .map(|&(s, d)| (transform.apply(&src.points()[s]) - dst.points()[d]).norm_squared())
            .sum::<f64>();
        let e_pt_plane =
            point_to_plane_energy(src.points(), dst.points(), normals_d, &pairs, &transform)?;
        trace.push(IterationTrace {
            iteration,
            e_pt_pt,
            e_pt_plane,
            lambda,
            accepted_energies,
        });
        if !e_pt_pt.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite energy at iteration {}",
                iteration
            )));
        }
        if e_pt_pt < cfg.stop_threshold {
            return Ok(IcpResult {
                transform,
                iterations: iteration,
                converged: true,
                trace,
            });
        }
    }
    Ok(IcpResult {
        transform,
        iterations: cfg.max_iterations,
        converged: false,
        trace,
    })
}
