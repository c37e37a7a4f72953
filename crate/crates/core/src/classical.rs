//! Classical normal estimators: PCA plane fitting and order-2 jet fitting,
//! plus the symmetric 3x3 eigen-solver both rely on.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::knn::Patch;
use crate::{Error, Result};

/// Symmetric 3x3 matrix stored as its six independent entries; symmetry holds
/// by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl Sym3 {
    pub fn to_matrix(self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz, self.xy, self.yy, self.yz, self.xz, self.yz, self.zz,
        )
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy + self.zz
    }
}

/// Eigen-pairs of a symmetric 3x3 matrix, eigenvalues ascending, eigenvectors
/// orthonormal and sign-fixed (largest-magnitude component positive, ties to
/// the lowest index).
#[derive(Clone, Debug)]
pub struct EigenDecomp3 {
    pub eigenvalues: [f64; 3],
    pub eigenvectors: [Vector3<f64>; 3],
}

/// Order-2 height-function fit h(u,v) = c0 + c1 u + c2 v + c3 u^2 + c4 uv
/// + c5 v^2 over an orthonormal local frame (u, v, w).
#[derive(Clone, Debug)]
pub struct JetCoeffs {
    pub coeffs: [f64; 6],
    pub frame: [Vector3<f64>; 3],
}

/// Population covariance (divisor k) of the centered patch coordinates.
/// Eigenvectors do not depend on the divisor choice.
pub fn covariance(patch: &Patch) -> Result<Sym3> {
    if patch.k() < 3 {
        return Err(Error::DegeneratePatch);
    }
    let mut m = Sym3 {
        xx: 0.0,
        xy: 0.0,
        xz: 0.0,
        yy: 0.0,
        yz: 0.0,
        zz: 0.0,
    };
    for c in &patch.centered {
        m.xx += c.x * c.x;
        m.xy += c.x * c.y;
        m.xz += c.x * c.z;
        m.yy += c.y * c.y;
        m.yz += c.y * c.z;
        m.zz += c.z * c.z;
    }
    let inv_k = 1.0 / patch.k() as f64;
    m.xx *= inv_k;
    m.xy *= inv_k;
    m.xz *= inv_k;
    m.yy *= inv_k;
    m.yz *= inv_k;
    m.zz *= inv_k;
    Ok(m)
}

/// Cyclic Jacobi eigen-decomposition. Rotations repeat until the off-diagonal
/// norm drops below 1e-14 of the Frobenius norm; at 3x3 this converges in a
/// handful of sweeps and is stable for near-degenerate spectra.
pub fn eigh3(m: Sym3) -> EigenDecomp3 {
    let mut a = m.to_matrix();
    let mut v = Matrix3::<f64>::identity();
    let fro = a.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-14 * fro;
    for _ in 0..50 {
        let off = (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt();
        if off <= tol {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq.abs() <= tol * 1e-2 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // Apply the (p,q) Givens rotation to A on both sides and
            // accumulate into V.
            for i in 0..3 {
                let aip = a[(i, p)];
                let aiq = a[(i, q)];
                a[(i, p)] = c * aip - s * aiq;
                a[(i, q)] = s * aip + c * aiq;
            }
            for j in 0..3 {
                let apj = a[(p, j)];
                let aqj = a[(q, j)];
                a[(p, j)] = c * apj - s * aqj;
                a[(q, j)] = s * apj + c * aqj;
            }
            for i in 0..3 {
                let vip = v[(i, p)];
                let viq = v[(i, q)];
                v[(i, p)] = c * vip - s * viq;
                v[(i, q)] = s * vip + c * viq;
            }
        }
    }
    let mut pairs: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|j| (a[(j, j)], v.column(j).into_owned()))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut eigenvalues = [0.0; 3];
    let mut eigenvectors = [Vector3::zeros(); 3];
    for (i, (lambda, vec)) in pairs.into_iter().enumerate() {
        eigenvalues[i] = lambda;
        eigenvectors[i] = fix_sign(vec);
    }
    EigenDecomp3 {
        eigenvalues,
        eigenvectors,
    }
}

/// Flips the vector so its largest-magnitude component is positive; magnitude
/// ties resolve to the lowest index.
fn fix_sign(v: Vector3<f64>) -> Vector3<f64> {
    let mut pivot = 0;
    for i in 1..3 {
        if v[i].abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        -v
    } else {
        v
    }
}

/// True when every centered coordinate is negligible relative to the patch
/// position, i.e. all points coincide.
fn patch_is_coincident(patch: &Patch) -> bool {
    let scale = 1.0 + patch.centroid.norm();
    patch
        .centered
        .iter()
        .all(|c| c.norm() <= 1e-14 * scale)
}

/// Eigenvector of the patch covariance with the smallest eigenvalue;
/// unoriented, sign fixed by the eigh3 convention.
pub fn pca_normal(patch: &Patch) -> Result<Vector3<f64>> {
    if patch.k() < 3 || patch_is_coincident(patch) {
        return Err(Error::DegeneratePatch);
    }
    let decomp = eigh3(covariance(patch)?);
    Ok(decomp.eigenvectors[0].normalize())
}

/// Fits the order-2 height function over a PCA-aligned frame by damped normal
/// equations (Tikhonov 1e-12 on the diagonal). Coordinates are measured from
/// the query point so the fitted gradient at the origin is the gradient at
/// the query.
pub fn jet_fit(patch: &Patch) -> Result<JetCoeffs> {
    if patch.k() < 6 {
        return Err(Error::InsufficientJetPoints {
            need: 6,
            got: patch.k(),
        });
    }
    let w = pca_normal(patch)?;
    // Frame: u is the axis least aligned with w, orthogonalized; v completes
    // the right-handed triple.
    let seed = if w.x.abs() <= w.y.abs() && w.x.abs() <= w.z.abs() {
        Vector3::x()
    } else if w.y.abs() <= w.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let u = (seed - w * seed.dot(&w)).normalize();
    let v = w.cross(&u);

    let query = patch
        .neighbor_indices
        .iter()
        .position(|&i| i == patch.center_index)
        .map(|p| patch.centered[p])
        .unwrap_or(patch.centered[0]);
    let mut ata = Matrix6::<f64>::zeros();
    let mut ath = Vector6::<f64>::zeros();
    for c in &patch.centered {
        let d = c - query;
        let (pu, pv, h) = (u.dot(&d), v.dot(&d), w.dot(&d));
        let row = Vector6::new(1.0, pu, pv, pu * pu, pu * pv, pv * pv);
        ata += row * row.transpose();
        ath += row * h;
    }
    for i in 0..6 {
        ata[(i, i)] += 1e-12;
    }
    let chol = ata.cholesky().ok_or(Error::DegenerateJetFit)?;
    let x = chol.solve(&ath);
    Ok(JetCoeffs {
        coeffs: [x[0], x[1], x[2], x[3], x[4], x[5]],
        frame: [u, v, w],
    })
}

/// Normal of the fitted jet: normalize(-c1 u - c2 v + w); unoriented.
pub fn jet_normal(patch: &Patch) -> Result<Vector3<f64>> {
    let jet = jet_fit(patch)?;
    let [u, v, w] = jet.frame;
    let n = w - u * jet.coeffs[1] - v * jet.coeffs[2];
    Ok(n.normalize())
}
