//! Trilinear hexahedron with mean-dilatation (F-bar) volumetric treatment.
//!
//! The element energy is `Σ_g w_g W_iso(F_g) + V·U(J̄)` with `J̄ = v/V` the ratio of current
//! to reference element volume. Because `W_iso` depends only on the isochoric part of `F`,
//! this is exactly the energy of the F-bar element `F̄ = (J̄/J)^(1/3) F`, and its Hessian is
//! symmetric.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::constitutive::{isochoric_response, OgdenMaterial};

pub type ElementVector = SVector<f64, 24>;
pub type ElementMatrix = SMatrix<f64, 24, 24>;

/// Corner signs of the reference cube `[-1,1]³`, in element node order.
pub(crate) const CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Reference-configuration shape function gradients and weights at the 2×2×2 Gauss points.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub grads: [[Vector3<f64>; 8]; 8],
    pub weights: [f64; 8],
    pub centroid_grads: [Vector3<f64>; 8],
    pub volume: f64,
}

fn natural_grads(xi: [f64; 3]) -> [Vector3<f64>; 8] {
    let mut g = [Vector3::zeros(); 8];
    for (a, c) in CORNERS.iter().enumerate() {
        let s = [1.0 + c[0] * xi[0], 1.0 + c[1] * xi[1], 1.0 + c[2] * xi[2]];
        g[a] = Vector3::new(c[0] * s[1] * s[2], s[0] * c[1] * s[2], s[0] * s[1] * c[2]) / 8.0;
    }
    g
}

/// Spatial gradients and Jacobian determinant at a natural point.
fn spatial_grads(coords: &[Vector3<f64>; 8], xi: [f64; 3]) -> Option<([Vector3<f64>; 8], f64)> {
    let nat = natural_grads(xi);
    let mut jac = Matrix3::zeros();
    for (x, g) in coords.iter().zip(&nat) {
        jac += x * g.transpose();
    }
    let det = jac.determinant();
    let inv = jac.try_inverse()?;
    let mut out = [Vector3::zeros(); 8];
    for (o, g) in out.iter_mut().zip(&nat) {
        *o = inv.transpose() * g;
    }
    Some((out, det))
}

impl ElementGeometry {
    /// `None` if the reference element is degenerate or inverted.
    pub fn new(coords: &[Vector3<f64>; 8]) -> Option<Self> {
        let q = 1.0 / 3f64.sqrt();
        let mut grads = [[Vector3::zeros(); 8]; 8];
        let mut weights = [0.0; 8];
        for (g, c) in CORNERS.iter().enumerate() {
            let (gr, det) = spatial_grads(coords, [c[0] * q, c[1] * q, c[2] * q])?;
            if !(det > 0.0) {
                return None;
            }
            grads[g] = gr;
            weights[g] = det;
        }
        let (centroid_grads, det) = spatial_grads(coords, [0.0; 3])?;
        if !(det > 0.0) {
            return None;
        }
        Some(Self { grads, weights, centroid_grads, volume: weights.iter().sum() })
    }

    pub fn deformation_gradient(grads: &[Vector3<f64>; 8], u: &[Vector3<f64>; 8]) -> Matrix3<f64> {
        let mut f = Matrix3::identity();
        for (ua, ga) in u.iter().zip(grads) {
            f += ua * ga.transpose();
        }
        f
    }
}

/// Energy, internal force and (optionally) stiffness of one element.
#[derive(Debug, Clone)]
pub struct ElementResponse {
    pub energy: f64,
    pub force: ElementVector,
    pub stiffness: Option<Box<ElementMatrix>>,
    pub jbar: f64,
}

/// Reason an element evaluation failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inverted {
    pub det: f64,
}

pub fn element_response(
    geom: &ElementGeometry,
    m: &OgdenMaterial,
    u: &[Vector3<f64>; 8],
    with_stiffness: bool,
) -> Result<ElementResponse, Inverted> {
    let mut energy = 0.0;
    let mut force = ElementVector::zeros();
    let mut stiffness = with_stiffness.then(|| Box::new(ElementMatrix::zeros()));
    let mut gvec = ElementVector::zeros();
    let mut cvecs = [[Vector3::zeros(); 8]; 8];
    let mut jw = [0.0; 8];
    let mut current_volume = 0.0;
    for g in 0..8 {
        let grads = &geom.grads[g];
        let w = geom.weights[g];
        let f = ElementGeometry::deformation_gradient(grads, u);
        let j = f.determinant();
        if !(j > 0.0) {
            return Err(Inverted { det: j });
        }
        let resp = isochoric_response(m, &f).map_err(|_| Inverted { det: j })?;
        energy += w * resp.energy;
        current_volume += w * j;
        let finv_t = f.try_inverse().ok_or(Inverted { det: j })?.transpose();
        for a in 0..8 {
            let pa = resp.stress * grads[a];
            let ca = finv_t * grads[a];
            cvecs[g][a] = ca;
            for i in 0..3 {
                force[3 * a + i] += w * pa[i];
                gvec[3 * a + i] += w * j * ca[i];
            }
        }
        jw[g] = w * j;
        if let Some(k) = stiffness.as_mut() {
            let t = &resp.tangent;
            // K_ab(i,k) = Σ_JL A[3i+J, 3k+L] ∇N_a[J] ∇N_b[L], contracted over J first.
            let mut ta = [[[0.0; 3]; 9]; 8];
            for a in 0..8 {
                for i in 0..3 {
                    for kl in 0..9 {
                        ta[a][kl][i] = (0..3).map(|jj| t[(3 * i + jj, kl)] * grads[a][jj]).sum();
                    }
                }
            }
            for a in 0..8 {
                for b in 0..8 {
                    let gb = &grads[b];
                    for i in 0..3 {
                        for kk in 0..3 {
                            let s = ta[a][3 * kk][i] * gb[0] + ta[a][3 * kk + 1][i] * gb[1] + ta[a][3 * kk + 2][i] * gb[2];
                            k[(3 * a + i, 3 * b + kk)] += w * s;
                        }
                    }
                }
            }
        }
    }
    let jbar = current_volume / geom.volume;
    let (uvol, du, ddu) = m.volumetric(jbar);
    energy += geom.volume * uvol;
    force += du * gvec;
    if let Some(k) = stiffness.as_mut() {
        **k += (ddu / geom.volume) * gvec * gvec.transpose();
        for g in 0..8 {
            let c = &cvecs[g];
            let s = du * jw[g];
            for a in 0..8 {
                for b in 0..8 {
                    for i in 0..3 {
                        for kk in 0..3 {
                            k[(3 * a + i, 3 * b + kk)] += s * (c[a][i] * c[b][kk] - c[a][kk] * c[b][i]);
                        }
                    }
                }
            }
        }
    }
    Ok(ElementResponse { energy, force, stiffness, jbar })
}

/// Centroid F-bar deformation gradient `(J̄/J_c)^(1/3) F_c`.
pub fn centroid_fbar(geom: &ElementGeometry, u: &[Vector3<f64>; 8], jbar: f64) -> Matrix3<f64> {
    let f = ElementGeometry::deformation_gradient(&geom.centroid_grads, u);
    let j = f.determinant();
    f * (jbar / j).cbrt()
}
