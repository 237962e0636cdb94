use nalgebra::{Matrix3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::ConstitutiveError;

/// Isotropic elastoplastic material with tabular isotropic hardening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlasticMaterial {
    /// Young's modulus, MPa.
    #[serde(rename = "E")]
    pub young: f64,
    pub nu: f64,
    /// Density, t/mm³.
    pub rho: f64,
    /// `(σ_y, ε_p)` pairs, MPa and dimensionless.
    pub hardening: Vec<(f64, f64)>,
}

impl PlasticMaterial {
    pub fn new(young: f64, nu: f64, rho: f64, hardening: Vec<(f64, f64)>) -> Result<Self, ConstitutiveError> {
        let m = Self { young, nu, rho, hardening };
        m.validate()?;
        Ok(m)
    }

    /// Aluminum: E = 70000 MPa, ν = 0.33, ρ = 2.7e-9 t/mm³, seven hardening points 230–266 MPa.
    pub fn table2() -> Self {
        Self {
            young: 70000.0,
            nu: 0.33,
            rho: 2.7e-9,
            hardening: vec![
                (230.0, 0.0),
                (235.0, 0.0017),
                (245.0, 0.0046),
                (252.0, 0.0064),
                (258.0, 0.0163),
                (262.0, 0.0263),
                (266.0, 0.0362),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let bad = |m: String| Err(ConstitutiveError::InvalidMaterial(m));
        if !(self.young > 0.0 && self.young.is_finite()) {
            return bad(format!("E must be positive, got {}", self.young));
        }
        if !(self.nu > -1.0 && self.nu < 0.5) {
            return bad(format!("nu must lie in (-1, 0.5), got {}", self.nu));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be non-negative, got {}", self.rho));
        }
        let Some(first) = self.hardening.first() else {
            return bad("hardening table is empty".into());
        };
        if first.1 != 0.0 || !(first.0 > 0.0) {
            return bad("hardening table must start at a positive stress with plastic strain 0".into());
        }
        for w in self.hardening.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) || !w[1].0.is_finite() || !w[1].1.is_finite() {
                return bad(format!("hardening table not strictly increasing at {:?} -> {:?}", w[0], w[1]));
            }
        }
        Ok(())
    }

    pub fn shear_modulus(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.nu))
    }

    pub fn bulk_modulus(&self) -> f64 {
        self.young / (3.0 * (1.0 - 2.0 * self.nu))
    }

    /// Flow stress at accumulated plastic strain, constant beyond the last table point.
    pub fn yield_stress(&self, ebar: f64) -> f64 {
        let h = &self.hardening;
        if ebar <= 0.0 {
            return h[0].0;
        }
        for w in h.windows(2) {
            if ebar <= w[1].1 {
                let t = (ebar - w[0].1) / (w[1].1 - w[0].1);
                return w[0].0 + t * (w[1].0 - w[0].0);
            }
        }
        h[h.len() - 1].0
    }

    /// Isotropic elasticity matrix in Mandel notation.
    pub fn elastic_matrix(&self) -> Matrix6<f64> {
        let (g, k) = (self.shear_modulus(), self.bulk_modulus());
        k * volumetric_projector() * 3.0 + 2.0 * g * deviatoric_projector()
    }
}

/// Internal state of a material point: total strain, plastic strain, accumulated plastic strain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlasticState {
    pub strain: Matrix3<f64>,
    pub plastic_strain: Matrix3<f64>,
    pub ebar_p: f64,
}

/// Result of one return-mapping step.
#[derive(Debug, Clone, Copy)]
pub struct StressUpdate {
    pub stress: Matrix3<f64>,
    pub state: PlasticState,
    /// Algorithmic tangent `dσ/dε` in Mandel notation.
    pub tangent: Matrix6<f64>,
    pub plastic: bool,
}

/// Relative overstress below which a trial state is accepted as elastic, so that
/// re-evaluating a converged plastic state does not trigger a round-off return.
const YIELD_TOL: f64 = 1e-12;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Symmetric tensor to Mandel vector `[a11, a22, a33, √2a23, √2a13, √2a12]`.
pub fn mandel(a: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        a[(0, 0)],
        a[(1, 1)],
        a[(2, 2)],
        SQRT2 * 0.5 * (a[(1, 2)] + a[(2, 1)]),
        SQRT2 * 0.5 * (a[(0, 2)] + a[(2, 0)]),
        SQRT2 * 0.5 * (a[(0, 1)] + a[(1, 0)]),
    )
}

pub fn unmandel(v: &Vector6<f64>) -> Matrix3<f64> {
    let (a23, a13, a12) = (v[3] / SQRT2, v[4] / SQRT2, v[5] / SQRT2);
    Matrix3::new(v[0], a12, a13, a12, v[1], a23, a13, a23, v[2])
}

fn volumetric_projector() -> Matrix6<f64> {
    let mut p = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            p[(i, j)] = 1.0 / 3.0;
        }
    }
    p
}

fn deviatoric_projector() -> Matrix6<f64> {
    Matrix6::identity() - volumetric_projector()
}

fn deviator(a: &Matrix3<f64>) -> Matrix3<f64> {
    a - Matrix3::identity() * (a.trace() / 3.0)
}

/// Small-strain J2 return mapping with piecewise-linear isotropic hardening.
pub fn radial_return(
    m: &PlasticMaterial,
    state: &PlasticState,
    strain_increment: &Matrix3<f64>,
) -> Result<StressUpdate, ConstitutiveError> {
    let (g, k) = (m.shear_modulus(), m.bulk_modulus());
    let de = 0.5 * (strain_increment + strain_increment.transpose());
    let strain = state.strain + de;
    let elastic = strain - state.plastic_strain;
    let vol = elastic.trace();
    let s_trial = 2.0 * g * deviator(&elastic);
    let q_trial = (1.5 * s_trial.norm_squared()).sqrt();
    let ebar = state.ebar_p;
    let f_trial = q_trial - m.yield_stress(ebar);
    if !q_trial.is_finite() {
        return Err(ConstitutiveError::NonConvergence);
    }
    if f_trial <= YIELD_TOL * m.yield_stress(ebar) {
        return Ok(StressUpdate {
            stress: s_trial + Matrix3::identity() * (k * vol),
            state: PlasticState { strain, ..*state },
            tangent: m.elastic_matrix(),
            plastic: false,
        });
    }

    // Locate the hardening segment that contains ebar + Δγ.
    let h = &m.hardening;
    let mut solution = None;
    let start = h.iter().rposition(|p| p.1 <= ebar).unwrap_or(0);
    for seg in start..h.len() {
        let (sk, ek) = h[seg];
        let (slope, end) = if seg + 1 < h.len() {
            let (s1, e1) = h[seg + 1];
            ((s1 - sk) / (e1 - ek), Some(e1))
        } else {
            (0.0, None)
        };
        // Yield stress on this segment is sk + slope (ebar + Δγ − ek).
        let dg = (q_trial - sk - slope * (ebar - ek)) / (3.0 * g + slope);
        let ebar_new = ebar + dg;
        if dg >= 0.0 && end.map_or(true, |e1| ebar_new <= e1) {
            solution = Some((dg, slope));
            break;
        }
    }
    let Some((dg, slope)) = solution else {
        return Err(ConstitutiveError::NonConvergence);
    };

    let n = s_trial * (1.5 / q_trial);
    let s = s_trial * (1.0 - 3.0 * g * dg / q_trial);
    let plastic_strain = state.plastic_strain + n * dg;
    let nm = mandel(&(s_trial / s_trial.norm()));
    let tangent = 3.0 * k * volumetric_projector()
        + 2.0 * g * (1.0 - 3.0 * g * dg / q_trial) * deviatoric_projector()
        + 6.0 * g * g * (dg / q_trial - 1.0 / (3.0 * g + slope)) * nm * nm.transpose();
    Ok(StressUpdate {
        stress: s + Matrix3::identity() * (k * vol),
        state: PlasticState { strain, plastic_strain, ebar_p: ebar + dg },
        tangent,
        plastic: true,
    })
}

/// Von Mises equivalent stress.
pub fn von_mises(stress: &Matrix3<f64>) -> f64 {
    (1.5 * deviator(stress).norm_squared()).sqrt()
}
