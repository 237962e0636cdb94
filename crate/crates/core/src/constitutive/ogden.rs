use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::ConstitutiveError;
use crate::field::symmetric_eigen;

/// N-term Ogden hyperelastic material (Abaqus convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OgdenMaterial {
    /// MPa.
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Volumetric compliances, MPa⁻¹; all zero means incompressible.
    #[serde(default)]
    pub d: Vec<f64>,
}

/// Penalty bulk modulus relative to `μ₀` used when the material is incompressible.
pub const PENALTY_BULK_RATIO: f64 = 2000.0;

/// Tolerance on `λ₁λ₂λ₃ = 1` for incompressible energy evaluation.
const INCOMPRESSIBILITY_TOL: f64 = 1e-8;

impl OgdenMaterial {
    pub fn new(mu: Vec<f64>, alpha: Vec<f64>, d: Vec<f64>) -> Result<Self, ConstitutiveError> {
        let m = Self { mu, alpha, d };
        m.validate()?;
        Ok(m)
    }

    /// Third-order rubber fit: μ = [0.0662, 5.875e-12, 0.6249] MPa, α = [2.875, 14.221, 1.0], D = 0.
    pub fn table1() -> Self {
        Self { mu: vec![0.0662, 5.875e-12, 0.6249], alpha: vec![2.875, 14.221, 1.0], d: vec![0.0, 0.0, 0.0] }
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let bad = |m: String| Err(ConstitutiveError::InvalidMaterial(m));
        if self.mu.is_empty() || self.mu.len() != self.alpha.len() {
            return bad(format!("need matching non-empty mu/alpha, got {}/{}", self.mu.len(), self.alpha.len()));
        }
        if !self.d.is_empty() && self.d.len() != self.mu.len() {
            return bad(format!("d must have {} entries or none", self.mu.len()));
        }
        if self.alpha.iter().any(|a| *a == 0.0 || !a.is_finite()) {
            return bad("every alpha must be finite and non-zero".into());
        }
        if self.mu.iter().chain(&self.d).any(|v| !v.is_finite()) || self.d.iter().any(|d| *d < 0.0) {
            return bad("mu must be finite and d non-negative".into());
        }
        if !(self.shear_modulus() > 0.0) {
            return bad(format!("ground-state shear modulus must be positive, got {}", self.shear_modulus()));
        }
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.mu.iter().copied().zip(self.alpha.iter().copied())
    }

    /// `μ₀ = Σ μᵢ`.
    pub fn shear_modulus(&self) -> f64 {
        self.mu.iter().sum()
    }

    pub fn is_incompressible(&self) -> bool {
        self.d.iter().all(|d| *d == 0.0)
    }

    /// `K = 2/D₁`, or `2000 μ₀` as penalty when incompressible.
    pub fn bulk_modulus(&self) -> f64 {
        match self.d.first() {
            Some(&d1) if d1 > 0.0 => 2.0 / d1,
            _ => PENALTY_BULK_RATIO * self.shear_modulus(),
        }
    }

    /// Volumetric energy `U(J)` with first and second derivatives.
    pub fn volumetric(&self, j: f64) -> (f64, f64, f64) {
        if self.is_incompressible() {
            let k = self.bulk_modulus();
            let e = j - 1.0;
            return (0.5 * k * e * e, k * e, k);
        }
        // U = Σ (1/Dᵢ)(J − 1)^(2i)
        let e = j - 1.0;
        let (mut u, mut du, mut ddu) = (0.0, 0.0, 0.0);
        for (idx, &d) in self.d.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let n = 2 * (idx as i32 + 1);
            u += e.powi(n) / d;
            du += n as f64 * e.powi(n - 1) / d;
            ddu += (n * (n - 1)) as f64 * e.powi(n - 2) / d;
        }
        (u, du, ddu)
    }
}

fn check_stretches(stretches: &[f64; 3]) -> Result<(), ConstitutiveError> {
    match stretches.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        Some(&l) => Err(ConstitutiveError::NonPositiveStretch(l)),
        None => Ok(()),
    }
}

/// Strain energy density (MPa) at principal stretches. With `incompressible` set, the
/// stretches must satisfy `λ₁λ₂λ₃ = 1` to within 1e-8.
pub fn ogden_energy(m: &OgdenMaterial, stretches: [f64; 3], incompressible: bool) -> Result<f64, ConstitutiveError> {
    check_stretches(&stretches)?;
    let j = stretches[0] * stretches[1] * stretches[2];
    if incompressible && (j - 1.0).abs() > INCOMPRESSIBILITY_TOL {
        return Err(ConstitutiveError::IncompressibilityViolated(j));
    }
    Ok(m.terms()
        .map(|(mu, a)| 2.0 * mu / (a * a) * (stretches.iter().map(|l| l.powf(a)).sum::<f64>() - 3.0))
        .sum())
}

/// Nominal (first Piola–Kirchhoff) stress of incompressible uniaxial tension/compression
/// at axial stretch `λ`.
pub fn ogden_uniaxial_nominal_stress(m: &OgdenMaterial, stretch: f64) -> Result<f64, ConstitutiveError> {
    if !(stretch > 0.0 && stretch.is_finite()) {
        return Err(ConstitutiveError::NonPositiveStretch(stretch));
    }
    Ok(m.terms()
        .map(|(mu, a)| 2.0 * mu / a * (stretch.powf(a - 1.0) - stretch.powf(-0.5 * a - 1.0)))
        .sum())
}

/// Principal Kirchhoff stresses `τᵢ = λᵢ ∂W/∂λᵢ − p`.
pub fn ogden_principal_kirchhoff(
    m: &OgdenMaterial,
    stretches: [f64; 3],
    pressure: f64,
) -> Result<[f64; 3], ConstitutiveError> {
    check_stretches(&stretches)?;
    let mut tau = [-pressure; 3];
    for (mu, a) in m.terms() {
        for (t, l) in tau.iter_mut().zip(&stretches) {
            *t += 2.0 * mu / a * l.powf(a);
        }
    }
    Ok(tau)
}

/// Isochoric strain energy at a deformation gradient with first Piola–Kirchhoff stress
/// and material tangent `A_{iJkL} = ∂P_{iJ}/∂F_{kL}` (row/column index `3i + J`).
#[derive(Debug, Clone)]
pub struct IsochoricResponse {
    pub energy: f64,
    pub stress: Matrix3<f64>,
    pub tangent: SMatrix<f64, 9, 9>,
}

/// Relative eigenvalue gap below which divided differences switch to the derivative.
const DEGENERATE_GAP: f64 = 1e-5;

/// `W(C̄)` with `C̄ = J^(-2/3) C`, its stress and tangent. The energy is written as
/// `Σ kᵢ (I₃^(-pᵢ/3) tr(C^pᵢ) − 3)` with `pᵢ = αᵢ/2`, whose derivatives are spectral
/// matrix functions of `C`; coalescing eigenvalues are handled by divided differences.
pub fn isochoric_response(m: &OgdenMaterial, f: &Matrix3<f64>) -> Result<IsochoricResponse, ConstitutiveError> {
    let j = f.determinant();
    if !(j > 0.0) {
        return Err(ConstitutiveError::NonPositiveStretch(j));
    }
    let c = f.transpose() * f;
    let (cv, q): (Vector3<f64>, Matrix3<f64>) = symmetric_eigen(&c);
    if cv.iter().any(|v| !(*v > 0.0)) {
        return Err(ConstitutiveError::NonPositiveStretch(cv.min()));
    }
    let i3 = cv[0] * cv[1] * cv[2];

    struct Term {
        coef: f64,
        p: f64,
        t: f64,
        pow_pm1: [f64; 3],
        gamma: Matrix3<f64>,
    }
    let mut energy = 0.0;
    let mut s_diag = Vector3::zeros();
    let mut terms = Vec::with_capacity(m.mu.len());
    for (mu, alpha) in m.terms() {
        let k = 2.0 * mu / (alpha * alpha);
        let p = 0.5 * alpha;
        let a = i3.powf(-p / 3.0);
        let pow_p = cv.map(|x| x.powf(p));
        let t = pow_p.sum();
        let pow_pm1 = [cv[0].powf(p - 1.0), cv[1].powf(p - 1.0), cv[2].powf(p - 1.0)];
        energy += k * (a * t - 3.0);
        for b in 0..3 {
            s_diag[b] += 2.0 * k * p * a * (pow_pm1[b] - t / (3.0 * cv[b]));
        }
        let mut gamma = Matrix3::zeros();
        for r in 0..3 {
            for s in 0..3 {
                let (x, y) = (cv[r], cv[s]);
                gamma[(r, s)] = if (x - y).abs() <= DEGENERATE_GAP * x.max(y) {
                    (p - 1.0) * (0.5 * (x + y)).powf(p - 2.0)
                } else {
                    (pow_pm1[r] - pow_pm1[s]) / (x - y)
                };
            }
        }
        terms.push(Term { coef: 2.0 * k * p * a, p, t, pow_pm1, gamma });
    }
    let s = q * Matrix3::from_diagonal(&s_diag) * q.transpose();
    let stress = f * s;

    // dS for a given dC, evaluated in the eigenbasis of C.
    let ds = |dc: &Matrix3<f64>| -> Matrix3<f64> {
        let d = q.transpose() * dc * q;
        let tr_cinv_d: f64 = (0..3).map(|b| d[(b, b)] / cv[b]).sum();
        let mut out = Matrix3::zeros();
        for term in &terms {
            let tr_pow_d: f64 = (0..3).map(|b| term.pow_pm1[b] * d[(b, b)]).sum();
            for r in 0..3 {
                for s in 0..3 {
                    let mut v = term.gamma[(r, s)] * d[(r, s)] + term.t / 3.0 * d[(r, s)] / (cv[r] * cv[s]);
                    if r == s {
                        v -= term.p / 3.0 * tr_cinv_d * (term.pow_pm1[r] - term.t / (3.0 * cv[r]));
                        v -= term.p / 3.0 * tr_pow_d / cv[r];
                    }
                    out[(r, s)] += term.coef * v;
                }
            }
        }
        q * out * q.transpose()
    };

    let mut tangent = SMatrix::<f64, 9, 9>::zeros();
    for k in 0..3 {
        for l in 0..3 {
            let mut df = Matrix3::zeros();
            df[(k, l)] = 1.0;
            let dc = df.transpose() * f + f.transpose() * df;
            let dp = df * s + f * ds(&dc);
            for i in 0..3 {
                for jj in 0..3 {
                    tangent[(3 * i + jj, 3 * k + l)] = dp[(i, jj)];
                }
            }
        }
    }
    // Exact symmetry of the tangent holds analytically; remove round-off asymmetry.
    let tangent = (tangent + tangent.transpose()) * 0.5;
    Ok(IsochoricResponse { energy, stress, tangent })
}
