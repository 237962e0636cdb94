use std::io::Write;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    ogden_principal_kirchhoff, ogden_uniaxial_nominal_stress, radial_return, ConstitutiveError, Material, OgdenMaterial,
    PlasticMaterial, PlasticState, StressUpdate,
};

/// Quantity a path segment ramps towards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadTarget {
    /// Full small-strain tensor (elastoplastic only).
    Strain { strain: [[f64; 3]; 3] },
    /// Axial strain under uniaxial stress; logarithmic strain for Ogden.
    AxialStrain { value: f64 },
    /// Axial stress under uniaxial stress (Cauchy stress, MPa).
    AxialStress { value: f64 },
    /// Accumulated plastic strain under monotone uniaxial tension (elastoplastic only).
    PlasticStrain { value: f64 },
    /// Axial stretch under incompressible uniaxial stress (Ogden only).
    Stretch { value: f64 },
}

/// Linear ramp from the current state to `target` in `steps` equal increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSegment {
    pub target: LoadTarget,
    pub steps: usize,
}

impl PathSegment {
    pub fn new(target: LoadTarget, steps: usize) -> Self {
        Self { target, steps }
    }
}

/// Uniaxial path that loads to first yield and then through every hardening table point.
pub fn hardening_check_path(m: &PlasticMaterial) -> Vec<PathSegment> {
    let mut path = vec![PathSegment::new(LoadTarget::AxialStress { value: m.hardening[0].0 }, 10)];
    path.extend(m.hardening.iter().skip(1).map(|&(_, ep)| PathSegment::new(LoadTarget::PlasticStrain { value: ep }, 10)));
    path
}

/// One converged point of a driven path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub step: usize,
    /// Small strain (elastoplastic) or logarithmic strain (Ogden).
    pub strain: Matrix3<f64>,
    /// Cauchy stress, MPa.
    pub stress: Matrix3<f64>,
    pub ebar_p: f64,
    /// Axial nominal stress, MPa (Ogden only).
    pub nominal: Option<f64>,
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;

/// Integrates `material` along `path`. The first record is the unloaded initial state.
pub fn matpoint_drive(material: &Material, path: &[PathSegment]) -> Result<Vec<HistoryRecord>, ConstitutiveError> {
    material.validate()?;
    match material {
        Material::Ogden(m) => drive_ogden(m, path),
        Material::Elastoplastic(m) => drive_plastic(m, path),
    }
}

fn unsupported(target: &LoadTarget, material: &str) -> ConstitutiveError {
    ConstitutiveError::UnsupportedTarget(format!("{target:?} for {material} material"))
}

fn ogden_record(m: &OgdenMaterial, step: usize, stretch: f64) -> Result<HistoryRecord, ConstitutiveError> {
    let lat = stretch.powf(-0.5);
    let free = ogden_principal_kirchhoff(m, [stretch, lat, lat], 0.0)?;
    // Lateral faces traction-free: the pressure cancels the lateral Kirchhoff stress.
    let tau = ogden_principal_kirchhoff(m, [stretch, lat, lat], free[1])?;
    let ln = stretch.ln();
    Ok(HistoryRecord {
        step,
        strain: Matrix3::from_diagonal(&Vector3::new(ln, -0.5 * ln, -0.5 * ln)),
        stress: Matrix3::from_diagonal(&Vector3::new(tau[0], 0.0, 0.0)),
        ebar_p: 0.0,
        nominal: Some(tau[0] / stretch),
    })
}

fn drive_ogden(m: &OgdenMaterial, path: &[PathSegment]) -> Result<Vec<HistoryRecord>, ConstitutiveError> {
    let mut stretch = 1.0;
    let mut out = vec![ogden_record(m, 0, stretch)?];
    for seg in path {
        let start = stretch;
        let end = match seg.target {
            LoadTarget::Stretch { value } => value,
            LoadTarget::AxialStrain { value } => value.exp(),
            LoadTarget::AxialStress { value } => {
                let step = out.len();
                solve_ogden_stretch(m, value, start, step)?
            }
            ref t => return Err(unsupported(t, "ogden")),
        };
        if !(end > 0.0 && end.is_finite()) {
            return Err(ConstitutiveError::NonPositiveStretch(end));
        }
        for k in 1..=seg.steps.max(1) {
            let t = k as f64 / seg.steps.max(1) as f64;
            stretch = start + t * (end - start);
            out.push(ogden_record(m, out.len(), stretch)?);
        }
    }
    Ok(out)
}

/// Stretch at which the uniaxial Cauchy stress `λ P(λ)` equals `target`.
fn solve_ogden_stretch(m: &OgdenMaterial, target: f64, guess: f64, step: usize) -> Result<f64, ConstitutiveError> {
    let sigma = |l: f64| ogden_uniaxial_nominal_stress(m, l).map(|p| l * p);
    let mut l = guess;
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        residual = sigma(l)? - target;
        if residual.abs() <= NEWTON_TOL * target.abs().max(1.0) {
            return Ok(l);
        }
        let h = 1e-7 * l;
        let slope = (sigma(l + h)? - sigma(l - h)?) / (2.0 * h);
        let mut next = l - residual / slope;
        if !(next > 0.0) || !next.is_finite() {
            next = 0.5 * l;
        }
        l = next;
    }
    Err(ConstitutiveError::PathInfeasible { step, residual })
}

struct PlasticDriver<'a> {
    m: &'a PlasticMaterial,
    state: PlasticState,
    stress: Matrix3<f64>,
}

impl PlasticDriver<'_> {
    fn trial(&self, strain: &Matrix3<f64>) -> Result<StressUpdate, ConstitutiveError> {
        radial_return(self.m, &self.state, &(strain - self.state.strain))
    }

    fn uniaxial(e11: f64, lat: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(e11, lat, lat))
    }

    /// Uniaxial stress at prescribed axial strain: lateral strain from `σ₂₂ = 0`.
    fn axial_strain(&self, e11: f64, step: usize) -> Result<StressUpdate, ConstitutiveError> {
        let mut lat = self.state.strain[(1, 1)];
        for _ in 0..NEWTON_MAX_ITER {
            let r = self.trial(&Self::uniaxial(e11, lat))?;
            let res = r.stress[(1, 1)];
            if res.abs() <= NEWTON_TOL {
                return Ok(r);
            }
            let slope = r.tangent[(1, 1)] + r.tangent[(1, 2)];
            lat -= res / slope;
        }
        let residual = self.trial(&Self::uniaxial(e11, lat))?.stress[(1, 1)];
        Err(ConstitutiveError::PathInfeasible { step, residual })
    }

    /// Uniaxial stress at prescribed axial stress: axial and lateral strain from a 2×2 Newton.
    fn axial_stress(&self, s11: f64, step: usize) -> Result<StressUpdate, ConstitutiveError> {
        let mut x = Vector2::new(self.state.strain[(0, 0)], self.state.strain[(1, 1)]);
        let mut residual = f64::INFINITY;
        for _ in 0..NEWTON_MAX_ITER {
            let r = self.trial(&Self::uniaxial(x[0], x[1]))?;
            let res = Vector2::new(r.stress[(0, 0)] - s11, r.stress[(1, 1)]);
            residual = res.amax();
            if residual <= NEWTON_TOL * s11.abs().max(1.0) {
                return Ok(r);
            }
            let d = &r.tangent;
            let jac = Matrix2::new(d[(0, 0)], d[(0, 1)] + d[(0, 2)], d[(1, 0)], d[(1, 1)] + d[(1, 2)]);
            match jac.try_inverse() {
                Some(inv) if inv.iter().all(|v| v.is_finite()) => x -= inv * res,
                _ => break,
            }
        }
        Err(ConstitutiveError::PathInfeasible { step, residual })
    }

    /// Monotone uniaxial tension to accumulated plastic strain `ebar`: the axial strain that
    /// reaches it is `σ_y(ebar)/E` plus the axial plastic strain after the increment.
    fn plastic_strain(&self, ebar: f64, step: usize) -> Result<StressUpdate, ConstitutiveError> {
        let sign = if self.stress[(0, 0)] < 0.0 { -1.0 } else { 1.0 };
        let dep = (ebar - self.state.ebar_p).max(0.0);
        let e11 = sign * self.m.yield_stress(ebar) / self.m.young + self.state.plastic_strain[(0, 0)] + sign * dep;
        self.axial_strain(e11, step)
    }

    fn commit(&mut self, r: StressUpdate, step: usize) -> HistoryRecord {
        self.state = r.state;
        self.stress = r.stress;
        HistoryRecord { step, strain: r.state.strain, stress: r.stress, ebar_p: r.state.ebar_p, nominal: None }
    }
}

fn drive_plastic(m: &PlasticMaterial, path: &[PathSegment]) -> Result<Vec<HistoryRecord>, ConstitutiveError> {
    let mut d = PlasticDriver { m, state: PlasticState::default(), stress: Matrix3::zeros() };
    let mut out = vec![HistoryRecord {
        step: 0,
        strain: Matrix3::zeros(),
        stress: Matrix3::zeros(),
        ebar_p: 0.0,
        nominal: None,
    }];
    for seg in path {
        let n = seg.steps.max(1);
        let strain0 = d.state.strain;
        let stress0 = d.stress[(0, 0)];
        let ebar0 = d.state.ebar_p;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            let step = out.len();
            let r = match seg.target {
                LoadTarget::Strain { strain } => {
                    let target = Matrix3::from_fn(|i, j| 0.5 * (strain[i][j] + strain[j][i]));
                    d.trial(&(strain0 + t * (target - strain0)))?
                }
                LoadTarget::AxialStrain { value } => d.axial_strain(strain0[(0, 0)] + t * (value - strain0[(0, 0)]), step)?,
                LoadTarget::AxialStress { value } => d.axial_stress(stress0 + t * (value - stress0), step)?,
                LoadTarget::PlasticStrain { value } => {
                    if value < ebar0 {
                        return Err(ConstitutiveError::UnsupportedTarget(format!(
                            "plastic strain target {value} below current {ebar0}"
                        )));
                    }
                    d.plastic_strain(ebar0 + t * (value - ebar0), step)?
                }
                ref t => return Err(unsupported(t, "elastoplastic")),
            };
            out.push(d.commit(r, step));
        }
    }
    Ok(out)
}

/// Writes `step,e11,e22,e33,e12,e23,e13,s11,s22,s33,s12,s23,s13,ebar_p,nominal`.
pub fn write_history_csv<W: Write>(mut w: W, history: &[HistoryRecord]) -> std::io::Result<()> {
    writeln!(w, "step,e11,e22,e33,e12,e23,e13,s11,s22,s33,s12,s23,s13,ebar_p,nominal")?;
    const IDX: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];
    for r in history {
        write!(w, "{}", r.step)?;
        for &(i, j) in &IDX {
            write!(w, ",{}", r.strain[(i, j)])?;
        }
        for &(i, j) in &IDX {
            write!(w, ",{}", r.stress[(i, j)])?;
        }
        write!(w, ",{}", r.ebar_p)?;
        match r.nominal {
            Some(p) => writeln!(w, ",{p}")?,
            None => writeln!(w, ",")?,
        }
    }
    Ok(())
}
