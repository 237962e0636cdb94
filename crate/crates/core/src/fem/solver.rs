use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::element::{centroid_fbar, element_response, ElementGeometry, ElementResponse};
use super::skyline::SkylineMatrix;
use super::{FemError, HexMesh};
use crate::constitutive::OgdenMaterial;
use crate::field::log_strain_3d;

/// Platen contact idealization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platen {
    /// Top and bottom faces fully clamped in-plane.
    #[default]
    Bonded,
    /// Frictionless platens: only the axial displacement is prescribed, plus the minimum
    /// in-plane constraints that remove rigid-body motion.
    Lubricated,
}

/// Displacement-controlled compression along `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadProgram {
    /// Final top-face displacement, mm (negative compresses).
    pub total_displacement: f64,
    pub steps: usize,
    pub platen: Platen,
}

impl Default for LoadProgram {
    fn default() -> Self {
        Self { total_displacement: -70.0, steps: 20, platen: Platen::Bonded }
    }
}

impl LoadProgram {
    pub fn validate(&self, height: f64) -> Result<(), FemError> {
        if self.steps == 0 {
            return Err(FemError::InvalidProgram("steps must be at least 1".into()));
        }
        if !self.total_displacement.is_finite() || self.total_displacement.abs() >= height {
            return Err(FemError::InvalidProgram(format!(
                "|displacement| {} must be below the block height {height}",
                self.total_displacement
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSettings {
    /// Residual norm relative to the reaction-force norm.
    pub rel_tol: f64,
    pub max_iterations: usize,
    /// Maximum recursion depth of step bisection after a failed increment.
    pub max_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { rel_tol: 1e-8, max_iterations: 25, max_halvings: 4 }
    }
}

/// Centroid quantities of one element at a converged step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementState {
    /// F-bar deformation gradient.
    pub fbar: Matrix3<f64>,
    pub log_strain: Matrix3<f64>,
    /// Strain energy per reference volume, MPa.
    pub energy_density: f64,
    /// Current over reference element volume.
    pub jbar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub step: usize,
    pub pseudo_time: f64,
    /// Prescribed top-face displacement, mm.
    pub top_displacement: f64,
    pub displacements: Vec<Vector3<f64>>,
    pub elements: Vec<ElementState>,
    /// Axial force on the top platen, N (negative in compression).
    pub reaction: f64,
    /// Axial force on the bottom platen, N.
    pub bottom_reaction: f64,
    /// `|Σ` reactions over all constrained dofs`|` relative to the largest reaction.
    pub equilibrium_error: f64,
    /// Linear solves spent on this step, including bisected sub-steps.
    pub iterations: usize,
    /// Residual norms of the last sub-step.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemSolution {
    /// Step 0 is the undeformed state.
    pub steps: Vec<StepState>,
}

impl FemSolution {
    pub fn last(&self) -> &StepState {
        self.steps.last().expect("solution has the initial step")
    }

    /// `(u_mm, F_N)` of the top platen for every step.
    pub fn force_curve(&self) -> Vec<(f64, f64)> {
        self.steps.iter().map(|s| (s.top_displacement, s.reaction)).collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dof {
    Free(usize),
    /// Fixed at zero.
    Fixed,
    /// Follows the platen displacement.
    Platen,
}

/// Assembled nonlinear system for one mesh, material and boundary condition set.
pub struct BlockSystem<'a> {
    mesh: &'a HexMesh,
    material: &'a OgdenMaterial,
    geometry: Vec<ElementGeometry>,
    dofs: Vec<Dof>,
    free: usize,
    profile: Vec<usize>,
}

enum Failure {
    Inverted(usize),
    Diverged(Vec<f64>),
    Singular(usize),
}

struct Assembled {
    stiffness: SkylineMatrix,
    /// Internal force at every dof.
    force: Vec<f64>,
    /// `K_fc · d_c` for the supplied constrained increment, restricted to free equations.
    coupling: Vec<f64>,
}

impl<'a> BlockSystem<'a> {
    pub fn new(mesh: &'a HexMesh, material: &'a OgdenMaterial, platen: Platen) -> Result<Self, FemError> {
        material.validate()?;
        let mut geometry = Vec::with_capacity(mesh.element_count());
        for (e, conn) in mesh.elements.iter().enumerate() {
            let coords = conn.map(|n| mesh.nodes[n]);
            geometry.push(ElementGeometry::new(&coords).ok_or(FemError::ElementInverted { element: e, step: 0 })?);
        }
        let n = mesh.node_count();
        let mut dofs = vec![Dof::Free(0); 3 * n];
        match platen {
            Platen::Bonded => {
                for &node in &mesh.bottom {
                    dofs[3 * node..3 * node + 3].fill(Dof::Fixed);
                }
                for &node in &mesh.top {
                    dofs[3 * node] = Dof::Fixed;
                    dofs[3 * node + 1] = Dof::Fixed;
                    dofs[3 * node + 2] = Dof::Platen;
                }
            }
            Platen::Lubricated => {
                for &node in &mesh.bottom {
                    dofs[3 * node + 2] = Dof::Fixed;
                }
                for &node in &mesh.top {
                    dofs[3 * node + 2] = Dof::Platen;
                }
                let [a, b] = mesh.anchors;
                dofs[3 * a] = Dof::Fixed;
                dofs[3 * a + 1] = Dof::Fixed;
                // Block rotation about the load axis: fix the in-plane component normal to
                // the anchor edge.
                let edge = mesh.nodes[b] - mesh.nodes[a];
                let normal = if edge.x.abs() >= edge.y.abs() { 1 } else { 0 };
                dofs[3 * b + normal] = Dof::Fixed;
            }
        }
        let mut free = 0;
        for d in &mut dofs {
            if let Dof::Free(eq) = d {
                *eq = free;
                free += 1;
            }
        }
        let mut profile: Vec<usize> = (0..free).collect();
        for conn in &mesh.elements {
            let eqs: Vec<usize> = conn
                .iter()
                .flat_map(|&nd| (0..3).map(move |c| 3 * nd + c))
                .filter_map(|d| match dofs[d] {
                    Dof::Free(eq) => Some(eq),
                    _ => None,
                })
                .collect();
            if let Some(&min) = eqs.iter().min() {
                for &eq in &eqs {
                    profile[eq] = profile[eq].min(min);
                }
            }
        }
        Ok(Self { mesh, material, geometry, dofs, free, profile })
    }

    pub fn free_dofs(&self) -> usize {
        self.free
    }

    fn element_displacements(&self, e: usize, u: &[f64]) -> [Vector3<f64>; 8] {
        self.mesh.elements[e].map(|n| Vector3::new(u[3 * n], u[3 * n + 1], u[3 * n + 2]))
    }

    fn evaluate(&self, u: &[f64], with_stiffness: bool) -> Result<Vec<ElementResponse>, usize> {
        let results: Vec<_> = (0..self.geometry.len())
            .into_par_iter()
            .map(|e| element_response(&self.geometry[e], self.material, &self.element_displacements(e, u), with_stiffness))
            .collect();
        results.into_iter().enumerate().map(|(e, r)| r.map_err(|_| e)).collect()
    }

    /// Total strain energy and internal force vector (all dofs) at displacement `u`.
    pub fn energy_and_force(&self, u: &[f64]) -> Result<(f64, Vec<f64>), FemError> {
        let resp = self.evaluate(u, false).map_err(|e| FemError::ElementInverted { element: e, step: 0 })?;
        let mut force = vec![0.0; u.len()];
        let mut energy = 0.0;
        for (e, r) in resp.iter().enumerate() {
            energy += r.energy;
            for (a, &n) in self.mesh.elements[e].iter().enumerate() {
                for c in 0..3 {
                    force[3 * n + c] += r.force[3 * a + c];
                }
            }
        }
        Ok((energy, force))
    }

    fn assemble(&self, u: &[f64], constrained_increment: Option<&[f64]>) -> Result<Assembled, Failure> {
        let resp = self.evaluate(u, true).map_err(Failure::Inverted)?;
        let mut stiffness = SkylineMatrix::new(self.profile.clone());
        let mut force = vec![0.0; u.len()];
        let mut coupling = vec![0.0; self.free];
        for (e, r) in resp.iter().enumerate() {
            let conn = &self.mesh.elements[e];
            let k = r.stiffness.as_ref().expect("stiffness requested");
            for a in 0..24 {
                let da = 3 * conn[a / 3] + a % 3;
                force[da] += r.force[a];
                let Dof::Free(ea) = self.dofs[da] else { continue };
                for b in 0..24 {
                    let db = 3 * conn[b / 3] + b % 3;
                    match self.dofs[db] {
                        Dof::Free(eb) if eb >= ea => stiffness.add(ea, eb, k[(a, b)]),
                        Dof::Free(_) => {}
                        _ => {
                            if let Some(d) = constrained_increment {
                                coupling[ea] += k[(a, b)] * d[db];
                            }
                        }
                    }
                }
            }
        }
        Ok(Assembled { stiffness, force, coupling })
    }

    fn free_residual(&self, force: &[f64]) -> (f64, f64) {
        let (mut free, mut fixed) = (0.0, 0.0);
        for (d, f) in self.dofs.iter().zip(force) {
            match d {
                Dof::Free(_) => free += f * f,
                _ => fixed += f * f,
            }
        }
        (free.sqrt(), fixed.sqrt())
    }

    fn prescribed(&self, top: f64) -> Vec<f64> {
        self.dofs.iter().map(|d| if *d == Dof::Platen { top } else { 0.0 }).collect()
    }

    /// Newton iterations from converged `u` to platen position `top`.
    fn increment(&self, u: &mut Vec<f64>, top_old: f64, top: f64, s: &NewtonSettings) -> Result<(usize, Vec<f64>), Failure> {
        let delta: Vec<f64> = self
            .prescribed(top)
            .iter()
            .zip(self.prescribed(top_old))
            .map(|(a, b)| a - b)
            .collect();
        let mut trial = u.clone();
        let mut sys = self.assemble(&trial, Some(&delta))?;
        let scale = self.material.shear_modulus() * self.mesh.dims[0] * self.mesh.dims[1];
        let mut residuals = Vec::new();
        let mut iterations = 0;
        let mut first = true;
        loop {
            let mut rhs = vec![0.0; self.free];
            for (d, f) in self.dofs.iter().zip(&sys.force) {
                if let Dof::Free(eq) = d {
                    rhs[*eq] = -f;
                }
            }
            if first {
                for (r, c) in rhs.iter_mut().zip(&sys.coupling) {
                    *r -= c;
                }
            } else {
                let (res, reac) = self.free_residual(&sys.force);
                residuals.push(res);
                if !res.is_finite() {
                    return Err(Failure::Diverged(residuals));
                }
                if res <= s.rel_tol * reac.max(1e-12 * scale) {
                    *u = trial;
                    return Ok((iterations, residuals));
                }
                if iterations >= s.max_iterations || (residuals.len() > 3 && res > 1e3 * residuals[0]) {
                    return Err(Failure::Diverged(residuals));
                }
            }
            sys.stiffness.factorize().map_err(|z| Failure::Singular(z.equation))?;
            sys.stiffness.solve(&mut rhs);
            iterations += 1;
            for (i, d) in self.dofs.iter().enumerate() {
                match d {
                    Dof::Free(eq) => trial[i] += rhs[*eq],
                    _ if first => trial[i] += delta[i],
                    _ => {}
                }
            }
            first = false;
            sys = self.assemble(&trial, None)?;
        }
    }

    /// Solves one reported step, bisecting on failure.
    fn step(
        &self,
        u: &mut Vec<f64>,
        top_old: f64,
        top: f64,
        s: &NewtonSettings,
        depth: usize,
    ) -> Result<(usize, Vec<f64>), Failure> {
        let mut attempt = u.clone();
        match self.increment(&mut attempt, top_old, top, s) {
            Ok(r) => {
                *u = attempt;
                Ok(r)
            }
            Err(_) if depth < s.max_halvings => {
                let mid = 0.5 * (top_old + top);
                let (n1, _) = self.step(u, top_old, mid, s, depth + 1)?;
                let (n2, res) = self.step(u, mid, top, s, depth + 1)?;
                Ok((n1 + n2, res))
            }
            Err(e) => Err(e),
        }
    }

    fn state(&self, step: usize, pseudo_time: f64, top: f64, u: &[f64], iterations: usize, residuals: Vec<f64>) -> Result<StepState, FemError> {
        let (_, force) = self.energy_and_force(u)?;
        let mut elements = Vec::with_capacity(self.geometry.len());
        for (e, g) in self.geometry.iter().enumerate() {
            let ue = self.element_displacements(e, u);
            let r = element_response(g, self.material, &ue, false).map_err(|_| FemError::ElementInverted { element: e, step })?;
            let fbar = centroid_fbar(g, &ue, r.jbar);
            let log_strain = log_strain_3d(&fbar).map_err(|_| FemError::ElementInverted { element: e, step })?;
            elements.push(ElementState { fbar, log_strain, energy_density: r.energy / g.volume, jbar: r.jbar });
        }
        let sum_z = |nodes: &[usize]| nodes.iter().map(|&n| force[3 * n + 2]).sum::<f64>();
        let mut total = Vector3::<f64>::zeros();
        let mut largest: f64 = 0.0;
        for (i, d) in self.dofs.iter().enumerate() {
            if !matches!(d, Dof::Free(_)) {
                total[i % 3] += force[i];
                largest = largest.max(force[i].abs());
            }
        }
        let reaction = sum_z(&self.mesh.top);
        let equilibrium_error = if largest > 0.0 { total.norm() / largest.max(reaction.abs()) } else { 0.0 };
        Ok(StepState {
            step,
            pseudo_time,
            top_displacement: top,
            displacements: u.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
            elements,
            reaction,
            bottom_reaction: sum_z(&self.mesh.bottom),
            equilibrium_error,
            iterations,
            residuals,
        })
    }
}

/// Displacement-controlled compression of `mesh` between rigid platens.
pub fn solve_compression(
    mesh: &HexMesh,
    material: &OgdenMaterial,
    program: &LoadProgram,
    settings: &NewtonSettings,
) -> Result<FemSolution, FemError> {
    program.validate(mesh.dims[2])?;
    let system = BlockSystem::new(mesh, material, program.platen)?;
    let mut u = vec![0.0; 3 * mesh.node_count()];
    let mut steps = vec![system.state(0, 0.0, 0.0, &u, 0, Vec::new())?];
    let mut top_old = 0.0;
    for k in 1..=program.steps {
        let t = k as f64 / program.steps as f64;
        let top = t * program.total_displacement;
        let (iterations, residuals) = system.step(&mut u, top_old, top, settings, 0).map_err(|f| match f {
            Failure::Inverted(element) => FemError::ElementInverted { element, step: k },
            Failure::Diverged(residuals) => FemError::NewtonDiverged { step: k, residuals },
            Failure::Singular(equation) => FemError::SingularStiffness { step: k, equation },
        })?;
        steps.push(system.state(k, t, top, &u, iterations, residuals)?);
        top_old = top;
    }
    Ok(FemSolution { steps })
}
