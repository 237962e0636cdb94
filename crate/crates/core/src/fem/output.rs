use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{FemError, FemSolution, HexMesh, StepState};
use crate::field::{Axis, Grid2D};
use crate::strain::LogStrainField;

/// Placement of the tracked face (`y = 0`) in image coordinates: image `x` grows with `X`,
/// image `y` grows downwards from the top face, `y_img = oy + (Lz − Z)·scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceImageMap {
    /// Pixels per millimetre.
    pub scale: f64,
    /// Image position of the face's top-left corner `(X = 0, Z = Lz)`, pixels.
    pub origin: [f64; 2],
}

impl FaceImageMap {
    /// Map that fits the face into a `width × height` image with `margin` pixels on every side.
    pub fn fit(mesh: &HexMesh, width: usize, height: usize, margin: f64) -> Self {
        let [lx, _, lz] = mesh.dims;
        let scale = ((width as f64 - 2.0 * margin) / lx).min((height as f64 - 2.0 * margin) / lz);
        let origin = [0.5 * (width as f64 - scale * lx), 0.5 * (height as f64 - scale * lz)];
        Self { scale, origin }
    }

    /// Reference face coordinates `(X, Z)` of an image point.
    pub fn to_face(&self, lz: f64, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.origin[0]) / self.scale, lz - (p[1] - self.origin[1]) / self.scale]
    }
}

/// Face log strains of one converged step, resampled at `grid` points.
///
/// Each element on the tracked face contributes the in-plane components of its centroid log
/// strain, expressed in image axes (`x` along `X`, `y` against `Z`). Element values are
/// averaged onto face nodes and interpolated at grid points by inverse distance over the
/// vertices of the enclosing face triangle.
pub fn extract_surface_strains(
    mesh: &HexMesh,
    step: &StepState,
    grid: &Grid2D,
    map: &FaceImageMap,
    axis: Axis,
) -> Result<LogStrainField, FemError> {
    let [nx, _, nz] = mesh.divisions;
    let [lx, _, lz] = mesh.dims;
    let (dx, dz) = (lx / nx as f64, lz / nz as f64);

    let mut nodal = vec![[0.0; 3]; (nx + 1) * (nz + 1)];
    let mut count = vec![0u32; (nx + 1) * (nz + 1)];
    for k in 0..nz {
        for i in 0..nx {
            let h = step.elements[mesh.element_index(i, 0, k)].log_strain;
            let hv = [h[(0, 0)], h[(2, 2)], -h[(0, 2)]];
            for (ii, kk) in [(i, k), (i + 1, k), (i + 1, k + 1), (i, k + 1)] {
                let n = ii + (nx + 1) * kk;
                for c in 0..3 {
                    nodal[n][c] += hv[c];
                }
                count[n] += 1;
            }
        }
    }
    for (v, c) in nodal.iter_mut().zip(&count) {
        v.iter_mut().for_each(|x| *x /= *c as f64);
    }

    let tol = 1e-9 * lx.max(lz);
    let mut values = Vec::with_capacity(grid.len());
    for p in grid.points() {
        let [x, z] = map.to_face(lz, p);
        if x < -tol || x > lx + tol || z < -tol || z > lz + tol {
            return Err(FemError::GridOutsideFace { x: p[0], y: p[1] });
        }
        let i = ((x / dx).floor().max(0.0) as usize).min(nx - 1);
        let k = ((z / dz).floor().max(0.0) as usize).min(nz - 1);
        let xi = x / dx - i as f64;
        let eta = z / dz - k as f64;
        let corners = if eta <= xi {
            [(0, 0), (1, 0), (1, 1)]
        } else {
            [(0, 0), (1, 1), (0, 1)]
        };
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        let mut exact = None;
        for (ci, ck) in corners {
            let d = ((xi - ci as f64) * dx).hypot((eta - ck as f64) * dz);
            let v = nodal[(i + ci) + (nx + 1) * (k + ck)];
            if d < 1e-12 * dx {
                exact = Some(v);
                break;
            }
            let w = 1.0 / d;
            for c in 0..3 {
                acc[c] += w * v[c];
            }
            wsum += w;
        }
        values.push(Some(exact.unwrap_or(acc.map(|a| a / wsum))));
    }
    Ok(LogStrainField::from_tensors(*grid, axis, values))
}

/// Legacy ASCII VTK unstructured grid of the reference mesh with nodal displacements and
/// element centroid fields.
pub fn write_vtk<W: Write>(mut w: W, mesh: &HexMesh, step: &StepState) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "strainlab block step {} u = {} mm", step.step, step.top_displacement)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.node_count())?;
    for p in &mesh.nodes {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    writeln!(w, "CELLS {} {}", mesh.element_count(), 9 * mesh.element_count())?;
    for e in &mesh.elements {
        writeln!(w, "8 {} {} {} {} {} {} {} {}", e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7])?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.element_count())?;
    for _ in &mesh.elements {
        writeln!(w, "12")?;
    }
    writeln!(w, "POINT_DATA {}", mesh.node_count())?;
    writeln!(w, "VECTORS displacement double")?;
    for u in &step.displacements {
        writeln!(w, "{} {} {}", u.x, u.y, u.z)?;
    }
    writeln!(w, "CELL_DATA {}", mesh.element_count())?;
    writeln!(w, "TENSORS log_strain double")?;
    for e in &step.elements {
        let h = &e.log_strain;
        writeln!(w, "{} {} {}", h[(0, 0)], h[(0, 1)], h[(0, 2)])?;
        writeln!(w, "{} {} {}", h[(1, 0)], h[(1, 1)], h[(1, 2)])?;
        writeln!(w, "{} {} {}", h[(2, 0)], h[(2, 1)], h[(2, 2)])?;
    }
    for (name, get) in [
        ("energy_density", (|e: &super::ElementState| e.energy_density) as fn(&super::ElementState) -> f64),
        ("jbar", |e| e.jbar),
    ] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for e in &step.elements {
            writeln!(w, "{}", get(e))?;
        }
    }
    Ok(())
}

/// `step,pseudo_time,u_mm,F_N` for every step of the solution.
pub fn write_force_csv<W: Write>(mut w: W, sol: &FemSolution) -> std::io::Result<()> {
    writeln!(w, "step,pseudo_time,u_mm,F_N")?;
    for s in &sol.steps {
        writeln!(w, "{},{},{},{}", s.step, s.pseudo_time, s.top_displacement, s.reaction)?;
    }
    Ok(())
}
