use nalgebra::Vector3;

use super::FemError;

/// Structured mesh of trilinear hexahedra for a rectangular block.
///
/// Node `(i, j, k)` has index `i + (nx+1)(j + (ny+1)k)`; `z` is the load axis, `y = 0` the
/// tracked (camera-facing) surface.
#[derive(Debug, Clone, PartialEq)]
pub struct HexMesh {
    pub dims: [f64; 3],
    pub divisions: [usize; 3],
    pub nodes: Vec<Vector3<f64>>,
    /// Node indices per element, bottom face counter-clockwise then top face.
    pub elements: Vec<[usize; 8]>,
    pub bottom: Vec<usize>,
    pub top: Vec<usize>,
    pub front: Vec<usize>,
    /// Two bottom nodes spanning one edge, used to remove rigid in-plane motion.
    pub anchors: [usize; 2],
}

impl HexMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.divisions;
        i + (nx + 1) * (j + (ny + 1) * k)
    }

    pub fn element_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.divisions;
        i + nx * (j + ny * k)
    }

    /// Rotates every node a quarter turn counter-clockwise about the load axis through the
    /// origin, `(x, y) → (−y, x)`. Connectivity and node sets are unchanged.
    pub fn rotated_quarter_turn(&self) -> Self {
        let mut m = self.clone();
        for p in &mut m.nodes {
            *p = Vector3::new(-p.y, p.x, p.z);
        }
        m
    }

    /// Smallest reference-configuration Jacobian determinant over the element corners.
    pub fn min_corner_jacobian(&self) -> f64 {
        const NEIGHBOURS: [[usize; 3]; 8] =
            [[1, 3, 4], [2, 0, 5], [3, 1, 6], [0, 2, 7], [7, 5, 0], [4, 6, 1], [5, 7, 2], [6, 4, 3]];
        let mut min = f64::INFINITY;
        for e in &self.elements {
            for (c, nb) in NEIGHBOURS.iter().enumerate() {
                let p = self.nodes[e[c]];
                let a = self.nodes[e[nb[0]]] - p;
                let b = self.nodes[e[nb[1]]] - p;
                let h = self.nodes[e[nb[2]]] - p;
                min = min.min(a.cross(&b).dot(&h));
            }
        }
        min
    }
}

/// Block edge lengths `(Lx, Ly, Lz)` in mm used when none are configured.
pub const DEFAULT_BLOCK_DIMS: [f64; 3] = [100.0, 100.0, 200.0];
/// Default divisions: 2783 nodes and 2200 elements, elements of nearly cubic shape.
pub const DEFAULT_DIVISIONS: [usize; 3] = [10, 10, 22];

/// Structured block mesh `[0,Lx]×[0,Ly]×[0,Lz]` with `divisions` elements per axis.
pub fn build_block_mesh(dims: [f64; 3], divisions: [usize; 3]) -> Result<HexMesh, FemError> {
    if dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(FemError::DegenerateDimensions(format!("edge lengths {dims:?}")));
    }
    if divisions.iter().any(|d| *d == 0) {
        return Err(FemError::DegenerateDimensions(format!("divisions {divisions:?}")));
    }
    let [nx, ny, nz] = divisions;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Vector3::new(
                    dims[0] * i as f64 / nx as f64,
                    dims[1] * j as f64 / ny as f64,
                    dims[2] * k as f64 / nz as f64,
                ));
            }
        }
    }
    let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut elements = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                elements.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
            }
        }
    }
    let bottom = (0..=ny).flat_map(|j| (0..=nx).map(move |i| id(i, j, 0))).collect();
    let top = (0..=ny).flat_map(|j| (0..=nx).map(move |i| id(i, j, nz))).collect();
    let front = (0..=nz).flat_map(|k| (0..=nx).map(move |i| id(i, 0, k))).collect();
    Ok(HexMesh { dims, divisions, nodes, elements, bottom, top, front, anchors: [id(0, 0, 0), id(nx, 0, 0)] })
}
