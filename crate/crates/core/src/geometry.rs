//! Structured hexahedral grid over the unit box (0,1)x(0,1)x(-1,0), the
//! clamped plate grid on its top face, and the index maps between them.

use serde::Serialize;

use crate::error::{FsiError, Result};

/// Which part of the boundary a facet belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FacetTag {
    /// Elastic top face x3 = 0.
    Omega,
    /// Rigid wall: the other five faces.
    S,
}

/// A boundary facet of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facet {
    /// Cell index triple.
    pub cell: [usize; 3],
    /// Axis of the outward normal (0, 1, 2).
    pub axis: usize,
    /// `false` for the low side of the box along `axis`, `true` for the high side.
    pub high: bool,
    pub tag: FacetTag,
}

impl Facet {
    pub fn normal(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis] = if self.high { 1.0 } else { -1.0 };
        n
    }
}

/// Uniform tensor grid over the fluid box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
}

pub fn build_geometry(nx: usize, ny: usize, nz: usize) -> Result<BoxGeometry> {
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(FsiError::Geometry(format!(
            "cell counts must be at least 2 (got {nx} x {ny} x {nz})"
        )));
    }
    Ok(BoxGeometry {
        nx,
        ny,
        nz,
        hx: 1.0 / nx as f64,
        hy: 1.0 / ny as f64,
        hz: 1.0 / nz as f64,
    })
}

impl BoxGeometry {
    pub fn measure(&self) -> f64 {
        1.0
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.nx + 1) * (j + (self.ny + 1) * k)
    }

    #[inline]
    pub fn node_ijk(&self, n: usize) -> [usize; 3] {
        let i = n % (self.nx + 1);
        let r = n / (self.nx + 1);
        [i, r % (self.ny + 1), r / (self.ny + 1)]
    }

    #[inline]
    pub fn coord(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            i as f64 * self.hx,
            j as f64 * self.hy,
            -1.0 + k as f64 * self.hz,
        ]
    }

    pub fn node_coord(&self, n: usize) -> [f64; 3] {
        let [i, j, k] = self.node_ijk(n);
        self.coord(i, j, k)
    }

    /// Whether the node lies on a boundary face orthogonal to `axis`.
    pub fn on_face(&self, n: usize, axis: usize) -> bool {
        let ijk = self.node_ijk(n);
        let m = [self.nx, self.ny, self.nz][axis];
        ijk[axis] == 0 || ijk[axis] == m
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        (0..3).any(|a| self.on_face(n, a))
    }

    /// Whether the node lies on the top face x3 = 0.
    pub fn on_top(&self, n: usize) -> bool {
        self.node_ijk(n)[2] == self.nz
    }

    /// Outward normals of all boundary faces containing the node.
    pub fn node_normals(&self, n: usize) -> Vec<[f64; 3]> {
        let ijk = self.node_ijk(n);
        let m = [self.nx, self.ny, self.nz];
        let mut out = Vec::new();
        for a in 0..3 {
            if ijk[a] == 0 {
                let mut v = [0.0; 3];
                v[a] = -1.0;
                out.push(v);
            }
            if ijk[a] == m[a] {
                let mut v = [0.0; 3];
                v[a] = 1.0;
                out.push(v);
            }
        }
        out
    }

    /// Plate grid on the top face.
    pub fn plate(&self) -> PlateGrid {
        PlateGrid {
            nx: self.nx,
            ny: self.ny,
            hx: self.hx,
            hy: self.hy,
        }
    }

    pub fn trace_map(&self) -> TraceMap {
        TraceMap::new(self)
    }
}

/// Tag every boundary facet of the grid.
pub fn classify_boundary(geometry: &BoxGeometry) -> Vec<Facet> {
    let g = geometry;
    let mut out = Vec::with_capacity(2 * (g.nx * g.ny + g.nx * g.nz + g.ny * g.nz));
    for k in 0..g.nz {
        for j in 0..g.ny {
            for high in [false, true] {
                let i = if high { g.nx - 1 } else { 0 };
                out.push(Facet { cell: [i, j, k], axis: 0, high, tag: FacetTag::S });
            }
        }
    }
    for k in 0..g.nz {
        for i in 0..g.nx {
            for high in [false, true] {
                let j = if high { g.ny - 1 } else { 0 };
                out.push(Facet { cell: [i, j, k], axis: 1, high, tag: FacetTag::S });
            }
        }
    }
    for j in 0..g.ny {
        for i in 0..g.nx {
            for high in [false, true] {
                let k = if high { g.nz - 1 } else { 0 };
                let tag = if high { FacetTag::Omega } else { FacetTag::S };
                out.push(Facet { cell: [i, j, k], axis: 2, high, tag });
            }
        }
    }
    out
}

/// Plate grid with Bogner-Fox-Schmit degrees of freedom
/// (value, d/dx, d/dy, d2/dxdy) at every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateGrid {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

pub const PLATE_DOFS_PER_NODE: usize = 4;

impl PlateGrid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(FsiError::Geometry(format!(
                "plate cell counts must be at least 2 (got {nx} x {ny})"
            )));
        }
        Ok(PlateGrid {
            nx,
            ny,
            hx: 1.0 / nx as f64,
            hy: 1.0 / ny as f64,
        })
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn num_dofs(&self) -> usize {
        PLATE_DOFS_PER_NODE * self.num_nodes()
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i + (self.nx + 1) * j
    }

    #[inline]
    pub fn node_ij(&self, n: usize) -> [usize; 2] {
        [n % (self.nx + 1), n / (self.nx + 1)]
    }

    pub fn node_coord(&self, n: usize) -> [f64; 2] {
        let [i, j] = self.node_ij(n);
        [i as f64 * self.hx, j as f64 * self.hy]
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        let [i, j] = self.node_ij(n);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Full DOF indices left free by the clamped condition. All four
    /// coefficients of a boundary node are constrained: value and normal
    /// slope vanish by clamping, the tangential slope and the twist because
    /// they are tangential derivatives of vanishing traces.
    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&n| !self.is_boundary_node(n))
            .flat_map(|n| (0..PLATE_DOFS_PER_NODE).map(move |d| PLATE_DOFS_PER_NODE * n + d))
            .collect()
    }

    /// Whether a full DOF index is constrained to zero.
    pub fn is_clamped_dof(&self, dof: usize) -> bool {
        self.is_boundary_node(dof / PLATE_DOFS_PER_NODE)
    }
}

/// Correspondence between top-face fluid nodes and plate nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMap {
    /// `(fluid node, plate node)` for every node of the top face.
    pub pairs: Vec<(usize, usize)>,
    /// Weights applied to the four Hermite coefficients to obtain the
    /// nodal displacement value.
    pub weights: [f64; PLATE_DOFS_PER_NODE],
}

impl TraceMap {
    fn new(g: &BoxGeometry) -> Self {
        let plate = g.plate();
        let mut pairs = Vec::with_capacity(plate.num_nodes());
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                pairs.push((g.node(i, j, g.nz), plate.node(i, j)));
            }
        }
        TraceMap {
            pairs,
            weights: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Nodal plate values from Hermite coefficients.
    pub fn plate_values(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.pairs.len()];
        for &(_, pn) in &self.pairs {
            let base = PLATE_DOFS_PER_NODE * pn;
            let mut v = 0.0;
            for (d, w) in self.weights.iter().enumerate() {
                if *w != 0.0 {
                    v += w * coeffs[base + d];
                }
            }
            out[pn] = v;
        }
        out
    }

    /// Restriction of a fluid nodal scalar to the plate nodes.
    pub fn trace_scalar(&self, fluid: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.pairs.len()];
        for &(fnode, pn) in &self.pairs {
            out[pn] = fluid[fnode];
        }
        out
    }
}
