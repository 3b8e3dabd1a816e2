//! Bogner-Fox-Schmit discretization of the clamped plate.

use rayon::prelude::*;

use crate::error::Result;
use crate::fe::{bfs_eval, gauss_legendre, BfsEval};
use crate::geometry::{PlateGrid, PLATE_DOFS_PER_NODE};
use crate::sparse::{CsrMatrix, SparseLu, Triplet};

/// Second derivatives and value of a plate field at one quadrature point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dyy: f64,
    pub dxy: f64,
}

/// Plate grid together with its quadrature tables.
#[derive(Debug, Clone)]
pub struct PlateQuadrature {
    pub grid: PlateGrid,
    /// Per quadrature point: reference coordinates, physical weight,
    /// and the 16 basis function jets.
    pub points: Vec<([f64; 2], f64, BfsEval)>,
}

impl PlateQuadrature {
    pub fn new(grid: PlateGrid, n: usize) -> Self {
        let r = gauss_legendre(n);
        let area = grid.hx * grid.hy;
        let mut points = Vec::with_capacity(n * n);
        for (b, wb) in r.points.iter().zip(&r.weights) {
            for (a, wa) in r.points.iter().zip(&r.weights) {
                let s = [*a, *b];
                points.push((s, wa * wb * area, bfs_eval(s, grid.hx, grid.hy)));
            }
        }
        PlateQuadrature { grid, points }
    }

    pub fn cells(&self) -> Vec<[usize; 2]> {
        let g = &self.grid;
        let mut v = Vec::with_capacity(g.nx * g.ny);
        for j in 0..g.ny {
            for i in 0..g.nx {
                v.push([i, j]);
            }
        }
        v
    }

    /// Global full DOF indices of the 16 local functions of a cell.
    pub fn cell_dofs(&self, cell: [usize; 2]) -> [usize; 16] {
        let mut out = [0; 16];
        for a in 0..4 {
            let node = self.grid.node(cell[0] + (a & 1), cell[1] + ((a >> 1) & 1));
            for d in 0..4 {
                out[4 * a + d] = PLATE_DOFS_PER_NODE * node + d;
            }
        }
        out
    }

    pub fn physical_point(&self, cell: [usize; 2], s: [f64; 2]) -> [f64; 2] {
        [
            (cell[0] as f64 + s[0]) * self.grid.hx,
            (cell[1] as f64 + s[1]) * self.grid.hy,
        ]
    }

    /// Jets of a full coefficient vector at every quadrature point of a cell.
    pub fn jets(&self, coeffs: &[f64], cell: [usize; 2]) -> Vec<Jet> {
        let dofs = self.cell_dofs(cell);
        self.points
            .iter()
            .map(|(_, _, e)| {
                let mut j = Jet::default();
                for l in 0..16 {
                    let c = coeffs[dofs[l]];
                    if c != 0.0 {
                        j.v += c * e.v[l];
                        j.dx += c * e.dx[l];
                        j.dy += c * e.dy[l];
                        j.dxx += c * e.dxx[l];
                        j.dyy += c * e.dyy[l];
                        j.dxy += c * e.dxy[l];
                    }
                }
                j
            })
            .collect()
    }

    /// Assembles a bilinear form given by a kernel on basis evaluations.
    pub fn assemble(&self, kernel: impl Fn(&BfsEval, usize, usize) -> f64 + Sync) -> CsrMatrix {
        let n = self.grid.num_dofs();
        let parts: Vec<Vec<Triplet>> = self
            .cells()
            .par_iter()
            .map(|&c| {
                let dofs = self.cell_dofs(c);
                let mut local = [[0.0; 16]; 16];
                for (_, w, e) in &self.points {
                    for l in 0..16 {
                        for m in 0..16 {
                            local[l][m] += w * kernel(e, l, m);
                        }
                    }
                }
                let mut t = Vec::with_capacity(256);
                for l in 0..16 {
                    for m in 0..16 {
                        t.push((dofs[l], dofs[m], local[l][m]));
                    }
                }
                t
            })
            .collect();
        CsrMatrix::from_triplets(n, n, parts.into_iter().flatten().collect())
    }

    /// Load vector (f, phi_l) for a function of the physical coordinates.
    pub fn load(&self, f: impl Fn([f64; 2]) -> f64 + Sync) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.num_dofs()];
        for c in self.cells() {
            let dofs = self.cell_dofs(c);
            for (s, w, e) in &self.points {
                let fv = f(self.physical_point(c, *s));
                for l in 0..16 {
                    out[dofs[l]] += w * fv * e.v[l];
                }
            }
        }
        out
    }

    /// L2 norm of (w_h - w) for a coefficient vector and an exact function.
    pub fn l2_error(&self, coeffs: &[f64], exact: impl Fn([f64; 2]) -> f64) -> f64 {
        let mut s = 0.0;
        for c in self.cells() {
            let jets = self.jets(coeffs, c);
            for ((p, w, _), j) in self.points.iter().zip(jets) {
                let e = j.v - exact(self.physical_point(c, *p));
                s += w * e * e;
            }
        }
        s.sqrt()
    }
}

/// BFS interpolant from (value, d/dx, d/dy, d2/dxdy) of a function.
pub fn bfs_interpolate(grid: &PlateGrid, f: impl Fn([f64; 2]) -> [f64; 4]) -> Vec<f64> {
    let mut out = vec![0.0; grid.num_dofs()];
    for n in 0..grid.num_nodes() {
        let v = f(grid.node_coord(n));
        out[PLATE_DOFS_PER_NODE * n..PLATE_DOFS_PER_NODE * (n + 1)].copy_from_slice(&v);
    }
    out
}

/// Interpolant with clamped DOFs forced to zero.
pub fn bfs_interpolate_clamped(grid: &PlateGrid, f: impl Fn([f64; 2]) -> [f64; 4]) -> Vec<f64> {
    let mut out = bfs_interpolate(grid, f);
    for (d, v) in out.iter_mut().enumerate() {
        if grid.is_clamped_dof(d) {
            *v = 0.0;
        }
    }
    out
}

/// Plate matrices on the full BFS space together with the clamped
/// (free DOF) restrictions and a factorization of the clamped biharmonic.
#[derive(Debug)]
pub struct PlateSpace {
    pub quad: PlateQuadrature,
    pub free: Vec<usize>,
    /// Position of each full DOF in `free`, if it is free.
    pub free_index: Vec<Option<usize>>,
    /// (Delta phi_l, Delta phi_m) on the full space.
    pub k_bih: CsrMatrix,
    /// (phi_l, phi_m) on the full space.
    pub mass: CsrMatrix,
    pub k_free: CsrMatrix,
    pub m_free: CsrMatrix,
    pub k_lu: SparseLu,
}

impl PlateSpace {
    pub fn new(grid: PlateGrid) -> Result<Self> {
        let quad = PlateQuadrature::new(grid, 4);
        let k_bih = quad.assemble(|e, l, m| (e.dxx[l] + e.dyy[l]) * (e.dxx[m] + e.dyy[m]));
        let mass = quad.assemble(|e, l, m| e.v[l] * e.v[m]);
        let free = grid.free_dofs();
        let mut free_index = vec![None; grid.num_dofs()];
        for (k, &d) in free.iter().enumerate() {
            free_index[d] = Some(k);
        }
        let k_free = k_bih.select(&free, &free);
        let m_free = mass.select(&free, &free);
        let k_lu = SparseLu::new(&k_free, "clamped biharmonic")?;
        Ok(PlateSpace {
            quad,
            free,
            free_index,
            k_bih,
            mass,
            k_free,
            m_free,
            k_lu,
        })
    }

    pub fn grid(&self) -> &PlateGrid {
        &self.quad.grid
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| full[d]).collect()
    }

    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid().num_dofs()];
        for (k, &d) in self.free.iter().enumerate() {
            out[d] = free[k];
        }
        out
    }

    /// Clamped solve K_bih w = load (load given on the full space).
    pub fn solve_biharmonic(&self, load_full: &[f64]) -> Vec<f64> {
        self.expand(&self.k_lu.solve(&self.restrict(load_full)))
    }

    /// (Delta w, Delta z)
    pub fn laplace_product(&self, w: &[f64], z: &[f64]) -> f64 {
        self.k_bih.quad_form(w, z)
    }

    /// Load of a unit constant pressure: (1, phi_l).
    pub fn unit_load(&self) -> Vec<f64> {
        let mut l = self.quad.load(|_| 1.0);
        for (d, v) in l.iter_mut().enumerate() {
            if self.free_index[d].is_none() {
                *v = 0.0;
            }
        }
        l
    }
}

/// Bubble b(x, y) = x^2 (1-x)^2 y^2 (1-y)^2 with the derivatives used by
/// the BFS interpolant and its bilaplacian.
pub mod bubble {
    fn q(t: f64) -> [f64; 5] {
        // t^2 (1-t)^2 and its derivatives up to order 4
        [
            t * t * (1.0 - t) * (1.0 - t),
            2.0 * t - 6.0 * t * t + 4.0 * t * t * t,
            2.0 - 12.0 * t + 12.0 * t * t,
            -12.0 + 24.0 * t,
            24.0,
        ]
    }

    pub fn hermite(p: [f64; 2]) -> [f64; 4] {
        let (a, b) = (q(p[0]), q(p[1]));
        [a[0] * b[0], a[1] * b[0], a[0] * b[1], a[1] * b[1]]
    }

    pub fn value(p: [f64; 2]) -> f64 {
        q(p[0])[0] * q(p[1])[0]
    }

    pub fn laplacian(p: [f64; 2]) -> f64 {
        let (a, b) = (q(p[0]), q(p[1]));
        a[2] * b[0] + a[0] * b[2]
    }

    pub fn bilaplacian(p: [f64; 2]) -> f64 {
        let (a, b) = (q(p[0]), q(p[1]));
        a[4] * b[0] + 2.0 * a[2] * b[2] + a[0] * b[4]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_integrates_one() {
        let g = PlateGrid::new(3, 5).unwrap();
        let ps = PlateSpace::new(g).unwrap();
        let one = bfs_interpolate(&g, |_| [1.0, 0.0, 0.0, 0.0]);
        assert!((ps.mass.quad_form(&one, &one) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn biharmonic_energy_of_bubble() {
        // |Delta b|^2 integrates to 2 m2 m0 + 2 m1^2 with the one-dimensional
        // moments of q = t^2 (1-t)^2
        let m0 = 1.0 / 630.0; // int q^2
        let m1 = 2.0 / 105.0; // int q'^2 = -int q q''
        let m2 = 4.0 / 5.0; // int q''^2
        let exact = 2.0 * m2 * m0 + 2.0 * m1 * m1;
        let mut errs = Vec::new();
        for n in [4, 8, 16] {
            let g = PlateGrid::new(n, n).unwrap();
            let ps = PlateSpace::new(g).unwrap();
            let w = bfs_interpolate_clamped(&g, bubble::hermite);
            errs.push((ps.k_bih.quad_form(&w, &w) - exact).abs() / exact);
        }
        assert!(errs[2] < 1e-3, "{errs:?}");
        assert!(errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn unit_load_matches_interior_cell_area() {
        let g = PlateGrid::new(4, 4).unwrap();
        let ps = PlateSpace::new(g).unwrap();
        let l = ps.unit_load();
        for n in 0..g.num_nodes() {
            let v = l[4 * n];
            if g.is_boundary_node(n) {
                assert_eq!(v, 0.0);
            } else {
                assert!((v - g.hx * g.hy).abs() < 1e-15);
            }
        }
    }
}
