//! Galerkin assembly of the fluid-side matrices on the hexahedral grid.

use rayon::prelude::*;

use crate::ambient::AmbientField;
use crate::fe::{gauss_legendre, q1_ref_grads, q1_values};
use crate::geometry::BoxGeometry;
use crate::sparse::{CsrMatrix, Triplet};

/// Continuous trilinear scalar space on a grid coarsened by `ratio` from
/// the geometry grid. Ratio 1 is the geometry grid itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSpace {
    pub geometry: BoxGeometry,
    pub ratio: usize,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

/// Shape data of the eight trilinear functions of the enclosing coarse
/// cell at one point.
#[derive(Debug, Clone, Copy)]
pub struct ScalarEval {
    pub nodes: [usize; 8],
    pub vals: [f64; 8],
    pub grads: [[f64; 3]; 8],
}

impl ScalarSpace {
    pub fn new(geometry: &BoxGeometry, ratio: usize) -> Option<Self> {
        let g = *geometry;
        if ratio == 0 || g.nx % ratio != 0 || g.ny % ratio != 0 || g.nz % ratio != 0 {
            return None;
        }
        Some(ScalarSpace {
            geometry: g,
            ratio,
            nx: g.nx / ratio,
            ny: g.ny / ratio,
            nz: g.nz / ratio,
        })
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.nx + 1) * (j + (self.ny + 1) * k)
    }

    pub fn node_ijk(&self, n: usize) -> [usize; 3] {
        let i = n % (self.nx + 1);
        let r = n / (self.nx + 1);
        [i, r % (self.ny + 1), r / (self.ny + 1)]
    }

    pub fn node_coord(&self, n: usize) -> [f64; 3] {
        let [i, j, k] = self.node_ijk(n);
        let r = self.ratio as f64;
        let g = &self.geometry;
        [
            i as f64 * r * g.hx,
            j as f64 * r * g.hy,
            -1.0 + k as f64 * r * g.hz,
        ]
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        let [i, j, k] = self.node_ijk(n);
        i == 0 || j == 0 || k == 0 || i == self.nx || j == self.ny || k == self.nz
    }

    /// Nodal interpolant of a function.
    pub fn interpolate(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        (0..self.num_nodes()).map(|n| f(self.node_coord(n))).collect()
    }

    /// Basis data at reference point `xi` of fine cell `cell`.
    pub fn eval(&self, cell: [usize; 3], xi: [f64; 3]) -> ScalarEval {
        let r = self.ratio;
        let g = &self.geometry;
        let c = [cell[0] / r, cell[1] / r, cell[2] / r];
        let loc = [
            ((cell[0] % r) as f64 + xi[0]) / r as f64,
            ((cell[1] % r) as f64 + xi[1]) / r as f64,
            ((cell[2] % r) as f64 + xi[2]) / r as f64,
        ];
        let vals = q1_values(loc);
        let rg = q1_ref_grads(loc);
        let h = [g.hx * r as f64, g.hy * r as f64, g.hz * r as f64];
        let mut nodes = [0; 8];
        let mut grads = [[0.0; 3]; 8];
        for a in 0..8 {
            nodes[a] = self.node(c[0] + (a & 1), c[1] + ((a >> 1) & 1), c[2] + ((a >> 2) & 1));
            for d in 0..3 {
                grads[a][d] = rg[a][d] / h[d];
            }
        }
        ScalarEval { nodes, vals, grads }
    }
}

/// Tensor Gauss points on the unit cube with weights scaled to the cell volume.
pub fn cell_quadrature(g: &BoxGeometry, n: usize) -> Vec<([f64; 3], f64)> {
    let r = gauss_legendre(n);
    let vol = g.hx * g.hy * g.hz;
    let mut out = Vec::with_capacity(n * n * n);
    for (c, wc) in r.points.iter().zip(&r.weights) {
        for (b, wb) in r.points.iter().zip(&r.weights) {
            for (a, wa) in r.points.iter().zip(&r.weights) {
                out.push(([*a, *b, *c], wa * wb * wc * vol));
            }
        }
    }
    out
}

fn cells(g: &BoxGeometry) -> Vec<[usize; 3]> {
    let mut v = Vec::with_capacity(g.num_cells());
    for k in 0..g.nz {
        for j in 0..g.ny {
            for i in 0..g.nx {
                v.push([i, j, k]);
            }
        }
    }
    v
}

/// Runs an element kernel over every fine cell in parallel and gathers the
/// triplets in cell order, so the assembled matrix is independent of the
/// thread count.
pub fn assemble_cells<F>(g: &BoxGeometry, nrows: usize, ncols: usize, kernel: F) -> CsrMatrix
where
    F: Fn([usize; 3], &mut Vec<Triplet>) + Sync,
{
    let parts: Vec<Vec<Triplet>> = cells(g)
        .par_iter()
        .map(|&c| {
            let mut t = Vec::new();
            kernel(c, &mut t);
            t
        })
        .collect();
    CsrMatrix::from_triplets(nrows, ncols, parts.into_iter().flatten().collect())
}

pub fn scalar_mass(space: &ScalarSpace) -> CsrMatrix {
    let q = cell_quadrature(&space.geometry, 2);
    let n = space.num_nodes();
    assemble_cells(&space.geometry, n, n, |c, t| {
        for &(xi, w) in &q {
            let e = space.eval(c, xi);
            for a in 0..8 {
                for b in 0..8 {
                    t.push((e.nodes[a], e.nodes[b], w * e.vals[a] * e.vals[b]));
                }
            }
        }
    })
}

pub fn scalar_stiffness(space: &ScalarSpace) -> CsrMatrix {
    let q = cell_quadrature(&space.geometry, 2);
    let n = space.num_nodes();
    assemble_cells(&space.geometry, n, n, |c, t| {
        for &(xi, w) in &q {
            let e = space.eval(c, xi);
            for a in 0..8 {
                for b in 0..8 {
                    let gg: f64 = (0..3).map(|d| e.grads[a][d] * e.grads[b][d]).sum();
                    t.push((e.nodes[a], e.nodes[b], w * gg));
                }
            }
        }
    })
}

/// Plain Galerkin advection N[i][j] = (U.grad chi_j, chi_i) and the
/// divergence-weighted mass (div U chi_j, chi_i).
pub fn scalar_advection(space: &ScalarSpace, field: &AmbientField) -> (CsrMatrix, CsrMatrix) {
    let q = cell_quadrature(&space.geometry, 2);
    let n = space.num_nodes();
    let adv = assemble_cells(&space.geometry, n, n, |c, t| {
        for &(xi, w) in &q {
            let e = space.eval(c, xi);
            let (u, _) = field.eval(c, xi);
            for b in 0..8 {
                let ug: f64 = (0..3).map(|d| u[d] * e.grads[b][d]).sum();
                if ug == 0.0 {
                    continue;
                }
                for a in 0..8 {
                    t.push((e.nodes[a], e.nodes[b], w * ug * e.vals[a]));
                }
            }
        }
    });
    let mdiv = assemble_cells(&space.geometry, n, n, |c, t| {
        for &(xi, w) in &q {
            let e = space.eval(c, xi);
            let (_, div) = field.eval(c, xi);
            if div == 0.0 {
                continue;
            }
            for a in 0..8 {
                for b in 0..8 {
                    t.push((e.nodes[a], e.nodes[b], w * div * e.vals[a] * e.vals[b]));
                }
            }
        }
    });
    (adv, mdiv)
}

/// Skew part (N - N^T) / 2. Both entries of a transposed pair are computed
/// from the same two numbers, so C + C^T vanishes exactly.
pub fn skew_part(n: &CsrMatrix) -> CsrMatrix {
    let pattern = CsrMatrix::from_triplets(
        n.nrows,
        n.ncols,
        n.triplets()
            .flat_map(|(i, j, _)| [(i, j, 0.0), (j, i, 0.0)])
            .collect(),
    );
    let trips = pattern
        .triplets()
        .map(|(i, j, _)| (i, j, 0.5 * (n.get(i, j) - n.get(j, i))))
        .collect();
    CsrMatrix::from_triplets(n.nrows, n.ncols, trips)
}

/// Divergence pairing D[q, (c, n)] = (d phi_n / dx_c, chi_q) between the
/// velocity space (three components of `vel`, component-major) and the
/// pressure space.
pub fn divergence(vel: &ScalarSpace, pres: &ScalarSpace) -> CsrMatrix {
    let q = cell_quadrature(&vel.geometry, 2);
    let nn = vel.num_nodes();
    assemble_cells(&vel.geometry, pres.num_nodes(), 3 * nn, |c, t| {
        for &(xi, w) in &q {
            let ev = vel.eval(c, xi);
            let ep = pres.eval(c, xi);
            for a in 0..8 {
                for b in 0..8 {
                    for d in 0..3 {
                        t.push((ep.nodes[a], d * nn + ev.nodes[b], w * ev.grads[b][d] * ep.vals[a]));
                    }
                }
            }
        }
    })
}

/// Gradient pairing G[(c, n), q] = (phi_n, d chi_q / dx_c), assembled
/// independently of [`divergence`].
pub fn gradient_pairing(vel: &ScalarSpace, pres: &ScalarSpace) -> CsrMatrix {
    let q = cell_quadrature(&vel.geometry, 2);
    let nn = vel.num_nodes();
    assemble_cells(&vel.geometry, 3 * nn, pres.num_nodes(), |c, t| {
        for &(xi, w) in &q {
            let ev = vel.eval(c, xi);
            let ep = pres.eval(c, xi);
            for a in 0..8 {
                for b in 0..8 {
                    for d in 0..3 {
                        t.push((d * nn + ev.nodes[a], ep.nodes[b], w * ev.vals[a] * ep.grads[b][d]));
                    }
                }
            }
        }
    })
}

/// Fluid material constants: Lame viscosities and the zeroth-order
/// coefficient of the fluid form.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FluidParams {
    pub nu: f64,
    pub lambda: f64,
    pub eta: f64,
}

impl Default for FluidParams {
    fn default() -> Self {
        FluidParams { nu: 1.0, lambda: 0.5, eta: 1.0 }
    }
}

impl FluidParams {
    pub fn validate(&self) -> crate::error::Result<()> {
        use crate::error::FsiError;
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(FsiError::param("params.nu", format!("must satisfy nu > 0, got {}", self.nu)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(FsiError::param(
                "params.lambda_lame",
                format!("must satisfy lambda >= 0, got {}", self.lambda),
            ));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(FsiError::param("params.eta", format!("must satisfy eta > 0, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Stress form (sigma(u), eps(psi)) with sigma = 2 nu eps + lambda tr(eps) I,
/// plus `eta_coef` times the vector mass.
pub fn fluid_stiffness(vel: &ScalarSpace, params: &FluidParams, eta_coef: f64) -> CsrMatrix {
    let q = cell_quadrature(&vel.geometry, 2);
    let nn = vel.num_nodes();
    let (nu, lam) = (params.nu, params.lambda);
    assemble_cells(&vel.geometry, 3 * nn, 3 * nn, |c, t| {
        for &(xi, w) in &q {
            let e = vel.eval(c, xi);
            for a in 0..8 {
                for b in 0..8 {
                    let ga = e.grads[a];
                    let gb = e.grads[b];
                    let dot: f64 = ga[0] * gb[0] + ga[1] * gb[1] + ga[2] * gb[2];
                    let mass = eta_coef * e.vals[a] * e.vals[b];
                    for ci in 0..3 {
                        for di in 0..3 {
                            let mut v = nu * ga[di] * gb[ci] + lam * ga[ci] * gb[di];
                            if ci == di {
                                v += nu * dot + mass;
                            }
                            t.push((ci * nn + e.nodes[a], di * nn + e.nodes[b], w * v));
                        }
                    }
                }
            }
        }
    })
}

/// Block-diagonal copy of a scalar matrix for the three velocity components.
pub fn vector_blockdiag(m: &CsrMatrix) -> CsrMatrix {
    let n = m.nrows;
    let trips = (0..3)
        .flat_map(|c| m.triplets().map(move |(i, j, v)| (c * n + i, c * n + j, v)))
        .collect();
    CsrMatrix::from_triplets(3 * n, 3 * m.ncols, trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{make_builtin, AmbientKind};
    use crate::geometry::build_geometry;

    #[test]
    fn mass_integrates_constants() {
        let g = build_geometry(4, 2, 6).unwrap();
        for r in [1, 2] {
            let s = ScalarSpace::new(&g, r).unwrap();
            let m = scalar_mass(&s);
            let one = vec![1.0; s.num_nodes()];
            assert!((m.quad_form(&one, &one) - 1.0).abs() < 1e-13);
        }
        assert!(ScalarSpace::new(&build_geometry(3, 2, 2).unwrap(), 2).is_none());
    }

    #[test]
    fn stiffness_of_linear_function() {
        // |grad (x1 + 2 x3)|^2 integrated over the box is 5
        let g = build_geometry(3, 3, 4).unwrap();
        let s = ScalarSpace::new(&g, 1).unwrap();
        let k = scalar_stiffness(&s);
        let f = s.interpolate(|x| x[0] + 2.0 * x[2]);
        assert!((k.quad_form(&f, &f) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn advection_skew_part_is_exact() {
        let g = build_geometry(4, 4, 4).unwrap();
        for kind in [AmbientKind::Vortex, AmbientKind::Columnar] {
            let f = make_builtin(kind, &g).unwrap();
            for r in [1, 2] {
                let s = ScalarSpace::new(&g, r).unwrap();
                let (n, _) = scalar_advection(&s, &f);
                let c = skew_part(&n);
                let sum = CsrMatrix::combine(&[(1.0, &c), (1.0, &c.transpose())]);
                assert_eq!(sum.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn advection_symmetric_part_is_divergence_mass() {
        // N + N^T = -M_div for tangent fields, with exact quadrature
        let g = build_geometry(4, 4, 4).unwrap();
        for kind in [AmbientKind::Vortex, AmbientKind::Columnar] {
            let f = make_builtin(kind, &g).unwrap();
            let s = ScalarSpace::new(&g, 1).unwrap();
            let (n, md) = scalar_advection(&s, &f);
            let r = CsrMatrix::combine(&[(1.0, &n), (1.0, &n.transpose()), (1.0, &md)]);
            assert!(r.max_abs() < 1e-12 * n.max_abs().max(1.0), "{kind:?} {}", r.max_abs());
        }
    }

    #[test]
    fn divergence_of_linear_field() {
        // div (x1, 2 x2, 0) = 3, tested against pressure constants: integral 3
        let g = build_geometry(4, 4, 2).unwrap();
        let v = ScalarSpace::new(&g, 1).unwrap();
        let p = ScalarSpace::new(&g, 2).unwrap();
        let d = divergence(&v, &p);
        let nn = v.num_nodes();
        let mut u = vec![0.0; 3 * nn];
        for n in 0..nn {
            let x = v.node_coord(n);
            u[n] = x[0];
            u[nn + n] = 2.0 * x[1];
        }
        let du = d.matvec(&u);
        assert!((du.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stress_form_of_stretch() {
        // u = (x1, 0, 0): (sigma, eps) = 2 nu + lambda, mass part 1/3
        let g = build_geometry(3, 2, 2).unwrap();
        let v = ScalarSpace::new(&g, 1).unwrap();
        let params = FluidParams { nu: 0.7, lambda: 0.4, eta: 2.0 };
        let k = fluid_stiffness(&v, &params, params.eta);
        let nn = v.num_nodes();
        let mut u = vec![0.0; 3 * nn];
        for n in 0..nn {
            u[n] = v.node_coord(n)[0];
        }
        let expect = 2.0 * 0.7 + 0.4 + 2.0 / 3.0;
        assert!((k.quad_form(&u, &u) - expect).abs() < 1e-12);
        let kt = k.transpose();
        assert!(CsrMatrix::combine(&[(1.0, &k), (-1.0, &kt)]).max_abs() < 1e-14);
    }
}
