//! Von Karman nonlinearity on the clamped BFS plate: the bracket, the Airy
//! stress function, the load f(w) = [w, v(w) + F0] and its potential.

use faer::prelude::*;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FsiError, Result};
use crate::plate::{bfs_interpolate, bfs_interpolate_clamped, bubble, Jet, PlateSpace};
use crate::sparse::{dot, CsrMatrix, SparseLu, Triplet};

/// In-plane load field F0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum F0Kind {
    #[default]
    Zero,
    /// amplitude * x^2 (1-x)^2 y^2 (1-y)^2
    Bubble { amplitude: f64 },
}

/// [u, w] = u_xx w_yy + u_yy w_xx - 2 u_xy w_xy at one point.
pub fn bracket_point(u: &Jet, w: &Jet) -> f64 {
    u.dxx * w.dyy + u.dyy * w.dxx - 2.0 * u.dxy * w.dxy
}

/// Bracket values at every quadrature point, cell-major.
pub fn bracket(ps: &PlateSpace, u: &[f64], w: &[f64]) -> Vec<f64> {
    let q = &ps.quad;
    q.cells()
        .iter()
        .flat_map(|&c| {
            let ju = q.jets(u, c);
            let jw = q.jets(w, c);
            ju.iter().zip(&jw).map(|(a, b)| bracket_point(a, b)).collect::<Vec<_>>()
        })
        .collect()
}

/// Load vector ([u, w], phi_l).
pub fn bracket_load(ps: &PlateSpace, u: &[f64], w: &[f64]) -> Vec<f64> {
    let q = &ps.quad;
    let mut out = vec![0.0; q.grid.num_dofs()];
    for c in q.cells() {
        let dofs = q.cell_dofs(c);
        let ju = q.jets(u, c);
        let jw = q.jets(w, c);
        for (((_, wt, e), a), b) in q.points.iter().zip(&ju).zip(&jw) {
            let br = wt * bracket_point(a, b);
            for l in 0..16 {
                out[dofs[l]] += br * e.v[l];
            }
        }
    }
    out
}

/// Matrix of h -> ([h, c], phi_l) on the full space.
pub fn bracket_matrix(ps: &PlateSpace, c: &[f64]) -> CsrMatrix {
    let q = &ps.quad;
    let n = q.grid.num_dofs();
    let parts: Vec<Vec<Triplet>> = q
        .cells()
        .par_iter()
        .map(|&cell| {
            let dofs = q.cell_dofs(cell);
            let jc = q.jets(c, cell);
            let mut local = [[0.0; 16]; 16];
            for ((_, wt, e), j) in q.points.iter().zip(&jc) {
                for m in 0..16 {
                    let br = wt * (e.dxx[m] * j.dyy + e.dyy[m] * j.dxx - 2.0 * e.dxy[m] * j.dxy);
                    if br != 0.0 {
                        for l in 0..16 {
                            local[l][m] += br * e.v[l];
                        }
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

/// Airy stress v(u, w): clamped solve of Delta^2 v = -[u, w].
pub fn airy_bilinear(ps: &PlateSpace, u: &[f64], w: &[f64]) -> Vec<f64> {
    let b: Vec<f64> = bracket_load(ps, u, w).iter().map(|v| -v).collect();
    ps.solve_biharmonic(&b)
}

pub fn airy(ps: &PlateSpace, w: &[f64]) -> Vec<f64> {
    airy_bilinear(ps, w, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Potential {
    /// (1/4) |Delta v(w)|^2
    pub airy_part: f64,
    /// -(1/2) (w, [w, F0])
    pub load_part: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzProbe {
    pub radius: f64,
    pub pairs: usize,
    pub constant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundScan {
    pub eta: f64,
    pub samples: usize,
    /// min over samples of eta |Delta w|^2 + Pi(w)
    pub minimum: f64,
    /// max(0, -minimum)
    pub fitted_c: f64,
}

/// The nonlinearity for a fixed F0 on one plate space.
#[derive(Debug)]
pub struct VonKarman<'a> {
    pub plate: &'a PlateSpace,
    pub f0_kind: F0Kind,
    pub f0: Vec<f64>,
    m_lu: SparseLu,
}

impl<'a> VonKarman<'a> {
    pub fn new(plate: &'a PlateSpace, f0_kind: F0Kind) -> Result<Self> {
        let grid = *plate.grid();
        let f0 = match f0_kind {
            F0Kind::Zero => vec![0.0; grid.num_dofs()],
            F0Kind::Bubble { amplitude } => {
                if !amplitude.is_finite() {
                    return Err(FsiError::param("plate.F0", "amplitude must be finite"));
                }
                bfs_interpolate(&grid, |p| bubble::hermite(p).map(|v| amplitude * v))
            }
        };
        let m_lu = SparseLu::new(&plate.m_free, "plate mass")?;
        Ok(VonKarman { plate, f0_kind, f0, m_lu })
    }

    fn zero_clamped(&self, mut v: Vec<f64>) -> Vec<f64> {
        for (d, x) in v.iter_mut().enumerate() {
            if self.plate.free_index[d].is_none() {
                *x = 0.0;
            }
        }
        v
    }

    /// v(w) + F0
    pub fn stress(&self, w: &[f64]) -> Vec<f64> {
        let mut v = airy(self.plate, w);
        for (a, b) in v.iter_mut().zip(&self.f0) {
            *a += b;
        }
        v
    }

    /// (f(w), phi_l) with clamped entries zeroed.
    pub fn f_load(&self, w: &[f64]) -> Vec<f64> {
        self.zero_clamped(bracket_load(self.plate, w, &self.stress(w)))
    }

    /// L2 norm of the function f(w) by quadrature.
    pub fn f_l2(&self, w: &[f64]) -> f64 {
        let s = self.stress(w);
        let b = bracket(self.plate, w, &s);
        self.weighted_l2(&b)
    }

    fn weighted_l2(&self, vals: &[f64]) -> f64 {
        let wts: Vec<f64> = self.plate.quad.points.iter().map(|p| p.1).collect();
        vals.iter()
            .enumerate()
            .map(|(i, v)| wts[i % wts.len()] * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// L2 norm of the projection of a load onto the plate space.
    pub fn load_dual_norm(&self, load: &[f64]) -> f64 {
        let r = self.plate.restrict(load);
        dot(&r, &self.m_lu.solve(&r)).max(0.0).sqrt()
    }

    pub fn potential(&self, w: &[f64]) -> Potential {
        let v = airy(self.plate, w);
        let airy_part = 0.25 * self.plate.k_bih.quad_form(&v, &v);
        let load_part = -0.5 * dot(w, &bracket_load(self.plate, w, &self.f0));
        Potential { airy_part, load_part, total: airy_part + load_part }
    }

    /// Dense Jacobian of w -> K w - f(w) on the free DOFs:
    /// K - A_{v+F0} + 2 A_w K^-1 A_w, where A_c h = ([h, c], phi).
    pub fn jacobian(&self, w: &[f64]) -> Mat<f64> {
        let ps = self.plate;
        let free = &ps.free;
        let n = free.len();
        let a_s = bracket_matrix(ps, &self.stress(w)).select(free, free);
        let a_w = bracket_matrix(ps, w).select(free, free);
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let awe = a_w.matvec(&e);
                a_w.matvec(&ps.k_lu.solve(&awe))
            })
            .collect();
        let mut jm = Mat::<f64>::zeros(n, n);
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                jm[(i, j)] = 2.0 * col[i];
            }
        }
        for (i, j, v) in ps.k_free.triplets() {
            jm[(i, j)] += v;
        }
        for (i, j, v) in a_s.triplets() {
            jm[(i, j)] -= v;
        }
        jm
    }

    /// Empirical constant in |f(w1) - f(w2)|_{L2} <= C |w1 - w2|_{H0^2}
    /// over random smooth pairs in the ball of the given radius.
    pub fn lipschitz_probe(&self, radius: f64, pairs: usize, seed: u64) -> LipschitzProbe {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut constant: f64 = 0.0;
        for _ in 0..pairs {
            let (r1, r2) = (radius * rng.gen_range(0.1..1.0), radius * rng.gen_range(0.1..1.0));
            let w1 = self.random_smooth(&mut rng, r1);
            let w2 = self.random_smooth(&mut rng, r2);
            let b1 = bracket(self.plate, &w1, &self.stress(&w1));
            let b2 = bracket(self.plate, &w2, &self.stress(&w2));
            let diff: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a - b).collect();
            let d: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a - b).collect();
            let hn = self.plate.k_bih.quad_form(&d, &d).sqrt();
            if hn > 0.0 {
                constant = constant.max(self.weighted_l2(&diff) / hn);
            }
        }
        LipschitzProbe { radius, pairs, constant }
    }

    /// Samples eta |Delta w|^2 + Pi(w) over random smooth w of several sizes.
    pub fn lower_bound_scan(&self, eta: f64, samples: usize, seed: u64) -> LowerBoundScan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut minimum = 0.0f64;
        for s in 0..samples {
            let r = 10f64.powf(-2.0 + 4.0 * s as f64 / samples.max(1) as f64);
            let w = self.random_smooth(&mut rng, r);
            let val = eta * self.plate.k_bih.quad_form(&w, &w) + self.potential(&w).total;
            minimum = minimum.min(val);
        }
        LowerBoundScan { eta, samples, minimum, fitted_c: (-minimum).max(0.0) }
    }

    /// Clamped interpolant of bubble * (random bilinear polynomial), scaled to
    /// H0^2 norm `norm`. Independent of the mesh up to interpolation error.
    pub fn random_smooth(&self, rng: &mut impl Rng, norm: f64) -> Vec<f64> {
        let w = random_smooth_plate(self.plate, rng);
        let n = self.plate.k_bih.quad_form(&w, &w).sqrt();
        w.iter().map(|v| v * norm / n).collect()
    }
}

/// Clamped BFS interpolant of b(x, y) (a0 + a1 x + a2 y + a3 x y) with
/// uniform random coefficients in (-1, 1), a0 bounded away from zero.
pub fn random_smooth_plate(ps: &PlateSpace, rng: &mut impl Rng) -> Vec<f64> {
    let a0 = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let a: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    bfs_interpolate_clamped(ps.grid(), |p| {
        let [b, bx, by, bxy] = bubble::hermite(p);
        let q = a0 + a[0] * p[0] + a[1] * p[1] + a[2] * p[0] * p[1];
        let qx = a[0] + a[2] * p[1];
        let qy = a[1] + a[2] * p[0];
        let qxy = a[2];
        [b * q, bx * q + b * qx, by * q + b * qy, bxy * q + bx * qy + by * qx + b * qxy]
    })
}

/// Solves a dense system with partial-pivot LU.
pub fn dense_solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut rhs = Mat::<f64>::zeros(n, 1);
    for i in 0..n {
        rhs[(i, 0)] = b[i];
    }
    let x = a.partial_piv_lu().solve(&rhs);
    (0..n).map(|i| x[(i, 0)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PlateGrid;

    fn space(n: usize) -> PlateSpace {
        PlateSpace::new(PlateGrid::new(n, n).unwrap()).unwrap()
    }

    #[test]
    fn bracket_of_quadratics() {
        let ps = space(4);
        let u = bfs_interpolate(ps.grid(), |p| [p[0] * p[0], 2.0 * p[0], 0.0, 0.0]);
        let w = bfs_interpolate(ps.grid(), |p| [p[1] * p[1], 0.0, 2.0 * p[1], 0.0]);
        for v in bracket(&ps, &u, &w) {
            assert!((v - 4.0).abs() < 1e-10);
        }
        let xy = bfs_interpolate(ps.grid(), |p| [p[0] * p[1], p[1], p[0], 1.0]);
        for v in bracket(&ps, &xy, &xy) {
            assert!((v + 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bracket_matrix_matches_load() {
        let ps = space(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_smooth_plate(&ps, &mut rng);
        let w = random_smooth_plate(&ps, &mut rng);
        let a = bracket_matrix(&ps, &w).matvec(&u);
        let b = bracket_load(&ps, &u, &w);
        let c = bracket_load(&ps, &w, &u);
        for i in 0..a.len() {
            assert!((a[i] - b[i]).abs() < 1e-12 * (1.0 + b[i].abs()));
            assert_eq!(b[i], c[i]);
        }
    }

    #[test]
    fn airy_homogeneity_and_gradient() {
        let ps = space(6);
        let vk = VonKarman::new(&ps, F0Kind::Bubble { amplitude: 0.5 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = vk.random_smooth(&mut rng, 1.0);
        let h = vk.random_smooth(&mut rng, 1.0);
        let v1 = airy(&ps, &w);
        let w3: Vec<f64> = w.iter().map(|x| 3.0 * x).collect();
        let v3 = airy(&ps, &w3);
        for (a, b) in v1.iter().zip(&v3) {
            assert!((9.0 * a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
        let d = -dot(&vk.f_load(&w), &h);
        let s = 1e-4;
        let wp: Vec<f64> = w.iter().zip(&h).map(|(a, b)| a + s * b).collect();
        let wm: Vec<f64> = w.iter().zip(&h).map(|(a, b)| a - s * b).collect();
        let fd = (vk.potential(&wp).total - vk.potential(&wm).total) / (2.0 * s);
        assert!((fd - d).abs() <= 1e-7 * d.abs().max(1e-12), "{fd} vs {d}");
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let ps = space(4);
        let vk = VonKarman::new(&ps, F0Kind::Bubble { amplitude: 0.3 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = vk.random_smooth(&mut rng, 2.0);
        let h = vk.random_smooth(&mut rng, 1.0);
        let j = vk.jacobian(&w);
        let hf = ps.restrict(&h);
        let jh: Vec<f64> = (0..hf.len()).map(|i| (0..hf.len()).map(|k| j[(i, k)] * hf[k]).sum()).collect();
        let res = |x: &[f64]| {
            let kx = ps.k_bih.matvec(x);
            let f = vk.f_load(x);
            ps.restrict(&kx.iter().zip(&f).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        let s = 1e-5;
        let wp: Vec<f64> = w.iter().zip(&h).map(|(a, b)| a + s * b).collect();
        let wm: Vec<f64> = w.iter().zip(&h).map(|(a, b)| a - s * b).collect();
        let (rp, rm) = (res(&wp), res(&wm));
        let err: f64 = (0..jh.len()).map(|i| ((rp[i] - rm[i]) / (2.0 * s) - jh[i]).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = jh.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err < 1e-6 * scale, "{err} vs {scale}");
    }

    #[test]
    fn potential_sign_and_zero() {
        let ps = space(4);
        let vk = VonKarman::new(&ps, F0Kind::Zero).unwrap();
        let z = vec![0.0; ps.grid().num_dofs()];
        assert_eq!(vk.potential(&z).total, 0.0);
        assert!(vk.f_load(&z).iter().all(|v| *v == 0.0));
        let scan = vk.lower_bound_scan(0.25, 8, 1);
        assert_eq!(scan.fitted_c, 0.0);
    }
}
