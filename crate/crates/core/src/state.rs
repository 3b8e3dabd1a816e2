//! Finite-energy states (p, u, w, wdot), the constrained degree-of-freedom
//! layout, and the energy inner product.

use rand::Rng;
use serde::Serialize;

use crate::assembly::{fluid_stiffness, scalar_mass, scalar_stiffness, FluidParams, ScalarSpace};
use crate::error::{FsiError, Result};
use crate::geometry::{BoxGeometry, PLATE_DOFS_PER_NODE};
use crate::plate::PlateSpace;
use crate::sparse::{dot, CsrMatrix, Triplet};

/// Coefficient vectors of a discrete state. `u` stores the three velocity
/// components one after the other.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub p: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub wdot: Vec<f64>,
}

impl State {
    pub fn zeros(layout: &DofLayout) -> Self {
        State {
            p: vec![0.0; layout.n_p],
            u: vec![0.0; 3 * layout.n_nodes],
            w: vec![0.0; layout.n_plate],
            wdot: vec![0.0; layout.n_plate],
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let f = |v: &Vec<f64>| v.iter().map(|x| a * x).collect();
        State {
            p: f(&self.p),
            u: f(&self.u),
            w: f(&self.w),
            wdot: f(&self.wdot),
        }
    }

    /// self + a * other
    pub fn add_scaled(&self, a: f64, other: &State) -> Self {
        let f = |x: &Vec<f64>, y: &Vec<f64>| x.iter().zip(y).map(|(s, t)| s + a * t).collect();
        State {
            p: f(&self.p, &other.p),
            u: f(&self.u, &other.u),
            w: f(&self.w, &other.w),
            wdot: f(&self.wdot, &other.wdot),
        }
    }

    pub fn u_component(&self, c: usize) -> &[f64] {
        let n = self.u.len() / 3;
        &self.u[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &State) -> bool {
        self.p.len() == other.p.len()
            && self.u.len() == other.u.len()
            && self.w.len() == other.w.len()
            && self.wdot.len() == other.wdot.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.p, &self.u, &self.w, &self.wdot]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Map from the full coefficient vector [p | u1 u2 u3 | w | wdot] to the
/// reduced unknowns. Normal velocity components vanish on the rigid walls;
/// on the elastic face the normal velocity at an interior plate node is the
/// same unknown as the plate velocity value there; clamped plate DOFs are
/// dropped.
#[derive(Debug, Clone)]
pub struct DofLayout {
    pub n_p: usize,
    pub n_nodes: usize,
    pub n_plate: usize,
    pub map: Vec<Option<usize>>,
    pub n_reduced: usize,
    /// Velocity DOFs (indices into `u`) that are free and not tied to the plate.
    pub v0_dofs: Vec<usize>,
    /// (velocity DOF index into `u`, plate node) pairs on the elastic face.
    pub ties: Vec<(usize, usize)>,
}

impl DofLayout {
    pub fn new(geometry: &BoxGeometry, n_p: usize) -> Self {
        let g = geometry;
        let plate = g.plate();
        let n_nodes = g.num_nodes();
        let n_plate = plate.num_dofs();
        let full = n_p + 3 * n_nodes + 2 * n_plate;
        let mut map = vec![None; full];
        let mut next = 0;
        for m in map.iter_mut().take(n_p) {
            *m = Some(next);
            next += 1;
        }
        let mut v0_dofs = Vec::new();
        let mut ties = Vec::new();
        let mut tie_of_plate_node = vec![None; plate.num_nodes()];
        for c in 0..3 {
            for n in 0..n_nodes {
                let dof = c * n_nodes + n;
                if g.on_face(n, c) {
                    let [i, j, k] = g.node_ijk(n);
                    if c == 2 && k == g.nz {
                        let pn = plate.node(i, j);
                        if !plate.is_boundary_node(pn) {
                            map[n_p + dof] = Some(next);
                            tie_of_plate_node[pn] = Some(next);
                            ties.push((dof, pn));
                            next += 1;
                        }
                    }
                } else {
                    map[n_p + dof] = Some(next);
                    v0_dofs.push(dof);
                    next += 1;
                }
            }
        }
        let w_off = n_p + 3 * n_nodes;
        for d in 0..n_plate {
            if !plate.is_clamped_dof(d) {
                map[w_off + d] = Some(next);
                next += 1;
            }
        }
        let wd_off = w_off + n_plate;
        for d in 0..n_plate {
            if plate.is_clamped_dof(d) {
                continue;
            }
            let pn = d / PLATE_DOFS_PER_NODE;
            if d % PLATE_DOFS_PER_NODE == 0 {
                map[wd_off + d] = tie_of_plate_node[pn];
            } else {
                map[wd_off + d] = Some(next);
                next += 1;
            }
        }
        DofLayout {
            n_p,
            n_nodes,
            n_plate,
            map,
            n_reduced: next,
            v0_dofs,
            ties,
        }
    }

    pub fn full_len(&self) -> usize {
        self.n_p + 3 * self.n_nodes + 2 * self.n_plate
    }

    pub fn off_u(&self) -> usize {
        self.n_p
    }

    pub fn off_w(&self) -> usize {
        self.n_p + 3 * self.n_nodes
    }

    pub fn off_wd(&self) -> usize {
        self.off_w() + self.n_plate
    }

    pub fn to_full(&self, y: &State) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.full_len());
        v.extend_from_slice(&y.p);
        v.extend_from_slice(&y.u);
        v.extend_from_slice(&y.w);
        v.extend_from_slice(&y.wdot);
        v
    }

    pub fn from_full(&self, v: &[f64]) -> State {
        let (a, b, c) = (self.off_u(), self.off_w(), self.off_wd());
        State {
            p: v[..a].to_vec(),
            u: v[a..b].to_vec(),
            w: v[b..c].to_vec(),
            wdot: v[c..].to_vec(),
        }
    }

    pub fn check_shape(&self, y: &State) -> Result<()> {
        if y.p.len() != self.n_p
            || y.u.len() != 3 * self.n_nodes
            || y.w.len() != self.n_plate
            || y.wdot.len() != self.n_plate
        {
            return Err(FsiError::Dimension(format!(
                "state blocks ({}, {}, {}, {}) do not match layout ({}, {}, {}, {})",
                y.p.len(),
                y.u.len(),
                y.w.len(),
                y.wdot.len(),
                self.n_p,
                3 * self.n_nodes,
                self.n_plate,
                self.n_plate
            )));
        }
        Ok(())
    }

    /// Reduced unknowns of a state. For tied DOFs the plate velocity value wins.
    pub fn restrict(&self, y: &State) -> Vec<f64> {
        let full = self.to_full(y);
        let mut z = vec![0.0; self.n_reduced];
        for (i, m) in self.map.iter().enumerate() {
            if let Some(r) = m {
                z[*r] = full[i];
            }
        }
        z
    }

    pub fn expand(&self, z: &[f64]) -> State {
        let full: Vec<f64> = self.map.iter().map(|m| m.map_or(0.0, |r| z[r])).collect();
        self.from_full(&full)
    }

    /// Largest violation of the constraints (constrained DOFs nonzero or
    /// tied DOFs unequal).
    pub fn constraint_violation(&self, y: &State) -> f64 {
        let back = self.expand(&self.restrict(y));
        let a = self.to_full(y);
        let b = self.to_full(&back);
        a.iter().zip(&b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Projects full-space triplets onto the reduced unknowns (P^T A P).
    pub fn restrict_triplets(&self, trips: impl Iterator<Item = Triplet>) -> CsrMatrix {
        let t = trips
            .filter_map(|(i, j, v)| match (self.map[i], self.map[j]) {
                (Some(a), Some(b)) => Some((a, b, v)),
                _ => None,
            })
            .collect();
        CsrMatrix::from_triplets(self.n_reduced, self.n_reduced, t)
    }
}

/// Discrete state space with the Gram matrices of the energy inner product
/// and the fluid form.
#[derive(Debug)]
pub struct StateSpace {
    pub geometry: BoxGeometry,
    pub params: FluidParams,
    pub velocity_space: ScalarSpace,
    pub pressure_space: ScalarSpace,
    pub layout: DofLayout,
    pub plate: PlateSpace,
    /// Pressure mass.
    pub m_p: CsrMatrix,
    /// Scalar mass on the velocity grid (one component).
    pub m_s: CsrMatrix,
    /// Scalar stiffness on the velocity grid (one component).
    pub k_s: CsrMatrix,
    /// Pressure stiffness, for gradient norms.
    pub k_p: CsrMatrix,
    /// (sigma(u), eps(psi)) + eta (u, psi).
    pub k_fluid: CsrMatrix,
}

impl StateSpace {
    pub fn new(geometry: &BoxGeometry, params: &FluidParams) -> Result<Self> {
        params.validate()?;
        let velocity_space = ScalarSpace::new(geometry, 1).expect("ratio 1 always divides");
        let pressure_space = ScalarSpace::new(geometry, 2).ok_or_else(|| {
            FsiError::Geometry(format!(
                "pressure lives on the twice-coarser grid, so cell counts must be even (got {} x {} x {})",
                geometry.nx, geometry.ny, geometry.nz
            ))
        })?;
        let layout = DofLayout::new(geometry, pressure_space.num_nodes());
        let plate = PlateSpace::new(geometry.plate())?;
        Ok(StateSpace {
            geometry: *geometry,
            params: *params,
            m_p: scalar_mass(&pressure_space),
            m_s: scalar_mass(&velocity_space),
            k_s: scalar_stiffness(&velocity_space),
            k_p: scalar_stiffness(&pressure_space),
            k_fluid: fluid_stiffness(&velocity_space, params, params.eta),
            velocity_space,
            pressure_space,
            layout,
            plate,
        })
    }

    fn vel_mass_product(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.layout.n_nodes;
        (0..3)
            .map(|c| self.m_s.quad_form(&a[c * n..(c + 1) * n], &b[c * n..(c + 1) * n]))
            .sum()
    }

    /// The four block contributions (p1,p2), (u1,u2), (Lap w1, Lap w2), (v1,v2).
    pub fn inner_product_blocks(&self, y1: &State, y2: &State) -> [f64; 4] {
        [
            self.m_p.quad_form(&y1.p, &y2.p),
            self.vel_mass_product(&y1.u, &y2.u),
            self.plate.k_bih.quad_form(&y1.w, &y2.w),
            self.plate.mass.quad_form(&y1.wdot, &y2.wdot),
        ]
    }

    pub fn inner_product(&self, y1: &State, y2: &State) -> Result<f64> {
        self.layout.check_shape(y1)?;
        self.layout.check_shape(y2)?;
        Ok(self.inner_product_blocks(y1, y2).iter().sum())
    }

    pub fn norm(&self, y: &State) -> f64 {
        self.inner_product_blocks(y, y).iter().sum::<f64>().max(0.0).sqrt()
    }

    pub fn energy(&self, y: &State) -> f64 {
        0.5 * self.inner_product_blocks(y, y).iter().sum::<f64>()
    }

    /// Fluid form a(u1, u2) = (sigma(u1), eps(u2)) + eta (u1, u2).
    pub fn a_o(&self, u1: &[f64], u2: &[f64]) -> f64 {
        dot(u1, &self.k_fluid.matvec(u2))
    }

    pub fn velocity_h1_norm(&self, u: &[f64]) -> f64 {
        let n = self.layout.n_nodes;
        (0..3)
            .map(|c| {
                let uc = &u[c * n..(c + 1) * n];
                self.m_s.quad_form(uc, uc) + self.k_s.quad_form(uc, uc)
            })
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    pub fn pressure_grad_norm(&self, p: &[f64]) -> f64 {
        self.k_p.quad_form(p, p).max(0.0).sqrt()
    }

    /// Gram matrix of the energy inner product on the full coefficient vector.
    pub fn gram_triplets(&self) -> Vec<Triplet> {
        let l = &self.layout;
        let mut t: Vec<Triplet> = Vec::new();
        t.extend(self.m_p.triplets());
        let (ou, ow, owd, n) = (l.off_u(), l.off_w(), l.off_wd(), l.n_nodes);
        for c in 0..3 {
            t.extend(self.m_s.triplets().map(|(i, j, v)| (ou + c * n + i, ou + c * n + j, v)));
        }
        t.extend(self.plate.k_bih.triplets().map(|(i, j, v)| (ow + i, ow + j, v)));
        t.extend(self.plate.mass.triplets().map(|(i, j, v)| (owd + i, owd + j, v)));
        t
    }

    /// A state with independent uniform(-1, 1) reduced coefficients, so all
    /// constraints hold exactly.
    pub fn random_state(&self, rng: &mut impl Rng) -> State {
        let z: Vec<f64> = (0..self.layout.n_reduced).map(|_| rng.gen_range(-1.0..1.0)).collect();
        self.layout.expand(&z)
    }
}

/// One record of an energy trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySnapshot {
    pub t: f64,
    pub energy: f64,
    pub dissipation_rate: f64,
    pub div_u_work: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> StateSpace {
        StateSpace::new(&build_geometry(4, 4, 4).unwrap(), &FluidParams::default()).unwrap()
    }

    #[test]
    fn odd_counts_rejected() {
        assert!(StateSpace::new(&build_geometry(3, 4, 4).unwrap(), &FluidParams::default()).is_err());
    }

    #[test]
    fn zero_state_and_constant_pressure() {
        let s = space();
        let z = State::zeros(&s.layout);
        assert_eq!(s.inner_product(&z, &z).unwrap(), 0.0);
        assert_eq!(s.energy(&z), 0.0);
        let mut y = z.clone();
        y.p.iter_mut().for_each(|v| *v = 1.0);
        assert!((s.inner_product(&y, &y).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn symmetry_and_scaling() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = s.random_state(&mut rng);
            let b = s.random_state(&mut rng);
            let ab = s.inner_product(&a, &b).unwrap();
            let ba = s.inner_product(&b, &a).unwrap();
            assert!((ab - ba).abs() <= 1e-13 * (1.0 + ab.abs()));
        }
        let y = s.random_state(&mut rng);
        let e = s.energy(&y);
        assert!((s.energy(&y.scaled(2.0)) - 4.0 * e).abs() <= 1e-13 * e);
        let blocks = s.inner_product_blocks(&y, &y);
        // independent blockwise re-summation
        let l = &s.layout;
        let n = l.n_nodes;
        let mut sum = dot(&y.p, &s.m_p.matvec(&y.p));
        for c in 0..3 {
            let uc = &y.u[c * n..(c + 1) * n];
            sum += dot(uc, &s.m_s.matvec(uc));
        }
        sum += dot(&y.w, &s.plate.k_bih.matvec(&y.w));
        sum += dot(&y.wdot, &s.plate.mass.matvec(&y.wdot));
        assert!((0.5 * sum - e).abs() <= 1e-13 * e, "{blocks:?}");
    }

    #[test]
    fn fluid_form_examples() {
        let s = space();
        let n = s.layout.n_nodes;
        assert_eq!(s.a_o(&vec![0.0; 3 * n], &vec![0.0; 3 * n]), 0.0);
        let mut u = vec![0.0; 3 * n];
        u[..n].iter_mut().for_each(|v| *v = 1.0);
        assert!((s.a_o(&u, &u) - s.params.eta).abs() < 1e-13);
        for i in 0..n {
            u[i] = s.geometry.node_coord(i)[0];
        }
        let p = s.params;
        let expect = 2.0 * p.nu + p.lambda + p.eta / 3.0;
        assert!((s.a_o(&u, &u) - expect).abs() < 1e-12);
    }

    #[test]
    fn layout_round_trip_and_ties() {
        let s = space();
        let l = &s.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = s.random_state(&mut rng);
        assert_eq!(l.constraint_violation(&y), 0.0);
        assert_eq!(l.expand(&l.restrict(&y)), y);
        // interior plate nodes: 3 x 3
        assert_eq!(l.ties.len(), 9);
        for &(dof, pn) in &l.ties {
            assert_eq!(y.u[dof], y.wdot[4 * pn]);
        }
    }
}
