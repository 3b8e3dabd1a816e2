//! Resolvent (xi I - A_hat) y = y* by two independent routes: the
//! constructive fluid/plate decomposition and one monolithic sparse solve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ambient::appendix_admissibility;
use crate::assembly::vector_blockdiag;
use crate::error::{FsiError, Result};
use crate::geometry::PLATE_DOFS_PER_NODE;
use crate::operators::{Generator, OperatorSet};
use crate::sparse::{dot, gmres, CsrMatrix, GmresOptions, SparseLu};
use crate::state::State;

/// Extension of plate-trace data into the fluid box.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifting {
    /// Plate nodal values (zero on the plate boundary).
    pub g: Vec<f64>,
    /// Velocity field (0, 0, g (1 + x3)) at the grid nodes, component-major.
    pub v_tilde: Vec<f64>,
}

/// Extends g linearly in depth: (0, 0, g(x1, x2)(1 + x3)).
pub fn lift_boundary_data(ops: &OperatorSet, g: &[f64]) -> Result<Lifting> {
    let geo = &ops.space.geometry;
    let plate = geo.plate();
    if g.len() != plate.num_nodes() {
        return Err(FsiError::Dimension(format!(
            "boundary data has {} values, plate has {} nodes",
            g.len(),
            plate.num_nodes()
        )));
    }
    for (n, v) in g.iter().enumerate() {
        if plate.is_boundary_node(n) && *v != 0.0 {
            return Err(FsiError::BoundaryData { node: n, value: *v });
        }
    }
    let nn = geo.num_nodes();
    let mut v_tilde = vec![0.0; 3 * nn];
    for n in 0..nn {
        let [i, j, k] = geo.node_ijk(n);
        let gv = g[plate.node(i, j)];
        if gv != 0.0 {
            let depth = if k == geo.nz { 1.0 } else { 1.0 + geo.coord(i, j, k)[2] };
            v_tilde[2 * nn + n] = gv * depth;
        }
    }
    Ok(Lifting { g: g.to_vec(), v_tilde })
}

/// Right-hand side of the pressure transport equation.
#[derive(Debug, Clone, Copy)]
pub enum PressureForcing<'a> {
    /// forcing = -div u for a velocity field u
    NegDiv(&'a [f64]),
    /// forcing = p*
    Data(&'a [f64]),
}

#[derive(Debug, Clone, Serialize)]
pub struct FluidSolve {
    /// Full velocity v = u + lifting.
    #[serde(skip)]
    pub v: Vec<f64>,
    #[serde(skip)]
    pub p: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructuredReport {
    pub xi: f64,
    pub xi_min: f64,
    pub plate_iterations: usize,
    pub plate_rel_residual: f64,
    pub fluid_solves: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolventResidual {
    /// ||(xi I - A) y - y*||_H / ||y*||_H
    pub relative: f64,
    /// Per-block squared contributions (p, u, w, wdot) of the residual.
    pub blocks: [f64; 4],
}

/// Factorizations for one value of xi on the structured route.
pub struct StructuredResolvent<'a> {
    pub ops: &'a OperatorSet,
    pub xi: f64,
    pub xi_min: f64,
    p_lu: SparseLu,
    /// xi M_u + C_u + K_fluid on the full velocity vector.
    s_vel: CsrMatrix,
    s_v0: CsrMatrix,
    s_v0_lu: SparseLu,
    m_u: CsrMatrix,
    plate_pc: SparseLu,
    pub inner: GmresOptions,
    pub outer: GmresOptions,
    fluid_solves: std::cell::Cell<usize>,
}

impl std::fmt::Debug for StructuredResolvent<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StructuredResolvent").field("xi", &self.xi).field("xi_min", &self.xi_min).finish()
    }
}

/// Coercivity margins of the nested fluid form sampled at random V0 fields.
#[derive(Debug, Clone, Serialize)]
pub struct CoercivitySample {
    pub xi: f64,
    /// min over samples of <A psi, psi> / |psi|_{H1}^2
    pub margin: f64,
    /// Same with the ambient field switched off.
    pub margin_zero_field: f64,
}

fn pressure_operator(ops: &OperatorSet, xi: f64, with_field: bool) -> CsrMatrix {
    if with_field {
        CsrMatrix::combine(&[(xi, &ops.space.m_p), (1.0, &ops.c_p)])
    } else {
        ops.space.m_p.scaled(xi)
    }
}

/// Samples the margin of the fluid form at several seeded V0 fields.
pub fn coercivity_margin(ops: &OperatorSet, xi: f64, samples: usize, seed: u64) -> Result<CoercivitySample> {
    let l = &ops.space.layout;
    let m_u = vector_blockdiag(&ops.space.m_s);
    let p_u = SparseLu::new(&pressure_operator(ops, xi, true), "pressure transport")?;
    let p_0 = SparseLu::new(&pressure_operator(ops, xi, false), "pressure mass")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut m1, mut m0) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..samples {
        let mut psi = vec![0.0; 3 * l.n_nodes];
        for &d in &l.v0_dofs {
            psi[d] = rng.gen_range(-1.0..1.0);
        }
        let h1 = ops.space.velocity_h1_norm(&psi).powi(2);
        let base = xi * m_u.quad_form(&psi, &psi) + ops.space.a_o(&psi, &psi);
        let dpsi = ops.d.matvec(&psi);
        let pu = p_u.solve(&dpsi);
        let p0 = p_0.solve(&dpsi);
        let form_u = base + dot(&dpsi, &pu);
        let form_0 = base + dot(&dpsi, &p0);
        m1 = m1.min(form_u / h1);
        m0 = m0.min(form_0 / h1);
    }
    Ok(CoercivitySample { xi, margin: m1, margin_zero_field: m0 })
}

/// Smallest xi for the structured route: the larger of the transport
/// admissibility threshold (k := xi) and the first xi on a geometric scan
/// from which the sampled coercivity margin stays above 10% of the margin
/// without ambient field.
pub fn xi_min(ops: &OperatorSet, sobolev_const: f64) -> Result<f64> {
    let k_min = match appendix_admissibility(&ops.field, 0.0, sobolev_const) {
        Ok(a) => a.k_min,
        Err(FsiError::NoDerivativeInfo) => 0.0,
        Err(e) => return Err(e),
    };
    let scan: Vec<f64> = (0..13).map(|j| 1e-2 * 4f64.powi(j)).collect();
    let mut ok_from = None;
    for &xi in scan.iter().rev() {
        let s = coercivity_margin(ops, xi, 6, 17)?;
        if s.margin >= 0.1 * s.margin_zero_field {
            ok_from = Some(xi);
        } else {
            break;
        }
    }
    let scan_min = ok_from.unwrap_or(*scan.last().unwrap());
    Ok(k_min.max(scan_min))
}

impl<'a> StructuredResolvent<'a> {
    /// Prepares the structured route; refuses xi below `xi_min`.
    pub fn new(ops: &'a OperatorSet, xi: f64, xi_min: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(FsiError::param("resolvent.xi", format!("must be positive, got {xi}")));
        }
        if xi < xi_min {
            return Err(FsiError::XiTooSmall { xi, xi_min });
        }
        let p_lu = SparseLu::new(&pressure_operator(ops, xi, true), "pressure transport")?;
        let m_u = vector_blockdiag(&ops.space.m_s);
        let s_vel = CsrMatrix::combine(&[(xi, &m_u), (1.0, &ops.c_u), (1.0, &ops.space.k_fluid)]);
        let v0 = &ops.space.layout.v0_dofs;
        let s_v0 = s_vel.select(v0, v0);
        let s_v0_lu = SparseLu::new(&s_v0, "fluid preconditioner")?;
        let plate = &ops.space.plate;
        let pc = CsrMatrix::combine(&[(xi * xi, &plate.m_free), (1.0, &plate.k_free)]);
        let plate_pc = SparseLu::new(&pc, "plate preconditioner")?;
        Ok(StructuredResolvent {
            ops,
            xi,
            xi_min,
            p_lu,
            s_vel,
            s_v0,
            s_v0_lu,
            m_u,
            plate_pc,
            inner: GmresOptions { rel_tol: 1e-14, max_iter: 400, restart: 80 },
            outer: GmresOptions { rel_tol: 1e-13, max_iter: 400, restart: 80 },
            fluid_solves: std::cell::Cell::new(0),
        })
    }

    /// Solves xi p + U.grad p + (1/2) div U p = forcing with the skew form,
    /// without boundary condition (the transport limit problem).
    pub fn pressure_map(&self, forcing: PressureForcing<'_>) -> Vec<f64> {
        let rhs = match forcing {
            PressureForcing::NegDiv(u) => self.ops.d.matvec(u).iter().map(|v| -v).collect(),
            PressureForcing::Data(p) => self.ops.space.m_p.matvec(p),
        };
        self.p_lu.solve(&rhs)
    }

    fn v0_expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.ops.space.layout.n_nodes];
        for (v, &d) in x.iter().zip(&self.ops.space.layout.v0_dofs) {
            out[d] = *v;
        }
        out
    }

    fn v0_restrict(&self, full: &[f64]) -> Vec<f64> {
        self.ops.space.layout.v0_dofs.iter().map(|&d| full[d]).collect()
    }

    /// Applies the nested fluid operator S + D^T P^-1 D to a V0 vector.
    fn apply_fluid(&self, x: &[f64]) -> Vec<f64> {
        let xf = self.v0_expand(x);
        let mut y = self.s_vel.matvec(&xf);
        let p = self.p_lu.solve(&self.ops.d.matvec(&xf));
        let dtp = self.ops.d_t.matvec(&p);
        for (a, b) in y.iter_mut().zip(&dtp) {
            *a += b;
        }
        self.v0_restrict(&y)
    }

    /// Fluid velocity in V0 + lifting and its pressure, for plate-trace data
    /// `g` and fluid data (p*, v*).
    pub fn solve_fluid_subproblem(&self, g: &[f64], p_star: Option<&[f64]>, v_star: Option<&[f64]>) -> Result<FluidSolve> {
        self.fluid_solves.set(self.fluid_solves.get() + 1);
        let lift = lift_boundary_data(self.ops, g)?;
        let nv = 3 * self.ops.space.layout.n_nodes;
        let mut data_p = vec![0.0; self.ops.space.layout.n_p];
        if let Some(ps) = p_star {
            data_p = self.ops.space.m_p.matvec(ps);
        }
        let dv0 = self.ops.d.matvec(&lift.v_tilde);
        let p_part: Vec<f64> = self.p_lu.solve(&data_p.iter().zip(&dv0).map(|(a, b)| a - b).collect::<Vec<_>>());
        let mut f = match v_star {
            Some(vs) => self.m_u.matvec(vs),
            None => vec![0.0; nv],
        };
        let sv0 = self.s_vel.matvec(&lift.v_tilde);
        let dtp = self.ops.d_t.matvec(&p_part);
        for i in 0..nv {
            f[i] += dtp[i] - sv0[i];
        }
        let b = self.v0_restrict(&f);
        let (x, rep) = gmres(|v| self.apply_fluid(v), |v| self.s_v0_lu.solve(v), &b, None, self.inner);
        if !rep.converged && rep.rel_residual > 1e-10 {
            return Err(FsiError::NotConverged {
                context: format!("fluid subproblem at xi = {} (xi_min = {})", self.xi, self.xi_min),
                iterations: rep.iterations,
                residual: rep.rel_residual,
            });
        }
        let mut v = self.v0_expand(&x);
        for (a, b) in v.iter_mut().zip(&lift.v_tilde) {
            *a += b;
        }
        let dv = self.ops.d.matvec(&v);
        let p = self.p_lu.solve(&data_p.iter().zip(&dv).map(|(a, b)| a - b).collect::<Vec<_>>());
        Ok(FluidSolve { v, p, iterations: rep.iterations, rel_residual: rep.rel_residual })
    }

    fn plate_values(&self, w_full: &[f64]) -> Vec<f64> {
        (0..w_full.len() / PLATE_DOFS_PER_NODE).map(|n| w_full[PLATE_DOFS_PER_NODE * n]).collect()
    }

    /// Fluid reaction S v - D^T p on the face, as a plate load.
    fn reaction(&self, v: &[f64], p: &[f64], extra: Option<&[f64]>) -> Vec<f64> {
        let mut r = self.s_vel.matvec(v);
        let dtp = self.ops.d_t.matvec(p);
        for (a, b) in r.iter_mut().zip(&dtp) {
            *a -= b;
        }
        if let Some(e) = extra {
            for (a, b) in r.iter_mut().zip(e) {
                *a -= b;
            }
        }
        let mut out = vec![0.0; self.ops.space.layout.n_plate];
        for &(dof, pn) in &self.ops.space.layout.ties {
            out[PLATE_DOFS_PER_NODE * pn] = r[dof];
        }
        out
    }

    /// Plate operator B w = xi^2 M_w w + K w + xi E^T R(w) on free DOFs,
    /// where R(w) is the fluid reaction to the boundary data w.
    pub fn apply_plate_operator(&self, x: &[f64]) -> Result<Vec<f64>> {
        let plate = &self.ops.space.plate;
        let full = plate.expand(x);
        let fl = self.solve_fluid_subproblem(&self.plate_values(&full), None, None)?;
        let r = self.reaction(&fl.v, &fl.p, None);
        let mw = plate.mass.matvec(&full);
        let kw = plate.k_bih.matvec(&full);
        let xi = self.xi;
        let out: Vec<f64> = (0..full.len()).map(|i| xi * xi * mw[i] + kw[i] + xi * r[i]).collect();
        Ok(plate.restrict(&out))
    }

    /// Solves the plate equation for w1 given the data solve and rhs.
    pub fn solve_plate_subproblem(&self, rhs: &State, data: &FluidSolve) -> Result<(Vec<f64>, usize, f64)> {
        let plate = &self.ops.space.plate;
        let xi = self.xi;
        let w1s = &rhs.w;
        let w2s = &rhs.wdot;
        let comb: Vec<f64> = w2s.iter().zip(w1s).map(|(a, b)| a + xi * b).collect();
        let mut load = plate.mass.matvec(&comb);
        let fl1 = self.solve_fluid_subproblem(&self.plate_values(w1s), None, None)?;
        let r1 = self.reaction(&fl1.v, &fl1.p, None);
        let mv = self.m_u.matvec(&rhs.u);
        let rbar = self.reaction(&data.v, &data.p, Some(&mv));
        for i in 0..load.len() {
            load[i] += r1[i] - rbar[i];
        }
        let b = plate.restrict(&load);
        let mut err = None;
        let (x, rep) = gmres(
            |v| match self.apply_plate_operator(v) {
                Ok(r) => r,
                Err(e) => {
                    err.get_or_insert(e);
                    vec![0.0; v.len()]
                }
            },
            |v| self.plate_pc.solve(v),
            &b,
            None,
            self.outer,
        );
        if let Some(e) = err {
            return Err(e);
        }
        if !rep.converged && rep.rel_residual > 1e-10 {
            return Err(FsiError::NotConverged {
                context: format!("plate subproblem at xi = {xi}"),
                iterations: rep.iterations,
                residual: rep.rel_residual,
            });
        }
        Ok((plate.expand(&x), rep.iterations, rep.rel_residual))
    }

    /// Full structured solve: data solve, plate solve, then recovery of
    /// w2 = xi w1 - w1*, v = v(w2) + v_bar, p = p(w2) + p_bar.
    pub fn solve(&self, rhs: &State) -> Result<(State, StructuredReport)> {
        self.ops.space.layout.check_shape(rhs)?;
        self.fluid_solves.set(0);
        let zero_g = vec![0.0; self.ops.space.geometry.plate().num_nodes()];
        let data = self.solve_fluid_subproblem(&zero_g, Some(&rhs.p), Some(&rhs.u))?;
        let (w1, it, res) = self.solve_plate_subproblem(rhs, &data)?;
        let w2: Vec<f64> = w1.iter().zip(&rhs.w).map(|(a, b)| self.xi * a - b).collect();
        let fl = self.solve_fluid_subproblem(&self.plate_values(&w2), None, None)?;
        let v: Vec<f64> = fl.v.iter().zip(&data.v).map(|(a, b)| a + b).collect();
        let p: Vec<f64> = fl.p.iter().zip(&data.p).map(|(a, b)| a + b).collect();
        let y = State { p, u: v, w: w1, wdot: w2 };
        Ok((
            y,
            StructuredReport {
                xi: self.xi,
                xi_min: self.xi_min,
                plate_iterations: it,
                plate_rel_residual: res,
                fluid_solves: self.fluid_solves.get(),
            },
        ))
    }

    /// The V0 block of the fluid operator without the nested pressure term.
    pub fn fluid_block(&self) -> &CsrMatrix {
        &self.s_v0
    }
}

/// One factorization of xi M - K for repeated monolithic solves.
pub struct MonolithicResolvent {
    pub xi: f64,
    pub which: Generator,
    lu: SparseLu,
}

impl std::fmt::Debug for MonolithicResolvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MonolithicResolvent").field("xi", &self.xi).field("which", &self.which).finish()
    }
}

impl MonolithicResolvent {
    pub fn new(ops: &OperatorSet, xi: f64, which: Generator) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(FsiError::param("resolvent.xi", format!("must be positive, got {xi}")));
        }
        let a = CsrMatrix::combine(&[(xi, &ops.m_red), (-1.0, ops.reduced_matrix(which))]);
        let lu = SparseLu::new(&a, "monolithic resolvent (unique solvability follows from dissipativity; a singular matrix indicates an assembly error)")?;
        Ok(MonolithicResolvent { xi, which, lu })
    }

    /// Solves the reduced system for a reduced right-hand side.
    pub fn solve_reduced(&self, r: &[f64]) -> Vec<f64> {
        self.lu.solve(r)
    }

    pub fn solve(&self, ops: &OperatorSet, rhs: &State) -> Result<State> {
        let l = &ops.space.layout;
        l.check_shape(rhs)?;
        let r = ops.m_red.matvec(&l.restrict(rhs));
        let z = self.lu.solve(&r);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(FsiError::Singular {
                context: "monolithic resolvent".into(),
                message: "non-finite solution".into(),
            });
        }
        Ok(l.expand(&z))
    }
}

pub fn solve_resolvent_monolithic(ops: &OperatorSet, xi: f64, rhs: &State, which: Generator) -> Result<State> {
    MonolithicResolvent::new(ops, xi, which)?.solve(ops, rhs)
}

pub fn solve_resolvent_structured(ops: &OperatorSet, xi: f64, xi_min: f64, rhs: &State) -> Result<(State, StructuredReport)> {
    StructuredResolvent::new(ops, xi, xi_min)?.solve(rhs)
}

/// ||(xi I - A) y - y*||_H relative to ||y*||_H.
pub fn resolvent_residual(ops: &OperatorSet, xi: f64, y: &State, rhs: &State, which: Generator) -> ResolventResidual {
    let ay = ops.apply_generator(y, which);
    let r = y.scaled(xi).add_scaled(-1.0, &ay).add_scaled(-1.0, rhs);
    let blocks = ops.space.inner_product_blocks(&r, &r);
    let rn = blocks.iter().sum::<f64>().max(0.0).sqrt();
    let bn = ops.space.norm(rhs);
    ResolventResidual {
        relative: if bn > 0.0 { rn / bn } else { rn },
        blocks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{make_builtin, AmbientKind};
    use crate::assembly::FluidParams;
    use crate::geometry::build_geometry;
    use crate::operators::assemble_all;

    fn ops(kind: AmbientKind) -> OperatorSet {
        let g = build_geometry(4, 4, 4).unwrap();
        let f = make_builtin(kind, &g).unwrap();
        assemble_all(&g, &f, &FluidParams::default()).unwrap()
    }

    #[test]
    fn lifting_profile() {
        let o = ops(AmbientKind::Zero);
        let geo = o.space.geometry;
        let plate = geo.plate();
        let g: Vec<f64> = (0..plate.num_nodes())
            .map(|n| {
                let [x, y] = plate.node_coord(n);
                if plate.is_boundary_node(n) { 0.0 } else { (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin() }
            })
            .collect();
        let l = lift_boundary_data(&o, &g).unwrap();
        let nn = geo.num_nodes();
        for i in 0..=geo.nx {
            for j in 0..=geo.ny {
                let mid = geo.node(i, j, geo.nz / 2);
                assert!((l.v_tilde[2 * nn + mid] - 0.5 * g[plate.node(i, j)]).abs() < 1e-15);
                let top = geo.node(i, j, geo.nz);
                assert_eq!(l.v_tilde[2 * nn + top], g[plate.node(i, j)]);
                assert_eq!(l.v_tilde[2 * nn + geo.node(i, j, 0)], 0.0);
            }
        }
        let tr = geo.trace_map().trace_scalar(&l.v_tilde[2 * nn..]);
        assert_eq!(tr, g);
        let zero = lift_boundary_data(&o, &vec![0.0; plate.num_nodes()]).unwrap();
        assert!(zero.v_tilde.iter().all(|v| *v == 0.0));
        let mut bad = g.clone();
        bad[0] = 1.0;
        assert!(matches!(lift_boundary_data(&o, &bad), Err(FsiError::BoundaryData { .. })));
    }

    #[test]
    fn zero_field_pressure_map_is_scaled_forcing() {
        let o = ops(AmbientKind::Zero);
        let r = StructuredResolvent::new(&o, 3.0, 0.0).unwrap();
        let ps: Vec<f64> = (0..o.space.layout.n_p).map(|i| (i as f64).sin()).collect();
        let p = r.pressure_map(PressureForcing::Data(&ps));
        for (a, b) in p.iter().zip(&ps) {
            assert!((a - b / 3.0).abs() < 1e-13);
        }
        let z = r.pressure_map(PressureForcing::Data(&vec![0.0; ps.len()]));
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_data_gives_zero() {
        let o = ops(AmbientKind::Vortex);
        let r = StructuredResolvent::new(&o, 50.0, 40.0).unwrap();
        let y = State::zeros(&o.space.layout);
        let (s, _) = r.solve(&y).unwrap();
        assert!(s.p.iter().chain(&s.u).chain(&s.w).chain(&s.wdot).all(|v| *v == 0.0));
        let m = solve_resolvent_monolithic(&o, 50.0, &y, Generator::AHat).unwrap();
        assert!(m.p.iter().chain(&m.u).all(|v| *v == 0.0));
        assert!(matches!(StructuredResolvent::new(&o, 1.0, 40.0), Err(FsiError::XiTooSmall { .. })));
    }

    #[test]
    fn paths_agree_on_random_data() {
        for kind in [AmbientKind::Zero, AmbientKind::Columnar] {
            let o = ops(kind);
            let xi = 25.0;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let rhs = o.space.random_state(&mut rng);
            let (ys, _) = solve_resolvent_structured(&o, xi, 0.0, &rhs).unwrap();
            let ym = solve_resolvent_monolithic(&o, xi, &rhs, Generator::AHat).unwrap();
            let diff = o.space.norm(&ys.add_scaled(-1.0, &ym)) / o.space.norm(&ym);
            assert!(diff < 1e-9, "{kind:?}: {diff}");
            assert!(resolvent_residual(&o, xi, &ys, &rhs, Generator::AHat).relative < 1e-9);
            assert!(o.space.norm(&ym) <= o.space.norm(&rhs) / xi * (1.0 + 1e-12));
        }
    }
}
