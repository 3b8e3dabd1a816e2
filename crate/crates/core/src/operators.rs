//! The assembled operator set and the discrete generator of the coupled
//! fluid-plate evolution.

use serde::Serialize;

use crate::ambient::{require_tangent, AmbientField};
use crate::assembly::{
    divergence, fluid_stiffness, scalar_advection, skew_part, vector_blockdiag, FluidParams,
};
use crate::error::{FsiError, Result};
use crate::geometry::{BoxGeometry, PLATE_DOFS_PER_NODE};
use crate::sparse::{CsrMatrix, SparseLu, Triplet};
use crate::state::{State, StateSpace};

/// Which generator to apply: the full one, or the perturbed one with the
/// bounded divergence shift removed from the fluid blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Generator {
    A,
    AHat,
}

#[derive(Debug)]
pub struct OperatorSet {
    pub space: StateSpace,
    pub field: AmbientField,
    /// Plain Galerkin advection on the velocity grid (one component).
    pub n_s: CsrMatrix,
    /// Divergence-weighted mass on the velocity grid (one component).
    pub mdiv_s: CsrMatrix,
    pub n_p: CsrMatrix,
    pub mdiv_p: CsrMatrix,
    /// Skew-symmetrized advection, pressure space.
    pub c_p: CsrMatrix,
    /// Skew-symmetrized advection, all three velocity components.
    pub c_u: CsrMatrix,
    pub mdiv_u: CsrMatrix,
    /// Divergence pairing, pressure rows by velocity columns.
    pub d: CsrMatrix,
    pub d_t: CsrMatrix,
    /// Stress form (sigma(u), eps(psi)) without the zeroth-order term.
    pub k_stress: CsrMatrix,
    /// Reduced Gram matrix of the energy inner product.
    pub m_red: CsrMatrix,
    /// Reduced weak form of the perturbed generator.
    pub k_hat_red: CsrMatrix,
    /// Reduced weak form of the full generator.
    pub k_a_red: CsrMatrix,
    m_lu: SparseLu,
}

/// Assembles every operator for a geometry, ambient field and fluid constants.
pub fn assemble_all(
    geometry: &BoxGeometry,
    field: &AmbientField,
    params: &FluidParams,
) -> Result<OperatorSet> {
    params.validate()?;
    if field.geometry != *geometry {
        return Err(FsiError::Dimension("ambient field sampled on a different grid".into()));
    }
    require_tangent(field, geometry)?;
    let space = StateSpace::new(geometry, params)?;
    let (n_s, mdiv_s) = scalar_advection(&space.velocity_space, field);
    let (n_p, mdiv_p) = scalar_advection(&space.pressure_space, field);
    let c_s = skew_part(&n_s);
    let c_p = skew_part(&n_p);
    let c_u = vector_blockdiag(&c_s);
    let mdiv_u = vector_blockdiag(&mdiv_s);
    let d = divergence(&space.velocity_space, &space.pressure_space);
    let d_t = d.transpose();
    let k_stress = fluid_stiffness(&space.velocity_space, params, 0.0);

    let l = &space.layout;
    let (ou, ow, owd) = (l.off_u(), l.off_w(), l.off_wd());
    let m_red = l.restrict_triplets(space.gram_triplets().into_iter());

    let mut hat: Vec<Triplet> = Vec::new();
    hat.extend(c_p.triplets().map(|(i, j, v)| (i, j, -v)));
    hat.extend(d.triplets().map(|(i, j, v)| (i, ou + j, -v)));
    hat.extend(d_t.triplets().map(|(i, j, v)| (ou + i, j, v)));
    hat.extend(space.k_fluid.triplets().map(|(i, j, v)| (ou + i, ou + j, -v)));
    hat.extend(c_u.triplets().map(|(i, j, v)| (ou + i, ou + j, -v)));
    hat.extend(space.plate.k_bih.triplets().map(|(i, j, v)| (ow + i, owd + j, v)));
    hat.extend(space.plate.k_bih.triplets().map(|(i, j, v)| (owd + i, ow + j, -v)));
    let mut full = hat.clone();
    full.extend(mdiv_p.triplets().map(|(i, j, v)| (i, j, 0.5 * v)));
    full.extend(mdiv_u.triplets().map(|(i, j, v)| (ou + i, ou + j, 0.5 * v)));
    let k_hat_red = l.restrict_triplets(hat.into_iter());
    let k_a_red = l.restrict_triplets(full.into_iter());
    let m_lu = SparseLu::new(&m_red, "energy Gram matrix")?;

    Ok(OperatorSet {
        field: field.clone(),
        n_s,
        mdiv_s,
        n_p,
        mdiv_p,
        c_p,
        c_u,
        mdiv_u,
        d,
        d_t,
        k_stress,
        m_red,
        k_hat_red,
        k_a_red,
        m_lu,
        space,
    })
}

/// Quadrature and structure diagnostics of an assembled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorDiagnostics {
    /// max |C + C^T| over both advection matrices (zero by construction).
    pub skew_defect: f64,
    /// max |(N + M_div / 2) - C|, the quadrature residual of the
    /// skew-symmetrized advection.
    pub advection_quadrature_residual: f64,
    /// max |K - K^T| of the fluid form.
    pub fluid_form_asymmetry: f64,
    pub reduced_dofs: usize,
}

impl OperatorSet {
    pub fn reduced_matrix(&self, which: Generator) -> &CsrMatrix {
        match which {
            Generator::A => &self.k_a_red,
            Generator::AHat => &self.k_hat_red,
        }
    }

    /// Applies the discrete generator: the result x solves M x = K y in the
    /// constrained space, so (x, z)_H = K(y, z) for every admissible z.
    pub fn apply_generator(&self, y: &State, which: Generator) -> State {
        let l = &self.space.layout;
        let z = l.restrict(y);
        let r = self.reduced_matrix(which).matvec(&z);
        l.expand(&self.m_lu.solve(&r))
    }

    /// Solves M x = r for a reduced right-hand side.
    pub fn mass_solve(&self, r: &[f64]) -> Vec<f64> {
        self.m_lu.solve(r)
    }

    /// Interface load of the fluid stress on the plate: the normal stress
    /// 2 nu d3 u3 + lambda div u - p tested against plate value functions,
    /// realized through the variational flux of the velocity lifting that
    /// carries a plate value onto the normal velocity of the face node.
    pub fn stress_trace(&self, u: &[f64], p: &[f64]) -> Vec<f64> {
        let ku = self.k_stress.matvec(u);
        let dp = self.d_t.matvec(p);
        let mut out = vec![0.0; self.space.layout.n_plate];
        for &(dof, pn) in &self.space.layout.ties {
            out[PLATE_DOFS_PER_NODE * pn] = ku[dof] - dp[dof];
        }
        out
    }

    /// Plate velocity value at each face node, carried onto the normal
    /// velocity DOF of the matching fluid node.
    pub fn velocity_trace(&self, wdot: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.space.layout.n_nodes];
        for &(dof, pn) in &self.space.layout.ties {
            out[dof] = wdot[PLATE_DOFS_PER_NODE * pn];
        }
        out
    }

    /// div U work rate (1/2)(div U, p^2 + |u|^2).
    pub fn div_work(&self, y: &State) -> f64 {
        0.5 * (self.mdiv_p.quad_form(&y.p, &y.p) + self.mdiv_u.quad_form(&y.u, &y.u))
    }

    pub fn diagnostics(&self) -> OperatorDiagnostics {
        let skew = |c: &CsrMatrix| CsrMatrix::combine(&[(1.0, c), (1.0, &c.transpose())]).max_abs();
        let quad = |n: &CsrMatrix, md: &CsrMatrix| {
            let c = skew_part(n);
            CsrMatrix::combine(&[(1.0, n), (0.5, md), (-1.0, &c)]).max_abs()
        };
        let k = &self.space.k_fluid;
        OperatorDiagnostics {
            skew_defect: skew(&self.c_p).max(skew(&self.c_u)),
            advection_quadrature_residual: quad(&self.n_p, &self.mdiv_p)
                .max(quad(&self.n_s, &self.mdiv_s)),
            fluid_form_asymmetry: CsrMatrix::combine(&[(1.0, k), (-1.0, &k.transpose())]).max_abs(),
            reduced_dofs: self.space.layout.n_reduced,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{make_builtin, AmbientKind};
    use crate::geometry::build_geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops(kind: AmbientKind, n: usize) -> OperatorSet {
        let g = build_geometry(n, n, n).unwrap();
        let f = make_builtin(kind, &g).unwrap();
        assemble_all(&g, &f, &FluidParams::default()).unwrap()
    }

    #[test]
    fn zero_field_has_no_advection() {
        let o = ops(AmbientKind::Zero, 2);
        assert_eq!(o.c_p.max_abs(), 0.0);
        assert_eq!(o.c_u.max_abs(), 0.0);
    }

    #[test]
    fn rejects_bad_parameters_and_fields() {
        let g = build_geometry(2, 2, 2).unwrap();
        let f = make_builtin(AmbientKind::Zero, &g).unwrap();
        let bad = FluidParams { nu: -1.0, ..FluidParams::default() };
        assert!(matches!(assemble_all(&g, &f, &bad), Err(FsiError::Parameter { .. })));
        let t = AmbientField::from_nodal(&g, vec![[1.0, 0.0, 0.0]; g.num_nodes()]).unwrap();
        assert!(matches!(
            assemble_all(&g, &t, &FluidParams::default()),
            Err(FsiError::NotTangent { .. })
        ));
    }

    #[test]
    fn generator_of_zero_is_zero() {
        let o = ops(AmbientKind::Vortex, 4);
        let z = State::zeros(&o.space.layout);
        let a = o.apply_generator(&z, Generator::A);
        assert!(a.p.iter().chain(&a.u).chain(&a.w).chain(&a.wdot).all(|v| *v == 0.0));
    }

    #[test]
    fn pressure_only_state_excites_velocity_and_plate_velocity() {
        let o = ops(AmbientKind::Zero, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut y = State::zeros(&o.space.layout);
        for v in y.p.iter_mut() {
            *v = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        }
        let a = o.apply_generator(&y, Generator::A);
        let scale = a.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        assert!(a.p.iter().all(|v| v.abs() <= 1e-12 * scale));
        assert!(a.w.iter().all(|v| v.abs() <= 1e-12 * scale));
        assert!(a.wdot.iter().any(|v| v.abs() > 1e-6 * scale));
    }

    #[test]
    fn dissipativity_identity() {
        for kind in [AmbientKind::Zero, AmbientKind::Vortex, AmbientKind::Columnar] {
            let o = ops(kind, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..20 {
                let y = o.space.random_state(&mut rng);
                let ay = o.apply_generator(&y, Generator::AHat);
                let lhs = o.space.inner_product(&ay, &y).unwrap();
                let a = o.space.a_o(&y.u, &y.u);
                let n2 = o.space.norm(&y).powi(2);
                assert!((lhs + a).abs() <= 1e-10 * (1.0 + n2), "{kind:?}: {lhs} vs {a}");
            }
        }
    }

    #[test]
    fn constant_pressure_stress_trace() {
        let o = ops(AmbientKind::Zero, 4);
        let l = &o.space.layout;
        let u = vec![0.0; 3 * l.n_nodes];
        let p = vec![1.0; l.n_p];
        let t = o.stress_trace(&u, &p);
        let load = o.space.plate.unit_load();
        for d in 0..l.n_plate {
            if d % 4 == 0 {
                assert!((t[d] + load[d]).abs() < 1e-14, "{d}: {} {}", t[d], load[d]);
            } else {
                assert_eq!(t[d], 0.0);
            }
        }
    }

    #[test]
    fn diagnostics_are_clean() {
        for kind in [AmbientKind::Vortex, AmbientKind::Columnar] {
            let d = ops(kind, 4).diagnostics();
            assert_eq!(d.skew_defect, 0.0);
            assert!(d.advection_quadrature_residual < 1e-12, "{d:?}");
            assert!(d.fluid_form_asymmetry < 1e-13);
        }
    }
}
