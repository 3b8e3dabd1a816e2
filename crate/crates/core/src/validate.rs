//! Invariant suite run by the `validate` command: every discrete identity
//! that holds exactly for the assembled operators, checked on seeded data.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ambient::{appendix_admissibility, validate_tangency, TransportAdmissibility, TANGENCY_TOL};
use crate::assembly::gradient_pairing;
use crate::geometry::PLATE_DOFS_PER_NODE;
use crate::operators::{Generator, OperatorSet};
use crate::resolvent::lift_boundary_data;
use crate::sparse::{dot, norm2};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passes: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            passes: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<Check>,
    /// Transport admissibility at k = 1 (informational).
    pub admissibility: Option<TransportAdmissibility>,
    pub passes: bool,
}

/// max |Re(A y, y)_H + a(u, u) - divwork(y)| / (1 + |y|^2) over random states.
pub fn dissipativity_defect(ops: &OperatorSet, which: Generator, samples: usize, rng: &mut impl Rng) -> f64 {
    let sp = &ops.space;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let y = sp.random_state(rng);
        let z = sp.layout.restrict(&y);
        let form = dot(&z, &ops.reduced_matrix(which).matvec(&z));
        let work = match which {
            Generator::A => ops.div_work(&y),
            Generator::AHat => 0.0,
        };
        let n2 = sp.norm(&y).powi(2);
        worst = worst.max((form + sp.a_o(&y.u, &y.u) - work).abs() / (1.0 + n2));
    }
    worst
}

/// Number of numerically zero singular values of the discrete gradient
/// restricted to V0 (D^T on the V0 rows); constants only means exactly one.
pub fn gradient_kernel_dimension(ops: &OperatorSet) -> usize {
    let v0 = &ops.space.layout.v0_dofs;
    let all_p: Vec<usize> = (0..ops.space.layout.n_p).collect();
    let d0 = ops.d.select(&all_p, v0);
    let np = all_p.len();
    let mut gram = Mat::<f64>::zeros(np, np);
    for i in 0..np {
        let ri: Vec<(usize, f64)> = d0.row(i).collect();
        for j in 0..np {
            let mut s = 0.0;
            let mut rj = d0.row(j).peekable();
            for &(c, v) in &ri {
                while let Some(&(cj, _)) = rj.peek() {
                    if cj < c {
                        rj.next();
                    } else {
                        break;
                    }
                }
                if let Some(&(cj, vj)) = rj.peek() {
                    if cj == c {
                        s += v * vj;
                    }
                }
            }
            gram[(i, j)] = s;
        }
    }
    let sv = gram.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|s| **s <= 1e-11 * max).count()
}

/// Runs the full suite.
pub fn run_invariant_suite(ops: &OperatorSet, samples: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = &ops.space;
    let geo = sp.geometry;
    let mut checks = Vec::new();

    checks.push(Check::new(
        "dissipativity_identity_perturbed",
        dissipativity_defect(ops, Generator::AHat, samples, &mut rng),
        1e-10,
    ));
    checks.push(Check::new(
        "dissipativity_identity_full",
        dissipativity_defect(ops, Generator::A, samples, &mut rng),
        1e-10,
    ));

    let diag = ops.diagnostics();
    checks.push(Check::new("advection_skew_defect", diag.skew_defect, 0.0));
    checks.push(Check::new("advection_quadrature_residual", diag.advection_quadrature_residual, 1e-12));
    checks.push(Check::new(
        "fluid_form_asymmetry",
        diag.fluid_form_asymmetry / sp.k_fluid.max_abs().max(1.0),
        1e-14,
    ));
    checks.push(Check::new("tangency", validate_tangency(&ops.field, &geo).max_normal, TANGENCY_TOL));

    let mut violation: f64 = 0.0;
    for _ in 0..samples.min(20) {
        let y = sp.random_state(&mut rng);
        violation = violation.max(sp.layout.constraint_violation(&y));
        let back = sp.layout.expand(&sp.layout.restrict(&y));
        violation = violation.max(if back == y { 0.0 } else { 1.0 });
    }
    checks.push(Check::new("state_restrict_expand_round_trip", violation, 0.0));

    let plate = geo.plate();
    let g: Vec<f64> = (0..plate.num_nodes())
        .map(|n| if plate.is_boundary_node(n) { 0.0 } else { rng.gen_range(-1.0..1.0) })
        .collect();
    let trace_err = match lift_boundary_data(ops, &g) {
        Ok(l) => {
            let nn = geo.num_nodes();
            let tr = geo.trace_map().trace_scalar(&l.v_tilde[2 * nn..]);
            tr.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        }
        Err(_) => f64::INFINITY,
    };
    checks.push(Check::new("lifting_trace_round_trip", trace_err, 0.0));

    let gmat = gradient_pairing(&sp.velocity_space, &sp.pressure_space);
    let mut duality: f64 = 0.0;
    for _ in 0..samples.min(20) {
        let mut v = vec![0.0; 3 * sp.layout.n_nodes];
        for &d in &sp.layout.v0_dofs {
            v[d] = rng.gen_range(-1.0..1.0);
        }
        let q: Vec<f64> = (0..sp.layout.n_p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = dot(&q, &ops.d.matvec(&v));
        let b = dot(&v, &gmat.matvec(&q));
        duality = duality.max((a + b).abs() / (norm2(&q) * norm2(&v)).max(1e-300));
    }
    checks.push(Check::new("divergence_gradient_duality_on_v0", duality, 1e-13));
    checks.push(Check::new(
        "gradient_kernel_extra_dimensions",
        (gradient_kernel_dimension(ops) as f64 - 1.0).abs(),
        0.0,
    ));

    let ones = vec![1.0; sp.layout.n_p];
    let st = ops.stress_trace(&vec![0.0; 3 * sp.layout.n_nodes], &ones);
    let ul = sp.plate.unit_load();
    let mut st_err: f64 = 0.0;
    for n in 0..plate.num_nodes() {
        let d = PLATE_DOFS_PER_NODE * n;
        st_err = st_err.max((st[d] + ul[d]).abs());
    }
    checks.push(Check::new("constant_pressure_stress_trace", st_err, 1e-12));

    let admissibility = appendix_admissibility(&ops.field, 1.0, 1.0).ok();
    let passes = checks.iter().all(|c| c.passes);
    SuiteReport { seed, samples, checks, admissibility, passes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{make_builtin, AmbientKind};
    use crate::assembly::FluidParams;
    use crate::geometry::build_geometry;
    use crate::operators::assemble_all;

    #[test]
    fn suite_passes_on_builtins() {
        let g = build_geometry(4, 4, 2).unwrap();
        for kind in [AmbientKind::Zero, AmbientKind::Vortex, AmbientKind::Columnar] {
            let f = make_builtin(kind, &g).unwrap();
            let o = assemble_all(&g, &f, &FluidParams::default()).unwrap();
            let r = run_invariant_suite(&o, 10, 1);
            for c in &r.checks {
                assert!(c.passes, "{kind:?} {}: {} > {}", c.name, c.value, c.tolerance);
            }
        }
    }
}
