//! Stationary states: the linear kernel (c, 0, w_c) and the nonlinear
//! clamped plate problem K w - f(w) = c l solved by multistart Newton.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FsiError, Result};
use crate::operators::{Generator, OperatorSet};
use crate::plate::PlateSpace;
use crate::sparse::{norm2, CsrMatrix, SparseLu};
use crate::state::State;
use crate::vonkarman::{dense_solve, F0Kind, VonKarman};

/// Residual threshold for members of the nonlinear stationary set.
pub const NEWTON_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelReport {
    /// |u|_{H1} / |y|_H
    pub u_h1_rel: f64,
    /// |grad p| / |y|_H
    pub grad_p_rel: f64,
    /// |a(u, u) - (1/2)(div U, p^2 + |u|^2)| / (1 + |y|_H^2)
    pub identity_residual: f64,
    /// |K w - c l| / |c l| with c the mean pressure coefficient
    pub plate_residual: f64,
    /// std / |mean| of the pressure coefficients
    pub p_std_rel: f64,
    pub p_mean: f64,
    /// |A y|_H / |y|_H
    pub generator_residual: f64,
    pub tolerance: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarySolveResult {
    pub c: f64,
    pub div_free: bool,
    #[serde(skip)]
    pub state: State,
    pub report: KernelReport,
}

/// Clamped plate deflection under the constant load c: K w_c = c l.
pub fn plate_deflection(plate: &PlateSpace, c: f64) -> Vec<f64> {
    let l: Vec<f64> = plate.unit_load().iter().map(|v| c * v).collect();
    plate.solve_biharmonic(&l)
}

/// The stationary triple for constant pressure c. For a div-free ambient
/// field this is (c, 0, w_c, 0); otherwise the kernel of the discrete
/// generator is computed and reported as found.
pub fn solve_linear_stationary(ops: &OperatorSet, c: f64) -> Result<StationarySolveResult> {
    let div_free = ops.field.is_div_free;
    let state = if div_free {
        let l = &ops.space.layout;
        let mut y = State::zeros(l);
        y.p.iter_mut().for_each(|p| *p = c);
        y.w = plate_deflection(&ops.space.plate, c);
        y
    } else {
        let k = numerical_kernel(ops, 1e-6, 40, 7)?;
        let mean = k.p.iter().sum::<f64>() / k.p.len() as f64;
        if mean != 0.0 { k.scaled(c / mean) } else { k }
    };
    let report = verify_kernel_structure(ops, &state, 1e-8);
    Ok(StationarySolveResult { c, div_free, state, report })
}

/// Structure of a candidate stationary state.
pub fn verify_kernel_structure(ops: &OperatorSet, y: &State, tolerance: f64) -> KernelReport {
    let sp = &ops.space;
    let yn = sp.norm(y);
    let rel = |v: f64| if yn > 0.0 { v / yn } else { v };
    let u_h1_rel = rel(sp.velocity_h1_norm(&y.u));
    let grad_p_rel = rel(sp.pressure_grad_norm(&y.p));
    let identity = sp.a_o(&y.u, &y.u) - ops.div_work(y);
    let identity_residual = identity.abs() / (1.0 + yn * yn);
    let n = y.p.len() as f64;
    let p_mean = y.p.iter().sum::<f64>() / n;
    let p_std = (y.p.iter().map(|p| (p - p_mean).powi(2)).sum::<f64>() / n).sqrt();
    let p_std_rel = if p_mean != 0.0 { p_std / p_mean.abs() } else if p_std == 0.0 { 0.0 } else { f64::INFINITY };
    let load: Vec<f64> = sp.plate.unit_load().iter().map(|v| p_mean * v).collect();
    let kw = sp.plate.k_bih.matvec(&y.w);
    let pr = sp.plate.restrict(&kw.iter().zip(&load).map(|(a, b)| a - b).collect::<Vec<_>>());
    let ln = norm2(&sp.plate.restrict(&load));
    let plate_residual = if ln > 0.0 { norm2(&pr) / ln } else { norm2(&pr) };
    let ay = ops.apply_generator(y, Generator::A);
    let generator_residual = rel(sp.norm(&ay));
    let passes = if ops.field.is_div_free {
        u_h1_rel <= tolerance && grad_p_rel <= tolerance
    } else {
        generator_residual <= tolerance
    };
    KernelReport {
        u_h1_rel,
        grad_p_rel,
        identity_residual,
        plate_residual,
        p_std_rel,
        p_mean,
        generator_residual,
        tolerance,
        passes,
    }
}

/// Kernel vector of the discrete generator by inverse iteration with a
/// small shift, normalized to unit energy norm with positive mean pressure.
pub fn numerical_kernel(ops: &OperatorSet, shift: f64, iterations: usize, seed: u64) -> Result<State> {
    let l = &ops.space.layout;
    let a = CsrMatrix::combine(&[(1.0, ops.reduced_matrix(Generator::A)), (-shift, &ops.m_red)]);
    let lu = SparseLu::new(&a, "shifted generator")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..l.n_reduced).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for _ in 0..iterations {
        let x = lu.solve(&ops.m_red.matvec(&z));
        let n = ops.m_red.quad_form(&x, &x).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(FsiError::Singular {
                context: "kernel inverse iteration".into(),
                message: "iterate vanished".into(),
            });
        }
        z = x.iter().map(|v| v / n).collect();
    }
    let y = l.expand(&z);
    let mean: f64 = y.p.iter().sum();
    Ok(if mean < 0.0 { y.scaled(-1.0) } else { y })
}

#[derive(Debug, Clone, Serialize)]
pub struct NewtonOutcome {
    pub start: String,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// |Delta w|
    pub plate_norm: f64,
    #[serde(skip)]
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarySet {
    pub c: f64,
    pub f0: F0Kind,
    /// Converged, distinct members sorted by residual then plate norm.
    pub members: Vec<NewtonOutcome>,
    pub failures: Vec<NewtonOutcome>,
}

/// Relative residual of K w - f(w) - c l on the free DOFs.
pub fn nonlinear_residual(vk: &VonKarman<'_>, c: f64, w: &[f64]) -> (Vec<f64>, f64) {
    let ps = vk.plate;
    let kw = ps.k_bih.matvec(w);
    let f = vk.f_load(w);
    let l = ps.unit_load();
    let r: Vec<f64> = (0..w.len()).map(|i| kw[i] - f[i] - c * l[i]).collect();
    let rf = ps.restrict(&r);
    let scale = norm2(&ps.restrict(&kw)) + norm2(&ps.restrict(&f)) + c.abs() * norm2(&ps.restrict(&l));
    let rn = norm2(&rf);
    (rf, if scale > 0.0 { rn / scale } else { rn })
}

/// Damped Newton from `w_init` (full plate vector). Iterates until the
/// relative residual is below `tol` or stops decreasing.
pub fn solve_nonlinear_stationary(vk: &VonKarman<'_>, c: f64, w_init: &[f64], start: &str, tol: f64, max_iter: usize) -> NewtonOutcome {
    let ps = vk.plate;
    let mut w = w_init.to_vec();
    let (mut r, mut res) = nonlinear_residual(vk, c, &w);
    let mut it = 0;
    while res > tol && it < max_iter {
        it += 1;
        let j = vk.jacobian(&w);
        let dx = dense_solve(&j, &r);
        let step = ps.expand(&dx);
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-4 {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(a, b)| a - lambda * b).collect();
            let (rt, rest) = nonlinear_residual(vk, c, &trial);
            if rest.is_finite() && norm2(&rt) < norm2(&r) * (1.0 - 1e-4 * lambda) {
                w = trial;
                r = rt;
                res = rest;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let plate_norm = ps.k_bih.quad_form(&w, &w).max(0.0).sqrt();
    NewtonOutcome {
        start: start.to_string(),
        converged: res <= NEWTON_TOL,
        iterations: it,
        residual: res,
        plate_norm,
        w,
    }
}

/// Multistart Newton: zero, the linear solve, and `perturbations` random
/// perturbations of the linear solve. Runs concurrently; merged
/// deterministically.
pub fn stationary_set(plate: &PlateSpace, c: f64, f0: F0Kind, perturbations: usize, seed: u64) -> Result<StationarySet> {
    let vk = VonKarman::new(plate, f0)?;
    let n = plate.grid().num_dofs();
    let w_lin = plate_deflection(plate, c);
    let lin_norm = plate.k_bih.quad_form(&w_lin, &w_lin).sqrt().max(1.0);
    let mut starts: Vec<(String, Vec<f64>)> = vec![("zero".into(), vec![0.0; n]), ("linear".into(), w_lin.clone())];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..perturbations {
        let amp = lin_norm * rng.gen_range(0.5..4.0);
        let d = vk.random_smooth(&mut rng, amp);
        starts.push((format!("perturbed-{k}"), w_lin.iter().zip(&d).map(|(a, b)| a + b).collect()));
    }
    let outcomes: Vec<NewtonOutcome> = starts
        .par_iter()
        .map(|(name, w0)| solve_nonlinear_stationary(&vk, c, w0, name, 0.1 * NEWTON_TOL, 60))
        .collect();
    let (mut ok, failures): (Vec<_>, Vec<_>) = outcomes.into_iter().partition(|o| o.converged);
    ok.sort_by(|a, b| a.residual.total_cmp(&b.residual).then(a.plate_norm.total_cmp(&b.plate_norm)));
    let mut members: Vec<NewtonOutcome> = Vec::new();
    for o in ok {
        let dup = members.iter().any(|m| {
            let d: Vec<f64> = m.w.iter().zip(&o.w).map(|(a, b)| a - b).collect();
            plate.k_bih.quad_form(&d, &d).max(0.0).sqrt() <= 1e-6 * (1.0 + m.plate_norm)
        });
        if !dup {
            members.push(o);
        }
    }
    Ok(StationarySet { c, f0, members, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{make_builtin, AmbientKind};
    use crate::assembly::FluidParams;
    use crate::geometry::{build_geometry, PlateGrid};
    use crate::operators::assemble_all;

    fn ops(kind: AmbientKind) -> OperatorSet {
        let g = build_geometry(4, 4, 4).unwrap();
        let f = make_builtin(kind, &g).unwrap();
        assemble_all(&g, &f, &FluidParams::default()).unwrap()
    }

    #[test]
    fn constant_pressure_state_is_stationary() {
        for kind in [AmbientKind::Zero, AmbientKind::Vortex] {
            let o = ops(kind);
            let s = solve_linear_stationary(&o, 1.0).unwrap();
            assert!(s.report.passes);
            assert!(s.report.generator_residual < 1e-10, "{kind:?}: {}", s.report.generator_residual);
            assert!(s.report.identity_residual < 1e-12);
            assert!(s.report.plate_residual < 1e-10);
            let z = solve_linear_stationary(&o, 0.0).unwrap();
            assert!(z.state.w.iter().all(|v| *v == 0.0));
            let two = plate_deflection(&o.space.plate, 2.0);
            for (a, b) in two.iter().zip(&s.state.w) {
                assert_eq!(*a, 2.0 * b);
            }
        }
    }

    #[test]
    fn numerical_kernel_has_stationary_structure() {
        let o = ops(AmbientKind::Vortex);
        let k = numerical_kernel(&o, 1e-6, 30, 1).unwrap();
        let r = verify_kernel_structure(&o, &k, 1e-6);
        assert!(r.passes, "{r:?}");
        assert!(r.p_std_rel < 1e-6);
        assert!(r.plate_residual < 1e-6);
    }

    #[test]
    fn random_state_is_not_stationary() {
        let o = ops(AmbientKind::Zero);
        let y = o.space.random_state(&mut ChaCha8Rng::seed_from_u64(3));
        let r = verify_kernel_structure(&o, &y, 1e-8);
        assert!(!r.passes);
        assert!(r.generator_residual > 1e-3);
    }

    #[test]
    fn newton_finds_zero_and_small_load_solutions() {
        let ps = PlateSpace::new(PlateGrid::new(6, 6).unwrap()).unwrap();
        let s0 = stationary_set(&ps, 0.0, F0Kind::Zero, 2, 1).unwrap();
        let best = &s0.members[0];
        assert!(best.w.iter().all(|v| v.abs() < 1e-14));
        let s1 = stationary_set(&ps, 1.0, F0Kind::Zero, 2, 1).unwrap();
        assert!(!s1.members.is_empty());
        assert!(s1.members[0].residual <= NEWTON_TOL);
    }
}
