//! Scalar transport k q + v.grad q + (1/2) q div v = G, solved through its
//! vanishing-viscosity regularization with homogeneous Dirichlet data.

use serde::Serialize;

use crate::ambient::{appendix_admissibility, AmbientField, TransportAdmissibility};
use crate::assembly::{cell_quadrature, scalar_advection, scalar_mass, scalar_stiffness, skew_part, ScalarSpace};
use crate::error::{FsiError, Result};
use crate::sparse::{dot, gmres, CsrMatrix, GmresOptions, GmresReport, SparseLu};

#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub k: f64,
    /// Nodal values of the source on the transport space.
    pub g: Vec<f64>,
    /// Strictly decreasing viscosities.
    pub epsilon_schedule: Vec<f64>,
    /// Proceed (with a note) when k is below the admissible minimum.
    pub warn_only: bool,
    pub sobolev_const: f64,
    /// Required L2 difference between the last two iterates, if any.
    pub cauchy_tol: Option<f64>,
}

/// Default schedule eps_j = h 2^-j, j = 0..=6.
pub fn default_schedule(h: f64) -> Vec<f64> {
    (0..=6).map(|j| h * 0.5f64.powi(j)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularizedSolve {
    pub epsilon: f64,
    #[serde(skip)]
    pub q: Vec<f64>,
    pub l2_norm_q: f64,
    pub estimate_ratio: f64,
    /// |eps |grad q|^2 + k |q|^2 - (G, q)| / |(G, q)|
    pub identity_residual: f64,
    pub iterations: usize,
    pub solver_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleRow {
    pub epsilon: f64,
    pub l2_norm_q: f64,
    pub estimate_ratio: f64,
    /// L2 distance to the previous iterate (NaN for the first).
    pub diff_prev: f64,
    pub identity_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportReport {
    pub rows: Vec<ScheduleRow>,
    pub admissibility: Option<TransportAdmissibility>,
    pub notes: Vec<String>,
    /// Successive differences failed to decrease somewhere along the schedule.
    pub non_monotone: bool,
    #[serde(skip)]
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimateReport {
    pub k: f64,
    pub q_norm: f64,
    pub g_norm: f64,
    pub ratio: f64,
    pub passes: bool,
}

pub const ESTIMATE_TOL: f64 = 1e-8;

/// Assembled transport operators on one scalar space.
#[derive(Debug)]
pub struct TransportSolver {
    pub space: ScalarSpace,
    pub field: AmbientField,
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    /// Skew-symmetrized advection, realizing v.grad + (1/2) div v.
    pub advection: CsrMatrix,
    pub interior: Vec<usize>,
    pub gmres: GmresOptions,
}

impl TransportSolver {
    pub fn new(space: ScalarSpace, field: &AmbientField) -> Self {
        let (n, _) = scalar_advection(&space, field);
        let interior = (0..space.num_nodes()).filter(|&i| !space.is_boundary_node(i)).collect();
        TransportSolver {
            mass: scalar_mass(&space),
            stiffness: scalar_stiffness(&space),
            advection: skew_part(&n),
            space,
            field: field.clone(),
            interior,
            gmres: GmresOptions {
                rel_tol: 1e-14,
                max_iter: 600,
                restart: 80,
            },
        }
    }

    pub fn l2_norm(&self, q: &[f64]) -> f64 {
        self.mass.quad_form(q, q).max(0.0).sqrt()
    }

    /// Solves the regularized Dirichlet problem at one viscosity.
    pub fn solve_regularized(
        &self,
        problem: &TransportProblem,
        epsilon: f64,
        warm: Option<&[f64]>,
    ) -> Result<RegularizedSolve> {
        if !(epsilon > 0.0) {
            return Err(FsiError::param("transport.epsilon", format!("must be positive, got {epsilon}")));
        }
        let n = self.space.num_nodes();
        if problem.g.len() != n {
            return Err(FsiError::Dimension(format!("source has {} values, space has {n}", problem.g.len())));
        }
        let k = problem.k;
        let sym = CsrMatrix::combine(&[(epsilon, &self.stiffness), (k, &self.mass)]);
        let full = CsrMatrix::combine(&[(1.0, &sym), (1.0, &self.advection)]);
        let a = full.select(&self.interior, &self.interior);
        let p = sym.select(&self.interior, &self.interior);
        let lu = SparseLu::new(&p, "transport preconditioner")?;
        let mg = self.mass.matvec(&problem.g);
        let b: Vec<f64> = self.interior.iter().map(|&i| mg[i]).collect();
        let x0: Option<Vec<f64>> = warm.map(|w| self.interior.iter().map(|&i| w[i]).collect());
        let (x, rep): (Vec<f64>, GmresReport) =
            gmres(|v| a.matvec(v), |v| lu.solve(v), &b, x0.as_deref(), self.gmres);
        if !rep.converged && rep.rel_residual > 1e-10 {
            return Err(FsiError::NotConverged {
                context: format!("regularized transport at eps = {epsilon:e}"),
                iterations: rep.iterations,
                residual: rep.rel_residual,
            });
        }
        let mut q = vec![0.0; n];
        for (v, &i) in x.iter().zip(&self.interior) {
            q[i] = *v;
        }
        let gq = dot(&mg, &q);
        let lhs = epsilon * self.stiffness.quad_form(&q, &q) + k * self.mass.quad_form(&q, &q);
        let identity_residual = if gq != 0.0 { (lhs - gq).abs() / gq.abs() } else { lhs.abs() };
        let qn = self.l2_norm(&q);
        let gn = self.l2_norm(&problem.g);
        Ok(RegularizedSolve {
            epsilon,
            l2_norm_q: qn,
            estimate_ratio: if gn > 0.0 { k * qn / gn } else { 0.0 },
            identity_residual,
            iterations: rep.iterations,
            solver_residual: rep.rel_residual,
            q,
        })
    }

    /// Runs the viscosity schedule, warm-starting each solve from the previous.
    pub fn solve_transport(&self, problem: &TransportProblem) -> Result<TransportReport> {
        let sched = &problem.epsilon_schedule;
        if sched.is_empty() || sched.windows(2).any(|w| !(w[1] < w[0])) || sched.iter().any(|e| !(*e > 0.0)) {
            return Err(FsiError::param(
                "transport.epsilon_schedule",
                "must be a nonempty strictly decreasing sequence of positive values",
            ));
        }
        let mut notes = Vec::new();
        let admissibility = match appendix_admissibility(&self.field, problem.k, problem.sobolev_const) {
            Ok(a) => {
                if !a.passes {
                    if problem.warn_only {
                        notes.push(format!(
                            "k = {} is below k_min = {}; the L2 estimate is not guaranteed by the admissibility condition",
                            a.k, a.k_min
                        ));
                    } else {
                        return Err(FsiError::param(
                            "transport.k",
                            format!("k = {} is below the admissible minimum {}", a.k, a.k_min),
                        ));
                    }
                }
                Some(a)
            }
            Err(FsiError::NoDerivativeInfo) if problem.warn_only => {
                notes.push("field has no derivative information; admissibility not checked".into());
                None
            }
            Err(e) => return Err(e),
        };
        let mut rows = Vec::with_capacity(sched.len());
        let mut prev: Option<Vec<f64>> = None;
        for &eps in sched {
            let s = self.solve_regularized(problem, eps, prev.as_deref())?;
            let diff = match &prev {
                Some(p) => {
                    let d: Vec<f64> = s.q.iter().zip(p).map(|(a, b)| a - b).collect();
                    self.l2_norm(&d)
                }
                None => f64::NAN,
            };
            rows.push(ScheduleRow {
                epsilon: eps,
                l2_norm_q: s.l2_norm_q,
                estimate_ratio: s.estimate_ratio,
                diff_prev: diff,
                identity_residual: s.identity_residual,
            });
            prev = Some(s.q);
        }
        let diffs: Vec<f64> = rows.iter().skip(1).map(|r| r.diff_prev).collect();
        let non_monotone = diffs.windows(2).any(|w| w[1] > w[0]);
        let q = prev.unwrap_or_default();
        if let Some(tol) = problem.cauchy_tol {
            let last = diffs.last().copied().unwrap_or(f64::INFINITY);
            if !(last <= tol) {
                return Err(FsiError::NotConverged {
                    context: "viscosity schedule".into(),
                    iterations: sched.len(),
                    residual: last,
                });
            }
        }
        Ok(TransportReport {
            rows,
            admissibility,
            notes,
            non_monotone,
            q,
        })
    }

    /// Checks k |q| <= |G| (1 + 1e-8).
    pub fn verify_estimate(&self, problem: &TransportProblem, q: &[f64]) -> EstimateReport {
        let qn = self.l2_norm(q);
        let gn = self.l2_norm(&problem.g);
        let ratio = if gn > 0.0 { problem.k * qn / gn } else if qn == 0.0 { 0.0 } else { f64::INFINITY };
        EstimateReport {
            k: problem.k,
            q_norm: qn,
            g_norm: gn,
            ratio,
            passes: ratio <= 1.0 + ESTIMATE_TOL,
        }
    }

    /// L2 distance between the discrete field and a function, by 3-point
    /// Gauss quadrature per cell; `keep` selects the cells that count.
    pub fn l2_error(&self, q: &[f64], exact: impl Fn([f64; 3]) -> f64, keep: impl Fn([f64; 3]) -> bool) -> f64 {
        let g = &self.space.geometry;
        let quad = cell_quadrature(g, 3);
        let mut s = 0.0;
        for kk in 0..g.nz {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let centre = g.coord(i, j, kk);
                    let centre = [centre[0] + 0.5 * g.hx, centre[1] + 0.5 * g.hy, centre[2] + 0.5 * g.hz];
                    if !keep(centre) {
                        continue;
                    }
                    for &(xi, w) in &quad {
                        let e = self.space.eval([i, j, kk], xi);
                        let qh: f64 = (0..8).map(|a| e.vals[a] * q[e.nodes[a]]).sum();
                        let x = [
                            (i as f64 + xi[0]) * g.hx,
                            (j as f64 + xi[1]) * g.hy,
                            -1.0 + (kk as f64 + xi[2]) * g.hz,
                        ];
                        let d = qh - exact(x);
                        s += w * d * d;
                    }
                }
            }
        }
        s.sqrt()
    }
}

/// Manufactured columnar case: q = cos(pi x3) solves the transport equation
/// for v = (0, 0, sin(pi x3)) with this source.
pub fn columnar_manufactured_source(k: f64) -> impl Fn([f64; 3]) -> f64 {
    use std::f64::consts::PI;
    move |x| {
        let (s, c) = ((PI * x[2]).sin(), (PI * x[2]).cos());
        k * c - PI * s * s + 0.5 * PI * c * c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{make_builtin, AmbientKind};
    use crate::geometry::build_geometry;

    fn solver(kind: AmbientKind, n: usize) -> TransportSolver {
        let g = build_geometry(n, n, n).unwrap();
        let f = make_builtin(kind, &g).unwrap();
        TransportSolver::new(ScalarSpace::new(&g, 1).unwrap(), &f)
    }

    fn problem(s: &TransportSolver, k: f64, g: impl Fn([f64; 3]) -> f64) -> TransportProblem {
        TransportProblem {
            k,
            g: s.space.interpolate(g),
            epsilon_schedule: default_schedule(s.space.geometry.hx),
            warn_only: false,
            sobolev_const: 1.0,
            cauchy_tol: None,
        }
    }

    #[test]
    fn homogeneous_problem_has_zero_solution() {
        let s = solver(AmbientKind::Columnar, 4);
        let p = problem(&s, 20.0, |_| 0.0);
        let r = s.solve_transport(&p).unwrap();
        assert!(r.q.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn energy_identity_and_estimate() {
        let s = solver(AmbientKind::Vortex, 6);
        let p = problem(&s, 40.0, |x| 1.0 + x[0] * x[2]);
        for &eps in &p.epsilon_schedule {
            let r = s.solve_regularized(&p, eps, None).unwrap();
            assert!(r.identity_residual < 1e-12, "{eps}: {}", r.identity_residual);
            assert!(r.estimate_ratio <= 1.0 + ESTIMATE_TOL);
        }
    }

    #[test]
    fn zero_field_interior_tends_to_half() {
        // away from the Dirichlet layer q -> G / k = 1/2 as eps -> 0, while
        // the layer (width sqrt(eps / k)) is still resolved by the grid
        let s = solver(AmbientKind::Zero, 16);
        let p = problem(&s, 2.0, |_| 1.0);
        let far = |x: [f64; 3]| {
            x[0] > 0.25 && x[0] < 0.75 && x[1] > 0.25 && x[1] < 0.75 && x[2] > -0.75 && x[2] < -0.25
        };
        let mut errs = Vec::new();
        for &eps in &[1e-1, 1e-2, 1e-3] {
            let r = s.solve_regularized(&p, eps, None).unwrap();
            errs.push(s.l2_error(&r.q, |_| 0.5, far));
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-4, "{errs:?}");
    }

    #[test]
    fn below_minimum_k_rejected_unless_warn_only() {
        let s = solver(AmbientKind::Vortex, 4);
        let mut p = problem(&s, 1.0, |_| 1.0);
        assert!(s.solve_transport(&p).is_err());
        p.warn_only = true;
        let r = s.solve_transport(&p).unwrap();
        assert!(r.notes.iter().any(|n| n.contains("not guaranteed")));
    }
}
