//! Time stepping of the coupled system with one factorization per run, and
//! the discrete energy balance that each scheme satisfies exactly.

use serde::{Deserialize, Serialize};

use crate::error::{FsiError, Result};
use crate::operators::{Generator, OperatorSet};
use crate::sparse::{dot, CsrMatrix, SparseLu};
use crate::state::{DofLayout, State};
use crate::vonkarman::{F0Kind, VonKarman};

/// Energy growth factor that aborts a run.
pub const BLOW_UP_FACTOR: f64 = 1e12;
/// Pass threshold of the linear balance residual.
pub const BALANCE_TOL: f64 = 1e-9;
/// Pass threshold with the von Karman term (not exactly reproduced by the scheme).
pub const NONLINEAR_BALANCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImplicitEuler,
    #[default]
    CrankNicolson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Off,
    VonKarman,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    pub nonlinearity: Nonlinearity,
    pub f0: F0Kind,
    pub generator: Generator,
}

impl SimulationConfig {
    pub fn linear(dt: f64, t_final: f64, scheme: Scheme) -> Self {
        SimulationConfig {
            dt,
            t_final,
            scheme,
            nonlinearity: Nonlinearity::Off,
            f0: F0Kind::Zero,
            generator: Generator::A,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FsiError::param("sim.dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(FsiError::param("sim.t_final", format!("must be nonnegative, got {}", self.t_final)));
        }
        if self.t_final > 0.0 && self.t_final < self.dt {
            return Err(FsiError::param("sim.t_final", format!("must be at least dt = {}", self.dt)));
        }
        Ok(())
    }

    /// Number of steps to reach t_final.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    /// Energy (1/2)|y|_H^2
    pub energy: f64,
    /// Cumulative dissipation int a_O(u, u)
    pub a_o_cum: f64,
    /// Cumulative div U work (1/2) int int div U (p^2 + |u|^2)
    pub div_work_cum: f64,
    /// Relative defect of the scheme's discrete balance over the last step.
    pub balance_residual: f64,
    pub h_norm: f64,
    /// Von Karman potential, if active.
    pub potential: Option<f64>,
    /// Cumulative numerical dissipation (1/2)|y+ - y|^2 (implicit Euler only).
    pub numerical_dissipation_cum: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyTrace {
    pub scheme: Scheme,
    pub dt: f64,
    /// xi = 1/dt of the implicit Euler resolvent.
    pub xi: Option<f64>,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub scheme: Scheme,
    pub max_residual: f64,
    pub worst_step: usize,
    pub tolerance: f64,
    pub passes: bool,
}

/// Adds a plate-velocity load onto the reduced unknowns (P^T of the wdot block).
fn reduce_plate_load(layout: &DofLayout, load: &[f64], out: &mut [f64]) {
    let off = layout.off_wd();
    for (d, v) in load.iter().enumerate() {
        if let Some(r) = layout.map[off + d] {
            out[r] += v;
        }
    }
}

/// One-factorization stepper for a fixed dt and scheme.
pub struct Stepper<'a> {
    pub ops: &'a OperatorSet,
    pub config: SimulationConfig,
    lhs: SparseLu,
    rhs: CsrMatrix,
    vk: Option<VonKarman<'a>>,
}

impl std::fmt::Debug for Stepper<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stepper").field("config", &self.config).finish()
    }
}

/// Increments of one step used by the balance check.
#[derive(Debug, Clone, Copy)]
struct StepTerms {
    dissipation: f64,
    div_work: f64,
    numerical: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(ops: &'a OperatorSet, config: SimulationConfig) -> Result<Self> {
        config.validate()?;
        let k = ops.reduced_matrix(config.generator);
        let dt = config.dt;
        let (lhs, rhs) = match config.scheme {
            Scheme::ImplicitEuler => (CsrMatrix::combine(&[(1.0, &ops.m_red), (-dt, k)]), ops.m_red.clone()),
            Scheme::CrankNicolson => (
                CsrMatrix::combine(&[(1.0, &ops.m_red), (-0.5 * dt, k)]),
                CsrMatrix::combine(&[(1.0, &ops.m_red), (0.5 * dt, k)]),
            ),
        };
        let lhs = SparseLu::new(&lhs, "time step")?;
        let vk = match config.nonlinearity {
            Nonlinearity::Off => None,
            Nonlinearity::VonKarman => Some(VonKarman::new(&ops.space.plate, config.f0)?),
        };
        Ok(Stepper { ops, config, lhs, rhs, vk })
    }

    pub fn von_karman(&self) -> Option<&VonKarman<'a>> {
        self.vk.as_ref()
    }

    fn potential(&self, y: &State) -> Option<f64> {
        self.vk.as_ref().map(|v| v.potential(&y.w).total)
    }

    fn advance(&self, y: &State) -> Result<(State, StepTerms)> {
        let l = &self.ops.space.layout;
        l.check_shape(y)?;
        let dt = self.config.dt;
        let z = l.restrict(y);
        let mut r = self.rhs.matvec(&z);
        if let Some(vk) = &self.vk {
            let w_eval: Vec<f64> = match self.config.scheme {
                Scheme::ImplicitEuler => y.w.clone(),
                Scheme::CrankNicolson => y.w.iter().zip(&y.wdot).map(|(a, b)| a + 0.5 * dt * b).collect(),
            };
            let f: Vec<f64> = vk.f_load(&w_eval).iter().map(|v| dt * v).collect();
            reduce_plate_load(l, &f, &mut r);
        }
        let zn = self.lhs.solve(&r);
        let yn = l.expand(&zn);
        let sp = &self.ops.space;
        let terms = match self.config.scheme {
            Scheme::CrankNicolson => {
                let mid = y.scaled(0.5).add_scaled(0.5, &yn);
                StepTerms {
                    dissipation: dt * sp.a_o(&mid.u, &mid.u),
                    div_work: dt * self.div_work(&mid),
                    numerical: 0.0,
                }
            }
            Scheme::ImplicitEuler => {
                let d = yn.add_scaled(-1.0, y);
                StepTerms {
                    dissipation: dt * sp.a_o(&yn.u, &yn.u),
                    div_work: dt * self.div_work(&yn),
                    numerical: sp.energy(&d),
                }
            }
        };
        Ok((yn, terms))
    }

    fn div_work(&self, y: &State) -> f64 {
        match self.config.generator {
            Generator::A => self.ops.div_work(y),
            Generator::AHat => 0.0,
        }
    }

    /// One step y -> y+.
    pub fn step(&self, y: &State) -> Result<State> {
        Ok(self.advance(y)?.0)
    }
}

/// Single step with a fresh factorization.
pub fn step(ops: &OperatorSet, y: &State, dt: f64, scheme: Scheme) -> Result<State> {
    Stepper::new(ops, SimulationConfig::linear(dt, dt, scheme))?.step(y)
}

/// Runs to t_final, recording every step. `on_step` is called after each
/// step with (step index, t, state) and may write checkpoints.
pub fn simulate(
    ops: &OperatorSet,
    config: &SimulationConfig,
    y0: &State,
    mut on_step: impl FnMut(usize, f64, &State) -> Result<()>,
) -> Result<(EnergyTrace, State)> {
    let stepper = Stepper::new(ops, config.clone())?;
    stepper.run(y0, &mut on_step)
}

impl Stepper<'_> {
    pub fn run(&self, y0: &State, on_step: &mut dyn FnMut(usize, f64, &State) -> Result<()>) -> Result<(EnergyTrace, State)> {
        let sp = &self.ops.space;
        sp.layout.check_shape(y0)?;
        let dt = self.config.dt;
        let e0 = sp.energy(y0);
        let pi0 = self.potential(y0);
        let mut rows = vec![TraceRow {
            t: 0.0,
            energy: e0,
            a_o_cum: 0.0,
            div_work_cum: 0.0,
            balance_residual: 0.0,
            h_norm: sp.norm(y0),
            potential: pi0,
            numerical_dissipation_cum: 0.0,
        }];
        let limit = BLOW_UP_FACTOR * (e0 + pi0.unwrap_or(0.0).abs()).max(f64::MIN_POSITIVE);
        let mut y = y0.clone();
        for n in 0..self.config.steps() {
            let (yn, terms) = self.advance(&y)?;
            let t = (n + 1) as f64 * dt;
            let prev = *rows.last().unwrap();
            let energy = sp.energy(&yn);
            let potential = self.potential(&yn);
            if !energy.is_finite() || energy > limit {
                return Err(FsiError::BlowUp { t, energy, limit });
            }
            let lhs = energy + potential.unwrap_or(0.0) + terms.dissipation + terms.numerical;
            let rhs = prev.energy + prev.potential.unwrap_or(0.0) + terms.div_work;
            let scale = prev.energy.max(energy) + prev.potential.unwrap_or(0.0).abs() + potential.unwrap_or(0.0).abs();
            let defect = (lhs - rhs).abs();
            let balance_residual = if defect == 0.0 { 0.0 } else { defect / scale.max(f64::MIN_POSITIVE) };
            rows.push(TraceRow {
                t,
                energy,
                a_o_cum: prev.a_o_cum + terms.dissipation,
                div_work_cum: prev.div_work_cum + terms.div_work,
                balance_residual,
                h_norm: sp.norm(&yn),
                potential,
                numerical_dissipation_cum: prev.numerical_dissipation_cum + terms.numerical,
            });
            on_step(n + 1, t, &yn)?;
            y = yn;
        }
        let xi = match self.config.scheme {
            Scheme::ImplicitEuler => Some(1.0 / dt),
            Scheme::CrankNicolson => None,
        };
        Ok((EnergyTrace { scheme: self.config.scheme, dt, xi, rows }, y))
    }
}

/// Checks the per-step discrete balance recorded in a trace.
pub fn check_energy_balance(trace: &EnergyTrace, nonlinear: bool) -> BalanceReport {
    let tolerance = if nonlinear { NONLINEAR_BALANCE_TOL } else { BALANCE_TOL };
    let (worst_step, max_residual) = trace
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.balance_residual))
        .fold((0, 0.0), |a, b| if b.1 > a.1 || b.1.is_nan() { b } else { a });
    BalanceReport {
        scheme: trace.scheme,
        max_residual,
        worst_step,
        tolerance,
        passes: max_residual <= tolerance,
    }
}

/// Energy-norm distance between two states of the same space.
pub fn h_distance(ops: &OperatorSet, a: &State, b: &State) -> f64 {
    ops.space.norm(&a.add_scaled(-1.0, b))
}

/// (A y, y)_H for a reduced generator, via K.
pub fn generator_form(ops: &OperatorSet, y: &State, which: Generator) -> f64 {
    let z = ops.space.layout.restrict(y);
    dot(&z, &ops.reduced_matrix(which).matvec(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{make_builtin, AmbientKind};
    use crate::assembly::FluidParams;
    use crate::geometry::build_geometry;
    use crate::operators::assemble_all;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops(kind: AmbientKind) -> OperatorSet {
        let g = build_geometry(4, 4, 4).unwrap();
        let f = make_builtin(kind, &g).unwrap();
        assemble_all(&g, &f, &FluidParams::default()).unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let o = ops(AmbientKind::Columnar);
        let y = State::zeros(&o.space.layout);
        let (tr, yf) = simulate(&o, &SimulationConfig::linear(0.1, 0.5, Scheme::CrankNicolson), &y, |_, _, _| Ok(())).unwrap();
        assert_eq!(tr.rows.len(), 6);
        assert!(tr.rows.iter().all(|r| r.energy == 0.0 && r.balance_residual == 0.0));
        assert!(yf.u.iter().all(|v| *v == 0.0));
        let (tr0, _) = simulate(&o, &SimulationConfig::linear(0.1, 0.0, Scheme::CrankNicolson), &y, |_, _, _| Ok(())).unwrap();
        assert_eq!(tr0.rows.len(), 1);
    }

    #[test]
    fn balance_holds_for_both_schemes() {
        for kind in [AmbientKind::Zero, AmbientKind::Vortex, AmbientKind::Columnar] {
            let o = ops(kind);
            let y0 = o.space.random_state(&mut ChaCha8Rng::seed_from_u64(2));
            for scheme in [Scheme::CrankNicolson, Scheme::ImplicitEuler] {
                let (tr, _) = simulate(&o, &SimulationConfig::linear(0.01, 0.2, scheme), &y0, |_, _, _| Ok(())).unwrap();
                let rep = check_energy_balance(&tr, false);
                assert!(rep.passes, "{kind:?} {scheme:?}: {}", rep.max_residual);
            }
        }
    }

    #[test]
    fn implicit_euler_contracts_without_divergence() {
        let o = ops(AmbientKind::Vortex);
        let y0 = o.space.random_state(&mut ChaCha8Rng::seed_from_u64(4));
        let (tr, _) = simulate(&o, &SimulationConfig::linear(0.05, 1.0, Scheme::ImplicitEuler), &y0, |_, _, _| Ok(())).unwrap();
        for w in tr.rows.windows(2) {
            assert!(w[1].energy <= w[0].energy * (1.0 + 1e-13));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let o = ops(AmbientKind::Zero);
        assert!(Stepper::new(&o, SimulationConfig::linear(0.0, 1.0, Scheme::CrankNicolson)).is_err());
        assert!(Stepper::new(&o, SimulationConfig::linear(0.5, 0.1, Scheme::CrankNicolson)).is_err());
    }
}
