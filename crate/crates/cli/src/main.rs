use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fsi_core::ambient::{make_builtin, AmbientKind};
use fsi_core::assembly::ScalarSpace;
use fsi_core::config::{parse_config, InitialKind};
use fsi_core::integrator::{check_energy_balance, simulate};
use fsi_core::io::{config_hash, load_ambient_file, provenance, svg_line_plot, write_atomic, write_checkpoint, write_csv, write_json};
use fsi_core::resolvent::{resolvent_residual, xi_min, MonolithicResolvent, StructuredResolvent};
use fsi_core::stationary::{solve_linear_stationary, stationary_set};
use fsi_core::transport::{columnar_manufactured_source, default_schedule, TransportProblem, TransportSolver};
use fsi_core::validate::run_invariant_suite;
use fsi_core::{assemble_all, build_geometry, FsiError, Generator, Nonlinearity, OperatorSet, RunConfig, SimulationConfig, State};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "fsi", about = "Compressible fluid coupled to a clamped plate: simulation and verification")]
struct Cli {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides output.directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PathChoice {
    Structured,
    Monolithic,
    Both,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum RhsChoice {
    Random,
    /// y* = (xi - A) y0 for a random y0, so the exact solution is y0
    Manufactured,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time stepping with an energy trace.
    Simulate,
    /// Solves (xi - A_hat) y = y*.
    Resolvent {
        #[arg(long)]
        xi: f64,
        #[arg(long, value_enum, default_value = "both")]
        path: PathChoice,
        #[arg(long, value_enum, default_value = "random")]
        rhs: RhsChoice,
    },
    /// Stationary states for constant pressure c.
    Stationary {
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        nonlinear: bool,
        /// Random perturbation starts for Newton.
        #[arg(long, default_value_t = 5)]
        multistart: usize,
    },
    /// Vanishing-viscosity transport solve with the L2 estimate.
    TransportCheck {
        #[arg(long, default_value_t = 20.0)]
        k: f64,
        /// Proceed when k is below the admissible minimum.
        #[arg(long)]
        warn_only: bool,
    },
    /// Runs the invariant suite; nonzero exit on failure.
    Validate {
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
}

enum Failure {
    Core(FsiError),
    Suite,
}

impl From<FsiError> for Failure {
    fn from(e: FsiError) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &FsiError) -> u8 {
    match e {
        FsiError::Config { .. }
        | FsiError::Parameter { .. }
        | FsiError::Geometry(_)
        | FsiError::NotTangent { .. }
        | FsiError::NoDerivativeInfo
        | FsiError::BoundaryData { .. }
        | FsiError::Io { .. } => 2,
        FsiError::BlowUp { .. } => 5,
        _ => 3,
    }
}

fn build_operators(cfg: &RunConfig) -> Result<OperatorSet, FsiError> {
    let g = build_geometry(cfg.geometry.nx, cfg.geometry.ny, cfg.geometry.nz)?;
    let field = match cfg.ambient.kind {
        AmbientKind::File => load_ambient_file(Path::new(cfg.ambient.file.as_deref().unwrap_or_default()), &g)?,
        k => make_builtin(k, &g)?,
    };
    assemble_all(&g, &field, &cfg.fluid_params())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output.directory = o.display().to_string();
    }
    let out = PathBuf::from(&cfg.output.directory);
    let ops = build_operators(&cfg)?;
    let header = provenance(&cfg);
    match cli.command {
        Command::Simulate => {
            let sp = &ops.space;
            let y0 = match cfg.sim.initial {
                InitialKind::Zero => State::zeros(&sp.layout),
                InitialKind::Random => sp.random_state(&mut ChaCha8Rng::seed_from_u64(cfg.run.seed)),
                InitialKind::Stationary => solve_linear_stationary(&ops, 1.0)?.state,
            };
            let sim = SimulationConfig {
                dt: cfg.sim.dt,
                t_final: cfg.sim.t_final,
                scheme: cfg.sim.scheme,
                nonlinearity: cfg.plate.nonlinearity,
                f0: cfg.f0(),
                generator: Generator::A,
            };
            let every = cfg.output.checkpoint_every;
            let geo = sp.geometry;
            let (trace, _) = simulate(&ops, &sim, &y0, |n, t, y| {
                if every > 0 && n % every == 0 {
                    write_checkpoint(&out.join(format!("checkpoint_{n:06}.bin")), &geo, t, n, y)?;
                }
                Ok(())
            })?;
            let nonlinear = cfg.plate.nonlinearity == Nonlinearity::VonKarman;
            let mut cols = vec!["t", "E", "a_O_cum", "divU_work_cum", "balance_residual", "h_norm"];
            if nonlinear {
                cols.push("Pi");
            }
            let rows: Vec<Vec<f64>> = trace
                .rows
                .iter()
                .map(|r| {
                    let mut v = vec![r.t, r.energy, r.a_o_cum, r.div_work_cum, r.balance_residual, r.h_norm];
                    if nonlinear {
                        v.push(r.potential.unwrap_or(0.0));
                    }
                    v
                })
                .collect();
            write_csv(&out.join("energy.csv"), &header, &cols, &rows)?;
            if cfg.output.emit_svg {
                let t: Vec<f64> = trace.rows.iter().map(|r| r.t).collect();
                let e: Vec<f64> = trace.rows.iter().map(|r| r.energy).collect();
                write_atomic(&out.join("energy.svg"), svg_line_plot("energy E(t)", &t, &e).as_bytes())?;
            }
            let balance = check_energy_balance(&trace, nonlinear);
            write_json(&out.join("simulate.json"), &json!({"header": header, "balance": balance, "xi": trace.xi}))?;
        }
        Command::Resolvent { xi, path, rhs } => {
            let sp = &ops.space;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            let (rhs_state, exact) = match rhs {
                RhsChoice::Random => (sp.random_state(&mut rng), None),
                RhsChoice::Manufactured => {
                    let y0 = sp.random_state(&mut rng);
                    let ay = ops.apply_generator(&y0, Generator::AHat);
                    (y0.scaled(xi).add_scaled(-1.0, &ay), Some(y0))
                }
            };
            let mut report = json!({"header": header, "xi": xi});
            let mut sols = Vec::new();
            if matches!(path, PathChoice::Structured | PathChoice::Both) {
                let xm = xi_min(&ops, cfg.ambient.sobolev_const)?;
                let mut r = StructuredResolvent::new(&ops, xi, xm)?;
                r.outer.rel_tol = cfg.solver.rel_tol.min(r.outer.rel_tol);
                r.outer.max_iter = cfg.solver.max_iter;
                let (y, rep) = r.solve(&rhs_state)?;
                report["structured"] = json!({"report": rep, "residual": resolvent_residual(&ops, xi, &y, &rhs_state, Generator::AHat)});
                sols.push(y);
            }
            if matches!(path, PathChoice::Monolithic | PathChoice::Both) {
                let m = MonolithicResolvent::new(&ops, xi, Generator::AHat)?;
                let y = m.solve(&ops, &rhs_state)?;
                report["monolithic"] = json!({"residual": resolvent_residual(&ops, xi, &y, &rhs_state, Generator::AHat)});
                sols.push(y);
            }
            if sols.len() == 2 {
                let d = sp.norm(&sols[0].add_scaled(-1.0, &sols[1])) / sp.norm(&sols[1]).max(f64::MIN_POSITIVE);
                report["path_difference"] = json!(d);
            }
            if let Some(y0) = exact {
                let errs: Vec<f64> = sols.iter().map(|y| sp.norm(&y.add_scaled(-1.0, &y0)) / sp.norm(&y0)).collect();
                report["manufactured_error"] = json!(errs);
            }
            report["contraction_ratio"] = json!(sols.last().map(|y| xi * sp.norm(y) / sp.norm(&rhs_state)));
            write_json(&out.join("resolvent.json"), &report)?;
        }
        Command::Stationary { c, nonlinear, multistart } => {
            let lin = solve_linear_stationary(&ops, c)?;
            let mut report = json!({"header": header, "linear": lin});
            if nonlinear {
                let set = stationary_set(&ops.space.plate, c, cfg.f0(), multistart, cfg.run.seed)?;
                report["nonlinear"] = json!(set);
            }
            write_json(&out.join("stationary.json"), &report)?;
        }
        Command::TransportCheck { k, warn_only } => {
            let geo = ops.space.geometry;
            let space = ScalarSpace::new(&geo, 1).expect("ratio 1 divides every grid");
            let solver = TransportSolver::new(space, &ops.field);
            let g = match ops.field.kind {
                AmbientKind::Columnar => solver.space.interpolate(columnar_manufactured_source(k)),
                _ => solver.space.interpolate(|x| 1.0 + x[0] * x[1]),
            };
            let problem = TransportProblem {
                k,
                g,
                epsilon_schedule: default_schedule(geo.hx.max(geo.hy).max(geo.hz)),
                warn_only,
                sobolev_const: cfg.ambient.sobolev_const,
                cauchy_tol: None,
            };
            let rep = solver.solve_transport(&problem)?;
            let est = solver.verify_estimate(&problem, &rep.q);
            let rows: Vec<Vec<f64>> = rep.rows.iter().map(|r| vec![r.epsilon, r.l2_norm_q, r.estimate_ratio, r.diff_prev]).collect();
            write_csv(&out.join("transport.csv"), &header, &["epsilon", "l2_norm_q", "estimate_ratio", "diff_prev"], &rows)?;
            write_json(&out.join("transport.json"), &json!({"header": header, "report": rep, "estimate": est}))?;
        }
        Command::Validate { samples } => {
            let rep = run_invariant_suite(&ops, samples, cfg.run.seed);
            write_json(&out.join("validate.json"), &json!({"header": header, "config_hash": config_hash(&cfg), "report": rep}))?;
            if !rep.passes {
                return Err(Failure::Suite);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("FSI_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Suite) => {
            eprintln!("error: invariant suite failed; see validate.json");
            ExitCode::from(4)
        }
    }
}
