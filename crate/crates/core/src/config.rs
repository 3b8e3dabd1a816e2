//! Run configuration in TOML. Every key is checked against the schema and
//! every error names its key path.

use serde::Serialize;
use toml::Value;

use crate::ambient::AmbientKind;
use crate::assembly::FluidParams;
use crate::error::{FsiError, Result};
use crate::integrator::{Nonlinearity, Scheme};
use crate::vonkarman::F0Kind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometryConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamsConfig {
    pub nu: f64,
    pub lambda_lame: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbientConfig {
    pub kind: AmbientKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub sobolev_const: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Zero,
    Random,
    /// (c, 0, w_c, 0) with c = 1
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    pub initial: InitialKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateConfig {
    pub nonlinearity: Nonlinearity,
    #[serde(rename = "F0")]
    pub f0: F0Name,
    #[serde(rename = "F0_amplitude")]
    pub f0_amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum F0Name {
    Zero,
    Bubble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub directory: String,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub emit_svg: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSection {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub params: ParamsConfig,
    pub ambient: AmbientConfig,
    pub sim: SimConfig,
    pub plate: PlateConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = FluidParams::default();
        RunConfig {
            geometry: GeometryConfig { nx: 4, ny: 4, nz: 4 },
            params: ParamsConfig { nu: p.nu, lambda_lame: p.lambda, eta: p.eta },
            ambient: AmbientConfig { kind: AmbientKind::Vortex, file: None, sobolev_const: 1.0 },
            sim: SimConfig { dt: 0.01, t_final: 1.0, scheme: Scheme::CrankNicolson, initial: InitialKind::Random },
            plate: PlateConfig { nonlinearity: Nonlinearity::Off, f0: F0Name::Zero, f0_amplitude: 0.1 },
            solver: SolverConfig { rel_tol: 1e-12, max_iter: 400 },
            output: OutputConfig { directory: "out".into(), checkpoint_every: 0, emit_svg: true },
            run: RunSection { seed: 42 },
        }
    }
}

fn cfg_err(key: &str, message: impl Into<String>) -> FsiError {
    FsiError::Config { key: key.to_string(), message: message.into() }
}

struct Section<'a> {
    name: &'a str,
    table: Option<&'a toml::map::Map<String, Value>>,
}

impl<'a> Section<'a> {
    fn path(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn check_keys(&self, known: &[&str]) -> Result<()> {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !known.contains(&k.as_str()) {
                    return Err(cfg_err(&self.path(k), format!("unknown key; expected one of {}", known.join(", "))));
                }
            }
        }
        Ok(())
    }

    fn float(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Float(v)) => Ok(*v),
            Some(Value::Integer(v)) => Ok(*v as f64),
            Some(v) => Err(cfg_err(&self.path(key), format!("expected a number, found {}", v.type_str()))),
        }
    }

    fn uint(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Integer(v)) if *v >= 0 => Ok(*v as u64),
            Some(Value::Integer(v)) => Err(cfg_err(&self.path(key), format!("expected a nonnegative integer, found {v}"))),
            Some(v) => Err(cfg_err(&self.path(key), format!("expected an integer, found {}", v.type_str()))),
        }
    }

    fn string(&self, key: &str) -> Result<Option<&'a str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(cfg_err(&self.path(key), format!("expected a string, found {}", v.type_str()))),
        }
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => Err(cfg_err(&self.path(key), format!("expected a boolean, found {}", v.type_str()))),
        }
    }

    fn choice<T: Copy>(&self, key: &str, default: T, options: &[(&str, T)]) -> Result<T> {
        match self.string(key)? {
            None => Ok(default),
            Some(s) => options.iter().find(|(n, _)| *n == s).map(|(_, v)| *v).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                cfg_err(&self.path(key), format!("`{s}` is not one of {}", names.join(", ")))
            }),
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("geometry", &["nx", "ny", "nz"]),
    ("params", &["nu", "lambda_lame", "eta"]),
    ("ambient", &["kind", "file", "sobolev_const"]),
    ("sim", &["dt", "t_final", "scheme", "initial"]),
    ("plate", &["nonlinearity", "F0", "F0_amplitude"]),
    ("solver", &["rel_tol", "max_iter"]),
    ("output", &["directory", "checkpoint_every", "emit_svg"]),
    ("run", &["seed"]),
];

/// Parses and validates a TOML document; missing keys take their defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let root: toml::map::Map<String, Value> = text.parse::<toml::Table>().map_err(|e| cfg_err("<document>", e.message().to_string()))?;
    let mut sections = Vec::new();
    for (k, v) in &root {
        let Some((_, _)) = SECTIONS.iter().find(|(n, _)| n == k) else {
            let names: Vec<&str> = SECTIONS.iter().map(|s| s.0).collect();
            return Err(cfg_err(k, format!("unknown section; expected one of {}", names.join(", "))));
        };
        if !v.is_table() {
            return Err(cfg_err(k, format!("expected a table, found {}", v.type_str())));
        }
    }
    for (name, keys) in SECTIONS {
        let s = Section { name, table: root.get(*name).and_then(|v| v.as_table()) };
        s.check_keys(keys)?;
        sections.push(s);
    }
    let sec = |n: &str| sections.iter().find(|s| s.name == n).unwrap();
    let d = RunConfig::default();

    let g = sec("geometry");
    let geometry = GeometryConfig {
        nx: g.uint("nx", d.geometry.nx as u64)? as usize,
        ny: g.uint("ny", d.geometry.ny as u64)? as usize,
        nz: g.uint("nz", d.geometry.nz as u64)? as usize,
    };
    let p = sec("params");
    let params = ParamsConfig {
        nu: p.float("nu", d.params.nu)?,
        lambda_lame: p.float("lambda_lame", d.params.lambda_lame)?,
        eta: p.float("eta", d.params.eta)?,
    };
    let a = sec("ambient");
    let ambient = AmbientConfig {
        kind: a.choice(
            "kind",
            d.ambient.kind,
            &[
                ("zero", AmbientKind::Zero),
                ("vortex", AmbientKind::Vortex),
                ("columnar", AmbientKind::Columnar),
                ("file", AmbientKind::File),
            ],
        )?,
        file: a.string("file")?.map(str::to_string),
        sobolev_const: a.float("sobolev_const", d.ambient.sobolev_const)?,
    };
    let s = sec("sim");
    let sim = SimConfig {
        dt: s.float("dt", d.sim.dt)?,
        t_final: s.float("t_final", d.sim.t_final)?,
        scheme: s.choice(
            "scheme",
            d.sim.scheme,
            &[("implicit_euler", Scheme::ImplicitEuler), ("crank_nicolson", Scheme::CrankNicolson)],
        )?,
        initial: s.choice(
            "initial",
            d.sim.initial,
            &[("zero", InitialKind::Zero), ("random", InitialKind::Random), ("stationary", InitialKind::Stationary)],
        )?,
    };
    let pl = sec("plate");
    let plate = PlateConfig {
        nonlinearity: pl.choice(
            "nonlinearity",
            d.plate.nonlinearity,
            &[("off", Nonlinearity::Off), ("von_karman", Nonlinearity::VonKarman)],
        )?,
        f0: pl.choice("F0", d.plate.f0, &[("zero", F0Name::Zero), ("bubble", F0Name::Bubble)])?,
        f0_amplitude: pl.float("F0_amplitude", d.plate.f0_amplitude)?,
    };
    let so = sec("solver");
    let solver = SolverConfig {
        rel_tol: so.float("rel_tol", d.solver.rel_tol)?,
        max_iter: so.uint("max_iter", d.solver.max_iter as u64)? as usize,
    };
    let o = sec("output");
    let output = OutputConfig {
        directory: o.string("directory")?.map_or(d.output.directory.clone(), str::to_string),
        checkpoint_every: o.uint("checkpoint_every", d.output.checkpoint_every as u64)? as usize,
        emit_svg: o.boolean("emit_svg", d.output.emit_svg)?,
    };
    let r = sec("run");
    let run = RunSection { seed: r.uint("seed", d.run.seed)? };
    let cfg = RunConfig { geometry, params, ambient, sim, plate, solver, output, run };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| FsiError::io(path, e))?;
    parse_config_str(&text)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("geometry.nx", self.geometry.nx), ("geometry.ny", self.geometry.ny), ("geometry.nz", self.geometry.nz)] {
            if v < 2 || v % 2 != 0 {
                return Err(cfg_err(k, format!("must be an even count >= 2, got {v}")));
            }
        }
        let pos = |k: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(cfg_err(k, format!("must be > 0, got {v}")))
            }
        };
        pos("params.nu", self.params.nu)?;
        pos("params.eta", self.params.eta)?;
        if !(self.params.lambda_lame.is_finite() && self.params.lambda_lame >= -2.0 / 3.0 * self.params.nu) {
            return Err(cfg_err(
                "params.lambda_lame",
                format!("must satisfy lambda_lame >= -2 nu / 3, got {}", self.params.lambda_lame),
            ));
        }
        pos("ambient.sobolev_const", self.ambient.sobolev_const)?;
        if self.ambient.kind == AmbientKind::File && self.ambient.file.is_none() {
            return Err(cfg_err("ambient.file", "required when ambient.kind = \"file\""));
        }
        pos("sim.dt", self.sim.dt)?;
        if !(self.sim.t_final >= 0.0 && self.sim.t_final.is_finite()) {
            return Err(cfg_err("sim.t_final", format!("must be >= 0, got {}", self.sim.t_final)));
        }
        if self.sim.t_final > 0.0 && self.sim.t_final < self.sim.dt {
            return Err(cfg_err("sim.t_final", format!("must be >= sim.dt = {}", self.sim.dt)));
        }
        if !self.plate.f0_amplitude.is_finite() {
            return Err(cfg_err("plate.F0_amplitude", "must be finite"));
        }
        pos("solver.rel_tol", self.solver.rel_tol)?;
        if self.solver.max_iter == 0 {
            return Err(cfg_err("solver.max_iter", "must be > 0"));
        }
        Ok(())
    }

    pub fn fluid_params(&self) -> FluidParams {
        FluidParams { nu: self.params.nu, lambda: self.params.lambda_lame, eta: self.params.eta }
    }

    pub fn f0(&self) -> F0Kind {
        match self.plate.f0 {
            F0Name::Zero => F0Kind::Zero,
            F0Name::Bubble => F0Kind::Bubble { amplitude: self.plate.f0_amplitude },
        }
    }

    /// Effective configuration as TOML; parsing it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
