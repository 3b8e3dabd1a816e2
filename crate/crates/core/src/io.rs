//! File outputs: atomic writes, CSV with a JSON provenance header,
//! binary checkpoints, matrix dumps and a small SVG line plot.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::ambient::AmbientField;
use crate::config::RunConfig;
use crate::error::{FsiError, Result};
use crate::geometry::BoxGeometry;
use crate::sparse::CsrMatrix;
use crate::state::State;

/// Writes to a temporary file in the target directory and renames it into
/// place, so the final path never holds a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| FsiError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FsiError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| FsiError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| FsiError::io(path, e))?;
    tmp.persist(path).map_err(|e| FsiError::io(path, e.error))?;
    Ok(())
}

/// SHA-256 of the effective configuration text, output location excluded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output.directory.clear();
    hex::encode(Sha256::digest(c.to_toml().as_bytes()))
}

/// Provenance header: config hash, seed, grid and parameters.
pub fn provenance(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "config_hash": config_hash(cfg),
        "seed": cfg.run.seed,
        "grid": [cfg.geometry.nx, cfg.geometry.ny, cfg.geometry.nz],
        "params": cfg.params,
        "ambient": cfg.ambient.kind,
        "scheme": cfg.sim.scheme,
        "dt": cfg.sim.dt,
    })
}

/// CSV text with a leading `# {json}` line.
pub fn csv_text(header: &serde_json::Value, columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = format!("# {header}\n{}\n", columns.join(","));
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &serde_json::Value, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_atomic(path, csv_text(header, columns, rows).as_bytes())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| FsiError::Format(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub t: f64,
    pub step: usize,
    pub grid: [usize; 3],
    pub n_p: usize,
    pub n_u: usize,
    pub n_w: usize,
}

/// One JSON header line, then p, u, w, wdot as little-endian f64.
pub fn checkpoint_bytes(geometry: &BoxGeometry, t: f64, step: usize, y: &State) -> Vec<u8> {
    let h = CheckpointHeader {
        t,
        step,
        grid: [geometry.nx, geometry.ny, geometry.nz],
        n_p: y.p.len(),
        n_u: y.u.len(),
        n_w: y.w.len(),
    };
    let mut out = serde_json::to_vec(&h).expect("header serializes");
    out.push(b'\n');
    for v in y.p.iter().chain(&y.u).chain(&y.w).chain(&y.wdot) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_checkpoint(path: &Path, geometry: &BoxGeometry, t: f64, step: usize, y: &State) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(geometry, t, step, y))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, State)> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| FsiError::Format("checkpoint header line missing".into()))?;
    let h: CheckpointHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| FsiError::Format(e.to_string()))?;
    let body = &bytes[nl + 1..];
    let n = h.n_p + h.n_u + 2 * h.n_w;
    if body.len() != 8 * n {
        return Err(FsiError::Format(format!("checkpoint body has {} bytes, expected {}", body.len(), 8 * n)));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let (a, b, c) = (h.n_p, h.n_p + h.n_u, h.n_p + h.n_u + h.n_w);
    let y = State {
        p: vals[..a].to_vec(),
        u: vals[a..b].to_vec(),
        w: vals[b..c].to_vec(),
        wdot: vals[c..].to_vec(),
    };
    Ok((h, y))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, State)> {
    let bytes = std::fs::read(path).map_err(|e| FsiError::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Matrix in coordinate text form.
pub fn dump_matrix(path: &Path, m: &CsrMatrix) -> Result<()> {
    write_atomic(path, m.to_coordinate_text().as_bytes())
}

#[derive(Debug, Deserialize)]
struct FieldFile {
    nx: usize,
    ny: usize,
    nz: usize,
    values: Vec<[f64; 3]>,
}

/// Nodal ambient field from JSON `{"nx", "ny", "nz", "values": [[u1, u2, u3], ...]}`
/// with nodes ordered x fastest, then y, then z.
pub fn load_ambient_file(path: &Path, geometry: &BoxGeometry) -> Result<AmbientField> {
    let text = std::fs::read_to_string(path).map_err(|e| FsiError::io(path, e))?;
    let f: FieldFile = serde_json::from_str(&text).map_err(|e| FsiError::Format(format!("{}: {e}", path.display())))?;
    if [f.nx, f.ny, f.nz] != [geometry.nx, geometry.ny, geometry.nz] {
        return Err(FsiError::Dimension(format!(
            "field file grid {:?} does not match geometry {:?}",
            [f.nx, f.ny, f.nz],
            [geometry.nx, geometry.ny, geometry.nz]
        )));
    }
    AmbientField::from_nodal(geometry, f.values)
}

/// Polyline plot of one series.
pub fn svg_line_plot(title: &str, xs: &[f64], ys: &[f64]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let fin = |v: &&f64| v.is_finite();
    let (x0, x1) = xs.iter().filter(fin).fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(*v), a.1.max(*v)));
    let (y0, y1) = ys.iter().filter(fin).fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(*v), a.1.max(*v)));
    let sx = if x1 > x0 { (w - 2.0 * m) / (x1 - x0) } else { 0.0 };
    let sy = if y1 > y0 { (h - 2.0 * m) / (y1 - y0) } else { 0.0 };
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| format!("{:.2},{:.2}", m + (x - x0) * sx, h - m - (y - y0) * sy))
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{m}\" y=\"30\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{m}\" y=\"{lb}\" font-size=\"11\">{x0:.3e}</text>\n\
         <text x=\"{r}\" y=\"{lb}\" font-size=\"11\" text-anchor=\"end\">{x1:.3e}</text>\n\
         <text x=\"5\" y=\"{b}\" font-size=\"11\">{y0:.3e}</text>\n\
         <text x=\"5\" y=\"{m}\" font-size=\"11\">{y1:.3e}</text>\n\
         <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{}\"/>\n</svg>\n",
        pts.join(" "),
        b = h - m,
        r = w - m,
        lb = h - m + 18.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_geometry;

    #[test]
    fn checkpoint_round_trip() {
        let g = build_geometry(2, 2, 2).unwrap();
        let y = State {
            p: vec![1.0, -2.5],
            u: vec![0.1; 6],
            w: vec![3.0, f64::MIN_POSITIVE],
            wdot: vec![-0.0, 7.0],
        };
        let b = checkpoint_bytes(&g, 0.5, 3, &y);
        let (h, back) = parse_checkpoint(&b).unwrap();
        assert_eq!(h.step, 3);
        assert_eq!(back, y);
        assert!(parse_checkpoint(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.csv");
        write_csv(&p, &json!({"seed": 1}), &["t", "E"], &[vec![0.0, 1.0]]).unwrap();
        write_csv(&p, &json!({"seed": 2}), &["t", "E"], &[vec![0.0, 2.0]]).unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert!(s.starts_with("# {\"seed\":2}\nt,E\n"));
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn hash_is_stable() {
        let c = RunConfig::default();
        assert_eq!(config_hash(&c), config_hash(&c.clone()));
        let mut d = c.clone();
        d.run.seed += 1;
        assert_ne!(config_hash(&c), config_hash(&d));
    }
}
