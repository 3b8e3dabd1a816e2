//! Ambient flow fields about which the fluid equations are linearized.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FsiError, Result};
use crate::fe::{q1_ref_grads, q1_values, q1_values_2d};
use crate::geometry::BoxGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbientKind {
    Zero,
    Vortex,
    Columnar,
    File,
}

/// Closed-form derivative information of a built-in field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldDescriptors {
    /// Largest entry of |grad U| over the box.
    pub grad_sup: f64,
    /// L2 norm of the Laplacian of div U.
    pub lap_div_norm: f64,
    /// Sup norm of div U.
    pub div_sup: f64,
}

#[derive(Debug, Clone)]
enum Repr {
    /// Trilinear interpolant of the nodal samples.
    Nodal,
    /// U = (d psi/dx2, -d psi/dx1, 0) for the bilinear interpolant psi of
    /// nodal stream-function values on the top-face grid. Exactly
    /// divergence free and tangent when psi vanishes on the lateral boundary.
    Stream(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct AmbientField {
    pub kind: AmbientKind,
    pub geometry: BoxGeometry,
    /// Samples of U at the grid nodes.
    pub nodal: Vec<[f64; 3]>,
    /// Samples of div U at the grid nodes.
    pub div_nodal: Vec<f64>,
    pub descriptors: Option<FieldDescriptors>,
    pub is_tangent: bool,
    pub is_div_free: bool,
    repr: Repr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangencyReport {
    pub max_normal: f64,
    pub worst_node: Option<usize>,
    pub passes: bool,
}

pub const TANGENCY_TOL: f64 = 1e-12;
pub const DIV_FREE_TOL: f64 = 1e-12;

fn vortex_psi(x: f64, y: f64) -> f64 {
    let (a, b) = ((PI * x).sin(), (PI * y).sin());
    a * a * b * b
}

fn vortex_u(p: [f64; 3]) -> [f64; 3] {
    let (s1, s2) = ((PI * p[0]).sin(), (PI * p[1]).sin());
    let (c1, c2) = ((PI * p[0]).cos(), (PI * p[1]).cos());
    [2.0 * PI * s1 * s1 * s2 * c2, -2.0 * PI * s1 * c1 * s2 * s2, 0.0]
}

/// Exact zero at the end points, where `sin` of a multiple of pi would
/// otherwise leave round-off.
fn sin_pi(x: f64) -> f64 {
    if x == 0.0 || x == -1.0 || x == 1.0 {
        0.0
    } else {
        (PI * x).sin()
    }
}

impl AmbientField {
    pub fn builtin(kind: AmbientKind, geometry: &BoxGeometry) -> Result<Self> {
        let g = *geometry;
        let n = g.num_nodes();
        let coords: Vec<[f64; 3]> = (0..n).map(|i| g.node_coord(i)).collect();
        let field = match kind {
            AmbientKind::Zero => AmbientField {
                kind,
                geometry: g,
                nodal: vec![[0.0; 3]; n],
                div_nodal: vec![0.0; n],
                descriptors: Some(FieldDescriptors { grad_sup: 0.0, lap_div_norm: 0.0, div_sup: 0.0 }),
                is_tangent: true,
                is_div_free: true,
                repr: Repr::Nodal,
            },
            AmbientKind::Vortex => {
                let plate = g.plate();
                let psi = (0..plate.num_nodes())
                    .map(|pn| {
                        if plate.is_boundary_node(pn) {
                            0.0
                        } else {
                            let [x, y] = plate.node_coord(pn);
                            vortex_psi(x, y)
                        }
                    })
                    .collect();
                AmbientField {
                    kind,
                    geometry: g,
                    nodal: coords
                        .iter()
                        .map(|&c| {
                            let mut u = vortex_u(c);
                            if c[0] == 0.0 || c[0] == 1.0 {
                                u[0] = 0.0;
                            }
                            if c[1] == 0.0 || c[1] == 1.0 {
                                u[1] = 0.0;
                            }
                            u
                        })
                        .collect(),
                    div_nodal: vec![0.0; n],
                    descriptors: Some(FieldDescriptors {
                        grad_sup: 2.0 * PI * PI,
                        lap_div_norm: 0.0,
                        div_sup: 0.0,
                    }),
                    is_tangent: true,
                    is_div_free: true,
                    repr: Repr::Stream(psi),
                }
            }
            AmbientKind::Columnar => AmbientField {
                kind,
                geometry: g,
                nodal: coords.iter().map(|c| [0.0, 0.0, sin_pi(c[2])]).collect(),
                div_nodal: coords.iter().map(|c| PI * (PI * c[2]).cos()).collect(),
                descriptors: Some(FieldDescriptors {
                    grad_sup: PI,
                    lap_div_norm: PI.powi(3) / 2f64.sqrt(),
                    div_sup: PI,
                }),
                is_tangent: true,
                is_div_free: false,
                repr: Repr::Nodal,
            },
            AmbientKind::File => {
                return Err(FsiError::Config {
                    key: "ambient.kind".into(),
                    message: "`file` fields are loaded with AmbientField::from_nodal".into(),
                })
            }
        };
        Ok(field)
    }

    /// A field given by nodal samples, represented by its trilinear
    /// interpolant. No derivative descriptors are attached.
    pub fn from_nodal(geometry: &BoxGeometry, nodal: Vec<[f64; 3]>) -> Result<Self> {
        let g = *geometry;
        if nodal.len() != g.num_nodes() {
            return Err(FsiError::Dimension(format!(
                "ambient field has {} samples, grid has {} nodes",
                nodal.len(),
                g.num_nodes()
            )));
        }
        let mut f = AmbientField {
            kind: AmbientKind::File,
            geometry: g,
            nodal,
            div_nodal: vec![0.0; g.num_nodes()],
            descriptors: None,
            is_tangent: false,
            is_div_free: false,
            repr: Repr::Nodal,
        };
        f.is_tangent = validate_tangency(&f, &g).passes;
        f.is_div_free = f.discrete_div_sup() <= DIV_FREE_TOL;
        let mut div = vec![0.0; g.num_nodes()];
        let mut cnt = vec![0usize; g.num_nodes()];
        for k in 0..g.nz {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    for a in 0..8 {
                        let xi = [(a & 1) as f64, ((a >> 1) & 1) as f64, ((a >> 2) & 1) as f64];
                        let (_, d) = f.eval([i, j, k], xi);
                        let node = g.node(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
                        div[node] += d;
                        cnt[node] += 1;
                    }
                }
            }
        }
        f.div_nodal = div.iter().zip(&cnt).map(|(d, c)| d / *c as f64).collect();
        Ok(f)
    }

    /// U and div U of the discrete field at reference point `xi` of a cell.
    pub fn eval(&self, cell: [usize; 3], xi: [f64; 3]) -> ([f64; 3], f64) {
        let g = &self.geometry;
        match &self.repr {
            Repr::Nodal => {
                let vals = q1_values(xi);
                let grads = q1_ref_grads(xi);
                let h = [g.hx, g.hy, g.hz];
                let mut u = [0.0; 3];
                let mut div = 0.0;
                for a in 0..8 {
                    let node = g.node(
                        cell[0] + (a & 1),
                        cell[1] + ((a >> 1) & 1),
                        cell[2] + ((a >> 2) & 1),
                    );
                    let ua = self.nodal[node];
                    for d in 0..3 {
                        u[d] += vals[a] * ua[d];
                        div += grads[a][d] / h[d] * ua[d];
                    }
                }
                (u, div)
            }
            Repr::Stream(psi) => {
                let plate = g.plate();
                let s = [xi[0], xi[1]];
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                for a in 0..4 {
                    let (ax, ay) = (a & 1, (a >> 1) & 1);
                    let pa = psi[plate.node(cell[0] + ax, cell[1] + ay)];
                    let bx = if ax == 1 { s[0] } else { 1.0 - s[0] };
                    let by = if ay == 1 { s[1] } else { 1.0 - s[1] };
                    let dbx = if ax == 1 { 1.0 } else { -1.0 } / g.hx;
                    let dby = if ay == 1 { 1.0 } else { -1.0 } / g.hy;
                    d1 += pa * dbx * by;
                    d2 += pa * bx * dby;
                }
                ([d2, -d1, 0.0], 0.0)
            }
        }
    }

    /// Largest |div U_h| over the 2x2x2 Gauss points of every cell.
    pub fn discrete_div_sup(&self) -> f64 {
        if let Repr::Stream(_) = self.repr {
            return 0.0;
        }
        let g = &self.geometry;
        let rule = crate::fe::gauss_legendre(2);
        let mut m: f64 = 0.0;
        for k in 0..g.nz {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    for &a in &rule.points {
                        for &b in &rule.points {
                            for &c in &rule.points {
                                m = m.max(self.eval([i, j, k], [a, b, c]).1.abs());
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// Bilinear stream function samples if the field is represented that way.
    pub fn stream_function(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Stream(p) => Some(p),
            Repr::Nodal => None,
        }
    }

    /// Value of the bilinear stream function at a plate reference point.
    pub fn stream_value(&self, cell: [usize; 2], s: [f64; 2]) -> Option<f64> {
        let psi = self.stream_function()?;
        let plate = self.geometry.plate();
        let v = q1_values_2d(s);
        Some(
            (0..4)
                .map(|a| v[a] * psi[plate.node(cell[0] + (a & 1), cell[1] + ((a >> 1) & 1))])
                .sum(),
        )
    }
}

pub fn make_builtin(kind: AmbientKind, geometry: &BoxGeometry) -> Result<AmbientField> {
    AmbientField::builtin(kind, geometry)
}

/// Largest |U.n| over boundary nodes, with every incident face normal
/// checked at edge and corner nodes.
pub fn validate_tangency(field: &AmbientField, geometry: &BoxGeometry) -> TangencyReport {
    let mut worst = 0.0;
    let mut node = None;
    for n in 0..geometry.num_nodes() {
        for nrm in geometry.node_normals(n) {
            let u = field.nodal[n];
            let v = (u[0] * nrm[0] + u[1] * nrm[1] + u[2] * nrm[2]).abs();
            if v > worst {
                worst = v;
                node = Some(n);
            }
        }
    }
    let passes = worst <= TANGENCY_TOL;
    TangencyReport {
        max_normal: worst,
        worst_node: node,
        passes,
    }
}

/// Requires tangency, turning a failed report into an error naming the node.
pub fn require_tangent(field: &AmbientField, geometry: &BoxGeometry) -> Result<()> {
    let r = validate_tangency(field, geometry);
    if r.passes {
        Ok(())
    } else {
        let node = r.worst_node.unwrap_or(0);
        Err(FsiError::NotTangent {
            node,
            position: geometry.node_coord(node),
            value: r.max_normal,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransportAdmissibility {
    pub grad_sup: f64,
    pub lap_div_norm: f64,
    pub sobolev_const: f64,
    pub k_min: f64,
    pub k: f64,
    pub passes: bool,
}

/// Minimum admissible reaction coefficient
/// 2 |grad v|_inf + (C_S / 2) meas^(1/6) |lap div v|_2, compared with `k`.
pub fn appendix_admissibility(
    field: &AmbientField,
    k: f64,
    sobolev_const: f64,
) -> Result<TransportAdmissibility> {
    let d = field.descriptors.ok_or(FsiError::NoDerivativeInfo)?;
    let meas: f64 = field.geometry.measure();
    let k_min = 2.0 * d.grad_sup + 0.5 * sobolev_const * meas.powf(1.0 / 6.0) * d.lap_div_norm;
    Ok(TransportAdmissibility {
        grad_sup: d.grad_sup,
        lap_div_norm: d.lap_div_norm,
        sobolev_const,
        k_min,
        k,
        passes: k >= k_min,
    })
}
