//! Quadrature rules and reference shape functions.

/// Gauss-Legendre rule mapped to [0, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// n-point Gauss-Legendre rule on [0, 1], exact for degree 2n - 1.
pub fn gauss_legendre(n: usize) -> GaussRule {
    assert!(n >= 1);
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        points[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    GaussRule { points, weights }
}

/// Trilinear shape functions on the unit cube; local node `a` has
/// coordinate bits (a & 1, (a >> 1) & 1, (a >> 2) & 1).
pub fn q1_values(xi: [f64; 3]) -> [f64; 8] {
    let mut v = [0.0; 8];
    for (a, out) in v.iter_mut().enumerate() {
        let mut s = 1.0;
        for d in 0..3 {
            s *= if (a >> d) & 1 == 1 { xi[d] } else { 1.0 - xi[d] };
        }
        *out = s;
    }
    v
}

/// Gradients of the trilinear shape functions with respect to the
/// reference coordinates.
pub fn q1_ref_grads(xi: [f64; 3]) -> [[f64; 3]; 8] {
    let mut g = [[0.0; 3]; 8];
    for (a, out) in g.iter_mut().enumerate() {
        for d in 0..3 {
            let mut s = 1.0;
            for e in 0..3 {
                let bit = (a >> e) & 1 == 1;
                s *= if e == d {
                    if bit { 1.0 } else { -1.0 }
                } else if bit {
                    xi[e]
                } else {
                    1.0 - xi[e]
                };
            }
            out[d] = s;
        }
    }
    g
}

/// Bilinear shape functions on the unit square.
pub fn q1_values_2d(s: [f64; 2]) -> [f64; 4] {
    let mut v = [0.0; 4];
    for (a, out) in v.iter_mut().enumerate() {
        let bx = if a & 1 == 1 { s[0] } else { 1.0 - s[0] };
        let by = if a & 2 == 2 { s[1] } else { 1.0 - s[1] };
        *out = bx * by;
    }
    v
}

/// Cubic Hermite basis on [0, 1] scaled to an interval of length h:
/// index 0/1 are value/slope at the left end, 2/3 at the right end.
/// Returns (value, first derivative, second derivative) in physical units.
pub fn hermite_1d(idx: usize, s: f64, h: f64) -> (f64, f64, f64) {
    let (v, d, dd) = match idx {
        0 => (1.0 - 3.0 * s * s + 2.0 * s * s * s, -6.0 * s + 6.0 * s * s, -6.0 + 12.0 * s),
        1 => (
            h * (s - 2.0 * s * s + s * s * s),
            h * (1.0 - 4.0 * s + 3.0 * s * s),
            h * (-4.0 + 6.0 * s),
        ),
        2 => (3.0 * s * s - 2.0 * s * s * s, 6.0 * s - 6.0 * s * s, 6.0 - 12.0 * s),
        3 => (
            h * (-s * s + s * s * s),
            h * (-2.0 * s + 3.0 * s * s),
            h * (-2.0 + 6.0 * s),
        ),
        _ => unreachable!(),
    };
    (v, d / h, dd / (h * h))
}

/// Values and derivatives of the 16 Bogner-Fox-Schmit functions of one
/// rectangle at a reference point. Local index `4 * a + d`, where `a` is the
/// corner (bits x, y) and `d` the DOF kind (bit 0: x-slope, bit 1: y-slope).
#[derive(Debug, Clone, Copy)]
pub struct BfsEval {
    pub v: [f64; 16],
    pub dx: [f64; 16],
    pub dy: [f64; 16],
    pub dxx: [f64; 16],
    pub dyy: [f64; 16],
    pub dxy: [f64; 16],
}

pub fn bfs_eval(s: [f64; 2], hx: f64, hy: f64) -> BfsEval {
    let mut e = BfsEval {
        v: [0.0; 16],
        dx: [0.0; 16],
        dy: [0.0; 16],
        dxx: [0.0; 16],
        dyy: [0.0; 16],
        dxy: [0.0; 16],
    };
    for a in 0..4 {
        let (ax, ay) = (a & 1, (a >> 1) & 1);
        for d in 0..4 {
            let ix = 2 * ax + (d & 1);
            let iy = 2 * ay + ((d >> 1) & 1);
            let (fx, gx, hxx) = hermite_1d(ix, s[0], hx);
            let (fy, gy, hyy) = hermite_1d(iy, s[1], hy);
            let l = 4 * a + d;
            e.v[l] = fx * fy;
            e.dx[l] = gx * fy;
            e.dy[l] = fx * gy;
            e.dxx[l] = hxx * fy;
            e.dyy[l] = fx * hyy;
            e.dxy[l] = gx * gy;
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_monomials() {
        for n in 1..=6 {
            let r = gauss_legendre(n);
            for p in 0..2 * n {
                let s: f64 = r
                    .points
                    .iter()
                    .zip(&r.weights)
                    .map(|(x, w)| w * x.powi(p as i32))
                    .sum();
                assert!((s - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn q1_partition_of_unity() {
        let xi = [0.3, 0.7, 0.1];
        let v = q1_values(xi);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let g = q1_ref_grads(xi);
        for d in 0..3 {
            assert!(g.iter().map(|x| x[d]).sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn hermite_nodal_properties() {
        let h = 0.25;
        let (v0, d0, _) = hermite_1d(0, 0.0, h);
        let (v1, d1, _) = hermite_1d(1, 0.0, h);
        let (v2, d2, _) = hermite_1d(2, 1.0, h);
        let (v3, d3, _) = hermite_1d(3, 1.0, h);
        assert_eq!((v0, d0), (1.0, 0.0));
        assert_eq!(v1, 0.0);
        assert!((d1 - 1.0).abs() < 1e-15);
        assert_eq!((v2, d2), (1.0, 0.0));
        assert_eq!(v3, 0.0);
        assert!((d3 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bfs_reproduces_bicubic() {
        // f = x^3 y^2 + x y on a rectangle [0,hx]x[0,hy]
        let (hx, hy) = (0.5, 0.25);
        let f = |x: f64, y: f64| [
            x.powi(3) * y * y + x * y,
            3.0 * x * x * y * y + y,
            2.0 * x.powi(3) * y + x,
            6.0 * x * x * y + 1.0,
        ];
        let mut coef = [0.0; 16];
        for a in 0..4 {
            let x = (a & 1) as f64 * hx;
            let y = ((a >> 1) & 1) as f64 * hy;
            let vals = f(x, y);
            coef[4 * a..4 * a + 4].copy_from_slice(&vals);
        }
        let s = [0.37, 0.81];
        let e = bfs_eval(s, hx, hy);
        let (x, y) = (s[0] * hx, s[1] * hy);
        let val: f64 = (0..16).map(|l| coef[l] * e.v[l]).sum();
        let dxy: f64 = (0..16).map(|l| coef[l] * e.dxy[l]).sum();
        let dxx: f64 = (0..16).map(|l| coef[l] * e.dxx[l]).sum();
        assert!((val - f(x, y)[0]).abs() < 1e-14, "{val} {:?}", f(x, y));
        assert!((dxy - f(x, y)[3]).abs() < 1e-12);
        assert!((dxx - 6.0 * x * y * y).abs() < 1e-12);
    }
}
