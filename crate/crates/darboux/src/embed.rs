//! From a solution `z` back to an embedding: the flat metric `g - dz^2`, its development to the
//! plane, and the surface `(x, y, z)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Accuracy, Axis, Grid, ScalarField, diff_axis};
use crate::metric::{MetricField, gauss_curvature};

#[derive(Clone, Debug)]
pub struct FlatMetricCheck {
    pub h: MetricField,
    /// Gaussian curvature of `h`.
    pub k_h: ScalarField,
    pub max_k: f64,
    /// `max |grad_g z|`.
    pub max_grad: f64,
}

/// `h = g - dz dz`, after checking `|grad_g z| < 1` at every node.
pub fn flat_metric(g: &MetricField, z: &ScalarField, acc: Accuracy) -> Result<FlatMetricCheck> {
    let grid = g.grid();
    z.check_same(&g.g11)?;
    let zu = diff_axis(z, Axis::X, 1, acc);
    let zv = diff_axis(z, Axis::Y, 1, acc);
    let n = grid.len();
    let mut max_grad = 0.0f64;
    let mut bad = 0;
    for k in 0..n {
        let (p, q) = (zu.data[k], zv.data[k]);
        let s = g.i11.data[k] * p * p + 2.0 * g.i12.data[k] * p * q + g.i22.data[k] * q * q;
        let s = s.max(0.0).sqrt();
        max_grad = max_grad.max(s);
        if !(s < 1.0) {
            bad += 1;
        }
    }
    if bad > 0 {
        return Err(Error::Gradient { count: bad, max: max_grad });
    }
    let h11 = g.g11.zip(&zu, |a, p| a - p * p);
    let h12 = ScalarField { grid, data: (0..n).map(|k| g.g12.data[k] - zu.data[k] * zv.data[k]).collect() };
    let h22 = g.g22.zip(&zv, |a, q| a - q * q);
    let h = MetricField::new(h11, h12, h22)?;
    let k_h = gauss_curvature(&h);
    let max_k = k_h.max_abs();
    Ok(FlatMetricCheck { h, k_h, max_k, max_grad })
}

#[derive(Clone, Copy, Debug)]
pub struct DevelopOptions {
    /// Largest tolerated `|K_h|`; the loop defect may reach this times the chart area.
    pub k_tol: f64,
    pub acc: Accuracy,
}

impl Default for DevelopOptions {
    fn default() -> Self {
        DevelopOptions { k_tol: 1e-3, acc: Accuracy::Fourth }
    }
}

#[derive(Clone, Debug)]
pub struct Development {
    pub x: ScalarField,
    pub y: ScalarField,
    /// Rotation of the orthonormal frame against the Cholesky coframe.
    pub alpha: ScalarField,
    /// `alpha` integrated once around the boundary of the grid.
    pub loop_defect: f64,
}

/// Cholesky coframe `theta1 = a du + b dv`, `theta2 = c dv`.
fn coframe(h: &MetricField) -> [ScalarField; 3] {
    let a = h.g11.map(f64::sqrt);
    let b = h.g12.zip(&a, |g12, a| g12 / a);
    let c = ScalarField { grid: a.grid, data: (0..a.data.len()).map(|k| (h.det.data[k]).sqrt() / a.data[k]).collect() };
    [a, b, c]
}

/// Integrate the closed-up-to-curvature form `p du + q dv` from the origin node along
/// right-then-up grid paths with the trapezoid rule.
fn integrate(p: &ScalarField, q: &ScalarField) -> ScalarField {
    let g = p.grid;
    let (i0, j0) = g.origin_index();
    let mut out = ScalarField::zeros(g);
    // Along the row through the origin.
    for i in i0 + 1..g.nx {
        let v = out.at(i - 1, j0) + 0.5 * g.hx * (p.at(i - 1, j0) + p.at(i, j0));
        out.set(i, j0, v);
    }
    for i in (0..i0).rev() {
        let v = out.at(i + 1, j0) - 0.5 * g.hx * (p.at(i + 1, j0) + p.at(i, j0));
        out.set(i, j0, v);
    }
    // Then up and down each column.
    for i in 0..g.nx {
        for j in j0 + 1..g.ny {
            let v = out.at(i, j - 1) + 0.5 * g.hy * (q.at(i, j - 1) + q.at(i, j));
            out.set(i, j, v);
        }
        for j in (0..j0).rev() {
            let v = out.at(i, j + 1) - 0.5 * g.hy * (q.at(i, j + 1) + q.at(i, j));
            out.set(i, j, v);
        }
    }
    out
}

/// Counter-clockwise trapezoid integral of `p du + q dv` around the grid boundary.
fn loop_integral(p: &ScalarField, q: &ScalarField) -> f64 {
    let g = p.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut s = 0.0;
    for i in 0..nx - 1 {
        s += 0.5 * g.hx * (p.at(i, 0) + p.at(i + 1, 0));
        s -= 0.5 * g.hx * (p.at(i, ny - 1) + p.at(i + 1, ny - 1));
    }
    for j in 0..ny - 1 {
        s += 0.5 * g.hy * (q.at(nx - 1, j) + q.at(nx - 1, j + 1));
        s -= 0.5 * g.hy * (q.at(0, j) + q.at(0, j + 1));
    }
    s
}

/// Euclidean coordinates for a flat metric, with `x(0) = y(0) = 0` and `dx(0)` along the first
/// coframe leg.
pub fn develop(h: &MetricField, opts: DevelopOptions) -> Result<Development> {
    let g = h.grid();
    let [a, b, c] = coframe(h);
    let acc = opts.acc;
    // d theta1 = A theta1 ^ theta2, d theta2 = B theta1 ^ theta2 and d alpha = A theta1 + B theta2.
    let curl = diff_axis(&b, Axis::X, 1, acc).sub(&diff_axis(&a, Axis::Y, 1, acc));
    let cu = diff_axis(&c, Axis::X, 1, acc);
    let n = g.len();
    let mut au = ScalarField::zeros(g);
    let mut av = ScalarField::zeros(g);
    for k in 0..n {
        let (a, b, c) = (a.data[k], b.data[k], c.data[k]);
        let big_a = curl.data[k] / (a * c);
        let big_b = cu.data[k] / (a * c);
        au.data[k] = big_a * a;
        av.data[k] = big_a * b + big_b * c;
    }
    let loop_defect = loop_integral(&au, &av);
    let area = (g.x1 - g.x0) * (g.y1 - g.y0);
    if loop_defect.abs() > opts.k_tol * area {
        return Err(Error::NotFlat(loop_defect));
    }
    let alpha = integrate(&au, &av);
    let mut xu = ScalarField::zeros(g);
    let mut xv = ScalarField::zeros(g);
    let mut yu = ScalarField::zeros(g);
    let mut yv = ScalarField::zeros(g);
    for k in 0..n {
        let (s, co) = alpha.data[k].sin_cos();
        xu.data[k] = co * a.data[k];
        xv.data[k] = co * b.data[k] - s * c.data[k];
        yu.data[k] = s * a.data[k];
        yv.data[k] = s * b.data[k] + co * c.data[k];
    }
    Ok(Development { x: integrate(&xu, &xv), y: integrate(&yu, &yv), alpha, loop_defect })
}

#[derive(Clone, Debug)]
pub struct EmbeddingMesh {
    pub grid: Grid,
    /// Node positions, row-major.
    pub positions: Vec<[f64; 3]>,
    /// Per cell `max_ij |I_ij - g_ij|` of the induced metric `I`, row-major over cells.
    pub cell_error: Vec<f64>,
    pub max_error: f64,
    /// `max_error / max |g_ij|`.
    pub rel_error: f64,
}

/// Node positions `(x, y, z)` and the induced metric error on each cell, from centred differences
/// at the cell centre against the corner average of `g`.
pub fn assemble_embedding(x: &ScalarField, y: &ScalarField, z: &ScalarField, g: &MetricField) -> Result<EmbeddingMesh> {
    x.check_same(y)?;
    x.check_same(z)?;
    x.check_same(&g.g11)?;
    let grid = x.grid;
    let positions: Vec<[f64; 3]> = (0..grid.len()).map(|k| [x.data[k], y.data[k], z.data[k]]).collect();
    let p = |i: usize, j: usize| positions[grid.idx(i, j)];
    let mut cell_error = Vec::with_capacity((grid.nx - 1) * (grid.ny - 1));
    let mut gmax = 0.0f64;
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let (p00, p10, p01, p11) = (p(i, j), p(i + 1, j), p(i, j + 1), p(i + 1, j + 1));
            let mut du = [0.0; 3];
            let mut dv = [0.0; 3];
            for c in 0..3 {
                du[c] = 0.5 * ((p10[c] - p00[c]) + (p11[c] - p01[c])) / grid.hx;
                dv[c] = 0.5 * ((p01[c] - p00[c]) + (p11[c] - p10[c])) / grid.hy;
            }
            let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let induced = [dot(du, du), dot(du, dv), dot(dv, dv)];
            let mut err = 0.0f64;
            for (m, f) in [&g.g11, &g.g12, &g.g22].into_iter().enumerate() {
                let avg = 0.25 * (f.at(i, j) + f.at(i + 1, j) + f.at(i, j + 1) + f.at(i + 1, j + 1));
                gmax = gmax.max(avg.abs());
                err = err.max((induced[m] - avg).abs());
            }
            cell_error.push(err);
        }
    }
    let max_error = cell_error.iter().copied().fold(0.0, f64::max);
    Ok(EmbeddingMesh { grid, positions, cell_error, max_error, rel_error: if gmax > 0.0 { max_error / gmax } else { 0.0 } })
}

/// Wavefront text mesh: one `v` line per node (row-major), two triangles per cell.
pub fn export_mesh(mesh: &EmbeddingMesh, mut w: impl Write) -> std::io::Result<()> {
    let g = mesh.grid;
    writeln!(w, "# {} x {} nodes", g.nx, g.ny)?;
    for p in &mesh.positions {
        writeln!(w, "v {:.15e} {:.15e} {:.15e}", p[0], p[1], p[2])?;
    }
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let a = g.idx(i, j) + 1;
            let b = g.idx(i + 1, j) + 1;
            let c = g.idx(i + 1, j + 1) + 1;
            let d = g.idx(i, j + 1) + 1;
            writeln!(w, "f {a} {b} {c}")?;
            writeln!(w, "f {a} {c} {d}")?;
        }
    }
    Ok(())
}

/// Cell errors as a CSV grid, one row of cells per line.
pub fn write_error_csv(mesh: &EmbeddingMesh, mut w: impl Write) -> std::io::Result<()> {
    let nc = mesh.grid.nx - 1;
    for row in mesh.cell_error.chunks(nc) {
        let line: Vec<String> = row.iter().map(|e| format!("{e:.6e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::ClosedMetric;

    fn sample(m: &ClosedMetric, n: usize, a: f64) -> MetricField {
        MetricField::sample(m, Grid::square(a, n).unwrap(), 1.0).unwrap()
    }

    /// `psi(u, v)` and its Jacobian.
    fn psi(u: f64, v: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let x = u + 0.1 * v * v + 0.05 * u.sin();
        let y = v + 0.1 * u * v;
        (
            [x, y],
            [[1.0 + 0.05 * u.cos(), 0.2 * v], [0.1 * v, 1.0 + 0.1 * u]],
        )
    }

    fn pulled_back(n: usize) -> MetricField {
        let grid = Grid::square(0.5, n).unwrap();
        let f = |m: usize| {
            ScalarField::from_fn(grid, move |u, v| {
                let j = psi(u, v).1;
                let col = |c: usize| [j[0][c], j[1][c]];
                let (a, b) = match m {
                    0 => (col(0), col(0)),
                    1 => (col(0), col(1)),
                    _ => (col(1), col(1)),
                };
                a[0] * b[0] + a[1] * b[1]
            })
        };
        MetricField::new(f(0), f(1), f(2)).unwrap()
    }

    /// Max distance to `psi` after the best rigid motion (2D Procrustes).
    fn rigid_deviation(d: &Development) -> f64 {
        let g = d.x.grid;
        let pts: Vec<([f64; 2], [f64; 2])> = (0..g.len())
            .map(|k| {
                let (u, v) = g.point(k);
                ([d.x.data[k], d.y.data[k]], psi(u, v).0)
            })
            .collect();
        let n = pts.len() as f64;
        let ca = pts.iter().fold([0.0, 0.0], |s, p| [s[0] + p.0[0] / n, s[1] + p.0[1] / n]);
        let cb = pts.iter().fold([0.0, 0.0], |s, p| [s[0] + p.1[0] / n, s[1] + p.1[1] / n]);
        let (mut sc, mut ss) = (0.0, 0.0);
        for (a, b) in &pts {
            let (ax, ay) = (a[0] - ca[0], a[1] - ca[1]);
            let (bx, by) = (b[0] - cb[0], b[1] - cb[1]);
            sc += ax * bx + ay * by;
            ss += ax * by - ay * bx;
        }
        let t = ss.atan2(sc);
        let (s, c) = t.sin_cos();
        pts.iter()
            .map(|(a, b)| {
                let (ax, ay) = (a[0] - ca[0], a[1] - ca[1]);
                let rx = c * ax - s * ay + cb[0];
                let ry = s * ax + c * ay + cb[1];
                (rx - b[0]).hypot(ry - b[1])
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_height_keeps_the_metric() {
        let g = sample(&ClosedMetric::sphere(), 33, 0.5);
        let fc = flat_metric(&g, &ScalarField::zeros(g.grid()), Accuracy::Fourth).unwrap();
        assert_eq!(fc.h.g11.data, g.g11.data);
        assert_eq!(fc.h.g12.data, g.g12.data);
        assert_eq!(fc.h.g22.data, g.g22.data);
        assert_eq!(fc.max_grad, 0.0);
    }

    #[test]
    fn graph_height_flattens_the_graph_metric() {
        let f = "u^2/2 + u*v^3/6";
        let m = ClosedMetric::graph(f).unwrap();
        let g = sample(&m, 65, 0.5);
        let z = ScalarField::from_fn(g.grid(), |u, v| u * u / 2.0 + u * v.powi(3) / 6.0);
        let fc = flat_metric(&g, &z, Accuracy::Fourth).unwrap();
        let err = fc.h.g11.map(|x| x - 1.0).max_abs().max(fc.h.g12.max_abs()).max(fc.h.g22.map(|x| x - 1.0).max_abs());
        assert!(err < 1e-7, "{err:.3e}");
        assert!(fc.max_k < 1e-3, "{:.3e}", fc.max_k);
        assert!(fc.max_grad < 1.0);
    }

    #[test]
    fn steep_height_is_rejected() {
        let g = sample(&ClosedMetric::flat(), 17, 1.0);
        let z = ScalarField::from_fn(g.grid(), |u, _| 1.5 * u);
        match flat_metric(&g, &z, Accuracy::Fourth) {
            Err(Error::Gradient { count, max }) => {
                assert_eq!(count, g.grid().len());
                assert!((max - 1.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn euclidean_develops_to_the_identity() {
        let h = sample(&ClosedMetric::flat(), 17, 1.0);
        let d = develop(&h, DevelopOptions::default()).unwrap();
        let g = h.grid();
        for k in 0..g.len() {
            let (u, v) = g.point(k);
            assert!((d.x.data[k] - u).abs() < 1e-14 && (d.y.data[k] - v).abs() < 1e-14);
        }
        assert!(d.loop_defect.abs() < 1e-12);
    }

    #[test]
    fn pulled_back_metric_develops_to_the_map() {
        let mut errs = vec![];
        for n in [33, 65, 129] {
            let d = develop(&pulled_back(n), DevelopOptions::default()).unwrap();
            errs.push(rigid_deviation(&d));
        }
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 3.5, "{errs:?}");
        }
        assert!(errs[2] < 1e-5, "{errs:?}");
    }

    #[test]
    fn development_is_reproducible_and_isometric() {
        let h = pulled_back(65);
        let a = develop(&h, DevelopOptions::default()).unwrap();
        let b = develop(&h, DevelopOptions::default()).unwrap();
        assert_eq!(a.x.data, b.x.data);
        assert_eq!(a.y.data, b.y.data);
        let mesh = assemble_embedding(&a.x, &a.y, &ScalarField::zeros(h.grid()), &h).unwrap();
        assert!(mesh.max_error < 1e-3, "{:.3e}", mesh.max_error);
    }

    #[test]
    fn loop_defect_tracks_curvature_times_area() {
        for a in [0.05, 0.1, 0.2] {
            let h = sample(&ClosedMetric::sphere(), 65, a);
            let kmax = gauss_curvature(&h).max_abs();
            let area = 4.0 * a * a;
            let d = develop(&h, DevelopOptions { k_tol: 10.0, ..Default::default() }).unwrap();
            let ratio = d.loop_defect.abs() / (kmax * area);
            assert!((0.2..=5.0).contains(&ratio), "a = {a}: ratio {ratio}");
        }
        let h = sample(&ClosedMetric::sphere(), 33, 0.5);
        assert!(matches!(develop(&h, DevelopOptions::default()), Err(Error::NotFlat(_))));
    }

    #[test]
    fn flat_embedding_error_is_round_off() {
        let h = sample(&ClosedMetric::flat(), 17, 1.0);
        let g = h.grid();
        let x = ScalarField::from_fn(g, |u, _| u);
        let y = ScalarField::from_fn(g, |_, v| v);
        let mesh = assemble_embedding(&x, &y, &ScalarField::zeros(g), &h).unwrap();
        assert!(mesh.max_error < 1e-13);
        assert!(mesh.cell_error.iter().all(|e| *e >= 0.0));
    }

    #[test]
    fn graph_embedding_error_is_second_order() {
        let f = |u: f64, v: f64| u * u / 2.0 + u * v.powi(3) / 6.0;
        let m = ClosedMetric::graph("u^2/2 + u*v^3/6").unwrap();
        let mut errs = vec![];
        for n in [17, 33, 65] {
            let g = sample(&m, n, 0.5);
            let grid = g.grid();
            let x = ScalarField::from_fn(grid, |u, _| u);
            let y = ScalarField::from_fn(grid, |_, v| v);
            let z = ScalarField::from_fn(grid, f);
            errs.push(assemble_embedding(&x, &y, &z, &g).unwrap().max_error);
        }
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 3.5, "{errs:?}");
        }
    }

    #[test]
    fn mesh_export_counts_and_determinism() {
        let h = sample(&ClosedMetric::flat(), 9, 1.0);
        let g = h.grid();
        let x = ScalarField::from_fn(g, |u, _| u);
        let y = ScalarField::from_fn(g, |_, v| v);
        let z = ScalarField::from_fn(g, |u, v| 0.1 * u * v);
        let mesh = assemble_embedding(&x, &y, &z, &h).unwrap();
        let mut a = vec![];
        let mut b = vec![];
        export_mesh(&mesh, &mut a).unwrap();
        export_mesh(&mesh, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 81);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 2 * 8 * 8);
        let mut csv = vec![];
        write_error_csv(&mesh, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 8);
    }
}
