//! Metric fields, Christoffel symbols, curvature and the Darboux operator.
//!
//! Geometry is expressed in the `y` chart. Fields live on an `x` grid with
//! `y = eps^2 x`; passing `eps = 1` works directly in `y`.

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::grid::{Accuracy, Axis, Derivs, Grid, ScalarField, diff_axis};
use crate::jet::{Jet, PolyJet};

/// Symmetric positive definite metric sampled on a grid.
#[derive(Clone, Debug)]
pub struct MetricField {
    pub g11: ScalarField,
    pub g12: ScalarField,
    pub g22: ScalarField,
    pub det: ScalarField,
    pub i11: ScalarField,
    pub i12: ScalarField,
    pub i22: ScalarField,
}

impl MetricField {
    pub fn new(g11: ScalarField, g12: ScalarField, g22: ScalarField) -> Result<MetricField> {
        g11.check_same(&g12)?;
        g11.check_same(&g22)?;
        let grid = g11.grid;
        let mut det = ScalarField::zeros(grid);
        let mut i11 = ScalarField::zeros(grid);
        let mut i12 = ScalarField::zeros(grid);
        let mut i22 = ScalarField::zeros(grid);
        for k in 0..grid.len() {
            let (a, b, c) = (g11.data[k], g12.data[k], g22.data[k]);
            let d = a * c - b * b;
            if !(a > 0.0) || !(d > 0.0) || !d.is_finite() {
                let (x, y) = grid.point(k);
                return Err(Error::DegenerateMetric { i: k % grid.nx, j: k / grid.nx, x, y });
            }
            det.data[k] = d;
            i11.data[k] = c / d;
            i12.data[k] = -b / d;
            i22.data[k] = a / d;
        }
        Ok(MetricField { g11, g12, g22, det, i11, i12, i22 })
    }

    pub fn grid(&self) -> Grid {
        self.g11.grid
    }

    pub fn sample(source: &dyn MetricSource, grid: Grid, scale: f64) -> Result<MetricField> {
        let mut c = [ScalarField::zeros(grid), ScalarField::zeros(grid), ScalarField::zeros(grid)];
        for k in 0..grid.len() {
            let (x, y) = grid.point(k);
            let v = source.value(scale * x, scale * y);
            for m in 0..3 {
                c[m].data[k] = v[m];
            }
        }
        let [a, b, d] = c;
        MetricField::new(a, b, d)
    }
}

/// Anything that yields Taylor jets of `(g11, g12, g22)` at a point.
pub trait MetricSource: Send + Sync {
    fn jets(&self, x: f64, y: f64, deg: usize) -> [Jet; 3];

    fn value(&self, x: f64, y: f64) -> [f64; 3] {
        let j = self.jets(x, y, 0);
        [j[0].value(), j[1].value(), j[2].value()]
    }
}

/// Closed-form metric in `(u, v)`, optionally pulled back by a linear map `(u, v) = M (x, y)`.
#[derive(Clone, Debug)]
pub struct ClosedMetric {
    pub e11: Expr,
    pub e12: Expr,
    pub e22: Expr,
    pub map: [[f64; 2]; 2],
}

impl ClosedMetric {
    pub fn new(e11: Expr, e12: Expr, e22: Expr) -> ClosedMetric {
        ClosedMetric { e11, e12, e22, map: [[1.0, 0.0], [0.0, 1.0]] }
    }

    pub fn parse(g11: &str, g12: &str, g22: &str) -> Result<ClosedMetric> {
        Ok(ClosedMetric::new(expr::parse(g11)?, expr::parse(g12)?, expr::parse(g22)?))
    }

    /// First fundamental form of the graph `(u, v, F(u, v))`.
    pub fn graph(f: &str) -> Result<ClosedMetric> {
        let f = expr::parse(f)?;
        let fu = f.partial(1, 0);
        let fv = f.partial(0, 1);
        let one = Expr::Num(1.0);
        let e11 = Expr::Add(Box::new(one.clone()), Box::new(Expr::Mul(Box::new(fu.clone()), Box::new(fu.clone()))));
        let e12 = Expr::Mul(Box::new(fu), Box::new(fv.clone()));
        let e22 = Expr::Add(Box::new(one), Box::new(Expr::Mul(Box::new(fv.clone()), Box::new(fv))));
        Ok(ClosedMetric::new(e11, e12, e22))
    }

    pub fn flat() -> ClosedMetric {
        ClosedMetric::parse("1", "0", "1").unwrap()
    }

    /// Unit sphere in latitude/longitude, centred on the equator.
    pub fn sphere() -> ClosedMetric {
        ClosedMetric::parse("1", "0", "cos(u)^2").unwrap()
    }

    /// Flat metric in polar form about the point `u = -1`.
    pub fn polar_type() -> ClosedMetric {
        ClosedMetric::parse("1", "0", "(1 + u)^2").unwrap()
    }

    /// Compose with a further linear map: new coordinates `p` with old `= A p`.
    pub fn pulled_back(&self, a: [[f64; 2]; 2]) -> ClosedMetric {
        let m = self.map;
        let mut out = self.clone();
        for i in 0..2 {
            for j in 0..2 {
                out.map[i][j] = m[i][0] * a[0][j] + m[i][1] * a[1][j];
            }
        }
        out
    }
}

impl MetricSource for ClosedMetric {
    fn jets(&self, x: f64, y: f64, deg: usize) -> [Jet; 3] {
        let m = self.map;
        let xj = Jet::var_x(deg, x);
        let yj = Jet::var_y(deg, y);
        let u = xj.scale(m[0][0]).add(&yj.scale(m[0][1]));
        let v = xj.scale(m[1][0]).add(&yj.scale(m[1][1]));
        let g11 = self.e11.eval_jet(&u, &v);
        let g12 = self.e12.eval_jet(&u, &v);
        let g22 = self.e22.eval_jet(&u, &v);
        pullback_jets(m, &g11, &g12, &g22)
    }
}

/// `M^T G M` on jets.
pub fn pullback_jets(m: [[f64; 2]; 2], g11: &Jet, g12: &Jet, g22: &Jet) -> [Jet; 3] {
    if m == [[1.0, 0.0], [0.0, 1.0]] {
        return [g11.clone(), g12.clone(), g22.clone()];
    }
    let comb = |p: usize, q: usize| {
        let c11 = m[0][p] * m[0][q];
        let c12 = m[0][p] * m[1][q] + m[1][p] * m[0][q];
        let c22 = m[1][p] * m[1][q];
        g11.scale(c11).add(&g12.scale(c12)).add(&g22.scale(c22))
    };
    [comb(0, 0), comb(0, 1), comb(1, 1)]
}

/// Pointwise geometry: metric, inverse, Christoffel symbols and `R_1212 = K |g|`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointGeometry {
    pub g: [f64; 3],
    pub ginv: [f64; 3],
    pub det: f64,
    /// `Gamma^l_ij` indexed `[l][ij]` with `ij` in (11, 12, 22).
    pub gamma: [[f64; 3]; 2],
    pub r1212: f64,
}

impl PointGeometry {
    pub fn k(&self) -> f64 {
        self.r1212 / self.det
    }

    /// Build from the metric, its first derivatives `dg[k][ij]` and second derivatives `ddg[kl][ij]`
    /// with `kl` in (11, 12, 22).
    pub fn from_derivs(g: [f64; 3], dg: [[f64; 3]; 2], ddg: [[f64; 3]; 3]) -> PointGeometry {
        let det = g[0] * g[2] - g[1] * g[1];
        let ginv = [g[2] / det, -g[1] / det, g[0] / det];
        let gm = |i: usize, j: usize| -> usize {
            match (i, j) {
                (0, 0) => 0,
                (1, 1) => 2,
                _ => 1,
            }
        };
        let inv = |i: usize, j: usize| ginv[gm(i, j)];
        let d1 = |k: usize, i: usize, j: usize| dg[k][gm(i, j)];
        let d2 = |k: usize, l: usize, i: usize, j: usize| ddg[gm(k, l)][gm(i, j)];
        // First kind Gamma_{m,ij} and its derivatives.
        let first = |m: usize, i: usize, j: usize| 0.5 * (d1(i, j, m) + d1(j, i, m) - d1(m, i, j));
        let dfirst = |k: usize, m: usize, i: usize, j: usize| 0.5 * (d2(k, i, j, m) + d2(k, j, i, m) - d2(k, m, i, j));
        let second = |l: usize, i: usize, j: usize| (0..2).map(|m| inv(l, m) * first(m, i, j)).sum::<f64>();
        // d_k g^{lm} = -g^{la} d_k g_ab g^{bm}
        let dinv = |k: usize, l: usize, m: usize| {
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    s -= inv(l, a) * d1(k, a, b) * inv(b, m);
                }
            }
            s
        };
        let dsecond = |k: usize, l: usize, i: usize, j: usize| {
            (0..2).map(|m| dinv(k, l, m) * first(m, i, j) + inv(l, m) * dfirst(k, m, i, j)).sum::<f64>()
        };
        let mut gamma = [[0.0; 3]; 2];
        for (l, gl) in gamma.iter_mut().enumerate() {
            gl[0] = second(l, 0, 0);
            gl[1] = second(l, 0, 1);
            gl[2] = second(l, 1, 1);
        }
        // R^l_{212} = d_1 Gamma^l_22 - d_2 Gamma^l_12 + Gamma^l_1m Gamma^m_22 - Gamma^l_2m Gamma^m_12
        let riem = |l: usize| {
            let mut r = dsecond(0, l, 1, 1) - dsecond(1, l, 0, 1);
            for m in 0..2 {
                r += second(l, 0, m) * second(m, 1, 1) - second(l, 1, m) * second(m, 0, 1);
            }
            r
        };
        let r1212 = g[0] * riem(0) + g[1] * riem(1);
        PointGeometry { g, ginv, det, gamma, r1212 }
    }

    /// From degree-2 jets of the metric components at the point.
    pub fn from_jets(j: &[Jet; 3]) -> PointGeometry {
        let g = [j[0].value(), j[1].value(), j[2].value()];
        let mut dg = [[0.0; 3]; 2];
        let mut ddg = [[0.0; 3]; 3];
        for c in 0..3 {
            dg[0][c] = j[c].get(1, 0);
            dg[1][c] = j[c].get(0, 1);
            ddg[0][c] = 2.0 * j[c].get(2, 0);
            ddg[1][c] = j[c].get(1, 1);
            ddg[2][c] = 2.0 * j[c].get(0, 2);
        }
        PointGeometry::from_derivs(g, dg, ddg)
    }

    /// Covariant Hessian `(nabla_11, nabla_12, nabla_22)` from coordinate derivatives.
    #[inline]
    pub fn cov_hessian(&self, z: &ZPoint) -> [f64; 3] {
        let gm = &self.gamma;
        [
            z.z11 - gm[0][0] * z.z1 - gm[1][0] * z.z2,
            z.z12 - gm[0][1] * z.z1 - gm[1][1] * z.z2,
            z.z22 - gm[0][2] * z.z1 - gm[1][2] * z.z2,
        ]
    }

    #[inline]
    pub fn grad_sq(&self, z: &ZPoint) -> f64 {
        self.ginv[0] * z.z1 * z.z1 + 2.0 * self.ginv[1] * z.z1 * z.z2 + self.ginv[2] * z.z2 * z.z2
    }

    /// `det nabla^2 z - K |g| (1 - |grad z|^2)`.
    #[inline]
    pub fn phi(&self, z: &ZPoint) -> f64 {
        let h = self.cov_hessian(z);
        h[0] * h[2] - h[1] * h[1] - self.r1212 * (1.0 - self.grad_sq(z))
    }

    /// Linearization coefficients of `eps^{-1} L(w)` in rescaled coordinates.
    pub fn lin_coeffs(&self, z: &ZPoint, eps: f64) -> LinPoint {
        let h = self.cov_hessian(z);
        let a = [h[2], -h[1], h[0]];
        let zu = [self.ginv[0] * z.z1 + self.ginv[1] * z.z2, self.ginv[1] * z.z1 + self.ginv[2] * z.z2];
        let e2 = eps * eps;
        let mut a1 = [0.0; 2];
        for (l, a1l) in a1.iter_mut().enumerate() {
            let contr = a[0] * self.gamma[l][0] + 2.0 * a[1] * self.gamma[l][1] + a[2] * self.gamma[l][2];
            *a1l = -e2 * contr + 2.0 * e2 * self.r1212 * zu[l];
        }
        LinPoint { a11: a[0], a12: a[1], a22: a[2], a1: a1[0], a2: a1[1] }
    }
}

/// Coordinate derivatives of `z` in the `y` chart at one node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZPoint {
    pub z1: f64,
    pub z2: f64,
    pub z11: f64,
    pub z12: f64,
    pub z22: f64,
}

/// Cofactor matrix `a^ij` and first-order coefficients `a_1^l` at one node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinPoint {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Christoffel symbols, curvature and vanishing order on a grid.
#[derive(Clone, Debug)]
pub struct GeometryCache {
    pub metric: MetricField,
    /// `Gamma^l_ij` fields in the order 1_11, 1_12, 1_22, 2_11, 2_12, 2_22.
    pub gamma: [ScalarField; 6],
    pub k: ScalarField,
    pub r1212: ScalarField,
    pub n: i32,
    pub points: Vec<PointGeometry>,
}

impl GeometryCache {
    pub fn gamma(&self, l: usize, i: usize, j: usize) -> &ScalarField {
        let ij = if i == j { 2 * i } else { 1 };
        &self.gamma[3 * l + ij]
    }

    fn from_points(metric: MetricField, points: Vec<PointGeometry>, vanishing_tol: f64) -> GeometryCache {
        let grid = metric.grid();
        let field = |f: &dyn Fn(&PointGeometry) -> f64| ScalarField {
            grid,
            data: points.iter().map(f).collect(),
        };
        let gamma = [
            field(&|p| p.gamma[0][0]),
            field(&|p| p.gamma[0][1]),
            field(&|p| p.gamma[0][2]),
            field(&|p| p.gamma[1][0]),
            field(&|p| p.gamma[1][1]),
            field(&|p| p.gamma[1][2]),
        ];
        let k = field(&|p| p.k());
        let r1212 = field(&|p| p.r1212);
        let n = vanishing_order(&k, vanishing_tol);
        GeometryCache { metric, gamma, k, r1212, n, points }
    }

    /// Exact geometry from a closed-form source at `y = scale * x`.
    pub fn from_source(source: &dyn MetricSource, grid: Grid, scale: f64) -> Result<GeometryCache> {
        let metric = MetricField::sample(source, grid, scale)?;
        let points = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.point(k);
                PointGeometry::from_jets(&source.jets(scale * x, scale * y, 2))
            })
            .collect();
        Ok(GeometryCache::from_points(metric, points, 1e-6))
    }
}

/// Christoffel symbols and curvature by second-order finite differences of a sampled metric.
///
/// The grid is the `x` grid with `y = eps^2 x`; `eps = 1` differentiates in the grid coordinates.
pub fn christoffel_scaled(g: &MetricField, eps: f64, acc: Accuracy) -> GeometryCache {
    let grid = g.grid();
    let s1 = 1.0 / (eps * eps);
    let s2 = s1 * s1;
    let comps = [&g.g11, &g.g12, &g.g22];
    let ds: Vec<Derivs> = comps.iter().map(|c| Derivs::of(c, acc)).collect();
    let points = (0..grid.len())
        .map(|k| {
            let gv = [g.g11.data[k], g.g12.data[k], g.g22.data[k]];
            let mut dg = [[0.0; 3]; 2];
            let mut ddg = [[0.0; 3]; 3];
            for c in 0..3 {
                dg[0][c] = ds[c].d1.data[k] * s1;
                dg[1][c] = ds[c].d2.data[k] * s1;
                ddg[0][c] = ds[c].d11.data[k] * s2;
                ddg[1][c] = ds[c].d12.data[k] * s2;
                ddg[2][c] = ds[c].d22.data[k] * s2;
            }
            PointGeometry::from_derivs(gv, dg, ddg)
        })
        .collect();
    GeometryCache::from_points(g.clone(), points, 1e-6)
}

/// Christoffel symbols (and curvature) of a metric sampled on the `y` grid.
pub fn christoffel(g: &MetricField) -> GeometryCache {
    christoffel_scaled(g, 1.0, Accuracy::Second)
}

/// Gaussian curvature `K = R_1212 / det g`.
pub fn gauss_curvature(g: &MetricField) -> ScalarField {
    christoffel(g).k
}

/// Largest `N` such that all derivatives of order `<= N` at the origin are below `tol * scale`.
///
/// The scale for order `k` is `max|K| / L^k` with `L` the grid half-width; `-1` when `|K(0)|` exceeds it.
pub fn vanishing_order(k: &ScalarField, tol: f64) -> i32 {
    const CAP: usize = 8;
    let g = k.grid;
    let (i0, j0) = g.origin_index();
    let maxk = k.max_abs().max(f64::MIN_POSITIVE);
    let half = 0.5 * (g.x1 - g.x0).min(g.y1 - g.y0);
    let weights = |n: usize, at: usize, d: usize, h: f64| -> (usize, Vec<f64>) {
        let width = (d + 3).min(n) | 1;
        let start = at.saturating_sub(width / 2).min(n - width);
        let xs: Vec<f64> = (0..width).map(|q| q as f64).collect();
        let w = crate::grid::fd_weights((at - start) as f64, &xs, d);
        (start, w.into_iter().map(|v| v / h.powi(d as i32)).collect())
    };
    for order in 0..=CAP {
        let scale = maxk / half.powi(order as i32);
        for a in 0..=order {
            let b = order - a;
            let (sx, wx) = weights(g.nx, i0, a, g.hx);
            let (sy, wy) = weights(g.ny, j0, b, g.hy);
            let mut v = 0.0;
            for (q, wyq) in wy.iter().enumerate() {
                for (p, wxp) in wx.iter().enumerate() {
                    v += wxp * wyq * k.at(sx + p, sy + q);
                }
            }
            if v.abs() > tol * scale {
                return order as i32 - 1;
            }
        }
    }
    CAP as i32
}

/// Coordinate derivatives of a sampled `z` (in `y` units, `y = eps^2 x`).
pub fn z_points(z: &ScalarField, eps: f64, acc: Accuracy) -> Vec<ZPoint> {
    let d = Derivs::of(z, acc);
    let s1 = 1.0 / (eps * eps);
    let s2 = s1 * s1;
    (0..z.grid.len())
        .map(|k| ZPoint {
            z1: d.d1.data[k] * s1,
            z2: d.d2.data[k] * s1,
            z11: d.d11.data[k] * s2,
            z12: d.d12.data[k] * s2,
            z22: d.d22.data[k] * s2,
        })
        .collect()
}

/// Covariant Hessian `(nabla_11 z, nabla_12 z, nabla_22 z)`.
pub fn cov_hessian(geo: &GeometryCache, z: &ScalarField) -> Result<[ScalarField; 3]> {
    let grid = geo.metric.grid();
    if z.grid != grid {
        return Err(Error::GridMismatch);
    }
    let zp = z_points(z, 1.0, Accuracy::Second);
    let mut out = [ScalarField::zeros(grid), ScalarField::zeros(grid), ScalarField::zeros(grid)];
    for k in 0..grid.len() {
        let h = geo.points[k].cov_hessian(&zp[k]);
        for c in 0..3 {
            out[c].data[k] = h[c];
        }
    }
    Ok(out)
}

/// Darboux residual `Phi = det nabla^2 z - K|g| (1 - |grad z|^2)` for `z` sampled on the `y` grid.
pub fn darboux_residual(geo: &GeometryCache, z: &ScalarField) -> Result<ScalarField> {
    let grid = geo.metric.grid();
    if z.grid != grid {
        return Err(Error::GridMismatch);
    }
    let zp = z_points(z, 1.0, Accuracy::Second);
    Ok(ScalarField { grid, data: (0..grid.len()).map(|k| geo.points[k].phi(&zp[k])).collect() })
}

/// Fields of `a^ij` and `a_1^l`.
#[derive(Clone, Debug)]
pub struct LinCoeffs {
    pub a11: ScalarField,
    pub a12: ScalarField,
    pub a22: ScalarField,
    pub a1: ScalarField,
    pub a2: ScalarField,
}

impl LinCoeffs {
    pub fn from_points(grid: Grid, pts: &[LinPoint]) -> LinCoeffs {
        let f = |s: &dyn Fn(&LinPoint) -> f64| ScalarField { grid, data: pts.iter().map(s).collect() };
        LinCoeffs { a11: f(&|p| p.a11), a12: f(&|p| p.a12), a22: f(&|p| p.a22), a1: f(&|p| p.a1), a2: f(&|p| p.a2) }
    }

    /// `a^ij u_ij + a_1^l u_l` with `x`-derivatives of `u`.
    pub fn apply(&self, u: &ScalarField, acc: Accuracy) -> ScalarField {
        let d = Derivs::of(u, acc);
        let grid = u.grid;
        ScalarField {
            grid,
            data: (0..grid.len())
                .map(|k| {
                    self.a11.data[k] * d.d11.data[k]
                        + 2.0 * self.a12.data[k] * d.d12.data[k]
                        + self.a22.data[k] * d.d22.data[k]
                        + self.a1.data[k] * d.d1.data[k]
                        + self.a2.data[k] * d.d2.data[k]
                })
                .collect(),
        }
    }
}

/// Linearization coefficients at `z` sampled on the `x` grid (`y = eps^2 x`).
pub fn linearization_coeffs(geo: &GeometryCache, z: &ScalarField, eps: f64) -> Result<LinCoeffs> {
    let grid = geo.metric.grid();
    if z.grid != grid {
        return Err(Error::GridMismatch);
    }
    let zp = z_points(z, eps, Accuracy::Second);
    let pts: Vec<LinPoint> = (0..grid.len()).map(|k| geo.points[k].lin_coeffs(&zp[k], eps)).collect();
    Ok(LinCoeffs::from_points(grid, &pts))
}

/// `eps^{-1} L(w) u` at `z = z0 + eps^5 w`, with `z` supplied as the sampled total.
pub fn apply_linearization(geo: &GeometryCache, z: &ScalarField, u: &ScalarField, eps: f64) -> Result<ScalarField> {
    z.check_same(u)?;
    Ok(linearization_coeffs(geo, z, eps)?.apply(u, Accuracy::Second))
}

/// Darboux residual in rescaled coordinates for `z = z0 + eps^5 w`, with `z0` a polynomial in `y`
/// evaluated exactly and `w` differentiated on the `x` grid.
pub struct RescaledDarboux {
    pub grid: Grid,
    pub eps: f64,
    pub geo: Vec<PointGeometry>,
    pub z0: Vec<ZPoint>,
    pub acc: Accuracy,
    /// `Phi(z0)` from its Taylor series, when available. The residual is then evaluated as
    /// `Phi(z0) + (Phi(z) - Phi(z0))` with the difference expanded algebraically.
    pub phi0: Option<Vec<f64>>,
}

impl RescaledDarboux {
    /// Geometry from a closed-form source at `y = eps^2 x` and `z0` polynomial derivatives.
    pub fn new(source: &dyn MetricSource, z0: &PolyJet, grid: Grid, eps: f64, acc: Accuracy) -> RescaledDarboux {
        let e2 = eps * eps;
        let d1 = z0.dx();
        let d2 = z0.dy();
        let (d11, d12, d22) = (d1.dx(), d1.dy(), d2.dy());
        let mut geo = Vec::with_capacity(grid.len());
        let mut zs = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let (x, y) = grid.point(k);
            let (p, q) = (e2 * x, e2 * y);
            geo.push(PointGeometry::from_jets(&source.jets(p, q, 2)));
            zs.push(ZPoint { z1: d1.eval(p, q), z2: d2.eval(p, q), z11: d11.eval(p, q), z12: d12.eval(p, q), z22: d22.eval(p, q) });
        }
        RescaledDarboux { grid, eps, geo, z0: zs, acc, phi0: None }
    }

    /// As `new`, with `Phi(z0)` taken from a Taylor series in `y` (see `seed::residual_series`).
    pub fn with_series(
        source: &dyn MetricSource,
        z0: &PolyJet,
        grid: Grid,
        eps: f64,
        acc: Accuracy,
        series: &Jet,
    ) -> RescaledDarboux {
        let mut p = RescaledDarboux::new(source, z0, grid, eps, acc);
        let e2 = eps * eps;
        p.phi0 = Some(
            (0..grid.len())
                .map(|k| {
                    let (x, y) = grid.point(k);
                    series.eval(e2 * x, e2 * y)
                })
                .collect(),
        );
        p
    }

    /// `y`-derivatives of `eps^5 u`.
    pub fn increment_points(&self, u: &ScalarField) -> Vec<ZPoint> {
        let e = self.eps;
        let (c1, c2) = (e * e * e, e);
        let d = Derivs::of(u, self.acc);
        (0..self.grid.len())
            .map(|k| ZPoint {
                z1: c1 * d.d1.data[k],
                z2: c1 * d.d2.data[k],
                z11: c2 * d.d11.data[k],
                z12: c2 * d.d12.data[k],
                z22: c2 * d.d22.data[k],
            })
            .collect()
    }

    /// `Phi(z0 + eps^5 w) - Phi(z0)`, expanded so that no O(1) terms cancel.
    pub fn residual_increment(&self, w: &ScalarField) -> ScalarField {
        let dz = self.increment_points(w);
        let data = (0..self.grid.len())
            .map(|k| {
                let geo = &self.geo[k];
                let (z, d) = (&self.z0[k], &dz[k]);
                let h = geo.cov_hessian(z);
                let dh = geo.cov_hessian(d);
                let ddet = h[0] * dh[2] + dh[0] * h[2] + dh[0] * dh[2] - 2.0 * h[1] * dh[1] - dh[1] * dh[1];
                let gi = &geo.ginv;
                let cross = gi[0] * z.z1 * d.z1 + gi[1] * (z.z1 * d.z2 + z.z2 * d.z1) + gi[2] * z.z2 * d.z2;
                ddet + geo.r1212 * (2.0 * cross + geo.grad_sq(d))
            })
            .collect();
        ScalarField { grid: self.grid, data }
    }

    /// Quadratic remainder `Phi(w + u) - Phi(w) - L(w)u`; `Phi` is quadratic in `z`, so this is
    /// independent of `w`.
    pub fn quadratic(&self, u: &ScalarField) -> ScalarField {
        let dz = self.increment_points(u);
        let data = (0..self.grid.len())
            .map(|k| {
                let geo = &self.geo[k];
                let dh = geo.cov_hessian(&dz[k]);
                dh[0] * dh[2] - dh[1] * dh[1] + geo.r1212 * geo.grad_sq(&dz[k])
            })
            .collect();
        ScalarField { grid: self.grid, data }
    }

    /// Total `z` derivatives in `y` units.
    pub fn z_points(&self, w: &ScalarField) -> Vec<ZPoint> {
        let e = self.eps;
        let (c1, c2) = (e * e * e, e);
        let d = Derivs::of(w, self.acc);
        (0..self.grid.len())
            .map(|k| {
                let z = &self.z0[k];
                ZPoint {
                    z1: z.z1 + c1 * d.d1.data[k],
                    z2: z.z2 + c1 * d.d2.data[k],
                    z11: z.z11 + c2 * d.d11.data[k],
                    z12: z.z12 + c2 * d.d12.data[k],
                    z22: z.z22 + c2 * d.d22.data[k],
                }
            })
            .collect()
    }

    pub fn residual(&self, w: &ScalarField) -> ScalarField {
        if let Some(p0) = &self.phi0 {
            let mut r = self.residual_increment(w);
            for (a, b) in r.data.iter_mut().zip(p0) {
                *a += b;
            }
            return r;
        }
        let zp = self.z_points(w);
        ScalarField { grid: self.grid, data: (0..self.grid.len()).map(|k| self.geo[k].phi(&zp[k])).collect() }
    }

    pub fn coeffs(&self, w: &ScalarField) -> Vec<LinPoint> {
        let zp = self.z_points(w);
        (0..self.grid.len()).map(|k| self.geo[k].lin_coeffs(&zp[k], self.eps)).collect()
    }

    pub fn lin_coeffs(&self, w: &ScalarField) -> LinCoeffs {
        LinCoeffs::from_points(self.grid, &self.coeffs(w))
    }

    /// `eps^{-1} L(w) u`.
    pub fn apply_linearization(&self, w: &ScalarField, u: &ScalarField) -> ScalarField {
        self.lin_coeffs(w).apply(u, self.acc)
    }

    pub fn k_field(&self) -> ScalarField {
        ScalarField { grid: self.grid, data: self.geo.iter().map(|p| p.k()).collect() }
    }
}

/// Derivative helper shared with other modules.
pub fn d1(f: &ScalarField, axis: Axis, acc: Accuracy) -> ScalarField {
    diff_axis(f, axis, 1, acc)
}
