//! Sector decomposition by the sign of K, linear sector normalization, the
//! characteristic coordinates `xi` and the canonical and polar coefficients.

use crate::error::{Error, Result};
use crate::grid::{Accuracy, Axis, Derivs, Grid, ScalarField, diff_axis};
use crate::jet::PolyJet;
use crate::metric::{ClosedMetric, RescaledDarboux};
use crate::par::par_map;
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SectorKind {
    Elliptic,
    Hyperbolic,
}

/// One zero curve of K through the origin.
#[derive(Clone, Debug, Serialize)]
pub struct ZeroCurve {
    pub id: String,
    /// Chain ordered from one end through the origin to the other.
    pub points: Vec<[f64; 2]>,
    /// Unit tangent at the origin.
    pub tangent: [f64; 2],
    /// Largest slope of the curve measured as a graph over its tangent line.
    pub lipschitz: f64,
}

/// Half-branch of a zero curve leaving the origin.
#[derive(Clone, Debug, Serialize)]
pub struct Ray {
    /// Extrapolated angle at the origin.
    pub angle: f64,
    /// Crossing points on successive rings, innermost first.
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ZeroSet {
    /// Rays sorted by origin angle in `[0, 2 pi)`.
    pub rays: Vec<Ray>,
    pub curves: Vec<ZeroCurve>,
    /// Angle between the two tangent lines, in `(0, pi/2]`.
    pub angle: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroSetOptions {
    pub rings: usize,
    pub samples: usize,
    /// Values below `zero_tol * max|K|` on a ring count as zero.
    pub zero_tol: f64,
    pub min_angle: f64,
}

impl Default for ZeroSetOptions {
    fn default() -> Self {
        ZeroSetOptions { rings: 24, samples: 1440, zero_tol: 1e-10, min_angle: 0.1 }
    }
}

fn wrap(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

/// Signed circular distance `b - a` in `(-pi, pi]`.
fn ang_diff(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Sign-change angles of `f` on a circle of radius `r`.
fn ring_crossings(k: &ScalarField, r: f64, samples: usize, zero_tol: f64) -> Vec<f64> {
    let vals: Vec<(f64, f64)> = (0..samples)
        .map(|s| {
            let a = TAU * s as f64 / samples as f64;
            (a, k.interp_bilinear(r * a.cos(), r * a.sin()))
        })
        .collect();
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.1.abs()));
    if scale == 0.0 {
        return vec![];
    }
    let tol = zero_tol * scale;
    let nz: Vec<(f64, f64)> = vals.into_iter().filter(|v| v.1.abs() > tol).collect();
    let mut out = Vec::new();
    for i in 0..nz.len() {
        let (a0, v0) = nz[i];
        let (a1, v1) = nz[(i + 1) % nz.len()];
        if v0.signum() != v1.signum() {
            let span = (a1 - a0).rem_euclid(TAU);
            out.push(wrap(a0 + span * v0 / (v0 - v1)));
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// March the sign-change set of `K` outward from the origin on concentric rings.
pub fn detect_zero_set(k: &ScalarField, opts: &ZeroSetOptions) -> Result<ZeroSet> {
    let g = k.grid;
    let reach = [-g.x0, g.x1, -g.y0, g.y1].into_iter().fold(f64::INFINITY, f64::min);
    if reach <= 0.0 {
        return Err(Error::Topology("origin lies on the grid boundary".into()));
    }
    let r_max = 0.9 * reach;
    let r_min = (3.0 * g.h()).max(r_max / 40.0);
    let radii: Vec<f64> = (0..opts.rings)
        .map(|q| r_min + (r_max - r_min) * q as f64 / (opts.rings - 1).max(1) as f64)
        .collect();
    let rings: Vec<Vec<f64>> = radii.iter().map(|&r| ring_crossings(k, r, opts.samples, opts.zero_tol)).collect();
    if rings.iter().all(|c| c.is_empty()) {
        return Err(Error::Topology("K has no sign change near the origin".into()));
    }
    let inner = opts.rings.div_ceil(2);
    if let Some(bad) = rings[..inner].iter().find(|c| c.len() != 4) {
        return Err(Error::Topology(format!(
            "expected two zero curves (4 sign changes per ring), found {} sign changes",
            bad.len()
        )));
    }
    // Link crossings ring to ring by nearest angle.
    let mut chains: Vec<Vec<(f64, f64)>> = rings[0].iter().map(|&a| vec![(radii[0], a)]).collect();
    for (q, ring) in rings.iter().enumerate().skip(1) {
        if ring.len() != 4 {
            break;
        }
        let mut used = [false; 4];
        let mut next = [0.0; 4];
        for (c, chain) in chains.iter().enumerate() {
            let last = chain.last().unwrap().1;
            let (best, _) = ring
                .iter()
                .enumerate()
                .filter(|(m, _)| !used[*m])
                .map(|(m, &a)| (m, ang_diff(last, a).abs()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            used[best] = true;
            next[c] = ring[best];
        }
        for (c, chain) in chains.iter_mut().enumerate() {
            chain.push((radii[q], next[c]));
        }
    }
    let rays: Vec<Ray> = chains
        .iter()
        .map(|chain| {
            // Linear fit of the unwrapped angle against r on the innermost rings, intercept at r = 0.
            let m = chain.len().min(4);
            let base = chain[0].1;
            let pts: Vec<(f64, f64)> = chain[..m].iter().map(|&(r, a)| (r, base + ang_diff(base, a))).collect();
            let angle = if m >= 2 {
                let n = m as f64;
                let mr = pts.iter().map(|p| p.0).sum::<f64>() / n;
                let ma = pts.iter().map(|p| p.1).sum::<f64>() / n;
                let sxy: f64 = pts.iter().map(|p| (p.0 - mr) * (p.1 - ma)).sum();
                let sxx: f64 = pts.iter().map(|p| (p.0 - mr).powi(2)).sum();
                wrap(ma - sxy / sxx * mr)
            } else {
                wrap(base)
            };
            Ray { angle, points: chain.iter().map(|&(r, a)| [r * a.cos(), r * a.sin()]).collect() }
        })
        .collect();
    let mut rays = rays;
    rays.sort_by(|a, b| a.angle.total_cmp(&b.angle));
    // Opposite rays pair into curves: (0, 2) and (1, 3).
    for (a, b) in [(0, 2), (1, 3)] {
        let off = (ang_diff(rays[a].angle, rays[b].angle).abs() - PI).abs();
        if off > 0.35 {
            return Err(Error::Topology(format!("zero curve has a corner at the origin ({off:.3} rad)")));
        }
    }
    let curves: Vec<ZeroCurve> = [(0, 2), (1, 3)]
        .iter()
        .enumerate()
        .map(|(n, &(a, b))| {
            let t = [rays[a].angle.cos(), rays[a].angle.sin()];
            let mut points: Vec<[f64; 2]> = rays[b].points.iter().rev().copied().collect();
            points.push([0.0, 0.0]);
            points.extend(rays[a].points.iter().copied());
            let mut lip = 0.0f64;
            for w in points.windows(2) {
                let dt = (w[1][0] - w[0][0]) * t[0] + (w[1][1] - w[0][1]) * t[1];
                let dn = -(w[1][0] - w[0][0]) * t[1] + (w[1][1] - w[0][1]) * t[0];
                if dt.abs() > 1e-14 {
                    lip = lip.max((dn / dt).abs());
                }
            }
            ZeroCurve { id: format!("gamma{}", n + 1), points, tangent: t, lipschitz: lip }
        })
        .collect();
    let d = ang_diff(rays[0].angle, rays[1].angle).abs().rem_euclid(PI);
    let angle = d.min(PI - d);
    if angle < opts.min_angle {
        return Err(Error::Transversality { angle, min: opts.min_angle });
    }
    Ok(ZeroSet { rays, curves, angle })
}

#[derive(Clone, Debug, Serialize)]
pub struct SectorInfo {
    /// `E1`, `E2`, `H1` or `H2`.
    pub label: String,
    pub kind: SectorKind,
    /// Sign of K inside: `+1` elliptic, `-1` hyperbolic.
    pub sign: i8,
    /// Counter-clockwise bounding ray angles in the rotated chart, `start < end`.
    pub start: f64,
    pub end: f64,
    /// Ids of the bounding curves (start side, end side).
    pub bounding: [String; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionDecomposition {
    pub zero_set: ZeroSet,
    /// Rotation angle `theta0`: original chart `y = R(theta0) x`.
    pub rotation: f64,
    pub sectors: Vec<SectorInfo>,
    pub elliptic_count: usize,
    pub hyperbolic_count: usize,
}

impl RegionDecomposition {
    pub fn rotation_matrix(&self) -> [[f64; 2]; 2] {
        rotation_matrix(self.rotation)
    }

    pub fn sector(&self, label: &str) -> Option<&SectorInfo> {
        self.sectors.iter().find(|s| s.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }
}

pub fn rotation_matrix(t: f64) -> [[f64; 2]; 2] {
    let (s, c) = t.sin_cos();
    [[c, -s], [s, c]]
}

/// Split the neighbourhood of the origin into four sectors of alternating sign and choose the
/// rotation that puts the bisector of the first hyperbolic sector on the positive second axis.
pub fn decompose(k: &ScalarField, opts: &ZeroSetOptions) -> Result<RegionDecomposition> {
    let zs = detect_zero_set(k, opts)?;
    let probe_r = zs.rays.iter().map(|r| r.points.first().map_or(0.0, |p| p[0].hypot(p[1]))).fold(0.0, f64::max);
    let mut raw = Vec::new();
    for s in 0..4 {
        let a0 = zs.rays[s].angle;
        let a1 = zs.rays[(s + 1) % 4].angle;
        let span = (a1 - a0).rem_euclid(TAU);
        // Sample the sign at several radii along the bisector of the tangent cone.
        let mid = a0 + span / 2.0;
        let mut acc = 0.0;
        for q in 1..=4 {
            let r = probe_r * q as f64;
            acc += k.interp_bilinear(r * mid.cos(), r * mid.sin()).signum();
        }
        let sign: i8 = if acc > 0.0 { 1 } else { -1 };
        raw.push((a0, span, mid, sign, s));
    }
    for s in 0..4 {
        if raw[s].3 == raw[(s + 1) % 4].3 {
            return Err(Error::Topology("sector signs do not alternate around the origin".into()));
        }
    }
    let h1 = raw
        .iter()
        .filter(|r| r.3 < 0)
        .min_by(|a, b| wrap(a.2).total_cmp(&wrap(b.2)))
        .ok_or_else(|| Error::Topology("no hyperbolic sector".into()))?;
    let rotation = wrap(h1.2) - FRAC_PI_2;
    let curve_of = |ray: usize| if ray % 2 == 0 { "gamma1" } else { "gamma2" };
    let mut sectors: Vec<SectorInfo> = raw
        .iter()
        .map(|&(a0, span, mid, sign, s)| {
            let start = wrap(a0 - rotation);
            let m = wrap(mid - rotation);
            let start = if start > m { start - TAU } else { start };
            let kind = if sign > 0 { SectorKind::Elliptic } else { SectorKind::Hyperbolic };
            let label = match kind {
                SectorKind::Hyperbolic => {
                    if (m - FRAC_PI_2).abs() < 1e-9 {
                        "H1"
                    } else {
                        "H2"
                    }
                }
                SectorKind::Elliptic => {
                    if !(FRAC_PI_2..3.0 * FRAC_PI_2).contains(&m) {
                        "E1"
                    } else {
                        "E2"
                    }
                }
            };
            SectorInfo {
                label: label.into(),
                kind,
                sign,
                start,
                end: start + span,
                bounding: [curve_of(s).into(), curve_of((s + 1) % 4).into()],
            }
        })
        .collect();
    sectors.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(RegionDecomposition { zero_set: zs, rotation, sectors, elliptic_count: 2, hyperbolic_count: 2 })
}

/// Linear change `x = m xbar` taking the normal-form sector onto a given sector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SectorMap {
    pub m: [[f64; 2]; 2],
    pub inv: [[f64; 2]; 2],
    /// True when `x^1` depends on `xbar^1` only, which keeps `a22 > 0` and `a12 = O(eps^2)`.
    pub lower_triangular: bool,
}

impl SectorMap {
    fn from_matrix(m: [[f64; 2]; 2]) -> Result<SectorMap> {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-12 {
            return Err(Error::DegenerateCone);
        }
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        Ok(SectorMap { m, inv, lower_triangular: m[0][1] == 0.0 })
    }

    pub fn identity() -> SectorMap {
        SectorMap { m: [[1.0, 0.0], [0.0, 1.0]], inv: [[1.0, 0.0], [0.0, 1.0]], lower_triangular: true }
    }

    pub fn apply(&self, xb: [f64; 2]) -> [f64; 2] {
        [self.m[0][0] * xb[0] + self.m[0][1] * xb[1], self.m[1][0] * xb[0] + self.m[1][1] * xb[1]]
    }

    pub fn apply_inv(&self, x: [f64; 2]) -> [f64; 2] {
        [self.inv[0][0] * x[0] + self.inv[0][1] * x[1], self.inv[1][0] * x[0] + self.inv[1][1] * x[1]]
    }
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn compose(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    mat_mul(a, b)
}

/// Map from the normal form (`0 < xb2 < xb1` elliptic, `|xb1| < xb2` hyperbolic) onto the cone
/// spanned by ray directions at angles `start < end`.
///
/// The lower-triangular form `x1 = a xb1, x2 = b xb1 + c xb2` is used whenever the rays allow
/// it, otherwise a general linear map.
pub fn sector_normalize(kind: SectorKind, start: f64, end: f64) -> Result<SectorMap> {
    let span = end - start;
    if !(span > 1e-6 && span < PI - 1e-6) {
        return Err(Error::DegenerateCone);
    }
    let d0 = [start.cos(), start.sin()];
    let d1 = [end.cos(), end.sin()];
    let slope = |d: [f64; 2]| d[1] / d[0];
    let tiny = 1e-9;
    match kind {
        SectorKind::Elliptic => {
            // Need both rays on one side of the second axis.
            if d0[0].abs() > tiny && d1[0].abs() > tiny && d0[0].signum() == d1[0].signum() {
                let a = d0[0].signum();
                for (da, db) in [(d0, d1), (d1, d0)] {
                    let b = a * slope(da);
                    let c = a * (slope(db) - slope(da));
                    if c > 0.0 {
                        return SectorMap::from_matrix([[a, 0.0], [b, c]]);
                    }
                }
            }
            // General: columns chosen so that (1,0) -> d0 and (1,1) -> d1.
            SectorMap::from_matrix([[d0[0], d1[0] - d0[0]], [d0[1], d1[1] - d0[1]]])
        }
        SectorKind::Hyperbolic => {
            // (1,1) -> right ray, (-1,1) -> left ray, with x1-components of opposite sign.
            if d0[0].abs() > tiny && d1[0].abs() > tiny && d0[0].signum() != d1[0].signum() {
                let (dr, dl) = if d0[0] > 0.0 { (d0, d1) } else { (d1, d0) };
                let c = (slope(dr) - slope(dl)) / 2.0;
                let b = (slope(dr) + slope(dl)) / 2.0;
                return SectorMap::from_matrix([[1.0, 0.0], [b, c]]);
            }
            // General: (1,1) -> d0, (-1,1) -> d1.
            let m = [[(d0[0] - d1[0]) / 2.0, (d0[0] + d1[0]) / 2.0], [(d0[1] - d1[1]) / 2.0, (d0[1] + d1[1]) / 2.0]];
            SectorMap::from_matrix(m)
        }
    }
}

/// Bounding box and normal-form domain of a sector in `xbar` coordinates.
#[derive(Clone, Copy, Debug)]
pub struct SectorDomain {
    pub kind: SectorKind,
    pub sigma: f64,
    pub grid: Grid,
}

impl SectorDomain {
    /// Elliptic box `[0, sigma]^2` with `n x n` nodes, hyperbolic box `[-sigma, sigma] x [0, sigma]`
    /// with `(2n - 1) x n` nodes, so both have spacing `sigma / (n - 1)` in each direction.
    pub fn new(kind: SectorKind, sigma: f64, n: usize) -> Result<SectorDomain> {
        let grid = match kind {
            SectorKind::Elliptic => Grid::new(0.0, sigma, 0.0, sigma, n, n)?,
            SectorKind::Hyperbolic => Grid::new(-sigma, sigma, 0.0, sigma, 2 * n - 1, n)?,
        };
        Ok(SectorDomain { kind, sigma, grid })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let e = 1e-9 * self.sigma;
        match self.kind {
            SectorKind::Elliptic => y >= -e && y <= x + e && x <= self.sigma + e,
            SectorKind::Hyperbolic => x.abs() <= y + e && y <= self.sigma + e,
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.grid.len())
            .map(|k| {
                let (x, y) = self.grid.point(k);
                self.contains(x, y)
            })
            .collect()
    }
}

/// The first characteristic coordinate `xi^1` (the second is `xi^2 = x^2`).
#[derive(Clone, Debug)]
pub struct XiChart {
    pub kind: SectorKind,
    pub delta: f64,
    pub xi1: ScalarField,
    /// Nodes whose characteristic left the box before reaching the data curve.
    pub flagged: Vec<usize>,
    /// Largest radius with no flagged node inside the sector.
    pub sigma_eff: f64,
    /// Minimum of `d xi^1 / d x^1` over the sector (the Jacobian determinant).
    pub min_jacobian: f64,
    /// `|h - |.||` in C^1 for the image of the sector boundary (hyperbolic), else 0.
    pub boundary_dev: f64,
}

fn rk4(beta: &ScalarField, x1: f64, x2: f64, dt: f64, clamp: &impl Fn(f64, f64) -> (f64, f64)) -> f64 {
    let f = |a: f64, b: f64| {
        let (p, q) = clamp(a, b);
        beta.interp_cubic(p, q)
    };
    let k1 = f(x1, x2);
    let k2 = f(x1 + 0.5 * dt * k1, x2 + 0.5 * dt);
    let k3 = f(x1 + 0.5 * dt * k2, x2 + 0.5 * dt);
    let k4 = f(x1 + dt * k3, x2 + dt);
    x1 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrate the characteristics `dx^1/dx^2 = a12/a22` from every node to the data curve.
///
/// Elliptic data `xi^1 = x^1 cot(delta)` on the diagonal, hyperbolic data `xi^1 = x^1` on `x^2 = 0`.
/// Coefficients are interpolated with clamped cubic stencils, step `h/2`.
pub fn solve_xi(a12: &ScalarField, a22: &ScalarField, kind: SectorKind, delta: f64) -> Result<XiChart> {
    a12.check_same(a22)?;
    let g = a12.grid;
    if a22.data.iter().any(|&v| v <= 0.0) {
        return Err(Error::Consistency("a22 must be positive on the sector".into()));
    }
    let beta = a12.zip(a22, |p, q| p / q);
    let dt = 0.5 * g.hy.min(g.hx);
    // Characteristics may leave the box by a few cells; coefficients there are cubic
    // extrapolations. Beyond that margin they are clamped and the node is flagged.
    let margin = 4.0 * g.h();
    let (lo, hi) = (g.x0 - margin, g.x1 + margin);
    let clamp = |a: f64, b: f64| (a.clamp(lo, hi), b.clamp(g.y0 - margin, g.y1 + margin));
    let cot = 1.0 / delta.tan();
    let res: Vec<(f64, bool)> = par_map(g.len(), |k| {
        let (mut x1, mut x2) = g.point(k);
        let mut left = false;
        match kind {
            SectorKind::Hyperbolic => {
                let n = (x2 / dt).ceil() as usize;
                if n > 0 {
                    let step = -x2 / n as f64;
                    for _ in 0..n {
                        x1 = rk4(&beta, x1, x2, step, &clamp);
                        x2 += step;
                        left |= x1 < lo || x1 > hi;
                    }
                }
                (x1, left)
            }
            SectorKind::Elliptic => {
                let f0 = x2 - x1;
                if f0 == 0.0 {
                    return (x1 * cot, false);
                }
                let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
                let step = dir * dt;
                let mut guard = 0;
                loop {
                    let nx1 = rk4(&beta, x1, x2, step, &clamp);
                    let nx2 = x2 + step;
                    let fa = x2 - x1;
                    let fb = nx2 - nx1;
                    if fb == 0.0 {
                        x1 = nx1;
                        break;
                    }
                    if fa.signum() != fb.signum() {
                        // Secant on the sub-step length.
                        let (mut s0, mut g0) = (0.0, fa);
                        let (mut s1, mut g1) = (step, fb);
                        let mut xs = nx1;
                        for _ in 0..8 {
                            let s = s1 - g1 * (s1 - s0) / (g1 - g0);
                            xs = rk4(&beta, x1, x2, s, &clamp);
                            let gs = x2 + s - xs;
                            s0 = s1;
                            g0 = g1;
                            s1 = s;
                            g1 = gs;
                            if gs.abs() < 1e-15 * (1.0 + x1.abs()) || g1 == g0 {
                                break;
                            }
                        }
                        x1 = xs;
                        break;
                    }
                    x1 = nx1;
                    x2 = nx2;
                    left |= x1 < lo || x1 > hi || x2 < g.y0 - margin || x2 > g.y1 + margin;
                    guard += 1;
                    if guard > 8 * (g.nx + g.ny) {
                        left = true;
                        break;
                    }
                }
                (x1 * cot, left)
            }
        }
    });
    let xi1 = ScalarField { grid: g, data: res.iter().map(|r| r.0).collect() };
    let dom = SectorDomain { kind, sigma: g.x1, grid: g };
    let flagged: Vec<usize> = (0..g.len()).filter(|&k| res[k].1).collect();
    let sigma_eff = flagged
        .iter()
        .filter(|&&k| {
            let (x, y) = g.point(k);
            dom.contains(x, y)
        })
        .map(|&k| {
            let (x, y) = g.point(k);
            x.abs().max(y)
        })
        .fold(g.x1, f64::min);
    let j = diff_axis(&xi1, Axis::X, 1, Accuracy::Fourth);
    let min_jacobian = (0..g.len())
        .filter(|&k| {
            let (x, y) = g.point(k);
            dom.contains(x, y)
        })
        .map(|k| j.data[k])
        .fold(f64::INFINITY, f64::min);
    let boundary_dev = if kind == SectorKind::Hyperbolic { boundary_deviation(&xi1) } else { 0.0 };
    Ok(XiChart { kind, delta, xi1, flagged, sigma_eff, min_jacobian, boundary_dev })
}

impl XiChart {
    /// Sector nodes at least `margin` grid steps inside the reduced radius `sigma_eff`.
    pub fn retained(&self, mask: &[bool], margin: f64) -> Vec<bool> {
        let g = self.xi1.grid;
        let cut = self.sigma_eff - margin * g.h();
        (0..g.len())
            .map(|k| {
                let (x, y) = g.point(k);
                mask[k] && x.abs().max(y) <= cut + 1e-12
            })
            .collect()
    }
}

/// `|h(xi) - |xi||_{C^1}` where `xi^2 = h(xi^1)` traces the image of `x^2 = |x^1|`.
fn boundary_deviation(xi1: &ScalarField) -> f64 {
    let g = xi1.grid;
    let n = 2 * g.nx;
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|s| {
            let t = g.x0 * (1.0 - s as f64 / n as f64) + g.x1 * (s as f64 / n as f64);
            let t = t.clamp(-g.y1, g.y1);
            (xi1.interp_cubic(t, t.abs()), t.abs())
        })
        .collect();
    let mut dev = 0.0f64;
    for w in pts.windows(2) {
        dev = dev.max((w[0].1 - w[0].0.abs()).abs());
        let dxi = w[1].0 - w[0].0;
        if dxi.abs() > 1e-14 {
            let mid = 0.5 * (w[0].0 + w[1].0);
            dev = dev.max(((w[1].1 - w[0].1) / dxi - mid.signum()).abs().min(2.0) * (mid.abs() > 1e-9) as u8 as f64);
        }
    }
    dev
}

/// Coefficients of `L(w)u = d_1(k d_1 u) + d_2^2 u + c d_1 u + d d_2 u` in `xi` coordinates,
/// sampled on the `xbar` grid.
#[derive(Clone, Debug)]
pub struct CanonicalCoeffs {
    pub k: ScalarField,
    /// `c + d_xi1 k`, the full first-order `xi^1` coefficient.
    pub c_dk: ScalarField,
    pub c: ScalarField,
    pub d: ScalarField,
    /// `(a12 xi_1 + a22 xi_2) / a22`, zero up to discretization error.
    pub a412: ScalarField,
    /// `k / K` where `|K| > tol`, NaN elsewhere.
    pub kbar: ScalarField,
    pub a22: ScalarField,
    pub phi: ScalarField,
    /// `d_x1 log(a22 sqrt|g|)`.
    pub log_der: ScalarField,
    pub xi_1: ScalarField,
    pub xi_2: ScalarField,
    pub xi_11: ScalarField,
    pub xi_12: ScalarField,
    pub xi_22: ScalarField,
}

/// Assemble `k`, `c`, `d` from the rescaled problem at `w` and the chart `xi`.
pub fn canonical_coeffs(prob: &RescaledDarboux, w: &ScalarField, chart: &XiChart, k_tol: f64) -> Result<CanonicalCoeffs> {
    let g = prob.grid;
    w.check_same(&chart.xi1)?;
    let e2 = prob.eps * prob.eps;
    let zp = prob.z_points(w);
    let dxi = Derivs::of(&chart.xi1, Accuracy::Fourth);
    let n = g.len();
    let mut out = vec![[0.0f64; 8]; n];
    let mut a22f = vec![0.0; n];
    let mut lsq = vec![0.0; n];
    for kk in 0..n {
        let geo = &prob.geo[kk];
        let z = &zp[kk];
        let lp = geo.lin_coeffs(z, prob.eps);
        let h = geo.cov_hessian(z);
        let kgg = geo.r1212 * (1.0 - geo.grad_sq(z));
        let phi = h[0] * h[2] - h[1] * h[1] - kgg;
        let a22 = lp.a22;
        let (x1, x2) = (dxi.d1.data[kk], dxi.d2.data[kk]);
        let (x11, x12, x22) = (dxi.d11.data[kk], dxi.d12.data[kk], dxi.d22.data[kk]);
        let a3_11 = (kgg + h[1] * h[1]) / (a22 * a22);
        let a3_12 = lp.a12 / a22;
        let a3_1 = lp.a1 / a22;
        let a3_2 = lp.a2 / a22;
        let k = x1 * x1 * kgg / (a22 * a22);
        let a4_1 = a3_11 * x11 + 2.0 * a3_12 * x12 + x22 + a3_1 * x1 + a3_2 * x2;
        let a412 = (lp.a12 * x1 + a22 * x2) / a22;
        // d_x1 log sqrt|g| = eps^2 Gamma^j_{j1}; the a22 part is differenced below.
        let lg = e2 * (geo.gamma[0][0] + geo.gamma[1][1]);
        out[kk] = [k, a4_1, a3_2, a412, phi, lg, geo.k(), x1];
        a22f[kk] = a22;
        lsq[kk] = lg;
    }
    let field = |c: usize| ScalarField { grid: g, data: out.iter().map(|r| r[c]).collect() };
    let a22 = ScalarField { grid: g, data: a22f };
    let dlog_a22 = diff_axis(&a22, Axis::X, 1, Accuracy::Fourth).zip(&a22, |d, a| d / a);
    let log_der = ScalarField { grid: g, data: lsq }.add(&dlog_a22);
    let k = field(0);
    let phi = if prob.phi0.is_some() { prob.residual(w) } else { field(4) };
    let c_dk = ScalarField {
        grid: g,
        data: (0..n)
            .map(|i| {
                let a = a22.data[i];
                out[i][1] + log_der.data[i] * phi.data[i] * out[i][7] / (a * a)
            })
            .collect(),
    };
    let dk = diff_axis(&k, Axis::X, 1, Accuracy::Fourth).zip(&dxi.d1, |d, x| d / x);
    let c = c_dk.sub(&dk);
    let kbar = ScalarField {
        grid: g,
        data: out.iter().map(|r| if r[6].abs() > k_tol { r[0] / r[6] } else { f64::NAN }).collect(),
    };
    Ok(CanonicalCoeffs {
        k,
        c_dk,
        c,
        d: field(2),
        a412: field(3),
        kbar,
        a22,
        phi,
        log_der,
        xi_1: dxi.d1,
        xi_2: dxi.d2,
        xi_11: dxi.d11,
        xi_12: dxi.d12,
        xi_22: dxi.d22,
    })
}

impl CanonicalCoeffs {
    /// Smallest `kbar` on the masked nodes where it is defined, with its location.
    pub fn min_kbar(&self, mask: &[bool]) -> Option<(f64, f64, f64)> {
        let g = self.kbar.grid;
        (0..g.len())
            .filter(|&k| mask[k] && self.kbar.data[k].is_finite())
            .map(|k| {
                let (x, y) = g.point(k);
                (self.kbar.data[k], x, y)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Error when `kbar <= 1/2` anywhere on the mask.
    pub fn check_kbar(&self, mask: &[bool]) -> Result<()> {
        match self.min_kbar(mask) {
            Some((m, x, y)) if m <= 0.5 => Err(Error::KBar { min: m, x, y }),
            _ => Ok(()),
        }
    }

    /// `L(w)u` evaluated through the chain rule with `u` given on the `xbar` grid.
    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let d = Derivs::of(u, Accuracy::Fourth);
        let g = u.grid;
        ScalarField {
            grid: g,
            data: (0..g.len())
                .map(|i| {
                    let x1 = self.xi_1.data[i];
                    let beta = -self.xi_2.data[i] / x1;
                    // d_xi1 = x1^{-1} d_1, d_xi2 = d_2 + beta d_1.
                    let u1 = d.d1.data[i] / x1;
                    let u2 = d.d2.data[i] + beta * d.d1.data[i];
                    let u11 = (d.d11.data[i] - self.xi_11.data[i] * u1) / (x1 * x1);
                    // d_xi2 d_xi2 u = u_22 + 2 beta u_12 + beta^2 u_11 + (d_xi2 beta) u_1
                    let dbeta2 = {
                        let b2 = -(self.xi_22.data[i] * x1 - self.xi_2.data[i] * self.xi_12.data[i]) / (x1 * x1);
                        let b1 = -(self.xi_12.data[i] * x1 - self.xi_2.data[i] * self.xi_11.data[i]) / (x1 * x1);
                        b2 + beta * b1
                    };
                    let u22 = d.d22.data[i] + 2.0 * beta * d.d12.data[i] + beta * beta * d.d11.data[i] + dbeta2 * d.d1.data[i];
                    self.k.data[i] * u11 + u22 + self.c_dk.data[i] * u1 + self.d.data[i] * u2
                })
                .collect(),
        }
    }

    /// `a22 L(w)u + a22^{-1} Phi(w) [u_11 - d_1 log(a22 sqrt|g|) u_1]` in `xbar` coordinates.
    pub fn reconstruct(&self, u: &ScalarField) -> ScalarField {
        let lu = self.apply(u);
        let d1 = diff_axis(u, Axis::X, 1, Accuracy::Fourth);
        let d11 = diff_axis(u, Axis::X, 2, Accuracy::Fourth);
        ScalarField {
            grid: u.grid,
            data: (0..u.grid.len())
                .map(|i| {
                    let a = self.a22.data[i];
                    a * lu.data[i] + self.phi.data[i] / a * (d11.data[i] - self.log_der.data[i] * d1.data[i])
                })
                .collect(),
        }
    }
}

/// Smooth step: 1 for `r < sigma/2`, 0 for `r > sigma`.
pub fn cutoff(r: f64, sigma: f64) -> f64 {
    let t = (sigma - r) / (0.5 * sigma);
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = f(t);
    let b = f(1.0 - t);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Polar coefficients at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolarPoint {
    pub kk: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Coefficients of `L` in polar coordinates `xi = r (cos t, sin t)`:
/// `L = K u_rr + A u_rt + B u_tt + C u_r + D u_t`. `c_dk` is `c + d_xi1 k`.
pub fn polar_point(k: f64, c_dk: f64, d: f64, r: f64, t: f64) -> PolarPoint {
    let (s, c) = t.sin_cos();
    PolarPoint {
        kk: k * c * c + s * s,
        a: 2.0 * (1.0 - k) * s * c / r,
        b: (k * s * s + c * c) / (r * r),
        c: (k * s * s + c * c) / r + c_dk * c + d * s,
        d: 2.0 * (k - 1.0) * s * c / (r * r) - c_dk * s / r + d * c / r,
    }
}

/// Cut-off coefficients `(phi^2 K, phi A, B, phi C, phi D)`.
pub fn polar_cutoff(p: PolarPoint, r: f64, sigma: f64) -> PolarPoint {
    let f = cutoff(r, sigma);
    PolarPoint { kk: f * f * p.kk, a: f * p.a, b: p.b, c: f * p.c, d: f * p.d }
}

/// Everything needed to iterate on one sector: normal-form domain, pulled-back metric and seed.
pub struct SectorSetup {
    pub info: SectorInfo,
    pub map: SectorMap,
    pub domain: SectorDomain,
    pub mask: Vec<bool>,
    /// Metric in the sector's `ybar` coordinates.
    pub source: ClosedMetric,
    /// Seed in the sector's `ybar` coordinates.
    pub z0: PolyJet,
    pub prob: RescaledDarboux,
}

impl SectorSetup {
    /// `base` and `z0` live in the rotated chart; the sector map is applied on top.
    pub fn new(
        base: &ClosedMetric,
        z0: &PolyJet,
        info: &SectorInfo,
        sigma: f64,
        n: usize,
        eps: f64,
        acc: Accuracy,
    ) -> Result<SectorSetup> {
        let map = sector_normalize(info.kind, info.start, info.end)?;
        let domain = SectorDomain::new(info.kind, sigma, n)?;
        let source = base.pulled_back(map.m);
        let z0 = z0.compose_linear(map.m);
        let prob = RescaledDarboux::new(&source, &z0, domain.grid, eps, acc);
        Ok(SectorSetup { info: info.clone(), map, mask: domain.mask(), domain, source, z0, prob })
    }

    /// As `new`, with `Phi(z0)` taken from its Taylor series through `z0.deg + extra`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_series(
        base: &ClosedMetric,
        z0: &PolyJet,
        info: &SectorInfo,
        sigma: f64,
        n: usize,
        eps: f64,
        acc: Accuracy,
        extra: usize,
    ) -> Result<SectorSetup> {
        let mut st = SectorSetup::new(base, z0, info, sigma, n, eps, acc)?;
        let series = crate::seed::residual_series(&st.source, &st.z0, extra);
        st.prob = RescaledDarboux::with_series(&st.source, &st.z0, st.domain.grid, eps, acc, &series);
        Ok(st)
    }

    /// Rotated-chart `x` of a normal-form point.
    pub fn to_chart(&self, xb: [f64; 2]) -> [f64; 2] {
        self.map.apply(xb)
    }

    pub fn to_sector(&self, x: [f64; 2]) -> [f64; 2] {
        self.map.apply_inv(x)
    }
}
