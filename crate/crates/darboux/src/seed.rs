//! Polynomial approximate solution `z0 = (y^1)^2 / 2 + sum p_n`, built degree by degree so that
//! the Taylor coefficients of `Phi(z0)` vanish through degree `m_star - 2`.

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::jet::{Jet, PolyJet};
use crate::linalg::{least_squares, solve_dense};
use crate::metric::{MetricSource, PointGeometry, ZPoint};

/// Taylor coefficients of `(g11, g12, g22)` at the origin.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub g: [Jet; 3],
}

impl MetricJet {
    pub fn deg(&self) -> usize {
        self.g[0].deg
    }

    pub fn is_spd_at_origin(&self) -> bool {
        let (a, b, c) = (self.g[0].value(), self.g[1].value(), self.g[2].value());
        a > 0.0 && a * c - b * b > 0.0
    }
}

pub fn taylor_metric(source: &dyn MetricSource, order: usize) -> MetricJet {
    MetricJet { g: source.jets(0.0, 0.0, order) }
}

/// Polynomial fit of sampled metric components around the origin.
///
/// Falls back to the closed form (with a warning string) when the fit is ill conditioned.
pub fn taylor_metric_sampled(
    fields: [&ScalarField; 3],
    order: usize,
    fallback: Option<&dyn MetricSource>,
) -> Result<(MetricJet, Option<String>)> {
    let grid = fields[0].grid;
    let (i0, j0) = grid.origin_index();
    let q = order + 2;
    let mut rows = Vec::new();
    let mut rhs = [Vec::new(), Vec::new(), Vec::new()];
    let sx = q as f64 * grid.hx;
    let sy = q as f64 * grid.hy;
    for j in j0.saturating_sub(q)..=(j0 + q).min(grid.ny - 1) {
        for i in i0.saturating_sub(q)..=(i0 + q).min(grid.nx - 1) {
            let (x, y) = (grid.x(i) / sx, grid.y(j) / sy);
            let mut r = Vec::new();
            for t in 0..=order {
                for b in 0..=t {
                    r.push(x.powi((t - b) as i32) * y.powi(b as i32));
                }
            }
            rows.push(r);
            for c in 0..3 {
                rhs[c].push(fields[c].at(i, j));
            }
        }
    }
    let mut out: Vec<Jet> = Vec::new();
    let mut worst = 0.0f64;
    for r in &rhs {
        match least_squares(&rows, r) {
            Some((coef, cond)) => {
                worst = worst.max(cond);
                let mut jet = Jet::zero(order);
                let mut k = 0;
                for t in 0..=order {
                    for b in 0..=t {
                        jet.set(t - b, b, coef[k] / sx.powi((t - b) as i32) / sy.powi(b as i32));
                        k += 1;
                    }
                }
                out.push(jet);
            }
            None => worst = f64::INFINITY,
        }
    }
    if worst > 1e12 || out.len() < 3 {
        return match fallback {
            Some(src) => Ok((
                taylor_metric(src, order),
                Some(format!("Taylor extraction ill conditioned ({worst:.2e}); used closed form")),
            )),
            None => Err(Error::UnstableTaylor(worst)),
        };
    }
    let g = [out[0].clone(), out[1].clone(), out[2].clone()];
    Ok((MetricJet { g }, None))
}

/// Taylor jet of `Phi(z)` at the origin through degree `gj.deg() - 2`.
pub fn phi_jet(gj: &MetricJet, z: &PolyJet) -> Jet {
    let d = gj.deg();
    let [g11, g12, g22] = &gj.g;
    let det = g11.mul(g22).sub(&g12.mul(g12));
    let rdet = det.recip();
    let inv = [g22.mul(&rdet), g12.neg().mul(&rdet), g11.mul(&rdet)];
    let comps = [g11, g12, g22];
    let idx = |i: usize, j: usize| if i == j { 2 * i } else { 1 };
    // dg[k][ij]
    let dg: Vec<Vec<Jet>> = (0..2)
        .map(|k| comps.iter().map(|c| if k == 0 { c.dx() } else { c.dy() }).collect())
        .collect();
    let first = |m: usize, i: usize, j: usize| -> Jet {
        dg[i][idx(j, m)].add(&dg[j][idx(i, m)]).sub(&dg[m][idx(i, j)]).scale(0.5)
    };
    let inv_t: Vec<Jet> = inv.iter().map(|j| j.truncate(d - 1)).collect();
    // gamma[l][ij]
    let mut gamma: Vec<Vec<Jet>> = Vec::new();
    for l in 0..2 {
        let mut row = Vec::new();
        for &(i, j) in &[(0, 0), (0, 1), (1, 1)] {
            row.push(inv_t[idx(l, 0)].mul(&first(0, i, j)).add(&inv_t[idx(l, 1)].mul(&first(1, i, j))));
        }
        gamma.push(row);
    }
    let gt: Vec<Vec<Jet>> = gamma.iter().map(|r| r.iter().map(|j| j.truncate(d - 2)).collect()).collect();
    let riem = |l: usize| -> Jet {
        let mut r = gamma[l][2].dx().sub(&gamma[l][1].dy());
        for m in 0..2 {
            r = r.add(&gt[l][idx(0, m)].mul(&gt[m][2])).sub(&gt[l][idx(1, m)].mul(&gt[m][1]));
        }
        r
    };
    let r1212 = g11.truncate(d - 2).mul(&riem(0)).add(&g12.truncate(d - 2).mul(&riem(1)));
    let z = z.truncate(d);
    let z1 = z.dx();
    let z2 = z.dy();
    let (z11, z12, z22) = (z1.dx(), z1.dy(), z2.dy());
    let (z1t, z2t) = (z1.truncate(d - 2), z2.truncate(d - 2));
    let h = |ij: usize, zij: &Jet| zij.sub(&gt[0][ij].mul(&z1t)).sub(&gt[1][ij].mul(&z2t));
    let h11 = h(0, &z11);
    let h12 = h(1, &z12);
    let h22 = h(2, &z22);
    let it: Vec<Jet> = inv.iter().map(|j| j.truncate(d - 2)).collect();
    let grad = it[0].mul(&z1t).mul(&z1t).add(&it[1].mul(&z1t).mul(&z2t).scale(2.0)).add(&it[2].mul(&z2t).mul(&z2t));
    h11.mul(&h22).sub(&h12.mul(&h12)).sub(&r1212.mul(&Jet::constant(d - 2, 1.0).sub(&grad)))
}

/// Build `z0` of degree `m_star` from metric jets of degree `>= m_star`.
pub fn build_z0(gj: &MetricJet, m_star: usize) -> Result<PolyJet> {
    if m_star < 4 {
        return Err(Error::Config(format!("m_star must be at least 4, got {m_star}")));
    }
    let gj = MetricJet { g: [gj.g[0].truncate(m_star), gj.g[1].truncate(m_star), gj.g[2].truncate(m_star)] };
    if gj.deg() < m_star {
        return Err(Error::Config(format!("metric jet of degree {} is below m_star = {m_star}", gj.deg())));
    }
    let mut z = Jet::zero(m_star);
    z.set(2, 0, 0.5);
    for n in 3..=m_star {
        let target = n - 2;
        let base = phi_jet(&gj, &z).homogeneous(target);
        // Unknowns c_{n-b, b}, b = 2..=n; data c_{n,0} = c_{n-1,1} = 0 on the initial line.
        let unknowns: Vec<usize> = (2..=n).collect();
        let m = unknowns.len();
        let mut a = vec![vec![0.0; m]; m];
        for (col, &b) in unknowns.iter().enumerate() {
            let mut zp = z.clone();
            zp.set(n - b, b, 1.0);
            let probe = phi_jet(&gj, &zp).homogeneous(target);
            for row in 0..m {
                a[row][col] = probe[row] - base[row];
            }
        }
        let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
        let mut rhs: Vec<f64> = base.iter().map(|v| -v).collect();
        match solve_dense(&mut a, &mut rhs) {
            Some(p) if p > 1e-12 * scale.max(1.0) => {}
            p => return Err(Error::SingularSeed { degree: n, pivot: p.unwrap_or(0.0) }),
        }
        for (k, &b) in unknowns.iter().enumerate() {
            z.set(n - b, b, rhs[k]);
        }
    }
    Ok(z)
}

/// Taylor series of `Phi(z0)` through degree `z0.deg + extra - 2`.
///
/// Coefficients below degree `z0.deg - 1` vanish by construction of the seed; those that are
/// round-off (below `1e-10`) are set to zero so the series keeps full relative precision where
/// `Phi(z0)` is far below the round-off of a direct evaluation.
pub fn residual_series(source: &dyn MetricSource, z0: &PolyJet, extra: usize) -> Jet {
    let d = z0.deg + extra;
    let gj = taylor_metric(source, d);
    let mut phi = phi_jet(&gj, &z0.widen(d));
    for t in 0..z0.deg.saturating_sub(1) {
        for b in 0..=t {
            if phi.get(t - b, b).abs() < 1e-10 {
                phi.set(t - b, b, 0.0);
            }
        }
    }
    phi
}

/// `Phi(z0)` at one point, with exact geometry and exact polynomial derivatives.
pub fn phi_at(source: &dyn MetricSource, z0: &PolyJet, y1: f64, y2: f64) -> f64 {
    let geo = PointGeometry::from_jets(&source.jets(y1, y2, 2));
    let zj = z0_point(z0, y1, y2);
    geo.phi(&zj)
}

pub fn z0_point(z0: &PolyJet, y1: f64, y2: f64) -> ZPoint {
    ZPoint {
        z1: z0.eval_deriv(1, 0, y1, y2),
        z2: z0.eval_deriv(0, 1, y1, y2),
        z11: z0.eval_deriv(2, 0, y1, y2),
        z12: z0.eval_deriv(1, 1, y1, y2),
        z22: z0.eval_deriv(0, 2, y1, y2),
    }
}

/// Least-squares slope of `log sup_{|y| = r} |Phi(z0)|` against `log r` for `r` in `[4h, chart/4]`.
///
/// Returns `f64::INFINITY` when the residual vanishes identically.
pub fn residual_decay_order(source: &dyn MetricSource, z0: &PolyJet, h: f64, chart: f64) -> (f64, Vec<(f64, f64)>) {
    let (r0, r1) = (4.0 * h, chart / 4.0);
    let rings = 12;
    let angles = 96;
    let mut pts = Vec::new();
    for q in 0..rings {
        let r = r0 * (r1 / r0).powf(q as f64 / (rings - 1) as f64);
        let mut sup = 0.0f64;
        for a in 0..angles {
            let t = 2.0 * std::f64::consts::PI * a as f64 / angles as f64;
            sup = sup.max(phi_at(source, z0, r * t.cos(), r * t.sin()).abs());
        }
        pts.push((r, sup));
    }
    if pts.iter().all(|p| p.1 == 0.0) {
        return (f64::INFINITY, pts);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().filter(|p| p.1 > 0.0).cloned().unzip();
    (crate::grid::fitted_slope(&xs, &ys), pts)
}
