//! Smoothed Newton iteration for the rescaled Darboux equation on one sector, and patching of
//! the sector solutions.
//!
//! Step `n`: `v = S_n w`, chart and canonical coefficients at `v`, right side
//! `eps S'_n a22 f_n = S_{n-1} E_{n-1} - S_n E_n + (S_{n-1} - S_n) Phi(w_0)`, `L_theta(v) u = f_n`,
//! `w <- w + u`, `E <- E + e_n`. The error `e_n` is split into
//! `e' = (L(w) - L(v)) u`, `e'' = eps (a22 - S'a22) L_theta u + eps theta a22 u_xi1xi1
//! + eps a22^{-1} Phi(v) [u_11 - d_1 log(a22 sqrt|g|) u_1]`, `e''' = Q(u)` and the solver defect
//! `L(v) u - eps S'a22 f_n - e''`.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::elliptic::{EllipticProblem, solve_elliptic};
use crate::error::{Error, Result};
use crate::grid::{Accuracy, Axis, Derivs, ScalarField, diff_axis};
use crate::hyperbolic::{HyperbolicProblem, LayerLog, regularize, solve_hyperbolic};
use crate::regions::{
    CanonicalCoeffs, SectorKind, SectorMap, SectorSetup, XiChart, canonical_coeffs, polar_cutoff, polar_point,
    solve_xi,
};
use crate::smoothing::{extend_sector, smooth_sector};

/// Iteration parameters. Integer quantities follow the regularity bookkeeping of the existence
/// proof; at desk scale most of its constraints fail and are only recorded.
#[derive(Clone, Debug, Serialize)]
pub struct Schedule {
    pub eps: f64,
    /// Exponent used for `mu`.
    pub rho: i64,
    /// `min(m_star - N - 10, m_star - m0) - 1`.
    pub rho_formula: i64,
    pub mu: f64,
    pub m_star: i64,
    pub n: i64,
    pub m0: i64,
    /// `m_star / 12 - 18`.
    pub alpha0: f64,
    pub s0: i64,
    pub gamma: i64,
    pub delta: f64,
    pub max_iter: usize,
    /// Stop once `sup |Phi(w_n)|` falls below this fraction of its initial value.
    pub target: f64,
    pub flags: ScheduleFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ScheduleFlags {
    /// `m_star >= 36 (N + 10)`.
    pub m_star_bound: bool,
    /// `rho >= 3N + 9`.
    pub rho_hyperbolic: bool,
    /// `rho >= 2 gamma + 54`.
    pub rho_elliptic: bool,
    /// `rho + 1 = (m_star - 14) / 3`.
    pub rho_link: bool,
    /// The formula gave `rho < 1` and the desk value 2 is used.
    pub rho_fallback: bool,
}

/// Exponent used when the formula gives no usable `rho`.
pub const DESK_RHO: i64 = 2;

pub fn init_schedule(m_star: i64, n: i64, m0: i64, eps: f64) -> Schedule {
    let rho_formula = (m_star - n - 10).min(m_star - m0) - 1;
    let rho_fallback = rho_formula < 1;
    let rho = if rho_fallback { DESK_RHO } else { rho_formula };
    let s0 = 4;
    let gamma = 2 * s0 + 1;
    let flags = ScheduleFlags {
        m_star_bound: m_star >= 36 * (n + 10),
        rho_hyperbolic: rho_formula >= 3 * n + 9,
        rho_elliptic: rho_formula >= 2 * gamma + 54,
        rho_link: 3 * (rho_formula + 1) == m_star - 14,
        rho_fallback,
    };
    Schedule {
        eps,
        rho,
        rho_formula,
        mu: eps.powf(-1.0 / (2.0 * rho as f64)),
        m_star,
        n,
        m0,
        alpha0: m_star as f64 / 12.0 - 18.0,
        s0,
        gamma,
        delta: PI / 16.0,
        max_iter: 10,
        target: 1e-8,
        flags,
    }
}

impl Schedule {
    /// `mu_n = mu^n`.
    pub fn mu_n(&self, n: usize) -> f64 {
        self.mu.powi(n as i32)
    }

    /// `m <= m_star / 12 - N - 24`, in integers.
    pub fn admits_regularity(&self, m: i64) -> bool {
        12 * m <= self.m_star - 12 * self.n - 288
    }

    /// One line per failed constraint.
    pub fn warnings(&self) -> Vec<String> {
        let f = &self.flags;
        let mut w = vec![];
        if !f.m_star_bound {
            w.push(format!("m_star = {} < 36 (N + 10) = {}", self.m_star, 36 * (self.n + 10)));
        }
        if !f.rho_hyperbolic {
            w.push(format!("rho = {} < 3N + 9 = {}", self.rho_formula, 3 * self.n + 9));
        }
        if !f.rho_elliptic {
            w.push(format!("rho = {} < 2 gamma + 54 = {}", self.rho_formula, 2 * self.gamma + 54));
        }
        if !f.rho_link {
            w.push(format!("rho + 1 = {} differs from (m_star - 14) / 3", self.rho_formula + 1));
        }
        if f.rho_fallback {
            w.push(format!("rho formula gives {}; using {}", self.rho_formula, self.rho));
        }
        w
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RegionOptions {
    /// Polar grid for elliptic sectors; 0 picks `2n - 1` and `n` for an `n`-node sector.
    pub nr: usize,
    pub nt: usize,
    pub s0: usize,
    /// Nodes closer than this many cells to the reduced sector edge are not measured.
    pub margin: f64,
    /// Elliptic cutoff radius over twice the largest `xi` radius of the sector, so that the
    /// cutoff is identically one on the whole sector when this is at least 1.
    pub cutoff_frac: f64,
    /// Abort when the telescoping identity misses by more than this (relative).
    pub identity_tol: f64,
    /// `|S' a22|` below this aborts the step.
    pub guard: f64,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions { nr: 0, nt: 0, s0: 4, margin: 3.0, cutoff_frac: 1.05, identity_tol: 1e-6, guard: 1e-6 }
    }
}

/// Inverse of `xbar -> xi = (xi^1(xbar), xbar^2)` by bisection along `xbar^1`.
pub struct ChartInverse<'a> {
    pub chart: &'a XiChart,
}

impl ChartInverse<'_> {
    pub fn xi(&self, xb: [f64; 2]) -> [f64; 2] {
        [self.chart.xi1.interp_cubic(xb[0], xb[1]), xb[1]]
    }

    pub fn xbar(&self, xi: [f64; 2]) -> Option<[f64; 2]> {
        let g = self.chart.xi1.grid;
        let y = xi[1];
        if y < g.y0 - 1e-12 || y > g.y1 + 1e-12 {
            return None;
        }
        let f = |x: f64| self.chart.xi1.interp_cubic(x, y) - xi[0];
        let (mut a, mut b) = (g.x0, g.x1);
        let (fa, fb) = (f(a), f(b));
        if fa > 0.0 || fb < 0.0 {
            return None;
        }
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if f(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some([0.5 * (a + b), y])
    }

    /// As `xbar`, with points beyond the box in `xi^1` or `xi^2` sent to the nearest box edge.
    pub fn xbar_clamped(&self, xi: [f64; 2]) -> [f64; 2] {
        let g = self.chart.xi1.grid;
        let y = xi[1].clamp(g.y0, g.y1);
        let lo = self.chart.xi1.interp_cubic(g.x0, y);
        let hi = self.chart.xi1.interp_cubic(g.x1, y);
        let t = xi[0].clamp(lo, hi);
        self.xbar([t, y]).unwrap_or([if xi[0] < lo { g.x0 } else { g.x1 }, y])
    }
}

/// Cauchy data on the bottom of a hyperbolic sector, at the `xi` grid columns.
#[derive(Clone, Debug)]
pub struct CauchyData {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct IterationState {
    pub n: usize,
    pub w: ScalarField,
    pub v: ScalarField,
    pub u: ScalarField,
    pub f: ScalarField,
    pub e: ScalarField,
    /// `E_n = sum_{i < n} e_i`.
    pub big_e: ScalarField,
    pub phi_w: ScalarField,
    pub phi_v: ScalarField,
    pub theta: f64,
    /// `S_{n-1} E_{n-1}` and `S_{n-1} Phi(w_0)` (zero before the first step).
    pub s_e_prev: ScalarField,
    pub s_phi0_prev: ScalarField,
    /// Marching log of the last hyperbolic solve (empty for elliptic sectors).
    pub layers: Vec<LayerLog>,
}

impl IterationState {
    pub fn initial(phi_w0: ScalarField) -> IterationState {
        let z = ScalarField::zeros(phi_w0.grid);
        IterationState {
            n: 0,
            w: z.clone(),
            v: z.clone(),
            u: z.clone(),
            f: z.clone(),
            e: z.clone(),
            big_e: z.clone(),
            phi_v: phi_w0.clone(),
            phi_w: phi_w0,
            theta: 0.0,
            s_e_prev: z.clone(),
            s_phi0_prev: z,
            layers: vec![],
        }
    }
}

/// One row of the convergence log.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepLog {
    pub n: usize,
    pub mu: f64,
    pub theta: f64,
    /// `||u_n||_m` for `m = 0, 2, 4`.
    pub u_norms: [f64; 3],
    /// `sup |Phi(w_{n+1})|` on the measured nodes.
    pub phi_sup: f64,
    pub phi_h2: f64,
    /// Sup norms of `e'`, `e''`, `e'''` and the solver defect.
    pub e_split: [f64; 4],
    /// Relative miss of the telescoping identity.
    pub identity: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ConvergenceLog {
    pub label: String,
    pub initial: f64,
    pub steps: Vec<StepLog>,
}

impl ConvergenceLog {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,mu,theta,u_0,u_2,u_4,phi_sup,phi_h2,e_prime,e_second,e_third,defect,identity")?;
        writeln!(w, "0,,,,,,{:e},,,,,,", self.initial)?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                s.n + 1,
                s.mu,
                s.theta,
                s.u_norms[0],
                s.u_norms[1],
                s.u_norms[2],
                s.phi_sup,
                s.phi_h2,
                s.e_split[0],
                s.e_split[1],
                s.e_split[2],
                s.e_split[3],
                s.identity
            )?;
        }
        Ok(())
    }

    /// Best `sup |Phi(w_n)|` over the run divided by the initial value.
    pub fn reduction(&self) -> f64 {
        let best = self.steps.iter().map(|s| s.phi_sup).fold(self.initial, f64::min);
        if self.initial == 0.0 { 0.0 } else { best / self.initial }
    }
}

/// Everything that stays fixed while iterating on one sector.
pub struct RegionContext<'a> {
    pub setup: &'a SectorSetup,
    pub opts: RegionOptions,
    pub delta: f64,
    /// Nodes where the residual is measured.
    pub eval: Vec<bool>,
    /// Elliptic cutoff radius in `xi` (0 for hyperbolic sectors).
    pub sigma_c: f64,
    pub phi0: ScalarField,
    /// Smooth window, zero next to rows where the equation is not imposed. Fields are multiplied
    /// by it before `S_n`, so that errors on those rows do not feed back into the iteration.
    pub window: ScalarField,
}

/// Polar grid size for an elliptic sector on `g`.
pub fn polar_dims(opts: &RegionOptions, g: crate::grid::Grid) -> (usize, usize) {
    let nr = if opts.nr == 0 { 2 * g.ny - 1 } else { opts.nr };
    let nt = if opts.nt == 0 { g.ny } else { opts.nt };
    (nr, nt)
}

fn chart_at(setup: &SectorSetup, v: &ScalarField, delta: f64) -> Result<XiChart> {
    let lc = setup.prob.lin_coeffs(v);
    let d = if setup.info.kind == SectorKind::Elliptic { delta } else { 0.0 };
    solve_xi(&lc.a12, &lc.a22, setup.info.kind, d)
}

impl<'a> RegionContext<'a> {
    /// Fix the window and the measured nodes from the chart at `w = 0`.
    pub fn new(setup: &'a SectorSetup, opts: RegionOptions, delta: f64) -> Result<RegionContext<'a>> {
        let g = setup.domain.grid;
        let h = g.h();
        let zero = ScalarField::zeros(g);
        let chart = chart_at(setup, &zero, delta)?;
        let inv = ChartInverse { chart: &chart };
        let elliptic = setup.info.kind == SectorKind::Elliptic;
        let mut sigma_c = 0.0;
        let mut r_pin = 0.0;
        if elliptic {
            let rmax = (0..g.len())
                .filter(|&k| setup.mask[k])
                .map(|k| {
                    let (x, y) = g.point(k);
                    let xi = inv.xi([x, y]);
                    xi[0].hypot(xi[1])
                })
                .fold(0.0, f64::max);
            sigma_c = 2.0 * opts.cutoff_frac * rmax;
            let (nr, _) = polar_dims(&opts, g);
            r_pin = (opts.s0 as f64 + 1.0) * sigma_c / (nr - 1) as f64;
        }
        // Distance in cells to rows that carry boundary conditions or one-sided stencils.
        let edge = chart.sigma_eff;
        let window = ScalarField::from_fn(g, |x, y| {
            let d_edges = if elliptic {
                y.min((x - y) / std::f64::consts::SQRT_2)
            } else {
                (y - x.abs()) / std::f64::consts::SQRT_2
            };
            let d = d_edges.min(edge - x.abs().max(y)) / h;
            let mut wv = crate::smoothing::smooth_step((d - opts.margin) / opts.margin);
            if elliptic {
                let xi = inv.xi([x, y]);
                wv *= crate::smoothing::smooth_step((xi[0].hypot(xi[1]) - r_pin) / r_pin);
            }
            wv
        });
        let eval: Vec<bool> = (0..g.len()).map(|k| setup.mask[k] && window.data[k] >= 1.0 - 1e-12).collect();
        let phi0 = setup.prob.residual(&zero);
        Ok(RegionContext { setup, opts, delta, eval, sigma_c, phi0, window })
    }

    fn eps(&self) -> f64 {
        self.setup.prob.eps
    }

    fn kind(&self) -> SectorKind {
        self.setup.info.kind
    }
}

/// `u_xi1xi1` from `xbar` derivatives.
fn d_xi1_xi1(cc: &CanonicalCoeffs, u: &ScalarField) -> ScalarField {
    let d1 = diff_axis(u, Axis::X, 1, Accuracy::Fourth);
    let d11 = diff_axis(u, Axis::X, 2, Accuracy::Fourth);
    ScalarField {
        grid: u.grid,
        data: (0..u.data.len())
            .map(|k| {
                let x1 = cc.xi_1.data[k];
                (d11.data[k] - cc.xi_11.data[k] * d1.data[k] / x1) / (x1 * x1)
            })
            .collect(),
    }
}

fn sup(f: &ScalarField, mask: &[bool]) -> f64 {
    f.max_abs_masked(mask)
}

/// Elliptic correction: polar problem in `xi` with the cutoff, mapped back to the sector.
fn solve_elliptic_sector(ctx: &RegionContext, cc: &CanonicalCoeffs, chart: &XiChart, f: &ScalarField) -> Result<ScalarField> {
    let st = ctx.setup;
    let g = st.domain.grid;
    let inv = ChartInverse { chart };
    let (sigma_c, delta) = (ctx.sigma_c, ctx.delta);
    let s0 = ctx.opts.s0;
    let (nr, nt) = polar_dims(&ctx.opts, g);
    let hr = sigma_c / (nr - 1) as f64;
    let at = |r: f64, t: f64| inv.xbar_clamped([r * t.cos(), r * t.sin()]);
    let sample = |fld: &ScalarField, p: [f64; 2]| fld.interp_cubic(p[0], p[1]);
    let prob = EllipticProblem::from_fn(sigma_c, delta, nr, nt, s0, |r, t| {
        if r <= (s0 as f64 + 0.5) * hr {
            return Default::default();
        }
        let xb = at(r, t);
        // The sliver between the bounding ray and the zero curve can carry k slightly below 0.
        let k = sample(&cc.k, xb).max(0.0);
        polar_cutoff(polar_point(k, sample(&cc.c_dk, xb), sample(&cc.d, xb), r, t), r, sigma_c)
    })?;
    let pg = prob.grid;
    // f vanishes outside the sector image, where the cutoff acts.
    let fp = ScalarField::from_fn(pg, |r, t| {
        if r <= (s0 as f64 + 0.5) * hr {
            return 0.0;
        }
        inv.xbar([r * t.cos(), r * t.sin()]).map_or(0.0, |p| sample(f, p))
    });
    let sol = solve_elliptic(&prob, &fp)?;
    let mut u = ScalarField::zeros(g);
    for k in 0..g.len() {
        if !st.mask[k] {
            continue;
        }
        let (x, y) = g.point(k);
        let xi = inv.xi([x, y]);
        let r = xi[0].hypot(xi[1]);
        let t = xi[1].atan2(xi[0]).clamp(0.0, delta);
        if r < sigma_c {
            u.data[k] = sol.u.interp_cubic(r, t);
        }
    }
    extend_sector(&u, SectorKind::Elliptic)
}

/// Bottom curve `xi^2 = h(xi^1)`: the image of the sector edges `xbar^2 = |xbar^1|`.
fn bottom_curve(chart: &XiChart) -> Vec<f64> {
    let g = chart.xi1.grid;
    let edge = |t: f64| chart.xi1.interp_cubic(t, t.abs());
    (0..g.nx)
        .map(|i| {
            let target = g.x(i);
            let (mut a, mut b) = (g.x0, g.x1);
            if edge(a) > target || edge(b) < target {
                return target.abs();
            }
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if edge(m) < target {
                    a = m;
                } else {
                    b = m;
                }
            }
            (0.5 * (a + b)).abs()
        })
        .collect()
}

/// Coefficient fields resampled from `xbar` onto the `xi` grid (same shape, rows coincide).
fn to_xi_grid(inv: &ChartInverse, fields: &[&ScalarField]) -> Vec<ScalarField> {
    let g = inv.chart.xi1.grid;
    let pts: Vec<Option<[f64; 2]>> = (0..g.len())
        .map(|k| {
            let (x, y) = g.point(k);
            inv.xbar([x, y])
        })
        .collect();
    fields
        .iter()
        .map(|f| ScalarField {
            grid: g,
            data: pts.iter().map(|p| p.map_or(0.0, |q| f.interp_cubic(q[0], q[1]))).collect(),
        })
        .collect()
}

/// Hyperbolic correction: marching in `xi^2` on the `xi` grid, mapped back to the sector.
fn solve_hyperbolic_sector(
    ctx: &RegionContext,
    cc: &CanonicalCoeffs,
    chart: &XiChart,
    f: &ScalarField,
    theta: f64,
    data: Option<&CauchyData>,
) -> Result<(ScalarField, Vec<LayerLog>)> {
    let st = ctx.setup;
    let g = st.domain.grid;
    let inv = ChartInverse { chart };
    let kneg = cc.k.map(|k| k.min(0.0));
    let res = to_xi_grid(&inv, &[&kneg, &cc.c, &cc.d, f]);
    let mut p = HyperbolicProblem::new(g, f64::abs, res[0].clone(), res[1].clone(), res[2].clone(), theta)?;
    p.h = bottom_curve(chart);
    p.dissipation = p.default_dissipation();
    if let Some(d) = data {
        p.phi = d.phi.clone();
        p.psi = d.psi.clone();
    }
    let sol = solve_hyperbolic(&p, &res[3])?;
    let mut u = ScalarField::zeros(g);
    for k in 0..g.len() {
        if st.mask[k] {
            let (x, y) = g.point(k);
            let xi = inv.xi([x, y]);
            u.data[k] = sol.u.interp_cubic(xi[0], xi[1]);
        }
    }
    Ok((extend_sector(&u, SectorKind::Hyperbolic)?, sol.layers))
}

/// One iteration on a sector of either type.
pub fn step(ctx: &RegionContext, sched: &Schedule, s: &IterationState, data: Option<&CauchyData>) -> Result<(IterationState, StepLog)> {
    let st = ctx.setup;
    let prob = &st.prob;
    let kind = ctx.kind();
    let eps = ctx.eps();
    let mu = sched.mu_n(s.n);
    let v = smooth_sector(&s.w, kind, mu, true)?;
    let chart = chart_at(st, &v, ctx.delta)?;
    let cc = canonical_coeffs(prob, &v, &chart, 0.0)?;
    let phi_v = cc.phi.clone();
    let theta = regularize(&cc.k, &phi_v, &ctx.eval).1;
    let sa22 = smooth_sector(&cc.a22, kind, mu, false)?;
    if let Some(m) = st.mask.iter().zip(&sa22.data).filter(|(m, _)| **m).map(|(_, a)| a.abs()).reduce(f64::min) {
        if m <= ctx.opts.guard {
            return Err(Error::Guard(m));
        }
    }
    // E_n = E_{n-1} + e_{n-1}.
    let big_e = s.big_e.add(&s.e);
    let s_e = smooth_sector(&big_e.mul(&ctx.window), kind, mu, true)?;
    let s_phi0 = smooth_sector(&ctx.phi0.mul(&ctx.window), kind, mu, true)?;
    let g_n = s.s_e_prev.sub(&s_e).add(&s.s_phi0_prev).sub(&s_phi0);
    let f = g_n.zip(&sa22, |a, b| a / (eps * b));
    let (u, layers) = match kind {
        SectorKind::Elliptic => (solve_elliptic_sector(ctx, &cc, &chart, &f)?, vec![]),
        SectorKind::Hyperbolic => solve_hyperbolic_sector(ctx, &cc, &chart, &f, theta, data)?,
    };
    let theta_used = if kind == SectorKind::Hyperbolic { theta } else { 0.0 };
    let uxx = d_xi1_xi1(&cc, &u);
    let ell = cc.apply(&u).sub(&uxx.scale(theta_used));
    let d1 = diff_axis(&u, Axis::X, 1, Accuracy::Fourth);
    let d11 = diff_axis(&u, Axis::X, 2, Accuracy::Fourth);
    let lw = prob.apply_linearization(&s.w, &u).scale(eps);
    let lv = prob.apply_linearization(&v, &u).scale(eps);
    let e1 = lw.sub(&lv);
    let n = u.data.len();
    let e2 = ScalarField {
        grid: u.grid,
        data: (0..n)
            .map(|k| {
                let a = cc.a22.data[k];
                eps * (a - sa22.data[k]) * ell.data[k]
                    + eps * theta_used * a * uxx.data[k]
                    + eps / a * phi_v.data[k] * (d11.data[k] - cc.log_der.data[k] * d1.data[k])
            })
            .collect(),
    };
    let e3 = prob.quadratic(&u);
    let defect = ScalarField { grid: u.grid, data: (0..n).map(|k| lv.data[k] - eps * sa22.data[k] * f.data[k] - e2.data[k]).collect() };
    let e = e1.add(&e2).add(&e3).add(&defect);
    let w = s.w.add(&u);
    let phi_w = prob.residual(&w);
    // Phi(w_{n+1}) = (I - S_n) Phi(w_0) + (I - S_n) E_n + e_n.
    let rhs = ctx.phi0.sub(&s_phi0).add(&big_e.sub(&s_e)).add(&e);
    let scale = sup(&phi_w, &st.mask).max(1e-300);
    let identity = phi_w.sub(&rhs).max_abs_masked(&st.mask) / scale;
    if identity > ctx.opts.identity_tol {
        return Err(Error::Consistency(format!("telescoping identity misses by {identity:.3e} at step {}", s.n)));
    }
    let log = StepLog {
        n: s.n,
        mu,
        theta,
        u_norms: [u.sobolev(0, Some(&ctx.eval)), u.sobolev(2, Some(&ctx.eval)), u.sobolev(4, Some(&ctx.eval))],
        phi_sup: sup(&phi_w, &ctx.eval),
        phi_h2: phi_w.sobolev(2, Some(&ctx.eval)),
        e_split: [sup(&e1, &ctx.eval), sup(&e2, &ctx.eval), sup(&e3, &ctx.eval), sup(&defect, &ctx.eval)],
        identity,
    };
    let next = IterationState {
        n: s.n + 1,
        w,
        v,
        u,
        f,
        e,
        big_e,
        phi_w,
        phi_v,
        theta,
        s_e_prev: s_e,
        s_phi0_prev: s_phi0,
        layers,
    };
    Ok((next, log))
}

/// `step` on an elliptic sector.
pub fn step_elliptic(ctx: &RegionContext, sched: &Schedule, s: &IterationState) -> Result<(IterationState, StepLog)> {
    if ctx.kind() != SectorKind::Elliptic {
        return Err(Error::Consistency("step_elliptic on a hyperbolic sector".into()));
    }
    step(ctx, sched, s, None)
}

/// `step` on a hyperbolic sector; Cauchy data only enter the first step.
pub fn step_hyperbolic(
    ctx: &RegionContext,
    sched: &Schedule,
    s: &IterationState,
    data: Option<&CauchyData>,
) -> Result<(IterationState, StepLog)> {
    if ctx.kind() != SectorKind::Hyperbolic {
        return Err(Error::Consistency("step_hyperbolic on an elliptic sector".into()));
    }
    step(ctx, sched, s, if s.n == 0 { data } else { None })
}

#[derive(Clone, Debug)]
pub struct RegionRun {
    pub label: String,
    pub kind: SectorKind,
    pub map: SectorMap,
    /// Best iterate, extended over the sector box.
    pub w: ScalarField,
    pub log: ConvergenceLog,
    pub best: usize,
    /// Set when the divergence guard stopped the run.
    pub failed: bool,
    /// Sector nodes, and the nodes where the residual is measured.
    pub mask: Vec<bool>,
    pub eval: Vec<bool>,
    pub sigma_c: f64,
    pub warnings: Vec<String>,
    /// `(step, layer)` marching logs of every hyperbolic solve.
    pub layers: Vec<(usize, LayerLog)>,
}

/// Iterate on one sector until the residual target, `max_iter`, or three consecutive increases.
pub fn run_region(setup: &SectorSetup, sched: &Schedule, opts: RegionOptions, data: Option<&CauchyData>) -> Result<RegionRun> {
    let ctx = RegionContext::new(setup, opts, sched.delta)?;
    let mut warnings = vec![];
    if let Some(d) = data {
        // Boundary data must be small: |phi|, |psi| <= eps^3.
        let size = d.phi.iter().chain(&d.psi).fold(0.0f64, |a, v| a.max(v.abs()));
        if size > sched.eps.powi(3) {
            warnings.push(format!("{}: Cauchy data of size {size:.3e} exceed eps^3", setup.info.label));
        }
    }
    let mut state = IterationState::initial(ctx.phi0.clone());
    let initial = sup(&ctx.phi0, &ctx.eval);
    let mut log = ConvergenceLog { label: setup.info.label.clone(), initial, steps: vec![] };
    let mut best = (initial, state.w.clone(), 0usize);
    let mut rises = 0;
    let mut last = initial;
    let mut failed = false;
    let mut layers = vec![];
    if initial > 0.0 || data.is_some() {
        for _ in 0..sched.max_iter {
            let (next, row) = match setup.info.kind {
                SectorKind::Elliptic => step_elliptic(&ctx, sched, &state)?,
                SectorKind::Hyperbolic => step_hyperbolic(&ctx, sched, &state, data)?,
            };
            log.steps.push(row);
            layers.extend(next.layers.iter().map(|l| (row.n, *l)));
            state = next;
            if row.phi_sup < best.0 || best.2 == 0 && data.is_some() {
                best = (row.phi_sup, state.w.clone(), state.n);
            }
            rises = if row.phi_sup > last { rises + 1 } else { 0 };
            last = row.phi_sup;
            if rises >= 3 {
                failed = true;
                break;
            }
            if row.phi_sup <= sched.target * initial {
                break;
            }
        }
    }
    Ok(RegionRun {
        label: setup.info.label.clone(),
        kind: setup.info.kind,
        map: setup.map,
        w: best.1,
        log,
        best: best.2,
        failed,
        mask: setup.mask.clone(),
        eval: ctx.eval,
        sigma_c: ctx.sigma_c,
        warnings,
        layers,
    })
}

impl RegionRun {
    /// Marching layers of every step: `step,layer,y,max_abs,energy,energy_ratio`.
    pub fn write_layers_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,layer,y,max_abs,energy,energy_ratio")?;
        for (n, l) in &self.layers {
            writeln!(w, "{n},{},{:e},{:e},{:e},{:e}", l.layer, l.y, l.max_abs, l.energy, l.ratio)?;
        }
        Ok(())
    }
}

/// Value and chart-coordinate gradient of a sector solution at a chart point.
pub fn sample_chart(run: &RegionRun, d: &Derivs, x: [f64; 2]) -> (f64, [f64; 2]) {
    let xb = run.map.apply_inv(x);
    let v = run.w.interp_cubic(xb[0], xb[1]);
    let gb = [d.d1.interp_cubic(xb[0], xb[1]), d.d2.interp_cubic(xb[0], xb[1])];
    // x = M xbar, so grad_x = M^{-T} grad_xbar.
    let inv = run.map.inv;
    (v, [inv[0][0] * gb[0] + inv[1][0] * gb[1], inv[0][1] * gb[0] + inv[1][1] * gb[1]])
}

/// Whether a chart point falls on a sector node of the run (nearest node).
fn in_sector(run: &RegionRun, x: [f64; 2]) -> bool {
    let g = run.w.grid;
    let xb = run.map.apply_inv(x);
    let i = ((xb[0] - g.x0) / g.hx).round();
    let j = ((xb[1] - g.y0) / g.hy).round();
    if i < 0.0 || j < 0.0 || i >= g.nx as f64 || j >= g.ny as f64 {
        return false;
    }
    run.mask[g.idx(i as usize, j as usize)]
}

/// Cauchy data for a hyperbolic sector from the bordering elliptic solutions: `phi = 0` and
/// `psi = d_xi2 w` on the bottom curve, in the chart of `w = 0`.
pub fn cauchy_data_from(setup: &SectorSetup, delta: f64, elliptic: &[&RegionRun]) -> Result<CauchyData> {
    let g = setup.domain.grid;
    let chart = chart_at(setup, &ScalarField::zeros(g), delta)?;
    let inv = ChartInverse { chart: &chart };
    let h = bottom_curve(&chart);
    let dxi = Derivs::of(&chart.xi1, Accuracy::Fourth);
    let derivs: Vec<Derivs> = elliptic.iter().map(|r| Derivs::of(&r.w, Accuracy::Fourth)).collect();
    let m = setup.map.m;
    let mut psi = vec![0.0; g.nx];
    for i in 0..g.nx {
        let Some(xb) = inv.xbar([g.x(i), h[i]]) else { continue };
        let x = setup.map.apply(xb);
        // The neighbour whose box contains the point with the least extrapolation.
        let pick = elliptic.iter().enumerate().min_by(|a, b| {
            let da = outside_distance(a.1, x);
            let db = outside_distance(b.1, x);
            da.total_cmp(&db)
        });
        let Some((e, run)) = pick else { continue };
        let (_, gx) = sample_chart(run, &derivs[e], x);
        // grad_xbar = M^T grad_x.
        let g1 = m[0][0] * gx[0] + m[1][0] * gx[1];
        let g2 = m[0][1] * gx[0] + m[1][1] * gx[1];
        let x1 = dxi.d1.interp_cubic(xb[0], xb[1]);
        let x2 = dxi.d2.interp_cubic(xb[0], xb[1]);
        psi[i] = g2 - x2 / x1 * g1;
    }
    Ok(CauchyData { phi: vec![0.0; g.nx], psi })
}

fn outside_distance(run: &RegionRun, x: [f64; 2]) -> f64 {
    let g = run.w.grid;
    let xb = run.map.apply_inv(x);
    let dx = (g.x0 - xb[0]).max(xb[0] - g.x1).max(0.0);
    let dy = (g.y0 - xb[1]).max(xb[1] - g.y1).max(0.0);
    let angle = if run.kind == SectorKind::Elliptic { (xb[1] - xb[0]).max(-xb[1]).max(0.0) } else { (xb[0].abs() - xb[1]).max(0.0) };
    dx + dy + angle
}

#[derive(Clone, Debug, Serialize)]
pub struct InterfaceJump {
    /// Id of the zero curve the interface lies on.
    pub curve: String,
    pub sides: [String; 2],
    /// Angle of the interface ray in the chart.
    pub angle: f64,
    pub value_jump: f64,
    pub grad_jump: f64,
    /// Jumps divided by the largest `|w|` and `|grad w|` on the two sides.
    pub value_jump_rel: f64,
    pub grad_jump_rel: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PatchReport {
    pub h: f64,
    pub interfaces: Vec<InterfaceJump>,
}

/// Interfaces between consecutive sectors, as `(sector index, sector index, ray angle, curve id)`.
pub fn interfaces(runs: &[RegionRun], infos: &[crate::regions::SectorInfo]) -> Vec<(usize, usize, f64, String)> {
    let mut out = vec![];
    for (a, ia) in infos.iter().enumerate() {
        for (b, ib) in infos.iter().enumerate() {
            if a == b {
                continue;
            }
            let d = (ia.end - ib.start).rem_euclid(2.0 * PI);
            if d.min(2.0 * PI - d) < 1e-9 {
                let ra = runs.iter().position(|r| r.label == ia.label);
                let rb = runs.iter().position(|r| r.label == ib.label);
                if let (Some(ra), Some(rb)) = (ra, rb) {
                    out.push((ra, rb, ia.end, ia.bounding[1].clone()));
                }
            }
        }
    }
    out
}

/// Measure value and gradient jumps along every interface ray, at points inside both sectors.
pub fn patch_solutions(runs: &[RegionRun], infos: &[crate::regions::SectorInfo], samples: usize) -> PatchReport {
    let derivs: Vec<Derivs> = runs.iter().map(|r| Derivs::of(&r.w, Accuracy::Fourth)).collect();
    let h = runs.first().map_or(0.0, |r| r.w.grid.h());
    let mut report = PatchReport { h, interfaces: vec![] };
    for (a, b, angle, curve) in interfaces(runs, infos) {
        let dir = [angle.cos(), angle.sin()];
        let (ra, rb) = (&runs[a], &runs[b]);
        let scale_v = ra.w.max_abs_masked(&ra.eval).max(rb.w.max_abs_masked(&rb.eval));
        let gmax = |r: &RegionRun, d: &Derivs| {
            (0..r.w.data.len()).filter(|&k| r.eval[k]).map(|k| d.d1.data[k].hypot(d.d2.data[k])).fold(0.0, f64::max)
        };
        let scale_g = gmax(ra, &derivs[a]).max(gmax(rb, &derivs[b]));
        let mut jump = InterfaceJump {
            curve,
            sides: [ra.label.clone(), rb.label.clone()],
            angle,
            value_jump: 0.0,
            grad_jump: 0.0,
            value_jump_rel: 0.0,
            grad_jump_rel: 0.0,
            samples: 0,
        };
        for s in 1..=samples {
            let r = s as f64 / samples as f64;
            let x = [r * dir[0], r * dir[1]];
            if !in_sector(ra, x) || !in_sector(rb, x) {
                continue;
            }
            let (va, ga) = sample_chart(ra, &derivs[a], x);
            let (vb, gb) = sample_chart(rb, &derivs[b], x);
            jump.value_jump = jump.value_jump.max((va - vb).abs());
            jump.grad_jump = jump.grad_jump.max((ga[0] - gb[0]).hypot(ga[1] - gb[1]));
            jump.samples += 1;
        }
        jump.value_jump_rel = if scale_v > 0.0 { jump.value_jump / scale_v } else { 0.0 };
        jump.grad_jump_rel = if scale_g > 0.0 { jump.grad_jump / scale_g } else { 0.0 };
        report.interfaces.push(jump);
    }
    report
}

/// The sector solution containing a chart point, chosen by angle (0 at the origin and outside).
pub fn global_value(runs: &[RegionRun], infos: &[crate::regions::SectorInfo], p: [f64; 2]) -> f64 {
    let [x, y] = p;
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    let a = y.atan2(x);
    for info in infos {
        let t = (a - info.start).rem_euclid(2.0 * PI);
        if t <= info.end - info.start + 1e-12 {
            if let Some(r) = runs.iter().find(|r| r.label == info.label) {
                let xb = r.map.apply_inv([x, y]);
                return r.w.interp_cubic(xb[0], xb[1]);
            }
        }
    }
    0.0
}

/// Glue the sector solutions into one field on a chart grid.
pub fn global_field(runs: &[RegionRun], infos: &[crate::regions::SectorInfo], grid: crate::grid::Grid) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| global_value(runs, infos, [x, y]))
}

impl PatchReport {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "curve,side_a,side_b,angle,value_jump,grad_jump,value_jump_rel,grad_jump_rel,samples")?;
        for j in &self.interfaces {
            writeln!(
                w,
                "{},{},{},{:.9},{:e},{:e},{:e},{:e},{}",
                j.curve, j.sides[0], j.sides[1], j.angle, j.value_jump, j.grad_jump, j.value_jump_rel, j.grad_jump_rel, j.samples
            )?;
        }
        Ok(())
    }

    /// `Error::Patch` on the first interface whose absolute jumps exceed `c h^2` (value) or
    /// `c h` (gradient).
    pub fn check(&self, c: f64) -> Result<()> {
        let (tv, tg) = (c * self.h * self.h, c * self.h);
        for j in &self.interfaces {
            if j.value_jump > tv {
                return Err(Error::Patch { curve: j.curve.clone(), jump: j.value_jump, tol: tv });
            }
            if j.grad_jump > tg {
                return Err(Error::Patch { curve: j.curve.clone(), jump: j.grad_jump, tol: tg });
            }
        }
        Ok(())
    }
}

/// Per-sector results and the interface report.
#[derive(Clone, Debug)]
pub struct NeighborhoodSolution {
    pub runs: Vec<RegionRun>,
    pub patch: PatchReport,
}

impl NeighborhoodSolution {
    pub fn run(&self, label: &str) -> Option<&RegionRun> {
        self.runs.iter().find(|r| r.label == label)
    }
}

/// Iterate on every sector: elliptic sectors first, then hyperbolic sectors with Cauchy data from
/// their elliptic neighbours, each group in parallel.
pub fn solve_regions(
    setups: &[SectorSetup],
    infos: &[crate::regions::SectorInfo],
    sched: &Schedule,
    opts: RegionOptions,
) -> Result<NeighborhoodSolution> {
    let ell: Vec<&SectorSetup> = setups.iter().filter(|s| s.info.kind == SectorKind::Elliptic).collect();
    let hyp: Vec<&SectorSetup> = setups.iter().filter(|s| s.info.kind == SectorKind::Hyperbolic).collect();
    let mut runs = crate::par::par_tasks(ell.len(), |i| run_region(ell[i], sched, opts, None))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let hyp_runs = {
        let refs: Vec<&RegionRun> = runs.iter().collect();
        crate::par::par_tasks(hyp.len(), |i| {
            let data = if refs.is_empty() { None } else { Some(cauchy_data_from(hyp[i], sched.delta, &refs)?) };
            run_region(hyp[i], sched, opts, data.as_ref())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
    };
    runs.extend(hyp_runs);
    let patch = patch_solutions(&runs, infos, 64);
    Ok(NeighborhoodSolution { runs, patch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::metric::ClosedMetric;
    use crate::regions::{RegionDecomposition, ZeroSetOptions, decompose};

    pub(crate) fn m1() -> (ClosedMetric, crate::jet::PolyJet, RegionDecomposition) {
        let m1 = ClosedMetric::graph("u^2/2 + u*v^3/6").unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rot = m1.pulled_back([[s, -s], [s, s]]);
        let z0 = crate::seed::build_z0(&crate::seed::taylor_metric(&rot, 8), 8).unwrap();
        let k = ScalarField::from_fn(Grid::square(1.0, 129).unwrap(), |x, y| {
            crate::metric::PointGeometry::from_jets(&crate::metric::MetricSource::jets(&rot, 0.01 * x, 0.01 * y, 2)).k()
        });
        let d = decompose(&k, &ZeroSetOptions::default()).unwrap();
        (rot, z0, d)
    }

    fn setups(n: usize) -> (Vec<SectorSetup>, RegionDecomposition) {
        let (rot, z0, d) = m1();
        let st = d
            .sectors
            .iter()
            .map(|info| SectorSetup::with_series(&rot, &z0, info, 1.0, n, 0.05, Accuracy::Fourth, 8).unwrap())
            .collect();
        (st, d)
    }

    fn desk() -> Schedule {
        init_schedule(8, 2, 8, 0.05)
    }

    #[test]
    fn schedule_examples() {
        let s = init_schedule(396, 1, 381, 0.05);
        assert_eq!(s.rho, 14);
        assert!(s.flags.m_star_bound);
        assert!(!s.flags.rho_fallback);
        assert_eq!(36 * (s.n + 10), 396);
        let s = init_schedule(21, 0, 10, 0.01);
        assert_eq!(s.rho, 10);
        assert!((s.mu - 1.2589254117941673).abs() < 1e-12, "{}", s.mu);
        let s = desk();
        assert_eq!(s.rho_formula, -5);
        assert_eq!(s.rho, DESK_RHO);
        assert!(s.flags.rho_fallback && !s.flags.m_star_bound);
        assert_eq!(s.warnings().len(), 5);
        assert!((s.alpha0 - (8.0 / 12.0 - 18.0)).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn schedule_invariants(m_star in 4i64..600, n in 0i64..20, m0 in 1i64..600, eps in 0.001f64..0.9) {
            let s = init_schedule(m_star, n, m0, eps);
            proptest::prop_assert!(s.mu > 1.0);
            proptest::prop_assert!(s.rho >= 1);
            proptest::prop_assert_eq!(s.rho_formula, (m_star - n - 10).min(m_star - m0) - 1);
            let back = s.mu.powf(-2.0 * s.rho as f64);
            proptest::prop_assert!((back - eps).abs() <= 1e-9 * eps);
            proptest::prop_assert_eq!(s.flags.m_star_bound, m_star >= 36 * (n + 10));
            proptest::prop_assert_eq!(s.flags.rho_fallback, s.rho != s.rho_formula);
            for k in 1..4 {
                proptest::prop_assert!((s.mu_n(k) - s.mu.powi(k as i32)).abs() <= 1e-12 * s.mu_n(k));
            }
            proptest::prop_assert_eq!(s.admits_regularity(0), m_star >= 12 * n + 288);
        }
    }

    #[test]
    fn flat_region_is_a_fixed_point() {
        let flat = ClosedMetric::flat();
        let z0 = crate::seed::build_z0(&crate::seed::taylor_metric(&flat, 8), 8).unwrap();
        for (label, kind, start, end) in [("E1", SectorKind::Elliptic, -0.3, 0.9), ("H1", SectorKind::Hyperbolic, 0.9, 2.0)] {
            let info = crate::regions::SectorInfo {
                label: label.into(),
                kind,
                sign: if kind == SectorKind::Elliptic { 1 } else { -1 },
                start,
                end,
                bounding: ["a".into(), "b".into()],
            };
            let st = SectorSetup::with_series(&flat, &z0, &info, 1.0, 33, 0.05, Accuracy::Fourth, 8).unwrap();
            assert_eq!(st.prob.residual(&ScalarField::zeros(st.domain.grid)).max_abs(), 0.0);
            let run = run_region(&st, &desk(), RegionOptions::default(), None).unwrap();
            assert!(run.log.steps.is_empty() && !run.failed);
            assert_eq!(run.w.max_abs(), 0.0);
        }
    }

    #[test]
    fn chart_inverse_round_trip() {
        let (st, _) = setups(33);
        for s in &st {
            let chart = chart_at(s, &ScalarField::zeros(s.domain.grid), PI / 16.0).unwrap();
            let inv = ChartInverse { chart: &chart };
            for p in [[0.3, 0.1], [0.7, 0.5], [0.05, 0.6]] {
                let p = if s.info.kind == SectorKind::Hyperbolic { [p[1] - 0.5, p[0] + 0.3] } else { p };
                let xi = inv.xi(p);
                let back = inv.xbar(xi).unwrap();
                assert!((back[0] - p[0]).abs() < 1e-12 && back[1] == p[1], "{p:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn bookkeeping_is_exact() {
        let (st, _) = setups(33);
        let sched = desk();
        for s in st.iter().filter(|s| s.info.label == "E1" || s.info.label == "H1") {
            let ctx = RegionContext::new(s, RegionOptions::default(), sched.delta).unwrap();
            let mut state = IterationState::initial(ctx.phi0.clone());
            let mut sum_u = ScalarField::zeros(s.domain.grid);
            let mut sum_e = ScalarField::zeros(s.domain.grid);
            for _ in 0..3 {
                let (next, log) = step(&ctx, &sched, &state, None).unwrap();
                assert!(log.identity <= 1e-8, "{}: identity {:.3e}", s.info.label, log.identity);
                sum_u = sum_u.add(&next.u);
                assert_eq!(next.big_e.data, sum_e.data, "E_n is the sum of the earlier e_i");
                sum_e = sum_e.add(&next.e);
                assert_eq!(next.w.data, sum_u.data);
                state = next;
            }
        }
    }

    #[test]
    fn m1_residual_drops_in_every_sector() {
        let (st, d) = setups(65);
        let sched = desk();
        let sol = solve_regions(&st, &d.sectors, &sched, RegionOptions::default()).unwrap();
        assert_eq!(sol.runs.len(), 4);
        for run in &sol.runs {
            let red = run.log.reduction();
            assert!(!run.failed, "{}: divergence guard", run.label);
            assert!(red <= 0.1, "{}: reduction {red:.3e}", run.label);
            assert!(run.log.steps.len() <= 10);
            assert!(run.log.steps.iter().all(|s| s.identity <= 1e-6));
            assert!(run.log.steps[0].identity <= 1e-8);
        }
        assert_eq!(sol.patch.interfaces.len(), 4);
        for j in &sol.patch.interfaces {
            assert!(j.samples > 0, "{}: no samples", j.curve);
            assert!(j.value_jump.is_finite() && j.grad_jump.is_finite());
        }
    }

    #[test]
    fn zero_solutions_patch_with_zero_jumps() {
        let (st, d) = setups(33);
        let runs: Vec<RegionRun> = st
            .iter()
            .map(|s| {
                let ctx = RegionContext::new(s, RegionOptions::default(), PI / 16.0).unwrap();
                RegionRun {
                    label: s.info.label.clone(),
                    kind: s.info.kind,
                    map: s.map,
                    w: ScalarField::zeros(s.domain.grid),
                    log: ConvergenceLog::default(),
                    best: 0,
                    failed: false,
                    mask: s.mask.clone(),
                    eval: ctx.eval,
                    sigma_c: ctx.sigma_c,
                    warnings: vec![],
                    layers: vec![],
                }
            })
            .collect();
        let rep = patch_solutions(&runs, &d.sectors, 32);
        assert_eq!(rep.interfaces.len(), 4);
        for j in &rep.interfaces {
            assert_eq!((j.value_jump, j.grad_jump, j.value_jump_rel), (0.0, 0.0, 0.0));
        }
        rep.check(10.0).unwrap();
        let glob = global_field(&runs, &d.sectors, Grid::square(1.0, 17).unwrap());
        assert_eq!(glob.max_abs(), 0.0);
    }

    #[test]
    fn patch_check_names_the_curve() {
        let rep = PatchReport {
            h: 0.1,
            interfaces: vec![InterfaceJump {
                curve: "Y1".into(),
                sides: ["E1".into(), "H1".into()],
                angle: 0.0,
                value_jump: 0.5,
                grad_jump: 0.0,
                value_jump_rel: 0.0,
                grad_jump_rel: 0.0,
                samples: 3,
            }],
        };
        match rep.check(10.0) {
            Err(Error::Patch { curve, .. }) => assert_eq!(curve, "Y1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let log = ConvergenceLog {
            label: "E1".into(),
            initial: 1.0,
            steps: vec![StepLog {
                n: 0,
                mu: 1.0,
                theta: 0.0,
                u_norms: [1.0, 2.0, 3.0],
                phi_sup: 0.5,
                phi_h2: 0.6,
                e_split: [0.0; 4],
                identity: 1e-16,
            }],
        };
        let mut out = vec![];
        log.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("n,mu,theta,u_0,u_2,u_4,phi_sup"));
        assert_eq!(lines[2].split(',').count(), 13);
        assert!((log.reduction() - 0.5).abs() < 1e-15);
    }
}
