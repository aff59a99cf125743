//! Regularized degenerate Cauchy problem on `{h(x) < y < Y}`:
//! `(K_theta u_x)_x + u_yy + C u_x + D u_y = f` with `u = phi`, `u_y = psi` on `y = h(x)`,
//! where `K_theta = K - theta < 0`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Accuracy, Axis, Grid, LineStencil, ScalarField, diff_axis};
use crate::regions::cutoff;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Data on `y = h(x)`, marching towards larger `y`.
    Up,
    /// Data on `y = y0 + y1 - h(x)`, marching towards smaller `y`.
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Substeps {
    /// Smallest number of marching layers per grid row that satisfies the CFL bound.
    Auto,
    Fixed(usize),
}

#[derive(Clone, Debug)]
pub struct HyperbolicProblem {
    pub grid: Grid,
    /// Bottom curve sampled at the grid columns.
    pub h: Vec<f64>,
    pub kbar: ScalarField,
    pub cbar: ScalarField,
    pub dbar: ScalarField,
    pub theta: f64,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Order of vanishing of the data at the origin (bookkeeping only).
    pub alpha0: usize,
    /// Number of `y`-derivatives of the equation matched by the data extension.
    pub order: usize,
    /// Coefficient of the `u_xxy` damping term.
    pub dissipation: f64,
    pub substeps: Substeps,
    pub direction: Direction,
    /// Accuracy of `x`-derivatives in the data extension.
    pub jet_accuracy: Accuracy,
}

impl HyperbolicProblem {
    /// Zero Cauchy data, extension order 2, default damping.
    pub fn new(
        grid: Grid,
        h: impl Fn(f64) -> f64,
        kbar: ScalarField,
        cbar: ScalarField,
        dbar: ScalarField,
        theta: f64,
    ) -> Result<HyperbolicProblem> {
        kbar.check_same(&cbar)?;
        kbar.check_same(&dbar)?;
        if grid != kbar.grid {
            return Err(Error::GridMismatch);
        }
        let h: Vec<f64> = (0..grid.nx).map(|i| h(grid.x(i))).collect();
        let mut p = HyperbolicProblem {
            grid,
            phi: vec![0.0; grid.nx],
            psi: vec![0.0; grid.nx],
            h,
            kbar,
            cbar,
            dbar,
            theta,
            alpha0: 0,
            order: 2,
            dissipation: 0.0,
            substeps: Substeps::Auto,
            direction: Direction::Up,
            jet_accuracy: Accuracy::Second,
        };
        p.dissipation = p.default_dissipation();
        Ok(p)
    }

    /// Coefficients from closures on the grid.
    pub fn from_fn(
        grid: Grid,
        h: impl Fn(f64) -> f64,
        kbar: impl Fn(f64, f64) -> f64,
        cbar: impl Fn(f64, f64) -> f64,
        dbar: impl Fn(f64, f64) -> f64,
        theta: f64,
    ) -> Result<HyperbolicProblem> {
        HyperbolicProblem::new(
            grid,
            h,
            ScalarField::from_fn(grid, kbar),
            ScalarField::from_fn(grid, cbar),
            ScalarField::from_fn(grid, dbar),
            theta,
        )
    }

    pub fn kbar_theta(&self) -> ScalarField {
        self.kbar.map(|k| k - self.theta)
    }

    /// `1/4 dy |C|_inf` with `dy` the marching step.
    pub fn default_dissipation(&self) -> f64 {
        let m = self.marching_substeps().unwrap_or(1);
        0.25 * self.grid.hy / m as f64 * self.cbar.max_abs_masked(&self.mask())
    }

    /// Nodes with `y >= h(x)` in the marching orientation.
    pub fn mask(&self) -> Vec<bool> {
        let g = self.grid;
        let tol = 1e-9 * g.hy;
        (0..g.len())
            .map(|k| {
                let i = k % g.nx;
                let j = k / g.nx;
                let y = match self.direction {
                    Direction::Up => g.y(j),
                    Direction::Down => g.y0 + g.y1 - g.y(j),
                };
                y >= self.h[i] - tol
            })
            .collect()
    }

    fn max_speed(&self) -> f64 {
        let kt = self.kbar_theta();
        self.mask().iter().zip(&kt.data).filter(|(m, _)| **m).map(|(_, k)| k.abs().sqrt()).fold(0.0, f64::max)
    }

    fn cfl_ok(&self, m: usize) -> bool {
        let c = self.max_speed();
        self.grid.hy / m as f64 * c <= self.grid.hx * (1.0 + 1e-12)
    }

    /// Marching layers per grid row.
    pub fn marching_substeps(&self) -> Result<usize> {
        match self.substeps {
            Substeps::Fixed(m) => {
                if m == 0 || !self.cfl_ok(m) {
                    return Err(Error::Cfl {
                        dy: self.grid.hy / m.max(1) as f64,
                        limit: self.grid.hx / self.max_speed(),
                    });
                }
                Ok(m)
            }
            Substeps::Auto => {
                let c = self.max_speed();
                let m = ((self.grid.hy * c / self.grid.hx) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                Ok(m)
            }
        }
    }

    /// `K_theta < 0` on the domain, up to `tol` relative to `max |K|`.
    pub fn check(&self) -> Result<()> {
        let kt = self.kbar_theta();
        let mask = self.mask();
        let scale = kt.max_abs_masked(&mask).max(1e-300);
        for (k, (&m, &v)) in mask.iter().zip(&kt.data).enumerate() {
            if m && (v > 1e-12 * scale || !v.is_finite()) {
                let (x, y) = self.grid.point(k);
                return Err(Error::Consistency(format!("K_theta = {v:.3e} >= 0 at ({x:.4}, {y:.4})")));
            }
        }
        Ok(())
    }

    /// Rows reversed, so that a `Down` problem becomes an `Up` one.
    fn flipped(&self) -> HyperbolicProblem {
        let flip = |f: &ScalarField, s: f64| {
            let g = f.grid;
            let mut out = f.clone();
            for j in 0..g.ny {
                for i in 0..g.nx {
                    out.set(i, j, s * f.at(i, g.ny - 1 - j));
                }
            }
            out
        };
        let direction = match self.direction {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        };
        HyperbolicProblem {
            kbar: flip(&self.kbar, 1.0),
            cbar: flip(&self.cbar, 1.0),
            dbar: flip(&self.dbar, -1.0),
            psi: self.psi.iter().map(|v| -v).collect(),
            direction,
            ..self.clone()
        }
    }
}

fn flip_rows(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let mut out = f.clone();
    for j in 0..g.ny {
        out.data[j * g.nx..(j + 1) * g.nx].copy_from_slice(&f.data[(g.ny - 1 - j) * g.nx..(g.ny - j) * g.nx]);
    }
    out
}

/// `theta = max (|Phi| + |grad Phi|)` over the mask and `K - theta`.
pub fn regularize(kbar: &ScalarField, residual: &ScalarField, mask: &[bool]) -> (ScalarField, f64) {
    let dx = diff_axis(residual, Axis::X, 1, Accuracy::Fourth);
    let dy = diff_axis(residual, Axis::Y, 1, Accuracy::Fourth);
    let theta = (0..residual.data.len())
        .filter(|&k| mask[k])
        .map(|k| residual.data[k].abs() + dx.data[k].hypot(dy.data[k]))
        .fold(0.0, f64::max);
    (kbar.map(|k| k - theta), theta)
}

/// Smallest `M` with `C <= M |K_theta|` on the mask.
pub fn check_levi(cbar: &ScalarField, kbar_theta: &ScalarField, mask: &[bool]) -> Result<f64> {
    cbar.check_same(kbar_theta)?;
    let mut m = 0.0f64;
    for k in 0..cbar.data.len() {
        let c = cbar.data[k];
        if !mask[k] || c <= 0.0 {
            continue;
        }
        let kt = kbar_theta.data[k];
        if kt >= 0.0 {
            return Err(Error::Levi);
        }
        m = m.max(c / kt.abs());
    }
    if m.is_finite() { Ok(m) } else { Err(Error::Levi) }
}

fn diff_line(v: &[f64], h: f64, deriv: usize, acc: Accuracy) -> Vec<f64> {
    let st = LineStencil::new(v.len(), deriv, acc);
    let s = h.powi(deriv as i32).recip();
    (0..v.len())
        .map(|i| st.weights[i].iter().enumerate().map(|(k, w)| w * v[st.start[i] + k]).sum::<f64>() * s)
        .collect()
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Boundary jet of the extended data: `b[t][i]` is `d_y^t eta` at `(x_i, h(x_i))`.
#[derive(Clone, Debug)]
pub struct CauchyExtension {
    pub grid: Grid,
    pub h: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    /// Cutoff width in `y - h(x)`.
    pub width: f64,
}

impl CauchyExtension {
    /// `eta(x_i, y)`.
    pub fn eval(&self, i: usize, y: f64) -> f64 {
        let s = y - self.h[i];
        let mut v = 0.0;
        let mut p = 1.0;
        for (t, bt) in self.b.iter().enumerate() {
            if t > 0 {
                p *= s / t as f64;
            }
            v += bt[i] * p;
        }
        v * cutoff(s.abs(), self.width)
    }

    pub fn field(&self) -> ScalarField {
        let g = self.grid;
        ScalarField { grid: g, data: (0..g.len()).map(|k| self.eval(k % g.nx, g.y(k / g.nx))).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.b.iter().all(|r| r.iter().all(|v| *v == 0.0))
    }
}

/// Values of `d_y^r F` on the bottom curve for `r < n`.
fn boundary_derivs(f: &ScalarField, h: &[f64], n: usize) -> Vec<Vec<f64>> {
    let g = f.grid;
    (0..n)
        .map(|r| {
            let d = if r == 0 { f.clone() } else { diff_axis(f, Axis::Y, r, Accuracy::Fourth) };
            (0..g.nx).map(|i| d.interp_cubic(g.x(i), h[i].clamp(g.y0, g.y1))).collect()
        })
        .collect()
}

/// Prescribe `d_y^t eta` on `y = h(x)` for `t <= q + 1` so that `eta = phi`, `eta_y = psi` and
/// `d_y^t (f - L_theta eta) = 0` there for `t < q`.
pub fn extend_cauchy_data(
    phi: &[f64],
    psi: &[f64],
    f: &ScalarField,
    p: &HyperbolicProblem,
    q: usize,
) -> Result<CauchyExtension> {
    let g = p.grid;
    if phi.len() != g.nx || psi.len() != g.nx || f.grid != g {
        return Err(Error::GridMismatch);
    }
    let acc = p.jet_accuracy;
    let hx = g.hx;
    let d = |v: &[f64]| diff_line(v, hx, 1, acc);
    let hp = d(&p.h);
    let kt = p.kbar_theta();
    let kx = diff_axis(&kt, Axis::X, 1, Accuracy::Fourth);
    let kxc = kx.add(&p.cbar);
    let kb = boundary_derivs(&kt, &p.h, q);
    let kcb = boundary_derivs(&kxc, &p.h, q);
    let db = boundary_derivs(&p.dbar, &p.h, q);
    let fb = boundary_derivs(f, &p.h, q);
    let mut b = vec![phi.to_vec(), psi.to_vec()];
    // e[s] = d_x d_y^s eta on the curve, defined once b[s + 1] is known.
    let e_of = |b: &Vec<Vec<f64>>, s: usize| -> Vec<f64> {
        let db = d(&b[s]);
        (0..g.nx).map(|i| db[i] - hp[i] * b[s + 1][i]).collect()
    };
    // fx[s] = d_x^2 d_y^s eta on the curve, defined once b[s + 2] is known.
    let f_of = |b: &Vec<Vec<f64>>, s: usize| -> Vec<f64> {
        let es = e_of(b, s);
        let des = d(&es);
        let es1 = e_of(b, s + 1);
        (0..g.nx).map(|i| des[i] - hp[i] * es1[i]).collect()
    };
    let scale = kt.max_abs().max(1.0);
    for t in 0..q {
        let et = e_of(&b, t);
        let det = d(&et);
        let db1 = d(&b[t + 1]);
        let mut next = vec![0.0; g.nx];
        for i in 0..g.nx {
            let lead = 1.0 + kb[0][i] * hp[i] * hp[i];
            if lead.abs() < 1e-8 * scale {
                return Err(Error::JetBlowUp(t + 2));
            }
            // K F_t without its b[t + 2] part.
            next[i] = fb[t][i] - kb[0][i] * (det[i] - hp[i] * db1[i]);
        }
        for r in 1..=t {
            let fs = f_of(&b, t - r);
            for i in 0..g.nx {
                next[i] -= binom(t, r) * kb[r][i] * fs[i];
            }
        }
        for r in 0..=t {
            let es = e_of(&b, t - r);
            for i in 0..g.nx {
                next[i] -= binom(t, r) * (kcb[r][i] * es[i] + db[r][i] * b[t - r + 1][i]);
            }
        }
        for i in 0..g.nx {
            next[i] /= 1.0 + kb[0][i] * hp[i] * hp[i];
        }
        b.push(next);
    }
    if b.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::JetBlowUp(b.len() - 1));
    }
    Ok(CauchyExtension { grid: g, h: p.h.clone(), b, width: 0.5 * (g.y1 - g.y0) })
}

/// One line of the marching log.
#[derive(Clone, Copy, Debug)]
pub struct LayerLog {
    pub layer: usize,
    pub y: f64,
    pub max_abs: f64,
    pub energy: f64,
    /// Energy over the energy of the previous layer (1 when both vanish).
    pub ratio: f64,
}

pub fn write_layer_csv(log: &[LayerLog], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "layer,y,max_abs,energy,energy_ratio")?;
    for l in log {
        writeln!(w, "{},{:e},{:e},{:e},{:e}", l.layer, l.y, l.max_abs, l.energy, l.ratio)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct HyperbolicSolution {
    pub u: ScalarField,
    pub mask: Vec<bool>,
    pub substeps: usize,
    pub extension: CauchyExtension,
    pub layers: Vec<LayerLog>,
}

/// Leapfrog marching from the bottom curve.
///
/// Nodes whose stencil `(i, l-2), (i-1..=i+1, l-1)` lies inside the closed domain are marched;
/// the remaining domain nodes take the extended data.
pub fn solve_hyperbolic(p: &HyperbolicProblem, f: &ScalarField) -> Result<HyperbolicSolution> {
    if p.direction == Direction::Down {
        let q = p.flipped();
        let mut s = solve_hyperbolic(&q, &flip_rows(f))?;
        s.u = flip_rows(&s.u);
        let g = s.u.grid;
        let mut mask = s.mask.clone();
        for j in 0..g.ny {
            mask[j * g.nx..(j + 1) * g.nx].copy_from_slice(&s.mask[(g.ny - 1 - j) * g.nx..(g.ny - j) * g.nx]);
        }
        s.mask = mask;
        return Ok(s);
    }
    if f.grid != p.grid {
        return Err(Error::GridMismatch);
    }
    p.check()?;
    check_levi(&p.cbar, &p.kbar_theta(), &p.mask())?;
    let m = p.marching_substeps()?;
    march(p, f, m)
}

fn march(p: &HyperbolicProblem, f: &ScalarField, m: usize) -> Result<HyperbolicSolution> {
    let g = p.grid;
    let nx = g.nx;
    let mask = p.mask();
    let ext = extend_cauchy_data(&p.phi, &p.psi, f, p, p.order)?;
    let kt = p.kbar_theta();
    let dy = g.hy / m as f64;
    let dx = g.hx;
    let tol = 1e-9 * dy;
    let nl = (g.ny - 1) * m + 1;
    let inside = |i: usize, y: f64| y >= p.h[i] - tol;
    let row_at = |fld: &ScalarField, l: usize| -> Vec<f64> {
        let j = l / m;
        let t = (l % m) as f64 / m as f64;
        (0..nx)
            .map(|i| if t == 0.0 { fld.at(i, j) } else { (1.0 - t) * fld.at(i, j) + t * fld.at(i, j + 1) })
            .collect()
    };
    let fmax = f.max_abs_masked(&mask);
    let mut u = ScalarField::zeros(g);
    let mut layers = Vec::with_capacity(nl);
    let mut prev2 = vec![0.0; nx];
    let mut prev = vec![0.0; nx];
    let mut peak = 0.0f64;
    let mut last_energy = 0.0;
    let nu = p.dissipation;
    for l in 0..nl {
        let y = g.y0 + l as f64 * dy;
        let mut cur = vec![0.0; nx];
        let (kr, cr, dr, fr) = if l >= 1 {
            (row_at(&kt, l - 1), row_at(&p.cbar, l - 1), row_at(&p.dbar, l - 1), row_at(f, l - 1))
        } else {
            (vec![], vec![], vec![], vec![])
        };
        for i in 0..nx {
            if !inside(i, y) {
                continue;
            }
            let active = l >= 2
                && i >= 1
                && i + 1 < nx
                && inside(i, y - 2.0 * dy)
                && inside(i - 1, y - dy)
                && inside(i + 1, y - dy);
            if !active {
                cur[i] = ext.eval(i, y);
                continue;
            }
            let kp = 0.5 * (kr[i] + kr[i + 1]);
            let km = 0.5 * (kr[i] + kr[i - 1]);
            let flux = (kp * (prev[i + 1] - prev[i]) - km * (prev[i] - prev[i - 1])) / (dx * dx);
            let ux = (prev[i + 1] - prev[i - 1]) / (2.0 * dx);
            let mut rhs = fr[i] - flux - cr[i] * ux;
            if nu != 0.0 {
                let lap = |v: &[f64]| v[i + 1] - 2.0 * v[i] + v[i - 1];
                rhs += nu * (lap(&prev) - lap(&prev2)) / (dx * dx * dy);
            }
            let a = 0.5 * dy * dr[i];
            cur[i] = (2.0 * prev[i] - (1.0 - a) * prev2[i] + dy * dy * rhs) / (1.0 + a);
        }
        let max_abs = cur.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let energy = if l >= 1 {
            let kl = row_at(&kt, l);
            (0..nx)
                .filter(|&i| inside(i, y))
                .map(|i| {
                    let uy = (cur[i] - prev[i]) / dy;
                    let ux = if i + 1 < nx { (cur[i + 1] - cur[i]) / dx } else { 0.0 };
                    (uy * uy + kl[i].abs() * ux * ux) * dx
                })
                .sum()
        } else {
            0.0
        };
        let ratio = if last_energy > 0.0 {
            energy / last_energy
        } else if energy == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
        if l >= 2 {
            let bound = peak + y * y * fmax;
            if bound > 0.0 && max_abs > 10.0 * bound || !max_abs.is_finite() {
                return Err(Error::Unstable(l));
            }
        }
        peak = peak.max(max_abs);
        last_energy = energy;
        layers.push(LayerLog { layer: l, y, max_abs, energy, ratio });
        if l % m == 0 {
            let j = l / m;
            u.data[j * nx..(j + 1) * nx].copy_from_slice(&cur);
        }
        prev2 = prev;
        prev = cur;
    }
    Ok(HyperbolicSolution { u, mask, substeps: m, extension: ext, layers })
}

/// `L_theta u` with second-order differences, conservative in `x`.
pub fn apply_theta(p: &HyperbolicProblem, u: &ScalarField) -> ScalarField {
    let kt = p.kbar_theta();
    let ux = diff_axis(u, Axis::X, 1, Accuracy::Second);
    let flux = kt.mul(&ux);
    let fx = diff_axis(&flux, Axis::X, 1, Accuracy::Second);
    let uyy = diff_axis(u, Axis::Y, 2, Accuracy::Second);
    let uy = diff_axis(u, Axis::Y, 1, Accuracy::Second);
    ScalarField {
        grid: u.grid,
        data: (0..u.data.len())
            .map(|k| fx.data[k] + uyy.data[k] + p.cbar.data[k] * ux.data[k] + p.dbar.data[k] * uy.data[k])
            .collect(),
    }
}

/// `(L_theta u, -b u_y) / ||u||_{(1,1)}^2` with `b = exp(-lambda y) / K_theta`, summed over the mask.
pub fn check_energy(u: &ScalarField, p: &HyperbolicProblem, lambda: f64) -> Result<f64> {
    if u.grid != p.grid {
        return Err(Error::GridMismatch);
    }
    let mask = p.mask();
    if u.max_abs_masked(&mask) == 0.0 {
        return Err(Error::ZeroField);
    }
    let lu = apply_theta(p, u);
    let ux = diff_axis(u, Axis::X, 1, Accuracy::Second);
    let uy = diff_axis(u, Axis::Y, 1, Accuracy::Second);
    let kt = p.kbar_theta();
    let g = u.grid;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..g.len() {
        if !mask[k] {
            continue;
        }
        let y = g.point(k).1;
        let y = if p.direction == Direction::Up { y - g.y0 } else { g.y1 - y };
        let b = (-lambda * y).exp() / kt.data[k];
        let s = if p.direction == Direction::Up { 1.0 } else { -1.0 };
        num += lu.data[k] * (-b * s * uy.data[k]);
        den += u.data[k].powi(2) + ux.data[k].powi(2) + uy.data[k].powi(2);
    }
    Ok(num / den)
}
