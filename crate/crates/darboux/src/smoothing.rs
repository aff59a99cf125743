//! Weighted norms, spectral smoothing operators and the sector extension operator.

use crate::error::{Error, Result};
use crate::grid::{Accuracy, Axis, Grid, ScalarField, cubic_stencil, diff_axis, fd_weights};
use crate::regions::SectorKind;
use rustfft::FftPlanner;
use rustfft::num_complex::Complex64;

/// Smooth transition: 0 for `t <= 0`, 1 for `t >= 1`, flat to all orders at both ends.
pub fn smooth_step(t: f64) -> f64 {
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = f(t);
        a / (a + f(1.0 - t))
    }
}

/// Radial Fourier multiplier: 1 on `|s| <= 1`, 0 on `|s| >= 2`.
pub fn chi_hat(s: f64) -> f64 {
    smooth_step(2.0 - s)
}

/// Origin cutoff: 0 on `r <= 1/2`, 1 on `r >= 1`.
pub fn eta(r: f64) -> f64 {
    smooth_step(2.0 * r - 1.0)
}

/// Parameters of `||u||^2_(m,l,gamma) = sum lambda^-s r^(2s - gamma) (d_r^s d_t^t u)^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedNormSpec {
    pub m: usize,
    pub l: usize,
    pub gamma: f64,
    pub lambda: f64,
}

fn index_set(m: usize, l: usize) -> Vec<(usize, usize)> {
    let top = m.max(l);
    let mut v = Vec::new();
    for s in 0..=m {
        for t in 0..=l {
            if s + t <= top {
                v.push((s, t));
            }
        }
    }
    v
}

/// Polar grid in the field convention: first axis `r`, second axis `theta`.
pub fn polar_grid(r0: f64, r1: f64, delta: f64, nr: usize, nt: usize) -> Grid {
    Grid::unchecked(r0, r1, 0.0, delta, nr, nt)
}

fn trap(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// Polar weighted norm with measure `dr dtheta`; `u` lives on a `polar_grid`.
///
/// Nodes at `r = 0` are excluded. Errors when the innermost ring carries more than 10% of the total.
pub fn weighted_norm(u: &ScalarField, spec: &WeightedNormSpec) -> Result<f64> {
    let g = u.grid;
    let mut total = 0.0;
    let mut ring = vec![0.0; g.nx];
    for (s, t) in index_set(spec.m, spec.l) {
        let mut d = u.clone();
        if s > 0 {
            d = diff_axis(&d, Axis::X, s, Accuracy::Second);
        }
        if t > 0 {
            d = diff_axis(&d, Axis::Y, t, Accuracy::Second);
        }
        let ls = spec.lambda.powi(-(s as i32));
        for i in 0..g.nx {
            let r = g.x(i);
            if r <= 0.0 {
                continue;
            }
            let w = ls * r.powf(2.0 * s as f64 - spec.gamma) * trap(i, g.nx);
            for j in 0..g.ny {
                let v = d.at(i, j);
                let c = w * trap(j, g.ny) * v * v * g.hx * g.hy;
                ring[i] += c;
                total += c;
            }
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    let inner = (0..g.nx).find(|&i| g.x(i) > 0.0).map_or(0.0, |i| ring[i]);
    if inner > 0.1 * total {
        return Err(Error::InsufficientVanishing(100.0 * inner / total));
    }
    Ok(total.sqrt())
}

/// Cartesian weighted norm `sum lambda^-s ||d_x^s d_y^t u||^2` over the same index set.
pub fn cartesian_weighted_norm(u: &ScalarField, m: usize, l: usize, lambda: f64, mask: Option<&[bool]>) -> f64 {
    let mut total = 0.0;
    for (s, t) in index_set(m, l) {
        let d = u.deriv(s, t, Accuracy::Second);
        let n = match mask {
            Some(mk) => d.l2_masked(mk),
            None => d.l2(),
        };
        total += lambda.powi(-(s as i32)) * n * n;
    }
    total.sqrt()
}

fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

fn freq(k: usize, n: usize, h: f64) -> f64 {
    let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    std::f64::consts::TAU * kk / (n as f64 * h)
}

/// Two-dimensional FFT in place, rows of length `nx`.
fn fft2(buf: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    for row in buf.chunks_mut(nx) {
        fx.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = buf[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            buf[j * nx + i] = col[j];
        }
    }
}

/// Convolution with `chi_mu`, computed as a spectral multiplier on a zero-padded copy.
fn spectral_filter(u: &ScalarField, mu: f64) -> ScalarField {
    let g = u.grid;
    let nx = good_size(2 * g.nx);
    let ny = good_size(2 * g.ny);
    let mut buf = vec![Complex64::new(0.0, 0.0); nx * ny];
    for j in 0..g.ny {
        for i in 0..g.nx {
            buf[j * nx + i] = Complex64::new(u.at(i, j), 0.0);
        }
    }
    fft2(&mut buf, nx, ny, false);
    for j in 0..ny {
        let ky = freq(j, ny, g.hy);
        for i in 0..nx {
            let kx = freq(i, nx, g.hx);
            buf[j * nx + i] *= chi_hat(kx.hypot(ky) / mu);
        }
    }
    fft2(&mut buf, nx, ny, true);
    let norm = 1.0 / (nx * ny) as f64;
    ScalarField::from_fn(g, |_, _| 0.0).with_data(|k| {
        let (i, j) = (k % g.nx, k / g.nx);
        buf[j * nx + i].re * norm
    })
}

impl ScalarField {
    fn with_data(mut self, f: impl Fn(usize) -> f64) -> ScalarField {
        for (k, v) in self.data.iter_mut().enumerate() {
            *v = f(k);
        }
        self
    }
}

/// `S_mu u = eta(mu x) (chi_mu * u)` for a field already extended past the region of interest.
pub fn smooth(u: &ScalarField, mu: f64) -> Result<ScalarField> {
    let f = smooth_plain(u, mu)?;
    let g = f.grid;
    Ok(f.with_data_from(|k, v| {
        let (x, y) = g.point(k);
        v * eta(mu * x.hypot(y))
    }))
}

/// `S'_mu u = chi_mu * u`.
pub fn smooth_plain(u: &ScalarField, mu: f64) -> Result<ScalarField> {
    if !(mu >= 1.0) {
        return Err(Error::Mu(mu));
    }
    Ok(spectral_filter(u, mu))
}

impl ScalarField {
    fn with_data_from(mut self, f: impl Fn(usize, f64) -> f64) -> ScalarField {
        for (k, v) in self.data.iter_mut().enumerate() {
            *v = f(k, *v);
        }
        self
    }
}

/// The kernel `chi_mu` sampled on `grid` (centred at the origin), by inverse transform.
pub fn kernel(grid: Grid, mu: f64) -> ScalarField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut buf = vec![Complex64::new(0.0, 0.0); nx * ny];
    for j in 0..ny {
        let ky = freq(j, ny, grid.hy);
        for i in 0..nx {
            let kx = freq(i, nx, grid.hx);
            buf[j * nx + i] = Complex64::new(chi_hat(kx.hypot(ky) / mu), 0.0);
        }
    }
    fft2(&mut buf, nx, ny, true);
    let scale = 1.0 / (nx as f64 * grid.hx * ny as f64 * grid.hy);
    let (oi, oj) = grid.origin_index();
    ScalarField::zeros(grid).with_data(|k| {
        let (i, j) = (k % nx, k / nx);
        // Index relative to the origin node, wrapped onto the periodic transform grid.
        let a = (i + nx - oi) % nx;
        let b = (j + ny - oj) % ny;
        buf[b * nx + a].re * scale
    })
}

/// Moments `int x^a y^b chi` for `a + b <= order`, by the rectangle rule.
pub fn kernel_moments(k: &ScalarField, order: usize) -> Vec<(usize, usize, f64)> {
    let g = k.grid;
    let mut out = Vec::new();
    for tot in 0..=order {
        for a in 0..=tot {
            let b = tot - a;
            let mut s = 0.0;
            for (idx, v) in k.data.iter().enumerate() {
                let (x, y) = g.point(idx);
                s += x.powi(a as i32) * y.powi(b as i32) * v;
            }
            out.push((a, b, s * g.hx * g.hy));
        }
    }
    out
}

/// Hestenes coefficients for images at `lambda = 1/3, 2/3, 1`; they match values and two
/// derivatives across the reflection line.
const INNER_LAMBDA: [f64; 3] = [1.0 / 3.0, 2.0 / 3.0, 1.0];
const INNER_COEF: [f64; 3] = [15.0, -24.0, 10.0];
/// Classical coefficients for images at `lambda = 1, 2, 3`.
const OUTER_LAMBDA: [f64; 3] = [1.0, 2.0, 3.0];
const OUTER_COEF: [f64; 3] = [6.0, -8.0, 3.0];

/// Lagrange interpolation of `f(m)` for integer `m` in `[lo, hi]` at real `t`.
fn line_interp(f: &impl Fn(i64) -> f64, lo: i64, hi: i64, t: f64) -> f64 {
    let n = (hi - lo + 1).clamp(0, 4);
    if n == 0 {
        return 0.0;
    }
    let start = ((t.floor() as i64) - 1).clamp(lo, hi - n + 1);
    let xs: Vec<f64> = (0..n).map(|k| (start + k) as f64).collect();
    let w = fd_weights(t, &xs, 0);
    (0..n).map(|k| w[k as usize] * f(start + k)).sum()
}

/// Extend a field from the normal-form sector to its whole bounding box.
///
/// Each outside node is reflected across the nearest straight edge through the origin along the
/// edge normal, with images at fractions `1/3, 2/3, 1` of the mirror distance. Constants and
/// quadratics are reproduced exactly; the extension is C^2 across the edges. Needs `hx == hy`.
pub fn extend_sector(u: &ScalarField, kind: SectorKind) -> Result<ScalarField> {
    let g = u.grid;
    if (g.hx - g.hy).abs() > 1e-12 * g.hx {
        return Err(Error::Domain("sector extension needs equal spacing".into()));
    }
    let (oi, oj) = g.origin_index();
    let inside = |x: i64, y: i64| -> bool {
        let (i, j) = (x + oi as i64, y + oj as i64);
        i >= 0 && j >= 0 && (i as usize) < g.nx && (j as usize) < g.ny
    };
    let in_domain = |x: i64, y: i64| -> bool {
        inside(x, y)
            && match kind {
                SectorKind::Elliptic => y <= x && y >= 0,
                SectorKind::Hyperbolic => x.abs() <= y,
            }
    };
    let val = |x: i64, y: i64| u.at((x + oi as i64) as usize, (y + oj as i64) as usize);
    let mut out = u.clone();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (x, y) = (i as i64 - oi as i64, j as i64 - oj as i64);
            if in_domain(x, y) {
                continue;
            }
            // Edge functional e >= 0 inside, and candidate directions into the domain: the edge
            // normal first, then the two axis directions that cross the same edge.
            let (e, dirs): ((i64, i64), [(i64, i64); 3]) = match kind {
                SectorKind::Elliptic => {
                    if y > x {
                        ((1, -1), [(1, -1), (0, -1), (1, 0)])
                    } else {
                        return Err(Error::Domain("elliptic box must be [0, s]^2".into()));
                    }
                }
                SectorKind::Hyperbolic => {
                    if x > 0 {
                        ((-1, 1), [(-1, 1), (0, 1), (-1, 0)])
                    } else {
                        ((1, 1), [(1, 1), (0, 1), (1, 0)])
                    }
                }
            };
            let s = e.0 * x + e.1 * y;
            let mut best: Option<(i64, i64, f64, (i64, i64))> = None;
            for (k, n) in dirs.iter().enumerate() {
                let mc = -(s as f64) / (e.0 * n.0 + e.1 * n.1) as f64;
                let lo = (mc - 1e-9).ceil() as i64;
                if !in_domain(x + lo * n.0, y + lo * n.1) {
                    continue;
                }
                let mut hi = lo;
                while in_domain(x + (hi + 1) * n.0, y + (hi + 1) * n.1) {
                    hi += 1;
                }
                let better = match best {
                    None => true,
                    Some((blo, bhi, _, _)) => (hi - lo).min(3) > (bhi - blo).min(3),
                };
                if better {
                    best = Some((lo, hi, mc, *n));
                }
                if k == 0 && hi - lo >= 3 {
                    break;
                }
            }
            let Some((lo, hi, mc, n)) = best else {
                return Err(Error::Domain("reflection line misses the sector".into()));
            };
            let f = |m: i64| val(x + m * n.0, y + m * n.1);
            let mut v = 0.0;
            for (c, l) in INNER_COEF.iter().zip(INNER_LAMBDA) {
                v += c * line_interp(&f, lo, hi, mc * (1.0 + l));
            }
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Pad a box field by `p` cells per side: Hestenes reflection across each edge (images at
/// `1, 2, 3` times the distance) times a cutoff that vanishes at the outer edge.
pub fn pad(u: &ScalarField, p: usize) -> ScalarField {
    let g = u.grid;
    let p = p.min((g.nx - 1) / 3).min((g.ny - 1) / 3);
    let ng = Grid::unchecked(
        g.x0 - p as f64 * g.hx,
        g.x1 + p as f64 * g.hx,
        g.y0 - p as f64 * g.hy,
        g.y1 + p as f64 * g.hy,
        g.nx + 2 * p,
        g.ny + 2 * p,
    );
    let cut = |d: usize| 1.0 - smooth_step((d as f64 / p as f64 - 0.25) / 0.75);
    let ext = |line: &dyn Fn(usize) -> f64, n: usize, k: i64| -> f64 {
        // k is the index in the padded line, original indices 0..n.
        let i = k - p as i64;
        if i >= 0 && (i as usize) < n {
            return line(i as usize);
        }
        let (d, edge, dir) = if i < 0 { ((-i) as usize, 0i64, 1i64) } else { ((i as usize) - (n - 1), n as i64 - 1, -1i64) };
        let mut v = 0.0;
        for (c, l) in OUTER_COEF.iter().zip(OUTER_LAMBDA) {
            v += c * line((edge + dir * (l as i64) * d as i64) as usize);
        }
        v * cut(d)
    };
    // Rows first, then columns of the row-extended array.
    let mut tmp = vec![0.0; ng.nx * g.ny];
    for j in 0..g.ny {
        let row = |i: usize| u.at(i, j);
        for k in 0..ng.nx {
            tmp[j * ng.nx + k] = ext(&row, g.nx, k as i64);
        }
    }
    let mut out = ScalarField::zeros(ng);
    for k in 0..ng.nx {
        let col = |j: usize| tmp[j * ng.nx + k];
        for m in 0..ng.ny {
            out.data[m * ng.nx + k] = ext(&col, g.ny, m as i64);
        }
    }
    out
}

/// Restrict a padded field back onto `g` (same spacing, contained).
pub fn restrict(u: &ScalarField, g: Grid) -> ScalarField {
    let ug = u.grid;
    let di = ((g.x0 - ug.x0) / ug.hx).round() as usize;
    let dj = ((g.y0 - ug.y0) / ug.hy).round() as usize;
    ScalarField::zeros(g).with_data(|k| {
        let (i, j) = (k % g.nx, k / g.nx);
        u.at(i + di, j + dj)
    })
}

/// Smooth a sector field: extend to the box, pad, filter, optionally cut off at the origin,
/// and restrict to the box.
///
/// The least-squares affine part over the sector is filtered exactly (`chi_mu * p = p`) and only
/// the remainder goes through the padded transform, so that truncating at the padded edge does
/// not bias slowly varying fields when `mu` is small.
pub fn smooth_sector(w: &ScalarField, kind: SectorKind, mu: f64, with_eta: bool) -> Result<ScalarField> {
    let g = w.grid;
    let affine = sector_affine_fit(w, kind);
    let rest = w.clone().with_data_from(|k, v| {
        let (x, y) = g.point(k);
        v - (affine[0] + affine[1] * x + affine[2] * y)
    });
    let e = extend_sector(&rest, kind)?;
    let p = pad(&e, (g.nx - 1) / 3);
    let s = restrict(&smooth_plain(&p, mu)?, g);
    Ok(s.with_data_from(|k, v| {
        let (x, y) = g.point(k);
        let v = v + affine[0] + affine[1] * x + affine[2] * y;
        if with_eta { v * eta(mu * x.hypot(y)) } else { v }
    }))
}

/// Coefficients `[c, a, b]` of the least-squares fit `c + a x + b y` over the sector nodes.
pub fn sector_affine_fit(w: &ScalarField, kind: SectorKind) -> [f64; 3] {
    let g = w.grid;
    let mut a = vec![vec![0.0; 3]; 3];
    let mut b = vec![0.0; 3];
    for k in 0..g.len() {
        let (x, y) = g.point(k);
        let inside = match kind {
            SectorKind::Elliptic => y >= -1e-12 && y <= x + 1e-12,
            SectorKind::Hyperbolic => x.abs() <= y + 1e-12,
        };
        if !inside {
            continue;
        }
        let phi = [1.0, x, y];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += phi[r] * phi[c];
            }
            b[r] += phi[r] * w.data[k];
        }
    }
    match crate::linalg::solve_dense(&mut a, &mut b) {
        Some(_) => [b[0], b[1], b[2]],
        None => [0.0; 3],
    }
}

/// Largest ratio `||d^a u d^b v||_0 / (|u|_inf ||v||_m + ||u||_m |v|_inf)` over `|a| + |b| = m`.
pub fn measure_gn(u: &ScalarField, v: &ScalarField, m: usize) -> f64 {
    let denom = u.max_abs() * v.sobolev(m, None) + u.sobolev(m, None) * v.max_abs();
    if denom == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for ta in 0..=m {
        let tb = m - ta;
        for a1 in 0..=ta {
            let du = u.deriv(a1, ta - a1, Accuracy::Second);
            for b1 in 0..=tb {
                let dv = v.deriv(b1, tb - b1, Accuracy::Second);
                worst = worst.max(du.mul(&dv).l2() / denom);
            }
        }
    }
    worst
}

/// Sample a field on the box at arbitrary points with clamped cubic stencils.
pub fn sample_cubic(u: &ScalarField, x: f64, y: f64) -> f64 {
    let g = u.grid;
    let (i0, wx) = cubic_stencil((x - g.x0) / g.hx, g.nx);
    let (j0, wy) = cubic_stencil((y - g.y0) / g.hy, g.ny);
    let mut s = 0.0;
    for (b, wb) in wy.iter().enumerate() {
        for (a, wa) in wx.iter().enumerate() {
            s += wa * wb * u.at(i0 + a, j0 + b);
        }
    }
    s
}
