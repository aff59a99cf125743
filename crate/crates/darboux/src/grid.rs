//! Uniform rectangular grids, sampled scalar fields and finite differences.

use crate::error::{Error, Result};
use std::io::Write;

/// Node-centred rectangle `[x0, x1] x [y0, y1]` with `nx * ny` nodes.
///
/// Index `k = j * nx + i`, `i` running along the first coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

impl Grid {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Grid> {
        if nx < 9 || ny < 9 {
            return Err(Error::Grid(format!("need at least 9 nodes per axis, got {nx}x{ny}")));
        }
        if !(x1 > x0) || !(y1 > y0) {
            return Err(Error::Grid("empty rectangle".into()));
        }
        let g = Grid::unchecked(x0, x1, y0, y1, nx, ny);
        let fi = -x0 / g.hx;
        let fj = -y0 / g.hy;
        let on_node = |f: f64, n: usize| f > -1e-9 && f < (n - 1) as f64 + 1e-9 && (f - f.round()).abs() < 1e-7;
        if !on_node(fi, nx) || !on_node(fj, ny) {
            return Err(Error::Grid("origin is not a grid node".into()));
        }
        Ok(g)
    }

    /// Square `[-a, a]^2` with `n` nodes per side (`n` odd keeps the origin on a node).
    pub fn square(a: f64, n: usize) -> Result<Grid> {
        Grid::new(-a, a, -a, a, n, n)
    }

    /// Same as `new` without the origin and size checks; used for padded work arrays.
    pub fn unchecked(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Grid {
        Grid {
            x0,
            x1,
            y0,
            y1,
            nx,
            ny,
            hx: (x1 - x0) / (nx - 1) as f64,
            hy: (y1 - y0) / (ny - 1) as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.hy
    }

    #[inline]
    pub fn point(&self, k: usize) -> (f64, f64) {
        (self.x(k % self.nx), self.y(k / self.nx))
    }

    /// Indices of the node closest to the origin.
    pub fn origin_index(&self) -> (usize, usize) {
        let i = (-self.x0 / self.hx).round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = (-self.y0 / self.hy).round().clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    /// Grid with the same bounds and `2n-1` nodes per axis.
    pub fn refined(&self) -> Grid {
        Grid::unchecked(self.x0, self.x1, self.y0, self.y1, 2 * self.nx - 1, 2 * self.ny - 1)
    }

    pub fn h(&self) -> f64 {
        self.hx.max(self.hy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> ScalarField {
        ScalarField { grid, data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> ScalarField {
        ScalarField { grid, data: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                data.push(f(grid.x(i), y));
            }
        }
        ScalarField { grid, data }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<ScalarField> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(ScalarField { grid, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.grid.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let nx = self.grid.nx;
        self.data[j * nx + i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        debug_assert_eq!(self.grid, other.grid);
        ScalarField {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        self.map(|v| v * s)
    }

    pub fn check_same(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_masked(&self, mask: &[bool]) -> f64 {
        self.data.iter().zip(mask).filter(|(_, &m)| m).fold(0.0, |m, (v, _)| m.max(v.abs()))
    }

    /// Discrete L2 norm with trapezoid weights.
    pub fn l2(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            let wy = if j == 0 || j == g.ny - 1 { 0.5 } else { 1.0 };
            for i in 0..g.nx {
                let wx = if i == 0 || i == g.nx - 1 { 0.5 } else { 1.0 };
                let v = self.at(i, j);
                s += wx * wy * v * v;
            }
        }
        (s * g.hx * g.hy).sqrt()
    }

    pub fn l2_masked(&self, mask: &[bool]) -> f64 {
        let s: f64 = self.data.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v * v).sum();
        (s * self.grid.hx * self.grid.hy).sqrt()
    }

    /// Derivative `d^a/dx^a d^b/dy^b` by repeated one-dimensional stencils.
    pub fn deriv(&self, a: usize, b: usize, acc: Accuracy) -> ScalarField {
        let mut f = self.clone();
        if a > 0 {
            f = diff_axis(&f, Axis::X, a, acc);
        }
        if b > 0 {
            f = diff_axis(&f, Axis::Y, b, acc);
        }
        f
    }

    pub fn dx(&self) -> ScalarField {
        diff_axis(self, Axis::X, 1, Accuracy::Second)
    }
    pub fn dy(&self) -> ScalarField {
        diff_axis(self, Axis::Y, 1, Accuracy::Second)
    }
    pub fn dxx(&self) -> ScalarField {
        diff_axis(self, Axis::X, 2, Accuracy::Second)
    }
    pub fn dyy(&self) -> ScalarField {
        diff_axis(self, Axis::Y, 2, Accuracy::Second)
    }
    pub fn dxy(&self) -> ScalarField {
        diff_axis(&diff_axis(self, Axis::X, 1, Accuracy::Second), Axis::Y, 1, Accuracy::Second)
    }

    /// Sobolev norm `||u||_m` summing all `d^a_x d^b_y`, `a + b <= m`, over masked nodes.
    pub fn sobolev(&self, m: usize, mask: Option<&[bool]>) -> f64 {
        let mut s = 0.0;
        for tot in 0..=m {
            for a in 0..=tot {
                let d = self.deriv(a, tot - a, Accuracy::Second);
                let n = match mask {
                    Some(mk) => d.l2_masked(mk),
                    None => d.l2(),
                };
                s += n * n;
            }
        }
        s.sqrt()
    }

    /// Cubic Lagrange interpolation with stencils clamped to the grid.
    pub fn interp_cubic(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let (i0, wx) = cubic_stencil((x - g.x0) / g.hx, g.nx);
        let (j0, wy) = cubic_stencil((y - g.y0) / g.hy, g.ny);
        let mut s = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            let row = (j0 + b) * g.nx;
            let mut r = 0.0;
            for (a, wxa) in wx.iter().enumerate() {
                r += wxa * self.data[row + i0 + a];
            }
            s += wyb * r;
        }
        s
    }

    pub fn interp_bilinear(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let fx = ((x - g.x0) / g.hx).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((y - g.y0) / g.hy).clamp(0.0, (g.ny - 1) as f64);
        let i = (fx.floor() as usize).min(g.nx - 2);
        let j = (fy.floor() as usize).min(g.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let a = self.at(i, j) * (1.0 - tx) + self.at(i + 1, j) * tx;
        let b = self.at(i, j + 1) * (1.0 - tx) + self.at(i + 1, j + 1) * tx;
        a * (1.0 - ty) + b * ty
    }

    /// Flat binary dump: a text header line followed by little-endian f64 values.
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        let g = &self.grid;
        writeln!(
            w,
            "GRIDDUMP nx={} ny={} hx={:e} hy={:e} bounds={:e},{:e},{:e},{:e}",
            g.nx, g.ny, g.hx, g.hy, g.x0, g.x1, g.y0, g.y1
        )?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump(bytes: &[u8]) -> Result<ScalarField> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Grid("missing header".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Grid("bad header".into()))?;
        let mut nx = 0;
        let mut ny = 0;
        let mut bounds = [0.0; 4];
        for tok in header.split_whitespace().skip(1) {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Grid("bad header token".into()))?;
            let bad = |_| Error::Grid(format!("bad header value {v}"));
            match k {
                "nx" => nx = v.parse().map_err(|_| Error::Grid(v.into()))?,
                "ny" => ny = v.parse().map_err(|_| Error::Grid(v.into()))?,
                "bounds" => {
                    for (b, s) in bounds.iter_mut().zip(v.split(',')) {
                        *b = s.parse().map_err(bad)?;
                    }
                }
                _ => {}
            }
        }
        let body = &bytes[nl + 1..];
        if body.len() != nx * ny * 8 {
            return Err(Error::Grid("payload size does not match header".into()));
        }
        let grid = Grid::unchecked(bounds[0], bounds[1], bounds[2], bounds[3], nx, ny);
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(ScalarField { grid, data })
    }
}

/// Start index and weights of a 4-point Lagrange stencil at fractional index `f`.
pub fn cubic_stencil(f: f64, n: usize) -> (usize, [f64; 4]) {
    let base = (f.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let t = f - base as f64;
    let mut w = [0.0; 4];
    for (a, wa) in w.iter_mut().enumerate() {
        let mut p = 1.0;
        for b in 0..4 {
            if a != b {
                p *= (t - b as f64) / (a as f64 - b as f64);
            }
        }
        *wa = p;
    }
    (base, w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accuracy {
    Second,
    Fourth,
}

impl Accuracy {
    fn order(self) -> usize {
        match self {
            Accuracy::Second => 2,
            Accuracy::Fourth => 4,
        }
    }
}

/// Finite-difference weights for the `m`-th derivative at `z` from nodes `x` (Fornberg).
pub fn fd_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Per-position stencils (start offset and weights for unit spacing) on a line of `n` nodes.
pub struct LineStencil {
    pub start: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

impl LineStencil {
    pub fn new(n: usize, deriv: usize, acc: Accuracy) -> LineStencil {
        let p = acc.order();
        let centred = 2 * ((deriv + 1) / 2) - 1 + p;
        let half = centred / 2;
        let onesided = (deriv + p).min(n);
        let mut start = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let interior: Vec<f64> = {
            let xs: Vec<f64> = (0..centred).map(|k| k as f64).collect();
            fd_weights(half as f64, &xs, deriv)
        };
        for i in 0..n {
            if i >= half && i + half < n && centred <= n {
                start.push(i - half);
                weights.push(interior.clone());
            } else {
                let s = if i < half { 0 } else { n - onesided };
                let xs: Vec<f64> = (0..onesided).map(|k| k as f64).collect();
                start.push(s);
                weights.push(fd_weights((i - s) as f64, &xs, deriv));
            }
        }
        LineStencil { start, weights }
    }
}

pub fn diff_axis(f: &ScalarField, axis: Axis, deriv: usize, acc: Accuracy) -> ScalarField {
    let g = f.grid;
    let mut out = vec![0.0; g.len()];
    match axis {
        Axis::X => {
            let st = LineStencil::new(g.nx, deriv, acc);
            let scale = g.hx.powi(deriv as i32).recip();
            for j in 0..g.ny {
                let row = &f.data[j * g.nx..(j + 1) * g.nx];
                for i in 0..g.nx {
                    let s = st.start[i];
                    let v: f64 = st.weights[i].iter().enumerate().map(|(k, w)| w * row[s + k]).sum();
                    out[j * g.nx + i] = v * scale;
                }
            }
        }
        Axis::Y => {
            let st = LineStencil::new(g.ny, deriv, acc);
            let scale = g.hy.powi(deriv as i32).recip();
            for j in 0..g.ny {
                let s = st.start[j];
                let w = &st.weights[j];
                for i in 0..g.nx {
                    let mut v = 0.0;
                    for (k, wk) in w.iter().enumerate() {
                        v += wk * f.data[(s + k) * g.nx + i];
                    }
                    out[j * g.nx + i] = v * scale;
                }
            }
        }
    }
    ScalarField { grid: g, data: out }
}

/// First and second partial derivatives of a field at the chosen accuracy.
pub struct Derivs {
    pub d1: ScalarField,
    pub d2: ScalarField,
    pub d11: ScalarField,
    pub d12: ScalarField,
    pub d22: ScalarField,
}

impl Derivs {
    pub fn of(f: &ScalarField, acc: Accuracy) -> Derivs {
        let d1 = diff_axis(f, Axis::X, 1, acc);
        let d2 = diff_axis(f, Axis::Y, 1, acc);
        let d12 = diff_axis(&d1, Axis::Y, 1, acc);
        Derivs {
            d11: diff_axis(f, Axis::X, 2, acc),
            d22: diff_axis(f, Axis::Y, 2, acc),
            d1,
            d2,
            d12,
        }
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_matches_textbook_stencils() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14 && (w[2] - 1.0).abs() < 1e-14);
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0], 1);
        assert!((w[0] + 1.5).abs() < 1e-14 && (w[1] - 2.0).abs() < 1e-14 && (w[2] + 0.5).abs() < 1e-14);
        let w = fd_weights(2.0, &[0.0, 1.0, 2.0, 3.0, 4.0], 1);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn grid_rejects_small_or_offset() {
        assert!(Grid::new(-1.0, 1.0, -1.0, 1.0, 5, 9).is_err());
        assert!(Grid::new(-1.0, 1.0, -1.0, 1.0, 10, 9).is_err());
        assert!(Grid::new(0.0, 1.0, -1.0, 1.0, 9, 9).is_ok());
    }

    #[test]
    fn second_order_derivatives_exact_on_quadratics() {
        let g = Grid::square(1.0, 11).unwrap();
        let f = ScalarField::from_fn(g, |x, y| 1.0 + 2.0 * x - y + 3.0 * x * x + x * y - 0.5 * y * y);
        let d = Derivs::of(&f, Accuracy::Second);
        for k in 0..g.len() {
            let (x, y) = g.point(k);
            assert!((d.d1.data[k] - (2.0 + 6.0 * x + y)).abs() < 1e-11);
            assert!((d.d2.data[k] - (-1.0 + x - y)).abs() < 1e-11);
            assert!((d.d11.data[k] - 6.0).abs() < 1e-9);
            assert!((d.d12.data[k] - 1.0).abs() < 1e-10);
            assert!((d.d22.data[k] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fourth_order_exact_on_quartics() {
        let g = Grid::square(1.0, 13).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x.powi(4) - x * y.powi(3));
        let d = Derivs::of(&f, Accuracy::Fourth);
        for k in 0..g.len() {
            let (x, y) = g.point(k);
            assert!((d.d11.data[k] - 12.0 * x * x).abs() < 1e-8);
            assert!((d.d12.data[k] + 3.0 * y * y).abs() < 1e-8);
        }
    }

    #[test]
    fn cubic_interp_reproduces_cubics() {
        let g = Grid::square(1.0, 9).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x * x * x - 2.0 * x * y * y + y);
        for &(x, y) in &[(0.13, -0.77), (0.99, 0.99), (-1.0, 0.31)] {
            let e = x * x * x - 2.0 * x * y * y + y;
            assert!((f.interp_cubic(x, y) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dump_roundtrip() {
        let g = Grid::square(2.0, 9).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x - 3.0 * y);
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        let back = ScalarField::read_dump(&buf).unwrap();
        assert_eq!(back.data, f.data);
        assert_eq!(back.grid.nx, 9);
    }
}
