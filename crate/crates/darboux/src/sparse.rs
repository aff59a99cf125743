//! Sparse matrices in row-compressed form, banded LU with partial pivoting, BiCGSTAB.

use crate::error::{Error, Result};
use std::io::Write;

/// Row-compressed sparse matrix.
#[derive(Clone, Debug, Default)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Row-by-row builder; duplicate columns within a row are summed.
pub struct CsrBuilder {
    n: usize,
    m: Csr,
    row: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize) -> CsrBuilder {
        CsrBuilder { n, m: Csr { n, indptr: vec![0], indices: Vec::new(), values: Vec::new() }, row: Vec::new() }
    }

    /// Exact zeros are not stored.
    pub fn add(&mut self, col: usize, v: f64) {
        debug_assert!(col < self.n);
        if v != 0.0 {
            self.row.push((col, v));
        }
    }

    pub fn end_row(&mut self) {
        self.row.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.row {
            if last == Some(c) {
                *self.m.values.last_mut().unwrap() += v;
            } else {
                self.m.indices.push(c);
                self.m.values.push(v);
                last = Some(c);
            }
        }
        self.row.clear();
        self.m.indptr.push(self.m.indices.len());
    }

    pub fn finish(self) -> Csr {
        assert_eq!(self.m.indptr.len(), self.n + 1, "every row must be ended");
        self.m
    }
}

impl Csr {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn transpose(&self) -> Csr {
        let mut b = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b[j].push((i, v));
            }
        }
        let mut out = CsrBuilder::new(self.n);
        for r in b {
            for (c, v) in r {
                out.add(c, v);
            }
            out.end_row();
        }
        out.finish()
    }

    /// Coordinate text dump: a `n nnz` header, then one `row col value` line per entry.
    pub fn write_coo(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.n, self.values.len())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }

    pub fn read_coo(text: &str) -> Result<Csr> {
        let bad = |m: &str| Error::Config(format!("coordinate dump: {m}"));
        let mut lines = text.lines();
        let head: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("header")))
            .collect::<Result<_>>()?;
        let n = *head.first().ok_or_else(|| bad("header"))?;
        let mut rows = vec![Vec::new(); n];
        for l in lines {
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(bad("entry"));
            }
            let i: usize = t[0].parse().map_err(|_| bad("row"))?;
            let j: usize = t[1].parse().map_err(|_| bad("col"))?;
            let v: f64 = t[2].parse().map_err(|_| bad("value"))?;
            if i >= n || j >= n {
                return Err(bad("index out of range"));
            }
            rows[i].push((j, v));
        }
        let mut b = CsrBuilder::new(n);
        for r in rows {
            for (j, v) in r {
                b.add(j, v);
            }
            b.end_row();
        }
        Ok(b.finish())
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|Ax - b| / |b|` (absolute when `b = 0`).
pub fn relative_residual(a: &Csr, x: &[f64], b: &[f64]) -> f64 {
    let r: Vec<f64> = a.matvec(x).iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm(b);
    if nb > 0.0 {
        norm(&r) / nb
    } else {
        norm(&r)
    }
}

/// LU factors of a banded matrix with row pivoting.
///
/// Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl` holds pivoting fill.
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    w: usize,
    a: Vec<f64>,
    l: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.w + (j + self.kl - i)
    }

    pub fn factor(m: &Csr) -> Result<BandLu> {
        let n = m.n;
        let (kl, ku) = m.bandwidths();
        let w = 2 * kl + ku + 1;
        let mut lu = BandLu { n, kl, ku, w, a: vec![0.0; n * w], l: vec![0.0; n * kl.max(1)], piv: vec![0; n] };
        for i in 0..n {
            for (j, v) in m.row(i) {
                let p = lu.at(i, j);
                lu.a[p] = v;
            }
        }
        let scale = m.values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.a[lu.at(k, k)].abs();
            for r in k + 1..=last {
                let v = lu.a[lu.at(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= 1e-300 * scale.max(1.0) {
                return Err(Error::LinearSolver(f64::INFINITY));
            }
            lu.piv[k] = p;
            let cend = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=cend {
                    let (x, y) = (lu.at(k, c), lu.at(p, c));
                    lu.a.swap(x, y);
                }
            }
            let d = lu.a[lu.at(k, k)];
            for r in k + 1..=last {
                let f = lu.a[lu.at(r, k)] / d;
                lu.l[k * kl.max(1) + (r - k - 1)] = f;
                if f != 0.0 {
                    let (rk, rr) = (lu.at(k, k), lu.at(r, k));
                    for c in 1..=(cend - k) {
                        lu.a[rr + c] -= f * lu.a[rk + c];
                    }
                }
                let z = lu.at(r, k);
                lu.a[z] = 0.0;
            }
        }
        Ok(lu)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            x.swap(k, p);
            let last = (k + kl).min(n - 1);
            let xk = x[k];
            for r in k + 1..=last {
                x[r] -= self.l[k * kl.max(1) + (r - k - 1)] * xk;
            }
        }
        for k in (0..n).rev() {
            let cend = (k + kl + ku).min(n - 1);
            let base = self.at(k, k);
            let mut s = x[k];
            for c in 1..=(cend - k) {
                s -= self.a[base + c] * x[k + c];
            }
            x[k] = s / self.a[base];
        }
        x
    }
}

/// Jacobi-preconditioned BiCGSTAB. Returns the iterate and its relative residual.
pub fn bicgstab(a: &Csr, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = a.n;
    let dinv: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d.abs() > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let prec = |v: &[f64]| -> Vec<f64> { v.iter().zip(&dinv).map(|(p, q)| p * q).collect() };
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let nb = norm(b).max(f64::MIN_POSITIVE);
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut res = norm(&r) / nb;
    for _ in 0..max_iter {
        if res <= tol {
            break;
        }
        let rho1 = dot(&r0, &r);
        if rho1 == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho1 / rho) * (alpha / omega);
        rho = rho1;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = prec(&p);
        v = a.matvec(&ph);
        let den = dot(&r0, &v);
        if den == 0.0 {
            break;
        }
        alpha = rho / den;
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        let sh = prec(&s);
        let t = a.matvec(&sh);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / nb;
    }
    let res = relative_residual(a, &x, b);
    (x, res)
}

/// Banded LU with one refinement sweep; BiCGSTAB from the LU iterate if the residual is above `tol`.
pub fn solve(a: &Csr, b: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
    let lu = BandLu::factor(a);
    let mut x = match &lu {
        Ok(f) => f.solve(b),
        Err(_) => vec![0.0; a.n],
    };
    if let Ok(f) = &lu {
        let r: Vec<f64> = b.iter().zip(a.matvec(&x)).map(|(p, q)| p - q).collect();
        let dx = f.solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    let mut res = relative_residual(a, &x, b);
    if res > tol || !res.is_finite() {
        let start = if res.is_finite() { Some(&x[..]) } else { None };
        let (y, r) = bicgstab(a, b, start, tol, 20 * a.n.max(100));
        x = y;
        res = r;
    }
    if res > tol || !res.is_finite() {
        return Err(Error::LinearSolver(res));
    }
    Ok((x, res))
}
