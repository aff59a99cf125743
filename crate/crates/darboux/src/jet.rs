//! Truncated bivariate Taylor polynomials.
//!
//! A `Jet` of degree `d` stores the coefficient of `s^a t^b` for `a + b <= d`,
//! where `(s, t)` is the displacement from the expansion point.

use std::fmt::Write as _;

#[inline]
pub fn tri(a: usize, b: usize) -> usize {
    let t = a + b;
    t * (t + 1) / 2 + b
}

pub fn jet_len(deg: usize) -> usize {
    (deg + 1) * (deg + 2) / 2
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub deg: usize,
    pub c: Vec<f64>,
}

impl Jet {
    pub fn zero(deg: usize) -> Jet {
        Jet { deg, c: vec![0.0; jet_len(deg)] }
    }

    pub fn constant(deg: usize, v: f64) -> Jet {
        let mut j = Jet::zero(deg);
        j.c[0] = v;
        j
    }

    /// The coordinate function `x0 + s`.
    pub fn var_x(deg: usize, x0: f64) -> Jet {
        let mut j = Jet::constant(deg, x0);
        if deg > 0 {
            j.c[tri(1, 0)] = 1.0;
        }
        j
    }

    pub fn var_y(deg: usize, y0: f64) -> Jet {
        let mut j = Jet::constant(deg, y0);
        if deg > 0 {
            j.c[tri(0, 1)] = 1.0;
        }
        j
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a + b > self.deg {
            0.0
        } else {
            self.c[tri(a, b)]
        }
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.c[tri(a, b)] = v;
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Partial derivative `d^a_s d^b_t` at the expansion point.
    pub fn derivative_at_center(&self, a: usize, b: usize) -> f64 {
        self.get(a, b) * factorial(a) * factorial(b)
    }

    pub fn truncate(&self, deg: usize) -> Jet {
        let deg = deg.min(self.deg);
        Jet { deg, c: self.c[..jet_len(deg)].to_vec() }
    }

    /// Same polynomial carried at a higher degree (zero coefficients above the old one).
    pub fn widen(&self, deg: usize) -> Jet {
        let mut c = self.c.clone();
        c.resize(jet_len(deg.max(self.deg)), 0.0);
        Jet { deg: deg.max(self.deg), c }
    }

    pub fn add(&self, o: &Jet) -> Jet {
        let deg = self.deg.min(o.deg);
        Jet { deg, c: (0..jet_len(deg)).map(|k| self.c[k] + o.c[k]).collect() }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        let deg = self.deg.min(o.deg);
        Jet { deg, c: (0..jet_len(deg)).map(|k| self.c[k] - o.c[k]).collect() }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { deg: self.deg, c: self.c.iter().map(|v| v * s).collect() }
    }

    pub fn add_const(&self, s: f64) -> Jet {
        let mut j = self.clone();
        j.c[0] += s;
        j
    }

    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let deg = self.deg.min(o.deg);
        let mut out = Jet::zero(deg);
        for t1 in 0..=deg {
            for b1 in 0..=t1 {
                let v1 = self.c[tri(t1 - b1, b1)];
                if v1 == 0.0 {
                    continue;
                }
                for t2 in 0..=(deg - t1) {
                    let base = (t1 + t2) * (t1 + t2 + 1) / 2 + b1;
                    let ob = t2 * (t2 + 1) / 2;
                    for b2 in 0..=t2 {
                        out.c[base + b2] += v1 * o.c[ob + b2];
                    }
                }
            }
        }
        out
    }

    pub fn powi(&self, n: i32) -> Jet {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut result = Jet::constant(self.deg, 1.0);
        let mut base = self.clone();
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    /// `sum_k d[k] / k! (J - J(0))^k` where `d[k]` is the k-th derivative of `f` at `J(0)`.
    pub fn compose(&self, d: &[f64]) -> Jet {
        let mut h = self.clone();
        h.c[0] = 0.0;
        let mut out = Jet::constant(self.deg, d[0]);
        let mut p = Jet::constant(self.deg, 1.0);
        let mut fact = 1.0;
        for (k, dk) in d.iter().enumerate().take(self.deg + 1).skip(1) {
            p = p.mul(&h);
            fact *= k as f64;
            let s = dk / fact;
            if s != 0.0 {
                for (o, v) in out.c.iter_mut().zip(&p.c) {
                    *o += s * v;
                }
            }
        }
        out
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let d: Vec<f64> = (0..=self.deg).map(|k| [s, c, -s, -c][k % 4]).collect();
        self.compose(&d)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let d: Vec<f64> = (0..=self.deg).map(|k| [c, -s, -c, s][k % 4]).collect();
        self.compose(&d)
    }

    pub fn exp(&self) -> Jet {
        let e = self.c[0].exp();
        self.compose(&vec![e; self.deg + 1])
    }

    pub fn ln(&self) -> Jet {
        let x = self.c[0];
        let mut d = vec![x.ln()];
        let mut f = 1.0;
        for k in 1..=self.deg {
            d.push(f / x.powi(k as i32));
            f *= -(k as f64);
        }
        self.compose(&d)
    }

    /// Real power with constant exponent.
    pub fn powf(&self, p: f64) -> Jet {
        let x = self.c[0];
        let mut d = Vec::with_capacity(self.deg + 1);
        let mut coef = 1.0;
        for k in 0..=self.deg {
            d.push(coef * x.powf(p - k as f64));
            coef *= p - k as f64;
        }
        self.compose(&d)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn recip(&self) -> Jet {
        let x = self.c[0];
        let mut d = Vec::with_capacity(self.deg + 1);
        let mut coef = 1.0;
        for k in 0..=self.deg {
            d.push(coef / x.powi(k as i32 + 1));
            coef *= -((k + 1) as f64);
        }
        self.compose(&d)
    }

    pub fn div(&self, o: &Jet) -> Jet {
        self.mul(&o.recip())
    }

    /// Exact partial derivative in the first variable; degree drops by one.
    pub fn dx(&self) -> Jet {
        if self.deg == 0 {
            return Jet::zero(0);
        }
        let mut out = Jet::zero(self.deg - 1);
        for t in 0..self.deg {
            for b in 0..=t {
                let a = t - b;
                out.c[tri(a, b)] = (a + 1) as f64 * self.c[tri(a + 1, b)];
            }
        }
        out
    }

    pub fn dy(&self) -> Jet {
        if self.deg == 0 {
            return Jet::zero(0);
        }
        let mut out = Jet::zero(self.deg - 1);
        for t in 0..self.deg {
            for b in 0..=t {
                let a = t - b;
                out.c[tri(a, b)] = (b + 1) as f64 * self.c[tri(a, b + 1)];
            }
        }
        out
    }

    /// Homogeneous part of total degree `n`, `n + 1` coefficients ordered by power of the second variable.
    pub fn homogeneous(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|b| self.get(n - b, b)).collect()
    }

    /// Evaluate the polynomial at displacement `(s, t)`.
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        // Horner in t over Horner in s.
        let mut acc = 0.0;
        for b in (0..=self.deg).rev() {
            let mut inner = 0.0;
            for a in (0..=(self.deg - b)).rev() {
                inner = inner * s + self.c[tri(a, b)];
            }
            acc = acc * t + inner;
        }
        acc
    }

    /// `d^a_s d^b_t` of the polynomial evaluated at `(s, t)`; exact for polynomials.
    pub fn eval_deriv(&self, a: usize, b: usize, s: f64, t: f64) -> f64 {
        let mut j = self.clone();
        for _ in 0..a {
            j = j.dx();
        }
        for _ in 0..b {
            j = j.dy();
        }
        j.eval(s, t)
    }

    /// Substitute the linear change of variables `(s, t) = M (p, q)`; exact for polynomials.
    pub fn compose_linear(&self, m: [[f64; 2]; 2]) -> Jet {
        let p = Jet::var_x(self.deg, 0.0);
        let q = Jet::var_y(self.deg, 0.0);
        let s = p.scale(m[0][0]).add(&q.scale(m[0][1]));
        let t = p.scale(m[1][0]).add(&q.scale(m[1][1]));
        let spow: Vec<Jet> = (0..=self.deg).map(|k| s.powi(k as i32)).collect();
        let tpow: Vec<Jet> = (0..=self.deg).map(|k| t.powi(k as i32)).collect();
        let mut out = Jet::zero(self.deg);
        for tot in 0..=self.deg {
            for b in 0..=tot {
                let c = self.c[tri(tot - b, b)];
                if c != 0.0 {
                    let term = spow[tot - b].mul(&tpow[b]).scale(c);
                    out = out.add(&term);
                }
            }
        }
        out
    }

    /// Table lines `degree a b value` for all nonzero coefficients.
    pub fn to_table(&self) -> String {
        let mut s = String::from("# degree a b value\n");
        for t in 0..=self.deg {
            for b in 0..=t {
                let v = self.c[tri(t - b, b)];
                if v != 0.0 {
                    let _ = writeln!(s, "{} {} {} {:.17e}", t, t - b, b, v);
                }
            }
        }
        s
    }

    pub fn from_table(text: &str, deg: usize) -> Option<Jet> {
        let mut j = Jet::zero(deg);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return None;
            }
            let a: usize = f[1].parse().ok()?;
            let b: usize = f[2].parse().ok()?;
            let v: f64 = f[3].parse().ok()?;
            if a + b <= deg {
                j.set(a, b, v);
            }
        }
        Some(j)
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Polynomial with an unbounded expansion domain (used for `z0`).
pub type PolyJet = Jet;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn product_of_coordinates() {
        let x = Jet::var_x(4, 0.0);
        let y = Jet::var_y(4, 0.0);
        let p = x.add_const(1.0).mul(&y.add_const(2.0));
        assert_eq!(p.get(0, 0), 2.0);
        assert_eq!(p.get(1, 0), 2.0);
        assert_eq!(p.get(0, 1), 1.0);
        assert_eq!(p.get(1, 1), 1.0);
    }

    #[test]
    fn sin_series_at_zero() {
        let s = Jet::var_x(7, 0.0).sin();
        let expect = [0.0, 1.0, 0.0, -1.0 / 6.0, 0.0, 1.0 / 120.0, 0.0, -1.0 / 5040.0];
        for (a, e) in expect.iter().enumerate() {
            assert!((s.get(a, 0) - e).abs() < 1e-15);
        }
    }

    #[test]
    fn recip_times_self_is_one() {
        let x = Jet::var_x(6, 0.3);
        let y = Jet::var_y(6, -0.2);
        let q = x.mul(&y).add(&x.exp()).add_const(2.0);
        let one = q.mul(&q.recip());
        assert!((one.c[0] - 1.0).abs() < 1e-14);
        for v in &one.c[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn half_x_squared_derivatives() {
        let p = Jet::var_x(3, 0.0).powi(2).scale(0.5);
        assert_eq!(p.eval(1.0, 0.0), 0.5);
        assert!((p.eval_deriv(2, 0, 0.3, -0.7) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn table_roundtrip() {
        let p = Jet::var_x(5, 0.1).mul(&Jet::var_y(5, 0.2)).sin();
        let back = Jet::from_table(&p.to_table(), 5).unwrap();
        for (a, b) in p.c.iter().zip(&back.c) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn linear_composition_matches_pointwise() {
        let p = Jet::var_x(4, 0.0).powi(3).add(&Jet::var_y(4, 0.0).mul(&Jet::var_x(4, 0.0))).add_const(0.5);
        let m = [[0.6, -0.8], [0.8, 0.6]];
        let c = p.compose_linear(m);
        let (a, b) = (0.3, -1.1);
        let direct = p.eval(m[0][0] * a + m[0][1] * b, m[1][0] * a + m[1][1] * b);
        assert!((c.eval(a, b) - direct).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn jet_matches_finite_differences(cs in proptest::collection::vec(-1.0f64..1.0, 15),
                                          s in -0.5f64..0.5, t in -0.5f64..0.5) {
            let p = Jet { deg: 4, c: cs };
            let h = 1e-3;
            let fd = (p.eval(s + h, t) - p.eval(s - h, t)) / (2.0 * h);
            let ex = p.eval_deriv(1, 0, s, t);
            // Cubic term of the truncation error, bounded by coefficient sizes.
            prop_assert!((fd - ex).abs() < 50.0 * h * h);
            let fd2 = (p.eval(s, t + h) - 2.0 * p.eval(s, t) + p.eval(s, t - h)) / (h * h);
            prop_assert!((fd2 - p.eval_deriv(0, 2, s, t)).abs() < 100.0 * h * h + 1e-7);
        }

        #[test]
        fn mul_commutes(a in proptest::collection::vec(-2.0f64..2.0, 10), b in proptest::collection::vec(-2.0f64..2.0, 10)) {
            let ja = Jet { deg: 3, c: a };
            let jb = Jet { deg: 3, c: b };
            let p = ja.mul(&jb);
            let q = jb.mul(&ja);
            for (x, y) in p.c.iter().zip(&q.c) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
