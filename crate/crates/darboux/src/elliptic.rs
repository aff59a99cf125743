//! Degenerate elliptic boundary value problem in the polar rectangle `0 < r < sigma, 0 < t < delta`:
//! `K u_rr + A u_rt + B u_tt + C u_r + D u_t = f`, `u = 0` on `t = 0, delta` and on the rings
//! `r <= s0 h_r`.

use crate::error::{Error, Result};
use crate::grid::{Accuracy, Axis, Grid, ScalarField, diff_axis};
use crate::regions::{PolarPoint, cutoff};
use crate::smoothing::{WeightedNormSpec, polar_grid, weighted_norm};
use crate::sparse::{Csr, CsrBuilder, relative_residual, solve};

#[derive(Clone, Debug)]
pub struct EllipticProblem {
    /// `x = r`, `y = theta`.
    pub grid: Grid,
    pub sigma: f64,
    pub delta: f64,
    pub coeffs: Vec<PolarPoint>,
    pub s0: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub tol: f64,
}

impl EllipticProblem {
    /// Coefficients sampled from `f(r, t)` on an `nr x nt` grid.
    pub fn from_fn(
        sigma: f64,
        delta: f64,
        nr: usize,
        nt: usize,
        s0: usize,
        f: impl Fn(f64, f64) -> PolarPoint,
    ) -> Result<EllipticProblem> {
        if nr < 2 * s0 + 4 || nt < 5 {
            return Err(Error::Grid(format!("polar grid {nr}x{nt} too small for s0 = {s0}")));
        }
        let grid = polar_grid(0.0, sigma, delta, nr, nt);
        let coeffs = (0..grid.len())
            .map(|k| {
                let (r, t) = grid.point(k);
                f(r, t)
            })
            .collect();
        let p = EllipticProblem { grid, sigma, delta, coeffs, s0, gamma: 2.0 * s0 as f64 + 1.0, lambda: 64.0, tol: 1e-10 };
        p.check()?;
        Ok(p)
    }

    /// `B > 0` and `K >= 0` on every node the equation is imposed at.
    pub fn check(&self) -> Result<()> {
        let g = self.grid;
        for j in 1..g.ny - 1 {
            for i in self.s0 + 1..g.nx {
                let p = self.coeffs[g.idx(i, j)];
                if !(p.b > 0.0) || p.kk < -1e-12 * p.b.max(1.0) || !p.kk.is_finite() {
                    return Err(Error::Consistency(format!(
                        "elliptic coefficients at r = {:.4}, t = {:.4}: K = {:.3e}, B = {:.3e}",
                        g.x(i),
                        g.y(j),
                        p.kk,
                        p.b
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField::zeros(self.grid)
    }

    /// Unknown index, `theta` running fastest to keep the band narrow.
    #[inline]
    fn q(&self, i: usize, j: usize) -> usize {
        i * self.grid.ny + j
    }

    fn constrained(&self, i: usize, j: usize) -> bool {
        j == 0 || j == self.grid.ny - 1 || i <= self.s0
    }

    /// Discrete `L u` on equation nodes, 0 on constrained nodes.
    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let a = assemble(self);
        let x = self.to_unknowns(u);
        let y = a.matvec(&x);
        let mut out = self.from_unknowns(&y);
        let g = self.grid;
        for j in 0..g.ny {
            for i in 0..g.nx {
                if self.constrained(i, j) {
                    out.set(i, j, 0.0);
                }
            }
        }
        out
    }

    fn to_unknowns(&self, u: &ScalarField) -> Vec<f64> {
        let g = self.grid;
        let mut x = vec![0.0; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                x[self.q(i, j)] = u.at(i, j);
            }
        }
        x
    }

    fn from_unknowns(&self, x: &[f64]) -> ScalarField {
        let g = self.grid;
        let mut u = ScalarField::zeros(g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                u.set(i, j, x[self.q(i, j)]);
            }
        }
        u
    }
}

/// Second-order stencil. Constrained rows are identity rows; the outer ring keeps only the
/// `theta` terms (the radial coefficients carry the cutoff there).
pub fn assemble(p: &EllipticProblem) -> Csr {
    let g = p.grid;
    let (hr, ht) = (g.hx, g.hy);
    let mut b = CsrBuilder::new(g.len());
    for i in 0..g.nx {
        for j in 0..g.ny {
            if p.constrained(i, j) {
                b.add(p.q(i, j), 1.0);
                b.end_row();
                continue;
            }
            let c = p.coeffs[g.idx(i, j)];
            b.add(p.q(i, j), -2.0 * c.b / (ht * ht));
            b.add(p.q(i, j + 1), c.b / (ht * ht) + c.d / (2.0 * ht));
            b.add(p.q(i, j - 1), c.b / (ht * ht) - c.d / (2.0 * ht));
            if i < g.nx - 1 {
                b.add(p.q(i, j), -2.0 * c.kk / (hr * hr));
                b.add(p.q(i + 1, j), c.kk / (hr * hr) + c.c / (2.0 * hr));
                b.add(p.q(i - 1, j), c.kk / (hr * hr) - c.c / (2.0 * hr));
                let m = c.a / (4.0 * hr * ht);
                b.add(p.q(i + 1, j + 1), m);
                b.add(p.q(i - 1, j - 1), m);
                b.add(p.q(i + 1, j - 1), -m);
                b.add(p.q(i - 1, j + 1), -m);
            }
            b.end_row();
        }
    }
    b.finish()
}

#[derive(Clone, Debug)]
pub struct EllipticSolution {
    pub u: ScalarField,
    /// Relative residual of the discrete system.
    pub residual: f64,
    /// Max of `|K u_rr + A u_rt + C u_r|` on the outer ring, with one-sided radial differences:
    /// what the dropped radial terms would have contributed there.
    pub outer_mismatch: f64,
}

/// Solve `L u = f`; `f` is sampled on the problem grid and ignored on constrained nodes.
pub fn solve_elliptic(p: &EllipticProblem, f: &ScalarField) -> Result<EllipticSolution> {
    f.check_same(&p.zeros())?;
    check_vanishing(p, f)?;
    let a = assemble(p);
    let g = p.grid;
    let mut rhs = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !p.constrained(i, j) {
                rhs[p.q(i, j)] = f.at(i, j);
            }
        }
    }
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(EllipticSolution { u: p.zeros(), residual: 0.0, outer_mismatch: 0.0 });
    }
    let (x, residual) = solve(&a, &rhs, p.tol)?;
    let u = p.from_unknowns(&x);
    let outer_mismatch = outer_mismatch(p, &u);
    Ok(EllipticSolution { u, residual, outer_mismatch })
}

/// `f` must vanish to order `s0 - 2` at the origin: its weighted norm with weight
/// `r^{3 - 2 s0}` must not concentrate on the innermost ring.
fn check_vanishing(p: &EllipticProblem, f: &ScalarField) -> Result<()> {
    if p.s0 < 2 {
        return Ok(());
    }
    let spec = WeightedNormSpec { m: 0, l: 0, gamma: 2.0 * p.s0 as f64 - 3.0, lambda: p.lambda };
    weighted_norm(f, &spec).map(|_| ())
}

fn outer_mismatch(p: &EllipticProblem, u: &ScalarField) -> f64 {
    let g = p.grid;
    let i = g.nx - 1;
    let (hr, ht) = (g.hx, g.hy);
    let mut worst = 0.0f64;
    for j in 1..g.ny - 1 {
        let c = p.coeffs[g.idx(i, j)];
        let v = |ii: usize, jj: usize| u.at(ii, jj);
        let urr = (2.0 * v(i, j) - 5.0 * v(i - 1, j) + 4.0 * v(i - 2, j) - v(i - 3, j)) / (hr * hr);
        let ur = (3.0 * v(i, j) - 4.0 * v(i - 1, j) + v(i - 2, j)) / (2.0 * hr);
        let urt = ((3.0 * v(i, j + 1) - 4.0 * v(i - 1, j + 1) + v(i - 2, j + 1))
            - (3.0 * v(i, j - 1) - 4.0 * v(i - 1, j - 1) + v(i - 2, j - 1)))
            / (4.0 * hr * ht);
        worst = worst.max((c.kk * urr + c.a * urt + c.c * ur).abs());
    }
    worst
}

/// `a_{lambda, gamma}(r, t) = (lambda t^2 - 1) / r^gamma`.
pub fn weight(lambda: f64, gamma: f64, r: f64, t: f64) -> f64 {
    (lambda * t * t - 1.0) / r.powf(gamma)
}

/// Ratio of `int a_{lambda, gamma-2} u L u` to
/// `int lambda r^-gamma u^2 + r^{2-gamma} (phi sin t u_r + r^-1 cos t u_t)^2`, by the trapezoidal
/// rule in `dr dt` over the nodes with `r > 0`.
pub fn check_basic_estimate(u: &ScalarField, p: &EllipticProblem) -> Result<f64> {
    u.check_same(&p.zeros())?;
    if u.max_abs() == 0.0 {
        return Err(Error::ZeroField);
    }
    let g = p.grid;
    let lu = p.apply(u);
    let ur = diff_axis(u, Axis::X, 1, Accuracy::Second);
    let ut = diff_axis(u, Axis::Y, 1, Accuracy::Second);
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..g.ny {
        for i in 1..g.nx {
            let (r, t) = (g.x(i), g.y(j));
            let w = trap(i, g.nx) * trap(j, g.ny) * g.hx * g.hy;
            let k = g.idx(i, j);
            num += w * weight(p.lambda, p.gamma - 2.0, r, t) * u.data[k] * lu.data[k];
            let mix = cutoff(r, p.sigma) * t.sin() * ur.data[k] + t.cos() * ut.data[k] / r;
            den += w * (p.lambda * r.powf(-p.gamma) * u.data[k].powi(2) + r.powf(2.0 - p.gamma) * mix * mix);
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(num / den)
}

fn trap(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// Norm orders used by the Moser-type estimate.
#[derive(Clone, Copy, Debug)]
pub struct MoserSpec {
    pub m: usize,
    pub gamma: usize,
    pub lambda: f64,
}

/// `||u||_{(m, gamma)} / (||f||_{m+2+gamma} + ||w||_{m+6} ||f||_{5+gamma})` with plain grid Sobolev
/// norms for `f` and `w`; 0 when `f = 0`.
pub fn check_moser_estimate(u: &ScalarField, f: &ScalarField, w: &ScalarField, spec: MoserSpec) -> Result<f64> {
    let den = f.sobolev(spec.m + 2 + spec.gamma, None) + w.sobolev(spec.m + 6, None) * f.sobolev(5 + spec.gamma, None);
    if den == 0.0 {
        return Ok(0.0);
    }
    let ws = WeightedNormSpec { m: spec.m, l: spec.m, gamma: spec.gamma as f64, lambda: spec.lambda };
    Ok(weighted_norm(u, &ws)? / den)
}

/// Residual of the discrete system for a given `u`, relative to `f`.
pub fn system_residual(p: &EllipticProblem, u: &ScalarField, f: &ScalarField) -> f64 {
    let a = assemble(p);
    let g = p.grid;
    let mut rhs = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !p.constrained(i, j) {
                rhs[p.q(i, j)] = f.at(i, j);
            }
        }
    }
    relative_residual(&a, &p.to_unknowns(u), &rhs)
}

/// Polar Laplacian `u_rr + r^-2 u_tt + r^-1 u_r`.
pub fn laplacian(r: f64, _t: f64) -> PolarPoint {
    PolarPoint { kk: 1.0, a: 0.0, b: 1.0 / (r * r), c: 1.0 / r, d: 0.0 }
}

/// Degenerate variant with `K = r`.
pub fn degenerate(r: f64, _t: f64) -> PolarPoint {
    PolarPoint { kk: r, a: 0.0, b: 1.0 / (r * r), c: 1.0 / r, d: 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    const DELTA: f64 = PI / 16.0;

    fn safe(f: impl Fn(f64, f64) -> PolarPoint) -> impl Fn(f64, f64) -> PolarPoint {
        move |r, t| if r > 0.0 { f(r, t) } else { PolarPoint { b: 1.0, ..Default::default() } }
    }

    #[test]
    fn b_only_operator_is_tridiagonal_per_ring_and_symmetric() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 21, 11, 2, |r, _| PolarPoint { b: 1.0 + r, ..Default::default() }).unwrap();
        let a = assemble(&p);
        let nt = p.grid.ny;
        for row in 0..a.n {
            for (col, _) in a.row(row) {
                assert_eq!(row / nt, col / nt, "coupling across rings");
            }
        }
        // Interior block is symmetric and negative definite.
        let interior: Vec<usize> = (0..a.n).filter(|&q| q % nt != 0 && q % nt != nt - 1 && q / nt > 2).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for &r in &interior {
            for &c in &interior {
                assert!((a.get(r, c) - a.get(c, r)).abs() < 1e-9 * a.get(r, r).abs());
            }
        }
        let mut x = vec![0.0; a.n];
        for &r in &interior {
            x[r] = rng.gen_range(-1.0..1.0);
        }
        let ax = a.matvec(&x);
        let q: f64 = interior.iter().map(|&r| x[r] * ax[r]).sum();
        assert!(q < 0.0);
    }

    #[test]
    fn second_order_part_annihilates_constants() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 21, 11, 2, |r, t| PolarPoint {
            kk: 1.0 + r,
            a: 0.3 * t,
            b: 2.0,
            c: 0.0,
            d: 0.0,
        })
        .unwrap();
        let a = assemble(&p);
        let ones = vec![1.0; a.n];
        let y = a.matvec(&ones);
        let nt = p.grid.ny;
        for q in 0..a.n {
            let (i, j) = (q / nt, q % nt);
            if j > 0 && j < nt - 1 && i > 2 {
                assert!(y[q].abs() < 1e-9, "row {q}: {}", y[q]);
            }
        }
    }

    #[test]
    fn zero_right_side_gives_zero() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 33, 17, 3, safe(laplacian)).unwrap();
        let s = solve_elliptic(&p, &p.zeros()).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
    }

    fn manufactured(model: fn(f64, f64) -> PolarPoint, n: usize) -> f64 {
        let sigma = 1.0;
        let ustar = |r: f64, t: f64| r.powi(4) * (PI * t / DELTA).sin() * cutoff(r, sigma);
        let p = EllipticProblem::from_fn(sigma, DELTA, 2 * n - 1, n, 3, safe(model)).unwrap();
        // f = L u* evaluated with derivatives of the closed form (finite differences at 1e-4).
        let e = 1e-4;
        let f = ScalarField::from_fn(p.grid, |r, t| {
            if r <= 0.0 {
                return 0.0;
            }
            let c = model(r, t);
            let u = |a: f64, b: f64| ustar(a, b);
            let urr = (u(r + e, t) - 2.0 * u(r, t) + u(r - e, t)) / (e * e);
            let utt = (u(r, t + e) - 2.0 * u(r, t) + u(r, t - e)) / (e * e);
            let ur = (u(r + e, t) - u(r - e, t)) / (2.0 * e);
            let ut = (u(r, t + e) - u(r, t - e)) / (2.0 * e);
            let urt = (u(r + e, t + e) - u(r + e, t - e) - u(r - e, t + e) + u(r - e, t - e)) / (4.0 * e * e);
            c.kk * urr + c.a * urt + c.b * utt + c.c * ur + c.d * ut
        });
        let s = solve_elliptic(&p, &f).unwrap();
        assert!(s.residual < 1e-10);
        let exact = ScalarField::from_fn(p.grid, ustar);
        let d = s.u.sub(&exact);
        d.l2() / exact.l2()
    }

    #[test]
    fn polar_laplacian_converges_at_second_order() {
        let errs: Vec<f64> = [17, 33, 65].iter().map(|&n| manufactured(laplacian, n)).collect();
        let p = (errs[1] / errs[2]).log2();
        assert!(p >= 1.5, "{errs:?} order {p}");
    }

    #[test]
    fn degenerate_model_converges() {
        let errs: Vec<f64> = [17, 33, 65].iter().map(|&n| manufactured(degenerate, n)).collect();
        let p = (errs[1] / errs[2]).log2();
        assert!(p >= 1.0, "{errs:?} order {p}");
    }

    #[test]
    fn discrete_minimum_principle() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 41, 21, 2, safe(laplacian)).unwrap();
        let f = ScalarField::from_fn(p.grid, |r, t| -(r * r) * (1.0 + (5.0 * t).cos()) * cutoff(r, 1.0));
        let s = solve_elliptic(&p, &f).unwrap();
        let h = p.grid.h();
        assert!(s.u.data.iter().cloned().fold(f64::INFINITY, f64::min) >= -10.0 * h * f.max_abs());
    }

    #[test]
    fn solve_is_linear() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 33, 17, 3, safe(degenerate)).unwrap();
        let f = ScalarField::from_fn(p.grid, |r, t| r.powi(3) * (t * 7.0).sin());
        let g = ScalarField::from_fn(p.grid, |r, t| r.powi(4) * (t * 3.0).cos() * cutoff(r, 1.0));
        let a = solve_elliptic(&p, &f).unwrap().u;
        let b = solve_elliptic(&p, &g).unwrap().u;
        let c = solve_elliptic(&p, &f.scale(2.0).add(&g.scale(-3.0))).unwrap().u;
        let d = c.sub(&a.scale(2.0).add(&b.scale(-3.0)));
        assert!(d.max_abs() < 1e-9 * c.max_abs());
    }

    #[test]
    fn poorly_vanishing_data_is_rejected() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 33, 17, 4, safe(laplacian)).unwrap();
        let f = ScalarField::constant(p.grid, 1.0);
        assert!(matches!(solve_elliptic(&p, &f), Err(Error::InsufficientVanishing(_))));
    }

    /// Random fields vanishing to order 4 at the origin and on both edges: three `theta` modes
    /// times a random cubic radial factor.
    pub(crate) fn random_compliant(p: &EllipticProblem, c: &[f64]) -> ScalarField {
        let delta = p.delta;
        let sigma = p.sigma;
        ScalarField::from_fn(p.grid, |r, t| {
            let s = PI * t / delta;
            r.powi(4) * cutoff(r, sigma) * (c[0] * s.sin() + c[1] * (2.0 * s).sin() + c[2] * (3.0 * s).sin())
                * (1.0 + c[3] * r + c[4] * r * r + c[5] * r * r * r)
        })
    }

    fn worst_ratio(delta: f64, lambda: f64) -> f64 {
        let p = EllipticProblem { lambda, ..EllipticProblem::from_fn(1.0, delta, 65, 33, 3, safe(laplacian)).unwrap() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        (0..100)
            .map(|_| {
                let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                check_basic_estimate(&random_compliant(&p, &c), &p).unwrap()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn basic_estimate_is_positive_when_the_angle_is_small() {
        // lambda delta^2 < 1 keeps the weight negative across the sector.
        let w = worst_ratio(0.1, 64.0);
        assert!(w > 0.0, "{w}");
        let w = worst_ratio(DELTA, 16.0);
        assert!(w > 0.0, "{w}");
    }

    #[test]
    fn single_modes_stay_positive_at_wide_angle() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 65, 33, 3, safe(laplacian)).unwrap();
        for k in 1..=4 {
            let u = ScalarField::from_fn(p.grid, |r, t| r.powi(4) * cutoff(r, 1.0) * (k as f64 * PI * t / DELTA).sin());
            assert!(check_basic_estimate(&u, &p).unwrap() > 0.0);
        }
    }

    #[test]
    fn basic_estimate_rejects_zero() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 33, 17, 3, safe(laplacian)).unwrap();
        assert!(matches!(check_basic_estimate(&p.zeros(), &p), Err(Error::ZeroField)));
    }

    #[test]
    fn moser_ratio_of_zero_data_is_zero() {
        let p = EllipticProblem::from_fn(1.0, DELTA, 33, 17, 3, safe(laplacian)).unwrap();
        let z = p.zeros();
        let spec = MoserSpec { m: 1, gamma: 3, lambda: 64.0 };
        assert_eq!(check_moser_estimate(&z, &z, &z, spec).unwrap(), 0.0);
    }
}
