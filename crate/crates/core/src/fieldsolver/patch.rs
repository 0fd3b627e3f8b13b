//! Potential and field of a uniformly charged axis-aligned rectangle in z = 0.
//!
//! With u = x' - x, v = y' - y and r = sqrt(u^2 + v^2 + z^2), the double
//! antiderivative of 1/r is
//!
//!   F(u, v) = u ln(v + r) + v ln(u + r) - z atan(uv / (z r))
//!
//! and the rectangle potential is the four-corner difference of F. The field
//! follows from dF/du = ln(v + r), dF/dv = ln(u + r), dF/dz = -atan(uv / (z r)).
//! Logarithms of `a + r` with `a < 0` are rewritten as `ln(rho^2) - ln(r - a)`
//! and the `ln(rho^2)` parts are cancelled analytically between corners that
//! share `rho`, which keeps in-plane evaluation finite off the edges.
//!
//! Far from the patch a tensor Gauss-Legendre rule replaces the closed form.

use serde::{Deserialize, Serialize};

use crate::constants::COULOMB;

/// Axis-aligned rectangle in the electrode plane: center and half-widths, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Rect {
    pub fn from_bounds(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            cx: 0.5 * (x0 + x1),
            cy: 0.5 * (y0 + y1),
            hx: 0.5 * (x1 - x0),
            hy: 0.5 * (y1 - y0),
        }
    }

    pub fn area(&self) -> f64 {
        4.0 * self.hx * self.hy
    }

    pub fn bounds(&self) -> [f64; 4] {
        [self.cx - self.hx, self.cy - self.hy, self.cx + self.hx, self.cy + self.hy]
    }

    pub fn diagonal_sq(&self) -> f64 {
        4.0 * (self.hx * self.hx + self.hy * self.hy)
    }
}

/// Distance (in patch diagonals) beyond which the 3x3 Gauss rule is used.
const FAR3: f64 = 6.0;
/// Distance (in patch diagonals) beyond which the 2x2 Gauss rule is used.
const FAR2: f64 = 30.0;

const G3_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const G3_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
const G2_X: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// `ln(a + r)` with `r = sqrt(a^2 + rho2)`, stable for negative `a`.
#[inline]
fn log_a_plus_r(a: f64, rho2: f64, r: f64) -> f64 {
    if a >= 0.0 {
        (a + r).ln()
    } else {
        rho2.ln() - (r - a).ln()
    }
}

/// `ln(a2 + r2) - ln(a1 + r1)` for a common `rho2`, with the `ln(rho2)` terms cancelled.
#[inline]
fn log_diff(a1: f64, r1: f64, a2: f64, r2: f64, rho2: f64) -> f64 {
    match (a1 >= 0.0, a2 >= 0.0) {
        (true, true) => ((a2 + r2) / (a1 + r1)).ln(),
        (false, false) => ((r1 - a1) / (r2 - a2)).ln(),
        (false, true) => (a2 + r2).ln() - rho2.ln() + (r1 - a1).ln(),
        (true, false) => rho2.ln() - (r2 - a2).ln() - (a1 + r1).ln(),
    }
}

#[inline]
fn far_order(rect: &Rect, p: [f64; 3]) -> Option<bool> {
    let dx = p[0] - rect.cx;
    let dy = p[1] - rect.cy;
    let d2 = dx * dx + dy * dy + p[2] * p[2];
    let diag2 = rect.diagonal_sq();
    if d2 > FAR2 * FAR2 * diag2 {
        Some(false)
    } else if d2 > FAR3 * FAR3 * diag2 {
        Some(true)
    } else {
        None
    }
}

fn gauss_potential_field(rect: &Rect, p: [f64; 3], three: bool) -> (f64, [f64; 3]) {
    let (xs, ws): (&[f64], &[f64]) = if three { (&G3_X, &G3_W) } else { (&G2_X, &[1.0, 1.0]) };
    let mut phi = 0.0;
    let mut e = [0.0; 3];
    for (i, xi) in xs.iter().enumerate() {
        let dx = p[0] - (rect.cx + rect.hx * xi);
        for (j, yj) in xs.iter().enumerate() {
            let dy = p[1] - (rect.cy + rect.hy * yj);
            let w = ws[i] * ws[j];
            let r2 = dx * dx + dy * dy + p[2] * p[2];
            let inv_r = 1.0 / r2.sqrt();
            phi += w * inv_r;
            let f = w * inv_r * inv_r * inv_r;
            e[0] += f * dx;
            e[1] += f * dy;
            e[2] += f * p[2];
        }
    }
    let s = COULOMB * rect.hx * rect.hy;
    (s * phi, [s * e[0], s * e[1], s * e[2]])
}

fn gauss_potential(rect: &Rect, p: [f64; 3], three: bool) -> f64 {
    let (xs, ws): (&[f64], &[f64]) = if three { (&G3_X, &G3_W) } else { (&G2_X, &[1.0, 1.0]) };
    let mut phi = 0.0;
    for (i, xi) in xs.iter().enumerate() {
        let dx = p[0] - (rect.cx + rect.hx * xi);
        for (j, yj) in xs.iter().enumerate() {
            let dy = p[1] - (rect.cy + rect.hy * yj);
            phi += ws[i] * ws[j] / (dx * dx + dy * dy + p[2] * p[2]).sqrt();
        }
    }
    COULOMB * rect.hx * rect.hy * phi
}

/// Closed-form potential per unit surface charge density, V per (C/m^2).
pub fn exact_potential(rect: &Rect, p: [f64; 3]) -> f64 {
    let z = p[2].abs();
    let z2 = z * z;
    let us = [rect.cx - rect.hx - p[0], rect.cx + rect.hx - p[0]];
    let vs = [rect.cy - rect.hy - p[1], rect.cy + rect.hy - p[1]];
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = (us[i] * us[i] + vs[j] * vs[j] + z2).sqrt();
        }
    }
    // Sum over u columns of u * [ln(v2 + r) - ln(v1 + r)].
    let mut total = 0.0;
    for i in 0..2 {
        let u = us[i];
        let sign = if i == 1 { 1.0 } else { -1.0 };
        if u != 0.0 {
            total += sign * u * log_diff(vs[0], r[i][0], vs[1], r[i][1], u * u + z2);
        }
    }
    // Sum over v rows of v * [ln(u2 + r) - ln(u1 + r)].
    for j in 0..2 {
        let v = vs[j];
        let sign = if j == 1 { 1.0 } else { -1.0 };
        if v != 0.0 {
            total += sign * v * log_diff(us[0], r[0][j], us[1], r[1][j], v * v + z2);
        }
    }
    if z > 0.0 {
        let mut at = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let s = if i == j { 1.0 } else { -1.0 };
                at += s * (us[i] * vs[j]).atan2(z * r[i][j]);
            }
        }
        total -= z * at;
    }
    COULOMB * total
}

/// Closed-form field per unit surface charge density, (V/m) per (C/m^2).
/// At z = 0 the z component is the limit from above.
pub fn exact_field(rect: &Rect, p: [f64; 3]) -> [f64; 3] {
    let z = p[2].abs();
    let z2 = z * z;
    let us = [rect.cx - rect.hx - p[0], rect.cx + rect.hx - p[0]];
    let vs = [rect.cy - rect.hy - p[1], rect.cy + rect.hy - p[1]];
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = (us[i] * us[i] + vs[j] * vs[j] + z2).sqrt();
        }
    }
    let d = |i: usize| log_diff(vs[0], r[i][0], vs[1], r[i][1], us[i] * us[i] + z2);
    let ex = d(1) - d(0);
    let dp = |j: usize| log_diff(us[0], r[0][j], us[1], r[1][j], vs[j] * vs[j] + z2);
    let ey = dp(1) - dp(0);
    let mut ez = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let s = if i == j { 1.0 } else { -1.0 };
            ez += s * (us[i] * vs[j]).atan2(z * r[i][j]);
        }
    }
    if p[2] < 0.0 {
        ez = -ez;
    }
    [COULOMB * ex, COULOMB * ey, COULOMB * ez]
}

/// Potential per unit surface charge density. Uses quadrature far away.
#[inline]
pub fn patch_potential(rect: &Rect, p: [f64; 3]) -> f64 {
    match far_order(rect, p) {
        Some(three) => gauss_potential(rect, p, three),
        None => exact_potential(rect, p),
    }
}

/// Field per unit surface charge density. Uses quadrature far away.
#[inline]
pub fn patch_field(rect: &Rect, p: [f64; 3]) -> [f64; 3] {
    match far_order(rect, p) {
        Some(three) => gauss_potential_field(rect, p, three).1,
        None => exact_field(rect, p),
    }
}

#[inline]
pub fn patch_potential_field(rect: &Rect, p: [f64; 3]) -> (f64, [f64; 3]) {
    match far_order(rect, p) {
        Some(three) => gauss_potential_field(rect, p, three),
        None => (exact_potential(rect, p), exact_field(rect, p)),
    }
}

// Keep the single-log helper reachable for the in-plane limit tests.
#[allow(dead_code)]
pub(crate) fn log_plus(a: f64, rho2: f64) -> f64 {
    log_a_plus_r(a, rho2, (a * a + rho2).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson in 2D on 1/r, independent of the closed form.
    fn quad_potential(rect: &Rect, p: [f64; 3]) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                    + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
            }
        }
        fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
            let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&f, a, b, fa, fm, fb, whole, tol, 40)
        }
        let [x0, y0, x1, y1] = rect.bounds();
        let inner = |x: f64| {
            integrate(
                |y: f64| 1.0 / ((x - p[0]).powi(2) + (y - p[1]).powi(2) + p[2] * p[2]).sqrt(),
                y0,
                y1,
                1e-13,
            )
        };
        COULOMB * integrate(inner, x0, x1, 1e-12)
    }

    #[test]
    fn on_axis_matches_quadrature() {
        let a = 1e-3;
        let rect = Rect { cx: 0.0, cy: 0.0, hx: a, hy: a };
        for z in [0.05e-3, 0.3e-3, 1e-3, 2.5e-3, 4e-3] {
            let exact = exact_potential(&rect, [0.0, 0.0, z]);
            let quad = quad_potential(&rect, [0.0, 0.0, z]);
            assert!(((exact - quad) / quad).abs() < 1e-6, "z={z}: {exact} vs {quad}");
        }
    }

    #[test]
    fn off_axis_matches_quadrature() {
        let rect = Rect { cx: 0.3, cy: -0.2, hx: 0.5, hy: 0.25 };
        for p in [[1.0, 0.4, 0.2], [-0.4, -0.1, 0.05], [0.3, -0.2, 0.7], [2.0, 2.0, 0.0]] {
            let exact = exact_potential(&rect, p);
            let quad = quad_potential(&rect, p);
            assert!(((exact - quad) / quad).abs() < 1e-6, "{p:?}: {exact} vs {quad}");
        }
    }

    #[test]
    fn centroid_self_term_is_finite_and_known() {
        // Center of a unit-density square of side s: 4 s ln(1 + sqrt 2) / (4 pi eps0).
        let s = 2.0;
        let rect = Rect { cx: 0.0, cy: 0.0, hx: 1.0, hy: 1.0 };
        let phi = exact_potential(&rect, [0.0, 0.0, 0.0]);
        let expected = COULOMB * 4.0 * s * (1.0 + 2f64.sqrt()).ln();
        assert!(((phi - expected) / expected).abs() < 1e-13);
    }

    #[test]
    fn monopole_limit() {
        let rect = Rect { cx: 0.0, cy: 0.0, hx: 1e-4, hy: 2e-4 };
        let q = rect.area();
        for d in [1e-2, 1e-1, 1.0] {
            let p = [d * 0.6, -d * 0.48, d * 0.64];
            let phi = patch_potential(&rect, p);
            let mono = COULOMB * q / d;
            let size = 2.0 * rect.hx.max(rect.hy);
            assert!(((phi - mono) / mono).abs() <= (size / d).powi(2), "d={d}");
        }
    }

    #[test]
    fn symmetric_points_agree() {
        let rect = Rect { cx: 1.0, cy: 2.0, hx: 0.3, hy: 0.7 };
        for (dx, dy, z) in [(0.2, 0.1, 0.3), (1.5, 0.4, 0.1), (0.05, 3.0, 2.0)] {
            let a = patch_potential(&rect, [1.0 + dx, 2.0 + dy, z]);
            let b = patch_potential(&rect, [1.0 - dx, 2.0 + dy, z]);
            let c = patch_potential(&rect, [1.0 + dx, 2.0 - dy, z]);
            assert!((a - b).abs() <= 1e-14 * a.abs());
            assert!((a - c).abs() <= 1e-14 * a.abs());
        }
    }

    #[test]
    fn field_matches_central_differences() {
        let rect = Rect { cx: 0.0, cy: 0.0, hx: 0.4e-3, hy: 1.1e-3 };
        let h = 1e-9;
        for p in [[0.1e-3, 0.2e-3, 0.3e-3], [0.9e-3, -0.5e-3, 0.05e-3], [-2e-3, 3e-3, 1e-3], [0.4e-3, 1.1e-3, 0.2e-3]] {
            let e = exact_field(&rect, p);
            for k in 0..3 {
                let mut a = p;
                let mut b = p;
                a[k] += h;
                b[k] -= h;
                let fd = -(exact_potential(&rect, a) - exact_potential(&rect, b)) / (2.0 * h);
                let scale = e.iter().map(|v| v.abs()).fold(0.0, f64::max);
                assert!((fd - e[k]).abs() < 1e-5 * scale, "p={p:?} k={k}: fd {fd} vs {}", e[k]);
            }
        }
    }

    #[test]
    fn surface_field_is_sigma_over_two_eps0_on_patch() {
        let rect = Rect { cx: 0.0, cy: 0.0, hx: 1.0, hy: 1.0 };
        let e = exact_field(&rect, [0.2, -0.3, 0.0]);
        let expected = 2.0 * std::f64::consts::PI * COULOMB;
        assert!((e[2] - expected).abs() < 1e-9 * expected);
        let off = exact_field(&rect, [3.0, 0.0, 0.0]);
        assert!(off[2].abs() < 1e-9 * expected);
        let below = exact_field(&rect, [0.2, -0.3, -0.5]);
        let above = exact_field(&rect, [0.2, -0.3, 0.5]);
        assert_eq!(below[2], -above[2]);
    }

    #[test]
    fn in_plane_on_edge_extension_is_finite() {
        let rect = Rect { cx: 0.0, cy: 0.0, hx: 1.0, hy: 1.0 };
        // On the line x = x_max, beyond the rectangle in y.
        let phi = exact_potential(&rect, [1.0, 3.0, 0.0]);
        let e = exact_field(&rect, [1.0, 3.0, 0.0]);
        assert!(phi.is_finite() && e.iter().all(|v| v.is_finite()));
        let near = exact_potential(&rect, [1.0 + 1e-12, 3.0, 0.0]);
        assert!((phi - near).abs() < 1e-9 * phi.abs());
        assert!(log_plus(-1.0, 1e-300).is_finite());
    }

    #[test]
    fn quadrature_switch_is_accurate() {
        let rect = Rect { cx: 0.0, cy: 0.0, hx: 1e-4, hy: 0.5e-4 };
        let diag = rect.diagonal_sq().sqrt();
        for k in [6.01, 10.0, 30.01, 100.0] {
            let p = [k * diag * 0.8, 0.0, k * diag * 0.6];
            let e = exact_potential(&rect, p);
            let g = patch_potential(&rect, p);
            assert!(((e - g) / e).abs() < 2e-6, "k={k}: rel {}", (e - g) / e);
            let ef = exact_field(&rect, p);
            let gf = patch_field(&rect, p);
            let n = (ef[0].powi(2) + ef[1].powi(2) + ef[2].powi(2)).sqrt();
            for c in 0..3 {
                assert!((ef[c] - gf[c]).abs() < 1e-5 * n, "k={k} c={c}");
            }
        }
    }
}
