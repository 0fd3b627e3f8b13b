//! Small dense 3D optimization helpers: finite-difference derivatives,
//! Nelder-Mead, symmetric eigendecomposition with deterministic ordering.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

pub fn gradient<F: Fn([f64; 3]) -> f64>(f: &F, x: [f64; 3], h: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for k in 0..3 {
        let mut a = x;
        let mut b = x;
        a[k] += h;
        b[k] -= h;
        g[k] = (f(a) - f(b)) / (2.0 * h);
    }
    g
}

pub fn hessian<F: Fn([f64; 3]) -> f64>(f: &F, x: [f64; 3], h: f64) -> Matrix3<f64> {
    let f0 = f(x);
    let mut m = Matrix3::zeros();
    let shifted = |d: [(usize, f64); 2]| {
        let mut p = x;
        for (k, s) in d {
            p[k] += s;
        }
        f(p)
    };
    for i in 0..3 {
        let fp = shifted([(i, h), (i, 0.0)]);
        let fm = shifted([(i, -h), (i, 0.0)]);
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in (i + 1)..3 {
            let v = (shifted([(i, h), (j, h)]) - shifted([(i, h), (j, -h)]) - shifted([(i, -h), (j, h)])
                + shifted([(i, -h), (j, -h)]))
                / (4.0 * h * h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Hessian of a potential from central differences of its field, `H = -dE/dx`, symmetrized.
pub fn hessian_from_field<F: Fn([f64; 3]) -> [f64; 3]>(e: &F, x: [f64; 3], h: f64) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for j in 0..3 {
        let mut a = x;
        let mut b = x;
        a[j] += h;
        b[j] -= h;
        let (ea, eb) = (e(a), e(b));
        for i in 0..3 {
            m[(i, j)] = -(ea[i] - eb[i]) / (2.0 * h);
        }
    }
    (m + m.transpose()) * 0.5
}

/// Eigenvalues ascending with unit eigenvectors as columns. Ties (relative
/// 1e-9) are ordered by which coordinate axis the vector is closest to; each
/// vector's largest component is made positive.
pub fn sym_eigen(m: &Matrix3<f64>) -> ([f64; 3], [[f64; 3]; 3]) {
    let eig = SymmetricEigen::new(*m);
    let mut pairs: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|k| {
            let mut v: Vector3<f64> = eig.eigenvectors.column(k).into_owned();
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v = -v;
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= 1e-9 * scale {
            a.1.iamax().cmp(&b.1.iamax())
        } else {
            a.0.total_cmp(&b.0)
        }
    });
    let vals = [pairs[0].0, pairs[1].0, pairs[2].0];
    let vecs = [0, 1, 2].map(|k| [pairs[k].1[0], pairs[k].1[1], pairs[k].1[2]]);
    (vals, vecs)
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexResult {
    pub x: [f64; 3],
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead with the standard coefficients. Stops when the simplex is smaller
/// than `xtol` in every coordinate.
pub fn nelder_mead<F: Fn([f64; 3]) -> f64>(f: &F, x0: [f64; 3], step: f64, xtol: f64, max_iter: usize) -> SimplexResult {
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let mut pts: Vec<[f64; 3]> = vec![x0];
    for k in 0..3 {
        let mut p = x0;
        p[k] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(*p)).collect();
    let mut it = 0;
    let mut converged = false;
    while it < max_iter {
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i]).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let size = (1..4)
            .map(|i| (0..3).map(|k| (pts[i][k] - pts[0][k]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < xtol {
            converged = true;
            break;
        }
        it += 1;
        let mut c = [0.0; 3];
        for p in &pts[..3] {
            for k in 0..3 {
                c[k] += p[k] / 3.0;
            }
        }
        let d = sub(c, pts[3]);
        let xr = add(c, d, 1.0);
        let fr = f(xr);
        if fr < vals[0] {
            let xe = add(c, d, 2.0);
            let fe = f(xe);
            if fe < fr {
                pts[3] = xe;
                vals[3] = fe;
            } else {
                pts[3] = xr;
                vals[3] = fr;
            }
        } else if fr < vals[2] {
            pts[3] = xr;
            vals[3] = fr;
        } else {
            let (xc, fc) = if fr < vals[3] {
                let x = add(c, d, 0.5);
                (x, f(x))
            } else {
                let x = add(c, d, -0.5);
                (x, f(x))
            };
            if fc < vals[3].min(fr) {
                pts[3] = xc;
                vals[3] = fc;
            } else {
                for i in 1..4 {
                    pts[i] = add(pts[0], sub(pts[i], pts[0]), 0.5);
                    vals[i] = f(pts[i]);
                }
            }
        }
    }
    let best = (0..4).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    SimplexResult { x: pts[best], value: vals[best], iterations: it, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_finds_rotated_quadratic_minimum() {
        let f = |x: [f64; 3]| {
            let (a, b, c) = (x[0] - 1.0, x[1] + 2.0, x[2] - 0.5);
            3.0 * a * a + b * b + 0.5 * c * c + a * b
        };
        let r = nelder_mead(&f, [0.0, 0.0, 0.0], 0.5, 1e-10, 5000);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] + 2.0).abs() < 1e-8 && (r.x[2] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_hessian_of_quadratic() {
        let f = |x: [f64; 3]| 2.0 * x[0] * x[0] + x[0] * x[1] - x[2] * x[2];
        let h = hessian(&f, [0.3, 0.1, -0.2], 1e-3);
        let want = Matrix3::new(4.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -2.0);
        assert!((h - want).abs().max() < 1e-6);
        let g = gradient(&f, [0.3, 0.1, -0.2], 1e-3);
        assert!((g[0] - 1.3).abs() < 1e-9 && (g[1] - 0.3).abs() < 1e-9 && (g[2] - 0.4).abs() < 1e-9);
    }

    #[test]
    fn eigen_order_is_deterministic_for_ties() {
        let (vals, vecs) = sym_eigen(&Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 2.0)));
        assert_eq!(vals, [1.0, 2.0, 2.0]);
        assert_eq!(vecs[0], [0.0, 1.0, 0.0]);
        assert_eq!(vecs[1], [1.0, 0.0, 0.0]);
        assert_eq!(vecs[2], [0.0, 0.0, 1.0]);
    }
}
