use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FieldError, StaticField};

pub const GRID_HEADER: &str = "x_m,y_m,z_m,phi_V,Ex_Vpm,Ey_Vpm,Ez_Vpm";

/// Axis-aligned box, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl GridBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    fn counts(&self, spacing: f64) -> [usize; 3] {
        let mut n = [0; 3];
        for k in 0..3 {
            let span = self.max[k] - self.min[k];
            n[k] = if span < 0.0 { 0 } else { (span / spacing + 1e-9).floor() as usize + 1 };
        }
        n
    }
}

/// Grid points of `bx` at `spacing`, x varying slowest, each with potential and field.
pub fn grid_rows(src: &dyn StaticField, bx: &GridBox, spacing: f64) -> Result<Vec<[f64; 7]>, FieldError> {
    if !(spacing > 0.0) || bx.min[2] < 0.0 {
        return Err(FieldError::BadBox);
    }
    let n = bx.counts(spacing);
    let total = n[0] * n[1] * n[2];
    Ok((0..total)
        .into_par_iter()
        .map(|idx| {
            let (i, rest) = (idx / (n[1] * n[2]), idx % (n[1] * n[2]));
            let (j, k) = (rest / n[2], rest % n[2]);
            let p = [
                bx.min[0] + i as f64 * spacing,
                bx.min[1] + j as f64 * spacing,
                bx.min[2] + k as f64 * spacing,
            ];
            let (phi, e) = src.potential_field(p);
            [p[0], p[1], p[2], phi, e[0], e[1], e[2]]
        })
        .collect())
}

/// Writes the grid as CSV. Floats use the shortest representation that round-trips.
pub fn export_grid(src: &dyn StaticField, bx: &GridBox, spacing: f64, path: impl AsRef<Path>) -> Result<usize, FieldError> {
    let rows = grid_rows(src, bx, spacing)?;
    let path = path.as_ref();
    let io = |source| FieldError::Io { path: path.display().to_string(), source };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{GRID_HEADER}").map_err(io)?;
    for r in &rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(rows.len())
}

/// CSV text of grid rows, `preamble` lines first as `#` comments.
pub fn grid_csv(rows: &[[f64; 7]], preamble: &str) -> String {
    let mut s = String::new();
    for line in preamble.lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s.push_str(GRID_HEADER);
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn read_grid_csv(text: &str) -> Result<Vec<[f64; 7]>, String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(GRID_HEADER) {
        return Err("missing grid header".into());
    }
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
            <[f64; 7]>::try_from(v).map_err(|_| format!("expected 7 fields in '{l}'"))
        })
        .collect()
}

/// Potential and field tabulated on a regular grid and interpolated with
/// tricubic Lagrange stencils. Much cheaper to evaluate than the patch sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
    /// `[phi, ex, ey, ez]` per node, z fastest.
    pub data: Vec<[f64; 4]>,
}

#[inline]
fn lagrange4(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

impl FieldGrid {
    /// Samples `src` on nodes covering `bx` (at least 4 nodes per axis).
    pub fn sample(src: &dyn StaticField, bx: &GridBox, spacing: f64) -> Result<Self, FieldError> {
        if !(spacing > 0.0) || bx.min[2] < 0.0 || (0..3).any(|k| bx.max[k] <= bx.min[k]) {
            return Err(FieldError::BadBox);
        }
        let mut dims = [0; 3];
        for k in 0..3 {
            dims[k] = (((bx.max[k] - bx.min[k]) / spacing - 1e-9).ceil() as usize + 1).max(4);
        }
        let origin = bx.min;
        let total = dims[0] * dims[1] * dims[2];
        let data = (0..total)
            .into_par_iter()
            .map(|idx| {
                let (i, rest) = (idx / (dims[1] * dims[2]), idx % (dims[1] * dims[2]));
                let (j, k) = (rest / dims[2], rest % dims[2]);
                let p = [
                    origin[0] + i as f64 * spacing,
                    origin[1] + j as f64 * spacing,
                    origin[2] + k as f64 * spacing,
                ];
                let (phi, e) = src.potential_field(p);
                [phi, e[0], e[1], e[2]]
            })
            .collect();
        Ok(Self { origin, spacing, dims, data })
    }

    pub fn bounds(&self) -> GridBox {
        let mut max = [0.0; 3];
        for k in 0..3 {
            max[k] = self.origin[k] + (self.dims[k] - 1) as f64 * self.spacing;
        }
        GridBox { min: self.origin, max }
    }

    #[inline]
    fn stencil(&self, p: [f64; 3]) -> ([usize; 3], [[f64; 4]; 3]) {
        let mut base = [0usize; 3];
        let mut w = [[0.0; 4]; 3];
        for k in 0..3 {
            let t = (p[k] - self.origin[k]) / self.spacing;
            let i0 = (t.floor() as i64).clamp(1, self.dims[k] as i64 - 3);
            base[k] = (i0 - 1) as usize;
            w[k] = lagrange4(t - i0 as f64);
        }
        (base, w)
    }

    #[inline]
    fn interpolate(&self, p: [f64; 3]) -> [f64; 4] {
        let (b, w) = self.stencil(p);
        let (ny, nz) = (self.dims[1], self.dims[2]);
        let mut out = [0.0; 4];
        for (a, wx) in w[0].iter().enumerate() {
            for (c, wy) in w[1].iter().enumerate() {
                let wxy = wx * wy;
                let row = ((b[0] + a) * ny + b[1] + c) * nz + b[2];
                for (d, wz) in w[2].iter().enumerate() {
                    let f = wxy * wz;
                    let v = &self.data[row + d];
                    out[0] += f * v[0];
                    out[1] += f * v[1];
                    out[2] += f * v[2];
                    out[3] += f * v[3];
                }
            }
        }
        out
    }
}

impl StaticField for FieldGrid {
    fn potential(&self, p: [f64; 3]) -> f64 {
        self.interpolate(p)[0]
    }

    fn field(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.interpolate(p);
        [v[1], v[2], v[3]]
    }

    fn potential_field(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let v = self.interpolate(p);
        (v[0], [v[1], v[2], v[3]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cubic polynomial potential; tricubic interpolation reproduces it exactly.
    struct Cubic;

    impl StaticField for Cubic {
        fn potential(&self, p: [f64; 3]) -> f64 {
            p[0].powi(3) - 2.0 * p[1] * p[2] * p[2] + p[0] * p[1] + 0.5
        }
        fn field(&self, p: [f64; 3]) -> [f64; 3] {
            [-(3.0 * p[0] * p[0] + p[1]), -(-2.0 * p[2] * p[2] + p[0]), 4.0 * p[1] * p[2]]
        }
    }

    #[test]
    fn tricubic_is_exact_for_cubics() {
        let g = FieldGrid::sample(&Cubic, &GridBox::new([-1.0, -1.0, 0.0], [1.0, 1.0, 1.0]), 0.25).unwrap();
        for p in [[0.1, 0.2, 0.3], [-0.93, 0.77, 0.01], [0.999, -0.999, 0.999]] {
            let (a, e) = g.potential_field(p);
            let (b, f) = Cubic.potential_field(p);
            assert!((a - b).abs() < 1e-12);
            for k in 0..3 {
                assert!((e[k] - f[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_row_counts() {
        let bx = GridBox::new([0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
        assert!(grid_rows(&Cubic, &bx, 0.1).unwrap().is_empty());
        let one = GridBox::new([0.5, 0.5, 0.5], [0.5, 0.5, 0.5]);
        assert_eq!(grid_rows(&Cubic, &one, 0.1).unwrap().len(), 1);
        let cube = GridBox::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        assert_eq!(grid_rows(&Cubic, &cube, 0.1).unwrap().len(), 11 * 11 * 11);
        assert!(grid_rows(&Cubic, &GridBox::new([0.0, 0.0, -1.0], [1.0, 1.0, 1.0]), 0.1).is_err());
    }
}
