use serde::{Deserialize, Serialize};

/// A simple planar polygon in the z = 0 plane. Vertices in meters, either winding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`, counter-clockwise.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    /// Regular n-gon inscribed in a circle of `radius` centered at `center`.
    pub fn regular(center: [f64; 2], radius: f64, sides: usize) -> Self {
        let verts = (0..sides)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect();
        Self::new(verts)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Signed shoelace area (positive for counter-clockwise).
    pub fn signed_area(&self) -> f64 {
        0.5 * self
            .edges()
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for v in &self.vertices {
            b[0] = b[0].min(v[0]);
            b[1] = b[1].min(v[1]);
            b[2] = b[2].max(v[0]);
            b[3] = b[3].max(v[1]);
        }
        b
    }

    /// True when every edge is parallel to the x or y axis.
    pub fn is_rectilinear(&self) -> bool {
        self.edges().all(|(a, b)| a[0] == b[0] || a[1] == b[1])
    }

    /// Even-odd point-in-polygon test. Points on the boundary may go either way.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Sorted x-intervals where the horizontal line at `y` is inside the polygon.
    /// `y` must not coincide with a vertex ordinate.
    pub fn intervals_at(&self, y: f64) -> Vec<(f64, f64)> {
        let mut xs: Vec<f64> = self
            .edges()
            .filter(|(a, b)| (a[1] > y) != (b[1] > y))
            .map(|(a, b)| a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]))
            .collect();
        xs.sort_by(f64::total_cmp);
        xs.chunks_exact(2).map(|c| (c[0], c[1])).collect()
    }

    /// Sorted, deduplicated vertex ordinates.
    pub fn vertex_ys(&self) -> Vec<f64> {
        let mut ys: Vec<f64> = self.vertices.iter().map(|v| v[1]).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        ys
    }

    /// Index pairs of non-adjacent edges that intersect. Empty for a simple polygon.
    pub fn self_intersections(&self) -> Vec<(usize, usize)> {
        let n = self.vertices.len();
        let mut out = Vec::new();
        if n < 4 {
            return out;
        }
        for i in 0..n {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                let (c, d) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_touch(a, b, c, d) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Reflection across the line x = `axis_x`.
    pub fn mirrored_x(&self, axis_x: f64) -> Self {
        let mut v: Vec<[f64; 2]> = self
            .vertices
            .iter()
            .map(|p| [2.0 * axis_x - p[0], p[1]])
            .collect();
        v.reverse();
        Self::new(v)
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test (touching counts).
fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Area of the intersection of two simple polygons.
///
/// Slabs are cut at every vertex ordinate and every edge-edge crossing, so inside
/// each slab both cross-sections are unions of intervals whose ends move linearly
/// in y. The overlap length is then linear in y and the midpoint rule is exact.
pub fn overlap_area(p: &Polygon, q: &Polygon) -> f64 {
    let (bp, bq) = (p.bbox(), q.bbox());
    if bp[2] <= bq[0] || bq[2] <= bp[0] || bp[3] <= bq[1] || bq[3] <= bp[1] {
        return 0.0;
    }
    let mut ys: Vec<f64> = p.vertex_ys();
    ys.extend(q.vertex_ys());
    for (a, b) in p.edges() {
        for (c, d) in q.edges() {
            if let Some(y) = crossing_y(a, b, c, d) {
                ys.push(y);
            }
        }
    }
    ys.retain(|y| *y >= bp[1].max(bq[1]) && *y <= bp[3].min(bq[3]));
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut area = 0.0;
    for w in ys.windows(2) {
        let h = w[1] - w[0];
        if h <= 0.0 {
            continue;
        }
        let ym = 0.5 * (w[0] + w[1]);
        let ip = p.intervals_at(ym);
        let iq = q.intervals_at(ym);
        let mut len = 0.0;
        for &(a0, a1) in &ip {
            for &(b0, b1) in &iq {
                len += (a1.min(b1) - a0.max(b0)).max(0.0);
            }
        }
        area += h * len;
    }
    area
}

fn crossing_y(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> Option<f64> {
    let r = [b[0] - a[0], b[1] - a[1]];
    let s = [d[0] - c[0], d[1] - c[1]];
    let den = r[0] * s[1] - r[1] * s[0];
    if den == 0.0 {
        return None;
    }
    let t = ((c[0] - a[0]) * s[1] - (c[1] - a[1]) * s[0]) / den;
    let u = ((c[0] - a[0]) * r[1] - (c[1] - a[1]) * r[0]) / den;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(a[1] + t * r[1])
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shoelace_and_winding() {
        let sq = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        assert_eq!(sq.signed_area(), 2.0);
        let mut cw = sq.clone();
        cw.vertices.reverse();
        assert_eq!(cw.signed_area(), -2.0);
        assert!(sq.is_rectilinear());
        assert!(!Polygon::regular([0.0, 0.0], 1.0, 24).is_rectilinear());
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bowtie = Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(!bowtie.self_intersections().is_empty());
        assert!(Polygon::rect(0.0, 0.0, 1.0, 1.0).self_intersections().is_empty());
        assert!(Polygon::regular([0.0, 0.0], 1.0, 24).self_intersections().is_empty());
    }

    #[test]
    fn overlap_of_shifted_squares() {
        let a = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        let b = Polygon::rect(1.0, 0.0, 3.0, 1.0);
        assert!((overlap_area(&a, &b) - 1.0).abs() < 1e-12);
        let c = Polygon::rect(2.0, 0.0, 3.0, 1.0);
        assert_eq!(overlap_area(&a, &c), 0.0);
        assert!((overlap_area(&a, &a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_of_rotated_square_with_square() {
        // Diamond of half-diagonal 1 against the unit square [0,1]^2: a right triangle of area 1/2.
        let diamond = Polygon::new(vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
        let sq = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        assert!((overlap_area(&diamond, &sq) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn intervals_of_u_shape() {
        let u = Polygon::new(vec![
            [0.0, 0.0],
            [3.0, 0.0],
            [3.0, 2.0],
            [2.0, 2.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
        ]);
        assert_eq!(u.intervals_at(0.5), vec![(0.0, 3.0)]);
        assert_eq!(u.intervals_at(1.5), vec![(0.0, 1.0), (2.0, 3.0)]);
        assert!(u.contains([0.5, 1.5]));
        assert!(!u.contains([1.5, 1.5]));
    }
}
