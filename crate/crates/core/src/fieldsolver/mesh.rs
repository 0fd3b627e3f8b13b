use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::patch::Rect;
use super::FieldError;
use crate::geometry::{ElectrodeRole, Polygon, TrapLayout};

/// Meshing controls. `resolution` is the number of nominal cells across the
/// smallest polygon feature; cells shrink to a quarter of that next to edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub resolution: f64,
    pub max_patches: usize,
    /// Coarsest cell as a multiple of the nominal cell.
    pub max_cell_factor: f64,
    /// Reject polygons with slanted edges instead of slicing them into rows.
    pub rectilinear_only: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            resolution: 4.0,
            max_patches: 6000,
            max_cell_factor: 4.0,
            rectilinear_only: false,
        }
    }
}

impl MeshConfig {
    pub fn with_resolution(resolution: f64) -> Self {
        Self { resolution, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub rect: Rect,
    pub electrode: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMesh {
    pub patches: Vec<Patch>,
    pub electrode_names: Vec<String>,
    pub electrode_roles: Vec<ElectrodeRole>,
    pub ranges: Vec<Range<usize>>,
    pub config: MeshConfig,
    /// Nominal cell size, meters.
    pub cell: f64,
}

impl PatchMesh {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn rects(&self) -> Vec<Rect> {
        self.patches.iter().map(|p| p.rect).collect()
    }

    pub fn electrode_index(&self, name: &str) -> Option<usize> {
        self.electrode_names.iter().position(|n| n == name)
    }

    pub fn tiled_area(&self, electrode: usize) -> f64 {
        self.patches[self.ranges[electrode].clone()].iter().map(|p| p.rect.area()).sum()
    }

    /// Pairs of patches whose interiors intersect (quadratic; meant for tests).
    pub fn overlapping_pairs(&self) -> Vec<(usize, usize)> {
        let mut idx: Vec<usize> = (0..self.patches.len()).collect();
        idx.sort_by(|&a, &b| self.patches[a].rect.bounds()[0].total_cmp(&self.patches[b].rect.bounds()[0]));
        let mut out = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            let bi = self.patches[i].rect.bounds();
            for &j in &idx[k + 1..] {
                let bj = self.patches[j].rect.bounds();
                if bj[0] >= bi[2] {
                    break;
                }
                let eps = 1e-12 * (bi[2] - bi[0]).max(bi[3] - bi[1]);
                if bj[0] < bi[2] - eps && bi[0] < bj[2] - eps && bj[1] < bi[3] - eps && bi[1] < bj[3] - eps {
                    out.push((i.min(j), i.max(j)));
                }
            }
        }
        out
    }
}

/// Splits `[a, b]` into cells that are `edge` wide at both ends and grow at
/// most 2:1 toward the middle, capped at `cap`.
pub(crate) fn graded_cuts(a: f64, b: f64, edge: f64, cap: f64) -> Vec<f64> {
    row_cuts(a, b, &[a, b], edge, cap)
}

/// Ordinates of horizontal edges plus the polygon's extreme ordinates.
fn horizontal_boundaries(poly: &Polygon) -> Vec<f64> {
    let b = poly.bbox();
    let mut ys: Vec<f64> = poly.edges().filter(|(p, q)| p[1] == q[1]).map(|(p, _)| p[1]).collect();
    ys.push(b[1]);
    ys.push(b[3]);
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    ys
}

/// Cuts `[y0, y1]` so that cell size follows `ln 2 * (d + edge)`, `d` being the
/// distance to the nearest of `bounds`, capped at `cap`. Next to a boundary this
/// gives cells `edge, 2 edge, 4 edge, ...`.
fn row_cuts(y0: f64, y1: f64, bounds: &[f64], edge: f64, cap: f64) -> Vec<f64> {
    const SAMPLES: usize = 2048;
    let len = y1 - y0;
    let size_at = |y: f64| {
        let d = bounds.iter().map(|b| (y - b).abs()).fold(f64::INFINITY, f64::min);
        (std::f64::consts::LN_2 * (d + edge)).min(cap)
    };
    let dy = len / SAMPLES as f64;
    let mut cum = Vec::with_capacity(SAMPLES + 1);
    cum.push(0.0);
    let mut prev = 1.0 / size_at(y0);
    for k in 1..=SAMPLES {
        let cur = 1.0 / size_at(y0 + k as f64 * dy);
        cum.push(cum[k - 1] + 0.5 * dy * (prev + cur));
        prev = cur;
    }
    let total = cum[SAMPLES];
    let n = (total.round() as usize).max(1);
    let mut cuts = Vec::with_capacity(n + 1);
    cuts.push(y0);
    let mut k = 0;
    for c in 1..n {
        let target = total * c as f64 / n as f64;
        while cum[k + 1] < target {
            k += 1;
        }
        let t = (target - cum[k]) / (cum[k + 1] - cum[k]);
        cuts.push(y0 + (k as f64 + t) * dy);
    }
    cuts.push(y1);
    cuts
}

fn mesh_polygon(poly: &Polygon, edge: f64, cap: f64) -> Result<Vec<Rect>, String> {
    let b = poly.bbox();
    let tol = 1e-9 * (b[3] - b[1]).max(b[2] - b[0]);
    let mut ys = poly.vertex_ys();
    // Symmetric polygons produce ordinates that differ only by rounding.
    ys.dedup_by(|a, b| *a - *b <= tol);
    *ys.last_mut().expect("polygon has vertices") = b[3];
    let bounds = horizontal_boundaries(poly);
    let mut rects = Vec::new();
    for slab in ys.windows(2) {
        let rows = row_cuts(slab[0], slab[1], &bounds, edge, cap);
        for row in rows.windows(2) {
            let (ya, yb) = (row[0], row[1]);
            if yb <= ya {
                continue;
            }
            let intervals = poly.intervals_at(0.5 * (ya + yb));
            for (xa, xb) in intervals {
                if !(xb > xa) {
                    return Err(format!("degenerate row at y = {}", 0.5 * (ya + yb)));
                }
                let xs = graded_cuts(xa, xb, edge, cap);
                for c in xs.windows(2) {
                    rects.push(Rect::from_bounds(c[0], ya, c[1], yb));
                }
            }
        }
    }
    Ok(rects)
}

/// Tiles every electrode with axis-aligned rectangles.
///
/// Polygons are cut into horizontal slabs at their vertex ordinates, slabs into
/// graded rows, and each row into graded cells across the polygon's
/// cross-section at the row midline. For rectilinear polygons the tiling is
/// exact; slanted edges become a staircase that preserves each row's area.
pub fn mesh(layout: &TrapLayout, config: &MeshConfig) -> Result<PatchMesh, FieldError> {
    if !(config.resolution >= 2.0) {
        return Err(FieldError::Config(format!("mesh resolution must be at least 2, got {}", config.resolution)));
    }
    let violations = layout.validate();
    if !violations.is_empty() {
        return Err(FieldError::InvalidLayout(
            violations.iter().map(|v| v.message.clone()).collect::<Vec<_>>().join("; "),
        ));
    }
    let cell = layout.smallest_feature() / config.resolution;
    let edge = 0.25 * cell;
    let cap = config.max_cell_factor.max(1.0) * cell;
    let mut patches = Vec::new();
    let mut ranges = Vec::new();
    for (k, e) in layout.electrodes.iter().enumerate() {
        let start = patches.len();
        for poly in &e.polygons {
            if config.rectilinear_only && !poly.is_rectilinear() {
                return Err(FieldError::NonRectilinear { electrode: e.name.clone() });
            }
            let rects = mesh_polygon(poly, edge, cap)
                .map_err(|why| FieldError::Tiling { electrode: e.name.clone(), why })?;
            patches.extend(rects.into_iter().map(|rect| Patch { rect, electrode: k }));
            if patches.len() > config.max_patches {
                break;
            }
        }
        ranges.push(start..patches.len());
        if patches.len() > config.max_patches {
            break;
        }
    }
    if patches.len() > config.max_patches {
        let count = estimate_count(layout, config.resolution, config.max_cell_factor);
        let mut suggested = (config.resolution * (config.max_patches as f64 / count as f64).sqrt()).floor().max(2.0);
        while suggested > 2.0 && estimate_count(layout, suggested, config.max_cell_factor) > config.max_patches {
            suggested = (0.9 * suggested).floor().max(2.0);
        }
        return Err(FieldError::TooManyPatches {
            count,
            cap: config.max_patches,
            suggested_resolution: suggested,
        });
    }
    Ok(PatchMesh {
        patches,
        electrode_names: layout.electrodes.iter().map(|e| e.name.clone()).collect(),
        electrode_roles: layout.electrodes.iter().map(|e| e.role).collect(),
        ranges,
        config: *config,
        cell,
    })
}

fn estimate_count(layout: &TrapLayout, resolution: f64, max_cell_factor: f64) -> usize {
    let cell = layout.smallest_feature() / resolution;
    layout
        .electrodes
        .iter()
        .flat_map(|e| e.polygons.iter())
        .map(|p| mesh_polygon(p, 0.25 * cell, max_cell_factor.max(1.0) * cell).map(|r| r.len()).unwrap_or(0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Electrode, Extent};

    fn single(poly: Polygon) -> TrapLayout {
        let b = poly.bbox();
        TrapLayout {
            name: "t".into(),
            extent: Extent { x_min: b[0], x_max: b[2], y_min: b[1], y_max: b[3] },
            electrodes: vec![Electrode::new("e", ElectrodeRole::Rf, vec![poly])],
            notes: None,
        }
    }

    #[test]
    fn graded_cuts_are_monotone_and_bounded() {
        for (len, edge, cap) in [(1.0, 0.01, 0.2), (0.05, 0.01, 0.2), (0.013, 0.01, 0.04), (3.0, 0.1, 0.4)] {
            let c = graded_cuts(0.0, len, edge, cap);
            assert_eq!(c[0], 0.0);
            assert_eq!(*c.last().unwrap(), len);
            let w: Vec<f64> = c.windows(2).map(|p| p[1] - p[0]).collect();
            assert!(w.iter().all(|&s| s > 0.0 && s <= cap * 1.5 + 1e-15), "{w:?}");
            assert!(w[0] <= 1.5 * edge && *w.last().unwrap() <= 1.5 * edge, "{w:?}");
            for p in w.windows(2) {
                let r = p[1] / p[0];
                assert!(r <= 2.2 && r >= 1.0 / 2.2, "ratio {r} in {w:?}");
            }
        }
    }

    #[test]
    fn unit_square_resolution_4() {
        let m = mesh(&single(Polygon::rect(0.0, 0.0, 1.0, 1.0)), &MeshConfig::with_resolution(4.0)).unwrap();
        assert!(m.len() >= 16);
        assert!((m.tiled_area(0) - 1.0).abs() < 1e-12);
        assert!(m.overlapping_pairs().is_empty());
        let smallest = m.patches.iter().map(|p| p.rect.hx.min(p.rect.hy)).fold(f64::INFINITY, f64::min);
        assert!(2.0 * smallest <= 0.0625 * 1.5);
    }

    #[test]
    fn polygon_disk_area() {
        let poly = Polygon::regular([0.0, 0.0], 1e-3, 24);
        let m = mesh(&single(poly.clone()), &MeshConfig::with_resolution(8.0)).unwrap();
        assert!((m.tiled_area(0) / poly.area() - 1.0).abs() < 1e-9);
        assert!(m.overlapping_pairs().is_empty());
    }

    #[test]
    fn staircase_can_be_refused() {
        let cfg = MeshConfig { rectilinear_only: true, ..MeshConfig::default() };
        let err = mesh(&single(Polygon::regular([0.0, 0.0], 1.0, 24)), &cfg).unwrap_err();
        assert!(matches!(err, FieldError::NonRectilinear { ref electrode } if electrode == "e"));
    }

    #[test]
    fn cap_reports_a_smaller_resolution() {
        let cfg = MeshConfig { resolution: 40.0, max_patches: 200, ..MeshConfig::default() };
        let layout = single(Polygon::rect(0.0, 0.0, 1.0, 1.0));
        match mesh(&layout, &cfg).unwrap_err() {
            FieldError::TooManyPatches { suggested_resolution, .. } => {
                let ok = mesh(&layout, &MeshConfig { resolution: suggested_resolution, ..cfg });
                assert!(ok.is_ok(), "suggested {suggested_resolution}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn resolution_below_two_is_rejected() {
        assert!(mesh(&single(Polygon::rect(0.0, 0.0, 1.0, 1.0)), &MeshConfig::with_resolution(1.5)).is_err());
    }
}
