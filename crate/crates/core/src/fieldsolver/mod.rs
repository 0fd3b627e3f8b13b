//! Boundary-element electrostatics for coplanar electrodes.
//!
//! Each electrode is tiled with rectangles carrying a uniform surface charge
//! density. Requiring the potential at every rectangle centroid to equal the
//! electrode voltage gives a dense linear system, solved once per electrode
//! with that electrode at 1 V and all others grounded.

mod grid;
mod mesh;
pub mod patch;

pub use grid::{export_grid, grid_csv, grid_rows, read_grid_csv, FieldGrid, GridBox, GRID_HEADER};
pub use mesh::{mesh, MeshConfig, Patch, PatchMesh};
pub use patch::{patch_field, patch_potential, Rect};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lax::layout::MatrixLayout;
use lax::{Lapack, Transpose};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{ElectrodeRole, TrapLayout};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid mesh configuration: {0}")]
    Config(String),
    #[error("layout does not validate: {0}")]
    InvalidLayout(String),
    #[error("electrode '{electrode}' has slanted edges and the mesher is set to rectilinear-only")]
    NonRectilinear { electrode: String },
    #[error("cannot tile electrode '{electrode}': {why}")]
    Tiling { electrode: String, why: String },
    #[error("mesh would have {count} patches, above the cap of {cap}; try resolution {suggested_resolution}")]
    TooManyPatches { count: usize, cap: usize, suggested_resolution: f64 },
    #[error("collocation matrix is ill-conditioned (rcond {rcond:.3e}); refine the mesh or merge degenerate patches")]
    IllConditioned { rcond: f64 },
    #[error("boundary residual {residual:.3e} V on '{electrode}' exceeds {tolerance:.1e} V")]
    Residual { electrode: String, residual: f64, tolerance: f64 },
    #[error("linear algebra failure: {0}")]
    Lapack(String),
    #[error("unknown electrode '{0}'")]
    UnknownElectrode(String),
    #[error("grid box must lie in the upper half-space (z >= 0) and spacing must be positive")]
    BadBox,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("basis cache {path}: {why}")]
    Cache { path: String, why: String },
}

/// Anything that can report an electrostatic potential and field in the upper half-space.
pub trait StaticField: Send + Sync {
    fn potential(&self, p: [f64; 3]) -> f64;
    fn field(&self, p: [f64; 3]) -> [f64; 3];
    fn potential_field(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        (self.potential(p), self.field(p))
    }
}

/// A fixed charge distribution on the mesh, e.g. one basis or a weighted sum of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCharge {
    rects: Vec<Rect>,
    sigma: Vec<f64>,
}

impl SurfaceCharge {
    pub fn new(rects: Vec<Rect>, sigma: Vec<f64>) -> Self {
        assert_eq!(rects.len(), sigma.len());
        let (rects, sigma) = rects.into_iter().zip(sigma).filter(|(_, s)| *s != 0.0).unzip();
        Self { rects, sigma }
    }

    pub fn zero() -> Self {
        Self { rects: Vec::new(), sigma: Vec::new() }
    }

    pub fn total_charge(&self) -> f64 {
        self.rects.iter().zip(&self.sigma).map(|(r, s)| r.area() * s).sum()
    }

    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn scaled(&self, k: f64) -> Self {
        if k == 0.0 {
            return Self::zero();
        }
        Self { rects: self.rects.clone(), sigma: self.sigma.iter().map(|s| s * k).collect() }
    }
}

impl StaticField for SurfaceCharge {
    fn potential(&self, p: [f64; 3]) -> f64 {
        self.rects.iter().zip(&self.sigma).map(|(r, s)| s * patch_potential(r, p)).sum()
    }

    fn field(&self, p: [f64; 3]) -> [f64; 3] {
        let mut e = [0.0; 3];
        for (r, s) in self.rects.iter().zip(&self.sigma) {
            let f = patch_field(r, p);
            e[0] += s * f[0];
            e[1] += s * f[1];
            e[2] += s * f[2];
        }
        e
    }

    fn potential_field(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let mut phi = 0.0;
        let mut e = [0.0; 3];
        for (r, s) in self.rects.iter().zip(&self.sigma) {
            let (v, f) = patch::patch_potential_field(r, p);
            phi += s * v;
            e[0] += s * f[0];
            e[1] += s * f[1];
            e[2] += s * f[2];
        }
        (phi, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Largest tolerated |potential - assigned voltage| at a collocation point, V.
    pub tolerance: f64,
    /// Smallest tolerated reciprocal condition number (infinity norm).
    pub min_rcond: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-4, min_rcond: 1e-13 }
    }
}

/// Unit-voltage surface charge of every electrode, on a shared mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSolution {
    pub mesh: PatchMesh,
    /// `sigma[e][j]`: charge density on patch `j` with electrode `e` at 1 V, C/m^2.
    pub sigma: Vec<Vec<f64>>,
    /// Boundary-condition residual (max norm) per electrode, V.
    pub residual: Vec<f64>,
    pub rcond: f64,
    pub options: SolveOptions,
    /// Content hash of the layout and mesh settings this basis was solved for.
    pub key: String,
}

/// Version tag folded into cache keys; bump when the numerics change.
const SOLVER_TAG: &str = "surftrap-bem-1";

pub fn basis_key(layout: &TrapLayout, config: &MeshConfig) -> String {
    let mut h = Sha256::new();
    h.update(SOLVER_TAG.as_bytes());
    h.update(serde_json::to_vec(layout).expect("layout serializes"));
    h.update(serde_json::to_vec(config).expect("config serializes"));
    hex::encode(h.finalize())
}

/// Collocation matrix `A[i][j]` = potential at centroid `i` from unit density on patch `j`, row-major.
pub fn collocation_matrix(mesh: &PatchMesh) -> Vec<f64> {
    let rects = mesh.rects();
    let n = rects.len();
    let mut a = vec![0.0; n * n];
    a.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let c = [rects[i].cx, rects[i].cy, 0.0];
        for (j, r) in rects.iter().enumerate() {
            row[j] = patch_potential(r, c);
        }
    });
    a
}

pub fn solve_basis(mesh: PatchMesh, options: &SolveOptions) -> Result<BasisSolution, FieldError> {
    solve_basis_keyed(mesh, options, String::new())
}

fn solve_basis_keyed(mesh: PatchMesh, options: &SolveOptions, key: String) -> Result<BasisSolution, FieldError> {
    let n = mesh.len();
    let a = collocation_matrix(&mesh);
    let anorm = a
        .par_chunks(n.max(1))
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .reduce(|| 0.0, f64::max);
    let mut lu = a.clone();
    let layout = MatrixLayout::C { row: n as i32, lda: n as i32 };
    let pivot = f64::lu(layout, &mut lu).map_err(|e| FieldError::Lapack(e.to_string()))?;
    let rcond = f64::rcond(layout, &lu, anorm).map_err(|e| FieldError::Lapack(e.to_string()))?;
    if !(rcond >= options.min_rcond) {
        return Err(FieldError::IllConditioned { rcond });
    }
    let mut sigma = Vec::with_capacity(mesh.ranges.len());
    let mut residual = Vec::with_capacity(mesh.ranges.len());
    for (e, range) in mesh.ranges.iter().enumerate() {
        let mut b = vec![0.0; n];
        for v in &mut b[range.clone()] {
            *v = 1.0;
        }
        let rhs = b.clone();
        f64::solve(layout, Transpose::No, &lu, &pivot, &mut b).map_err(|e| FieldError::Lapack(e.to_string()))?;
        let res = a
            .par_chunks(n)
            .zip(rhs.par_iter())
            .map(|(row, t)| (row.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() - t).abs())
            .reduce(|| 0.0, f64::max);
        if !(res <= options.tolerance) {
            return Err(FieldError::Residual {
                electrode: mesh.electrode_names[e].clone(),
                residual: res,
                tolerance: options.tolerance,
            });
        }
        sigma.push(b);
        residual.push(res);
    }
    Ok(BasisSolution { mesh, sigma, residual, rcond, options: *options, key })
}

impl BasisSolution {
    pub fn electrode_names(&self) -> &[String] {
        &self.mesh.electrode_names
    }

    pub fn index(&self, name: &str) -> Result<usize, FieldError> {
        self.mesh.electrode_index(name).ok_or_else(|| FieldError::UnknownElectrode(name.to_string()))
    }

    /// Charge distribution for the given electrode voltages; unlisted electrodes are at 0 V.
    pub fn charges(&self, voltages: &BTreeMap<String, f64>) -> Result<SurfaceCharge, FieldError> {
        let mut weights = vec![0.0; self.sigma.len()];
        for (name, v) in voltages {
            weights[self.index(name)?] += v;
        }
        Ok(self.weighted(&weights))
    }

    pub fn weighted(&self, weights: &[f64]) -> SurfaceCharge {
        let n = self.mesh.len();
        let mut s = vec![0.0; n];
        for (w, sig) in weights.iter().zip(&self.sigma) {
            if *w != 0.0 {
                for (acc, x) in s.iter_mut().zip(sig) {
                    *acc += w * x;
                }
            }
        }
        SurfaceCharge::new(self.mesh.rects(), s)
    }

    /// All electrodes of `role` at 1 V, everything else grounded.
    pub fn role_unit(&self, role: ElectrodeRole) -> SurfaceCharge {
        let w: Vec<f64> = self
            .mesh
            .electrode_roles
            .iter()
            .map(|r| if *r == role { 1.0 } else { 0.0 })
            .collect();
        self.weighted(&w)
    }

    pub fn unit(&self, name: &str) -> Result<SurfaceCharge, FieldError> {
        let mut w = vec![0.0; self.sigma.len()];
        w[self.index(name)?] = 1.0;
        Ok(self.weighted(&w))
    }

    pub fn potential(&self, voltages: &BTreeMap<String, f64>, p: [f64; 3]) -> Result<f64, FieldError> {
        Ok(self.charges(voltages)?.potential(p))
    }

    pub fn field(&self, voltages: &BTreeMap<String, f64>, p: [f64; 3]) -> Result<[f64; 3], FieldError> {
        Ok(self.charges(voltages)?.field(p))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FieldError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| FieldError::Cache {
            path: path.display().to_string(),
            why: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|source| FieldError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| FieldError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|e| FieldError::Cache { path: path.display().to_string(), why: e.to_string() })
    }
}

/// Directory of solved bases, one JSON file per content hash.
#[derive(Debug, Clone)]
pub struct BasisCache {
    pub dir: PathBuf,
}

impl BasisCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("basis-{key}.json"))
    }

    /// Loads the cached basis for `(layout, config)` or solves and stores it.
    /// Returns the basis and whether it came from the cache.
    pub fn get_or_solve(
        &self,
        layout: &TrapLayout,
        config: &MeshConfig,
        options: &SolveOptions,
    ) -> Result<(BasisSolution, bool), FieldError> {
        let key = basis_key(layout, config);
        let path = self.path_for(&key);
        if path.exists() {
            let b = BasisSolution::load(&path)?;
            if b.key == key {
                return Ok((b, true));
            }
        }
        let b = solve_layout_keyed(layout, config, options, key)?;
        std::fs::create_dir_all(&self.dir)
            .map_err(|source| FieldError::Io { path: self.dir.display().to_string(), source })?;
        b.save(&path)?;
        Ok((b, false))
    }
}

/// Mesh and solve in one step.
pub fn solve_layout(layout: &TrapLayout, config: &MeshConfig, options: &SolveOptions) -> Result<BasisSolution, FieldError> {
    solve_layout_keyed(layout, config, options, basis_key(layout, config))
}

fn solve_layout_keyed(
    layout: &TrapLayout,
    config: &MeshConfig,
    options: &SolveOptions,
    key: String,
) -> Result<BasisSolution, FieldError> {
    solve_basis_keyed(mesh(layout, config)?, options, key)
}
