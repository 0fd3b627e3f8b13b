//! Time-averaged (pseudo)potential of the rf drive and the trap parameters
//! derived from it: minimum, secular frequencies, Mathieu q and depth.

pub mod optimize;
mod quadratic;

pub use quadratic::QuadraticPotential;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{joules_to_ev, MATHIEU_Q_LIMIT};
use crate::fieldsolver::{BasisSolution, FieldError, StaticField};
use crate::geometry::{DriveConfig, ElectrodeRole, GeometryError, Species, TrapLayout};
use optimize::{gradient, hessian, hessian_from_field, nelder_mead, sym_eigen};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("minimum search did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("minimum search left the trap region (reached {position:?}); configuration is untrapped")]
    Untrapped { position: [f64; 3] },
    #[error("stationary point at {position:?} is not a minimum (Hessian eigenvalues {eigenvalues:?})")]
    NotMinimum { position: [f64; 3], eigenvalues: [f64; 3] },
    #[error("saddle refinement failed: {0}")]
    SaddleRefinement(String),
    #[error("non-finite pseudopotential at {0:?}")]
    NonFinite([f64; 3]),
    #[error("rf amplitudes must be positive and ascending")]
    BadSweep,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Relative finite-difference step, as a fraction of the ion height.
pub const FD_STEP: f64 = 1e-3;

/// `Psi(r) = Q^2 V^2 |E1(r)|^2 / (4 m Omega^2) + Q Phi_dc(r)`, in joules, where
/// `E1` is the field of the rf electrodes at 1 V.
#[derive(Clone)]
pub struct PseudoField {
    rf: Arc<dyn StaticField>,
    dc: Option<Arc<dyn StaticField>>,
    pub rf_amplitude: f64,
    pub omega: f64,
    pub species: Species,
}

impl std::fmt::Debug for PseudoField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PseudoField")
            .field("rf_amplitude", &self.rf_amplitude)
            .field("omega", &self.omega)
            .field("species", &self.species)
            .field("dc", &self.dc.is_some())
            .finish()
    }
}

impl PseudoField {
    pub fn new(
        rf_unit: Arc<dyn StaticField>,
        dc: Option<Arc<dyn StaticField>>,
        rf_amplitude: f64,
        omega: f64,
        species: Species,
    ) -> Self {
        Self { rf: rf_unit, dc, rf_amplitude, omega, species }
    }

    /// rf electrodes driven at the drive amplitude, dc electrodes at their assigned voltages.
    pub fn from_basis(basis: &BasisSolution, drive: &DriveConfig, species: Species) -> Result<Self, AnalysisError> {
        let rf = Arc::new(basis.role_unit(ElectrodeRole::Rf));
        let dc = if drive.dc_voltages.values().any(|v| *v != 0.0) {
            Some(Arc::new(basis.charges(&drive.dc_voltages)?) as Arc<dyn StaticField>)
        } else {
            None
        };
        Ok(Self::new(rf, dc, drive.rf_amplitude, drive.rf_angular_frequency, species))
    }

    /// Same as `from_basis` after checking the drive against the layout.
    pub fn for_layout(
        layout: &TrapLayout,
        basis: &BasisSolution,
        drive: &DriveConfig,
        species: Species,
    ) -> Result<Self, AnalysisError> {
        let drive = drive.resolve(layout)?;
        Self::from_basis(basis, &drive, species)
    }

    pub fn with_rf_amplitude(&self, v: f64) -> Self {
        Self { rf_amplitude: v, ..self.clone() }
    }

    pub fn rf_unit(&self) -> &Arc<dyn StaticField> {
        &self.rf
    }

    pub fn dc(&self) -> Option<&Arc<dyn StaticField>> {
        self.dc.as_ref()
    }

    /// Prefactor `Q^2 V^2 / (4 m Omega^2)`.
    fn rf_coefficient(&self) -> f64 {
        let q = self.species.charge_c();
        let v = self.rf_amplitude;
        q * q * v * v / (4.0 * self.species.mass * self.omega * self.omega)
    }

    pub fn psi(&self, p: [f64; 3]) -> f64 {
        let e = self.rf.field(p);
        let mut psi = self.rf_coefficient() * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
        if let Some(dc) = &self.dc {
            psi += self.species.charge_c() * dc.potential(p);
        }
        psi
    }

    pub fn psi_ev(&self, p: [f64; 3]) -> f64 {
        joules_to_ev(self.psi(p))
    }

    /// rf field amplitude at `p` for the configured drive amplitude, V/m.
    pub fn rf_field(&self, p: [f64; 3]) -> [f64; 3] {
        self.rf.field(p).map(|e| e * self.rf_amplitude)
    }

    pub fn dc_field(&self, p: [f64; 3]) -> [f64; 3] {
        self.dc.as_ref().map_or([0.0; 3], |d| d.field(p))
    }

    pub fn dc_potential(&self, p: [f64; 3]) -> f64 {
        self.dc.as_ref().map_or(0.0, |d| d.potential(p))
    }
}

fn fd_step(p: [f64; 3], fallback: f64) -> f64 {
    let h = if p[2] > 0.0 { p[2] } else { fallback };
    FD_STEP * h
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Local minimizer of the pseudopotential: simplex descent, then Newton steps on
/// a finite-difference Hessian.
pub fn find_minimum(field: &PseudoField, guess: [f64; 3]) -> Result<[f64; 3], AnalysisError> {
    let scale = if guess[2] > 0.0 { guess[2] } else { 1e-3 };
    let f = |p: [f64; 3]| field.psi(p);
    if !f(guess).is_finite() {
        return Err(AnalysisError::NonFinite(guess));
    }
    let nm = nelder_mead(&f, guess, 0.1 * scale, 1e-7 * scale, 4000);
    if !nm.converged {
        return Err(AnalysisError::NoConvergence { iterations: nm.iterations });
    }
    let wander = norm([nm.x[0] - guess[0], nm.x[1] - guess[1], nm.x[2] - guess[2]]);
    if !(wander < 50.0 * scale) || nm.x[2] <= 0.0 {
        return Err(AnalysisError::Untrapped { position: nm.x });
    }
    let mut x = nm.x;
    for _ in 0..30 {
        let h = fd_step(x, scale);
        let g = gradient(&f, x, h);
        let hm = hessian(&f, x, h);
        let (vals, _) = sym_eigen(&hm);
        if vals[0] <= 0.0 {
            return Err(AnalysisError::NotMinimum { position: x, eigenvalues: vals });
        }
        let dx = hm.cholesky().expect("positive definite").solve(&Vector3::from(g));
        let mut step = [-dx[0], -dx[1], -dx[2]];
        let len = norm(step);
        if len > 0.1 * scale {
            step = step.map(|s| s * 0.1 * scale / len);
        }
        for k in 0..3 {
            x[k] += step[k];
        }
        if len < 1e-10 * scale {
            break;
        }
    }
    let (vals, _) = sym_eigen(&hessian(&f, x, fd_step(x, scale)));
    if vals[0] <= 0.0 {
        return Err(AnalysisError::NotMinimum { position: x, eigenvalues: vals });
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Secular {
    /// Ascending, Hz.
    pub frequencies: [f64; 3],
    /// Unit principal axes matching `frequencies`.
    pub axes: [[f64; 3]; 3],
    /// Hessian eigenvalues of the pseudopotential, J/m^2.
    pub stiffness: [f64; 3],
}

pub fn secular_frequencies(field: &PseudoField, minimum: [f64; 3]) -> Result<Secular, AnalysisError> {
    let f = |p: [f64; 3]| field.psi(p);
    let hm = hessian(&f, minimum, fd_step(minimum, 1e-3));
    let (vals, axes) = sym_eigen(&hm);
    if vals[0] <= 0.0 {
        return Err(AnalysisError::NotMinimum { position: minimum, eigenvalues: vals });
    }
    let m = field.species.mass;
    let frequencies = vals.map(|l| (l / m).sqrt() / (2.0 * std::f64::consts::PI));
    Ok(Secular { frequencies, axes, stiffness: vals })
}

/// `q_i = 2 Q V (a_i . H1 . a_i) / (m Omega^2)` with `H1` the Hessian of the
/// unit rf potential and `a_i` the given axes.
pub fn mathieu_q(field: &PseudoField, minimum: [f64; 3], axes: &[[f64; 3]; 3]) -> [f64; 3] {
    if field.rf_amplitude == 0.0 {
        return [0.0; 3];
    }
    let e = |p: [f64; 3]| field.rf.field(p);
    let h1 = hessian_from_field(&e, minimum, fd_step(minimum, 1e-3));
    let k = 2.0 * field.species.charge_c() * field.rf_amplitude / (field.species.mass * field.omega * field.omega);
    axes.map(|a| {
        let v = Vector3::from(a);
        k * v.dot(&(h1 * v))
    })
}

/// Search settings for the escape saddle, in units of the ion height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSearch {
    /// Scan directions from the minimum (normalized internally). The first is vertical.
    pub directions: Vec<[f64; 3]>,
    pub max_distance: f64,
    pub step: f64,
}

impl Default for DepthSearch {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            directions: vec![[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, s, s], [0.0, -s, s]],
            max_distance: 20.0,
            step: 0.02,
        }
    }
}

impl DepthSearch {
    pub fn vertical_only() -> Self {
        Self { directions: vec![[0.0, 0.0, 1.0]], ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Depth {
    pub depth_ev: f64,
    pub escape_position: Option<[f64; 3]>,
    /// Hessian eigenvalues at the escape saddle (exactly one negative).
    pub saddle_eigenvalues: Option<[f64; 3]>,
    pub diagnostic: Option<String>,
}

/// First interior maximum of `psi` along a ray, if the ray leaves it behind.
fn bracket_ray(field: &PseudoField, start: [f64; 3], dir: [f64; 3], height: f64, search: &DepthSearch) -> Option<[f64; 3]> {
    let n = norm(dir);
    let d = dir.map(|c| c / n);
    let steps = (search.max_distance / search.step).ceil() as usize;
    let at = |t: f64| [start[0] + t * d[0], start[1] + t * d[1], start[2] + t * d[2]];
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut falling = 0;
    for i in 1..=steps {
        let t = i as f64 * search.step * height;
        let p = at(t);
        if p[2] <= 0.02 * height {
            return None;
        }
        let v = field.psi(p);
        if !v.is_finite() {
            return None;
        }
        if v > best.0 {
            best = (v, t);
            falling = 0;
        } else {
            falling += 1;
            if falling >= 3 {
                return Some(at(best.1));
            }
        }
    }
    None
}

/// Eigenvector following: uphill along the softest mode, downhill along the rest.
fn refine_saddle(field: &PseudoField, start: [f64; 3], height: f64) -> Result<([f64; 3], [f64; 3]), AnalysisError> {
    let f = |p: [f64; 3]| field.psi(p);
    let h = FD_STEP * height;
    let trust = 0.1 * height;
    let mut x = start;
    for _ in 0..200 {
        let g = Vector3::from(gradient(&f, x, h));
        let (vals, vecs) = sym_eigen(&hessian(&f, x, h));
        let floor = 1e-6 * vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut step = Vector3::zeros();
        for k in 0..3 {
            let v = Vector3::from(vecs[k]);
            let gk = v.dot(&g);
            let lam = vals[k].abs().max(floor);
            step += v * if k == 0 { gk / lam } else { -gk / lam };
        }
        let len = step.norm();
        if len > trust {
            step *= trust / len;
        }
        x = [x[0] + step[0], x[1] + step[1], x[2] + step[2]];
        if x[2] <= 0.0 {
            return Err(AnalysisError::SaddleRefinement("walked into the electrode plane".into()));
        }
        if len < 1e-9 * height {
            let (vals, _) = sym_eigen(&hessian(&f, x, h));
            if vals[0] < 0.0 && vals[1] > 0.0 {
                return Ok((x, vals));
            }
            return Err(AnalysisError::SaddleRefinement(format!(
                "stationary point has Hessian eigenvalues {vals:?}, not exactly one negative"
            )));
        }
    }
    Err(AnalysisError::SaddleRefinement("no convergence in 200 iterations".into()))
}

/// Barrier height between the minimum and the lowest saddle found by scanning
/// the configured rays and refining each bracketed maximum.
pub fn trap_depth(field: &PseudoField, minimum: [f64; 3], search: &DepthSearch) -> Result<Depth, AnalysisError> {
    let height = if minimum[2] > 0.0 { minimum[2] } else { 1e-3 };
    let psi0 = field.psi(minimum);
    let mut best: Option<([f64; 3], [f64; 3], f64)> = None;
    let mut failures = Vec::new();
    for dir in &search.directions {
        let Some(start) = bracket_ray(field, minimum, *dir, height, search) else { continue };
        match refine_saddle(field, start, height) {
            Ok((s, vals)) => {
                let d = field.psi(s) - psi0;
                if d >= 0.0 && best.as_ref().is_none_or(|b| d < b.2) {
                    best = Some((s, vals, d));
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    match best {
        Some((s, vals, d)) => Ok(Depth {
            depth_ev: joules_to_ev(d),
            escape_position: Some(s),
            saddle_eigenvalues: Some(vals),
            diagnostic: None,
        }),
        None if !failures.is_empty() => Err(AnalysisError::SaddleRefinement(failures.join("; "))),
        None => Ok(Depth {
            depth_ev: 0.0,
            escape_position: None,
            saddle_eigenvalues: None,
            diagnostic: Some(format!(
                "no barrier within {} ion heights along any search ray; configuration is untrapped",
                search.max_distance
            )),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapAnalysis {
    pub minimum_position: [f64; 3],
    pub secular: Secular,
    pub mathieu_q: [f64; 3],
    /// True when every `|q| < 0.908`.
    pub stable: bool,
    pub depth_ev: f64,
    pub escape_position: Option<[f64; 3]>,
    pub diagnostic: Option<String>,
}

impl TrapAnalysis {
    pub fn height(&self) -> f64 {
        self.minimum_position[2]
    }

    pub fn q_max(&self) -> f64 {
        self.mathieu_q.iter().map(|q| q.abs()).fold(0.0, f64::max)
    }

    /// Secular frequencies assigned to the coordinate axis each principal axis
    /// is closest to; sorted order if that assignment is ambiguous.
    pub fn frequencies_xyz(&self) -> [f64; 3] {
        let mut out = [f64::NAN; 3];
        for (f, a) in self.secular.frequencies.iter().zip(&self.secular.axes) {
            let k = (0..3).max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs())).unwrap();
            if !out[k].is_nan() {
                return self.secular.frequencies;
            }
            out[k] = *f;
        }
        out
    }
}

pub fn analyze(field: &PseudoField, guess: [f64; 3], search: &DepthSearch) -> Result<TrapAnalysis, AnalysisError> {
    let minimum = find_minimum(field, guess)?;
    let secular = secular_frequencies(field, minimum)?;
    let q = mathieu_q(field, minimum, &secular.axes);
    let depth = trap_depth(field, minimum, search)?;
    Ok(TrapAnalysis {
        minimum_position: minimum,
        secular,
        mathieu_q: q,
        stable: q.iter().all(|v| v.abs() < MATHIEU_Q_LIMIT),
        depth_ev: depth.depth_ev,
        escape_position: depth.escape_position,
        diagnostic: depth.diagnostic,
    })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub rf_amplitude: f64,
    pub result: Result<TrapAnalysis, String>,
}

pub const SWEEP_HEADER: &str = "Vrf_V,depth_eV,fx_Hz,fy_Hz,fz_Hz,qmax,esc_x_m,esc_y_m,esc_z_m";

/// Analyzes the template at each rf amplitude, in parallel, rows in input order.
pub fn sweep_depth(
    template: &PseudoField,
    amplitudes: &[f64],
    guess: [f64; 3],
    search: &DepthSearch,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if amplitudes.iter().any(|v| !(*v > 0.0)) || amplitudes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::BadSweep);
    }
    Ok(amplitudes
        .par_iter()
        .map(|&v| SweepRow {
            rf_amplitude: v,
            result: analyze(&template.with_rf_amplitude(v), guess, search).map_err(|e| e.to_string()),
        })
        .collect())
}

impl SweepRow {
    pub fn csv_fields(&self) -> [f64; 9] {
        match &self.result {
            Ok(a) => {
                let f = a.frequencies_xyz();
                let e = a.escape_position.unwrap_or([f64::NAN; 3]);
                [self.rf_amplitude, a.depth_ev, f[0], f[1], f[2], a.q_max(), e[0], e[1], e[2]]
            }
            Err(_) => {
                let mut r = [f64::NAN; 9];
                r[0] = self.rf_amplitude;
                r
            }
        }
    }
}

/// CSV text; failed rows carry NaN fields preceded by a `# row N failed:` comment.
pub fn sweep_csv(rows: &[SweepRow], header_comment: &str) -> String {
    let mut out = String::new();
    for line in header_comment.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        if let Err(e) = &r.result {
            out.push_str(&format!("# row {i} failed: {e}\n"));
        }
        let fields: Vec<String> = r.csv_fields().iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_sweep_csv(rows: &[SweepRow], header_comment: &str, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(sweep_csv(rows, header_comment).as_bytes())
}

/// Parses `sweep_csv` output back into numeric rows, skipping comments.
pub fn read_sweep_csv(text: &str) -> Result<Vec<[f64; 9]>, String> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line != SWEEP_HEADER {
                return Err(format!("unexpected header '{line}'"));
            }
            seen_header = true;
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| format!("bad number in '{line}': {e}"))?;
        let row: [f64; 9] = vals.try_into().map_err(|_| format!("expected 9 fields in '{line}'"))?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ELEMENTARY_CHARGE;

    fn quadrupole_field(v: f64, coeffs: [f64; 3]) -> PseudoField {
        let center = [0.0, 0.0, 1e-3];
        let rf = Arc::new(QuadraticPotential::quadrupole(2e-3, coeffs, center));
        PseudoField::new(rf, None, v, 2.0 * std::f64::consts::PI * 8e6, Species::sr88())
    }

    #[test]
    fn quadrupole_minimum_is_the_center() {
        let f = quadrupole_field(200.0, [1.0, 1.0, -2.0]);
        let m = find_minimum(&f, [0.1e-3, -0.2e-3, 1.3e-3]).unwrap();
        for (a, b) in m.iter().zip([0.0, 0.0, 1e-3]) {
            assert!((a - b).abs() < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn quadrupole_frequencies_match_small_q_limit() {
        let f = quadrupole_field(200.0, [1.0, 1.0, -2.0]);
        let m = [0.0, 0.0, 1e-3];
        let s = secular_frequencies(&f, m).unwrap();
        let q = mathieu_q(&f, m, &s.axes);
        let species = Species::sr88();
        let qm = 2.0 * species.charge_c() * 200.0 / (species.mass * f.omega * f.omega * 4e-6);
        let fx = qm * f.omega / (2.0 * std::f64::consts::PI * 2.0 * 2f64.sqrt());
        assert!((s.frequencies[0] / fx - 1.0).abs() < 1e-6);
        assert!((s.frequencies[2] / (2.0 * fx) - 1.0).abs() < 1e-6);
        assert!((q[0] - qm).abs() < 1e-6 * qm && (q[2] + 2.0 * qm).abs() < 1e-6 * qm);
        assert!(q.iter().sum::<f64>().abs() < 1e-6 * qm);
    }

    #[test]
    fn zero_amplitude_gives_zero_q() {
        let f = quadrupole_field(0.0, [1.0, -1.0, 0.0]);
        assert_eq!(mathieu_q(&f, [0.0, 0.0, 1e-3], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), [0.0; 3]);
    }

    #[test]
    fn dc_only_harmonic_well_has_no_barrier() {
        let well = Arc::new(QuadraticPotential { center: [0.0, 0.0, 1e-3], curvature: [1e6, 2e6, 3e6] });
        let f = PseudoField::new(Arc::new(QuadraticPotential::linear(1.0, [0.0; 3])), Some(well), 0.0, 1e7, Species::sr88());
        let d = trap_depth(&f, [0.0, 0.0, 1e-3], &DepthSearch::default()).unwrap();
        assert_eq!(d.depth_ev, 0.0);
        assert!(d.diagnostic.is_some());
        let k = ELEMENTARY_CHARGE * 1e6;
        let s = secular_frequencies(&f, [0.0, 0.0, 1e-3]).unwrap();
        let want = (k / f.species.mass).sqrt() / (2.0 * std::f64::consts::PI);
        assert!((s.frequencies[0] / want - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sweep_rejects_descending_amplitudes() {
        let f = quadrupole_field(1.0, [1.0, 1.0, -2.0]);
        assert!(sweep_depth(&f, &[2.0, 1.0], [0.0, 0.0, 1e-3], &DepthSearch::default()).is_err());
        assert!(sweep_depth(&f, &[], [0.0, 0.0, 1e-3], &DepthSearch::default()).unwrap().is_empty());
    }
}
