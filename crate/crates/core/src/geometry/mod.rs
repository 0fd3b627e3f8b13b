//! Trap layouts, drive settings and ion species.
//!
//! Everything here is SI: positions in meters, voltages in volts, angular
//! frequencies in rad/s, masses in kg. Masses are accepted in unified atomic
//! mass units only at construction (`Species::from_amu`).

mod polygon;

pub use polygon::{overlap_area, Polygon};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, SR88_MASS_U};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElectrodeRole {
    Rf,
    Dc,
    Ground,
}

impl fmt::Display for ElectrodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElectrodeRole::Rf => "rf",
            ElectrodeRole::Dc => "dc",
            ElectrodeRole::Ground => "ground",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub role: ElectrodeRole,
    pub polygons: Vec<Polygon>,
}

impl Electrode {
    pub fn new(name: impl Into<String>, role: ElectrodeRole, polygons: Vec<Polygon>) -> Self {
        Self { name: name.into(), role, polygons }
    }

    pub fn area(&self) -> f64 {
        self.polygons.iter().map(Polygon::area).sum()
    }
}

/// Bounding rectangle of a layout in the electrode plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains_bbox(&self, b: [f64; 4]) -> bool {
        b[0] >= self.x_min && b[2] <= self.x_max && b[1] >= self.y_min && b[3] <= self.y_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapLayout {
    pub name: String,
    pub extent: Extent,
    pub electrodes: Vec<Electrode>,
    /// Free-form notes (calibration record); JSON has no comments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    TooFewVertices,
    SelfIntersecting,
    ZeroArea,
    NonFiniteVertex,
    Overlap,
    DuplicateName,
    OutsideExtent,
    NoRfElectrode,
    NoPolygons,
}

/// One failed layout invariant. `electrode` names the offender; `other` the
/// second electrode for pairwise violations.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub electrode: Option<String>,
    pub other: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {what}: {source}")]
    Parse { what: String, source: serde_json::Error },
    #[error("invalid layout: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("invalid drive: {0}")]
    Drive(String),
    #[error("invalid species: {0}")]
    Species(String),
}

/// Relative tolerance on overlap area before two electrodes count as overlapping.
const OVERLAP_REL_TOL: f64 = 1e-9;

impl TrapLayout {
    pub fn electrode(&self, name: &str) -> Option<&Electrode> {
        self.electrodes.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.electrodes.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn names_with_role(&self, role: ElectrodeRole) -> Vec<&str> {
        self.electrodes
            .iter()
            .filter(|e| e.role == role)
            .map(|e| e.name.as_str())
            .collect()
    }

    /// Smallest bounding-box side over all polygons.
    pub fn smallest_feature(&self) -> f64 {
        self.electrodes
            .iter()
            .flat_map(|e| e.polygons.iter())
            .map(|p| {
                let b = p.bbox();
                (b[2] - b[0]).min(b[3] - b[1])
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks every layout invariant; an empty list means the layout is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for e in &self.electrodes {
            if !seen.insert(e.name.as_str()) {
                out.push(Violation {
                    kind: ViolationKind::DuplicateName,
                    electrode: Some(e.name.clone()),
                    other: None,
                    message: format!("electrode name '{}' is not unique", e.name),
                });
            }
            if e.polygons.is_empty() {
                out.push(Violation {
                    kind: ViolationKind::NoPolygons,
                    electrode: Some(e.name.clone()),
                    other: None,
                    message: format!("electrode '{}' has no polygons", e.name),
                });
            }
            for (k, p) in e.polygons.iter().enumerate() {
                let who = Some(e.name.clone());
                if p.len() < 3 {
                    out.push(Violation {
                        kind: ViolationKind::TooFewVertices,
                        electrode: who,
                        other: None,
                        message: format!(
                            "electrode '{}' polygon {k} has {} vertices (need at least 3)",
                            e.name,
                            p.len()
                        ),
                    });
                    continue;
                }
                if p.vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
                    out.push(Violation {
                        kind: ViolationKind::NonFiniteVertex,
                        electrode: who,
                        other: None,
                        message: format!("electrode '{}' polygon {k} has a non-finite vertex", e.name),
                    });
                    continue;
                }
                if !p.self_intersections().is_empty() {
                    out.push(Violation {
                        kind: ViolationKind::SelfIntersecting,
                        electrode: who.clone(),
                        other: None,
                        message: format!("electrode '{}' polygon {k} is self-intersecting", e.name),
                    });
                }
                if p.area() == 0.0 {
                    out.push(Violation {
                        kind: ViolationKind::ZeroArea,
                        electrode: who.clone(),
                        other: None,
                        message: format!("electrode '{}' polygon {k} has zero area", e.name),
                    });
                }
                if !self.extent.contains_bbox(p.bbox()) {
                    out.push(Violation {
                        kind: ViolationKind::OutsideExtent,
                        electrode: who,
                        other: None,
                        message: format!("electrode '{}' polygon {k} lies outside the layout extent", e.name),
                    });
                }
            }
        }
        if !self.electrodes.iter().any(|e| e.role == ElectrodeRole::Rf) {
            out.push(Violation {
                kind: ViolationKind::NoRfElectrode,
                electrode: None,
                other: None,
                message: "layout has no rf electrode".into(),
            });
        }
        // Pairwise overlap between distinct electrodes (only for well-formed polygons).
        let ok = |p: &Polygon| p.len() >= 3 && p.vertices.iter().all(|v| v[0].is_finite() && v[1].is_finite());
        for (i, a) in self.electrodes.iter().enumerate() {
            for b in &self.electrodes[i + 1..] {
                let overlapping = a.polygons.iter().filter(|p| ok(p)).any(|pa| {
                    b.polygons.iter().filter(|p| ok(p)).any(|pb| {
                        let tol = OVERLAP_REL_TOL * pa.area().min(pb.area());
                        overlap_area(pa, pb) > tol
                    })
                });
                if overlapping {
                    out.push(Violation {
                        kind: ViolationKind::Overlap,
                        electrode: Some(a.name.clone()),
                        other: Some(b.name.clone()),
                        message: format!("electrodes '{}' and '{}' overlap", a.name, b.name),
                    });
                }
            }
        }
        out
    }

    /// Returns `self` if valid, else the violations as an error.
    pub fn validated(self) -> Result<Self, GeometryError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(GeometryError::Invalid(v))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let layout: TrapLayout = serde_json::from_str(text).map_err(|source| GeometryError::Parse {
            what: "layout".into(),
            source,
        })?;
        layout.validated()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GeometryError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| GeometryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Layout reflected across the line x = 0 (the trap's long axis), names kept.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.electrodes {
            for p in &mut e.polygons {
                *p = p.mirrored_x(0.0);
            }
        }
        out.extent = Extent {
            x_min: -self.extent.x_max,
            x_max: -self.extent.x_min,
            ..self.extent
        };
        out
    }

    /// Multiset of (role, canonical polygon) pairs, for name-independent comparison.
    pub fn shape_set(&self) -> Vec<(ElectrodeRole, Vec<[u64; 2]>)> {
        let mut v: Vec<_> = self
            .electrodes
            .iter()
            .flat_map(|e| e.polygons.iter().map(move |p| (e.role, canonical_vertices(p))))
            .collect();
        v.sort();
        v
    }
}

/// Vertex list rotated to start at the smallest vertex, counter-clockwise, with
/// coordinates as bit patterns (after normalizing -0.0).
fn canonical_vertices(p: &Polygon) -> Vec<[u64; 2]> {
    let mut v = p.vertices.clone();
    if p.signed_area() < 0.0 {
        v.reverse();
    }
    let key = |a: &[f64; 2]| [(a[0] + 0.0).to_bits(), (a[1] + 0.0).to_bits()];
    let start = (0..v.len())
        .min_by(|&i, &j| {
            v[i][0]
                .total_cmp(&v[j][0])
                .then(v[i][1].total_cmp(&v[j][1]))
        })
        .unwrap_or(0);
    v.rotate_left(start);
    v.iter().map(key).collect()
}

pub fn load_layout(path: impl AsRef<Path>) -> Result<TrapLayout, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TrapLayout::from_json(&text)
}

pub fn validate(layout: &TrapLayout) -> Vec<Violation> {
    layout.validate()
}

/// The bundled five-wire layout; see `data/default_layout.json` for how it was calibrated.
pub const DEFAULT_LAYOUT_JSON: &str = include_str!("../../data/default_layout.json");

pub fn default_layout() -> TrapLayout {
    TrapLayout::from_json(DEFAULT_LAYOUT_JSON).expect("bundled default layout is valid")
}

/// Parameters of a symmetric five-wire surface trap: a grounded center strip,
/// two rf rails, and segmented dc electrodes outside the rails. The long axis is y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveWire {
    pub center_width: f64,
    pub rail_width: f64,
    pub gap: f64,
    pub dc_width: f64,
    pub segments_per_side: usize,
    pub length: f64,
}

impl FiveWire {
    /// Center-to-center distance between the two rf rails.
    pub fn rail_spacing(&self) -> f64 {
        self.center_width + 2.0 * self.gap + self.rail_width
    }

    pub fn build(&self, name: &str) -> TrapLayout {
        let half_c = 0.5 * self.center_width;
        let half_l = 0.5 * self.length;
        let rail_in = half_c + self.gap;
        let rail_out = rail_in + self.rail_width;
        let dc_in = rail_out + self.gap;
        let dc_out = dc_in + self.dc_width;
        let mut electrodes = vec![
            Electrode::new("center", ElectrodeRole::Ground, vec![Polygon::rect(-half_c, -half_l, half_c, half_l)]),
            Electrode::new(
                "rf",
                ElectrodeRole::Rf,
                vec![
                    Polygon::rect(-rail_out, -half_l, -rail_in, half_l),
                    Polygon::rect(rail_in, -half_l, rail_out, half_l),
                ],
            ),
        ];
        let n = self.segments_per_side;
        let pitch = (self.length + self.gap) / n as f64;
        let seg = pitch - self.gap;
        for side in ["left", "right"] {
            for k in 0..n {
                let y0 = -half_l + k as f64 * pitch;
                let poly = if side == "left" {
                    Polygon::rect(-dc_out, y0, -dc_in, y0 + seg)
                } else {
                    Polygon::rect(dc_in, y0, dc_out, y0 + seg)
                };
                electrodes.push(Electrode::new(format!("dc_{side}_{}", k + 1), ElectrodeRole::Dc, vec![poly]));
            }
        }
        TrapLayout {
            name: name.to_string(),
            extent: Extent {
                x_min: -dc_out,
                x_max: dc_out,
                y_min: -half_l,
                y_max: half_l,
            },
            electrodes,
            notes: None,
        }
    }
}

/// How the `rf_frequency_hz` number of a drive file is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyConvention {
    /// The number is Omega / 2 pi (the default).
    #[default]
    Cyclic,
    /// The number is Omega itself, in rad/s.
    Angular,
}

/// RF amplitude (zero-to-peak), RF angular frequency and static electrode voltages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub rf_amplitude: f64,
    pub rf_angular_frequency: f64,
    pub dc_voltages: BTreeMap<String, f64>,
}

/// On-disk drive description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveFile {
    pub rf_amplitude_volts: f64,
    pub rf_frequency_hz: f64,
    #[serde(default)]
    pub dc_voltages: BTreeMap<String, f64>,
    #[serde(default)]
    pub frequency_convention: FrequencyConvention,
}

impl DriveConfig {
    pub fn new(rf_amplitude: f64, rf_frequency_hz: f64) -> Self {
        Self {
            rf_amplitude,
            rf_angular_frequency: 2.0 * std::f64::consts::PI * rf_frequency_hz,
            dc_voltages: BTreeMap::new(),
        }
    }

    pub fn with_dc(mut self, name: impl Into<String>, volts: f64) -> Self {
        self.dc_voltages.insert(name.into(), volts);
        self
    }

    pub fn rf_frequency_hz(&self) -> f64 {
        self.rf_angular_frequency / (2.0 * std::f64::consts::PI)
    }

    pub fn rf_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.rf_angular_frequency
    }

    pub fn with_rf_amplitude(&self, v: f64) -> Self {
        Self { rf_amplitude: v, ..self.clone() }
    }

    /// Checks the drive against a layout and fills every dc electrode without an
    /// entry with 0 V. Names that are not dc or ground electrodes are rejected.
    pub fn resolve(&self, layout: &TrapLayout) -> Result<Self, GeometryError> {
        if !(self.rf_angular_frequency > 0.0) {
            return Err(GeometryError::Drive("rf angular frequency must be positive".into()));
        }
        if !(self.rf_amplitude >= 0.0) {
            return Err(GeometryError::Drive("rf amplitude must be non-negative".into()));
        }
        let mut out = self.clone();
        for (name, v) in &self.dc_voltages {
            match layout.electrode(name) {
                None => return Err(GeometryError::Drive(format!("unknown electrode '{name}'"))),
                Some(e) if e.role == ElectrodeRole::Rf => {
                    return Err(GeometryError::Drive(format!("'{name}' is an rf electrode")))
                }
                Some(_) if !v.is_finite() => {
                    return Err(GeometryError::Drive(format!("voltage on '{name}' is not finite")))
                }
                Some(_) => {}
            }
        }
        for name in layout.names_with_role(ElectrodeRole::Dc) {
            out.dc_voltages.entry(name.to_string()).or_insert(0.0);
        }
        Ok(out)
    }

    pub fn from_file(file: &DriveFile) -> Self {
        let omega = match file.frequency_convention {
            FrequencyConvention::Cyclic => 2.0 * std::f64::consts::PI * file.rf_frequency_hz,
            FrequencyConvention::Angular => file.rf_frequency_hz,
        };
        Self {
            rf_amplitude: file.rf_amplitude_volts,
            rf_angular_frequency: omega,
            dc_voltages: file.dc_voltages.clone(),
        }
    }

    pub fn to_file(&self) -> DriveFile {
        DriveFile {
            rf_amplitude_volts: self.rf_amplitude,
            rf_frequency_hz: self.rf_frequency_hz(),
            dc_voltages: self.dc_voltages.clone(),
            frequency_convention: FrequencyConvention::Cyclic,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let file: DriveFile = serde_json::from_str(text).map_err(|source| GeometryError::Parse {
            what: "drive".into(),
            source,
        })?;
        Ok(Self::from_file(&file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Species {
    /// kg
    pub mass: f64,
    /// Multiple of the elementary charge.
    pub charge: i32,
}

impl Species {
    pub fn from_amu(mass_u: f64, charge: i32) -> Result<Self, GeometryError> {
        if !(mass_u > 0.0) || !mass_u.is_finite() {
            return Err(GeometryError::Species(format!("mass must be positive, got {mass_u} u")));
        }
        if charge == 0 {
            return Err(GeometryError::Species("charge must be non-zero".into()));
        }
        Ok(Self { mass: mass_u * ATOMIC_MASS_UNIT, charge })
    }

    pub fn sr88() -> Self {
        Self::from_amu(SR88_MASS_U, 1).expect("valid species")
    }

    /// Charge in coulombs.
    pub fn charge_c(&self) -> f64 {
        self.charge as f64 * ELEMENTARY_CHARGE
    }

    pub fn mass_amu(&self) -> f64 {
        self.mass / ATOMIC_MASS_UNIT
    }
}
