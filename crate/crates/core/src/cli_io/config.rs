//! TOML run configuration. Every field has a default; command-line flags
//! override the file and the resolved result is echoed into output headers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dynamics::{IntegratorConfig, Recovery, VoltageTimeline};
use crate::fieldsolver::{GridBox, MeshConfig};
use crate::geometry::{DriveConfig, Species};
use crate::loading_mc::{MonteCarlo, PlumeModel, ThermalSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Layout JSON; the built-in calibrated five-wire layout when empty.
    pub layout: String,
    /// Basis cache directory; no caching when empty.
    pub cache_dir: String,
    pub drive: DriveSection,
    pub species: SpeciesSection,
    pub mesh: MeshSection,
    pub analysis: AnalysisSection,
    pub sweep: SweepSection,
    pub load: LoadSection,
    pub plume: PlumeSection,
    pub timeline: TimelineSection,
    pub source: SourceSection,
    pub integrator: IntegratorSection,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            layout: String::new(),
            cache_dir: String::new(),
            drive: DriveSection::default(),
            species: SpeciesSection::default(),
            mesh: MeshSection::default(),
            analysis: AnalysisSection::default(),
            sweep: SweepSection::default(),
            load: LoadSection::default(),
            plume: PlumeSection::default(),
            timeline: TimelineSection::default(),
            source: SourceSection::default(),
            integrator: IntegratorSection::default(),
            export: ExportSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    /// Zero-to-peak rf amplitude, V.
    pub rf_amplitude: f64,
    /// Omega / 2 pi, Hz.
    pub frequency_hz: f64,
    pub dc: BTreeMap<String, f64>,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self { rf_amplitude: 200.0, frequency_hz: 8e6, dc: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeciesSection {
    pub mass_u: f64,
    pub charge: i32,
}

impl Default for SpeciesSection {
    fn default() -> Self {
        Self { mass_u: crate::constants::SR88_MASS_U, charge: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub resolution: f64,
    pub max_patches: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { resolution: 8.0, max_patches: 6000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Starting point of the minimum search, m.
    pub guess: [f64; 3],
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { guess: [0.0, 0.0, 0.8e-3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { from: 200.0, to: 600.0, points: 10 }
    }
}

impl SweepSection {
    pub fn amplitudes(&self) -> Vec<f64> {
        linspace(self.from, self.to, self.points)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadSection {
    /// rf amplitudes of the loading sweep, V.
    pub from: f64,
    pub to: f64,
    pub points: usize,
    pub trials: usize,
    pub seed: u64,
    pub prefilter: bool,
    /// Spacing of the tabulated field used for trajectories, m.
    pub grid_spacing: f64,
    pub escape_min: [f64; 3],
    pub escape_max: [f64; 3],
    pub radial_capture: bool,
    pub p_min: f64,
}

impl Default for LoadSection {
    fn default() -> Self {
        Self {
            from: 60.0,
            to: 600.0,
            points: 10,
            trials: 500,
            seed: 1,
            prefilter: true,
            grid_spacing: 125e-6,
            escape_min: [-3e-3, -6e-3, 0.0],
            escape_max: [3e-3, 6e-3, 4e-3],
            radial_capture: true,
            p_min: 0.1,
        }
    }
}

impl LoadSection {
    pub fn amplitudes(&self) -> Vec<f64> {
        linspace(self.from, self.to, self.points)
    }

    pub fn escape_box(&self) -> GridBox {
        GridBox::new(self.escape_min, self.escape_max)
    }

    pub fn monte_carlo(&self) -> MonteCarlo {
        MonteCarlo { trials: self.trials, seed: self.seed, prefilter: self.prefilter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlumeSection {
    /// Source distance from the trap minimum, m.
    pub distance: f64,
    /// Direction from the trap minimum to the source.
    pub direction: [f64; 3],
    pub drift_speed: f64,
    pub temperature: f64,
    pub cone_half_angle_deg: f64,
    pub emission_spread: f64,
}

impl Default for PlumeSection {
    fn default() -> Self {
        let p = PlumeModel::toward([0.0; 3]);
        Self {
            distance: 25e-3,
            direction: [-1.0, 0.0, 0.0],
            drift_speed: p.drift_speed,
            temperature: p.temperature,
            cone_half_angle_deg: p.cone_half_angle.to_degrees(),
            emission_spread: p.emission_spread,
        }
    }
}

impl PlumeSection {
    pub fn model(&self, center: [f64; 3]) -> PlumeModel {
        PlumeModel {
            drift_speed: self.drift_speed,
            temperature: self.temperature,
            cone_half_angle: self.cone_half_angle_deg.to_radians(),
            emission_spread: self.emission_spread,
            ..PlumeModel::from_direction(center, self.direction, self.distance)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimelineSection {
    pub short_us: f64,
    /// `step` or `exp:TAU_US`.
    pub recovery: String,
}

impl Default for TimelineSection {
    fn default() -> Self {
        Self { short_us: 10.0, recovery: "step".into() }
    }
}

impl TimelineSection {
    pub fn timeline(&self) -> Result<VoltageTimeline, CliError> {
        let tl = VoltageTimeline::shorted(0.0, self.short_us / 1e6, parse_recovery(&self.recovery)?, 0.0);
        tl.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(tl)
    }
}

pub fn parse_recovery(s: &str) -> Result<Recovery, CliError> {
    if s == "step" {
        return Ok(Recovery::Step);
    }
    if let Some(t) = s.strip_prefix("exp:") {
        let tau: f64 = t.parse().map_err(|_| CliError::Config(format!("bad recovery time constant '{t}'")))?;
        if !(tau > 0.0) {
            return Err(CliError::Config(format!("recovery time constant must be > 0, got {tau}")));
        }
        return Ok(Recovery::Exponential { tau: tau / 1e6 });
    }
    Err(CliError::Config(format!("recovery must be 'step' or 'exp:TAU_US', got '{s}'")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub temperature: f64,
    pub half_widths: [f64; 3],
}

impl Default for SourceSection {
    fn default() -> Self {
        let s = ThermalSource::default();
        Self { temperature: s.temperature, half_widths: s.half_widths }
    }
}

impl SourceSection {
    pub fn source(&self) -> ThermalSource {
        ThermalSource { temperature: self.temperature, half_widths: self.half_widths }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub steps_per_rf_period: usize,
    pub max_rf_periods: usize,
    pub damping_rate: f64,
    pub capture_radius: f64,
    pub capture_window_periods: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let c = IntegratorConfig::new([0.0; 3], GridBox::new([0.0; 3], [1.0; 3]));
        Self {
            steps_per_rf_period: c.steps_per_rf_period,
            max_rf_periods: c.max_rf_periods,
            damping_rate: c.damping_rate,
            capture_radius: c.capture_radius,
            capture_window_periods: c.capture_window_periods,
        }
    }
}

impl IntegratorSection {
    pub fn apply(&self, mut c: IntegratorConfig) -> IntegratorConfig {
        c.steps_per_rf_period = self.steps_per_rf_period;
        c.max_rf_periods = self.max_rf_periods;
        c.damping_rate = self.damping_rate;
        c.capture_radius = self.capture_radius;
        c.capture_window_periods = self.capture_window_periods;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// `rf` (rf electrodes at 1 V), `dc` (the configured dc voltages) or an electrode name at 1 V.
    pub source: String,
    pub spacing: f64,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { source: "rf".into(), spacing: 100e-6, min: [-1e-3, -1e-3, 0.2e-3], max: [1e-3, 1e-3, 2e-3] }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub layout: Option<PathBuf>,
    pub vrf: Option<f64>,
    pub freq: Option<f64>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub short_us: Option<f64>,
    pub recovery: Option<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(p) = &o.layout {
            self.layout = p.display().to_string();
        }
        if let Some(v) = o.vrf {
            self.drive.rf_amplitude = v;
        }
        if let Some(f) = o.freq {
            self.drive.frequency_hz = f;
        }
        if let Some(s) = o.seed {
            self.load.seed = s;
        }
        if let Some(t) = o.trials {
            self.load.trials = t;
        }
        if let Some(s) = o.short_us {
            self.timeline.short_us = s;
        }
        if let Some(r) = &o.recovery {
            parse_recovery(r)?;
            self.timeline.recovery = r.clone();
        }
        Ok(())
    }

    pub fn drive(&self) -> DriveConfig {
        let mut d = DriveConfig::new(self.drive.rf_amplitude, self.drive.frequency_hz);
        d.dc_voltages = self.drive.dc.clone();
        d
    }

    pub fn species(&self) -> Result<Species, CliError> {
        Species::from_amu(self.species.mass_u, self.species.charge).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn mesh_config(&self) -> MeshConfig {
        MeshConfig { max_patches: self.mesh.max_patches, ..MeshConfig::with_resolution(self.mesh.resolution) }
    }

    /// The resolved configuration as `#`-free comment text.
    pub fn echo(&self) -> String {
        let mut s = String::from("resolved configuration:\n");
        s.push_str(&self.to_toml());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_overrides() {
        let mut c = RunConfig::from_toml("[drive]\nrf_amplitude = 300.0\n[drive.dc]\ndc_left_1 = 0.5\n").unwrap();
        assert_eq!(c.drive.rf_amplitude, 300.0);
        assert_eq!(c.drive.dc["dc_left_1"], 0.5);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        c.apply(&Overrides { vrf: Some(600.0), recovery: Some("exp:5".into()), ..Default::default() }).unwrap();
        assert_eq!(c.drive.rf_amplitude, 600.0);
        assert_eq!(c.timeline.timeline().unwrap().recovery, Recovery::Exponential { tau: 5e-6 });
        assert!(c.apply(&Overrides { recovery: Some("ramp".into()), ..Default::default() }).is_err());
        assert!(RunConfig::from_toml("[drive]\nbogus = 1\n").is_err());
    }

    #[test]
    fn sweep_points() {
        assert_eq!(SweepSection::default().amplitudes().len(), 10);
        assert_eq!(linspace(1.0, 2.0, 3), vec![1.0, 1.5, 2.0]);
    }
}
