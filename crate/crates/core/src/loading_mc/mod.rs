//! Monte Carlo loading: ablation plume captured through an electrode-shorting
//! event versus thermal atoms ionized inside the trap.

mod source;
mod stats;

pub use source::{sample_plume, PlumeIon, PlumeModel, ThermalSource};
pub use stats::{wilson_interval, Z95};

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{ev_to_joules, joules_to_ev};
use crate::dynamics::{
    entry_time, gridded, integrate, DynamicsError, IntegratorConfig, Recovery, State, TrajectoryOutcome, VoltageTimeline,
};
use crate::fieldsolver::{BasisSolution, GridBox};
use crate::geometry::{DriveConfig, Species, TrapLayout};
use crate::trap_analysis::{analyze, AnalysisError, DepthSearch, PseudoField};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("invalid loading configuration: {0}")]
    Config(String),
    #[error("trap analysis failed at {rf_amplitude} V: {source}")]
    Analysis { rf_amplitude: f64, source: AnalysisError },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("threshold ratio undefined: {0}")]
    Undefined(String),
    #[error("malformed load table: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fields and integrator settings shared by every trial of a run.
#[derive(Debug, Clone)]
pub struct LoadContext {
    /// Field used for depths and trap minima.
    pub analysis: PseudoField,
    /// Field used for trajectories (usually a tabulated copy of `analysis`).
    pub motion: PseudoField,
    pub guess: [f64; 3],
    pub search: DepthSearch,
    /// Template; the trap center and capture axis are set per depth.
    pub integrator: IntegratorConfig,
    /// Measure the capture distance from the trap axis (weakest secular direction).
    pub radial_capture: bool,
}

impl LoadContext {
    pub fn new(analysis: PseudoField, guess: [f64; 3], integrator: IntegratorConfig) -> Self {
        Self {
            motion: analysis.clone(),
            analysis,
            guess,
            search: DepthSearch::default(),
            integrator,
            radial_capture: false,
        }
    }

    /// Context for a solved layout with trajectories on a tricubic grid over the escape box.
    pub fn for_layout(
        layout: &TrapLayout,
        basis: &BasisSolution,
        drive: &DriveConfig,
        species: Species,
        escape_box: GridBox,
        grid_spacing: f64,
        guess: [f64; 3],
    ) -> Result<Self, LoadError> {
        let analysis = PseudoField::for_layout(layout, basis, drive, species)
            .map_err(|source| LoadError::Analysis { rf_amplitude: drive.rf_amplitude, source })?;
        let motion = gridded(&analysis, &escape_box, grid_spacing)?;
        Ok(Self {
            analysis,
            motion,
            guess,
            search: DepthSearch::default(),
            integrator: IntegratorConfig::new(guess, escape_box),
            radial_capture: true,
        })
    }

    /// Trap minimum, depth and weak axis at each rf amplitude (ascending, positive).
    pub fn depth_points(&self, amplitudes: &[f64]) -> Result<Vec<DepthPoint>, LoadError> {
        if amplitudes.is_empty() || amplitudes.iter().any(|v| !(*v > 0.0)) || amplitudes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LoadError::Config("rf amplitudes must be positive and strictly increasing".into()));
        }
        amplitudes
            .par_iter()
            .map(|&v| {
                let a = analyze(&self.analysis.with_rf_amplitude(v), self.guess, &self.search)
                    .map_err(|source| LoadError::Analysis { rf_amplitude: v, source })?;
                Ok(DepthPoint {
                    rf_amplitude: v,
                    depth_ev: a.depth_ev,
                    minimum: a.minimum_position,
                    weak_axis: a.secular.axes[0],
                })
            })
            .collect()
    }

    pub fn integrator_for(&self, p: &DepthPoint) -> IntegratorConfig {
        let mut cfg = self.integrator;
        cfg.trap_center = p.minimum;
        cfg.capture_axis = self.radial_capture.then_some(p.weak_axis);
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub rf_amplitude: f64,
    pub depth_ev: f64,
    pub minimum: [f64; 3],
    pub weak_axis: [f64; 3],
}

/// Trial count, master seed, and the cheap loss tests applied before integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub trials: usize,
    pub seed: u64,
    /// Count as lost, without integrating, ions whose kinetic energy exceeds
    /// `ENERGY_CUTOFF` times the depth (their secular energy only grows while the
    /// voltages recover), and, without damping, ions that first reach the escape
    /// box after the voltages have settled (a conservative steady trap cannot
    /// keep an ion arriving from outside).
    pub prefilter: bool,
}

pub const ENERGY_CUTOFF: f64 = 3.0;

impl Default for MonteCarlo {
    fn default() -> Self {
        Self { trials: 500, seed: 1, prefilter: true }
    }
}

/// Time after which the timeline is treated as steady.
fn settled_time(tl: &VoltageTimeline) -> f64 {
    match tl.recovery {
        Recovery::Step => tl.recovery_start(),
        Recovery::Exponential { tau } if tl.short_duration > 0.0 => tl.recovery_start() + 20.0 * tau,
        Recovery::Exponential { .. } => tl.recovery_start(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadKind {
    Ablation,
    Eimpact,
}

impl LoadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LoadKind::Ablation => "ablation",
            LoadKind::Eimpact => "eimpact",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRow {
    pub rf_amplitude: f64,
    pub depth_ev: f64,
    /// Completed trials (failed ones excluded).
    pub trials: u64,
    pub captured: u64,
    /// Trials with an integrator failure and no capture.
    pub failed: u64,
}

impl LoadRow {
    pub fn p_hat(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.captured as f64 / self.trials as f64
        }
    }

    pub fn ci(&self) -> (f64, f64) {
        wilson_interval(self.captured, self.trials, Z95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadResult {
    pub kind: LoadKind,
    pub seed: u64,
    /// JSON snapshot of the model parameters.
    pub parameters: String,
    pub rows: Vec<LoadRow>,
    /// First integrator error per row, if any.
    #[serde(default)]
    pub failures: Vec<Option<String>>,
}

pub const LOAD_HEADER: &str = "Vrf_V,depth_eV,trials,captured,p_hat,ci_lo,ci_hi";

impl LoadResult {
    /// CSV with the parameter snapshot (and any extra `preamble` lines) as `#` comments.
    pub fn to_csv(&self, preamble: &str) -> String {
        let mut s = String::new();
        for line in preamble.lines() {
            s.push_str(&format!("# {line}\n"));
        }
        s.push_str(&format!("# load: {}\n# seed: {}\n# parameters: {}\n", self.kind.as_str(), self.seed, self.parameters));
        let failed: Vec<String> = self.rows.iter().map(|r| r.failed.to_string()).collect();
        s.push_str(&format!("# failed: {}\n", failed.join(",")));
        for (i, f) in self.failures.iter().enumerate() {
            if let Some(msg) = f {
                s.push_str(&format!("# row {i} failure: {}\n", msg.replace('\n', " ")));
            }
        }
        s.push_str(LOAD_HEADER);
        s.push('\n');
        for r in &self.rows {
            let (lo, hi) = r.ci();
            s.push_str(&format!("{},{},{},{},{},{},{}\n", r.rf_amplitude, r.depth_ev, r.trials, r.captured, r.p_hat(), lo, hi));
        }
        s
    }

    pub fn write_csv(&self, preamble: &str, path: impl AsRef<Path>) -> Result<(), LoadError> {
        std::fs::write(path, self.to_csv(preamble))?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self, LoadError> {
        let perr = |m: &str| LoadError::Parse(m.to_string());
        let mut kind = None;
        let mut seed = None;
        let mut parameters = String::new();
        let mut failed: Vec<u64> = Vec::new();
        let mut messages: Vec<(usize, String)> = Vec::new();
        let mut header = false;
        let mut rows = Vec::new();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix("# ") {
                if let Some(v) = c.strip_prefix("load: ") {
                    kind = Some(match v {
                        "ablation" => LoadKind::Ablation,
                        "eimpact" => LoadKind::Eimpact,
                        _ => return Err(perr("unknown load kind")),
                    });
                } else if let Some(v) = c.strip_prefix("seed: ") {
                    seed = Some(v.parse::<u64>().map_err(|_| perr("bad seed"))?);
                } else if let Some(v) = c.strip_prefix("parameters: ") {
                    parameters = v.to_string();
                } else if let Some(v) = c.strip_prefix("failed: ") {
                    failed = v
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<u64>().map_err(|_| perr("bad failed count")))
                        .collect::<Result<_, _>>()?;
                } else if let Some((i, msg)) = c.strip_prefix("row ").and_then(|v| v.split_once(" failure: ")) {
                    messages.push((i.parse::<usize>().map_err(|_| perr("bad failure row"))?, msg.to_string()));
                }
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if !header {
                if line != LOAD_HEADER {
                    return Err(perr("unexpected header"));
                }
                header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(perr("expected 7 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr("bad number"));
            let int = |s: &str| s.parse::<u64>().map_err(|_| perr("bad count"));
            rows.push(LoadRow { rf_amplitude: num(f[0])?, depth_ev: num(f[1])?, trials: int(f[2])?, captured: int(f[3])?, failed: 0 });
        }
        if !failed.is_empty() {
            if failed.len() != rows.len() {
                return Err(perr("failed counts do not match rows"));
            }
            for (r, n) in rows.iter_mut().zip(failed) {
                r.failed = n;
            }
        }
        let mut failures = vec![None; rows.len()];
        for (i, msg) in messages {
            *failures.get_mut(i).ok_or_else(|| perr("failure row out of range"))? = Some(msg);
        }
        Ok(Self { kind: kind.ok_or_else(|| perr("missing kind"))?, seed: seed.ok_or_else(|| perr("missing seed"))?, parameters, rows, failures })
    }

    /// Pairs `(i, j)` with depth_i < depth_j, p_i > p_j, and disjoint intervals.
    pub fn monotonicity_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows.len() {
            for j in 0..self.rows.len() {
                let (a, b) = (&self.rows[i], &self.rows[j]);
                if a.depth_ev < b.depth_ev && a.p_hat() > b.p_hat() && a.ci().0 > b.ci().1 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Smallest depth whose Wilson lower bound reaches `p_min`, interpolated
/// linearly in the lower bound between the bracketing rows.
pub fn min_loadable_depth(result: &LoadResult, p_min: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = result.rows.iter().map(|r| (r.depth_ev, r.ci().0)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let i = pts.iter().position(|p| p.1 >= p_min)?;
    if i == 0 {
        return Some(pts[0].0);
    }
    let (d0, l0) = pts[i - 1];
    let (d1, l1) = pts[i];
    Some(d0 + (p_min - l0) / (l1 - l0) * (d1 - d0))
}

/// Electron-impact threshold over ablation threshold.
pub fn threshold_ratio(ablation: &LoadResult, eimpact: &LoadResult, p_min: f64) -> Result<f64, LoadError> {
    let a = min_loadable_depth(ablation, p_min).ok_or_else(|| LoadError::Undefined("ablation never reaches p_min".into()))?;
    let e = min_loadable_depth(eimpact, p_min).ok_or_else(|| LoadError::Undefined("electron impact never reaches p_min".into()))?;
    if !(a > 0.0) {
        return Err(LoadError::Undefined(format!("ablation threshold {a} eV is not positive")));
    }
    Ok(e / a)
}

enum Trial {
    Captured,
    Lost,
    Failed(String),
}

fn trial_rng(seed: u64, depth_index: usize, trial_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((depth_index as u64) << 32) | trial_index as u64);
    rng
}

fn kinetic(mass: f64, v: [f64; 3]) -> f64 {
    0.5 * mass * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

#[derive(Serialize)]
struct AblationSnapshot<'a> {
    plume: &'a PlumeModel,
    timeline: &'a VoltageTimeline,
    integrator: &'a IntegratorConfig,
    mc: &'a MonteCarlo,
    radial_capture: bool,
    species_mass_kg: f64,
    omega: f64,
}

#[derive(Serialize)]
struct EimpactSnapshot<'a> {
    source: &'a ThermalSource,
    integrator: &'a IntegratorConfig,
    mc: &'a MonteCarlo,
    radial_capture: bool,
    species_mass_kg: f64,
    omega: f64,
}

fn run<F>(ctx: &LoadContext, points: &[DepthPoint], mc: &MonteCarlo, trial: F) -> (Vec<LoadRow>, Vec<Option<String>>)
where
    F: Fn(&DepthPoint, &PseudoField, &IntegratorConfig, &mut ChaCha8Rng) -> Trial + Sync,
{
    let n = mc.trials;
    let motion: Vec<PseudoField> = points.iter().map(|p| ctx.motion.with_rf_amplitude(p.rf_amplitude)).collect();
    let cfgs: Vec<IntegratorConfig> = points.iter().map(|p| ctx.integrator_for(p)).collect();
    let outcomes: Vec<Trial> = (0..points.len() * n)
        .into_par_iter()
        .map(|k| {
            let (d, t) = (k / n, k % n);
            let mut rng = trial_rng(mc.seed, d, t);
            trial(&points[d], &motion[d], &cfgs[d], &mut rng)
        })
        .collect();
    let mut rows = Vec::with_capacity(points.len());
    let mut failures = Vec::with_capacity(points.len());
    for (d, p) in points.iter().enumerate() {
        let mut row = LoadRow { rf_amplitude: p.rf_amplitude, depth_ev: p.depth_ev, trials: 0, captured: 0, failed: 0 };
        let mut first = None;
        for o in &outcomes[d * n..(d + 1) * n] {
            match o {
                Trial::Captured => {
                    row.trials += 1;
                    row.captured += 1;
                }
                Trial::Lost => row.trials += 1,
                Trial::Failed(m) => {
                    row.failed += 1;
                    first.get_or_insert_with(|| m.clone());
                }
            }
        }
        rows.push(row);
        failures.push(first);
    }
    (rows, failures)
}

/// Ablation loading: each trial is one plume ion with its own random rf phase.
/// The shorting event starts at the pulse (t = 0). Ions fly on straight lines
/// outside the escape box; ions that never reach it are lost.
pub fn run_ablation_load(
    ctx: &LoadContext,
    amplitudes: &[f64],
    plume: &PlumeModel,
    timeline: &VoltageTimeline,
    mc: &MonteCarlo,
) -> Result<LoadResult, LoadError> {
    plume.validate()?;
    timeline.validate()?;
    ctx.integrator.validate()?;
    let points = ctx.depth_points(amplitudes)?;
    let mass = ctx.motion.species.mass;
    let bx = ctx.integrator.escape_box;
    let settled = settled_time(timeline);
    let (rows, failures) = run(ctx, &points, mc, |p, field, cfg, rng| {
        let ion = sample_plume(plume, mass, rng);
        let phase = 2.0 * PI * rng.random::<f64>();
        let Some(t_in) = entry_time(&bx, ion.pos, ion.vel) else { return Trial::Lost };
        let cutoff = ENERGY_CUTOFF * ev_to_joules(p.depth_ev);
        if mc.prefilter && (kinetic(mass, ion.vel) > cutoff || (cfg.damping_rate == 0.0 && ion.t_emit + t_in >= settled)) {
            return Trial::Lost;
        }
        let s = State {
            t: ion.t_emit + t_in,
            pos: clamp_into(&bx, [0, 1, 2].map(|k| ion.pos[k] + t_in * ion.vel[k])),
            vel: ion.vel,
        };
        let tl = VoltageTimeline { rf_phase: phase, ..*timeline };
        classify(integrate(s, field, &tl, cfg))
    });
    let parameters = serde_json::to_string(&AblationSnapshot {
        plume,
        timeline,
        integrator: &ctx.integrator,
        mc,
        radial_capture: ctx.radial_capture,
        species_mass_kg: mass,
        omega: ctx.motion.omega,
    })
    .expect("snapshot serializes");
    Ok(LoadResult { kind: LoadKind::Ablation, seed: mc.seed, parameters, rows, failures })
}

/// Electron-impact loading: each trial is one thermal ion created inside the
/// ionization box, with steady voltages and a random rf phase.
pub fn run_eimpact_load(
    ctx: &LoadContext,
    amplitudes: &[f64],
    source: &ThermalSource,
    mc: &MonteCarlo,
) -> Result<LoadResult, LoadError> {
    ctx.integrator.validate()?;
    let points = ctx.depth_points(amplitudes)?;
    for p in &points {
        source.validate(p.minimum, &ctx.integrator.escape_box)?;
    }
    let mass = ctx.motion.species.mass;
    let (rows, failures) = run(ctx, &points, mc, |p, field, cfg, rng| {
        let (pos, vel) = source.sample(p.minimum, mass, rng);
        let phase = 2.0 * PI * rng.random::<f64>();
        if mc.prefilter && kinetic(mass, vel) > ENERGY_CUTOFF * ev_to_joules(p.depth_ev) {
            return Trial::Lost;
        }
        classify(integrate(State { t: 0.0, pos, vel }, field, &VoltageTimeline::steady(phase), cfg))
    });
    let parameters = serde_json::to_string(&EimpactSnapshot {
        source,
        integrator: &ctx.integrator,
        mc,
        radial_capture: ctx.radial_capture,
        species_mass_kg: mass,
        omega: ctx.motion.omega,
    })
    .expect("snapshot serializes");
    Ok(LoadResult { kind: LoadKind::Eimpact, seed: mc.seed, parameters, rows, failures })
}

fn classify(r: Result<TrajectoryOutcome, DynamicsError>) -> Trial {
    match r {
        Ok(o) if o.captured() => Trial::Captured,
        Ok(_) => Trial::Lost,
        Err(e) => Trial::Failed(e.to_string()),
    }
}

fn clamp_into(b: &GridBox, p: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|k| p[k].clamp(b.min[k], b.max[k]))
}

/// Runs `f` on a pool of `workers` threads (the global pool when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("thread pool").install(f),
        None => f(),
    }
}

/// Mean kinetic energy of a thermal ensemble, eV.
pub fn thermal_energy_ev(temperature: f64) -> f64 {
    joules_to_ev(1.5 * crate::constants::BOLTZMANN * temperature)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(f64, u64, u64)]) -> LoadResult {
        LoadResult {
            kind: LoadKind::Ablation,
            seed: 7,
            parameters: "{}".into(),
            rows: rows
                .iter()
                .map(|&(d, n, k)| LoadRow { rf_amplitude: d * 1e3, depth_ev: d, trials: n, captured: k, failed: 0 })
                .collect(),
            failures: vec![None; rows.len()],
        }
    }

    #[test]
    fn threshold_edges() {
        let all = table(&[(0.01, 50, 50), (0.02, 50, 50), (0.05, 50, 50)]);
        assert_eq!(min_loadable_depth(&all, 0.5), Some(0.01));
        let none = table(&[(0.01, 50, 0), (0.02, 50, 0)]);
        assert_eq!(min_loadable_depth(&none, 0.05), None);
        assert_eq!(threshold_ratio(&all, &all, 0.5).unwrap(), 1.0);
        assert!(threshold_ratio(&all, &none, 0.05).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut t = table(&[(0.0123456789, 500, 3), (0.1, 497, 250)]);
        t.rows[1].failed = 3;
        t.failures[1] = Some("boom".into());
        let text = t.to_csv("config: x\nmore");
        let back = LoadResult::from_csv(&text).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.seed, 7);
        assert_eq!(back.to_csv("config: x\nmore").lines().filter(|l| !l.contains("failure")).count(), text.lines().count() - 1);
    }

    #[test]
    fn monotonicity_flags_only_disjoint_intervals() {
        assert!(table(&[(0.01, 100, 30), (0.02, 100, 25)]).monotonicity_violations().is_empty());
        assert_eq!(table(&[(0.01, 100, 90), (0.02, 100, 10)]).monotonicity_violations(), vec![(0, 1)]);
    }
}
