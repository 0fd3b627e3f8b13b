//! Single-ion motion in the full time-dependent trap field.
//!
//! `m r'' = Q s(t) [V cos(Omega t + phi) E1(r) + E_dc(r)] - m gamma r'`, where
//! `s(t)` is the timeline's voltage scale (0 while the electrodes are shorted).
//! Integrated with classical fixed-step RK4.

mod spectral;

pub use spectral::{spectral_secular_frequency, SpectralError};

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::joules_to_ev;
use crate::fieldsolver::{FieldError, FieldGrid, GridBox, StaticField};
use crate::trap_analysis::PseudoField;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state became non-finite at t = {:.6e} s; last finite state {last:?}", last.t)]
    NonFinite { last: State },
    #[error("invalid timeline: {0}")]
    Timeline(String),
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("initial position {0:?} is outside the escape box")]
    StartOutside([f64; 3]),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
}

impl State {
    pub fn at_rest(pos: [f64; 3]) -> Self {
        Self { t: 0.0, pos, vel: [0.0; 3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Recovery {
    Step,
    Exponential { tau: f64 },
}

/// All electrode voltages are forced to zero on `[t0, t0 + short_duration)` and
/// then recover to the steady drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageTimeline {
    pub t0: f64,
    pub short_duration: f64,
    pub recovery: Recovery,
    /// rf phase at t = 0, rad.
    pub rf_phase: f64,
}

impl Default for VoltageTimeline {
    fn default() -> Self {
        Self::steady(0.0)
    }
}

impl VoltageTimeline {
    pub fn steady(rf_phase: f64) -> Self {
        Self { t0: 0.0, short_duration: 0.0, recovery: Recovery::Step, rf_phase }
    }

    pub fn shorted(t0: f64, short_duration: f64, recovery: Recovery, rf_phase: f64) -> Self {
        Self { t0, short_duration, recovery, rf_phase }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.short_duration >= 0.0) || !self.t0.is_finite() || !self.rf_phase.is_finite() {
            return Err(DynamicsError::Timeline(format!(
                "short duration must be >= 0 and times finite (t0 {}, duration {})",
                self.t0, self.short_duration
            )));
        }
        if let Recovery::Exponential { tau } = self.recovery {
            if !(tau > 0.0) {
                return Err(DynamicsError::Timeline(format!("exponential recovery needs tau > 0, got {tau}")));
            }
        }
        Ok(())
    }

    pub fn recovery_start(&self) -> f64 {
        self.t0 + self.short_duration
    }

    /// Voltage scale in [0, 1].
    #[inline]
    pub fn scale(&self, t: f64) -> f64 {
        let end = self.recovery_start();
        if t < self.t0 {
            return 1.0;
        }
        if t < end {
            return 0.0;
        }
        match self.recovery {
            Recovery::Step => 1.0,
            Recovery::Exponential { tau } => {
                // The event is a no-op when nothing was shorted.
                if self.short_duration == 0.0 {
                    1.0
                } else {
                    1.0 - (-(t - end) / tau).exp()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub steps_per_rf_period: usize,
    pub max_rf_periods: usize,
    /// Linear velocity damping rate, 1/s.
    pub damping_rate: f64,
    pub capture_radius: f64,
    /// Consecutive rf periods inside `capture_radius` at the end of the run needed for capture.
    pub capture_window_periods: usize,
    pub trap_center: [f64; 3],
    /// When set, the capture distance is measured perpendicular to this axis
    /// through `trap_center` (the weak axis of a linear trap).
    pub capture_axis: Option<[f64; 3]>,
    pub escape_box: GridBox,
    /// Keep every n-th state in the trace (None: no trace).
    pub trace_every: Option<usize>,
}

impl IntegratorConfig {
    pub fn new(trap_center: [f64; 3], escape_box: GridBox) -> Self {
        Self {
            steps_per_rf_period: 200,
            max_rf_periods: 500,
            damping_rate: 0.0,
            capture_radius: 2e-3,
            capture_window_periods: 100,
            trap_center,
            capture_axis: None,
            escape_box,
            trace_every: None,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.steps_per_rf_period < 50 {
            return Err(DynamicsError::Config(format!(
                "steps_per_rf_period must be >= 50, got {}",
                self.steps_per_rf_period
            )));
        }
        let b = &self.escape_box;
        let span = (0..3).map(|k| b.max[k] - b.min[k]).fold(f64::INFINITY, f64::min);
        if !(self.capture_radius > 0.0 && self.capture_radius < span) {
            return Err(DynamicsError::Config(format!(
                "capture radius {} must be positive and smaller than the escape box ({span})",
                self.capture_radius
            )));
        }
        if self.capture_window_periods > self.max_rf_periods {
            return Err(DynamicsError::Config("capture window longer than the run".into()));
        }
        if !(self.damping_rate >= 0.0) {
            return Err(DynamicsError::Config("damping rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classification {
    Captured,
    Escaped { t: f64 },
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub classification: Classification,
    pub final_state: State,
    /// Secular energy over the last two rf periods, eV, when the ion stayed inside the box for them.
    pub secular_energy_ev: Option<f64>,
    pub trace: Option<Vec<State>>,
}

impl TrajectoryOutcome {
    pub fn captured(&self) -> bool {
        self.classification == Classification::Captured
    }
}

/// The time-dependent force model, borrowed from a pseudopotential description.
pub struct Dynamics<'a> {
    pub fields: &'a PseudoField,
    pub timeline: VoltageTimeline,
    qm: f64,
}

impl<'a> Dynamics<'a> {
    pub fn new(fields: &'a PseudoField, timeline: VoltageTimeline) -> Self {
        Self { fields, timeline, qm: fields.species.charge_c() / fields.species.mass }
    }

    /// Acceleration from the electric field alone, m/s^2.
    #[inline]
    pub fn acceleration(&self, t: f64, p: [f64; 3]) -> [f64; 3] {
        let s = self.timeline.scale(t);
        if s == 0.0 {
            return [0.0; 3];
        }
        let f = self.fields;
        let mut a = [0.0; 3];
        if f.rf_amplitude != 0.0 {
            let c = self.qm * s * f.rf_amplitude * (f.omega * t + self.timeline.rf_phase).cos();
            let e = f.rf_unit().field(p);
            a = [c * e[0], c * e[1], c * e[2]];
        }
        if let Some(dc) = f.dc() {
            let e = dc.field(p);
            let c = self.qm * s;
            a[0] += c * e[0];
            a[1] += c * e[1];
            a[2] += c * e[2];
        }
        a
    }

    #[inline]
    fn deriv(&self, t: f64, x: &[f64; 6], gamma: f64) -> [f64; 6] {
        let a = self.acceleration(t, [x[0], x[1], x[2]]);
        [x[3], x[4], x[5], a[0] - gamma * x[3], a[1] - gamma * x[4], a[2] - gamma * x[5]]
    }

    /// One classical RK4 step of size `dt` (may be negative).
    #[inline]
    pub fn rk4(&self, s: &State, dt: f64, gamma: f64) -> State {
        let x = [s.pos[0], s.pos[1], s.pos[2], s.vel[0], s.vel[1], s.vel[2]];
        let add = |a: &[f64; 6], k: &[f64; 6], h: f64| {
            let mut o = *a;
            for i in 0..6 {
                o[i] += h * k[i];
            }
            o
        };
        let k1 = self.deriv(s.t, &x, gamma);
        let k2 = self.deriv(s.t + 0.5 * dt, &add(&x, &k1, 0.5 * dt), gamma);
        let k3 = self.deriv(s.t + 0.5 * dt, &add(&x, &k2, 0.5 * dt), gamma);
        let k4 = self.deriv(s.t + dt, &add(&x, &k3, dt), gamma);
        let mut y = x;
        for i in 0..6 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        State { t: s.t + dt, pos: [y[0], y[1], y[2]], vel: [y[3], y[4], y[5]] }
    }

    /// `n` fixed steps of `dt`, no classification. Used for reversibility checks and traces.
    pub fn propagate(&self, s: State, dt: f64, n: usize, gamma: f64) -> Result<Vec<State>, DynamicsError> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(s);
        let mut cur = s;
        for _ in 0..n {
            let next = self.rk4(&cur, dt, gamma);
            if !is_finite(&next) {
                return Err(DynamicsError::NonFinite { last: cur });
            }
            out.push(next);
            cur = next;
        }
        Ok(out)
    }
}

fn is_finite(s: &State) -> bool {
    s.pos.iter().chain(s.vel.iter()).all(|v| v.is_finite()) && s.t.is_finite()
}

/// Time at which a straight line from `p` with velocity `v` leaves the box (None if never).
fn exit_time(b: &GridBox, p: [f64; 3], v: [f64; 3]) -> Option<f64> {
    let mut t_exit = f64::INFINITY;
    for k in 0..3 {
        if v[k] > 0.0 {
            t_exit = t_exit.min((b.max[k] - p[k]) / v[k]);
        } else if v[k] < 0.0 {
            t_exit = t_exit.min((b.min[k] - p[k]) / v[k]);
        }
    }
    t_exit.is_finite().then_some(t_exit.max(0.0))
}

/// Entry time of a straight line into the box, if it ever enters.
pub fn entry_time(b: &GridBox, p: [f64; 3], v: [f64; 3]) -> Option<f64> {
    let mut t_in: f64 = 0.0;
    let mut t_out = f64::INFINITY;
    for k in 0..3 {
        if v[k] == 0.0 {
            if p[k] < b.min[k] || p[k] > b.max[k] {
                return None;
            }
        } else {
            let (a, c) = ((b.min[k] - p[k]) / v[k], (b.max[k] - p[k]) / v[k]);
            t_in = t_in.max(a.min(c));
            t_out = t_out.min(a.max(c));
        }
    }
    (t_in <= t_out).then_some(t_in)
}

pub fn capture_distance(p: [f64; 3], cfg: &IntegratorConfig) -> f64 {
    let mut d = [0, 1, 2].map(|k| p[k] - cfg.trap_center[k]);
    if let Some(a) = cfg.capture_axis {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        let u = a.map(|c| c / n);
        let along = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
        d = [0, 1, 2].map(|k| d[k] - along * u[k]);
    }
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Integrates one trajectory and classifies it.
///
/// While the electrodes are shorted (and without damping) the ion moves on a
/// straight line, which is advanced in one step. Otherwise fixed RK4 steps of
/// one rf period over `steps_per_rf_period` are taken until the ion leaves the
/// escape box or `max_rf_periods` have elapsed.
pub fn integrate(
    state0: State,
    fields: &PseudoField,
    timeline: &VoltageTimeline,
    cfg: &IntegratorConfig,
) -> Result<TrajectoryOutcome, DynamicsError> {
    timeline.validate()?;
    cfg.validate()?;
    if !cfg.escape_box.contains(state0.pos) {
        return Err(DynamicsError::StartOutside(state0.pos));
    }
    let dynamics = Dynamics::new(fields, *timeline);
    let period = 2.0 * std::f64::consts::PI / fields.omega;
    let n_steps = cfg.steps_per_rf_period;
    let dt = period / n_steps as f64;
    let gamma = cfg.damping_rate;
    let t_stop = state0.t + cfg.max_rf_periods as f64 * period;
    let window_steps = cfg.capture_window_periods * n_steps;
    let mut trace = cfg.trace_every.map(|_| vec![state0]);
    let every = cfg.trace_every.unwrap_or(usize::MAX).max(1);
    let span = 2 * n_steps - 1;
    let mut recent: std::collections::VecDeque<State> = std::collections::VecDeque::with_capacity(span + 1);
    let mut inside_steps = 0usize;
    let mut s = state0;
    let mut k = 0usize;
    let escaped = |s: &State, trace: Option<Vec<State>>| TrajectoryOutcome {
        classification: Classification::Escaped { t: s.t },
        final_state: *s,
        secular_energy_ev: None,
        trace,
    };
    loop {
        if gamma == 0.0 && timeline.scale(s.t) == 0.0 && s.t < timeline.recovery_start() {
            let flight = timeline.recovery_start() - s.t;
            let out = exit_time(&cfg.escape_box, s.pos, s.vel).unwrap_or(f64::INFINITY);
            let h = flight.min(out).min(t_stop - s.t);
            s = State {
                t: s.t + h,
                pos: [s.pos[0] + h * s.vel[0], s.pos[1] + h * s.vel[1], s.pos[2] + h * s.vel[2]],
                vel: s.vel,
            };
            recent.clear();
            inside_steps = 0;
            if let Some(tr) = trace.as_mut() {
                tr.push(s);
            }
            if out <= flight {
                return Ok(escaped(&s, trace));
            }
            if s.t >= t_stop {
                break;
            }
            continue;
        }
        let next = dynamics.rk4(&s, dt, gamma);
        if !is_finite(&next) {
            return Err(DynamicsError::NonFinite { last: s });
        }
        s = next;
        k += 1;
        if let Some(tr) = trace.as_mut() {
            if k % every == 0 {
                tr.push(s);
            }
        }
        if !cfg.escape_box.contains(s.pos) {
            return Ok(escaped(&s, trace));
        }
        if capture_distance(s.pos, cfg) <= cfg.capture_radius {
            inside_steps += 1;
        } else {
            inside_steps = 0;
        }
        if recent.len() == span {
            recent.pop_front();
        }
        recent.push_back(s);
        if s.t >= t_stop - 0.5 * dt {
            break;
        }
    }
    let classification = if inside_steps >= window_steps { Classification::Captured } else { Classification::Undecided };
    let secular_energy_ev = if recent.len() == span {
        let window: Vec<State> = recent.into_iter().collect();
        let psi_min = fields.psi(cfg.trap_center);
        Some(secular_energy(&window, fields, psi_min))
    } else {
        None
    };
    Ok(TrajectoryOutcome { classification, final_state: s, secular_energy_ev, trace })
}

/// `m |<v>|^2 / 2 + Psi(<r>) - psi_min` in eV.
///
/// `window` holds `2n - 1` consecutive states at `n` uniform steps per rf
/// period; `<.>` is the triangular average (a one-period mean of one-period
/// means), whose response has a double zero at the drive frequency, so neither
/// the micromotion nor its slow modulation leaks into `<v>`.
pub fn secular_energy(window: &[State], pseudo: &PseudoField, psi_min: f64) -> f64 {
    let n = (window.len() + 1) / 2;
    let norm = (n * n) as f64;
    let mut r = [0.0; 3];
    let mut v = [0.0; 3];
    for (j, s) in window.iter().enumerate().take(2 * n - 1) {
        let w = (j + 1).min(2 * n - 1 - j) as f64 / norm;
        for k in 0..3 {
            r[k] += w * s.pos[k];
            v[k] += w * s.vel[k];
        }
    }
    let kin = 0.5 * pseudo.species.mass * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    joules_to_ev(kin + pseudo.psi(r) - psi_min)
}

/// Replaces the rf and dc sources of `pseudo` with tabulated grids over `bx`.
pub fn gridded(pseudo: &PseudoField, bx: &GridBox, spacing: f64) -> Result<PseudoField, DynamicsError> {
    let rf = Arc::new(FieldGrid::sample(pseudo.rf_unit().as_ref(), bx, spacing)?);
    let dc = match pseudo.dc() {
        Some(d) => Some(Arc::new(FieldGrid::sample(d.as_ref(), bx, spacing)?) as Arc<dyn StaticField>),
        None => None,
    };
    Ok(PseudoField::new(rf, dc, pseudo.rf_amplitude, pseudo.omega, pseudo.species))
}

pub const TRACE_HEADER: &str = "t_s,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps";
pub const TRACE_MAX_ROWS: usize = 100_000;

/// Writes a trace as CSV, decimated evenly to at most 10^5 rows.
pub fn write_trace_csv(trace: &[State], path: impl AsRef<Path>) -> std::io::Result<usize> {
    let stride = trace.len().div_ceil(TRACE_MAX_ROWS).max(1);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{TRACE_HEADER}")?;
    let mut rows = 0;
    for s in trace.iter().step_by(stride) {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.t, s.pos[0], s.pos[1], s.pos[2], s.vel[0], s.vel[1], s.vel[2]
        )?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}

pub fn read_trace_csv(text: &str) -> Result<Vec<State>, String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
            if v.len() != 7 {
                return Err(format!("expected 7 fields in '{l}'"));
            }
            Ok(State { t: v[0], pos: [v[1], v[2], v[3]], vel: [v[4], v[5], v[6]] })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Species;
    use crate::trap_analysis::QuadraticPotential;

    fn well() -> PseudoField {
        let dc = Arc::new(QuadraticPotential { center: [0.0, 0.0, 1e-3], curvature: [1e5, 2e5, 3e5] });
        let rf = Arc::new(QuadraticPotential::linear(1e-3, [0.0, 0.0, 1e-3]));
        PseudoField::new(rf, Some(dc), 0.0, 2.0 * std::f64::consts::PI * 8e6, Species::sr88())
    }

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::new([0.0, 0.0, 1e-3], GridBox::new([-3e-3, -3e-3, 0.0], [3e-3, 3e-3, 4e-3]))
    }

    #[test]
    fn timeline_shapes() {
        let t = VoltageTimeline::shorted(1e-6, 10e-6, Recovery::Step, 0.0);
        assert_eq!(t.scale(0.5e-6), 1.0);
        assert_eq!(t.scale(5e-6), 0.0);
        assert_eq!(t.scale(12e-6), 1.0);
        let e = VoltageTimeline::shorted(0.0, 10e-6, Recovery::Exponential { tau: 2e-6 }, 0.0);
        assert_eq!(e.scale(10e-6), 0.0);
        assert!((e.scale(12e-6) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!(e.scale(10e-6 + 1e-12) < 1e-5);
        assert!(VoltageTimeline::shorted(0.0, -1.0, Recovery::Step, 0.0).validate().is_err());
        assert!(VoltageTimeline::shorted(0.0, 1.0, Recovery::Exponential { tau: 0.0 }, 0.0).validate().is_err());
    }

    #[test]
    fn config_checks() {
        let mut c = cfg();
        c.steps_per_rf_period = 49;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.capture_radius = 10e-3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ion_at_rest_in_well_is_captured() {
        let f = well();
        let o = integrate(State::at_rest([0.0, 0.0, 1e-3]), &f, &VoltageTimeline::steady(0.3), &cfg()).unwrap();
        assert!(o.captured());
        assert!(o.secular_energy_ev.unwrap().abs() < 1e-12);
    }

    #[test]
    fn ballistic_flight_through_short() {
        let f = well();
        let tl = VoltageTimeline::shorted(0.0, 50e-6, Recovery::Step, 0.0);
        let s = State { t: 0.0, pos: [0.0, -2.9e-3, 1e-3], vel: [0.0, 1000.0, 0.0] };
        let o = integrate(s, &f, &tl, &cfg()).unwrap();
        match o.classification {
            Classification::Escaped { t } => assert!((t - 5.9e-6).abs() < 1e-12),
            c => panic!("{c:?}"),
        }
    }

    #[test]
    fn trace_csv_round_trip() {
        let f = well();
        let mut c = cfg();
        c.trace_every = Some(7);
        c.max_rf_periods = 120;
        let o = integrate(State { t: 0.0, pos: [1e-4, 0.0, 1e-3], vel: [0.0; 3] }, &f, &VoltageTimeline::steady(0.0), &c).unwrap();
        let tr = o.trace.unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let n = write_trace_csv(&tr, &p).unwrap();
        let back = read_trace_csv(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(n, back.len());
        assert_eq!(back, tr);
    }
}
