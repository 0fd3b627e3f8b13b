//! Target durability: `s(n) = A exp(-n / n0) + C` fitted to per-shot ion signals.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::PHOTONS_PER_MS_PER_ION;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least 5 shots, got {0}")]
    TooFewRows(usize),
    #[error("signal is zero for every shot")]
    AllZero,
    #[error("invalid shot series: {0}")]
    Invalid(String),
    #[error("fit did not produce finite parameters")]
    NonFinite,
}

pub const SHOT_HEADER: &str = "shot,signal_photons_per_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSeries {
    pub label: String,
    pub shots: Vec<u64>,
    /// photons/ms
    pub signal: Vec<f64>,
}

impl ShotSeries {
    pub fn new(label: impl Into<String>, shots: Vec<u64>, signal: Vec<f64>) -> Result<Self, FitError> {
        let s = Self { label: label.into(), shots, signal };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.shots.len() != self.signal.len() {
            return Err(FitError::Invalid("shot and signal columns differ in length".into()));
        }
        if self.shots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FitError::Invalid("shot numbers must be strictly increasing".into()));
        }
        if let Some(v) = self.signal.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(FitError::Invalid(format!("signals must be finite and >= 0, found {v}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { label: self.label.clone(), shots: self.shots.clone(), signal: self.signal.iter().map(|v| v * k).collect() }
    }

    /// `# target: label` comment, header, one row per shot.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if !self.label.is_empty() {
            s.push_str(&format!("# target: {}\n", self.label));
        }
        s.push_str(SHOT_HEADER);
        s.push('\n');
        for (n, v) in self.shots.iter().zip(&self.signal) {
            s.push_str(&format!("{n},{v}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, FitError> {
        let mut label = String::new();
        let mut shots = Vec::new();
        let mut signal = Vec::new();
        let mut header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(c) = line.strip_prefix('#') {
                if let Some(l) = c.trim().strip_prefix("target:") {
                    label = l.trim().to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header {
                if line != SHOT_HEADER {
                    return Err(FitError::Invalid(format!("expected header '{SHOT_HEADER}', found '{line}'")));
                }
                header = true;
                continue;
            }
            let (a, b) = line.split_once(',').ok_or_else(|| FitError::Invalid(format!("line {}: expected 2 fields", i + 1)))?;
            shots.push(a.trim().parse::<u64>().map_err(|e| FitError::Invalid(format!("line {}: {e}", i + 1)))?);
            signal.push(b.trim().parse::<f64>().map_err(|e| FitError::Invalid(format!("line {}: {e}", i + 1)))?);
        }
        Self::new(label, shots, signal)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, FitError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| FitError::Invalid(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv(&text)
    }
}

/// Above this the fitted durability is reported as non-decaying.
pub const NON_DECAYING_SHOTS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// photons/ms
    pub amplitude: f64,
    /// Shots; infinite when non-decaying.
    pub durability: f64,
    /// photons/ms
    pub baseline: f64,
    pub residual_rms: f64,
    pub non_decaying: bool,
}

impl DecayFit {
    /// Ions loaded by the first pulse implied by the amplitude.
    pub fn estimated_ions(&self) -> f64 {
        self.amplitude / PHOTONS_PER_MS_PER_ION
    }

    pub fn model(&self, n: f64) -> f64 {
        if self.non_decaying {
            self.amplitude + self.baseline
        } else {
            self.amplitude * (-n / self.durability).exp() + self.baseline
        }
    }
}

#[derive(Clone, Copy)]
struct Params {
    a: f64,
    /// 1 / n0
    k: f64,
    c: f64,
}

fn rss(x: &[f64], y: &[f64], p: Params) -> f64 {
    x.iter().zip(y).map(|(n, s)| (p.a * (-p.k * n).exp() + p.c - s).powi(2)).sum()
}

/// Levenberg-Marquardt on `(A, 1/n0, C)` with `1/n0 >= 0`.
fn levenberg_marquardt(x: &[f64], y: &[f64], start: Params) -> Params {
    let mut p = start;
    let mut cost = rss(x, y, p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (n, s) in x.iter().zip(y) {
            let e = (-p.k * n).exp();
            let r = p.a * e + p.c - s;
            let j = [e, -p.a * n * e, 1.0];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = nalgebra::Matrix3::from_fn(|a, b| jtj[a][b]);
            for d in 0..3 {
                m[(d, d)] += lambda * jtj[d][d].max(1e-300);
            }
            let Some(step) = m.lu().solve(&nalgebra::Vector3::new(-jtr[0], -jtr[1], -jtr[2])) else {
                lambda *= 10.0;
                continue;
            };
            let trial = Params { a: p.a + step[0], k: (p.k + step[1]).max(0.0), c: p.c + step[2] };
            let c = rss(x, y, trial);
            if c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    p
}

/// Least-squares exponential-plus-baseline fit, best of three starts. A series
/// that a constant explains at least as well is reported as non-decaying.
pub fn fit_target_decay(series: &ShotSeries) -> Result<DecayFit, FitError> {
    series.validate()?;
    let m = series.len();
    if m < 5 {
        return Err(FitError::TooFewRows(m));
    }
    if series.signal.iter().all(|v| *v == 0.0) {
        return Err(FitError::AllZero);
    }
    let x: Vec<f64> = series.shots.iter().map(|&n| n as f64).collect();
    let y = &series.signal;
    let span = (x[m - 1] - x[0]).max(1.0);
    let tail = (m / 5).max(1);
    let tail_mean = y[m - tail..].iter().sum::<f64>() / tail as f64;
    let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let log_rate = {
        // slope of ln(y - min) against shot number over the rows above the floor
        let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(_, v)| **v > ymin).map(|(n, v)| (*n, (v - ymin).ln())).collect();
        if pts.len() >= 2 {
            let k = pts.len() as f64;
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            let (mx, my) = (sx / k, sy / k);
            let (num, den) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
            if den > 0.0 { (-num / den).max(1.0 / span) } else { 3.0 / span }
        } else {
            3.0 / span
        }
    };
    let starts = [
        Params { a: (y[0] - tail_mean) * (x[0] * 3.0 / span).exp(), k: 3.0 / span, c: tail_mean },
        Params { a: (ymax - ymin) * (x[0] * log_rate).exp(), k: log_rate, c: ymin },
        Params { a: y[0] * (x[0] / span).exp(), k: 1.0 / span, c: 0.0 },
    ];
    let best = starts
        .iter()
        .map(|s| {
            let p = levenberg_marquardt(&x, y, *s);
            (rss(&x, y, p), p)
        })
        .filter(|(c, p)| c.is_finite() && p.a.is_finite() && p.c.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or(FitError::NonFinite)?;
    let mean = y.iter().sum::<f64>() / m as f64;
    let flat = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let scale = y.iter().map(|v| v * v).sum::<f64>();
    let (cost, p) = best;
    if flat <= cost + 1e-12 * scale || 1.0 / p.k > NON_DECAYING_SHOTS {
        return Ok(DecayFit {
            amplitude: 0.0,
            durability: f64::INFINITY,
            baseline: mean,
            residual_rms: (flat / m as f64).sqrt(),
            non_decaying: true,
        });
    }
    Ok(DecayFit { amplitude: p.a, durability: 1.0 / p.k, baseline: p.c, residual_rms: (cost / m as f64).sqrt(), non_decaying: false })
}
