use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use super::State;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("trace has {0} samples; need at least 64 uniformly spaced states")]
    TooShort(usize),
    #[error("no spectral peak above the noise floor along axis {0}")]
    NoPeak(usize),
}

const ZERO_PAD: usize = 4;

/// Dominant frequency (Hz) below `max_freq` of the trace projected on each axis.
///
/// Hann window, 4x zero padding, and a parabola through the log magnitudes of
/// the peak bin and its neighbours. The trace must be uniformly sampled.
pub fn spectral_secular_frequency(trace: &[State], axes: &[[f64; 3]; 3], max_freq: f64) -> Result<[f64; 3], SpectralError> {
    let n = trace.len();
    if n < 64 {
        return Err(SpectralError::TooShort(n));
    }
    let dt = (trace[n - 1].t - trace[0].t) / (n - 1) as f64;
    let m = (n * ZERO_PAD).next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
    let df = 1.0 / (m as f64 * dt);
    let kmax = ((max_freq / df).floor() as usize).min(m / 2 - 1);
    let mut out = [0.0; 3];
    for (ax, a) in axes.iter().enumerate() {
        let proj: Vec<f64> = trace.iter().map(|s| a[0] * s.pos[0] + a[1] * s.pos[1] + a[2] * s.pos[2]).collect();
        let mean = proj.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> = proj
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
                Complex::new((x - mean) * w, 0.0)
            })
            .collect();
        buf.resize(m, Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        let mag: Vec<f64> = buf[..=kmax + 1].iter().map(|c| c.norm()).collect();
        // Skip the DC lobe of the window (2 original bins).
        let start = 2 * ZERO_PAD;
        if kmax <= start + 1 {
            return Err(SpectralError::NoPeak(ax));
        }
        let (k, peak) = (start..kmax).map(|k| (k, mag[k])).fold((start, 0.0), |b, x| if x.1 > b.1 { x } else { b });
        let mut band: Vec<f64> = mag[start..kmax].to_vec();
        band.sort_by(f64::total_cmp);
        let median = band[band.len() / 2];
        if !(peak > 10.0 * median) || k == start {
            return Err(SpectralError::NoPeak(ax));
        }
        let (l, c, r) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
        let den = l - 2.0 * c + r;
        let shift = if den != 0.0 { 0.5 * (l - r) / den } else { 0.0 };
        out[ax] = (k as f64 + shift) * df;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_pure_tones() {
        let dt = 1e-8;
        let (fx, fy, fz) = (123_456.0, 310_000.0, 47_000.0);
        let tau = 2.0 * std::f64::consts::PI;
        let trace: Vec<State> = (0..20_000)
            .map(|i| {
                let t = i as f64 * dt;
                State {
                    t,
                    pos: [(tau * fx * t).sin(), 0.3 * (tau * fy * t + 1.0).cos(), 1e-3 + 2.0 * (tau * fz * t).sin()],
                    vel: [0.0; 3],
                }
            })
            .collect();
        let f = spectral_secular_frequency(&trace, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 1e6).unwrap();
        for (got, want) in f.iter().zip([fx, fy, fz]) {
            assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn flat_trace_has_no_peak() {
        let trace: Vec<State> = (0..1000).map(|i| State { t: i as f64, pos: [1.0; 3], vel: [0.0; 3] }).collect();
        assert!(spectral_secular_frequency(&trace, &[[1.0, 0.0, 0.0]; 3], 0.4).is_err());
    }
}
