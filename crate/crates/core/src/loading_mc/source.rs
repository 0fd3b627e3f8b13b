use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LoadError;
use crate::constants::BOLTZMANN;
use crate::fieldsolver::GridBox;

/// Ablation plume launched from a point source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlumeModel {
    pub source_position: [f64; 3],
    /// Unit vector from the source toward the trap.
    pub axis: [f64; 3],
    pub drift_speed: f64,
    pub temperature: f64,
    pub cone_half_angle: f64,
    pub emission_spread: f64,
}

impl PlumeModel {
    /// Default plume aimed at `center` from 25 mm along -x.
    pub fn toward(center: [f64; 3]) -> Self {
        Self::from_direction(center, [-1.0, 0.0, 0.0], 25e-3)
    }

    /// Source placed `distance` from `center` along `direction`, aimed back at the center.
    pub fn from_direction(center: [f64; 3], direction: [f64; 3], distance: f64) -> Self {
        let u = unit(direction);
        Self {
            source_position: [0, 1, 2].map(|k| center[k] + distance * u[k]),
            axis: u.map(|c| -c),
            drift_speed: 4e3,
            temperature: 1e4,
            cone_half_angle: 10f64.to_radians(),
            emission_spread: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), LoadError> {
        let n = norm(self.axis);
        let bad = |m: String| Err(LoadError::Config(m));
        if !((n - 1.0).abs() < 1e-9) {
            return bad(format!("plume axis must be a unit vector, |axis| = {n}"));
        }
        if !(self.drift_speed >= 0.0) || !(self.temperature >= 0.0) || !(self.emission_spread >= 0.0) {
            return bad("plume drift speed, temperature and emission spread must be >= 0".into());
        }
        if !(self.cone_half_angle > 0.0 && self.cone_half_angle <= std::f64::consts::FRAC_PI_2) {
            return bad(format!("cone half angle must be in (0, pi/2], got {}", self.cone_half_angle));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlumeIon {
    pub t_emit: f64,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
}

const CONE_TRIES: usize = 100_000;

/// One plume ion: `drift_speed * axis` plus a Maxwellian thermal velocity,
/// redrawn until the direction lies inside the cone. After many rejections
/// (tiny cone, hot plume) the speed is kept and the direction set to the axis.
pub fn sample_plume<R: Rng + ?Sized>(model: &PlumeModel, mass: f64, rng: &mut R) -> PlumeIon {
    let sigma = (BOLTZMANN * model.temperature / mass).sqrt();
    let cos_cone = model.cone_half_angle.cos();
    let t_emit = model.emission_spread * rng.random::<f64>();
    let mut vel = [0.0; 3];
    for attempt in 0..CONE_TRIES {
        let th = maxwellian(sigma, rng);
        vel = [0, 1, 2].map(|k| model.drift_speed * model.axis[k] + th[k]);
        let s = norm(vel);
        if s == 0.0 || dot(vel, model.axis) >= s * cos_cone {
            break;
        }
        if attempt + 1 == CONE_TRIES {
            vel = model.axis.map(|c| c * s);
        }
    }
    PlumeIon { t_emit, pos: model.source_position, vel }
}

pub(crate) fn maxwellian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> [f64; 3] {
    let mut v = [0.0; 3];
    for c in &mut v {
        let z: f64 = rng.sample(StandardNormal);
        *c = sigma * z;
    }
    v
}

/// Thermal atoms ionized inside a box around the trap minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSource {
    pub temperature: f64,
    /// Half-widths of the ionization box, centered on the trap minimum.
    pub half_widths: [f64; 3],
}

impl Default for ThermalSource {
    fn default() -> Self {
        Self { temperature: 650.0, half_widths: [100e-6, 100e-6, 100e-6] }
    }
}

impl ThermalSource {
    pub fn validate(&self, center: [f64; 3], escape_box: &GridBox) -> Result<(), LoadError> {
        if !(self.temperature > 0.0) {
            return Err(LoadError::Config(format!("source temperature must be > 0, got {}", self.temperature)));
        }
        if self.half_widths.iter().any(|h| !(*h >= 0.0)) {
            return Err(LoadError::Config("ionization box half widths must be >= 0".into()));
        }
        let b = self.volume(center);
        if !(escape_box.contains(b.min) && escape_box.contains(b.max)) {
            return Err(LoadError::Config("ionization volume extends outside the escape box".into()));
        }
        Ok(())
    }

    pub fn volume(&self, center: [f64; 3]) -> GridBox {
        GridBox::new(
            [0, 1, 2].map(|k| center[k] - self.half_widths[k]),
            [0, 1, 2].map(|k| center[k] + self.half_widths[k]),
        )
    }

    /// Position uniform in the volume and Maxwellian velocity.
    pub fn sample<R: Rng + ?Sized>(&self, center: [f64; 3], mass: f64, rng: &mut R) -> ([f64; 3], [f64; 3]) {
        let pos = [0, 1, 2].map(|k| center[k] + self.half_widths[k] * (2.0 * rng.random::<f64>() - 1.0));
        let vel = maxwellian((BOLTZMANN * self.temperature / mass).sqrt(), rng);
        (pos, vel)
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    a.map(|c| c / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const M: f64 = 88.0 * 1.660_539_066_60e-27;

    #[test]
    fn cold_narrow_plume_is_pure_drift() {
        let mut m = PlumeModel::toward([0.0, 0.0, 1e-3]);
        m.temperature = 0.0;
        m.cone_half_angle = 1e-12;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let ion = sample_plume(&m, M, &mut rng);
            assert_eq!(ion.vel, m.axis.map(|c| c * m.drift_speed));
            assert!(ion.t_emit >= 0.0 && ion.t_emit <= m.emission_spread);
        }
    }

    #[test]
    fn directions_stay_in_cone() {
        let m = PlumeModel::toward([0.0, 0.0, 1e-3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = m.cone_half_angle.cos();
        for _ in 0..1000 {
            let ion = sample_plume(&m, M, &mut rng);
            assert!(dot(ion.vel, m.axis) >= norm(ion.vel) * c * (1.0 - 1e-12));
        }
    }

    #[test]
    fn validation() {
        let mut m = PlumeModel::toward([0.0; 3]);
        m.cone_half_angle = 0.0;
        assert!(m.validate().is_err());
        let mut m = PlumeModel::toward([0.0; 3]);
        m.drift_speed = -1.0;
        assert!(m.validate().is_err());
        let s = ThermalSource::default();
        let bx = GridBox::new([-1e-3, -1e-3, 0.0], [1e-3, 1e-3, 2e-3]);
        assert!(s.validate([0.0, 0.0, 1e-3], &bx).is_ok());
        assert!(s.validate([0.0, 0.0, 1.95e-3], &bx).is_err());
    }
}
