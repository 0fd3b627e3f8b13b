//! Physical constants (CODATA 2018/2022 exact or recommended values), SI units.

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_818_8e-12;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_068_92e-27;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Coulomb constant 1/(4 pi eps0), V m / C.
pub const COULOMB: f64 = 1.0 / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY);

/// Mass of the 88Sr+ ion in atomic mass units.
pub const SR88_MASS_U: f64 = 87.9056;

/// Stability boundary of the Mathieu equation on the a = 0 axis.
pub const MATHIEU_Q_LIMIT: f64 = 0.908;

/// Photon count rate one trapped ion produces on the PMT, photons/ms.
pub const PHOTONS_PER_MS_PER_ION: f64 = 2.5;

#[inline]
pub fn joules_to_ev(j: f64) -> f64 {
    j / ELEMENTARY_CHARGE
}

#[inline]
pub fn ev_to_joules(ev: f64) -> f64 {
    ev * ELEMENTARY_CHARGE
}
