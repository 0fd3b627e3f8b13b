use serde::{Deserialize, Serialize};

use crate::fieldsolver::StaticField;

/// Potential `sum_k curvature[k] * (x_k - center_k)^2 / 2` per volt.
///
/// Stands in for a solved basis in oracle tests: an ideal rf quadrupole when
/// the curvatures sum to zero, or a static harmonic well otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPotential {
    pub center: [f64; 3],
    pub curvature: [f64; 3],
}

impl QuadraticPotential {
    /// Quadrupole with `phi = sum_k c_k (x_k - x0_k)^2 / (2 r0^2)`.
    pub fn quadrupole(r0: f64, coeffs: [f64; 3], center: [f64; 3]) -> Self {
        let s = 1.0 / (r0 * r0);
        Self { center, curvature: coeffs.map(|c| c * s) }
    }

    /// Linear Paul trap rf potential `(x^2 - y^2) / (2 r0^2)`; no z curvature.
    pub fn linear(r0: f64, center: [f64; 3]) -> Self {
        Self::quadrupole(r0, [1.0, -1.0, 0.0], center)
    }
}

impl StaticField for QuadraticPotential {
    fn potential(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|k| {
                let d = p[k] - self.center[k];
                0.5 * self.curvature[k] * d * d
            })
            .sum()
    }

    fn field(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| -self.curvature[k] * (p[k] - self.center[k]))
    }
}
