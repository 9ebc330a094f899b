//! Density-to-property interpolation (SIMP and RAMP).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Simp,
    Ramp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialLaw {
    pub kind: Interpolation,
    pub e0: f64,
    pub e_min: f64,
    pub penalty: f64,
    pub nu: f64,
    pub kappa_min: f64,
}

impl MaterialLaw {
    pub fn simp(e0: f64, e_min: f64, penalty: f64, nu: f64) -> Self {
        Self {
            kind: Interpolation::Simp,
            e0,
            e_min,
            penalty,
            nu,
            kappa_min: 1e-9,
        }
    }

    pub fn ramp(e0: f64, e_min: f64, penalty: f64, nu: f64, kappa_min: f64) -> Self {
        Self {
            kind: Interpolation::Ramp,
            e0,
            e_min,
            penalty,
            nu,
            kappa_min,
        }
    }

    /// Young's modulus and its derivative with the law's own interpolation.
    pub fn young(&self, rho: f64) -> (f64, f64) {
        match self.kind {
            Interpolation::Simp => simp_young(rho, self),
            Interpolation::Ramp => ramp_young(rho, self),
        }
    }
}

fn clamp01(rho: f64) -> f64 {
    rho.clamp(0.0, 1.0)
}

/// E = E_min + ρ̄^q (E0 − E_min).
pub fn simp_young(rho: f64, law: &MaterialLaw) -> (f64, f64) {
    let r = clamp01(rho);
    let q = law.penalty;
    let span = law.e0 - law.e_min;
    let e = law.e_min + r.powf(q) * span;
    let de = if q == 0.0 { 0.0 } else { q * r.powf(q - 1.0) * span };
    (e, de)
}

/// Rational form shared by the RAMP modulus and the pseudo conductivity.
fn ramp_shape(rho: f64, q: f64) -> (f64, f64) {
    let r = clamp01(rho);
    let den = 1.0 + q * (1.0 - r);
    (r / den, (1.0 + q) / (den * den))
}

/// E = E_min + ρ̄ / (1 + q(1−ρ̄)) (E0 − E_min).
pub fn ramp_young(rho: f64, law: &MaterialLaw) -> (f64, f64) {
    let (s, ds) = ramp_shape(rho, law.penalty);
    let span = law.e0 - law.e_min;
    (law.e_min + s * span, ds * span)
}

/// κ = κ_min + ρ̄ / (1 + q(1−ρ̄)) (1 − κ_min).
pub fn ramp_conductivity(rho: f64, law: &MaterialLaw) -> (f64, f64) {
    let (s, ds) = ramp_shape(rho, law.penalty);
    let span = 1.0 - law.kappa_min;
    (law.kappa_min + s * span, ds * span)
}
