use std::f64::consts::PI;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Collider coordinates: transverse momentum, pseudorapidity, azimuth, mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourVector {
    pub pt: f64,
    pub eta: f64,
    pub phi: f64,
    pub m: f64,
}

/// Cartesian four-momentum `(E, px, py, pz)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LorentzVector {
    pub e: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

/// Maps an angle onto `(-π, π]`.
pub fn wrap_phi(phi: f64) -> f64 {
    let mut p = phi % (2.0 * PI);
    if p <= -PI {
        p += 2.0 * PI;
    } else if p > PI {
        p -= 2.0 * PI;
    }
    p
}

impl FourVector {
    pub fn new(pt: f64, eta: f64, phi: f64, m: f64) -> Self {
        Self { pt, eta, phi, m }
    }

    pub fn to_cartesian(&self) -> LorentzVector {
        let px = self.pt * self.phi.cos();
        let py = self.pt * self.phi.sin();
        let pz = self.pt * self.eta.sinh();
        let p2 = px * px + py * py + pz * pz;
        LorentzVector {
            e: (p2 + self.m * self.m).sqrt(),
            px,
            py,
            pz,
        }
    }
}

impl LorentzVector {
    pub fn new(e: f64, px: f64, py: f64, pz: f64) -> Self {
        Self { e, px, py, pz }
    }

    pub fn p2(&self) -> f64 {
        self.px * self.px + self.py * self.py + self.pz * self.pz
    }

    pub fn p(&self) -> f64 {
        self.p2().sqrt()
    }

    pub fn pt(&self) -> f64 {
        self.px.hypot(self.py)
    }

    /// `E² - |p|²`, which may be slightly negative from rounding.
    pub fn mass_squared(&self) -> f64 {
        self.e * self.e - self.p2()
    }

    /// Converts to `(pt, eta, phi, m)`. Pseudorapidity uses
    /// `-½ ln((1 - cosθ)/(1 + cosθ))` written as `½ ln((p + pz)/(p - pz))`.
    pub fn to_collider(&self) -> Result<FourVector, DataError> {
        let m = self.checked_mass()?;
        let pt = self.pt();
        let p = self.p();
        let eta = if p == 0.0 {
            0.0
        } else if pt == 0.0 {
            return Err(DataError::Unphysical(format!(
                "pseudorapidity undefined along the beam axis (pz = {})",
                self.pz
            )));
        } else {
            0.5 * ((p + self.pz) / (p - self.pz)).ln()
        };
        Ok(FourVector {
            pt,
            eta,
            phi: self.py.atan2(self.px),
            m,
        })
    }

    /// Invariant mass, clipping rounding-level negative radicands to zero.
    pub fn checked_mass(&self) -> Result<f64, DataError> {
        let m2 = self.mass_squared();
        let tol = 1e-9 * (self.e * self.e).max(1.0);
        if m2 < -tol {
            return Err(DataError::Unphysical(format!(
                "E² - |p|² = {m2:e} is negative (E = {}, |p| = {})",
                self.e,
                self.p()
            )));
        }
        Ok(m2.max(0.0).sqrt())
    }

    /// Boosts by velocity `beta` (|beta| < 1).
    pub fn boost(&self, beta: [f64; 3]) -> LorentzVector {
        let b2 = beta[0] * beta[0] + beta[1] * beta[1] + beta[2] * beta[2];
        if b2 == 0.0 {
            return *self;
        }
        let gamma = 1.0 / (1.0 - b2).sqrt();
        let bp = beta[0] * self.px + beta[1] * self.py + beta[2] * self.pz;
        let k = (gamma - 1.0) * bp / b2 + gamma * self.e;
        LorentzVector {
            e: gamma * (self.e + bp),
            px: self.px + k * beta[0],
            py: self.py + k * beta[1],
            pz: self.pz + k * beta[2],
        }
    }

    /// Velocity of a massive system, `p / E`.
    pub fn velocity(&self) -> [f64; 3] {
        [self.px / self.e, self.py / self.e, self.pz / self.e]
    }
}

impl Add for LorentzVector {
    type Output = LorentzVector;

    fn add(self, o: LorentzVector) -> LorentzVector {
        LorentzVector {
            e: self.e + o.e,
            px: self.px + o.px,
            py: self.py + o.py,
            pz: self.pz + o.pz,
        }
    }
}

/// System mass `√((ΣE)² - (Σp)²)` of a set of four-momenta.
pub fn invariant_mass(vectors: &[LorentzVector]) -> Result<f64, DataError> {
    let total = vectors.iter().fold(LorentzVector::default(), |acc, v| acc + *v);
    total.checked_mass()
}
