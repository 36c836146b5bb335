use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulusLaw {
    Cos,
    Sin,
    /// `E ≡ E₀` (homogeneous reference medium).
    Constant,
}

/// One-dimensional elastic bar with a periodic modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medium1D {
    pub length: f64,
    pub rho: f64,
    pub e0: f64,
    pub lambda_e: f64,
    pub law: ModulusLaw,
}

impl Medium1D {
    pub fn new(length: f64, rho: f64, e0: f64, lambda_e: f64, law: ModulusLaw) -> Self {
        assert!(length > 0.0 && rho > 0.0 && e0 > 0.0 && lambda_e > 0.0);
        Medium1D {
            length,
            rho,
            e0,
            lambda_e,
            law,
        }
    }

    /// `E₀(2 + cos(2πx/λ_E))` (or the sine / constant variant).
    pub fn modulus(&self, x: f64) -> f64 {
        let arg = 2.0 * PI * x / self.lambda_e;
        match self.law {
            ModulusLaw::Cos => self.e0 * (2.0 + arg.cos()),
            ModulusLaw::Sin => self.e0 * (2.0 + arg.sin()),
            ModulusLaw::Constant => self.e0,
        }
    }

    /// Mean modulus over one period.
    pub fn mean_modulus(&self) -> f64 {
        match self.law {
            ModulusLaw::Constant => self.e0,
            _ => 2.0 * self.e0,
        }
    }

    /// Harmonic mean over one period, the long-wave effective modulus.
    pub fn harmonic_modulus(&self) -> f64 {
        match self.law {
            ModulusLaw::Constant => self.e0,
            _ => 3f64.sqrt() * self.e0,
        }
    }

    /// The same bar with its modulus replaced by the constant `e`.
    pub fn homogenized(&self, e: f64) -> Self {
        Medium1D {
            e0: e,
            law: ModulusLaw::Constant,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_law_extremes() {
        let m = Medium1D::new(1.0, 1.0, 1.5, 0.25, ModulusLaw::Cos);
        assert!((m.modulus(0.0) - 4.5).abs() < 1e-14);
        assert!((m.modulus(0.125) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn modulus_bounds() {
        for law in [ModulusLaw::Cos, ModulusLaw::Sin] {
            let m = Medium1D::new(1.0, 1.0, 2.0, 0.1, law);
            for i in 0..1000 {
                let e = m.modulus(i as f64 * 1e-3);
                assert!((2.0 - 1e-12..=6.0 + 1e-12).contains(&e));
            }
        }
    }
}
