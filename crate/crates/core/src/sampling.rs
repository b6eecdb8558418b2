//! Initial data and its deterministic macro-particle sampling.
//!
//! The initial density is a separable C^1 bump: a parabolic-squared profile
//! in x times the same shape in |v|, supported in
//! [center - width, center + width] x {|v| <= k0}. Particles are placed on a
//! Halton sequence over the support box with density-proportional weights,
//! then rescaled so the total weight matches the closed-form L1 norm; the
//! same (spec, count, seed) triple reproduces the ensemble bit for bit.

use crate::quad::adaptive_simpson;
use crate::trajectory::Species;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingError {
    BadKey { key: &'static str, why: String },
}

impl std::fmt::Display for SamplingError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplingError::BadKey { key, why } => write!(f, "initial.{key}: {why}"),
        }
    }
}

impl std::error::Error for SamplingError {}

/// Closed-form initial phase-space density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataSpec {
    /// Margin of the spatial support: supp_x f0 within [eps0, 1 - eps0].
    pub eps0: f64,
    /// Momentum support radius.
    pub k0: f64,
    /// Density scale; `None` selects the L1-normalizing amplitude.
    #[serde(default)]
    pub amplitude: Option<f64>,
    pub center: f64,
    pub width: f64,
}

impl InitialDataSpec {
    /// Bump centered mid-domain filling the allowed support, unit L1 norm.
    pub fn normalized(eps0: f64, k0: f64) -> Self {
        Self {
            eps0,
            k0,
            amplitude: None,
            center: 0.5,
            width: 0.5 - eps0,
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(self.eps0 > 0.0 && self.eps0 < 0.5) {
            return Err(SamplingError::BadKey {
                key: "eps0",
                why: format!("must lie in (0, 1/2), got {}", self.eps0),
            });
        }
        if !(self.k0 > 0.0) {
            return Err(SamplingError::BadKey {
                key: "k0",
                why: format!("must be positive, got {}", self.k0),
            });
        }
        if !(self.width > 0.0) {
            return Err(SamplingError::BadKey {
                key: "width",
                why: format!("must be positive, got {}", self.width),
            });
        }
        if self.center - self.width < self.eps0 - 1e-12
            || self.center + self.width > 1.0 - self.eps0 + 1e-12
        {
            return Err(SamplingError::BadKey {
                key: "center/width",
                why: format!(
                    "support [{}, {}] must stay within [eps0, 1-eps0] = [{}, {}]",
                    self.center - self.width,
                    self.center + self.width,
                    self.eps0,
                    1.0 - self.eps0
                ),
            });
        }
        if let Some(a) = self.amplitude {
            if !(a >= 0.0) {
                return Err(SamplingError::BadKey {
                    key: "amplitude",
                    why: format!("must be nonnegative, got {a}"),
                });
            }
        }
        Ok(())
    }

    /// Density scale: explicit, or the value that makes the L1 norm one.
    pub fn scale(&self) -> f64 {
        match self.amplitude {
            Some(a) => a,
            // ||f0|| = A * (16/15) width * (pi/3) k0^2.
            None => 45.0 / (16.0 * PI * self.width * self.k0 * self.k0),
        }
    }

    /// Pointwise density f0(x, v1, v2).
    pub fn f0(&self, x: f64, v1: f64, v2: f64) -> f64 {
        let sx = (x - self.center) / self.width;
        if sx.abs() >= 1.0 {
            return 0.0;
        }
        let r2 = (v1 * v1 + v2 * v2) / (self.k0 * self.k0);
        if r2 >= 1.0 {
            return 0.0;
        }
        let bx = (1.0 - sx * sx).powi(2);
        let bv = (1.0 - r2).powi(2);
        self.scale() * bx * bv
    }

    /// Exact L1 norm of the bump.
    pub fn l1_norm(&self) -> f64 {
        self.scale() * (16.0 / 15.0) * self.width * (PI / 3.0) * self.k0 * self.k0
    }

    /// Integral of sqrt(1 + |v|^2) f0, by radial quadrature.
    pub fn kinetic_l1_norm(&self) -> f64 {
        let k0 = self.k0;
        let radial = adaptive_simpson(
            &|r: f64| (1.0 + r * r).sqrt() * (1.0 - (r / k0).powi(2)).powi(2) * r,
            0.0,
            k0,
            1e-12,
        );
        self.scale() * (16.0 / 15.0) * self.width * 2.0 * PI * radial
    }

    /// Max of f0.
    pub fn linf_norm(&self) -> f64 {
        self.scale()
    }
}

/// splitmix64; fixed, platform-independent stream.
#[derive(Debug, Clone, Copy)]
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Radical-inverse (van der Corput) value of `index` in the given base.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut result = 0.0;
    let mut frac = inv;
    while index > 0 {
        result += (index % base) as f64 * frac;
        index /= base;
        frac *= inv;
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroParticle {
    pub x: f64,
    pub v1: f64,
    pub v2: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub species: Species,
    pub parts: Vec<MacroParticle>,
}

impl ParticleEnsemble {
    pub fn total_weight(&self) -> f64 {
        self.parts.iter().map(|p| p.w).sum()
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }
}

/// Deterministic low-discrepancy sampling of the bump density with
/// density-proportional weights, rescaled to the exact L1 norm.
pub fn sample_f0(
    spec: &InitialDataSpec,
    m: usize,
    seed: u64,
    species: Species,
) -> Result<ParticleEnsemble, SamplingError> {
    spec.validate()?;
    let offset = SplitMix64(seed).next_u64() % (1 << 20);
    let volume = 2.0 * spec.width * (2.0 * spec.k0) * (2.0 * spec.k0);
    let mut parts = Vec::with_capacity(m);
    for i in 0..m as u64 {
        let idx = offset + i + 1;
        let x = spec.center - spec.width + 2.0 * spec.width * radical_inverse(idx, 2);
        let v1 = -spec.k0 + 2.0 * spec.k0 * radical_inverse(idx, 3);
        let v2 = -spec.k0 + 2.0 * spec.k0 * radical_inverse(idx, 5);
        let w = spec.f0(x, v1, v2) * volume / m as f64;
        if w > 0.0 {
            parts.push(MacroParticle { x, v1, v2, w });
        }
    }
    let norm = spec.l1_norm();
    let total: f64 = parts.iter().map(|p| p.w).sum();
    if total > 0.0 && norm > 0.0 {
        let scale = norm / total;
        for p in &mut parts {
            p.w *= scale;
        }
    }
    Ok(ParticleEnsemble { species, parts })
}
