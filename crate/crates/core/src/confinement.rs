//! Confining magnetic-field profiles.
//!
//! A profile is a function `b` on (0, +inf) that is negative and monotone on
//! the unit interval, vanishes beyond it, and either blows up at the origin
//! (singular variant) or stays bounded there (finite variant). Its potential
//! `Psi(y) = int_1^y b` decreases from the wall value toward zero, and the
//! scaled fields `B_ext(x) = N b(Nx)` / `psi_ext(x) = Psi(Nx)` concentrate the
//! mirror in layers of width 1/N at each end of the domain.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Lower bound on the scaling integer imposed by the layer construction.
pub const MIN_SCALING: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileVariant {
    /// `b(y) = -y^(-alpha)` on (0, 1]; unbounded at the origin.
    Singular,
    /// `b(y) = -cap (y+1)^(-alpha)` on [0, 1]; `b(0) = -cap` finite.
    Finite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileError {
    /// `alpha <= 1`: the potential integral degenerates.
    BadAlpha(f64),
    /// Finite variant requires a positive cap.
    BadCap(f64),
    /// Evaluation at the origin of the singular variant.
    SingularEvaluation,
    /// Argument outside the profile domain.
    BadArgument(f64),
    /// Requested potential level exceeds `Psi(0)` of a finite profile.
    PsiInverseOutOfRange { u: f64, psi0: f64 },
    /// Derivative order outside 0..=3.
    BadOrder(u32),
}

impl fmt::Display for ProfileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileError::BadAlpha(a) => write!(f, "alpha must exceed 1, got {a}"),
            ProfileError::BadCap(c) => write!(f, "finite_cap must be positive, got {c}"),
            ProfileError::SingularEvaluation => {
                write!(f, "singular profile evaluated at the origin")
            }
            ProfileError::BadArgument(y) => write!(f, "argument {y} outside profile domain"),
            ProfileError::PsiInverseOutOfRange { u, psi0 } => {
                write!(
                    f,
                    "potential level {u} exceeds Psi(0) = {psi0} of finite profile"
                )
            }
            ProfileError::BadOrder(k) => write!(f, "derivative order {k} not in 0..=3"),
        }
    }
}

impl std::error::Error for ProfileError {}

/// Canonical confining profile family.
///
/// Singular: `b(y) = -y^(-alpha)` with closed-form potential
/// `Psi(y) = (y^(1-alpha) - 1)/(alpha - 1)` on (0, 1].
/// Finite: the same power law shifted by one, scaled so `b(0) = -finite_cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfinementProfile {
    alpha: f64,
    variant: ProfileVariant,
    /// Scale factor of the power law: 1 (singular) or finite_cap (finite).
    amp: f64,
    /// Argument shift: 0 (singular) or 1 (finite).
    shift: f64,
    /// Uniform bound `b <= -c0` on the support.
    c0: f64,
}

pub fn make_profile(
    alpha: f64,
    variant: ProfileVariant,
    finite_cap: Option<f64>,
) -> Result<ConfinementProfile, ProfileError> {
    ConfinementProfile::new(alpha, variant, finite_cap)
}

impl ConfinementProfile {
    pub fn new(
        alpha: f64,
        variant: ProfileVariant,
        finite_cap: Option<f64>,
    ) -> Result<Self, ProfileError> {
        if !(alpha > 1.0) {
            return Err(ProfileError::BadAlpha(alpha));
        }
        match variant {
            ProfileVariant::Singular => Ok(Self {
                alpha,
                variant,
                amp: 1.0,
                shift: 0.0,
                c0: 1.0,
            }),
            ProfileVariant::Finite => {
                let cap = finite_cap.ok_or(ProfileError::BadCap(f64::NAN))?;
                if !(cap > 0.0) {
                    return Err(ProfileError::BadCap(cap));
                }
                Ok(Self {
                    alpha,
                    variant,
                    amp: cap,
                    shift: 1.0,
                    c0: cap * 2.0f64.powf(-alpha),
                })
            }
        }
    }

    pub fn singular(alpha: f64) -> Result<Self, ProfileError> {
        Self::new(alpha, ProfileVariant::Singular, None)
    }

    pub fn finite(alpha: f64, cap: f64) -> Result<Self, ProfileError> {
        Self::new(alpha, ProfileVariant::Finite, Some(cap))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn variant(&self) -> ProfileVariant {
        self.variant
    }

    /// Uniform lower bound: `b(y) <= -c0` on the support.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// `Psi(0)`: finite for the finite variant, +inf for the singular one.
    pub fn psi_at_origin(&self) -> f64 {
        match self.variant {
            ProfileVariant::Singular => f64::INFINITY,
            ProfileVariant::Finite => {
                self.amp * (1.0 - 2.0f64.powf(1.0 - self.alpha)) / (self.alpha - 1.0)
            }
        }
    }

    fn check_arg(&self, y: f64) -> Result<(), ProfileError> {
        if !y.is_finite() || y < 0.0 {
            return Err(ProfileError::BadArgument(y));
        }
        if y == 0.0 && self.variant == ProfileVariant::Singular {
            return Err(ProfileError::SingularEvaluation);
        }
        Ok(())
    }

    /// `b(y)`.
    pub fn b(&self, y: f64) -> Result<f64, ProfileError> {
        self.check_arg(y)?;
        if y > 1.0 {
            return Ok(0.0);
        }
        Ok(-self.amp * (y + self.shift).powf(-self.alpha))
    }

    /// `Psi(y) = int_1^y b`.
    pub fn psi(&self, y: f64) -> Result<f64, ProfileError> {
        self.check_arg(y)?;
        if y >= 1.0 {
            return Ok(0.0);
        }
        let a = self.alpha;
        Ok(
            self.amp * ((y + self.shift).powf(1.0 - a) - (1.0 + self.shift).powf(1.0 - a))
                / (a - 1.0),
        )
    }

    /// k-th derivative of `Psi`, k in 0..=3. Order 1 is exactly `b`.
    pub fn psi_deriv(&self, y: f64, order: u32) -> Result<f64, ProfileError> {
        self.check_arg(y)?;
        if order > 3 {
            return Err(ProfileError::BadOrder(order));
        }
        if order == 0 {
            return self.psi(y);
        }
        if y > 1.0 {
            return Ok(0.0);
        }
        let a = self.alpha;
        let u = y + self.shift;
        Ok(match order {
            1 => -self.amp * u.powf(-a),
            2 => self.amp * a * u.powf(-a - 1.0),
            _ => -self.amp * a * (a + 1.0) * u.powf(-a - 2.0),
        })
    }

    /// Inverse of `Psi` on its decreasing branch: the y in the support with
    /// `Psi(y) = u`, to 1e-12 relative accuracy.
    ///
    /// Closed form for the singular family; bracketed bisection with Newton
    /// polish for the finite one.
    pub fn psi_inverse(&self, u: f64) -> Result<f64, ProfileError> {
        if !u.is_finite() || u < 0.0 {
            return Err(ProfileError::BadArgument(u));
        }
        if u == 0.0 {
            return Ok(1.0);
        }
        let a = self.alpha;
        match self.variant {
            ProfileVariant::Singular => Ok((1.0 + (a - 1.0) * u).powf(1.0 / (1.0 - a))),
            ProfileVariant::Finite => {
                let psi0 = self.psi_at_origin();
                if u > psi0 {
                    return Err(ProfileError::PsiInverseOutOfRange { u, psi0 });
                }
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                // Psi is strictly decreasing on [0, 1]: Psi(lo) >= u >= Psi(hi).
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.psi(mid)? > u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-13 * hi.max(1e-3) {
                        break;
                    }
                }
                let mut y = 0.5 * (lo + hi);
                for _ in 0..4 {
                    let f = self.psi(y)? - u;
                    let d = self.b(y)?;
                    if d == 0.0 {
                        break;
                    }
                    y = (y - f / d).clamp(lo, hi);
                }
                Ok(y)
            }
        }
    }

    /// Scaled field `B_ext,N(x)`: `N b(Nx)` on the left half, `-N b(N(1-x))`
    /// on the right half.
    pub fn bext(&self, n: u32, x: f64) -> f64 {
        debug_assert!(n >= MIN_SCALING);
        debug_assert!(x > 0.0 && x < 1.0);
        let nf = n as f64;
        if x <= 0.5 {
            nf * self.b(nf * x).unwrap_or(f64::NEG_INFINITY)
        } else {
            -nf * self.b(nf * (1.0 - x)).unwrap_or(f64::NEG_INFINITY)
        }
    }

    /// Scaled potential `psi_ext,N(x) = Psi(N dist(x, boundary))`.
    pub fn psiext(&self, n: u32, x: f64) -> f64 {
        debug_assert!(n >= MIN_SCALING);
        debug_assert!(x > 0.0 && x < 1.0);
        let nf = n as f64;
        let y = nf * x.min(1.0 - x);
        self.psi(y).unwrap_or(f64::INFINITY)
    }
}
