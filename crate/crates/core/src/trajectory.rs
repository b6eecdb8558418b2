//! Single-particle characteristics in the mirror-confined 1.5D system.
//!
//! Integrates the trajectory ODE with adaptive error control and a step cap
//! that resolves the fast gyro-rotation inside the mirror layers, detects the
//! reflection time by tracking the unwrapped velocity angle, evaluates the
//! closed reflection-time quadrature as an independent route to the same
//! quantity, and estimates the reflection-map Jacobian by central differences.

use crate::confinement::{ConfinementProfile, ProfileError, ProfileVariant};
use crate::ode::{bisect_event, Dopri5, OdeError};
use crate::quad::adaptive_simpson;
use std::f64::consts::PI;

/// Fraction of the local gyro-period allowed per step inside the layer.
pub const LAYER_STEP_ETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: f64,
    pub v1: f64,
    pub v2: f64,
}

impl PhasePoint {
    pub fn new(x: f64, v1: f64, v2: f64) -> Self {
        Self { x, v1, v2 }
    }

    /// Relativistic factor sqrt(1 + |v|^2).
    pub fn gamma(&self) -> f64 {
        (1.0 + self.v1 * self.v1 + self.v2 * self.v2).sqrt()
    }

    /// Relativistic velocity v / sqrt(1 + |v|^2); |vhat| < 1.
    pub fn vhat(&self) -> (f64, f64) {
        let g = self.gamma();
        (self.v1 / g, self.v2 / g)
    }

    pub fn speed(&self) -> f64 {
        (self.v1 * self.v1 + self.v2 * self.v2).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    Ion,
    Electron,
}

impl Species {
    pub fn charge_sign(&self) -> f64 {
        match self {
            Species::Ion => 1.0,
            Species::Electron => -1.0,
        }
    }
}

/// Internal electromagnetic field evaluator: (t, x) -> (E1, E2, B).
pub trait FieldSampler: Sync {
    fn em(&self, t: f64, x: f64) -> (f64, f64, f64);
}

/// The model case: no internal fields at all.
#[derive(Debug, Clone, Copy)]
pub struct ZeroFields;

impl FieldSampler for ZeroFields {
    fn em(&self, _t: f64, _x: f64) -> (f64, f64, f64) {
        (0.0, 0.0, 0.0)
    }
}

/// Smooth bounded fields for scaling studies; amplitude and wavenumbers keep
/// the C^1 norm at or below `c1_bound()`.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticFields {
    pub amplitude: f64,
}

impl SyntheticFields {
    pub fn unit() -> Self {
        Self { amplitude: 0.4 }
    }

    pub fn c1_bound(&self) -> f64 {
        2.0 * self.amplitude
    }
}

impl FieldSampler for SyntheticFields {
    fn em(&self, t: f64, x: f64) -> (f64, f64, f64) {
        let a = self.amplitude;
        (
            a * (1.7 * x - 1.3 * t).cos(),
            a * (1.9 * x + 1.1 * t + 0.7).sin(),
            a * (1.2 * x + 2.0 * t - 0.3).cos(),
        )
    }
}

/// Internal fields interpolated from a Maxwell grid snapshot held at its
/// recorded time.
pub struct GridFields<'a>(pub &'a crate::maxwell::FieldGrid);

impl<'a> FieldSampler for GridFields<'a> {
    fn em(&self, _t: f64, x: f64) -> (f64, f64, f64) {
        self.0.fields_at(x.clamp(0.0, 1.0))
    }
}

/// Wrapper that freezes the internal fields to zero inside the mirror layers,
/// realizing the hybrid system used to define the reflection time.
pub struct LayerGated<'a> {
    pub inner: &'a dyn FieldSampler,
    pub n: u32,
}

impl<'a> FieldSampler for LayerGated<'a> {
    fn em(&self, t: f64, x: f64) -> (f64, f64, f64) {
        if wall_distance(x) <= 1.0 / self.n as f64 {
            (0.0, 0.0, 0.0)
        } else {
            self.inner.em(t, x)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionResult {
    pub t_star: f64,
    pub point_at_tstar: PhasePoint,
    pub steps: usize,
    /// |X(t*) - x| + |V1(t*) + v1| + |V2(t*) - v2| against the entry state.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryError {
    /// Trajectory reached the domain boundary.
    Escape {
        t: f64,
        x: f64,
    },
    /// Reflection requested for a state outside the mirror layer.
    NotInLayer {
        x: f64,
        n: u32,
    },
    /// The angle never reached its target before the trajectory left the layer.
    NoReflectionInLayer,
    /// Finite mirror too weak for the state's energy budget.
    OverBarrier {
        needed: f64,
        barrier: f64,
    },
    /// Jacobian stencil leaves the admissible region.
    StencilTooWide,
    Ode(OdeError),
    Profile(ProfileError),
}

impl std::fmt::Display for TrajectoryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrajectoryError::Escape { t, x } => write!(f, "trajectory escaped at t={t}, x={x}"),
            TrajectoryError::NotInLayer { x, n } => {
                write!(f, "state x={x} outside the 1/{n} mirror layer")
            }
            TrajectoryError::NoReflectionInLayer => {
                write!(f, "no angle crossing before leaving the mirror layer")
            }
            TrajectoryError::OverBarrier { needed, barrier } => {
                write!(
                    f,
                    "potential excursion {needed} exceeds finite barrier {barrier}"
                )
            }
            TrajectoryError::StencilTooWide => write!(f, "difference stencil leaves the layer"),
            TrajectoryError::Ode(e) => write!(f, "{e}"),
            TrajectoryError::Profile(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrajectoryError {}

impl From<OdeError> for TrajectoryError {
    fn from(e: OdeError) -> Self {
        TrajectoryError::Ode(e)
    }
}

impl From<ProfileError> for TrajectoryError {
    fn from(e: ProfileError) -> Self {
        TrajectoryError::Profile(e)
    }
}

pub fn wall_distance(x: f64) -> f64 {
    x.min(1.0 - x)
}

/// External field at `x`, clamped so the right-hand side stays finite for
/// states marginally outside the domain (escape is reported at step ends).
fn bext_clamped(profile: &ConfinementProfile, n: u32, x: f64) -> f64 {
    let nf = n as f64;
    let d = wall_distance(x);
    if d >= 1.0 / nf {
        return 0.0;
    }
    let floor = match profile.variant() {
        ProfileVariant::Singular => 1e-9,
        ProfileVariant::Finite => 0.0,
    };
    let y = (nf * d).max(floor);
    let b = profile.b(y).unwrap_or(0.0);
    if x <= 0.5 {
        nf * b
    } else {
        -nf * b
    }
}

/// Trajectory right-hand side; the fourth component tracks the unwrapped
/// velocity angle so that dense output can bisect angle crossings.
pub fn rhs(
    t: f64,
    p: &PhasePoint,
    fields: &dyn FieldSampler,
    profile: &ConfinementProfile,
    n: u32,
    species: Species,
) -> (f64, f64, f64) {
    let s = species.charge_sign();
    let (vh1, vh2) = p.vhat();
    let (e1, e2, b_int) = fields.em(t, p.x);
    let b_tot = b_int + bext_clamped(profile, n, p.x);
    (vh1, s * (e1 + vh2 * b_tot), s * (e2 - vh1 * b_tot))
}

fn rhs4(
    t: f64,
    y: &[f64; 4],
    fields: &dyn FieldSampler,
    profile: &ConfinementProfile,
    n: u32,
    species: Species,
) -> [f64; 4] {
    let p = PhasePoint::new(y[0], y[1], y[2]);
    let (dx, dv1, dv2) = rhs(t, &p, fields, profile, n, species);
    let r2 = y[1] * y[1] + y[2] * y[2];
    let dphi = if r2 > 0.0 {
        (y[1] * dv2 - y[2] * dv1) / r2
    } else {
        0.0
    };
    [dx, dv1, dv2, dphi]
}

/// Step cap resolving the gyro-rotation: eta / (N |b(N dist)| + 1) inside the
/// layer, eased toward it from outside.
fn layer_step_cap(profile: &ConfinementProfile, n: u32, x: f64) -> f64 {
    let nf = n as f64;
    let d = wall_distance(x);
    let edge_cap = LAYER_STEP_ETA / (nf * profile.c0() + 1.0);
    if d > 1.0 / nf {
        return (d - 1.0 / nf) + edge_cap;
    }
    let floor = match profile.variant() {
        ProfileVariant::Singular => 1e-9,
        ProfileVariant::Finite => 0.0,
    };
    let b = profile.b((nf * d).max(floor)).unwrap_or(0.0).abs();
    LAYER_STEP_ETA / (nf * b + 1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct TrajSample {
    pub t: f64,
    pub point: PhasePoint,
    /// Unwrapped velocity angle.
    pub phi: f64,
}

/// Integrate from `(t0, p0)` to `t1` (either direction), recording every
/// accepted step. Signals escape if the path reaches the domain boundary.
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    p0: &PhasePoint,
    t0: f64,
    t1: f64,
    fields: &dyn FieldSampler,
    profile: &ConfinementProfile,
    n: u32,
    species: Species,
    tol: f64,
) -> Result<Vec<TrajSample>, TrajectoryError> {
    let mut path = Vec::new();
    let f = |t: f64, y: &[f64; 4]| rhs4(t, y, fields, profile, n, species);
    let cap = |_t: f64, y: &[f64; 4]| layer_step_cap(profile, n, y[0]);
    let phi0 = p0.v2.atan2(p0.v1);
    let y0 = [p0.x, p0.v1, p0.v2, phi0];
    path.push(TrajSample {
        t: t0,
        point: *p0,
        phi: phi0,
    });
    if t0 == t1 {
        return Ok(path);
    }
    let mut solver = Dopri5::new(&f, t0, y0, t1, tol, &cap);
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    while (t1 - solver.t()) * dir > 0.0 {
        let out = solver.step(t1)?;
        if out.y[0] <= 0.0 || out.y[0] >= 1.0 {
            return Err(TrajectoryError::Escape {
                t: out.t,
                x: out.y[0],
            });
        }
        path.push(TrajSample {
            t: out.t,
            point: PhasePoint::new(out.y[0], out.y[1], out.y[2]),
            phi: out.y[3],
        });
    }
    Ok(path)
}

/// Final state only, same contract as [`integrate`].
#[allow(clippy::too_many_arguments)]
pub fn integrate_final(
    p0: &PhasePoint,
    t0: f64,
    t1: f64,
    fields: &dyn FieldSampler,
    profile: &ConfinementProfile,
    n: u32,
    species: Species,
    tol: f64,
) -> Result<PhasePoint, TrajectoryError> {
    if t0 == t1 {
        return Ok(*p0);
    }
    let f = |t: f64, y: &[f64; 4]| rhs4(t, y, fields, profile, n, species);
    let cap = |_t: f64, y: &[f64; 4]| layer_step_cap(profile, n, y[0]);
    let y0 = [p0.x, p0.v1, p0.v2, p0.v2.atan2(p0.v1)];
    let mut solver = Dopri5::new(&f, t0, y0, t1, tol, &cap);
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    while (t1 - solver.t()) * dir > 0.0 {
        let out = solver.step(t1)?;
        if out.y[0] <= 0.0 || out.y[0] >= 1.0 {
            return Err(TrajectoryError::Escape {
                t: out.t,
                x: out.y[0],
            });
        }
    }
    let y = solver.y();
    Ok(PhasePoint::new(y[0], y[1], y[2]))
}

/// Angle geometry of a layer state: rotation direction, time direction, and
/// the signed angle sweep to the reflected state.
struct ReflectionGeometry {
    /// +1 when the crossing lies forward in time.
    time_dir: f64,
    /// Sign of d(phi)/ds in absolute time: charge sign times wall sign.
    sigma: f64,
    /// Total signed angle change from entry to reflection.
    dphi: f64,
}

fn reflection_geometry(x: f64, v1: f64, v2: f64, species: Species) -> ReflectionGeometry {
    let left = x <= 0.5;
    let wall_sign = if left { 1.0 } else { -1.0 };
    // Rotation direction of the velocity angle in absolute time.
    let sigma = species.charge_sign() * wall_sign;
    let toward = (left && v1 < 0.0) || (!left && v1 > 0.0);
    let phi1 = v2.atan2(v1);
    // Sweep along the rotation direction to the v1-negated state.
    let d0 = PI - 2.0 * phi1;
    let mut delta = d0 - 2.0 * PI * (d0 / (2.0 * PI)).floor();
    if delta == 0.0 {
        delta = 2.0 * PI;
    }
    let delta_sigma = if sigma > 0.0 { delta } else { delta - 2.0 * PI };
    let dphi = if toward {
        delta_sigma
    } else {
        delta_sigma - sigma * 2.0 * PI
    };
    ReflectionGeometry {
        time_dir: if toward { 1.0 } else { -1.0 },
        sigma,
        dphi,
    }
}

/// Hard bound on the model reflection flight time: a full turn of the
/// velocity angle at the slowest admissible rotation rate,
/// 2 pi sqrt(1 + R^2) / (N c0).
pub fn reflection_time_bound(r: f64, profile: &ConfinementProfile, n: u32) -> f64 {
    2.0 * PI * (1.0 + r * r).sqrt() / (n as f64 * profile.c0())
}

/// Locate the reflection time by integrating the trajectory and bisecting the
/// angle crossing on dense output.
#[allow(clippy::too_many_arguments)]
pub fn reflection_time_ode(
    p: &PhasePoint,
    t: f64,
    fields: &dyn FieldSampler,
    profile: &ConfinementProfile,
    n: u32,
    species: Species,
    tol: f64,
) -> Result<ReflectionResult, TrajectoryError> {
    let nf = n as f64;
    if wall_distance(p.x) > 1.0 / nf {
        return Err(TrajectoryError::NotInLayer { x: p.x, n });
    }
    if p.v1 == 0.0 {
        return Ok(ReflectionResult {
            t_star: t,
            point_at_tstar: *p,
            steps: 0,
            residual: 0.0,
        });
    }
    let geom = reflection_geometry(p.x, p.v1, p.v2, species);
    let phi1 = p.v2.atan2(p.v1);
    let target = phi1 + geom.dphi;

    let f = |s: f64, y: &[f64; 4]| rhs4(s, y, fields, profile, n, species);
    let cap = |_s: f64, y: &[f64; 4]| layer_step_cap(profile, n, y[0]);
    let y0 = [p.x, p.v1, p.v2, phi1];
    let span = 4.0 * reflection_time_bound(p.speed(), profile, n);
    let t_limit = t + geom.time_dir * span;
    let mut solver = Dopri5::new(&f, t, y0, t_limit, tol, &cap);

    loop {
        let out = solver.step(t_limit)?;
        if let Some((t_star, y_star)) = bisect_event(&out.dense, |_s, y| y[3] - target) {
            let q = PhasePoint::new(y_star[0], y_star[1], y_star[2]);
            let residual = (q.x - p.x).abs() + (q.v1 + p.v1).abs() + (q.v2 - p.v2).abs();
            return Ok(ReflectionResult {
                t_star,
                point_at_tstar: q,
                steps: solver.steps_taken(),
                residual,
            });
        }
        if out.y[0] <= 0.0 || out.y[0] >= 1.0 {
            return Err(TrajectoryError::Escape {
                t: out.t,
                x: out.y[0],
            });
        }
        if wall_distance(out.y[0]) > 1.25 / nf {
            return Err(TrajectoryError::NoReflectionInLayer);
        }
        if (t_limit - out.t) * geom.time_dir <= 0.0 {
            return Err(TrajectoryError::NoReflectionInLayer);
        }
    }
}

/// Closed quadrature for the model reflection time, signed like the ODE
/// route: positive for wall-bound states, negative otherwise.
pub fn reflection_time_quadrature(
    x: f64,
    v1: f64,
    v2: f64,
    profile: &ConfinementProfile,
    n: u32,
    species: Species,
) -> Result<f64, TrajectoryError> {
    let nf = n as f64;
    let dist = wall_distance(x);
    if dist > 1.0 / nf {
        return Err(TrajectoryError::NotInLayer { x, n });
    }
    if v1 == 0.0 {
        return Ok(0.0);
    }
    let geom = reflection_geometry(x, v1, v2, species);
    let r = v1.hypot(v2);
    let gamma = (1.0 + r * r).sqrt();
    let s_q = species.charge_sign();
    let phi1 = v2.atan2(v1);
    let u1 = profile.psi(nf * dist)?;

    // Potential excursion along the swept arc; the finite mirror rejects
    // states whose turning level exceeds the barrier.
    let u_of_phi = |phi: f64| u1 + s_q * r * (phi1.sin() - phi.sin());
    let (a, b) = if geom.dphi > 0.0 {
        (phi1, phi1 + geom.dphi)
    } else {
        (phi1 + geom.dphi, phi1)
    };
    let mut u_max = u_of_phi(a).max(u_of_phi(b));
    let mut k = (a / (0.5 * PI)).ceil() as i64;
    while (k as f64) * 0.5 * PI <= b {
        let c = k as f64 * 0.5 * PI;
        if c >= a {
            u_max = u_max.max(u_of_phi(c));
        }
        k += 1;
    }
    if profile.variant() == ProfileVariant::Finite {
        let barrier = profile.psi_at_origin();
        if u_max > barrier {
            return Err(TrajectoryError::OverBarrier {
                needed: u_max,
                barrier,
            });
        }
    }

    // dt = gamma / (sigma N) * int d(phi) / |Psi'(y(phi))| over the swept
    // arc; the orientation of the arc carries the sign of t* - t.
    let integrand = |phi: f64| {
        let u = u_of_phi(phi).max(0.0);
        let y = profile.psi_inverse(u).expect("excursion pre-checked");
        1.0 / profile.b(y).expect("support point").abs()
    };
    let integral = adaptive_simpson(&integrand, phi1, phi1 + geom.dphi, 1e-10);
    Ok(gamma * integral / (geom.sigma * nf))
}

/// Reflection map: the reflected state (X(t*), -V1(t*), V2(t*)) of the full
/// trajectory, with t* computed from the layer-gated hybrid system.
#[allow(clippy::too_many_arguments)]
pub fn reflected_state(
    p: &PhasePoint,
    t: f64,
    fields: &dyn FieldSampler,
    profile: &ConfinementProfile,
    n: u32,
    species: Species,
    tol: f64,
) -> Result<(f64, PhasePoint), TrajectoryError> {
    let gated = LayerGated { inner: fields, n };
    let refl = reflection_time_ode(p, t, &gated, profile, n, species, tol)?;
    let end = integrate_final(p, t, refl.t_star, fields, profile, n, species, tol)?;
    Ok((refl.t_star, PhasePoint::new(end.x, -end.v1, end.v2)))
}

/// Central-difference Jacobian of the reflection map with respect to
/// (x, v1, v2). Steps: h_x = 1/(10 N), h_v = 1e-4.
#[allow(clippy::too_many_arguments)]
pub fn reflection_map_jacobian(
    p: &PhasePoint,
    t: f64,
    fields: &dyn FieldSampler,
    profile: &ConfinementProfile,
    n: u32,
    species: Species,
    tol: f64,
) -> Result<[[f64; 3]; 3], TrajectoryError> {
    let h_x = 1.0 / (10.0 * n as f64);
    let h_v = 1e-4;
    let steps = [h_x, h_v, h_v];
    let base = [p.x, p.v1, p.v2];
    if wall_distance(p.x - h_x) <= 0.0
        || wall_distance(p.x + h_x) > 1.0 / n as f64
        || wall_distance(p.x) > 1.0 / n as f64
    {
        return Err(TrajectoryError::StencilTooWide);
    }
    let mut jac = [[0.0; 3]; 3];
    for (j, &h) in steps.iter().enumerate() {
        let mut plus = base;
        plus[j] += h;
        let mut minus = base;
        minus[j] -= h;
        let (_, qp) = reflected_state(
            &PhasePoint::new(plus[0], plus[1], plus[2]),
            t,
            fields,
            profile,
            n,
            species,
            tol,
        )?;
        let (_, qm) = reflected_state(
            &PhasePoint::new(minus[0], minus[1], minus[2]),
            t,
            fields,
            profile,
            n,
            species,
            tol,
        )?;
        jac[0][j] = (qp.x - qm.x) / (2.0 * h);
        jac[1][j] = (qp.v1 - qm.v1) / (2.0 * h);
        jac[2][j] = (qp.v2 - qm.v2) / (2.0 * h);
    }
    Ok(jac)
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Canonical momentum v2 + s (psi + psi_ext); its time derivative along a
/// trajectory equals s E2(s, 1/2).
pub fn canonical_momentum(
    p: &PhasePoint,
    psi_internal: f64,
    psiext_val: f64,
    species: Species,
) -> f64 {
    p.v2 + species.charge_sign() * (psi_internal + psiext_val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> ConfinementProfile {
        ConfinementProfile::singular(2.0).unwrap()
    }

    #[test]
    fn rhs_zero_velocity_zero_fields() {
        let p = PhasePoint::new(0.3, 0.0, 0.0);
        let (dx, dv1, dv2) = rhs(0.0, &p, &ZeroFields, &profile(), 10, Species::Ion);
        assert_eq!((dx, dv1, dv2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rhs_outside_layer_has_no_external_force() {
        // psi_ext vanishes on (1/N, 1-1/N), so only internal fields act there.
        let p = PhasePoint::new(0.3, 0.2, -0.1);
        let (_, dv1, dv2) = rhs(0.0, &p, &ZeroFields, &profile(), 10, Species::Ion);
        assert_eq!(dv1, 0.0);
        assert_eq!(dv2, 0.0);
    }

    #[test]
    fn free_transport_is_straight() {
        let p0 = PhasePoint::new(0.4, 0.5, -0.2);
        let path = integrate(
            &p0,
            0.0,
            0.3,
            &ZeroFields,
            &profile(),
            10,
            Species::Ion,
            1e-12,
        )
        .unwrap();
        let last = path.last().unwrap();
        let (vh1, _) = p0.vhat();
        assert!((last.point.x - (0.4 + vh1 * 0.3)).abs() < 1e-12);
        assert!((last.point.v1 - p0.v1).abs() < 1e-13);
        assert!((last.point.v2 - p0.v2).abs() < 1e-13);
    }

    #[test]
    fn speed_constant_in_model_flight() {
        let n = 100;
        let p0 = PhasePoint::new(0.005, -0.3, 0.2);
        let r0 = p0.speed();
        let path = integrate(
            &p0,
            0.0,
            0.05,
            &ZeroFields,
            &profile(),
            n,
            Species::Ion,
            1e-12,
        )
        .unwrap();
        for s in &path {
            assert!(
                (s.point.speed() - r0).abs() < 1e-10,
                "|V| drifted at t={}: {}",
                s.t,
                s.point.speed() - r0
            );
        }
    }

    #[test]
    fn energy_relation_along_model_flight() {
        // Psi(N X) - Psi(N X1) = R (sin Phi1 - sin Phi) at every step.
        let n = 100u32;
        let prof = profile();
        let p0 = PhasePoint::new(0.005, -0.3, 0.2);
        let r = p0.speed();
        let phi1 = p0.v2.atan2(p0.v1);
        let psi1 = prof.psi(n as f64 * p0.x).unwrap();
        let path = integrate(&p0, 0.0, 0.02, &ZeroFields, &prof, n, Species::Ion, 1e-12).unwrap();
        assert!(path.len() > 10);
        for s in &path {
            if wall_distance(s.point.x) > 1.0 / n as f64 {
                continue;
            }
            let lhs = prof.psi(n as f64 * s.point.x).unwrap() - psi1;
            let rhs = r * (phi1.sin() - s.phi.sin());
            assert!(
                (lhs - rhs).abs() < 1e-8,
                "energy relation off at t={}: {}",
                s.t,
                lhs - rhs
            );
        }
    }

    #[test]
    fn reflection_trivial_when_v1_zero() {
        let refl = reflection_time_ode(
            &PhasePoint::new(0.005, 0.0, 0.4),
            1.5,
            &ZeroFields,
            &profile(),
            100,
            Species::Ion,
            1e-10,
        )
        .unwrap();
        assert_eq!(refl.t_star, 1.5);
        assert_eq!(refl.residual, 0.0);
    }

    #[test]
    fn model_reflection_returns_entry_state() {
        let prof = profile();
        let p = PhasePoint::new(0.005, -0.3, 0.2);
        let refl =
            reflection_time_ode(&p, 0.0, &ZeroFields, &prof, 100, Species::Ion, 1e-10).unwrap();
        assert!(refl.t_star > 0.0);
        assert!(refl.residual < 1e-8, "residual {}", refl.residual);
        let bound = reflection_time_bound(p.speed(), &prof, 100);
        assert!(refl.t_star <= bound);
    }

    #[test]
    fn reflection_backward_for_outgoing_state() {
        let prof = profile();
        let p = PhasePoint::new(0.005, 0.3, 0.2);
        let refl =
            reflection_time_ode(&p, 0.0, &ZeroFields, &prof, 100, Species::Ion, 1e-10).unwrap();
        assert!(refl.t_star < 0.0);
        assert!(refl.residual < 1e-8);
    }

    #[test]
    fn right_wall_reflection() {
        let prof = profile();
        let p = PhasePoint::new(0.995, 0.3, -0.1);
        let refl =
            reflection_time_ode(&p, 0.0, &ZeroFields, &prof, 100, Species::Ion, 1e-10).unwrap();
        assert!(refl.t_star > 0.0);
        assert!(refl.residual < 1e-8);
    }

    #[test]
    fn not_in_layer_is_rejected() {
        let e = reflection_time_ode(
            &PhasePoint::new(0.3, -0.1, 0.0),
            0.0,
            &ZeroFields,
            &profile(),
            100,
            Species::Ion,
            1e-10,
        );
        assert!(matches!(e, Err(TrajectoryError::NotInLayer { .. })));
    }

    #[test]
    fn quadrature_trivial_and_bounded() {
        let prof = profile();
        assert_eq!(
            reflection_time_quadrature(0.005, 0.0, 0.7, &prof, 100, Species::Ion).unwrap(),
            0.0
        );
        let dt = reflection_time_quadrature(0.005, -0.3, 0.2, &prof, 100, Species::Ion).unwrap();
        let r: f64 = 0.3f64.hypot(0.2);
        assert!(dt > 0.0);
        assert!(dt.abs() <= reflection_time_bound(r, &prof, 100));
    }

    #[test]
    fn quadrature_matches_ode() {
        let prof = profile();
        for (x, v1, v2) in [
            (0.005, -0.3, 0.2),
            (0.0021, -0.9, -0.4),
            (0.008, 0.25, 0.6),
            (0.993, 0.5, 0.1),
            (0.9975, -0.35, -0.25),
        ] {
            let p = PhasePoint::new(x, v1, v2);
            let ode =
                reflection_time_ode(&p, 0.0, &ZeroFields, &prof, 100, Species::Ion, 1e-11).unwrap();
            let quad = reflection_time_quadrature(x, v1, v2, &prof, 100, Species::Ion).unwrap();
            assert!(
                (ode.t_star - quad).abs() <= 1e-8f64.max(1e-6 * quad.abs()),
                "({x},{v1},{v2}): ode {} vs quad {quad}",
                ode.t_star
            );
        }
    }

    #[test]
    fn quadrature_scales_as_one_over_n() {
        // Fixed rescaled data (y, v): doubling N halves the flight time.
        let prof = profile();
        let y = 0.4;
        let (v1, v2) = (-0.5, 0.3);
        let base = reflection_time_quadrature(y / 16.0, v1, v2, &prof, 16, Species::Ion).unwrap();
        for n in [32u32, 64] {
            let dt =
                reflection_time_quadrature(y / n as f64, v1, v2, &prof, n, Species::Ion).unwrap();
            let expect = base * 16.0 / n as f64;
            assert!(
                (dt - expect).abs() < 1e-10 * expect.abs().max(1e-12),
                "n={n}: {dt} vs {expect}"
            );
        }
    }

    #[test]
    fn finite_profile_over_barrier_detected() {
        let prof = ConfinementProfile::finite(2.0, 1.0).unwrap();
        // Barrier Psi(0) = 0.5; a fast particle cannot turn inside it.
        let e = reflection_time_quadrature(0.01 / 1.0, -2.0, 2.0, &prof, 64, Species::Ion);
        assert!(matches!(e, Err(TrajectoryError::OverBarrier { .. })));
    }

    #[test]
    fn electron_mirror_image_of_ion() {
        // Electron flight with (x, v1, v2) equals the ion flight with
        // (x, v1, -v2), with the v2 sign flipped back.
        let prof = profile();
        let n = 100;
        let p_e = PhasePoint::new(0.006, -0.4, 0.3);
        let p_i = PhasePoint::new(0.006, -0.4, -0.3);
        let t1 = 0.01;
        let pe = integrate_final(
            &p_e,
            0.0,
            t1,
            &ZeroFields,
            &prof,
            n,
            Species::Electron,
            1e-12,
        )
        .unwrap();
        let pi =
            integrate_final(&p_i, 0.0, t1, &ZeroFields, &prof, n, Species::Ion, 1e-12).unwrap();
        assert!((pe.x - pi.x).abs() < 1e-10);
        assert!((pe.v1 - pi.v1).abs() < 1e-10);
        assert!((pe.v2 + pi.v2).abs() < 1e-10);
    }

    #[test]
    fn electron_reflection_identities() {
        let prof = profile();
        let p = PhasePoint::new(0.005, -0.3, 0.2);
        let refl = reflection_time_ode(&p, 0.0, &ZeroFields, &prof, 100, Species::Electron, 1e-10)
            .unwrap();
        assert!(refl.residual < 1e-8);
        let quad =
            reflection_time_quadrature(0.005, -0.3, 0.2, &prof, 100, Species::Electron).unwrap();
        assert!((refl.t_star - quad).abs() <= 1e-8f64.max(1e-6 * quad.abs()));
    }

    #[test]
    fn model_jacobian_is_identity() {
        let prof = profile();
        let p = PhasePoint::new(0.005, -0.3, 0.2);
        let jac =
            reflection_map_jacobian(&p, 0.0, &ZeroFields, &prof, 100, Species::Ion, 1e-11).unwrap();
        let det = det3(&jac);
        assert!((det - 1.0).abs() < 1e-6, "det {det}");
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (jac[i][j] - expect).abs() < 1e-5,
                    "J[{i}][{j}] = {}",
                    jac[i][j]
                );
            }
        }
    }

    #[test]
    fn canonical_momentum_values() {
        let p = PhasePoint::new(0.5, 0.0, 0.2);
        assert_eq!(canonical_momentum(&p, 0.0, 0.0, Species::Ion), 0.2);
        assert!((canonical_momentum(&p, 0.1, 0.3, Species::Ion) - 0.6).abs() < 1e-15);
        assert!((canonical_momentum(&p, 0.1, 0.3, Species::Electron) - (0.2 - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn backward_identity_through_reflection() {
        // Integrating back to time 0 from (t, x, v) and from (t*, x, -v1, v2)
        // lands on the same state.
        let prof = profile();
        let n = 100;
        let p = PhasePoint::new(0.005, -0.3, 0.2);
        let t = 0.02;
        let refl = reflection_time_ode(&p, t, &ZeroFields, &prof, n, Species::Ion, 1e-11).unwrap();
        let flipped = PhasePoint::new(p.x, -p.v1, p.v2);
        let a = integrate_final(&p, t, 0.0, &ZeroFields, &prof, n, Species::Ion, 1e-11).unwrap();
        let b = integrate_final(
            &flipped,
            refl.t_star,
            0.0,
            &ZeroFields,
            &prof,
            n,
            Species::Ion,
            1e-11,
        )
        .unwrap();
        assert!((a.x - b.x).abs() < 1e-9, "{} vs {}", a.x, b.x);
        assert!((a.v1 - b.v1).abs() < 1e-9);
        assert!((a.v2 - b.v2).abs() < 1e-9);
    }
}
