//! Weak-formulation residuals evaluated on recorded runs.
//!
//! The distribution enters every integral as an empirical measure (particle
//! sums); field integrals use trapezoid weights in space and over the
//! snapshot cadence in time. The external-field coupling term is summed from
//! per-substep layer residence records rather than snapshots, since layer
//! transits are far shorter than any reasonable snapshot interval.

use crate::confinement::ConfinementProfile;
use crate::pic::{Mode, SimulationOutput};
use crate::quad::trapezoid;
use crate::trajectory::Species;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub enum WeakformError {
    /// Specular-mode evaluation requires a wall-even test function.
    Inadmissible,
    /// Constraint phi_j = 0 at the required wall violated.
    ConstraintViolated { which: &'static str },
    /// Run recorded without layer residence samples.
    InsufficientCadence,
    /// Run recorded without particle snapshots.
    MissingParticles,
    /// Requested species absent from the run.
    MissingSpecies,
}

impl std::fmt::Display for WeakformError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeakformError::Inadmissible => {
                write!(f, "test function is not even in v1 at the walls")
            }
            WeakformError::ConstraintViolated { which } => {
                write!(
                    f,
                    "spatial test function violates its wall constraint ({which})"
                )
            }
            WeakformError::InsufficientCadence => {
                write!(f, "run lacks layer-resolved residence records")
            }
            WeakformError::MissingParticles => write!(f, "run lacks particle snapshots"),
            WeakformError::MissingSpecies => write!(f, "species not present in the run"),
        }
    }
}

impl std::error::Error for WeakformError {}

/// Closed-form phase-space test function
///
/// alpha = tau(t) [ amp_a bump((x-ax)/aw) v1 R(|v|) + B(x) (c0 + c1 v2 + c2 v1^2) R(|v|) ]
///
/// with tau a C^2 bump vanishing at t = t_final, bump a compactly supported
/// C^2 profile, B a smooth non-vanishing spatial factor, and R a radial
/// momentum cutoff (omitted when `vcut` is None, which also forces the even
/// part to be velocity independent).
///
/// The first term is odd in v1 but supported away from the walls; the second
/// is even in v1 everywhere, so the symmetry condition at x = 0, 1 holds by
/// construction whenever the bump support stays interior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub t_final: f64,
    pub amp_a: f64,
    pub ax: f64,
    pub aw: f64,
    pub b0: f64,
    pub b1: f64,
    pub kb: f64,
    pub pb: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub vcut: Option<f64>,
}

fn bump3(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 - s * s).powi(3)
    } else {
        0.0
    }
}

fn bump3_deriv(s: f64) -> f64 {
    if s.abs() < 1.0 {
        -6.0 * s * (1.0 - s * s).powi(2)
    } else {
        0.0
    }
}

impl TestFunction {
    /// Panel of wall-even test functions with both interior-odd and
    /// wall-active content.
    pub fn canonical_panel(t_final: f64) -> Vec<TestFunction> {
        vec![
            TestFunction {
                t_final,
                amp_a: 1.0,
                ax: 0.5,
                aw: 0.3,
                b0: 0.8,
                b1: 0.4,
                kb: 2.3,
                pb: 0.4,
                c0: 1.0,
                c1: 0.5,
                c2: 0.0,
                vcut: Some(2.5),
            },
            TestFunction {
                t_final,
                amp_a: -0.7,
                ax: 0.45,
                aw: 0.25,
                b0: 1.0,
                b1: -0.6,
                kb: 3.1,
                pb: 1.1,
                c0: 0.3,
                c1: 0.0,
                c2: 0.8,
                vcut: Some(3.0),
            },
            TestFunction {
                t_final,
                amp_a: 0.0,
                ax: 0.5,
                aw: 0.2,
                b0: 0.5,
                b1: 0.5,
                kb: 1.7,
                pb: -0.3,
                c0: 0.0,
                c1: 1.0,
                c2: 0.4,
                vcut: Some(2.0),
            },
            TestFunction {
                t_final,
                amp_a: 1.3,
                ax: 0.6,
                aw: 0.25,
                b0: 0.2,
                b1: 0.9,
                kb: 4.2,
                pb: 2.0,
                c0: 0.7,
                c1: -0.4,
                c2: 0.2,
                vcut: Some(2.2),
            },
            TestFunction {
                t_final,
                amp_a: -0.5,
                ax: 0.35,
                aw: 0.2,
                b0: 0.9,
                b1: 0.1,
                kb: 2.9,
                pb: 0.0,
                c0: 0.4,
                c1: 0.9,
                c2: -0.3,
                vcut: Some(2.8),
            },
        ]
    }

    /// Three admissible test functions driving the layer coupling term.
    pub fn xi_panel(t_final: f64) -> [TestFunction; 3] {
        let p = Self::canonical_panel(t_final);
        [p[0], p[2], p[4]]
    }

    /// Velocity-independent member: its rotation pairing vanishes
    /// identically.
    pub fn v_independent(t_final: f64) -> TestFunction {
        TestFunction {
            t_final,
            amp_a: 0.0,
            ax: 0.5,
            aw: 0.2,
            b0: 1.0,
            b1: 0.3,
            kb: 2.0,
            pb: 0.5,
            c0: 1.0,
            c1: 0.0,
            c2: 0.0,
            vcut: None,
        }
    }

    /// Even in v1 at the walls: holds exactly when the odd part's support
    /// stays strictly interior (or the odd part is absent).
    pub fn wall_even(&self) -> bool {
        self.amp_a == 0.0 || (self.ax - self.aw > 0.0 && self.ax + self.aw < 1.0)
    }

    fn tau(&self, t: f64) -> f64 {
        bump3(t / self.t_final)
    }

    fn tau_dt(&self, t: f64) -> f64 {
        bump3_deriv(t / self.t_final) / self.t_final
    }

    fn radial(&self, v1: f64, v2: f64) -> (f64, f64, f64) {
        match self.vcut {
            None => (1.0, 0.0, 0.0),
            Some(vs) => {
                let u = (v1 * v1 + v2 * v2) / (vs * vs);
                if u >= 1.0 {
                    (0.0, 0.0, 0.0)
                } else {
                    let q = 1.0 - u;
                    let r = q.powi(3);
                    let dr = -6.0 * q * q / (vs * vs);
                    (r, dr * v1, dr * v2)
                }
            }
        }
    }

    fn spatial_even(&self, x: f64) -> (f64, f64) {
        let c = (self.kb * x + self.pb).cos();
        let s = (self.kb * x + self.pb).sin();
        (self.b0 + self.b1 * c, -self.b1 * self.kb * s)
    }

    fn spatial_odd(&self, x: f64) -> (f64, f64) {
        let s = (x - self.ax) / self.aw;
        (self.amp_a * bump3(s), self.amp_a * bump3_deriv(s) / self.aw)
    }

    pub fn eval(&self, t: f64, x: f64, v1: f64, v2: f64) -> f64 {
        let (r, _, _) = self.radial(v1, v2);
        let (a, _) = self.spatial_odd(x);
        let (b, _) = self.spatial_even(x);
        let even = self.c0 + self.c1 * v2 + self.c2 * v1 * v1;
        self.tau(t) * (a * v1 * r + b * even * r)
    }

    pub fn grad(&self, t: f64, x: f64, v1: f64, v2: f64) -> AlphaGrad {
        let (r, rv1, rv2) = self.radial(v1, v2);
        let (a, da) = self.spatial_odd(x);
        let (b, db) = self.spatial_even(x);
        let even = self.c0 + self.c1 * v2 + self.c2 * v1 * v1;
        let tau = self.tau(t);
        let core = a * v1 * r + b * even * r;
        AlphaGrad {
            value: tau * core,
            dt: self.tau_dt(t) * core,
            dx: tau * (da * v1 * r + db * even * r),
            dv1: tau * (a * (r + v1 * rv1) + b * (2.0 * self.c2 * v1 * r + even * rv1)),
            dv2: tau * (a * v1 * rv2 + b * (self.c1 * r + even * rv2)),
        }
    }

    /// The rotation pairing vhat2 d_v1 alpha - vhat1 d_v2 alpha.
    pub fn alpha_tilde(&self, t: f64, x: f64, v1: f64, v2: f64) -> f64 {
        let g = self.grad(t, x, v1, v2);
        let gamma = (1.0 + v1 * v1 + v2 * v2).sqrt();
        (v2 * g.dv1 - v1 * g.dv2) / gamma
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AlphaGrad {
    pub value: f64,
    pub dt: f64,
    pub dx: f64,
    pub dv1: f64,
    pub dv2: f64,
}

/// Spatial-only test function tau(t) X(x) for the Maxwell weak forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpaceProfile {
    /// 0.7 + 0.3 cos(pi x): free at both walls.
    Free,
    /// (1 - x^2)^3: vanishes at x = 1.
    ZeroAtRight,
    /// (1 - (1-x)^2)^3: vanishes at x = 0.
    ZeroAtLeft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTestFunction {
    pub t_final: f64,
    pub profile: SpaceProfile,
}

impl SpaceTestFunction {
    pub fn maxwell_panel(t_final: f64) -> [SpaceTestFunction; 4] {
        [
            SpaceTestFunction {
                t_final,
                profile: SpaceProfile::Free,
            },
            SpaceTestFunction {
                t_final,
                profile: SpaceProfile::ZeroAtRight,
            },
            SpaceTestFunction {
                t_final,
                profile: SpaceProfile::ZeroAtLeft,
            },
            SpaceTestFunction {
                t_final,
                profile: SpaceProfile::ZeroAtRight,
            },
        ]
    }

    fn xprofile(&self, x: f64) -> (f64, f64) {
        match self.profile {
            SpaceProfile::Free => {
                let p = std::f64::consts::PI;
                (0.7 + 0.3 * (p * x).cos(), -0.3 * p * (p * x).sin())
            }
            SpaceProfile::ZeroAtRight => {
                let q = 1.0 - x * x;
                if q <= 0.0 {
                    (0.0, 0.0)
                } else {
                    (q.powi(3), -6.0 * x * q * q)
                }
            }
            SpaceProfile::ZeroAtLeft => {
                let y = 1.0 - x;
                let q = 1.0 - y * y;
                if q <= 0.0 {
                    (0.0, 0.0)
                } else {
                    (q.powi(3), 6.0 * y * q * q)
                }
            }
        }
    }

    fn tau(&self, t: f64) -> f64 {
        bump3(t / self.t_final)
    }

    fn tau_dt(&self, t: f64) -> f64 {
        bump3_deriv(t / self.t_final) / self.t_final
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.tau(t) * self.xprofile(x).0
    }

    pub fn dt(&self, t: f64, x: f64) -> f64 {
        self.tau_dt(t) * self.xprofile(x).0
    }

    pub fn dx(&self, t: f64, x: f64) -> f64 {
        self.tau(t) * self.xprofile(x).1
    }
}

fn species_index(output: &SimulationOutput, species: Species) -> Result<usize, WeakformError> {
    match species {
        Species::Ion => Ok(0),
        Species::Electron => {
            if output.config.electron.is_some() {
                Ok(1)
            } else {
                Err(WeakformError::MissingSpecies)
            }
        }
    }
}

/// The layer coupling term as it appears in the species' weak form:
/// charge_sign * sum over layer residence of w dt B_ext alpha~.
pub fn xi_extra_term(
    output: &SimulationOutput,
    profile: &ConfinementProfile,
    n: u32,
    alpha: &TestFunction,
    species: Species,
) -> Result<f64, WeakformError> {
    let samples = output
        .layer_samples
        .as_ref()
        .ok_or(WeakformError::InsufficientCadence)?;
    species_index(output, species)?;
    let sign = species.charge_sign();
    let total: f64 = samples
        .par_iter()
        .filter(|s| s.sign == sign)
        .map(|s| {
            let bext = profile.bext(n, s.x);
            s.wdt * bext * alpha.alpha_tilde(s.t, s.x, s.v1, s.v2)
        })
        .sum();
    Ok(sign * total)
}

/// Grouped contributions to the Vlasov weak-form residual; the residual is
/// their sum and `scale` the largest single term in magnitude.
#[derive(Debug, Clone, Copy)]
pub struct VlasovResidual {
    pub residual: f64,
    pub scale: f64,
    pub transport_term: f64,
    pub field_term: f64,
    pub initial_term: f64,
    pub xi_term: f64,
}

/// Evaluate the Vlasov weak form of the requested mode on a recorded run.
/// Specular mode demands wall-even test functions and omits the external
/// field; confined mode adds the layer coupling term from residence records.
pub fn vlasov_weak_residual(
    output: &SimulationOutput,
    alpha: &TestFunction,
    mode: Mode,
    species: Species,
) -> Result<VlasovResidual, WeakformError> {
    if mode == Mode::Specular && !alpha.wall_even() {
        return Err(WeakformError::Inadmissible);
    }
    if !output.config.output.particles || output.particles.is_empty() {
        return Err(WeakformError::MissingParticles);
    }
    let si = species_index(output, species)?;
    let sign = species.charge_sign();

    let per_snapshot: Vec<(f64, f64)> = output
        .times
        .par_iter()
        .zip(&output.fields)
        .zip(&output.particles)
        .map(|((t, fld), parts)| {
            let ens = &parts[si];
            let nx = fld.e1.len();
            let dx = 1.0 / (nx - 1) as f64;
            let mut transport = 0.0;
            let mut field = 0.0;
            for p in &ens.parts {
                let g = alpha.grad(*t, p.x, p.v1, p.v2);
                let gamma = (1.0 + p.v1 * p.v1 + p.v2 * p.v2).sqrt();
                let s = (p.x / dx).clamp(0.0, (nx - 1) as f64);
                let i = (s as usize).min(nx - 2);
                let w = s - i as f64;
                let e1 = fld.e1[i] + w * (fld.e1[i + 1] - fld.e1[i]);
                let e2 = fld.e2[i] + w * (fld.e2[i + 1] - fld.e2[i]);
                let b = fld.b[i] + w * (fld.b[i + 1] - fld.b[i]);
                transport += p.w * (g.dt + p.v1 / gamma * g.dx);
                field += p.w
                    * sign
                    * ((e1 + p.v2 / gamma * b) * g.dv1 + (e2 - p.v1 / gamma * b) * g.dv2);
            }
            (transport, field)
        })
        .collect();

    let transport_term = trapezoid(
        &output.times,
        &per_snapshot.iter().map(|v| v.0).collect::<Vec<_>>(),
    );
    let field_term = trapezoid(
        &output.times,
        &per_snapshot.iter().map(|v| v.1).collect::<Vec<_>>(),
    );
    let initial_term: f64 = output.particles[0][si]
        .parts
        .iter()
        .map(|p| p.w * alpha.eval(0.0, p.x, p.v1, p.v2))
        .sum();

    let xi_term = if mode.is_confined() {
        let profile = output
            .config
            .profile
            .build()
            .map_err(|_| WeakformError::InsufficientCadence)?;
        xi_extra_term(output, &profile, output.config.n, alpha, species)?
    } else {
        0.0
    };

    let residual = transport_term + field_term + initial_term + xi_term;
    let scale = transport_term
        .abs()
        .max(field_term.abs())
        .max(initial_term.abs())
        .max(xi_term.abs());
    Ok(VlasovResidual {
        residual,
        scale,
        transport_term,
        field_term,
        initial_term,
        xi_term,
    })
}

/// The four Maxwell weak-form residuals.
pub fn maxwell_weak_residuals(
    output: &SimulationOutput,
    phis: &[SpaceTestFunction; 4],
) -> Result<[f64; 4], WeakformError> {
    // Constraint gate: phi2(t,1) = phi3(t,0) = phi4(t,1) = 0.
    let t_probe = 0.3 * phis[0].t_final;
    if phis[1].eval(t_probe, 1.0) != 0.0 {
        return Err(WeakformError::ConstraintViolated { which: "phi2(t,1)" });
    }
    if phis[2].eval(t_probe, 0.0) != 0.0 {
        return Err(WeakformError::ConstraintViolated { which: "phi3(t,0)" });
    }
    if phis[3].eval(t_probe, 1.0) != 0.0 {
        return Err(WeakformError::ConstraintViolated { which: "phi4(t,1)" });
    }

    let nx = output.nx();
    let dx = 1.0 / (nx - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|i| i as f64 * dx).collect();
    let lambda = output.config.lambda;
    let signal = &output.config.boundary;
    let have_particles = output.config.output.particles && !output.particles.is_empty();

    // Spatial integrals at every snapshot.
    let mut f1: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut f2: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut f3: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut f4: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut p1: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut p2: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut p3: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut bc2: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut bc3: Vec<f64> = Vec::with_capacity(output.times.len());
    let mut bc4: Vec<f64> = Vec::with_capacity(output.times.len());

    for (k, t) in output.times.iter().enumerate() {
        let fld = &output.fields[k];
        let mut a1 = vec![0.0; nx];
        let mut a2 = vec![0.0; nx];
        let mut a3 = vec![0.0; nx];
        let mut a4 = vec![0.0; nx];
        for i in 0..nx {
            let x = xs[i];
            a1[i] = -fld.e1[i] * phis[0].dt(*t, x);
            a2[i] = -fld.e1[i] * phis[1].dx(*t, x);
            a3[i] = -fld.e2[i] * phis[2].dt(*t, x) - fld.b[i] * phis[2].dx(*t, x);
            a4[i] = -fld.b[i] * phis[3].dt(*t, x) - fld.e2[i] * phis[3].dx(*t, x);
        }
        f1.push(trapezoid(&xs, &a1));
        f2.push(trapezoid(&xs, &a2));
        f3.push(trapezoid(&xs, &a3));
        f4.push(trapezoid(&xs, &a4));

        if have_particles {
            let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
            for ens in &output.particles[k] {
                let sign = ens.species.charge_sign();
                for p in &ens.parts {
                    let gamma = (1.0 + p.v1 * p.v1 + p.v2 * p.v2).sqrt();
                    s1 += sign * p.w * p.v1 / gamma * phis[0].eval(*t, p.x);
                    s2 += sign * p.w * phis[1].eval(*t, p.x);
                    s3 += sign * p.w * p.v2 / gamma * phis[2].eval(*t, p.x);
                }
            }
            p1.push(s1);
            p2.push(s2);
            p3.push(s3);
        } else {
            p1.push(0.0);
            p2.push(0.0);
            p3.push(0.0);
        }
        bc2.push(phis[1].eval(*t, 0.0));
        bc3.push(signal.b_b(*t) * phis[2].eval(*t, 1.0));
        bc4.push(signal.e2_b(*t) * phis[3].eval(*t, 0.0));
    }

    let fld0 = &output.fields[0];
    let init1: f64 = {
        let a: Vec<f64> = (0..nx)
            .map(|i| fld0.e1[i] * phis[0].eval(0.0, xs[i]))
            .collect();
        trapezoid(&xs, &a)
    };
    let init3: f64 = {
        let a: Vec<f64> = (0..nx)
            .map(|i| fld0.e2[i] * phis[2].eval(0.0, xs[i]))
            .collect();
        trapezoid(&xs, &a)
    };
    let init4: f64 = {
        let a: Vec<f64> = (0..nx)
            .map(|i| fld0.b[i] * phis[3].eval(0.0, xs[i]))
            .collect();
        trapezoid(&xs, &a)
    };

    let ts = &output.times;
    let r1 = trapezoid(ts, &f1) - init1 + trapezoid(ts, &p1);
    let r2 = trapezoid(ts, &f2) - lambda * trapezoid(ts, &bc2) - trapezoid(ts, &p2);
    let r3 = trapezoid(ts, &f3) - init3 + trapezoid(ts, &bc3) + trapezoid(ts, &p3);
    let r4 = trapezoid(ts, &f4) - init4 - trapezoid(ts, &bc4);
    Ok([r1, r2, r3, r4])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wall_even_panel_is_exactly_even() {
        for alpha in TestFunction::canonical_panel(1.0) {
            assert!(alpha.wall_even());
            for x in [0.0, 1.0] {
                for t in [0.0, 0.4, 0.9] {
                    for (v1, v2) in [(0.3, -0.2), (1.1, 0.7), (0.05, 0.0)] {
                        let diff = alpha.eval(t, x, v1, v2) - alpha.eval(t, x, -v1, v2);
                        assert_eq!(diff, 0.0, "x={x}, t={t}, v=({v1},{v2})");
                    }
                }
            }
        }
    }

    #[test]
    fn odd_part_touching_wall_is_inadmissible() {
        let mut alpha = TestFunction::canonical_panel(1.0)[0];
        alpha.ax = 0.1;
        alpha.aw = 0.3;
        assert!(!alpha.wall_even());
    }

    #[test]
    fn v_independent_alpha_has_zero_tilde() {
        let alpha = TestFunction::v_independent(1.0);
        for (t, x, v1, v2) in [(0.1, 0.02, 0.4, -0.3), (0.5, 0.9, -1.0, 0.2)] {
            assert_eq!(alpha.alpha_tilde(t, x, v1, v2), 0.0);
        }
    }

    #[test]
    fn alpha_vanishes_at_final_time() {
        for alpha in TestFunction::canonical_panel(0.7) {
            assert_eq!(alpha.eval(0.7, 0.4, 0.3, 0.1), 0.0);
        }
    }

    #[test]
    fn test_function_gradients_match_finite_differences() {
        let alpha = TestFunction::canonical_panel(1.0)[1];
        let h = 1e-6;
        let (t, x, v1, v2) = (0.3, 0.47, 0.52, -0.36);
        let g = alpha.grad(t, x, v1, v2);
        let fd_t = (alpha.eval(t + h, x, v1, v2) - alpha.eval(t - h, x, v1, v2)) / (2.0 * h);
        let fd_x = (alpha.eval(t, x + h, v1, v2) - alpha.eval(t, x - h, v1, v2)) / (2.0 * h);
        let fd_v1 = (alpha.eval(t, x, v1 + h, v2) - alpha.eval(t, x, v1 - h, v2)) / (2.0 * h);
        let fd_v2 = (alpha.eval(t, x, v1, v2 + h) - alpha.eval(t, x, v1, v2 - h)) / (2.0 * h);
        assert!((g.dt - fd_t).abs() < 1e-8, "dt {} vs {fd_t}", g.dt);
        assert!((g.dx - fd_x).abs() < 1e-8);
        assert!((g.dv1 - fd_v1).abs() < 1e-8);
        assert!((g.dv2 - fd_v2).abs() < 1e-8);
    }

    #[test]
    fn maxwell_panel_satisfies_constraints() {
        let phis = SpaceTestFunction::maxwell_panel(1.0);
        assert_eq!(phis[1].eval(0.3, 1.0), 0.0);
        assert_eq!(phis[2].eval(0.3, 0.0), 0.0);
        assert_eq!(phis[3].eval(0.3, 1.0), 0.0);
        assert!(phis[1].eval(0.3, 0.0) != 0.0);
        assert!(phis[2].eval(0.3, 1.0) != 0.0);
    }

    #[test]
    fn space_test_function_derivatives() {
        let phi = SpaceTestFunction {
            t_final: 1.0,
            profile: SpaceProfile::ZeroAtLeft,
        };
        let h = 1e-6;
        let (t, x) = (0.2, 0.6);
        let fd_t = (phi.eval(t + h, x) - phi.eval(t - h, x)) / (2.0 * h);
        let fd_x = (phi.eval(t, x + h) - phi.eval(t, x - h)) / (2.0 * h);
        assert!((phi.dt(t, x) - fd_t).abs() < 1e-8);
        assert!((phi.dx(t, x) - fd_x).abs() < 1e-8);
    }
}
