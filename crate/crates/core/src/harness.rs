//! Quantitative verification harness: the explicit a-priori constants, the
//! mirror-vs-specular N-ladder comparison, and the perturbed-reflection
//! scaling measurements.

use crate::confinement::ConfinementProfile;
use crate::pic::{run, ConfigError, Mode, SimError, SimulationConfig, SimulationOutput};
use crate::trajectory::{
    det3, reflected_state, reflection_map_jacobian, reflection_time_ode, FieldSampler, LayerGated,
    PhasePoint, Species, SyntheticFields, TrajectoryError,
};
use crate::weakform::{vlasov_weak_residual, xi_extra_term, TestFunction};
use serde::Serialize;

/// The explicit constants of the momentum/potential bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    /// Uniform field bound.
    pub c1: f64,
    /// Momentum support bound k0 + C1 T.
    pub cv: f64,
    /// Potential bound along trajectories.
    pub c2: f64,
    /// Rescaled support radius Psi^-1(C2); None when a finite barrier is too
    /// low to guarantee confinement (Psi(0) <= C2).
    pub y0: Option<f64>,
}

/// Assemble C1, Cv, C2, y0 from a run configuration, term by term.
pub fn bound_constants(config: &SimulationConfig) -> Result<BoundConstants, ConfigError> {
    config.validate()?;
    let t = config.t_final;
    let mut f0_l1 = config.ion.l1_norm();
    let mut f0_kin = config.ion.kinetic_l1_norm();
    if let Some(el) = &config.electron {
        f0_l1 += el.l1_norm();
        f0_kin += el.kinetic_l1_norm();
    }
    let sig = &config.boundary;
    let e20 = sig.sup_e2_0();
    let e2b = sig.sup_e2_b(t);
    let b0 = sig.sup_b_0();
    let bb = sig.sup_b_b(t);
    let c1 = f0_l1
        + config.lambda
        + e20
        + e2b
        + b0
        + bb
        + 0.25 * ((f0_l1 + config.lambda).powi(2) + e20 * e20 + b0 * b0 + 4.0 * t * e2b * bb)
        + 0.5 * f0_kin;
    let k0 = config.max_k0();
    let cv = k0 + c1 * t;

    if !config.mode.is_confined() {
        return Ok(BoundConstants {
            c1,
            cv,
            c2: f64::NAN,
            y0: None,
        });
    }
    let profile = config.profile.build()?;
    let eps0 = config.min_eps0();
    // psi_ext,N is monotone toward the walls, so its sup over the initial
    // support band sits at the margin (zero whenever 1/N < eps0).
    let psiext_sup = profile.psiext(config.n, eps0);
    let c2 = psiext_sup + 2.0 * k0 + 2.0 * c1 * t + 2.0 * c1;
    let y0 = profile.psi_inverse(c2).ok();
    Ok(BoundConstants { c1, cv, c2, y0 })
}

/// Least-squares fit of log(val) against log(n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_loglog(ns: &[f64], vals: &[f64]) -> FitResult {
    assert_eq!(ns.len(), vals.len());
    assert!(ns.len() >= 2);
    let xs: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = vals.iter().map(|v| v.abs().max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    FitResult {
        slope,
        intercept,
        r_squared,
    }
}

/// Names of the fixed smooth moment panel.
pub const MOMENT_NAMES: [&str; 6] = [
    "cos_pi_x",
    "x_1mx",
    "v1_sq",
    "v2",
    "cos_pi_x_vhat1",
    "gamma",
];

fn moment_value(output: &SimulationOutput, snap: usize, which: usize) -> f64 {
    let mut acc = 0.0;
    for ens in &output.particles[snap] {
        for p in &ens.parts {
            let gamma = (1.0 + p.v1 * p.v1 + p.v2 * p.v2).sqrt();
            let phi = match which {
                0 => (std::f64::consts::PI * p.x).cos(),
                1 => p.x * (1.0 - p.x),
                2 => p.v1 * p.v1,
                3 => p.v2,
                4 => (std::f64::consts::PI * p.x).cos() * p.v1 / gamma,
                _ => gamma,
            };
            acc += p.w * phi;
        }
    }
    acc
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderEntry {
    pub n: u32,
    pub field_sup_gap: f64,
    pub moment_gaps: [f64; 6],
    pub xi: f64,
    pub specular_residual: f64,
    pub max_dx_e2: f64,
    pub max_dx_b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub n_ladder: Vec<u32>,
    pub entries: Vec<LadderEntry>,
    pub field_gap_fit: FitResult,
    pub moment_gap_fits: Vec<FitResult>,
    pub xi_fit: FitResult,
    /// Largest consecutive gap ratio over all tracked gap series.
    pub worst_gap_ratio: f64,
    /// Growth of the uniform-derivative diagnostic from the smallest to the
    /// largest N (uniform-in-N boundedness monitor).
    pub derivative_growth: f64,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Confined-mode template; the specular reference reuses everything but
    /// the mode.
    pub base: SimulationConfig,
    pub n_ladder: Vec<u32>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_ladder.len() < 2 {
            return Err(ConfigError::new(
                "n_ladder",
                "need at least two ladder points",
            ));
        }
        if !self.n_ladder.windows(2).all(|w| w[0] < w[1]) {
            return Err(ConfigError::new("n_ladder", "must be strictly increasing"));
        }
        for &n in &self.n_ladder {
            let mut cfg = self.base.clone();
            cfg.n = n;
            cfg.validate()?;
        }
        Ok(())
    }
}

/// Run the ladder against the shared-discretization specular reference and
/// collect field, moment, coupling-term, and residual gaps.
pub fn convergence_study(plan: &ExperimentPlan) -> Result<ConvergenceReport, SimError> {
    plan.validate()?;
    let mut spec_cfg = plan.base.clone();
    spec_cfg.mode = Mode::Specular;
    let reference = run(&spec_cfg)?;
    let alpha_panel = TestFunction::xi_panel(reference.t_final);
    let alpha0 = alpha_panel[0];

    let mut entries = Vec::new();
    for &n in &plan.n_ladder {
        let mut cfg = plan.base.clone();
        cfg.n = n;
        let out = run(&cfg)?;
        assert_eq!(
            out.times.len(),
            reference.times.len(),
            "snapshot trains differ"
        );

        let mut field_gap = 0.0f64;
        for (a, b) in out.fields.iter().zip(&reference.fields) {
            for i in 0..a.e1.len() {
                field_gap = field_gap
                    .max((a.e1[i] - b.e1[i]).abs())
                    .max((a.e2[i] - b.e2[i]).abs())
                    .max((a.b[i] - b.b[i]).abs());
            }
        }
        let mut moment_gaps = [0.0f64; 6];
        for k in 0..out.times.len() {
            for (m, gap) in moment_gaps.iter_mut().enumerate() {
                *gap = gap.max((moment_value(&out, k, m) - moment_value(&reference, k, m)).abs());
            }
        }
        let profile = cfg.profile.build().map_err(SimError::Config)?;
        let xi = xi_extra_term(&out, &profile, n, &alpha0, Species::Ion)
            .expect("ladder runs record layer samples");
        let specular_residual = vlasov_weak_residual(&out, &alpha0, Mode::Specular, Species::Ion)
            .expect("panel is wall-even")
            .residual
            .abs();
        let (max_dx_e2, max_dx_b) = out.diagnostics.iter().fold((0.0f64, 0.0f64), |(a, b), d| {
            (a.max(d.max_dx_e2), b.max(d.max_dx_b))
        });
        entries.push(LadderEntry {
            n,
            field_sup_gap: field_gap,
            moment_gaps,
            xi,
            specular_residual,
            max_dx_e2,
            max_dx_b,
        });
    }

    let ns: Vec<f64> = entries.iter().map(|e| e.n as f64).collect();
    let field_gap_fit = fit_loglog(
        &ns,
        &entries.iter().map(|e| e.field_sup_gap).collect::<Vec<_>>(),
    );
    let moment_gap_fits: Vec<FitResult> = (0..6)
        .map(|m| {
            fit_loglog(
                &ns,
                &entries.iter().map(|e| e.moment_gaps[m]).collect::<Vec<_>>(),
            )
        })
        .collect();
    let xi_fit = fit_loglog(&ns, &entries.iter().map(|e| e.xi.abs()).collect::<Vec<_>>());

    // Identically-zero gap pairs (mirror invisible to the dynamics) count as
    // a decreasing step.
    let ratio = |num: f64, den: f64| {
        if num == 0.0 && den == 0.0 {
            0.0
        } else {
            num / den
        }
    };
    let mut worst_ratio = 0.0f64;
    for w in entries.windows(2) {
        worst_ratio = worst_ratio.max(ratio(w[1].field_sup_gap, w[0].field_sup_gap));
        for m in 0..6 {
            worst_ratio = worst_ratio.max(ratio(w[1].moment_gaps[m], w[0].moment_gaps[m]));
        }
    }
    let first = entries.first().expect("validated ladder");
    let last = entries.last().expect("validated ladder");
    let derivative_growth = (last.max_dx_e2 / first.max_dx_e2.max(1e-300))
        .max(last.max_dx_b / first.max_dx_b.max(1e-300));
    Ok(ConvergenceReport {
        n_ladder: plan.n_ladder.clone(),
        entries,
        field_gap_fit,
        moment_gap_fits,
        xi_fit,
        worst_gap_ratio: worst_ratio,
        derivative_growth,
    })
}

/// One row of the perturbed-reflection scaling table: worst case over the
/// sample states at one N.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalingRow {
    pub n: u32,
    pub dt_abs: f64,
    pub dx_gap: f64,
    pub dv1_gap: f64,
    pub dv2_gap: f64,
    pub det_gap: f64,
    pub offdiag: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub dt_fit: FitResult,
    pub dx_fit: FitResult,
    pub dv1_fit: FitResult,
    pub dv2_fit: FitResult,
    pub det_fit: FitResult,
    pub offdiag_fit: FitResult,
}

/// Layer entry states fixed across N in rescaled coordinates (y, v1, v2),
/// placed so the Jacobian stencil stays inside the layer.
pub fn scaling_sample_states() -> Vec<(f64, f64, f64)> {
    let mut states = Vec::new();
    let ys = [0.18, 0.35, 0.55, 0.8];
    let speeds = [0.25, 0.7, 1.2];
    let angles = [2.2, 2.9, 3.9];
    let mut k = 0usize;
    for &y in &ys {
        for &r in &speeds {
            let phi: f64 = angles[k % 3];
            k += 1;
            states.push((y, r * phi.cos(), r * phi.sin()));
        }
    }
    states
}

/// Measure the reflection-map scalings against N with smooth synthetic
/// internal fields.
pub fn reflection_scaling_study(
    n_list: &[u32],
    states: &[(f64, f64, f64)],
    species: Species,
    tol: f64,
) -> Result<ScalingTable, TrajectoryError> {
    let profile = ConfinementProfile::singular(2.0).unwrap();
    let fields = SyntheticFields::unit();
    let t_entry = 0.37;
    let mut rows = Vec::new();
    for &n in n_list {
        let mut row = ScalingRow {
            n,
            dt_abs: 0.0,
            dx_gap: 0.0,
            dv1_gap: 0.0,
            dv2_gap: 0.0,
            det_gap: 0.0,
            offdiag: 0.0,
        };
        for &(y, v1, v2) in states {
            let p = PhasePoint::new(y / n as f64, v1, v2);
            let gated = LayerGated { inner: &fields, n };
            let refl = reflection_time_ode(&p, t_entry, &gated, &profile, n, species, tol)?;
            let (t_star, tilde) = reflected_state(&p, t_entry, &fields, &profile, n, species, tol)?;
            debug_assert!((t_star - refl.t_star).abs() < 1e-12);
            row.dt_abs = row.dt_abs.max((refl.t_star - t_entry).abs());
            row.dx_gap = row.dx_gap.max((tilde.x - p.x).abs());
            row.dv1_gap = row.dv1_gap.max((tilde.v1 - p.v1).abs());
            row.dv2_gap = row.dv2_gap.max((tilde.v2 - p.v2).abs());
            let jac = reflection_map_jacobian(&p, t_entry, &fields, &profile, n, species, tol)?;
            row.det_gap = row.det_gap.max((det3(&jac) - 1.0).abs());
            // Off-diagonal smallness holds in the rescaled variables
            // (y, v) = (N x, v); the similarity leaves the determinant alone.
            let scale = [n as f64, 1.0, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        row.offdiag = row.offdiag.max((jac[i][j] * scale[i] / scale[j]).abs());
                    }
                }
            }
        }
        rows.push(row);
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let table = ScalingTable {
        dt_fit: fit_loglog(&ns, &rows.iter().map(|r| r.dt_abs).collect::<Vec<_>>()),
        dx_fit: fit_loglog(&ns, &rows.iter().map(|r| r.dx_gap).collect::<Vec<_>>()),
        dv1_fit: fit_loglog(&ns, &rows.iter().map(|r| r.dv1_gap).collect::<Vec<_>>()),
        dv2_fit: fit_loglog(&ns, &rows.iter().map(|r| r.dv2_gap).collect::<Vec<_>>()),
        det_fit: fit_loglog(&ns, &rows.iter().map(|r| r.det_gap).collect::<Vec<_>>()),
        offdiag_fit: fit_loglog(&ns, &rows.iter().map(|r| r.offdiag).collect::<Vec<_>>()),
        rows,
    };
    Ok(table)
}

/// Per-run check of the diagnostics rows against the computed constants.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundCheck {
    pub momentum_ok: bool,
    pub psiext_ok: bool,
    pub field_ok: bool,
}

pub fn check_bounds(output: &SimulationOutput, consts: &BoundConstants) -> BoundCheck {
    let k0 = output.config.max_k0();
    let momentum_ok = output
        .diagnostics
        .iter()
        .all(|d| d.max_abs_v <= k0 + consts.c1 * d.t + 1e-9);
    let psiext_ok = output
        .diagnostics
        .iter()
        .all(|d| d.max_psiext_on_support <= consts.c2 + 1e-9 || consts.c2.is_nan());
    let field_ok = output.fields.iter().all(|f| {
        f.e1.iter()
            .chain(&f.e2)
            .chain(&f.b)
            .all(|v| v.abs() <= consts.c1 + 1e-9)
    });
    BoundCheck {
        momentum_ok,
        psiext_ok,
        field_ok,
    }
}

/// Trajectory-level sanity for synthetic-field runs: the internal fields stay
/// within the advertised C^1 bound.
pub fn synthetic_fields_within_bound(fields: &SyntheticFields) -> bool {
    let mut ok = true;
    for ti in 0..20 {
        for xi in 0..20 {
            let t = ti as f64 * 0.1;
            let x = xi as f64 / 19.0;
            let (e1, e2, b) = fields.em(t, x);
            ok &= e1.abs() <= fields.c1_bound()
                && e2.abs() <= fields.c1_bound()
                && b.abs() <= fields.c1_bound();
        }
    }
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maxwell::BoundarySignal;
    use crate::pic::{OutputConfig, ProfileConfig};
    use crate::sampling::InitialDataSpec;

    fn confined_cfg() -> SimulationConfig {
        SimulationConfig {
            mode: Mode::ConfinedSingular,
            n: 16,
            profile: ProfileConfig::default(),
            nx: 64,
            t_final: 1.0,
            particles: 100,
            seed: 1,
            lambda: 0.0,
            ion: InitialDataSpec::normalized(0.1, 0.5),
            electron: None,
            boundary: BoundarySignal::Zero,
            output: OutputConfig::default(),
            deterministic: true,
        }
    }

    #[test]
    fn constants_vanish_for_zero_data() {
        let mut cfg = confined_cfg();
        cfg.ion.amplitude = Some(0.0);
        let c = bound_constants(&cfg).unwrap();
        assert_eq!(c.c1, 0.0);
        assert_eq!(c.cv, cfg.ion.k0);
    }

    #[test]
    fn cv_is_k0_plus_c1_t() {
        let cfg = confined_cfg();
        let c = bound_constants(&cfg).unwrap();
        assert!(c.c1 > 1.0);
        assert_eq!(c.cv, cfg.ion.k0 + c.c1 * cfg.t_final);
    }

    #[test]
    fn y0_closed_form() {
        // alpha = 2 singular: Psi^-1(u) = 1/(1+u); C2 = 3 gives y0 = 1/4.
        let p = ConfinementProfile::singular(2.0).unwrap();
        assert!((p.psi_inverse(3.0).unwrap() - 0.25).abs() < 1e-14);
        let cfg = confined_cfg();
        let c = bound_constants(&cfg).unwrap();
        let y0 = c.y0.unwrap();
        assert!((p.psi(y0).unwrap() - c.c2).abs() < 1e-9 * c.c2);
    }

    #[test]
    fn psiext_sup_vanishes_with_separated_support() {
        // 1/N < eps0 means the mirror layer misses the initial support band,
        // so C2 = 2 k0 + 2 C1 T + 2 C1 exactly.
        let cfg = confined_cfg();
        let c = bound_constants(&cfg).unwrap();
        let expect = 2.0 * cfg.ion.k0 + 2.0 * c.c1 * cfg.t_final + 2.0 * c.c1;
        assert_eq!(c.c2, expect);
    }

    #[test]
    fn finite_low_barrier_flags_undefined_y0() {
        let mut cfg = confined_cfg();
        cfg.mode = Mode::ConfinedFinite;
        cfg.profile = ProfileConfig {
            alpha: 2.0,
            variant: crate::confinement::ProfileVariant::Finite,
            finite_cap: Some(0.1),
        };
        let c = bound_constants(&cfg).unwrap();
        assert!(
            c.y0.is_none(),
            "Psi(0) = 0.05 cannot dominate C2 = {}",
            c.c2
        );
    }

    #[test]
    fn loglog_fit_recovers_power_law() {
        let ns = [16.0, 32.0, 64.0, 128.0];
        let vals: Vec<f64> = ns.iter().map(|n: &f64| 3.0 * n.powf(-2.0)).collect();
        let fit = fit_loglog(&ns, &vals);
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-12);
        assert!(fit.r_squared > 0.999999);
    }

    #[test]
    fn synthetic_fields_bound_documented() {
        assert!(synthetic_fields_within_bound(&SyntheticFields::unit()));
    }

    #[test]
    fn plan_validation() {
        let plan = ExperimentPlan {
            base: confined_cfg(),
            n_ladder: vec![16, 16],
        };
        assert!(plan.validate().is_err());
        let plan = ExperimentPlan {
            base: confined_cfg(),
            n_ladder: vec![16],
        };
        assert!(plan.validate().is_err());
        let plan = ExperimentPlan {
            base: confined_cfg(),
            n_ladder: vec![16, 32],
        };
        assert!(plan.validate().is_ok());
    }
}
