//! Embedded Dormand-Prince 5(4) integrator with dense output.
//!
//! The step size is controlled by the embedded error estimate and additionally
//! capped by a caller-supplied state-dependent bound, which the particle
//! integrators use to resolve fast gyro-rotation inside the mirror layers.
//! Dense output is the standard fourth-order interpolant, which event
//! detection bisects for root localization inside an accepted step.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
// Error weights b - b_hat.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense-output weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step together with its interpolation polynomial.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep<const D: usize> {
    pub t0: f64,
    pub h: f64,
    r1: [f64; D],
    r2: [f64; D],
    r3: [f64; D],
    r4: [f64; D],
    r5: [f64; D],
}

impl<const D: usize> DenseStep<D> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Interpolated state at `t0 + theta h`, `theta` in [0, 1].
    pub fn eval(&self, theta: f64) -> [f64; D] {
        let th1 = 1.0 - theta;
        let mut y = [0.0; D];
        for i in 0..D {
            y[i] = self.r1[i]
                + theta
                    * (self.r2[i] + th1 * (self.r3[i] + theta * (self.r4[i] + th1 * self.r5[i])));
        }
        y
    }

    pub fn eval_at(&self, t: f64) -> [f64; D] {
        self.eval((t - self.t0) / self.h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeError {
    /// Controller drove the step below the representable minimum.
    StepUnderflow { t: f64 },
    /// Step budget exhausted before reaching the target time.
    TooManySteps { t: f64 },
}

impl std::fmt::Display for OdeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OdeError::StepUnderflow { t } => write!(f, "step size underflow at t = {t}"),
            OdeError::TooManySteps { t } => write!(f, "step budget exhausted at t = {t}"),
        }
    }
}

impl std::error::Error for OdeError {}

pub struct StepOutcome<const D: usize> {
    pub t: f64,
    pub y: [f64; D],
    pub dense: DenseStep<D>,
}

/// Driver state for one integration. Direction is the sign of `t_end - t`.
pub struct Dopri5<'a, const D: usize> {
    rhs: &'a dyn Fn(f64, &[f64; D]) -> [f64; D],
    /// Per-step error tolerance, applied both absolutely and relatively.
    pub tol: f64,
    /// State-dependent cap on |h|; return f64::INFINITY for "no cap".
    step_cap: &'a dyn Fn(f64, &[f64; D]) -> f64,
    pub max_steps: usize,
    t: f64,
    y: [f64; D],
    k1: [f64; D],
    h: f64,
    dir: f64,
    steps_taken: usize,
}

impl<'a, const D: usize> Dopri5<'a, D> {
    pub fn new(
        rhs: &'a dyn Fn(f64, &[f64; D]) -> [f64; D],
        t0: f64,
        y0: [f64; D],
        t_end_hint: f64,
        tol: f64,
        step_cap: &'a dyn Fn(f64, &[f64; D]) -> f64,
    ) -> Self {
        let dir = if t_end_hint >= t0 { 1.0 } else { -1.0 };
        let k1 = rhs(t0, &y0);
        // Conservative initial step from the first derivative magnitude.
        let scale = y0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let dmax = k1.iter().fold(1e-10f64, |m, v| m.max(v.abs()));
        let mut h = (0.01 * scale / dmax).min((t_end_hint - t0).abs().max(1e-12));
        h = h.min(step_cap(t0, &y0)).max(1e-14);
        Self {
            rhs,
            tol,
            step_cap,
            max_steps: 10_000_000,
            t: t0,
            y: y0,
            k1,
            h: h * dir,
            dir,
            steps_taken: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64; D] {
        &self.y
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Advance one accepted step, not exceeding `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<StepOutcome<D>, OdeError> {
        let rhs = self.rhs;
        loop {
            if self.steps_taken >= self.max_steps {
                return Err(OdeError::TooManySteps { t: self.t });
            }
            self.steps_taken += 1;

            let cap = (self.step_cap)(self.t, &self.y).max(1e-14);
            let remaining = (t_limit - self.t) * self.dir;
            let h = self.h.abs().min(cap).min(remaining.max(1e-15)) * self.dir;
            if h.abs() < 4.0 * f64::EPSILON * self.t.abs().max(1.0) {
                return Err(OdeError::StepUnderflow { t: self.t });
            }

            let t = self.t;
            let y = &self.y;
            let k1 = self.k1;
            let mut ys = [0.0; D];

            for i in 0..D {
                ys[i] = y[i] + h * A21 * k1[i];
            }
            let k2 = rhs(t + C2 * h, &ys);
            for i in 0..D {
                ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            let k3 = rhs(t + C3 * h, &ys);
            for i in 0..D {
                ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            let k4 = rhs(t + C4 * h, &ys);
            for i in 0..D {
                ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            let k5 = rhs(t + C5 * h, &ys);
            for i in 0..D {
                ys[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let k6 = rhs(t + h, &ys);
            let mut y1 = [0.0; D];
            for i in 0..D {
                y1[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            let k7 = rhs(t + h, &y1);

            let mut err: f64 = 0.0;
            for i in 0..D {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol * (1.0 + y[i].abs().max(y1[i].abs()));
                err = err.max((e / sc).abs());
            }

            // Controller update for the next attempt either way.
            let scale = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            let h_next = (h * scale).abs().max(1e-14) * self.dir;

            if err <= 1.0 {
                let mut r1 = [0.0; D];
                let mut r2 = [0.0; D];
                let mut r3 = [0.0; D];
                let mut r4 = [0.0; D];
                let mut r5 = [0.0; D];
                for i in 0..D {
                    let dy = y1[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    r1[i] = y[i];
                    r2[i] = dy;
                    r3[i] = bspl;
                    r4[i] = dy - h * k7[i] - bspl;
                    r5[i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                let dense = DenseStep {
                    t0: t,
                    h,
                    r1,
                    r2,
                    r3,
                    r4,
                    r5,
                };
                self.t = t + h;
                self.y = y1;
                self.k1 = k7; // FSAL
                self.h = h_next;
                return Ok(StepOutcome {
                    t: self.t,
                    y: y1,
                    dense,
                });
            }
            self.h = h_next;
        }
    }
}

/// Locate a root of `g` composed with the dense interpolant by bisection on
/// theta. Requires a sign change of `g` across the step.
pub fn bisect_event<const D: usize, G: Fn(f64, &[f64; D]) -> f64>(
    dense: &DenseStep<D>,
    g: G,
) -> Option<(f64, [f64; D])> {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let glo = g(dense.t0, &dense.eval(0.0));
    let ghi = g(dense.t1(), &dense.eval(1.0));
    if glo == 0.0 {
        return Some((dense.t0, dense.eval(0.0)));
    }
    if glo * ghi > 0.0 {
        return None;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let ym = dense.eval(mid);
        let gm = g(dense.t0 + mid * dense.h, &ym);
        if gm == 0.0 {
            return Some((dense.t0 + mid * dense.h, ym));
        }
        if glo * gm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let theta = 0.5 * (lo + hi);
    Some((dense.t0 + theta * dense.h, dense.eval(theta)))
}
