//! 1.5D Maxwell solver on a uniform mesh.
//!
//! E1 comes from Gauss's law at every step (cumulative trapezoid of the
//! charge density plus the boundary constant), while E2 and B propagate as
//! the characteristic variables k+- = E2 +- B at unit speed. With dt locked
//! to dx the characteristic shift is exact on the mesh and the only
//! discretization error left is the source quadrature along characteristics.

use crate::quad::trapezoid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum MaxwellError {
    /// dt must equal dx for the exact characteristic shift.
    DtMismatch {
        dt: f64,
        dx: f64,
    },
    /// Boundary data incompatible with the initial profiles.
    Incompatible {
        which: &'static str,
        gap: f64,
    },
    GridMismatch,
}

impl std::fmt::Display for MaxwellError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaxwellError::DtMismatch { dt, dx } => {
                write!(
                    f,
                    "characteristic step requires dt = dx, got dt={dt}, dx={dx}"
                )
            }
            MaxwellError::Incompatible { which, gap } => {
                write!(f, "incompatible boundary data ({which}), mismatch {gap}")
            }
            MaxwellError::GridMismatch => write!(f, "grid sizes disagree"),
        }
    }
}

impl std::error::Error for MaxwellError {}

/// Closed-form initial/boundary field data.
///
/// `Zero` is the default; `OutgoingPulse` places a smooth bump in E2 = B that
/// leaves the domain rightward, with boundary data matching the exact
/// outgoing wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundarySignal {
    Zero,
    Pulse {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// Constant initial profiles and boundary traces; the one family whose
    /// members can violate the compatibility conditions.
    Uniform {
        e2_0: f64,
        b_0: f64,
        e2_b: f64,
        b_b: f64,
    },
}

impl BoundarySignal {
    fn bump(&self, u: f64) -> f64 {
        match *self {
            BoundarySignal::Zero | BoundarySignal::Uniform { .. } => 0.0,
            BoundarySignal::Pulse {
                amplitude,
                center,
                width,
            } => {
                let s = (u - center) / width;
                if s.abs() < 1.0 {
                    amplitude * (1.0 - s * s).powi(3)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn e2_0(&self, x: f64) -> f64 {
        match *self {
            BoundarySignal::Uniform { e2_0, .. } => e2_0,
            _ => self.bump(x),
        }
    }

    pub fn b_0(&self, x: f64) -> f64 {
        match *self {
            BoundarySignal::Uniform { b_0, .. } => b_0,
            _ => self.bump(x),
        }
    }

    pub fn e2_b(&self, t: f64) -> f64 {
        match *self {
            BoundarySignal::Uniform { e2_b, .. } => e2_b,
            _ => self.bump(-t),
        }
    }

    pub fn b_b(&self, t: f64) -> f64 {
        match *self {
            BoundarySignal::Uniform { b_b, .. } => b_b,
            _ => self.bump(1.0 - t),
        }
    }

    /// Exact vacuum fields of the zero/pulse signals: E2 = B = g(x - t).
    pub fn vacuum_solution(&self, t: f64, x: f64) -> f64 {
        self.bump(x - t)
    }

    pub fn sup_e2_0(&self) -> f64 {
        match *self {
            BoundarySignal::Uniform { e2_0, .. } => e2_0.abs(),
            _ => self.amp(),
        }
    }

    pub fn sup_b_0(&self) -> f64 {
        match *self {
            BoundarySignal::Uniform { b_0, .. } => b_0.abs(),
            _ => self.amp(),
        }
    }

    pub fn sup_e2_b(&self, _t_final: f64) -> f64 {
        match *self {
            BoundarySignal::Uniform { e2_b, .. } => e2_b.abs(),
            _ => self.amp(),
        }
    }

    pub fn sup_b_b(&self, _t_final: f64) -> f64 {
        match *self {
            BoundarySignal::Uniform { b_b, .. } => b_b.abs(),
            _ => self.amp(),
        }
    }

    fn amp(&self) -> f64 {
        match *self {
            BoundarySignal::Zero | BoundarySignal::Uniform { .. } => 0.0,
            BoundarySignal::Pulse { amplitude, .. } => amplitude.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryData {
    /// E1 at x = 0 for all times.
    pub lambda: f64,
    pub signal: BoundarySignal,
}

impl BoundaryData {
    pub fn zero() -> Self {
        Self {
            lambda: 0.0,
            signal: BoundarySignal::Zero,
        }
    }
}

/// Deposited charge and current densities at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceGrid {
    pub rho: Vec<f64>,
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
}

impl SourceGrid {
    pub fn zeros(nx: usize) -> Self {
        Self {
            rho: vec![0.0; nx],
            j1: vec![0.0; nx],
            j2: vec![0.0; nx],
        }
    }

    pub fn nx(&self) -> usize {
        self.rho.len()
    }

    /// Trapezoid integral of rho: the total deposited signed charge.
    pub fn total_charge(&self, dx: f64) -> f64 {
        let ts: Vec<f64> = (0..self.rho.len()).map(|i| i as f64 * dx).collect();
        trapezoid(&ts, &self.rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub nx: usize,
    pub dx: f64,
    pub t: f64,
    pub e1: Vec<f64>,
    pub kplus: Vec<f64>,
    pub kminus: Vec<f64>,
}

impl FieldGrid {
    pub fn e2(&self, i: usize) -> f64 {
        0.5 * (self.kplus[i] + self.kminus[i])
    }

    pub fn b(&self, i: usize) -> f64 {
        0.5 * (self.kplus[i] - self.kminus[i])
    }

    pub fn node_x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    /// Linear interpolation of (E1, E2, B) at x in [0, 1]; nodal queries
    /// return nodal values.
    pub fn fields_at(&self, x: f64) -> (f64, f64, f64) {
        let s = (x / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let near = s.round();
        let j = near as usize;
        if j < self.nx && x == self.node_x(j) {
            return (self.e1[j], self.e2(j), self.b(j));
        }
        let i = (s as usize).min(self.nx - 2);
        let w = s - i as f64;
        let lerp = |a: &[f64]| a[i] + w * (a[i + 1] - a[i]);
        let e1 = lerp(&self.e1);
        let kp = lerp(&self.kplus);
        let km = lerp(&self.kminus);
        (e1, 0.5 * (kp + km), 0.5 * (kp - km))
    }

    /// Trapezoid quadrature of (|E1|^2 + |E2|^2 + |B|^2) / 2.
    pub fn field_energy(&self) -> f64 {
        let vals: Vec<f64> = (0..self.nx)
            .map(|i| 0.5 * (self.e1[i].powi(2) + self.e2(i).powi(2) + self.b(i).powi(2)))
            .collect();
        let ts: Vec<f64> = (0..self.nx).map(|i| self.node_x(i)).collect();
        trapezoid(&ts, &vals)
    }

    /// Max of |dE2/dx| and |dB/dx| by central differences (one-sided at the
    /// ends); the uniform-derivative diagnostic.
    pub fn max_abs_derivatives(&self) -> (f64, f64) {
        let mut de2: f64 = 0.0;
        let mut db: f64 = 0.0;
        for i in 0..self.nx {
            let (lo, hi, span) = if i == 0 {
                (0, 1, self.dx)
            } else if i == self.nx - 1 {
                (self.nx - 2, self.nx - 1, self.dx)
            } else {
                (i - 1, i + 1, 2.0 * self.dx)
            };
            de2 = de2.max(((self.e2(hi) - self.e2(lo)) / span).abs());
            db = db.max(((self.b(hi) - self.b(lo)) / span).abs());
        }
        (de2, db)
    }
}

/// E1 by Gauss's law: cumulative trapezoid of rho plus lambda.
pub fn solve_e1(sources: &SourceGrid, dx: f64, lambda: f64) -> Vec<f64> {
    let nx = sources.nx();
    let mut e1 = vec![0.0; nx];
    e1[0] = lambda;
    for i in 1..nx {
        e1[i] = e1[i - 1] + 0.5 * dx * (sources.rho[i - 1] + sources.rho[i]);
    }
    e1
}

/// Assemble the t = 0 grid from boundary data and the initial deposit.
pub fn init_fields(
    bdata: &BoundaryData,
    rho0: &SourceGrid,
    nx: usize,
) -> Result<FieldGrid, MaxwellError> {
    if rho0.nx() != nx {
        return Err(MaxwellError::GridMismatch);
    }
    let sig = &bdata.signal;
    let gap_e = (sig.e2_b(0.0) - sig.e2_0(0.0)).abs();
    if gap_e > 1e-12 {
        return Err(MaxwellError::Incompatible {
            which: "E2_b(0) vs E2_0(0)",
            gap: gap_e,
        });
    }
    let gap_b = (sig.b_b(0.0) - sig.b_0(1.0)).abs();
    if gap_b > 1e-12 {
        return Err(MaxwellError::Incompatible {
            which: "B_b(0) vs B_0(1)",
            gap: gap_b,
        });
    }
    let dx = 1.0 / (nx - 1) as f64;
    let e1 = solve_e1(rho0, dx, bdata.lambda);
    let mut kplus = vec![0.0; nx];
    let mut kminus = vec![0.0; nx];
    for i in 0..nx {
        let x = i as f64 * dx;
        let e2 = sig.e2_0(x);
        let b = sig.b_0(x);
        kplus[i] = e2 + b;
        kminus[i] = e2 - b;
    }
    Ok(FieldGrid {
        nx,
        dx,
        t: 0.0,
        e1,
        kplus,
        kminus,
    })
}

/// Advance k+- one exact characteristic step. The source integral along each
/// characteristic uses the trapezoid of its two endpoints: j2 at the foot at
/// the old time and at the node at the new time. Inflow values are set from
/// the boundary data after the outflow shift.
pub fn step_kpm(
    grid: &mut FieldGrid,
    src_start: &SourceGrid,
    src_end: &SourceGrid,
    bdata: &BoundaryData,
    dt: f64,
) -> Result<(), MaxwellError> {
    if (dt - grid.dx).abs() > 1e-12 * grid.dx {
        return Err(MaxwellError::DtMismatch { dt, dx: grid.dx });
    }
    if src_start.nx() != grid.nx || src_end.nx() != grid.nx {
        return Err(MaxwellError::GridMismatch);
    }
    let nx = grid.nx;
    let t_new = grid.t + dt;

    let mut kplus = vec![0.0; nx];
    let mut kminus = vec![0.0; nx];
    for i in 1..nx {
        kplus[i] = grid.kplus[i - 1] - 0.5 * dt * (src_start.j2[i - 1] + src_end.j2[i]);
    }
    for i in 0..nx - 1 {
        kminus[i] = grid.kminus[i + 1] - 0.5 * dt * (src_start.j2[i + 1] + src_end.j2[i]);
    }
    kplus[0] = 2.0 * bdata.signal.e2_b(t_new) - kminus[0];
    kminus[nx - 1] = kplus[nx - 1] - 2.0 * bdata.signal.b_b(t_new);

    grid.kplus = kplus;
    grid.kminus = kminus;
    grid.t = t_new;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse() -> BoundaryData {
        BoundaryData {
            lambda: 0.0,
            signal: BoundarySignal::Pulse {
                amplitude: 0.3,
                center: 0.4,
                width: 0.15,
            },
        }
    }

    #[test]
    fn init_zero_everything() {
        let nx = 33;
        let g = init_fields(&BoundaryData::zero(), &SourceGrid::zeros(nx), nx).unwrap();
        assert!(g.e1.iter().all(|&v| v == 0.0));
        assert!(g.kplus.iter().all(|&v| v == 0.0));
        assert_eq!(g.field_energy(), 0.0);
    }

    #[test]
    fn e1_of_constant_rho_is_linear() {
        let nx = 17;
        let mut src = SourceGrid::zeros(nx);
        src.rho.iter_mut().for_each(|r| *r = 1.0);
        let g = init_fields(&BoundaryData::zero(), &src, nx).unwrap();
        for i in 0..nx {
            let x = g.node_x(i);
            assert!((g.e1[i] - x).abs() < 1e-14, "node {i}");
        }
    }

    #[test]
    fn e1_is_lambda_with_no_charge() {
        let nx = 9;
        let b = BoundaryData {
            lambda: 0.5,
            signal: BoundarySignal::Zero,
        };
        let g = init_fields(&b, &SourceGrid::zeros(nx), nx).unwrap();
        assert!(g.e1.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn incompatible_data_rejected() {
        let bad = BoundaryData {
            lambda: 0.0,
            signal: BoundarySignal::Uniform {
                e2_0: 0.1,
                b_0: 0.0,
                e2_b: 0.2,
                b_b: 0.0,
            },
        };
        let e = init_fields(&bad, &SourceGrid::zeros(9), 9);
        assert!(matches!(e, Err(MaxwellError::Incompatible { .. })));
        let ok = BoundaryData {
            lambda: 0.0,
            signal: BoundarySignal::Uniform {
                e2_0: 0.1,
                b_0: 0.3,
                e2_b: 0.1,
                b_b: 0.3,
            },
        };
        assert!(init_fields(&ok, &SourceGrid::zeros(9), 9).is_ok());
    }

    #[test]
    fn dt_must_equal_dx() {
        let nx = 9;
        let mut g = init_fields(&BoundaryData::zero(), &SourceGrid::zeros(nx), nx).unwrap();
        let z = SourceGrid::zeros(nx);
        let e = step_kpm(&mut g, &z, &z, &BoundaryData::zero(), 0.9 / (nx - 1) as f64);
        assert!(matches!(e, Err(MaxwellError::DtMismatch { .. })));
    }

    #[test]
    fn zero_run_stays_zero() {
        let nx = 33;
        let mut g = init_fields(&BoundaryData::zero(), &SourceGrid::zeros(nx), nx).unwrap();
        let z = SourceGrid::zeros(nx);
        for _ in 0..100 {
            {
                let dx = g.dx;
                step_kpm(&mut g, &z, &z, &BoundaryData::zero(), dx).unwrap();
            }
        }
        assert!(g.kplus.iter().chain(&g.kminus).all(|&v| v == 0.0));
    }

    #[test]
    fn pulse_transport_is_exact() {
        // k+ = 2 g shifts rigidly; E2(t, x) = B(t, x) = g(x - t) to machine
        // precision, for all t including after the pulse leaves.
        let nx = 101;
        let b = pulse();
        let mut g = init_fields(&b, &SourceGrid::zeros(nx), nx).unwrap();
        let z = SourceGrid::zeros(nx);
        for _ in 0..1000 {
            {
                let dx = g.dx;
                step_kpm(&mut g, &z, &z, &b, dx).unwrap();
            }
            for i in 0..nx {
                let exact = b.signal.vacuum_solution(g.t, g.node_x(i));
                assert!(
                    (g.e2(i) - exact).abs() < 1e-13,
                    "E2 off at t={}, i={i}: {} vs {exact}",
                    g.t,
                    g.e2(i)
                );
                assert!((g.b(i) - exact).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn boundary_identities_exact_every_step() {
        let nx = 51;
        let b = pulse();
        let mut g = init_fields(&b, &SourceGrid::zeros(nx), nx).unwrap();
        let mut src = SourceGrid::zeros(nx);
        src.j2
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64 * 0.1).sin());
        for _ in 0..200 {
            {
                let dx = g.dx;
                step_kpm(&mut g, &src, &src, &b, dx).unwrap();
            }
            // Enforced by construction; reconstruction from k+- costs at most
            // a couple of ulps when the counter-propagating wave is nonzero.
            let e2b = b.signal.e2_b(g.t);
            let bb = b.signal.b_b(g.t);
            assert!((g.e2(0) - e2b).abs() <= 4.0 * f64::EPSILON * e2b.abs().max(1.0));
            assert!((g.b(nx - 1) - bb).abs() <= 4.0 * f64::EPSILON * bb.abs().max(1.0));
        }
    }

    #[test]
    fn constant_current_integrates_exactly() {
        let nx = 51;
        let c = 0.7;
        let mut g = init_fields(&BoundaryData::zero(), &SourceGrid::zeros(nx), nx).unwrap();
        let mut src = SourceGrid::zeros(nx);
        src.j2.iter_mut().for_each(|v| *v = c);
        let m = 20;
        for _ in 0..m {
            {
                let dx = g.dx;
                step_kpm(&mut g, &src, &src, &BoundaryData::zero(), dx).unwrap();
            }
        }
        let t = g.t;
        for i in (m + 1)..nx {
            assert!(
                (g.kplus[i] + c * t).abs() < 1e-13,
                "k+ at {i}: {}",
                g.kplus[i]
            );
        }
        for i in 0..(nx - m - 1) {
            assert!((g.kminus[i] + c * t).abs() < 1e-13, "k- at {i}");
        }
    }

    #[test]
    fn gauss_consistency_second_order() {
        // Central difference of E1 matches a smooth rho to O(dx^2).
        let rho_fn = |x: f64| (2.0 * std::f64::consts::PI * x).sin() + 1.3;
        let mut errs = Vec::new();
        for nx in [65usize, 129] {
            let dx = 1.0 / (nx - 1) as f64;
            let mut src = SourceGrid::zeros(nx);
            for i in 0..nx {
                src.rho[i] = rho_fn(i as f64 * dx);
            }
            let e1 = solve_e1(&src, dx, 0.0);
            let mut worst: f64 = 0.0;
            for i in 1..nx - 1 {
                let fd = (e1[i + 1] - e1[i - 1]) / (2.0 * dx);
                worst = worst.max((fd - src.rho[i]).abs());
            }
            errs.push(worst);
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 1.8, "convergence rate {rate}, errors {errs:?}");
    }

    #[test]
    fn field_energy_closed_forms() {
        let nx = 11;
        let mut g = init_fields(&BoundaryData::zero(), &SourceGrid::zeros(nx), nx).unwrap();
        g.e1.iter_mut().for_each(|v| *v = 1.0);
        assert!((g.field_energy() - 0.5).abs() < 1e-14);
        g.e1.iter_mut().for_each(|v| *v = 0.0);
        // E2 = 1 and B = 1 means k+ = 2, k- = 0.
        g.kplus.iter_mut().for_each(|v| *v = 2.0);
        assert!((g.field_energy() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_exact_on_nodes_and_linears() {
        let nx = 11;
        let mut g = init_fields(&BoundaryData::zero(), &SourceGrid::zeros(nx), nx).unwrap();
        for i in 0..nx {
            g.e1[i] = g.node_x(i);
        }
        let (e1, _, _) = g.fields_at(g.node_x(3));
        assert_eq!(e1, g.e1[3]);
        let (e1, _, _) = g.fields_at(0.35);
        assert!((e1 - 0.35).abs() < 1e-15);
        g.kplus.iter_mut().for_each(|v| *v = 4.0);
        let (_, e2, b) = g.fields_at(0.777);
        assert_eq!(e2, 2.0);
        assert_eq!(b, 2.0);
    }
}
