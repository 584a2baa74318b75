//! Triangular systems, the ground-truth simulator, the two benchmark systems
//! and the super-twisting observer used as a baseline.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::signals::{SampledSignal, SignalError, TimeGrid};

/// States leaving this magnitude abort a simulation.
const BLOW_UP: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("state left the finite range at t = {t} (state x{index})")]
    NonFiniteState { t: f64, index: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("super-twisting bound f+ must be positive, got {0}")]
    InvalidBound(f64),
    #[error("input is sampled on a different grid")]
    InputGrid,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// `f_k(x_1..x_k, u)`. Receives exactly the first `k` states.
pub type Nonlinearity = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// `d(t, x)` over the full state.
pub type DisturbanceLaw = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// `x_k' = x_{k+1} + f_k(x_1..x_k, u)` for `k < n`, `x_n' = f_n(x, u) + d`, `y = x_1`.
#[derive(Clone)]
pub struct TriangularSystem {
    name: String,
    nonlinearities: Vec<Nonlinearity>,
    disturbance: DisturbanceLaw,
    x0: Vec<f64>,
}

impl fmt::Debug for TriangularSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TriangularSystem")
            .field("name", &self.name)
            .field("n", &self.dim())
            .field("x0", &self.x0)
            .finish()
    }
}

impl TriangularSystem {
    /// `nonlinearities[k-1]` is `f_k`; the slice passed to it is truncated to
    /// `k` states, which makes the triangular structure structural.
    pub fn new(
        name: impl Into<String>,
        nonlinearities: Vec<Nonlinearity>,
        disturbance: DisturbanceLaw,
        x0: Vec<f64>,
    ) -> Result<Self, SystemError> {
        if x0.len() != nonlinearities.len() || x0.is_empty() {
            return Err(SystemError::DimensionMismatch {
                expected: nonlinearities.len(),
                got: x0.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            nonlinearities,
            disturbance,
            x0,
        })
    }

    /// Pure integrator chain `x_1^(n) = d(t)`.
    pub fn chain(n: usize, disturbance: DisturbanceLaw) -> Self {
        let zero: Nonlinearity = Arc::new(|_, _| 0.0);
        Self {
            name: format!("chain{n}"),
            nonlinearities: vec![zero; n],
            disturbance,
            x0: vec![0.0; n],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.nonlinearities.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self, SystemError> {
        if x0.len() != self.dim() {
            return Err(SystemError::DimensionMismatch {
                expected: self.dim(),
                got: x0.len(),
            });
        }
        self.x0 = x0;
        Ok(self)
    }

    /// `f_k` (1-based) evaluated on the leading `k` entries of `x`.
    pub fn nonlinearity(&self, k: usize, x: &[f64], u: f64) -> f64 {
        (self.nonlinearities[k - 1])(&x[..k], u)
    }

    pub fn disturbance(&self, t: f64, x: &[f64]) -> f64 {
        (self.disturbance)(t, x)
    }

    fn rhs(&self, t: f64, x: &[f64], u: f64, out: &mut [f64]) {
        let n = self.dim();
        for k in 1..n {
            out[k - 1] = x[k] + self.nonlinearity(k, x, u);
        }
        out[n - 1] = self.nonlinearity(n, x, u) + self.disturbance(t, x);
    }
}

/// Simulated truth: every state and the realized disturbance.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<SampledSignal>,
    pub disturbance: SampledSignal,
}

impl Trajectory {
    /// Measured output `y = x_1`.
    pub fn output(&self) -> &SampledSignal {
        &self.states[0]
    }
}

/// Classic fixed-step RK4 on `grid`. The input is sampled on the same grid and
/// taken as its two-sample average at the half step.
pub fn simulate(
    sys: &TriangularSystem,
    u: &SampledSignal,
    grid: &TimeGrid,
) -> Result<Trajectory, SystemError> {
    if u.grid() != grid {
        return Err(SystemError::InputGrid);
    }
    let n = sys.dim();
    let dt = grid.dt();
    let uv = u.values();
    let mut x = sys.x0().to_vec();
    let mut states: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); n];
    let mut dist = Vec::with_capacity(grid.len());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];

    for i in 0..grid.len() {
        let t = grid.time(i);
        if let Some(index) = x.iter().position(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(SystemError::NonFiniteState {
                t,
                index: index + 1,
            });
        }
        for (k, s) in states.iter_mut().enumerate() {
            s.push(x[k]);
        }
        dist.push(sys.disturbance(t, &x));
        if i + 1 == grid.len() {
            break;
        }
        let u_mid = 0.5 * (uv[i] + uv[i + 1]);
        sys.rhs(t, &x, uv[i], &mut k1);
        axpy(&mut tmp, &x, 0.5 * dt, &k1);
        sys.rhs(t + 0.5 * dt, &tmp, u_mid, &mut k2);
        axpy(&mut tmp, &x, 0.5 * dt, &k2);
        sys.rhs(t + 0.5 * dt, &tmp, u_mid, &mut k3);
        axpy(&mut tmp, &x, dt, &k3);
        sys.rhs(t + dt, &tmp, uv[i + 1], &mut k4);
        for k in 0..n {
            x[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
    }

    let states = states
        .into_iter()
        .map(|v| SampledSignal::new(*grid, v))
        .collect::<Result<Vec<_>, _>>()?;
    let disturbance = SampledSignal::new(*grid, dist)?;
    Ok(Trajectory {
        states,
        disturbance,
    })
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, k: &[f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}

/// Default initial state of [`academic3`].
pub const ACADEMIC3_X0: [f64; 3] = [0.5, 2.0, 2.0];

/// Third-order academic example:
///
/// ```text
/// x1' = x2 - x1^2
/// x2' = x3 - x1 x2
/// x3' = -x3^2 / (1 + x1^2) + d,   d = 0.1 cos(2 pi t / 5 - pi / 4) (1 + 0.1 t) x1 x2 x3
/// ```
pub fn academic3() -> TriangularSystem {
    let f1: Nonlinearity = Arc::new(|x, _| -x[0] * x[0]);
    let f2: Nonlinearity = Arc::new(|x, _| -x[0] * x[1]);
    let f3: Nonlinearity = Arc::new(|x, _| -x[2] * x[2] / (1.0 + x[0] * x[0]));
    let d: DisturbanceLaw = Arc::new(|t, x| {
        0.1 * (2.0 * PI / 5.0 * t - PI / 4.0).cos() * (1.0 + 0.1 * t) * x[0] * x[1] * x[2]
    });
    TriangularSystem::new("academic3", vec![f1, f2, f3], d, ACADEMIC3_X0.to_vec())
        .expect("academic3 is well formed")
}

/// Pendulum with viscous and Coulomb friction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub gravity: f64,
    pub length: f64,
    pub viscous: f64,
    pub coulomb: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.1,
            gravity: 9.815,
            length: 0.9,
            viscous: 0.18,
            coulomb: 0.45,
        }
    }
}

impl PendulumParams {
    /// `J = M L^2`
    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    pub fn gravity_over_length(&self) -> f64 {
        self.gravity / self.length
    }

    pub fn viscous_over_inertia(&self) -> f64 {
        self.viscous / self.inertia()
    }

    pub fn coulomb_over_inertia(&self) -> f64 {
        self.coulomb / self.inertia()
    }
}

pub const PENDULUM_X0: [f64; 2] = [1.0, 0.0];

/// `d(t) = 0.5 sin t + 0.5 cos 2t`
pub fn pendulum_disturbance(t: f64) -> f64 {
    0.5 * t.sin() + 0.5 * (2.0 * t).cos()
}

/// `x1' = x2`, `x2' = -(g/L) sin x1 - (Vs/J) x2 - (Ps/J) tanh(x2 / 0.1) + d(t)`.
pub fn pendulum(params: PendulumParams) -> TriangularSystem {
    let f1: Nonlinearity = Arc::new(|_, _| 0.0);
    let (gl, vj, pj) = (
        params.gravity_over_length(),
        params.viscous_over_inertia(),
        params.coulomb_over_inertia(),
    );
    let f2: Nonlinearity =
        Arc::new(move |x, _| -gl * x[0].sin() - vj * x[1] - pj * (x[1] / 0.1).tanh());
    let d: DisturbanceLaw = Arc::new(|t, _| pendulum_disturbance(t));
    TriangularSystem::new("pendulum", vec![f1, f2], d, PENDULUM_X0.to_vec())
        .expect("pendulum is well formed")
}

/// Super-twisting observer tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoConfig {
    /// Twice the maximal acceleration of the plant.
    pub fplus: f64,
}

impl Default for StoConfig {
    fn default() -> Self {
        Self { fplus: 6.0 }
    }
}

impl StoConfig {
    pub fn root_gain(&self) -> f64 {
        1.5 * self.fplus.sqrt()
    }

    pub fn sign_gain(&self) -> f64 {
        1.1 * self.fplus
    }
}

#[derive(Debug, Clone)]
pub struct StoEstimate {
    pub x1: SampledSignal,
    pub x2: SampledSignal,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Super-twisting observer for the pendulum driven by measured `y`, integrated
/// by explicit Euler at the sampling step.
pub fn sto_estimate(
    y: &SampledSignal,
    cfg: StoConfig,
    params: PendulumParams,
) -> Result<StoEstimate, SystemError> {
    if cfg.fplus.is_nan() || cfg.fplus <= 0.0 {
        return Err(SystemError::InvalidBound(cfg.fplus));
    }
    let grid = *y.grid();
    let dt = grid.dt();
    let (k1, k2) = (cfg.root_gain(), cfg.sign_gain());
    let (gl, vj) = (params.gravity_over_length(), params.viscous_over_inertia());
    let yv = y.values();
    let mut x1 = Vec::with_capacity(yv.len());
    let mut x2 = Vec::with_capacity(yv.len());
    let (mut a, mut b): (f64, f64) = (yv[0], 0.0);
    for (i, &yi) in yv.iter().enumerate() {
        if !a.is_finite() || !b.is_finite() || a.abs() > BLOW_UP || b.abs() > BLOW_UP {
            return Err(SystemError::NonFiniteState {
                t: grid.time(i),
                index: if a.is_finite() { 2 } else { 1 },
            });
        }
        x1.push(a);
        x2.push(b);
        let e = yi - a;
        let s = sign(e);
        let da = b + k1 * e.abs().sqrt() * s;
        let db = -gl * yi.sin() - vj * b + k2 * s;
        a += dt * da;
        b += dt * db;
    }
    Ok(StoEstimate {
        x1: SampledSignal::new(grid, x1)?,
        x2: SampledSignal::new(grid, x2)?,
    })
}
