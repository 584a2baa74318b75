//! Step-by-step estimation of `x_2..x_n` and of the disturbance `d`.
//!
//! Every target is expanded on a polynomial basis inside a window and its
//! coefficients solve `Theta a = rhs`, where the right-hand side only involves
//! window integrals of the measured output, the input and previously
//! estimated states against derivatives of the modulating functions.
//!
//! Two right-hand sides are available for each target:
//!
//! * recursive: `rhs_i = -<phi_i', x_{m}> - <phi_i, f_{m}>`, with `m` the
//!   previous equation of the chain;
//! * direct: `rhs_i = (-1)^m <phi_i^(m), y> - sum_{r=1..m} (-1)^(m-r) <phi_i^(m-r), f_r>`,
//!   which only touches the lower estimates through the nonlinearities.
//!
//! The offline scheme uses a single window spanning the whole record. The
//! online scheme slides a window of length `h` and reports each window's
//! reconstruction at a fixed position inside the window (midpoint by default,
//! right endpoint for causal use). The weighted fit is least reliable at the
//! window ends, where every modulating function vanishes.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{window_points, BasisError, BasisFamily, BasisKind, GramMatrix};
use crate::modfun::{check_order, ModFunError, ModFunSet};
use crate::signals::{quadrature_weights, Quadrature, SampledSignal, SignalError, TimeGrid};
use crate::systems::TriangularSystem;

/// What a series estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// State `x_k`, `k >= 2`.
    State(usize),
    Disturbance,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::State(k) => write!(f, "x{k}"),
            Target::Disturbance => write!(f, "d"),
        }
    }
}

/// Size `S`, truncation `M` and exponent offset `p` of one estimation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub size: u32,
    pub truncation: usize,
    pub exponent: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Scheme {
    Offline,
    Online {
        /// Window length `h` in seconds.
        window: f64,
        /// Samples between consecutive windows.
        #[serde(default = "default_stride")]
        stride: usize,
        /// Position inside each window, as a fraction of `h`, at which the
        /// window's reconstruction is reported. `1.0` is the causal right
        /// endpoint; the default `0.5` is the window midpoint.
        #[serde(default = "default_evaluate_at")]
        evaluate_at: f64,
    },
}

impl Scheme {
    /// Sliding window of length `window` evaluated at its midpoint every sample.
    pub fn online(window: f64) -> Self {
        Scheme::Online {
            window,
            stride: default_stride(),
            evaluate_at: default_evaluate_at(),
        }
    }
}

fn default_stride() -> usize {
    1
}

fn default_evaluate_at() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    #[default]
    Recursive,
    Direct,
}

/// Quadrature rule, serialized for configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    #[default]
    Trapezoid,
    Simpson,
    Gregory,
}

impl From<QuadratureRule> for Quadrature {
    fn from(q: QuadratureRule) -> Self {
        match q {
            QuadratureRule::Trapezoid => Quadrature::Trapezoid,
            QuadratureRule::Simpson => Quadrature::Simpson,
            QuadratureRule::Gregory => Quadrature::Gregory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// One entry per state `x_2..x_n`.
    pub states: Vec<FamilyConfig>,
    #[serde(default)]
    pub disturbance: Option<FamilyConfig>,
    pub scheme: Scheme,
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default)]
    pub basis: BasisKind,
    #[serde(default)]
    pub quadrature: QuadratureRule,
}

/// A violated solvability or order condition.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("expected {expected} state families for a system of dimension {n}, got {got}")]
    StateCount {
        n: usize,
        expected: usize,
        got: usize,
    },
    #[error(
        "{target}: family size S = {size} is below the truncation M = {truncation} (need S >= M)"
    )]
    SizeBelowTruncation {
        target: Target,
        size: u32,
        truncation: usize,
    },
    #[error("{target}: truncation must be at least 1")]
    ZeroTruncation { target: Target },
    #[error("{target}: exponent offset p must be at least 1")]
    ZeroExponent { target: Target },
    #[error("{target}: {formulation:?} formulation needs modulating functions of order >= {required}, family has order {available}")]
    OrderTooLow {
        target: Target,
        formulation: Formulation,
        required: usize,
        available: usize,
    },
    #[error("online window must be positive and finite, got {0}")]
    InvalidWindow(f64),
    #[error("online stride must be at least 1 sample")]
    ZeroStride,
    #[error("evaluation point must lie in [0, 1] (fraction of the window), got {0}")]
    InvalidEvaluationPoint(f64),
}

impl EstimatorConfig {
    /// Checks every size and order condition for a system of dimension `n`.
    pub fn validate(&self, n: usize) -> Result<(), ConfigError> {
        if self.states.len() + 1 != n {
            return Err(ConfigError::StateCount {
                n,
                expected: n.saturating_sub(1),
                got: self.states.len(),
            });
        }
        let stages = self
            .states
            .iter()
            .enumerate()
            .map(|(i, f)| (Target::State(i + 2), f))
            .chain(self.disturbance.iter().map(|f| (Target::Disturbance, f)));
        for (target, fam) in stages {
            if fam.truncation == 0 {
                return Err(ConfigError::ZeroTruncation { target });
            }
            if fam.exponent == 0 {
                return Err(ConfigError::ZeroExponent { target });
            }
            if (fam.size as usize) < fam.truncation {
                return Err(ConfigError::SizeBelowTruncation {
                    target,
                    size: fam.size,
                    truncation: fam.truncation,
                });
            }
            let required = required_order(target, self.formulation, n);
            let available = fam.exponent as usize + 1;
            if available < required {
                return Err(ConfigError::OrderTooLow {
                    target,
                    formulation: self.formulation,
                    required,
                    available,
                });
            }
        }
        if let Scheme::Online {
            window,
            stride,
            evaluate_at,
        } = self.scheme
        {
            if !(window > 0.0 && window.is_finite()) {
                return Err(ConfigError::InvalidWindow(window));
            }
            if stride == 0 {
                return Err(ConfigError::ZeroStride);
            }
            if !(0.0..=1.0).contains(&evaluate_at) {
                return Err(ConfigError::InvalidEvaluationPoint(evaluate_at));
            }
        }
        Ok(())
    }
}

/// Modulating-function order needed by a target under a formulation.
pub fn required_order(target: Target, formulation: Formulation, n: usize) -> usize {
    match (formulation, target) {
        (Formulation::Recursive, _) => 1,
        (Formulation::Direct, Target::State(k)) => k,
        (Formulation::Direct, Target::Disturbance) => n,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("window {h} s is longer than the record ({span} s)")]
    WindowTooLong { h: f64, span: f64 },
    #[error("{target}: lower-state estimates are missing (need {needed}, got {got})")]
    MissingPrerequisite {
        target: Target,
        needed: usize,
        got: usize,
    },
    #[error("{target}: modulating functions of order {available} cannot support order {required}")]
    OrderUnavailable {
        target: Target,
        required: usize,
        available: usize,
    },
    #[error("{target}: no stage configured")]
    NotConfigured { target: Target },
    #[error("non-finite values in the least-squares problem")]
    NonFinite,
    #[error("{target}: non-finite values in window {window}")]
    NonFiniteWindow { target: Target, window: usize },
    #[error("input signals are not sampled on the estimator grid")]
    GridMismatch,
    #[error("run_online requires the online scheme")]
    NotOnline,
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    ModFun(#[from] ModFunError),
}

/// Minimum-norm least-squares solution of `Theta a = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub coeffs: Vec<f64>,
    pub residual: f64,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// SVD-based solver. The factorization is computed once and reused for every
/// right-hand side.
#[derive(Debug, Clone)]
pub struct LsSolver {
    theta: DMatrix<f64>,
    pinv: DMatrix<f64>,
    rank: usize,
    condition: f64,
}

impl LsSolver {
    pub fn new(theta: &DMatrix<f64>) -> Result<Self, EstimatorError> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        let (rows, cols) = theta.shape();
        let svd = theta.clone().svd(true, true);
        let sigma = &svd.singular_values;
        let smax = sigma.iter().cloned().fold(0.0, f64::max);
        let tol = smax * rows.max(cols) as f64 * f64::EPSILON;
        let rank = sigma.iter().filter(|&&s| s > tol).count();
        let smin = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let mut pinv = DMatrix::zeros(cols, rows);
        for (k, &s) in sigma.iter().enumerate() {
            if s > tol {
                pinv += v_t.row(k).transpose() * u.column(k).transpose() / s;
            }
        }
        Ok(Self {
            theta: theta.clone(),
            pinv,
            rank,
            condition,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<LsSolution, EstimatorError> {
        if rhs.len() != self.theta.nrows() {
            return Err(EstimatorError::NonFinite);
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        let b = DVector::from_column_slice(rhs);
        let a = &self.pinv * &b;
        let residual = (&self.theta * &a - &b).norm();
        Ok(LsSolution {
            coeffs: a.iter().copied().collect(),
            residual,
            rank: self.rank,
            rank_deficient: self.rank < self.theta.ncols(),
        })
    }
}

/// Least-squares solve of `theta a = rhs` (`S >= M`).
pub fn solve_ls(theta: &DMatrix<f64>, rhs: &[f64]) -> Result<LsSolution, EstimatorError> {
    LsSolver::new(theta)?.solve(rhs)
}

/// Coefficients and diagnostics of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    /// Grid index of the window's first sample.
    pub start: usize,
    /// Coefficients in the stage's basis.
    pub coeffs: Vec<f64>,
    pub residual: f64,
    pub condition: f64,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone)]
pub struct EstimateSeries {
    pub target: Target,
    pub basis: BasisFamily,
    pub windows: Vec<WindowEstimate>,
    /// Reconstruction on the evaluation grid: every sample offline, one
    /// sample per window online.
    pub signal: SampledSignal,
}

impl EstimateSeries {
    /// Window coefficients in the raw-monomial convention `sum a_j tau^(j-1)`.
    pub fn raw_coefficients(&self, window: usize) -> Vec<f64> {
        self.basis.to_raw_coefficients(&self.windows[window].coeffs)
    }

    pub fn rank_deficient_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.rank_deficient).count()
    }

    pub fn max_residual(&self) -> f64 {
        self.windows.iter().map(|w| w.residual).fold(0.0, f64::max)
    }
}

/// All states and, when configured, the disturbance.
#[derive(Debug, Clone)]
pub struct Estimates {
    pub states: Vec<EstimateSeries>,
    pub disturbance: Option<EstimateSeries>,
}

impl Estimates {
    pub fn state(&self, k: usize) -> Option<&EstimateSeries> {
        self.states.get(k.checked_sub(2)?)
    }
}

/// Precomputed per-target quantities, shared by every window.
#[derive(Debug, Clone)]
struct Stage {
    target: Target,
    set: ModFunSet,
    basis: BasisFamily,
    /// `points x M` basis samples on the local grid.
    basis_samples: DMatrix<f64>,
    /// `kernels[j][i][m]`: quadrature weight times `phi_i^(j)` at sample `m`.
    kernels: Vec<Vec<Vec<f64>>>,
    gram: GramMatrix,
    solver: LsSolver,
}

impl Stage {
    fn new(
        target: Target,
        fam: &FamilyConfig,
        kind: BasisKind,
        h: f64,
        points: usize,
        weights: &[f64],
    ) -> Result<Self, EstimatorError> {
        let set = ModFunSet::new(fam.exponent, fam.size, h)?;
        let basis = BasisFamily::new(kind, fam.truncation, h)?;
        let basis_samples = basis.sample(points);
        let kernels: Vec<Vec<Vec<f64>>> = (0..=set.min_order())
            .map(|j| {
                set.members()
                    .iter()
                    .map(|f| {
                        f.sample_derivative(j, points)
                            .into_iter()
                            .zip(weights)
                            .map(|(v, w)| v * w)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let theta = DMatrix::from_fn(set.len(), basis.len(), |i, j| {
            dot(&kernels[0][i], basis_samples.column(j).as_slice())
        });
        let solver = LsSolver::new(&theta)?;
        Ok(Self {
            target,
            set,
            basis,
            basis_samples,
            kernels,
            gram: GramMatrix::from_entries(theta),
            solver,
        })
    }

    /// Window samples of this stage's reconstruction.
    fn window_samples(&self, coeffs: &[f64]) -> Vec<f64> {
        (&self.basis_samples * DVector::from_column_slice(coeffs))
            .iter()
            .copied()
            .collect()
    }

    /// `<phi_i^(j), v>` for every member `i`.
    fn modulate_all<'a>(&'a self, j: usize, v: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.kernels[j].iter().map(move |k| dot(k, v))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Estimator prepared for one system, configuration and sampling grid.
#[derive(Debug, Clone)]
pub struct Estimator {
    sys: TriangularSystem,
    cfg: EstimatorConfig,
    grid: TimeGrid,
    points: usize,
    starts: Vec<usize>,
    /// Local sample index at which online windows are reported.
    eval_offset: usize,
    eval_grid: TimeGrid,
    states: Vec<Stage>,
    disturbance: Option<Stage>,
}

impl Estimator {
    pub fn new(
        sys: &TriangularSystem,
        cfg: &EstimatorConfig,
        grid: &TimeGrid,
    ) -> Result<Self, EstimatorError> {
        let n = sys.dim();
        cfg.validate(n)?;
        let span = grid.tf() - grid.t0();
        let (h, points, stride, fraction) = match cfg.scheme {
            Scheme::Offline => (span, grid.len(), grid.len(), 1.0),
            Scheme::Online {
                window,
                stride,
                evaluate_at,
            } => {
                if window > span * (1.0 + 1e-12) {
                    return Err(EstimatorError::WindowTooLong { h: window, span });
                }
                (
                    window,
                    window_points(window, grid.dt())?,
                    stride,
                    evaluate_at,
                )
            }
        };
        let eval_offset = (fraction * (points - 1) as f64).round() as usize;
        let last = grid.len() - 1;
        let starts: Vec<usize> = (points - 1..=last)
            .step_by(stride)
            .map(|end| end + 1 - points)
            .collect();
        let eval_grid = match cfg.scheme {
            Scheme::Offline => *grid,
            Scheme::Online { .. } => TimeGrid::from_count(
                grid.time(eval_offset),
                grid.dt() * stride as f64,
                starts.len(),
            )?,
        };
        let weights = quadrature_weights(points, grid.dt(), cfg.quadrature.into());
        let states = cfg
            .states
            .iter()
            .enumerate()
            .map(|(i, fam)| Stage::new(Target::State(i + 2), fam, cfg.basis, h, points, &weights))
            .collect::<Result<Vec<_>, _>>()?;
        let disturbance = cfg
            .disturbance
            .as_ref()
            .map(|fam| Stage::new(Target::Disturbance, fam, cfg.basis, h, points, &weights))
            .transpose()?;
        Ok(Self {
            sys: sys.clone(),
            cfg: cfg.clone(),
            grid: *grid,
            points,
            starts,
            eval_offset,
            eval_grid,
            states,
            disturbance,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    /// Grid on which reconstructed signals are reported.
    pub fn eval_grid(&self) -> &TimeGrid {
        &self.eval_grid
    }

    pub fn window_count(&self) -> usize {
        self.starts.len()
    }

    /// Window length in seconds.
    pub fn window_length(&self) -> f64 {
        (self.points - 1) as f64 * self.grid.dt()
    }

    /// The Gram matrix of a stage, shared by all windows.
    pub fn gram(&self, target: Target) -> Option<&GramMatrix> {
        self.stage(target).ok().map(|s| &s.gram)
    }

    pub fn modfun_set(&self, target: Target) -> Option<&ModFunSet> {
        self.stage(target).ok().map(|s| &s.set)
    }

    fn stage(&self, target: Target) -> Result<&Stage, EstimatorError> {
        let stage = match target {
            Target::State(k) if k >= 2 => self.states.get(k - 2),
            Target::State(_) => None,
            Target::Disturbance => self.disturbance.as_ref(),
        };
        stage.ok_or(EstimatorError::NotConfigured { target })
    }

    fn check_inputs(&self, y: &SampledSignal, u: &SampledSignal) -> Result<(), EstimatorError> {
        if *y.grid() != self.grid || *u.grid() != self.grid {
            return Err(EstimatorError::GridMismatch);
        }
        Ok(())
    }

    /// Number of chain equations below the target: `k - 1` for `x_k`, `n` for `d`.
    fn depth(&self, target: Target) -> usize {
        match target {
            Target::State(k) => k - 1,
            Target::Disturbance => self.sys.dim(),
        }
    }

    fn check_prev(&self, target: Target, prev: &[EstimateSeries]) -> Result<(), EstimatorError> {
        let needed = self.depth(target) - 1;
        let ok = prev.len() >= needed
            && prev[..needed].iter().enumerate().all(|(i, s)| {
                s.target == Target::State(i + 2) && s.windows.len() == self.starts.len()
            });
        if ok {
            Ok(())
        } else {
            Err(EstimatorError::MissingPrerequisite {
                target,
                needed,
                got: prev.len(),
            })
        }
    }

    /// Window samples of `y, x_2, .., x_depth`.
    fn lower_states(
        &self,
        depth: usize,
        window: usize,
        y: &[f64],
        prev: &[EstimateSeries],
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(depth);
        out.push(y.to_vec());
        for r in 2..=depth {
            let stage = &self.states[r - 2];
            out.push(stage.window_samples(&prev[r - 2].windows[window].coeffs));
        }
        out
    }

    /// `f_r` sampled over the window from the first `r` state samples.
    fn nonlinearity_samples(&self, r: usize, states: &[Vec<f64>], u: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; r];
        (0..self.points)
            .map(|m| {
                for (q, s) in states[..r].iter().enumerate() {
                    x[q] = s[m];
                }
                self.sys.nonlinearity(r, &x, u[m])
            })
            .collect()
    }

    fn window_rhs(
        &self,
        stage: &Stage,
        formulation: Formulation,
        window: usize,
        y: &SampledSignal,
        u: &SampledSignal,
        prev: &[EstimateSeries],
    ) -> Vec<f64> {
        let depth = self.depth(stage.target);
        let start = self.starts[window];
        let range = start..start + self.points;
        let yw = &y.values()[range.clone()];
        let uw = &u.values()[range];
        let states = self.lower_states(depth, window, yw, prev);
        match formulation {
            Formulation::Recursive => {
                let f = self.nonlinearity_samples(depth, &states, uw);
                stage
                    .modulate_all(1, &states[depth - 1])
                    .zip(stage.modulate_all(0, &f))
                    .map(|(a, b)| -a - b)
                    .collect()
            }
            Formulation::Direct => {
                let sign = |e: usize| if e.is_multiple_of(2) { 1.0 } else { -1.0 };
                let mut rhs: Vec<f64> = stage
                    .modulate_all(depth, yw)
                    .map(|v| sign(depth) * v)
                    .collect();
                for r in 1..=depth {
                    let f = self.nonlinearity_samples(r, &states, uw);
                    let s = sign(depth - r);
                    for (acc, v) in rhs.iter_mut().zip(stage.modulate_all(depth - r, &f)) {
                        *acc -= s * v;
                    }
                }
                rhs
            }
        }
    }

    fn estimate(
        &self,
        target: Target,
        formulation: Formulation,
        y: &SampledSignal,
        u: &SampledSignal,
        prev: &[EstimateSeries],
    ) -> Result<EstimateSeries, EstimatorError> {
        self.check_inputs(y, u)?;
        let stage = self.stage(target)?;
        let required = required_order(target, formulation, self.sys.dim());
        if !check_order(&stage.set, required) {
            return Err(EstimatorError::OrderUnavailable {
                target,
                required,
                available: stage.set.min_order(),
            });
        }
        self.check_prev(target, prev)?;

        let results: Vec<Result<WindowEstimate, EstimatorError>> = (0..self.starts.len())
            .into_par_iter()
            .map(|w| {
                let rhs = self.window_rhs(stage, formulation, w, y, u, prev);
                let sol = stage
                    .solver
                    .solve(&rhs)
                    .map_err(|_| EstimatorError::NonFiniteWindow { target, window: w })?;
                Ok(WindowEstimate {
                    start: self.starts[w],
                    coeffs: sol.coeffs,
                    residual: sol.residual,
                    condition: stage.solver.condition(),
                    rank_deficient: sol.rank_deficient,
                })
            })
            .collect();
        let windows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

        let values = match self.cfg.scheme {
            Scheme::Offline => stage.window_samples(&windows[0].coeffs),
            Scheme::Online { .. } => {
                let tau = self.eval_offset as f64 * self.grid.dt();
                windows
                    .iter()
                    .map(|w| stage.basis.combine(&w.coeffs, tau))
                    .collect()
            }
        };
        let signal = SampledSignal::new(self.eval_grid, values)
            .map_err(|_| EstimatorError::NonFiniteWindow { target, window: 0 })?;
        Ok(EstimateSeries {
            target,
            basis: stage.basis,
            windows,
            signal,
        })
    }

    /// `x_k` from `-<phi', x_{k-1}> - <phi, f_{k-1}>`. `prev` holds `x_2..x_{k-1}`.
    pub fn estimate_state_recursive(
        &self,
        k: usize,
        y: &SampledSignal,
        u: &SampledSignal,
        prev: &[EstimateSeries],
    ) -> Result<EstimateSeries, EstimatorError> {
        self.estimate(Target::State(k), Formulation::Recursive, y, u, prev)
    }

    /// `x_k` from derivatives of the modulating functions up to order `k - 1`.
    pub fn estimate_state_direct(
        &self,
        k: usize,
        y: &SampledSignal,
        u: &SampledSignal,
        prev: &[EstimateSeries],
    ) -> Result<EstimateSeries, EstimatorError> {
        self.estimate(Target::State(k), Formulation::Direct, y, u, prev)
    }

    /// Runs the configured formulation for `k = 2..n`, feeding each stage
    /// into the next.
    pub fn estimate_states_all(
        &self,
        y: &SampledSignal,
        u: &SampledSignal,
    ) -> Result<Vec<EstimateSeries>, EstimatorError> {
        let mut out: Vec<EstimateSeries> = Vec::with_capacity(self.states.len());
        for k in 2..=self.sys.dim() {
            let series = self.estimate(Target::State(k), self.cfg.formulation, y, u, &out)?;
            out.push(series);
        }
        Ok(out)
    }

    /// `d` from `-<phi', x_n> - <phi, f_n>`.
    pub fn estimate_disturbance(
        &self,
        y: &SampledSignal,
        u: &SampledSignal,
        states: &[EstimateSeries],
    ) -> Result<EstimateSeries, EstimatorError> {
        self.estimate(Target::Disturbance, Formulation::Recursive, y, u, states)
    }

    /// `d` from `(-1)^n <phi^(n), y> - sum_r (-1)^(n-r) <phi^(n-r), f_r>`.
    pub fn estimate_disturbance_direct(
        &self,
        y: &SampledSignal,
        u: &SampledSignal,
        states: &[EstimateSeries],
    ) -> Result<EstimateSeries, EstimatorError> {
        self.estimate(Target::Disturbance, Formulation::Direct, y, u, states)
    }

    /// Every configured target with the configured formulation.
    pub fn run(&self, y: &SampledSignal, u: &SampledSignal) -> Result<Estimates, EstimatorError> {
        let states = self.estimate_states_all(y, u)?;
        let disturbance = match self.disturbance {
            Some(_) => {
                Some(self.estimate(Target::Disturbance, self.cfg.formulation, y, u, &states)?)
            }
            None => None,
        };
        Ok(Estimates {
            states,
            disturbance,
        })
    }
}

/// Sliding-window estimation of every configured target.
pub fn run_online(
    y: &SampledSignal,
    u: &SampledSignal,
    sys: &TriangularSystem,
    cfg: &EstimatorConfig,
) -> Result<Estimates, EstimatorError> {
    if !matches!(cfg.scheme, Scheme::Online { .. }) {
        return Err(EstimatorError::NotOnline);
    }
    Estimator::new(sys, cfg, y.grid())?.run(y, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::assemble_gram;
    use crate::signals::make_grid;
    use crate::systems::{academic3, TriangularSystem};
    use std::sync::Arc;

    fn fam(size: u32, truncation: usize, exponent: u32) -> FamilyConfig {
        FamilyConfig {
            size,
            truncation,
            exponent,
        }
    }

    fn offline(states: Vec<FamilyConfig>, d: Option<FamilyConfig>) -> EstimatorConfig {
        EstimatorConfig {
            states,
            disturbance: d,
            scheme: Scheme::Offline,
            formulation: Formulation::Recursive,
            basis: BasisKind::MonomialScaled,
            quadrature: QuadratureRule::Trapezoid,
        }
    }

    #[test]
    fn ls_identity_and_mean() {
        let id = DMatrix::<f64>::identity(3, 3);
        let sol = solve_ls(&id, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(sol.coeffs, vec![1.0, -2.0, 0.5]);
        let col = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let sol = solve_ls(&col, &[1.0, 3.0]).unwrap();
        assert!((sol.coeffs[0] - 2.0).abs() < 1e-14);
        assert!((sol.residual - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ls_rank_deficient_min_norm() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let sol = solve_ls(&m, &[2.0, 2.0, 2.0]).unwrap();
        assert!(sol.rank_deficient);
        assert_eq!(sol.rank, 1);
        assert!((sol.coeffs[0] - 1.0).abs() < 1e-12 && (sol.coeffs[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ls_rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert_eq!(solve_ls(&m, &[1.0]), Err(EstimatorError::NonFinite));
        let m = DMatrix::<f64>::identity(1, 1);
        assert_eq!(
            solve_ls(&m, &[f64::INFINITY]),
            Err(EstimatorError::NonFinite)
        );
    }

    #[test]
    fn validation_names_each_condition() {
        let n = 3;
        let mut cfg = offline(vec![fam(5, 5, 2), fam(4, 4, 2)], Some(fam(3, 3, 2)));
        assert!(cfg.validate(n).is_ok());
        assert!(matches!(
            cfg.validate(2),
            Err(ConfigError::StateCount { .. })
        ));
        cfg.states[1] = fam(3, 4, 2);
        assert!(matches!(
            cfg.validate(n),
            Err(ConfigError::SizeBelowTruncation {
                target: Target::State(3),
                ..
            })
        ));
        cfg.states[1] = fam(4, 4, 2);
        cfg.disturbance = Some(fam(2, 3, 2));
        assert!(matches!(
            cfg.validate(n),
            Err(ConfigError::SizeBelowTruncation {
                target: Target::Disturbance,
                ..
            })
        ));
        cfg.disturbance = Some(fam(3, 3, 1));
        cfg.formulation = Formulation::Direct;
        assert!(matches!(
            cfg.validate(n),
            Err(ConfigError::OrderTooLow {
                target: Target::Disturbance,
                required: 3,
                available: 2,
                ..
            })
        ));
        cfg.disturbance = Some(fam(3, 3, 2));
        cfg.states[1] = fam(4, 4, 1);
        assert!(matches!(
            cfg.validate(n),
            Err(ConfigError::OrderTooLow {
                target: Target::State(3),
                ..
            })
        ));
        cfg.states[1] = fam(4, 0, 2);
        assert!(matches!(
            cfg.validate(n),
            Err(ConfigError::ZeroTruncation { .. })
        ));
        cfg.states[1] = fam(4, 4, 0);
        cfg.formulation = Formulation::Recursive;
        assert!(matches!(
            cfg.validate(n),
            Err(ConfigError::ZeroExponent { .. })
        ));
        cfg.states[1] = fam(4, 4, 2);
        cfg.scheme = Scheme::Online {
            window: 1.0,
            stride: 0,
            evaluate_at: 0.5,
        };
        assert_eq!(cfg.validate(n), Err(ConfigError::ZeroStride));
        cfg.scheme = Scheme::online(-1.0);
        assert!(matches!(
            cfg.validate(n),
            Err(ConfigError::InvalidWindow(_))
        ));
        cfg.scheme = Scheme::Online {
            window: 1.0,
            stride: 1,
            evaluate_at: 1.5,
        };
        assert!(matches!(
            cfg.validate(n),
            Err(ConfigError::InvalidEvaluationPoint(_))
        ));
    }

    #[test]
    fn stage_gram_equals_assembled_gram() {
        let sys = TriangularSystem::chain(2, Arc::new(|_, _| 0.0));
        let g = make_grid(0.0, 2.0, 1e-3).unwrap();
        let cfg = EstimatorConfig {
            scheme: Scheme::Online {
                window: 1.0,
                stride: 1,
                evaluate_at: 1.0,
            },
            ..offline(vec![fam(4, 3, 2)], None)
        };
        let est = Estimator::new(&sys, &cfg, &g).unwrap();
        let set = ModFunSet::new(2, 4, 1.0).unwrap();
        let basis = BasisFamily::new(BasisKind::MonomialScaled, 3, 1.0).unwrap();
        let reference = assemble_gram(&set, &basis, 1e-3).unwrap();
        let got = est.gram(Target::State(2)).unwrap();
        for (a, b) in got.entries().iter().zip(reference.entries().iter()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
        assert_eq!(est.window_count(), 1001);
        assert!((est.eval_grid().t0() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_of_square() {
        let sys = TriangularSystem::chain(2, Arc::new(|_, _| 0.0));
        let g = make_grid(0.0, 2.0, 1e-3).unwrap();
        let y = SampledSignal::from_fn(g, |t| t * t).unwrap();
        let u = SampledSignal::zeros(g);
        let est = Estimator::new(&sys, &offline(vec![fam(5, 3, 2)], None), &g).unwrap();
        let x2 = est.estimate_state_recursive(2, &y, &u, &[]).unwrap();
        let truth = SampledSignal::from_fn(g, |t| 2.0 * t).unwrap();
        let err = crate::signals::relative_l2_error(&truth, &x2.signal, 0.0, 2.0).unwrap();
        assert!(err < 1e-6 * 100.0, "{err}%");
    }

    #[test]
    fn zero_state_gives_zero_coefficients() {
        // x1' = x2 + u, u = 1, y = t, so x2 = 0.
        let f1: crate::systems::Nonlinearity = Arc::new(|_, u| u);
        let f2: crate::systems::Nonlinearity = Arc::new(|_, _| 0.0);
        let sys = TriangularSystem::new("io", vec![f1, f2], Arc::new(|_, _| 0.0), vec![0.0, 0.0])
            .unwrap();
        let g = make_grid(0.0, 1.0, 1e-3).unwrap();
        let y = SampledSignal::from_fn(g, |t| t).unwrap();
        let u = SampledSignal::from_fn(g, |_| 1.0).unwrap();
        let est = Estimator::new(&sys, &offline(vec![fam(4, 3, 2)], None), &g).unwrap();
        let x2 = est.estimate_state_recursive(2, &y, &u, &[]).unwrap();
        assert!(x2.windows[0].coeffs.iter().all(|c| c.abs() < 1e-8));
    }

    #[test]
    fn k2_direct_equals_recursive() {
        let sys = academic3();
        let g = make_grid(0.0, 3.0, 1e-3).unwrap();
        let y = SampledSignal::from_fn(g, |t| 0.5 + 0.3 * t.sin()).unwrap();
        let u = SampledSignal::zeros(g);
        let est =
            Estimator::new(&sys, &offline(vec![fam(6, 6, 2), fam(5, 5, 2)], None), &g).unwrap();
        let a = est.estimate_state_recursive(2, &y, &u, &[]).unwrap();
        let b = est.estimate_state_direct(2, &y, &u, &[]).unwrap();
        for (p, q) in a.windows[0].coeffs.iter().zip(&b.windows[0].coeffs) {
            assert!((p - q).abs() <= 1e-10 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn missing_prerequisite_and_order() {
        let sys = academic3();
        let g = make_grid(0.0, 3.0, 1e-2).unwrap();
        let y = SampledSignal::from_fn(g, |t| 1.0 + t).unwrap();
        let u = SampledSignal::zeros(g);
        let est = Estimator::new(
            &sys,
            &offline(vec![fam(6, 6, 1), fam(5, 5, 1)], Some(fam(3, 3, 1))),
            &g,
        )
        .unwrap();
        assert!(matches!(
            est.estimate_state_recursive(3, &y, &u, &[]),
            Err(EstimatorError::MissingPrerequisite {
                target: Target::State(3),
                ..
            })
        ));
        let states = est.estimate_states_all(&y, &u).unwrap();
        assert!(matches!(
            est.estimate_state_direct(3, &y, &u, &states),
            Err(EstimatorError::OrderUnavailable {
                required: 3,
                available: 2,
                ..
            })
        ));
        assert!(matches!(
            est.estimate_disturbance_direct(&y, &u, &states),
            Err(EstimatorError::OrderUnavailable {
                target: Target::Disturbance,
                ..
            })
        ));
    }

    #[test]
    fn online_window_checks() {
        let sys = TriangularSystem::chain(2, Arc::new(|_, _| 0.0));
        let g = make_grid(0.0, 1.0, 1e-2).unwrap();
        let mut cfg = offline(vec![fam(3, 3, 2)], None);
        cfg.scheme = Scheme::online(2.0);
        assert!(matches!(
            Estimator::new(&sys, &cfg, &g),
            Err(EstimatorError::WindowTooLong { .. })
        ));
        cfg.scheme = Scheme::online(0.555);
        assert!(matches!(
            Estimator::new(&sys, &cfg, &g),
            Err(EstimatorError::Basis(BasisError::WindowMisaligned { .. }))
        ));
        let y = SampledSignal::zeros(g);
        assert!(matches!(
            run_online(&y, &y, &sys, &offline(vec![fam(3, 3, 2)], None)),
            Err(EstimatorError::NotOnline)
        ));
    }
}
