//! Uniform time grids, sampled signals, quadrature, measurement noise and
//! error metrics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Relative tolerance used when snapping times onto grid points.
const GRID_SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid range: tf ({tf}) must exceed t0 ({t0}) and dt ({dt}) must be positive")]
    InvalidRange { t0: f64, tf: f64, dt: f64 },
    #[error("span {span} is not an integer multiple of dt = {dt}")]
    NonIntegerSpan { span: f64, dt: f64 },
    #[error("window [{a}, {b}] is not aligned with the sampling grid")]
    WindowMisaligned { a: f64, b: f64 },
    #[error("signal has {got} values but the grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("signal contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("signals are sampled on different grids")]
    GridMismatch,
    #[error("reference signal has zero norm on the window")]
    ZeroReference,
    #[error("csv: {0}")]
    Csv(String),
}

/// A uniform grid `t0 + i*dt`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n: usize,
}

/// Builds the grid covering `[t0, tf]` with step `dt`.
pub fn make_grid(t0: f64, tf: f64, dt: f64) -> Result<TimeGrid, SignalError> {
    TimeGrid::new(t0, tf, dt)
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, dt: f64) -> Result<Self, SignalError> {
        if !(t0.is_finite() && tf.is_finite() && dt.is_finite()) || tf <= t0 || dt <= 0.0 {
            return Err(SignalError::InvalidRange { t0, tf, dt });
        }
        let steps = (tf - t0) / dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > GRID_SNAP_TOL * rounded.max(1.0) || rounded < 1.0 {
            return Err(SignalError::NonIntegerSpan { span: tf - t0, dt });
        }
        Ok(Self {
            t0,
            dt,
            n: rounded as usize + 1,
        })
    }

    /// Grid of `n >= 1` points starting at `t0`.
    pub fn from_count(t0: f64, dt: f64, n: usize) -> Result<Self, SignalError> {
        if !(t0.is_finite() && dt.is_finite()) || dt <= 0.0 || n == 0 {
            return Err(SignalError::InvalidRange {
                t0,
                tf: t0 + dt * n.saturating_sub(1) as f64,
                dt,
            });
        }
        Ok(Self { t0, dt, n })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.time(self.n - 1)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.time(i))
    }

    /// Index of the grid point at time `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = (t - self.t0) / self.dt;
        let rounded = pos.round();
        if rounded < 0.0 || (pos - rounded).abs() > GRID_SNAP_TOL * rounded.max(1.0) {
            return None;
        }
        let idx = rounded as usize;
        (idx < self.n).then_some(idx)
    }

    /// Index pair `(ia, ib)` for a window `[a, b]` with `b > a`.
    pub fn window_indices(&self, a: f64, b: f64) -> Result<(usize, usize), SignalError> {
        match (self.index_of(a), self.index_of(b)) {
            (Some(ia), Some(ib)) if ib > ia => Ok((ia, ib)),
            _ => Err(SignalError::WindowMisaligned { a, b }),
        }
    }

    /// True when `other` is a sub-grid of `self` (same phase, step a multiple).
    fn contains_grid(&self, other: &TimeGrid) -> bool {
        let ratio = other.dt / self.dt;
        (ratio - ratio.round()).abs() < GRID_SNAP_TOL * ratio.max(1.0)
            && self.index_of(other.t0).is_some()
            && self.index_of(other.tf()).is_some()
    }
}

/// Scalar samples on a [`TimeGrid`]. Values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self, SignalError> {
        if values.len() != grid.len() {
            return Err(SignalError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self, SignalError> {
        Self::new(grid, grid.times().map(f).collect())
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn rms(&self) -> f64 {
        let ss: f64 = self.values.iter().map(|v| v * v).sum();
        (ss / self.values.len() as f64).sqrt()
    }

    /// Samples of `self` at the points of `sub`, which must be a sub-grid.
    pub fn restrict(&self, sub: &TimeGrid) -> Result<SampledSignal, SignalError> {
        if !self.grid.contains_grid(sub) {
            return Err(SignalError::GridMismatch);
        }
        let values = sub
            .times()
            .map(|t| {
                self.grid
                    .index_of(t)
                    .map(|i| self.values[i])
                    .ok_or(SignalError::GridMismatch)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SampledSignal { grid: *sub, values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<SampledSignal, SignalError> {
        SampledSignal::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Quadrature rule applied on the sampling grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Composite Simpson; falls back to a trapezoid on the last panel when
    /// the number of intervals is odd.
    Simpson,
    /// Trapezoid with Gregory end corrections over the first and last
    /// `GREGORY_POINTS` samples; exact for polynomials of degree below
    /// `GREGORY_POINTS`. Needs `2 * GREGORY_POINTS` samples, otherwise Simpson.
    Gregory,
}

pub const GREGORY_POINTS: usize = 8;

/// End weights (in units of `dt`) of the Gregory rule. The corrections `c_r`
/// to the trapezoid weights cancel the left-end Euler-Maclaurin terms for
/// every polynomial of degree below `GREGORY_POINTS`:
/// `sum_r c_r r^k = B_(k+1) / (k+1)` for odd `k` and `0` for even `k`.
fn gregory_end_weights() -> &'static [f64; GREGORY_POINTS] {
    static WEIGHTS: OnceLock<[f64; GREGORY_POINTS]> = OnceLock::new();
    WEIGHTS.get_or_init(|| {
        const BERNOULLI_EVEN: [f64; 4] = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0];
        let m = GREGORY_POINTS;
        let a = DMatrix::from_fn(m, m, |k, r| (r as f64).powi(k as i32));
        let b = DVector::from_fn(m, |k, _| {
            if k % 2 == 1 {
                BERNOULLI_EVEN[k / 2] / (k as f64 + 1.0)
            } else {
                0.0
            }
        });
        let c = a.lu().solve(&b).expect("Vandermonde system is regular");
        let mut w = [1.0; GREGORY_POINTS];
        w[0] = 0.5;
        for r in 0..m {
            w[r] += c[r];
        }
        w
    })
}

/// Weights `w` such that `sum(w[i] * f[i])` approximates the integral over
/// `points` equally spaced samples with step `dt`.
pub fn quadrature_weights(points: usize, dt: f64, rule: Quadrature) -> Vec<f64> {
    let mut w = vec![0.0; points];
    if points < 2 {
        return w;
    }
    let intervals = points - 1;
    match rule {
        Quadrature::Trapezoid => {
            w.iter_mut().for_each(|x| *x = dt);
            w[0] = 0.5 * dt;
            w[intervals] = 0.5 * dt;
        }
        Quadrature::Simpson => {
            let even = intervals - intervals % 2;
            for panel in (0..even).step_by(2) {
                w[panel] += dt / 3.0;
                w[panel + 1] += 4.0 * dt / 3.0;
                w[panel + 2] += dt / 3.0;
            }
            if even < intervals {
                w[intervals - 1] += 0.5 * dt;
                w[intervals] += 0.5 * dt;
            }
        }
        Quadrature::Gregory => {
            if points < 2 * GREGORY_POINTS {
                return quadrature_weights(points, dt, Quadrature::Simpson);
            }
            w.iter_mut().for_each(|x| *x = dt);
            for (r, e) in gregory_end_weights().iter().enumerate() {
                w[r] = e * dt;
                w[intervals - r] = e * dt;
            }
        }
    }
    w
}

/// Composite-trapezoid approximation of the integral of `f` over `[a, b]`.
pub fn integrate(f: &SampledSignal, a: f64, b: f64) -> Result<f64, SignalError> {
    integrate_with(f, a, b, Quadrature::Trapezoid)
}

pub fn integrate_with(
    f: &SampledSignal,
    a: f64,
    b: f64,
    rule: Quadrature,
) -> Result<f64, SignalError> {
    let (ia, ib) = f.grid.window_indices(a, b)?;
    Ok(integrate_slice(&f.values[ia..=ib], f.grid.dt, rule))
}

pub(crate) fn integrate_slice(values: &[f64], dt: f64, rule: Quadrature) -> f64 {
    match rule {
        Quadrature::Trapezoid => {
            let n = values.len();
            if n < 2 {
                return 0.0;
            }
            let inner: f64 = values[1..n - 1].iter().sum();
            dt * (inner + 0.5 * (values[0] + values[n - 1]))
        }
        Quadrature::Simpson | Quadrature::Gregory => quadrature_weights(values.len(), dt, rule)
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum(),
    }
}

/// White Gaussian measurement noise, scaled relative to the signal RMS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub level_percent: f64,
    pub seed: u64,
}

/// The noise sequence `add_noise` would add to `y`.
pub fn noise_realization(y: &SampledSignal, spec: NoiseSpec) -> Vec<f64> {
    if spec.level_percent == 0.0 {
        return vec![0.0; y.values.len()];
    }
    let sigma = spec.level_percent / 100.0 * y.rms();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..y.values.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

/// Returns `y + eta`, `eta ~ N(0, (level/100 * rms(y))^2)` i.i.d.
pub fn add_noise(y: &SampledSignal, spec: NoiseSpec) -> SampledSignal {
    assert!(
        spec.level_percent >= 0.0 && spec.level_percent.is_finite(),
        "noise level must be a finite nonnegative percentage"
    );
    if spec.level_percent == 0.0 {
        return y.clone();
    }
    let eta = noise_realization(y, spec);
    SampledSignal {
        grid: y.grid,
        values: y.values.iter().zip(eta).map(|(v, e)| v + e).collect(),
    }
}

/// `100 * ||x - xhat|| / ||x||` over `[a, b]`, in percent.
pub fn relative_l2_error(
    x: &SampledSignal,
    xhat: &SampledSignal,
    a: f64,
    b: f64,
) -> Result<f64, SignalError> {
    if x.grid != xhat.grid {
        return Err(SignalError::GridMismatch);
    }
    let (ia, ib) = x.grid.window_indices(a, b)?;
    let dt = x.grid.dt;
    let sq_ref: Vec<f64> = x.values[ia..=ib].iter().map(|v| v * v).collect();
    let sq_err: Vec<f64> = x.values[ia..=ib]
        .iter()
        .zip(&xhat.values[ia..=ib])
        .map(|(u, v)| (u - v) * (u - v))
        .collect();
    let norm_ref = integrate_slice(&sq_ref, dt, Quadrature::Trapezoid).sqrt();
    if norm_ref == 0.0 {
        return Err(SignalError::ZeroReference);
    }
    let norm_err = integrate_slice(&sq_err, dt, Quadrature::Trapezoid).sqrt();
    Ok(100.0 * norm_err / norm_ref)
}

/// Writes `time,<name1>,...` rows. `None` entries are written as empty fields.
pub fn write_csv_columns<W: Write>(
    out: W,
    grid: &TimeGrid,
    columns: &[(&str, Vec<Option<f64>>)],
) -> Result<(), SignalError> {
    let csv_err = |e: csv::Error| SignalError::Csv(e.to_string());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..grid.len() {
        let mut row = Vec::with_capacity(columns.len() + 1);
        row.push(format_value(grid.time(i)));
        for (_, col) in columns {
            row.push(
                col.get(i)
                    .copied()
                    .flatten()
                    .map(format_value)
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| SignalError::Csv(e.to_string()))
}

/// Writes signals sharing one grid.
pub fn write_csv(path: &Path, signals: &[(&str, &SampledSignal)]) -> Result<(), SignalError> {
    let grid = match signals.first() {
        Some((_, s)) => *s.grid(),
        None => return Err(SignalError::Csv("no signals to write".into())),
    };
    if signals.iter().any(|(_, s)| *s.grid() != grid) {
        return Err(SignalError::GridMismatch);
    }
    let file = File::create(path).map_err(|e| SignalError::Csv(e.to_string()))?;
    let columns: Vec<(&str, Vec<Option<f64>>)> = signals
        .iter()
        .map(|(name, s)| (*name, s.values.iter().copied().map(Some).collect()))
        .collect();
    write_csv_columns(BufWriter::new(file), &grid, &columns)
}

pub fn read_csv(path: &Path) -> Result<Vec<(String, SampledSignal)>, SignalError> {
    let file = File::open(path).map_err(|e| SignalError::Csv(e.to_string()))?;
    read_csv_from(BufReader::new(file))
}

/// Parses a signal CSV. Every column must be fully populated.
pub fn read_csv_from<R: Read>(input: R) -> Result<Vec<(String, SampledSignal)>, SignalError> {
    let csv_err = |e: csv::Error| SignalError::Csv(e.to_string());
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("time") {
        return Err(SignalError::Csv("first column must be `time`".into()));
    }
    let width = header.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); width];
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| SignalError::Csv(format!("bad number `{field}`")))?;
            cols[c].push(v);
        }
    }
    let times = &cols[0];
    if times.len() < 2 {
        return Err(SignalError::Csv("need at least two rows".into()));
    }
    let dt = times[1] - times[0];
    let grid = TimeGrid::from_count(times[0], dt, times.len())?;
    for (i, &t) in times.iter().enumerate() {
        if (t - grid.time(i)).abs() > 1e-9 * dt.max(t.abs()) {
            return Err(SignalError::Csv(format!("irregular sampling at row {i}")));
        }
    }
    header
        .iter()
        .zip(cols)
        .skip(1)
        .map(|(name, values)| Ok((name.to_string(), SampledSignal::new(grid, values)?)))
        .collect()
}

fn format_value(v: f64) -> String {
    format!("{v:.15e}")
}
