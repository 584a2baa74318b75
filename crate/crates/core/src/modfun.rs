//! Normalized polynomial modulating functions and the modulation operator.
//!
//! Member `i` of a family of size `S` with exponent offset `p` on a window of
//! length `h` is
//!
//! ```text
//! phi_i(tau) = (h - tau)^(p + i) * tau^(p + S + 1 - i) / ||.||_L2,   tau in [0, h]
//! ```
//!
//! Derivatives are evaluated analytically through the Leibniz rule on the two
//! power factors. Internally everything is expressed in the unit variable
//! `s = tau / h`, which keeps large windows from overflowing.

use thiserror::Error;

use crate::signals::{integrate_slice, Quadrature, SampledSignal, SignalError};

/// Number of intervals used to compute the normalization constant.
const NORM_INTERVALS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModFunError {
    #[error("invalid family: p = {p}, S = {size}, h = {h} (need p >= 1, S >= 1, h > 0)")]
    InvalidFamily { p: u32, size: u32, h: f64 },
    #[error("local time {tau} is outside the window [0, {h}]")]
    OutOfWindow { tau: f64, h: f64 },
    #[error("derivative order {j} exceeds the vanishing order {order}")]
    OrderUnavailable { j: usize, order: usize },
    #[error("window length {len} does not match the function support {h}")]
    WindowLength { len: f64, h: f64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// One normalized polynomial modulating function.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyModFun {
    p: u32,
    index: u32,
    size: u32,
    h: f64,
    /// L2 norm of `(1 - s)^A s^B` over `[0, 1]`.
    unit_norm: f64,
}

impl PolyModFun {
    /// Member `index` (1-based) of the family `(p, size)` on a window of length `h`.
    pub fn new(p: u32, index: u32, size: u32, h: f64) -> Result<Self, ModFunError> {
        if p < 1 || size < 1 || index < 1 || index > size || !(h > 0.0 && h.is_finite()) {
            return Err(ModFunError::InvalidFamily { p, size, h });
        }
        let mut f = Self {
            p,
            index,
            size,
            h,
            unit_norm: 1.0,
        };
        let ds = 1.0 / NORM_INTERVALS as f64;
        let sq: Vec<f64> = (0..=NORM_INTERVALS)
            .map(|m| f.unit_derivative(0, m as f64 * ds).powi(2))
            .collect();
        f.unit_norm = integrate_slice(&sq, ds, Quadrature::Trapezoid).sqrt();
        Ok(f)
    }

    /// Exponent of the `(h - tau)` factor.
    pub fn left_exponent(&self) -> u32 {
        self.p + self.index
    }

    /// Exponent of the `tau` factor.
    pub fn right_exponent(&self) -> u32 {
        self.p + self.size + 1 - self.index
    }

    /// Number of derivatives (starting from the value itself) that vanish at
    /// both ends of the window.
    pub fn vanishing_order(&self) -> usize {
        self.left_exponent().min(self.right_exponent()) as usize
    }

    pub fn window(&self) -> f64 {
        self.h
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    /// L2 norm of the unnormalized polynomial over `[0, h]`.
    pub fn norm_const(&self) -> f64 {
        let degree = (self.left_exponent() + self.right_exponent()) as f64;
        self.unit_norm * self.h.powf(degree + 0.5)
    }

    /// j-th derivative of `(1 - s)^A s^B` at `s`.
    fn unit_derivative(&self, j: usize, s: f64) -> f64 {
        let a = self.left_exponent() as usize;
        let b = self.right_exponent() as usize;
        let mut total = 0.0;
        let mut binom = 1.0;
        for m in 0..=j {
            if m > 0 {
                binom = binom * (j + 1 - m) as f64 / m as f64;
            }
            let rest = j - m;
            if m > a || rest > b {
                continue;
            }
            let left = falling(a, m) * (1.0 - s).powi((a - m) as i32);
            let right = falling(b, rest) * s.powi((b - rest) as i32);
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * binom * left * right;
        }
        total
    }

    /// Exact j-th derivative of the normalized function at local time `tau`.
    pub fn eval_derivative(&self, j: usize, tau: f64) -> Result<f64, ModFunError> {
        let slack = 1e-12 * self.h;
        if !(tau >= -slack && tau <= self.h + slack) {
            return Err(ModFunError::OutOfWindow { tau, h: self.h });
        }
        let s = (tau / self.h).clamp(0.0, 1.0);
        Ok(self.scaled_derivative(j, s))
    }

    fn scaled_derivative(&self, j: usize, s: f64) -> f64 {
        self.unit_derivative(j, s) / (self.unit_norm * self.h.sqrt() * self.h.powi(j as i32))
    }

    /// Samples of the j-th derivative on `points` equally spaced local times
    /// spanning `[0, h]`.
    pub fn sample_derivative(&self, j: usize, points: usize) -> Vec<f64> {
        let intervals = (points - 1) as f64;
        (0..points)
            .map(|m| self.scaled_derivative(j, m as f64 / intervals))
            .collect()
    }

    /// Modulation `<phi^(j), y>` over the window `[a, b]`, with local time `tau - a`.
    pub fn modulate(
        &self,
        j: usize,
        y: &SampledSignal,
        a: f64,
        b: f64,
    ) -> Result<f64, ModFunError> {
        self.modulate_with(j, y, a, b, Quadrature::Trapezoid)
    }

    /// [`modulate`](Self::modulate) with an explicit quadrature rule. For
    /// `j = p` the kernel vanishes only to first order at the window ends, so the
    /// trapezoid error is `O(dt^2)` there while Simpson stays `O(dt^4)`.
    pub fn modulate_with(
        &self,
        j: usize,
        y: &SampledSignal,
        a: f64,
        b: f64,
        rule: Quadrature,
    ) -> Result<f64, ModFunError> {
        if j > self.vanishing_order() {
            return Err(ModFunError::OrderUnavailable {
                j,
                order: self.vanishing_order(),
            });
        }
        let (ia, ib) = y.grid().window_indices(a, b)?;
        let len = (ib - ia) as f64 * y.grid().dt();
        if (len - self.h).abs() > 1e-9 * self.h {
            return Err(ModFunError::WindowLength { len, h: self.h });
        }
        let kernel = self.sample_derivative(j, ib - ia + 1);
        let product: Vec<f64> = kernel
            .iter()
            .zip(&y.values()[ia..=ib])
            .map(|(k, v)| k * v)
            .collect();
        Ok(integrate_slice(&product, y.grid().dt(), rule))
    }
}

fn falling(n: usize, k: usize) -> f64 {
    ((n - k + 1)..=n).fold(1.0, |acc, v| acc * v as f64)
}

/// A complete family `i = 1..S` sharing `p` and `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModFunSet {
    members: Vec<PolyModFun>,
    p: u32,
}

impl ModFunSet {
    pub fn new(p: u32, size: u32, h: f64) -> Result<Self, ModFunError> {
        let members = (1..=size)
            .map(|i| PolyModFun::new(p, i, size, h))
            .collect::<Result<Vec<_>, _>>()?;
        if members.is_empty() {
            return Err(ModFunError::InvalidFamily { p, size, h });
        }
        Ok(Self { members, p })
    }

    pub fn members(&self) -> &[PolyModFun] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn exponent(&self) -> u32 {
        self.p
    }

    pub fn window(&self) -> f64 {
        self.members[0].h
    }

    /// Vanishing order guaranteed for every member: `p + 1`.
    pub fn min_order(&self) -> usize {
        self.p as usize + 1
    }
}

/// Whether every member of `set` is a modulating function of order `k`.
pub fn check_order(set: &ModFunSet, k: usize) -> bool {
    set.min_order() >= k
}
