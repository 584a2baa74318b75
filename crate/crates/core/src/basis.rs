//! Polynomial basis families used to expand the unknown states and the
//! disturbance inside each window, and the Gram matrix `Theta` pairing them
//! with a modulating-function family.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modfun::ModFunSet;
use crate::signals::{integrate_slice, Quadrature, SampledSignal, SignalError, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("basis index {j} is outside 1..={size}")]
    IndexOutOfRange { j: usize, size: usize },
    #[error("invalid basis: size {size}, window {h}")]
    InvalidBasis { size: usize, h: f64 },
    #[error("window length {h} is not a multiple of dt = {dt}")]
    WindowMisaligned { h: f64, dt: f64 },
    #[error("basis window {basis} differs from modulating-function window {modfun}")]
    WindowMismatch { basis: f64, modfun: f64 },
    #[error("{got} coefficients supplied for a basis of size {size}")]
    CoefficientCount { got: usize, size: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// `tau^(j-1)`
    MonomialRaw,
    /// `(tau / h)^(j-1)`
    #[default]
    MonomialScaled,
}

/// `M` monomials in window-local time `tau in [0, h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisFamily {
    kind: BasisKind,
    size: usize,
    h: f64,
}

impl BasisFamily {
    pub fn new(kind: BasisKind, size: usize, h: f64) -> Result<Self, BasisError> {
        if size == 0 || !(h > 0.0 && h.is_finite()) {
            return Err(BasisError::InvalidBasis { size, h });
        }
        Ok(Self { kind, size, h })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn window(&self) -> f64 {
        self.h
    }

    /// `alpha_j(tau)`, 1-based `j`.
    pub fn eval(&self, j: usize, tau: f64) -> Result<f64, BasisError> {
        if j == 0 || j > self.size {
            return Err(BasisError::IndexOutOfRange { j, size: self.size });
        }
        Ok(self.eval_unchecked(j - 1, tau))
    }

    fn eval_unchecked(&self, power: usize, tau: f64) -> f64 {
        let x = match self.kind {
            BasisKind::MonomialRaw => tau,
            BasisKind::MonomialScaled => tau / self.h,
        };
        x.powi(power as i32)
    }

    /// `points x M` matrix of basis samples on the local grid.
    pub fn sample(&self, points: usize) -> DMatrix<f64> {
        let step = self.h / (points - 1) as f64;
        DMatrix::from_fn(points, self.size, |m, j| {
            self.eval_unchecked(j, m as f64 * step)
        })
    }

    /// Factor `c_j` with `alpha_j^raw = c_j * alpha_j^self`.
    fn raw_scale(&self, j: usize) -> f64 {
        match self.kind {
            BasisKind::MonomialRaw => 1.0,
            BasisKind::MonomialScaled => self.h.powi(j as i32),
        }
    }

    /// Converts coefficients expressed in this family to the raw-monomial
    /// convention `sum a_j tau^(j-1)`.
    pub fn to_raw_coefficients(&self, coeffs: &[f64]) -> Vec<f64> {
        coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c / self.raw_scale(j))
            .collect()
    }

    /// Inverse of [`BasisFamily::to_raw_coefficients`].
    pub fn from_raw_coefficients(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, c)| c * self.raw_scale(j))
            .collect()
    }

    /// Value of `sum coeffs[j] alpha_j(tau)`.
    pub fn combine(&self, coeffs: &[f64], tau: f64) -> f64 {
        // Horner in the family's own variable.
        let x = match self.kind {
            BasisKind::MonomialRaw => tau,
            BasisKind::MonomialScaled => tau / self.h,
        };
        coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Pointwise `sum_j coeffs[j] alpha_j(t - origin)` on every point of `grid`.
pub fn reconstruct(
    coeffs: &[f64],
    basis: &BasisFamily,
    grid: &TimeGrid,
    origin: f64,
) -> Result<SampledSignal, BasisError> {
    if coeffs.len() != basis.len() {
        return Err(BasisError::CoefficientCount {
            got: coeffs.len(),
            size: basis.len(),
        });
    }
    Ok(SampledSignal::from_fn(*grid, |t| {
        basis.combine(coeffs, t - origin)
    })?)
}

/// `Theta[i][j] = <phi_i, alpha_j>` over one window, plus its condition number.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    condition: f64,
}

impl GramMatrix {
    pub fn from_entries(entries: DMatrix<f64>) -> Self {
        let condition = condition_number(&entries);
        Self { entries, condition }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Ratio of the extreme singular values (infinite when rank deficient).
    pub fn condition(&self) -> f64 {
        self.condition
    }
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Number of samples `h / dt + 1` in a window, if `h` is a multiple of `dt`.
pub(crate) fn window_points(h: f64, dt: f64) -> Result<usize, BasisError> {
    let steps = h / dt;
    let rounded = steps.round();
    if rounded < 1.0 || (steps - rounded).abs() > 1e-9 * rounded {
        return Err(BasisError::WindowMisaligned { h, dt });
    }
    Ok(rounded as usize + 1)
}

/// Assembles `Theta` on a window sampled with step `dt`.
pub fn assemble_gram(
    set: &ModFunSet,
    basis: &BasisFamily,
    dt: f64,
) -> Result<GramMatrix, BasisError> {
    if (set.window() - basis.window()).abs() > 1e-12 * basis.window() {
        return Err(BasisError::WindowMismatch {
            basis: basis.window(),
            modfun: set.window(),
        });
    }
    let points = window_points(basis.window(), dt)?;
    let samples = basis.sample(points);
    let mut entries = DMatrix::zeros(set.len(), basis.len());
    for (i, f) in set.members().iter().enumerate() {
        let phi = f.sample_derivative(0, points);
        for j in 0..basis.len() {
            let product: Vec<f64> = phi
                .iter()
                .zip(samples.column(j).iter())
                .map(|(a, b)| a * b)
                .collect();
            entries[(i, j)] = integrate_slice(&product, dt, Quadrature::Trapezoid);
        }
    }
    Ok(GramMatrix::from_entries(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::make_grid;

    #[test]
    fn eval_examples() {
        let raw = BasisFamily::new(BasisKind::MonomialRaw, 4, 3.0).unwrap();
        assert_eq!(raw.eval(1, 1.7).unwrap(), 1.0);
        assert_eq!(raw.eval(3, 2.0).unwrap(), 4.0);
        let scaled = BasisFamily::new(BasisKind::MonomialScaled, 4, 3.0).unwrap();
        assert_eq!(scaled.eval(3, 3.0).unwrap(), 1.0);
        assert!(matches!(
            raw.eval(5, 0.0),
            Err(BasisError::IndexOutOfRange { j: 5, size: 4 })
        ));
        assert!(raw.eval(0, 0.0).is_err());
    }

    #[test]
    fn reconstruct_examples() {
        let b = BasisFamily::new(BasisKind::MonomialRaw, 3, 2.0).unwrap();
        let g = make_grid(0.0, 2.0, 0.5).unwrap();
        let one = reconstruct(&[1.0, 0.0, 0.0], &b, &g, 0.0).unwrap();
        assert!(one.values().iter().all(|&v| v == 1.0));
        let zero = reconstruct(&[0.0; 3], &b, &g, 0.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let poly = reconstruct(&[1.0, 2.0, 3.0], &b, &g, 0.0).unwrap();
        assert_eq!(*poly.values().last().unwrap(), 17.0);
        assert!(reconstruct(&[1.0], &b, &g, 0.0).is_err());
    }

    #[test]
    fn single_entry_gram_is_plain_integral() {
        let set = ModFunSet::new(2, 1, 1.0).unwrap();
        let b = BasisFamily::new(BasisKind::MonomialRaw, 1, 1.0).unwrap();
        let theta = assemble_gram(&set, &b, 1e-3).unwrap();
        let v = theta.entries()[(0, 0)];
        assert!(v.is_finite() && v > 0.0);
        assert_eq!(theta.condition(), 1.0);
    }

    #[test]
    fn gram_matches_refined_quadrature() {
        let set = ModFunSet::new(2, 2, 1.0).unwrap();
        let b = BasisFamily::new(BasisKind::MonomialScaled, 2, 1.0).unwrap();
        let coarse = assemble_gram(&set, &b, 1e-3).unwrap();
        let fine = assemble_gram(&set, &b, 1e-5).unwrap();
        for (c, f) in coarse.entries().iter().zip(fine.entries().iter()) {
            assert!(((c - f) / f).abs() < 1e-6);
        }
    }

    #[test]
    fn scaled_columns_follow_power_rule() {
        let h = 2.5;
        let set = ModFunSet::new(2, 6, h).unwrap();
        let raw = BasisFamily::new(BasisKind::MonomialRaw, 5, h).unwrap();
        let scaled = BasisFamily::new(BasisKind::MonomialScaled, 5, h).unwrap();
        let tr = assemble_gram(&set, &raw, 1e-3).unwrap();
        let ts = assemble_gram(&set, &scaled, 1e-3).unwrap();
        for j in 0..5 {
            for i in 0..6 {
                let expected = tr.entries()[(i, j)] / h.powi(j as i32);
                let got = ts.entries()[(i, j)];
                assert!(((got - expected) / expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coefficient_conversion_preserves_signal() {
        let h = 4.0;
        let scaled = BasisFamily::new(BasisKind::MonomialScaled, 4, h).unwrap();
        let raw = BasisFamily::new(BasisKind::MonomialRaw, 4, h).unwrap();
        let a = [0.3, -1.2, 2.0, 0.7];
        let r = scaled.to_raw_coefficients(&a);
        for tau in [0.0, 1.3, 4.0] {
            let u = scaled.combine(&a, tau);
            let v = raw.combine(&r, tau);
            assert!((u - v).abs() < 1e-10 * (1.0 + u.abs()));
        }
        let back = scaled.from_raw_coefficients(&r);
        assert!(a.iter().zip(&back).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn gram_errors() {
        let set = ModFunSet::new(2, 2, 1.0).unwrap();
        let b = BasisFamily::new(BasisKind::MonomialRaw, 2, 2.0).unwrap();
        assert!(matches!(
            assemble_gram(&set, &b, 1e-3),
            Err(BasisError::WindowMismatch { .. })
        ));
        let b = BasisFamily::new(BasisKind::MonomialRaw, 2, 1.0).unwrap();
        assert!(matches!(
            assemble_gram(&set, &b, 0.3),
            Err(BasisError::WindowMisaligned { .. })
        ));
    }
}
