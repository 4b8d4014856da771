//! Fixed design matrices for the periodic and local components.
//!
//! The Fourier block `B` is evaluated on the raw sampling times in hours so
//! that candidate periods can be given in hours. The local block `C` lives on
//! the time axis rescaled to `[0, 1]`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order of the B-spline local basis (cubic).
pub const BSPLINE_ORDER: usize = 4;

/// Sampling times in hours together with their `[0, 1]` rescaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times_hours: Vec<f64>,
    unit_times: Vec<f64>,
}

impl TimeGrid {
    pub fn times_hours(&self) -> &[f64] {
        &self.times_hours
    }

    pub fn unit_times(&self) -> &[f64] {
        &self.unit_times
    }

    pub fn len(&self) -> usize {
        self.times_hours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_hours.is_empty()
    }

    /// Smallest gap between consecutive sampling times.
    pub fn min_spacing(&self) -> f64 {
        self.times_hours
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Map sampling times affinely onto `[0, 1]`, keeping the hours.
pub fn standardize_times(times_hours: &[f64]) -> Result<TimeGrid> {
    if times_hours.len() < 2 {
        return Err(Error::invalid("a time grid needs at least two sampling times"));
    }
    if times_hours.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("sampling times must be finite"));
    }
    if let Some(w) = times_hours.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "sampling times must be strictly increasing (found {} then {})",
            w[0], w[1]
        )));
    }
    let first = times_hours[0];
    let span = times_hours[times_hours.len() - 1] - first;
    let mut unit_times: Vec<f64> = times_hours.iter().map(|t| (t - first) / span).collect();
    // pin the endpoints exactly
    unit_times[0] = 0.0;
    let last = unit_times.len() - 1;
    unit_times[last] = 1.0;
    Ok(TimeGrid {
        times_hours: times_hours.to_vec(),
        unit_times,
    })
}

/// Candidate periods in hours, shortest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PeriodSet(Vec<f64>);

impl PeriodSet {
    pub fn new(periods_hours: Vec<f64>) -> Result<Self> {
        if periods_hours.is_empty() {
            return Err(Error::invalid("at least one candidate period is required"));
        }
        if periods_hours.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::invalid("periods must be positive and finite"));
        }
        if periods_hours.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("periods must be strictly increasing"));
        }
        Ok(PeriodSet(periods_hours))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the period equal to `hours`, if present.
    pub fn position(&self, hours: f64) -> Option<usize> {
        self.0.iter().position(|w| (w - hours).abs() < 1e-9)
    }

    /// Reject periods shorter than twice the grid's smallest spacing.
    ///
    /// A period of exactly twice the spacing is accepted: its sine column is
    /// degenerate on a regular grid, but the cosine column is informative and
    /// the 4 h / 2 h-sampling design depends on it.
    pub fn check_nyquist(&self, grid: &TimeGrid) -> Result<()> {
        let limit = 2.0 * grid.min_spacing();
        for &w in &self.0 {
            if w < limit - 1e-12 {
                return Err(Error::Nyquist { period: w, limit });
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for PeriodSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        PeriodSet::new(v)
    }
}

impl From<PeriodSet> for Vec<f64> {
    fn from(p: PeriodSet) -> Self {
        p.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Bspline,
}

/// The fixed `B` (T×2q) and `C` (T×T̃) matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignPair {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub kernel_kind: KernelKind,
    pub bandwidth: f64,
    /// Kernel centres for the Gaussian basis, the full clamped knot vector
    /// for B-splines.
    pub knots: Vec<f64>,
    pub periods: PeriodSet,
}

impl DesignPair {
    pub fn build(
        grid: &TimeGrid,
        periods: &PeriodSet,
        n_local: usize,
        kind: KernelKind,
        bandwidth: f64,
    ) -> Result<Self> {
        let b = fourier_design(grid, periods)?;
        let (c, knots) = local_design(grid, n_local, kind, bandwidth)?;
        Ok(DesignPair {
            b,
            c,
            kernel_kind: kind,
            bandwidth,
            knots,
            periods: periods.clone(),
        })
    }

    pub fn n_times(&self) -> usize {
        self.b.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn n_local(&self) -> usize {
        self.c.ncols()
    }
}

/// Column `2m` holds `sin(2πt/ω_m)`, column `2m+1` holds `cos(2πt/ω_m)`
/// (zero-based), with `t` in hours.
pub fn fourier_design(grid: &TimeGrid, periods: &PeriodSet) -> Result<DMatrix<f64>> {
    periods.check_nyquist(grid)?;
    let t = grid.times_hours();
    let q = periods.len();
    Ok(DMatrix::from_fn(t.len(), 2 * q, |j, col| {
        let omega = periods.0[col / 2];
        let arg = 2.0 * PI * t[j] / omega;
        if col % 2 == 0 {
            arg.sin()
        } else {
            arg.cos()
        }
    }))
}

/// Local basis on the unit time axis. Returns the matrix and its knots.
pub fn local_design(
    grid: &TimeGrid,
    n_local: usize,
    kind: KernelKind,
    bandwidth: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if n_local == 0 {
        return Err(Error::invalid("the local basis needs at least one function"));
    }
    let u = grid.unit_times();
    match kind {
        KernelKind::Gaussian => {
            if !(bandwidth.is_finite() && bandwidth > 0.0) {
                return Err(Error::invalid(format!(
                    "Gaussian kernel bandwidth must be positive, got {bandwidth}"
                )));
            }
            let centres = kernel_centres(n_local);
            let c = DMatrix::from_fn(u.len(), n_local, |j, l| {
                let d = u[j] - centres[l];
                (-bandwidth * d * d).exp()
            });
            Ok((c, centres))
        }
        KernelKind::Bspline => {
            if n_local < BSPLINE_ORDER {
                return Err(Error::invalid(format!(
                    "a cubic B-spline basis needs at least {BSPLINE_ORDER} functions, got {n_local}"
                )));
            }
            let knots = clamped_knots(n_local);
            let mut c = DMatrix::zeros(u.len(), n_local);
            for (j, &x) in u.iter().enumerate() {
                let (span, vals) = bspline_nonzero(&knots, n_local, x);
                for (r, v) in vals.iter().enumerate() {
                    c[(j, span + 1 - BSPLINE_ORDER + r)] = *v;
                }
            }
            Ok((c, knots))
        }
    }
}

/// Equally spaced centres on `[0, 1]`, endpoints included.
fn kernel_centres(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5];
    }
    (0..n).map(|l| l as f64 / (n - 1) as f64).collect()
}

fn clamped_knots(n_basis: usize) -> Vec<f64> {
    let n_interior = n_basis - BSPLINE_ORDER;
    let mut knots = vec![0.0; BSPLINE_ORDER];
    for j in 1..=n_interior {
        knots.push(j as f64 / (n_interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, BSPLINE_ORDER));
    knots
}

/// Cox-de Boor: the `ORDER` basis functions that are nonzero at `x`, and the
/// knot span index they hang off.
fn bspline_nonzero(knots: &[f64], n_basis: usize, x: f64) -> (usize, [f64; BSPLINE_ORDER]) {
    let degree = BSPLINE_ORDER - 1;
    let span = if x >= knots[n_basis] {
        n_basis - 1
    } else {
        let mut s = degree;
        while s < n_basis - 1 && x >= knots[s + 1] {
            s += 1;
        }
        s
    };
    let mut n = [0.0; BSPLINE_ORDER];
    let mut left = [0.0; BSPLINE_ORDER];
    let mut right = [0.0; BSPLINE_ORDER];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    (span, n)
}
