//! Pareto bounds, multiplicative gamma process draws, and the prior
//! probability that a local coefficient survives thresholding.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::cumulative_product;
use crate::random::{gamma_rate, std_normal};

/// Quadrature tolerance for the non-shrinkage integral.
pub const QUAD_TOL: f64 = 1e-8;

/// Beyond this point `2(1 − Φ(w))` is below the smallest positive double.
const INTEGRAND_CUTOFF: f64 = 40.0;

/// Pareto with shape `a` and scale `b`, supported on `x ≥ b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoDist {
    shape: f64,
    scale: f64,
}

impl ParetoDist {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!(
                "Pareto needs positive shape and scale, got ({shape}, {scale})"
            )));
        }
        Ok(ParetoDist { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Inverse-CDF transform of a uniform `u ∈ (0, 1]`.
    pub fn quantile_upper(&self, u: f64) -> f64 {
        self.scale * u.powf(-1.0 / self.shape)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // 1 - U lies in (0, 1]
        let u = 1.0 - rng.random::<f64>();
        self.quantile_upper(u)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.scale {
            return f64::NEG_INFINITY;
        }
        self.shape.ln() + self.shape * self.scale.ln() - (self.shape + 1.0) * x.ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.scale {
            0.0
        } else {
            1.0 - (self.scale / x).powf(self.shape)
        }
    }
}

pub fn pareto_sample<R: Rng + ?Sized>(dist: &ParetoDist, rng: &mut R) -> f64 {
    dist.sample(rng)
}

pub fn pareto_logpdf(dist: &ParetoDist, x: f64) -> f64 {
    dist.ln_pdf(x)
}

/// `2(1 − Φ(w))`: probability that a standard normal exceeds `w` in magnitude.
pub fn two_sided_tail(w: f64) -> f64 {
    erfc(w / std::f64::consts::SQRT_2)
}

/// `P(γ ≠ 0 | K) = K⁻¹ ∫₀ᴷ 2(1 − Φ(w)) dw` by adaptive Simpson quadrature.
pub fn prob_nonshrink_given_k(k: f64) -> Result<f64> {
    if !(k > 0.0) || k.is_nan() {
        return Err(Error::invalid(format!("upper bound K must be positive, got {k}")));
    }
    if k.is_infinite() {
        return Ok(0.0);
    }
    let upper = k.min(INTEGRAND_CUTOFF);
    let integral = adaptive_simpson(two_sided_tail, 0.0, upper, QUAD_TOL, 50);
    Ok((integral / k).clamp(f64::MIN_POSITIVE, 1.0))
}

pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Draw `K ~ Pareto(a, b)` repeatedly and map each through
/// [`prob_nonshrink_given_k`].
pub fn marginal_sparsity_distribution<R: Rng + ?Sized>(
    a: f64,
    b: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dist = ParetoDist::new(a, b)?;
    (0..n_draws)
        .map(|_| prob_nonshrink_given_k(dist.sample(rng)))
        .collect()
}

/// A prior draw from the multiplicative gamma process on loadings.
#[derive(Clone, Debug)]
pub struct MgpsDraw {
    pub lambda: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub zeta: DVector<f64>,
    pub tau: DVector<f64>,
}

pub fn mgps_prior_draw<R: Rng + ?Sized>(
    p: usize,
    k: usize,
    rho: f64,
    a1: f64,
    a2: f64,
    rng: &mut R,
) -> MgpsDraw {
    let zeta = DVector::from_iterator(
        k,
        (0..k).map(|h| gamma_rate(rng, if h == 0 { a1 } else { a2 }, 1.0)),
    );
    let tau = cumulative_product(&zeta);
    let phi = DMatrix::from_fn(p, k, |_, _| gamma_rate(rng, rho / 2.0, rho / 2.0));
    let lambda = DMatrix::from_fn(p, k, |i, h| std_normal(rng) / (phi[(i, h)] * tau[h]).sqrt());
    MgpsDraw { lambda, phi, zeta, tau }
}
