//! Model parameters, the latent-to-effective coefficient maps, and the
//! Gaussian likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{DesignPair, TimeGrid};
use crate::error::{Error, Result};

/// Rows whose mean is already this close to zero are left untouched by
/// centering, so that re-ingesting centered data is bit-exact.
pub const CENTERED_TOL: f64 = 1e-10;

/// Observed trajectories, one probe per row, row-centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMatrix {
    values: DMatrix<f64>,
    probe_ids: Vec<String>,
    grid: TimeGrid,
}

impl ExpressionMatrix {
    /// Validates shapes and finiteness, then centers every row.
    pub fn new(mut values: DMatrix<f64>, probe_ids: Vec<String>, grid: TimeGrid) -> Result<Self> {
        if values.nrows() != probe_ids.len() {
            return Err(Error::dim(format!(
                "{} rows but {} probe ids",
                values.nrows(),
                probe_ids.len()
            )));
        }
        if values.ncols() != grid.len() {
            return Err(Error::dim(format!(
                "{} columns but {} sampling times",
                values.ncols(),
                grid.len()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::invalid("expression matrix has no probes"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::invalid(format!(
                "non-finite value for probe {} at time index {j}",
                probe_ids[i]
            )));
        }
        for mut row in values.row_iter_mut() {
            let mean = row.mean();
            if mean.abs() > CENTERED_TOL {
                row.add_scalar_mut(-mean);
            }
        }
        Ok(ExpressionMatrix {
            values,
            probe_ids,
            grid,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn probe_ids(&self) -> &[String] {
        &self.probe_ids
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_probes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.values.ncols()
    }
}

/// Periodic coefficients: latent `θ̃`, effective `θ`, pair thresholds `ϖ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaBlock {
    pub theta_tilde: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub thresholds: DMatrix<f64>,
}

/// Local coefficients: latent `γ̃`, effective `γ`, thresholds `ϖ*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaBlock {
    pub gamma_tilde: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub thresholds_star: DMatrix<f64>,
}

/// Loadings, factors and the multiplicative gamma process shrinkage state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorBlock {
    pub lambda: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub zeta: DVector<f64>,
    pub tau: DVector<f64>,
}

impl FactorBlock {
    pub fn k(&self) -> usize {
        self.lambda.ncols()
    }

    /// Recompute `τ_h = ∏_{l≤h} ζ_l`.
    pub fn refresh_tau(&mut self) {
        self.tau = cumulative_product(&self.zeta);
    }
}

pub(crate) fn cumulative_product(v: &DVector<f64>) -> DVector<f64> {
    let mut acc = 1.0;
    DVector::from_iterator(
        v.len(),
        v.iter().map(|z| {
            acc *= z;
            acc
        }),
    )
}

/// Prior-mean maps: `θ̃ᵢ ~ N(W λᵢ, I)`, `γ̃ᵢ ~ N(Z λᵢ, I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMaps {
    pub w: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseAndBounds {
    pub sigma2: DVector<f64>,
    pub k_theta: f64,
    pub k_gamma: f64,
}

/// Prior hyperparameters. Defaults are the dependent-data simulation
/// settings (`a_σ=1, b_σ=0.5, ρ=3, a₁=2.1, a₂=3.1, a_θ=a_γ=1, b_θ=5, b_γ=10`,
/// five starting factors).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub rho: f64,
    pub a1: f64,
    pub a2: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub k_init: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            a_sigma: 1.0,
            b_sigma: 0.5,
            rho: 3.0,
            a1: 2.1,
            a2: 3.1,
            a_theta: 1.0,
            b_theta: 5.0,
            a_gamma: 1.0,
            b_gamma: 10.0,
            k_init: 5,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("rho", self.rho),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a_theta", self.a_theta),
            ("b_theta", self.b_theta),
            ("a_gamma", self.a_gamma),
            ("b_gamma", self.b_gamma),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        if self.k_init == 0 {
            return Err(Error::invalid("hyperparameter k_init must be at least 1"));
        }
        if self.a2 <= 1.0 {
            log::warn!("a2 = {} <= 1: loadings are not shrunk harder in later columns", self.a2);
        }
        Ok(())
    }
}

/// One full MCMC state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub theta: ThetaBlock,
    pub gamma: GammaBlock,
    pub factors: FactorBlock,
    pub maps: RegressionMaps,
    pub noise: NoiseAndBounds,
}

impl ModelState {
    pub fn n_probes(&self) -> usize {
        self.theta.theta.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.theta.thresholds.ncols()
    }

    pub fn n_local(&self) -> usize {
        self.gamma.gamma.ncols()
    }

    pub fn k(&self) -> usize {
        self.factors.k()
    }

    /// Check shapes and the deterministic relations between blocks.
    pub fn check_invariants(&self) -> Result<()> {
        let p = self.n_probes();
        let q = self.n_periods();
        let k = self.k();
        let t = &self.theta;
        let g = &self.gamma;
        let f = &self.factors;
        if t.theta_tilde.shape() != (p, 2 * q) || t.theta.shape() != (p, 2 * q) {
            return Err(Error::dim("theta blocks disagree in shape"));
        }
        if g.gamma_tilde.shape() != g.gamma.shape() || g.thresholds_star.shape() != g.gamma.shape() {
            return Err(Error::dim("gamma blocks disagree in shape"));
        }
        if k == 0 || f.phi.shape() != (p, k) || f.zeta.len() != k || f.tau.len() != k || f.eta.ncols() != k {
            return Err(Error::dim("factor block disagrees with rank"));
        }
        if self.maps.w.shape() != (2 * q, k) || self.maps.z.shape() != (self.n_local(), k) {
            return Err(Error::dim("regression maps disagree with rank"));
        }
        if apply_theta_thresholds(&t.theta_tilde, &t.thresholds)? != t.theta {
            return Err(Error::Numerical("effective theta inconsistent with thresholds".into()));
        }
        if apply_gamma_thresholds(&g.gamma_tilde, &g.thresholds_star)? != g.gamma {
            return Err(Error::Numerical("effective gamma inconsistent with thresholds".into()));
        }
        let tau = cumulative_product(&f.zeta);
        if (tau - &f.tau).abs().max() > 1e-9 * f.tau.abs().max().max(1.0) {
            return Err(Error::Numerical("tau is not the cumulative product of zeta".into()));
        }
        let n = &self.noise;
        if n.sigma2.iter().any(|s| !(*s > 0.0)) || !(n.k_theta > 0.0) || !(n.k_gamma > 0.0) {
            return Err(Error::Numerical("noise variances and bounds must be positive".into()));
        }
        if t.thresholds.iter().any(|v| *v < 0.0 || *v > n.k_theta)
            || g.thresholds_star.iter().any(|v| *v < 0.0 || *v > n.k_gamma)
        {
            return Err(Error::Numerical("threshold outside its uniform support".into()));
        }
        if f.phi.iter().chain(f.zeta.iter()).any(|v| !(*v > 0.0)) {
            return Err(Error::Numerical("shrinkage parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Zero a sin/cos pair jointly when its norm is below the pair threshold.
/// The boundary `‖θ̃‖ = ϖ` is kept.
pub fn apply_theta_thresholds(theta_tilde: &DMatrix<f64>, thresholds: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if theta_tilde.nrows() != thresholds.nrows() || theta_tilde.ncols() != 2 * thresholds.ncols() {
        return Err(Error::dim(format!(
            "theta {:?} does not pair with thresholds {:?}",
            theta_tilde.shape(),
            thresholds.shape()
        )));
    }
    if thresholds.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::invalid("thresholds must be nonnegative"));
    }
    let mut theta = theta_tilde.clone();
    for i in 0..theta.nrows() {
        for m in 0..thresholds.ncols() {
            if !pair_active(theta_tilde[(i, 2 * m)], theta_tilde[(i, 2 * m + 1)], thresholds[(i, m)]) {
                theta[(i, 2 * m)] = 0.0;
                theta[(i, 2 * m + 1)] = 0.0;
            }
        }
    }
    Ok(theta)
}

/// Scalar hard threshold on `|γ̃|`, boundary kept.
pub fn apply_gamma_thresholds(gamma_tilde: &DMatrix<f64>, thresholds_star: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gamma_tilde.shape() != thresholds_star.shape() {
        return Err(Error::dim(format!(
            "gamma {:?} vs thresholds {:?}",
            gamma_tilde.shape(),
            thresholds_star.shape()
        )));
    }
    if thresholds_star.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::invalid("thresholds must be nonnegative"));
    }
    Ok(gamma_tilde.zip_map(thresholds_star, |g, w| if g.abs() >= w { g } else { 0.0 }))
}

#[inline]
pub fn pair_active(sin_coef: f64, cos_coef: f64, threshold: f64) -> bool {
    sin_coef.hypot(cos_coef) >= threshold
}

/// Effective θ row from a latent row and its pair thresholds.
pub(crate) fn threshold_theta_row(tilde: &DVector<f64>, thresholds: &[f64]) -> DVector<f64> {
    let mut out = tilde.clone();
    for (m, &w) in thresholds.iter().enumerate() {
        if !pair_active(tilde[2 * m], tilde[2 * m + 1], w) {
            out[2 * m] = 0.0;
            out[2 * m + 1] = 0.0;
        }
    }
    out
}

pub(crate) fn threshold_gamma_row(tilde: &DVector<f64>, thresholds: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        tilde.len(),
        tilde.iter().zip(thresholds).map(|(&g, &w)| if g.abs() >= w { g } else { 0.0 }),
    )
}

/// `Θ Bᵀ + Γ Cᵀ + Λ ηᵀ`, a p×T matrix.
pub fn fitted_mean(state: &ModelState, designs: &DesignPair) -> Result<DMatrix<f64>> {
    let f = &state.factors;
    if f.lambda.ncols() != f.eta.ncols() {
        return Err(Error::dim(format!(
            "loadings have rank {} but factors have rank {}",
            f.lambda.ncols(),
            f.eta.ncols()
        )));
    }
    if state.theta.theta.ncols() != designs.b.ncols() || state.gamma.gamma.ncols() != designs.c.ncols() {
        return Err(Error::dim("coefficients do not conform to the design matrices"));
    }
    if f.eta.nrows() != designs.n_times() {
        return Err(Error::dim("factor matrix has the wrong number of time points"));
    }
    Ok(&state.theta.theta * designs.b.transpose()
        + &state.gamma.gamma * designs.c.transpose()
        + &f.lambda * f.eta.transpose())
}

/// `Σᵢ log N(yᵢ | fitted row i, σᵢ² I)`.
pub fn log_likelihood(state: &ModelState, data: &DMatrix<f64>, designs: &DesignPair) -> Result<f64> {
    if state.noise.sigma2.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Numerical("residual variances must be positive and finite".into()));
    }
    let mean = fitted_mean(state, designs)?;
    if mean.shape() != data.shape() {
        return Err(Error::dim("data and fitted mean differ in shape"));
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite fitted mean".into()));
    }
    let t = data.ncols() as f64;
    let mut total = 0.0;
    for i in 0..data.nrows() {
        let s2 = state.noise.sigma2[i];
        let rss = (data.row(i) - mean.row(i)).norm_squared();
        total += -0.5 * t * (2.0 * PI * s2).ln() - 0.5 * rss / s2;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{standardize_times, KernelKind, PeriodSet};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn designs() -> DesignPair {
        let t: Vec<f64> = (0..24).map(|j| 2.0 * j as f64).collect();
        let g = standardize_times(&t).unwrap();
        let p = PeriodSet::new(vec![4.0, 6.0, 8.0, 12.0, 24.0]).unwrap();
        DesignPair::build(&g, &p, 10, KernelKind::Gaussian, 25.0).unwrap()
    }

    fn zero_state(p: usize, q: usize, tl: usize, t: usize, k: usize) -> ModelState {
        ModelState {
            theta: ThetaBlock {
                theta_tilde: DMatrix::zeros(p, 2 * q),
                theta: DMatrix::zeros(p, 2 * q),
                thresholds: DMatrix::zeros(p, q),
            },
            gamma: GammaBlock {
                gamma_tilde: DMatrix::zeros(p, tl),
                gamma: DMatrix::zeros(p, tl),
                thresholds_star: DMatrix::zeros(p, tl),
            },
            factors: FactorBlock {
                lambda: DMatrix::zeros(p, k),
                eta: DMatrix::zeros(t, k),
                phi: DMatrix::from_element(p, k, 1.0),
                zeta: DVector::from_element(k, 1.0),
                tau: DVector::from_element(k, 1.0),
            },
            maps: RegressionMaps {
                w: DMatrix::zeros(2 * q, k),
                z: DMatrix::zeros(tl, k),
            },
            noise: NoiseAndBounds {
                sigma2: DVector::from_element(p, 1.0),
                k_theta: 5.0,
                k_gamma: 10.0,
            },
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, p: usize, d: &DesignPair, k: usize) -> ModelState {
        let q = d.n_periods();
        let tl = d.n_local();
        let mut s = zero_state(p, q, tl, d.n_times(), k);
        let mut r = |_: usize, _: usize| rng.random::<f64>() * 2.0 - 1.0;
        s.theta.theta = DMatrix::from_fn(p, 2 * q, &mut r);
        s.gamma.gamma = DMatrix::from_fn(p, tl, &mut r);
        s.factors.lambda = DMatrix::from_fn(p, k, &mut r);
        s.factors.eta = DMatrix::from_fn(d.n_times(), k, &mut r);
        s.noise.sigma2 = DVector::from_fn(p, |_, _| 0.5 + rng.random::<f64>());
        s
    }

    #[test]
    fn theta_pair_boundary_is_kept() {
        let tt = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let thr = DMatrix::from_element(1, 1, 5.0);
        assert_eq!(apply_theta_thresholds(&tt, &thr).unwrap(), tt);
    }

    #[test]
    fn small_theta_pair_is_zeroed() {
        let tt = DMatrix::from_row_slice(1, 2, &[0.1, 0.1]);
        let thr = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(apply_theta_thresholds(&tt, &thr).unwrap(), DMatrix::zeros(1, 2));
    }

    #[test]
    fn negative_threshold_rejected() {
        let tt = DMatrix::zeros(1, 2);
        let thr = DMatrix::from_element(1, 1, -1.0);
        assert!(apply_theta_thresholds(&tt, &thr).is_err());
        assert!(apply_gamma_thresholds(&DMatrix::zeros(1, 1), &thr).is_err());
    }

    #[test]
    fn theta_thresholds_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, q) = (17, 5);
        let tt = DMatrix::from_fn(p, 2 * q, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let thr = DMatrix::from_fn(p, q, |_, _| rng.random::<f64>() * 2.0);
        let got = apply_theta_thresholds(&tt, &thr).unwrap();
        for i in 0..p {
            for m in 0..q {
                let a = tt[(i, 2 * m)];
                let b = tt[(i, 2 * m + 1)];
                let keep = (a * a + b * b).sqrt() >= thr[(i, m)];
                assert_eq!(got[(i, 2 * m)], if keep { a } else { 0.0 });
                assert_eq!(got[(i, 2 * m + 1)], if keep { b } else { 0.0 });
            }
        }
    }

    #[test]
    fn gamma_threshold_examples() {
        let g = DMatrix::from_row_slice(1, 2, &[0.5, -2.0]);
        let w = DMatrix::from_row_slice(1, 2, &[0.5, 3.0]);
        let out = apply_gamma_thresholds(&g, &w).unwrap();
        assert_eq!(out[(0, 0)], 0.5);
        assert_eq!(out[(0, 1)], 0.0);
    }

    #[test]
    fn gamma_thresholds_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = DMatrix::from_fn(9, 7, |_, _| rng.random::<f64>() * 6.0 - 3.0);
        let w = DMatrix::from_fn(9, 7, |_, _| rng.random::<f64>() * 3.0);
        let out = apply_gamma_thresholds(&g, &w).unwrap();
        for i in 0..9 {
            for l in 0..7 {
                let want = if g[(i, l)].abs() >= w[(i, l)] { g[(i, l)] } else { 0.0 };
                assert_eq!(out[(i, l)], want);
            }
        }
    }

    #[test]
    fn zero_state_has_zero_mean() {
        let d = designs();
        let s = zero_state(3, 5, 10, 24, 2);
        assert_eq!(fitted_mean(&s, &d).unwrap(), DMatrix::zeros(3, 24));
    }

    #[test]
    fn single_pair_gives_pure_sinusoid() {
        let d = designs();
        let mut s = zero_state(1, 5, 10, 24, 1);
        s.theta.theta[(0, 8)] = 2.5;
        let mean = fitted_mean(&s, &d).unwrap();
        for j in 0..24 {
            let t = 2.0 * j as f64;
            assert_abs_diff_eq!(mean[(0, j)], 2.5 * (2.0 * PI * t / 24.0).sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn fitted_mean_matches_triple_loop() {
        let d = designs();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_state(&mut rng, 6, &d, 3);
        let mean = fitted_mean(&s, &d).unwrap();
        for i in 0..6 {
            for j in 0..24 {
                let mut acc = 0.0;
                for c in 0..10 {
                    acc += d.b[(j, c)] * s.theta.theta[(i, c)];
                }
                for l in 0..10 {
                    acc += d.c[(j, l)] * s.gamma.gamma[(i, l)];
                }
                for h in 0..3 {
                    acc += s.factors.eta[(j, h)] * s.factors.lambda[(i, h)];
                }
                assert!((acc - mean[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_mismatch_is_an_error() {
        let d = designs();
        let mut s = zero_state(2, 5, 10, 24, 2);
        s.factors.eta = DMatrix::zeros(24, 3);
        assert!(fitted_mean(&s, &d).is_err());
    }

    #[test]
    fn likelihood_at_the_mode() {
        let d = designs();
        let s = zero_state(4, 5, 10, 24, 1);
        let y = DMatrix::zeros(4, 24);
        let ll = log_likelihood(&s, &y, &d).unwrap();
        assert_abs_diff_eq!(ll, -(4.0 * 24.0 / 2.0) * (2.0 * PI).ln(), epsilon = 1e-10);
    }

    #[test]
    fn likelihood_single_cell() {
        let t = standardize_times(&[0.0, 12.0]).unwrap();
        let p = PeriodSet::new(vec![24.0]).unwrap();
        let d = DesignPair::build(&t, &p, 1, KernelKind::Gaussian, 1.0).unwrap();
        let s = zero_state(1, 1, 1, 2, 1);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let ll = log_likelihood(&s, &y, &d).unwrap();
        // two cells: one at y=1, one at y=0
        let want = (-0.5 * (2.0 * PI).ln() - 0.5) + (-0.5 * (2.0 * PI).ln());
        assert_abs_diff_eq!(ll, want, epsilon = 1e-14);
    }

    #[test]
    fn likelihood_matches_scalar_density_oracle() {
        let d = designs();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = random_state(&mut rng, 5, &d, 2);
        let y = DMatrix::from_fn(5, 24, |_, _| rng.random::<f64>() * 3.0 - 1.5);
        let mean = fitted_mean(&s, &d).unwrap();
        let mut want = 0.0;
        for i in 0..5 {
            let sd = s.noise.sigma2[i].sqrt();
            for j in 0..24 {
                let z = (y[(i, j)] - mean[(i, j)]) / sd;
                want += (-0.5 * z * z).exp().ln() - (sd * (2.0 * PI).sqrt()).ln();
            }
        }
        assert!((log_likelihood(&s, &y, &d).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn likelihood_peaks_at_residual_mle() {
        let d = designs();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = random_state(&mut rng, 1, &d, 1);
        let y = DMatrix::from_fn(1, 24, |_, _| rng.random::<f64>() * 3.0 - 1.5);
        let mle = (y.row(0) - fitted_mean(&s, &d).unwrap().row(0)).norm_squared() / 24.0;
        let mut prev = f64::INFINITY;
        for f in [1.0, 1.5, 2.0, 4.0, 8.0] {
            s.noise.sigma2[0] = mle * f;
            let ll = log_likelihood(&s, &y, &d).unwrap();
            assert!(ll < prev || f == 1.0);
            prev = ll;
        }
        let mut prev = f64::INFINITY;
        for f in [1.0, 0.7, 0.5, 0.25] {
            s.noise.sigma2[0] = mle * f;
            let ll = log_likelihood(&s, &y, &d).unwrap();
            assert!(ll < prev || f == 1.0);
            prev = ll;
        }
    }

    #[test]
    fn nonfinite_parameters_rejected() {
        let d = designs();
        let mut s = zero_state(1, 5, 10, 24, 1);
        s.noise.sigma2[0] = f64::NAN;
        assert!(log_likelihood(&s, &DMatrix::zeros(1, 24), &d).is_err());
    }

    #[test]
    fn centering_is_idempotent() {
        let g = standardize_times(&[0.0, 1.0, 2.0]).unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 4.0, -1.0, 0.3, 7.0]);
        let e = ExpressionMatrix::new(m, vec!["a".into(), "b".into()], g.clone()).unwrap();
        for r in e.values().row_iter() {
            assert!(r.mean().abs() < 1e-12);
        }
        let again = ExpressionMatrix::new(e.values().clone(), e.probe_ids().to_vec(), g).unwrap();
        assert_eq!(again, e);
    }

    proptest::proptest! {
        #[test]
        fn thresholding_is_idempotent_and_monotone(
            vals in proptest::collection::vec(-3.0f64..3.0, 8),
            thr in proptest::collection::vec(0.0f64..3.0, 4),
            bump in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            let tt = DMatrix::from_row_slice(1, 8, &vals);
            let w = DMatrix::from_row_slice(1, 4, &thr);
            let once = apply_theta_thresholds(&tt, &w).unwrap();
            let twice = apply_theta_thresholds(&once, &w).unwrap();
            proptest::prop_assert_eq!(&once, &twice);
            let higher = DMatrix::from_iterator(1, 4, thr.iter().zip(&bump).map(|(a, b)| a + b));
            let raised = apply_theta_thresholds(&tt, &higher).unwrap();
            for c in 0..8 {
                proptest::prop_assert!(once[(0, c)] != 0.0 || raised[(0, c)] == 0.0);
            }
            // pairs are zeroed jointly
            for m in 0..4 {
                let zeros = (once[(0, 2 * m)] == 0.0) as u8 + (once[(0, 2 * m + 1)] == 0.0) as u8;
                proptest::prop_assert!(zeros != 1 || vals[2 * m] == 0.0 || vals[2 * m + 1] == 0.0);
            }
        }
    }
}
