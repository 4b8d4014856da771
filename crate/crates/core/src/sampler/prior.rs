//! Forward simulation from the prior and the likelihood.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{independent_factors, Mode};
use crate::basis::DesignPair;
use crate::error::Result;
use crate::model::{
    apply_gamma_thresholds, apply_theta_thresholds, fitted_mean, FactorBlock, GammaBlock, HyperParams, ModelState,
    NoiseAndBounds, RegressionMaps, ThetaBlock,
};
use crate::priors::{mgps_prior_draw, ParetoDist};
use crate::random::{gamma_rate, std_normal, uniform};

/// A complete state drawn from the joint prior with `k` factors. In
/// independent mode the factor block is the fixed zero column and the latent
/// coefficients are centred at zero.
pub fn prior_draw<R: Rng + ?Sized>(
    p: usize,
    designs: &DesignPair,
    hyper: &HyperParams,
    mode: Mode,
    k: usize,
    rng: &mut R,
) -> Result<ModelState> {
    hyper.validate()?;
    let t = designs.n_times();
    let q = designs.n_periods();
    let nl = designs.n_local();
    let k_theta = ParetoDist::new(hyper.a_theta, hyper.b_theta)?.sample(rng);
    let k_gamma = ParetoDist::new(hyper.a_gamma, hyper.b_gamma)?.sample(rng);
    let thresholds = DMatrix::from_fn(p, q, |_, _| uniform(rng, 0.0, k_theta));
    let thresholds_star = DMatrix::from_fn(p, nl, |_, _| uniform(rng, 0.0, k_gamma));
    let sigma2 = DVector::from_fn(p, |_, _| 1.0 / gamma_rate(rng, hyper.a_sigma, hyper.b_sigma));

    let (factors, maps) = match mode {
        Mode::Dependent => {
            let draw = mgps_prior_draw(p, k, hyper.rho, hyper.a1, hyper.a2, rng);
            let eta = DMatrix::from_fn(t, k, |_, _| std_normal(rng));
            let w = DMatrix::from_fn(2 * q, k, |_, _| std_normal(rng));
            let z = DMatrix::from_fn(nl, k, |_, _| std_normal(rng));
            (
                FactorBlock {
                    lambda: draw.lambda,
                    eta,
                    phi: draw.phi,
                    zeta: draw.zeta,
                    tau: draw.tau,
                },
                RegressionMaps { w, z },
            )
        }
        Mode::Independent => (
            independent_factors(p, t),
            RegressionMaps {
                w: DMatrix::zeros(2 * q, 1),
                z: DMatrix::zeros(nl, 1),
            },
        ),
    };
    let theta_mean = &factors.lambda * maps.w.transpose();
    let gamma_mean = &factors.lambda * maps.z.transpose();
    let theta_tilde = theta_mean.map(|m| m + std_normal(rng));
    let gamma_tilde = gamma_mean.map(|m| m + std_normal(rng));
    let theta = apply_theta_thresholds(&theta_tilde, &thresholds)?;
    let gamma = apply_gamma_thresholds(&gamma_tilde, &thresholds_star)?;
    Ok(ModelState {
        theta: ThetaBlock { theta_tilde, theta, thresholds },
        gamma: GammaBlock { gamma_tilde, gamma, thresholds_star },
        factors,
        maps,
        noise: NoiseAndBounds { sigma2, k_theta, k_gamma },
    })
}

/// `yᵢ ~ N(Bθᵢ + Cγᵢ + ηλᵢ, σᵢ² I)`.
pub fn simulate_data<R: Rng + ?Sized>(state: &ModelState, designs: &DesignPair, rng: &mut R) -> Result<DMatrix<f64>> {
    let mean = fitted_mean(state, designs)?;
    let sd = state.noise.sigma2.map(f64::sqrt);
    Ok(DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| mean[(i, j)] + sd[i] * std_normal(rng)))
}
