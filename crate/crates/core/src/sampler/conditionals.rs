//! Full conditional updates of the Gibbs / Metropolis-within-Gibbs kernel.
//!
//! Each closed-form conditional is exposed both as its distribution (so the
//! moments can be checked against a direct oracle) and as a draw.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{cumulative_product, pair_active, HyperParams};
use crate::priors::ParetoDist;
use crate::random::{gamma_rate, std_normal_vec, uniform};

/// `N(P⁻¹ b, P⁻¹)` held through the Cholesky factor of the precision `P`.
#[derive(Clone, Debug)]
pub struct PrecisionGaussian {
    chol: Cholesky<f64, Dyn>,
    mean: DVector<f64>,
}

impl PrecisionGaussian {
    pub fn new(precision: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let chol = Cholesky::new(precision)
            .ok_or_else(|| Error::Numerical("precision matrix is not positive definite".into()))?;
        let mean = chol.solve(&linear);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite conditional mean".into()));
        }
        Ok(PrecisionGaussian { chol, mean })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + L⁻ᵀ z`, with `P = L Lᵀ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = std_normal_vec(rng, self.dim());
        let offset = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        &self.mean + offset
    }

    /// `(x − mean)ᵀ P (x − mean)`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        (self.chol.l().transpose() * d).norm_squared()
    }
}

/// Conditional of row `l` of `W` (or `Z`): precision `ΛᵀΛ + I`, linear
/// term `Σᵢ x_{i,l} λᵢ`.
pub fn regression_map_row_conditional(
    latent: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    row: usize,
) -> Result<PrecisionGaussian> {
    if latent.nrows() != lambda.nrows() {
        return Err(Error::dim("latent coefficients and loadings differ in probe count"));
    }
    let k = lambda.ncols();
    let precision = lambda.tr_mul(lambda) + DMatrix::identity(k, k);
    let linear = lambda.tr_mul(&latent.column(row));
    PrecisionGaussian::new(precision, linear)
}

/// Draw every row of the `d×k` map given the `p×d` latent matrix.
pub fn update_regression_map<R: Rng + ?Sized>(
    latent: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if latent.nrows() != lambda.nrows() {
        return Err(Error::dim("latent coefficients and loadings differ in probe count"));
    }
    let k = lambda.ncols();
    let d = latent.ncols();
    let precision = lambda.tr_mul(lambda) + DMatrix::identity(k, k);
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::Numerical("ΛᵀΛ + I is not positive definite".into()))?;
    let linear = lambda.tr_mul(latent); // k×d
    let mean = chol.solve(&linear);
    let mut out = DMatrix::zeros(d, k);
    for l in 0..d {
        let z = std_normal_vec(rng, k);
        let offset = chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("positive diagonal");
        out.row_mut(l).copy_from(&(mean.column(l) + offset).transpose());
    }
    Ok(out)
}

/// Everything the loading-row conditional depends on.
pub struct LambdaTerms<'a> {
    /// `yᵢ − Bθᵢ − Cγᵢ`
    pub resid: &'a DVector<f64>,
    pub theta_tilde: &'a DVector<f64>,
    pub gamma_tilde: &'a DVector<f64>,
    pub eta: &'a DMatrix<f64>,
    /// `ηᵀη`
    pub eta_gram: &'a DMatrix<f64>,
    pub w: &'a DMatrix<f64>,
    pub z: &'a DMatrix<f64>,
    /// `WᵀW + ZᵀZ`
    pub map_gram: &'a DMatrix<f64>,
    pub sigma2: f64,
    /// Diagonal of `Dᵢ⁻¹`, i.e. `φ_{ih} τ_h`.
    pub prior_precision: &'a DVector<f64>,
}

/// `λᵢ | – ~ N(V M, V)` with `V⁻¹ = σ⁻²ηᵀη + WᵀW + ZᵀZ + Dᵢ⁻¹` and
/// `M = σ⁻²ηᵀ(yᵢ − Bθᵢ − Cγᵢ) + Wᵀθ̃ᵢ + Zᵀγ̃ᵢ`.
pub fn lambda_conditional(t: &LambdaTerms<'_>) -> Result<PrecisionGaussian> {
    let s = 1.0 / t.sigma2;
    let mut precision = t.eta_gram * s + t.map_gram;
    for h in 0..precision.nrows() {
        precision[(h, h)] += t.prior_precision[h];
    }
    let linear = t.eta.tr_mul(t.resid) * s + t.w.tr_mul(t.theta_tilde) + t.z.tr_mul(t.gamma_tilde);
    PrecisionGaussian::new(precision, linear)
}

pub fn update_lambda_row<R: Rng + ?Sized>(t: &LambdaTerms<'_>, rng: &mut R) -> Result<DVector<f64>> {
    Ok(lambda_conditional(t)?.sample(rng))
}

/// Inputs for the independence Metropolis-Hastings step on a latent
/// coefficient vector (`θ̃ᵢ` with design `B`, or `γ̃ᵢ` with design `C`).
pub struct LatentMhInput<'a> {
    /// Data minus every other mean component.
    pub y_tilde: &'a DVector<f64>,
    pub design: &'a DMatrix<f64>,
    /// `designᵀ design`
    pub gram: &'a DMatrix<f64>,
    /// `W λᵢ` or `Z λᵢ`.
    pub prior_mean: &'a DVector<f64>,
    pub sigma2: f64,
    pub current_latent: &'a DVector<f64>,
    pub current_effective: &'a DVector<f64>,
    pub thresholds: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct MhOutcome {
    pub latent: DVector<f64>,
    pub effective: DVector<f64>,
    pub accepted: bool,
    pub log_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdRule {
    /// Consecutive sin/cos pairs thresholded on their Euclidean norm.
    Pairs,
    /// Each coefficient thresholded on its absolute value.
    Scalar,
}

impl ThresholdRule {
    pub fn apply(self, latent: &DVector<f64>, thresholds: &[f64]) -> DVector<f64> {
        match self {
            ThresholdRule::Pairs => crate::model::threshold_theta_row(latent, thresholds),
            ThresholdRule::Scalar => crate::model::threshold_gamma_row(latent, thresholds),
        }
    }
}

/// Proposal from the non-thresholded model:
/// `N(M(σ⁻²Xᵀỹ + μ), M)`, `M = (σ⁻² XᵀX + I)⁻¹`.
pub fn latent_proposal(input: &LatentMhInput<'_>) -> Result<PrecisionGaussian> {
    let s = 1.0 / input.sigma2;
    let d = input.gram.nrows();
    let precision = input.gram * s + DMatrix::identity(d, d);
    let linear = input.design.tr_mul(input.y_tilde) * s + input.prior_mean;
    PrecisionGaussian::new(precision, linear)
}

/// Log acceptance ratio for moving from the current latent vector to
/// `candidate` (whose thresholded version is `candidate_eff`).
pub fn latent_mh_log_ratio(
    input: &LatentMhInput<'_>,
    proposal: &PrecisionGaussian,
    candidate: &DVector<f64>,
    candidate_eff: &DVector<f64>,
) -> f64 {
    let s = 1.0 / input.sigma2;
    let rss_new = (input.y_tilde - input.design * candidate_eff).norm_squared();
    let rss_old = (input.y_tilde - input.design * input.current_effective).norm_squared();
    let prior_new = (candidate - input.prior_mean).norm_squared();
    let prior_old = (input.current_latent - input.prior_mean).norm_squared();
    let q_new = proposal.quad_form(candidate);
    let q_old = proposal.quad_form(input.current_latent);
    -0.5 * s * (rss_new - rss_old) - 0.5 * (prior_new - prior_old) - 0.5 * (q_old - q_new)
}

fn latent_mh<R: Rng + ?Sized>(input: &LatentMhInput<'_>, rule: ThresholdRule, rng: &mut R) -> Result<MhOutcome> {
    let proposal = latent_proposal(input)?;
    let candidate = proposal.sample(rng);
    let candidate_eff = rule.apply(&candidate, input.thresholds);
    // With nothing thresholded on either side the proposal is the exact
    // full conditional and the ratio is identically one.
    if candidate_eff == candidate && input.current_effective == input.current_latent {
        return Ok(MhOutcome {
            latent: candidate,
            effective: candidate_eff,
            accepted: true,
            log_ratio: 0.0,
        });
    }
    let log_ratio = latent_mh_log_ratio(input, &proposal, &candidate, &candidate_eff);
    if !log_ratio.is_finite() {
        log::warn!("non-finite Metropolis-Hastings ratio; proposal rejected");
        return Ok(reject(input, log_ratio));
    }
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        Ok(MhOutcome {
            latent: candidate,
            effective: candidate_eff,
            accepted: true,
            log_ratio,
        })
    } else {
        Ok(reject(input, log_ratio))
    }
}

fn reject(input: &LatentMhInput<'_>, log_ratio: f64) -> MhOutcome {
    MhOutcome {
        latent: input.current_latent.clone(),
        effective: input.current_effective.clone(),
        accepted: false,
        log_ratio,
    }
}

pub fn update_theta_tilde_mh<R: Rng + ?Sized>(input: &LatentMhInput<'_>, rng: &mut R) -> Result<MhOutcome> {
    latent_mh(input, ThresholdRule::Pairs, rng)
}

pub fn update_gamma_tilde_mh<R: Rng + ?Sized>(input: &LatentMhInput<'_>, rng: &mut R) -> Result<MhOutcome> {
    latent_mh(input, ThresholdRule::Scalar, rng)
}

/// Conditional law of one latent threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdPosterior {
    /// The latent magnitude exceeds the bound: `Unif(0, K)`.
    Uniform { bound: f64 },
    /// `Unif(0, ‖θ̃‖)` with probability `pi_star`, else `Unif(‖θ̃‖, K)`.
    Mixture { pi_star: f64, magnitude: f64, bound: f64 },
}

impl ThresholdPosterior {
    /// `resid_active` / `resid_zeroed` are the residuals with the coefficient
    /// switched on / off, everything else at its current effective value.
    pub fn new(
        magnitude: f64,
        bound: f64,
        resid_active_sq: f64,
        resid_zeroed_sq: f64,
        sigma2: f64,
    ) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::invalid(format!("threshold bound must be positive, got {bound}")));
        }
        if magnitude > bound {
            return Ok(ThresholdPosterior::Uniform { bound });
        }
        let log_a = -0.5 * resid_active_sq / sigma2 + magnitude.ln();
        let log_d = -0.5 * resid_zeroed_sq / sigma2 + (bound - magnitude).ln();
        let pi_star = if log_a == f64::NEG_INFINITY {
            0.0
        } else if log_d == f64::NEG_INFINITY {
            1.0
        } else {
            // A / (A + D) = 1 / (1 + exp(log D − log A))
            1.0 / (1.0 + (log_d - log_a).exp())
        };
        if !pi_star.is_finite() {
            return Err(Error::Numerical("non-finite threshold mixture weight".into()));
        }
        Ok(ThresholdPosterior::Mixture {
            pi_star,
            magnitude,
            bound,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ThresholdPosterior::Uniform { bound } => uniform(rng, 0.0, bound),
            ThresholdPosterior::Mixture {
                pi_star,
                magnitude,
                bound,
            } => {
                let u: f64 = rng.random();
                if u < pi_star {
                    uniform(rng, 0.0, magnitude)
                } else {
                    uniform(rng, magnitude, bound)
                }
            }
        }
    }
}

/// Conditional of `ϖ_{i,m}`. `resid_without_pair` is
/// `yᵢ − B_{−m}θ_{i,−m} − Cγᵢ − ηλᵢ`; `pair_columns` is the T×2 block `B_m`.
pub fn theta_threshold_posterior(
    resid_without_pair: &DVector<f64>,
    pair_columns: &DMatrix<f64>,
    latent_pair: (f64, f64),
    sigma2: f64,
    k_theta: f64,
) -> Result<ThresholdPosterior> {
    let magnitude = latent_pair.0.hypot(latent_pair.1);
    let contribution = pair_columns.column(0) * latent_pair.0 + pair_columns.column(1) * latent_pair.1;
    let active = (resid_without_pair - contribution).norm_squared();
    let zeroed = resid_without_pair.norm_squared();
    ThresholdPosterior::new(magnitude, k_theta, active, zeroed, sigma2)
}

/// Scalar analogue for `ϖ*_{i,l}`; `column` is `C_l`.
pub fn gamma_threshold_posterior(
    resid_without_coef: &DVector<f64>,
    column: &DVector<f64>,
    latent: f64,
    sigma2: f64,
    k_gamma: f64,
) -> Result<ThresholdPosterior> {
    let active = (resid_without_coef - column * latent).norm_squared();
    let zeroed = resid_without_coef.norm_squared();
    ThresholdPosterior::new(latent.abs(), k_gamma, active, zeroed, sigma2)
}

pub fn update_theta_threshold<R: Rng + ?Sized>(
    resid_without_pair: &DVector<f64>,
    pair_columns: &DMatrix<f64>,
    latent_pair: (f64, f64),
    sigma2: f64,
    k_theta: f64,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let post = theta_threshold_posterior(resid_without_pair, pair_columns, latent_pair, sigma2, k_theta)?;
    let w = post.sample(rng);
    Ok((w, pair_active(latent_pair.0, latent_pair.1, w)))
}

pub fn update_gamma_threshold<R: Rng + ?Sized>(
    resid_without_coef: &DVector<f64>,
    column: &DVector<f64>,
    latent: f64,
    sigma2: f64,
    k_gamma: f64,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let post = gamma_threshold_posterior(resid_without_coef, column, latent, sigma2, k_gamma)?;
    let w = post.sample(rng);
    Ok((w, latent.abs() >= w))
}

/// `K | – ~ Pareto(a + n, max{b, max ϖ})` for `n` thresholds.
pub fn pareto_bound_posterior(shape: f64, scale: f64, n_thresholds: usize, max_threshold: f64) -> Result<ParetoDist> {
    ParetoDist::new(shape + n_thresholds as f64, scale.max(max_threshold))
}

/// Draws `(K_θ, K_γ)` given all thresholds.
pub fn update_pareto_bounds<R: Rng + ?Sized>(
    thresholds: &DMatrix<f64>,
    thresholds_star: &DMatrix<f64>,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let max_t = thresholds.iter().copied().fold(0.0, f64::max);
    let max_g = thresholds_star.iter().copied().fold(0.0, f64::max);
    let kt = pareto_bound_posterior(hyper.a_theta, hyper.b_theta, thresholds.len(), max_t)?.sample(rng);
    let kg = pareto_bound_posterior(hyper.a_gamma, hyper.b_gamma, thresholds_star.len(), max_g)?.sample(rng);
    Ok((kt, kg))
}

/// Shape and rate of `σᵢ⁻² | –`.
pub fn sigma_precision_posterior(rss: f64, n_times: usize, hyper: &HyperParams) -> (f64, f64) {
    (hyper.a_sigma + n_times as f64 / 2.0, hyper.b_sigma + rss / 2.0)
}

/// Returns a draw of the precision `σᵢ⁻²`.
pub fn update_sigma<R: Rng + ?Sized>(rss: f64, n_times: usize, hyper: &HyperParams, rng: &mut R) -> f64 {
    let (shape, rate) = sigma_precision_posterior(rss, n_times, hyper);
    gamma_rate(rng, shape, rate)
}

/// `η_j | – ~ N(V M, V)`, `V⁻¹ = I + ΛᵀΣ⁻¹Λ`, `M = ΛᵀΣ⁻¹ r_j`.
pub fn eta_conditional(lambda: &DMatrix<f64>, sigma2: &DVector<f64>, resid_col: &DVector<f64>) -> Result<PrecisionGaussian> {
    let k = lambda.ncols();
    let scaled = scale_rows_by_inverse(lambda, sigma2);
    let precision = DMatrix::identity(k, k) + lambda.tr_mul(&scaled);
    let linear = scaled.tr_mul(resid_col);
    PrecisionGaussian::new(precision, linear)
}

pub fn update_eta<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    sigma2: &DVector<f64>,
    resid_col: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(eta_conditional(lambda, sigma2, resid_col)?.sample(rng))
}

/// `Σ⁻¹ Λ`.
pub(crate) fn scale_rows_by_inverse(lambda: &DMatrix<f64>, sigma2: &DVector<f64>) -> DMatrix<f64> {
    let mut out = lambda.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row /= sigma2[i];
    }
    out
}

/// Shape and rate of `φ_{ih} | –`.
pub fn phi_posterior(lambda_ih: f64, tau_h: f64, rho: f64) -> (f64, f64) {
    ((rho + 1.0) / 2.0, (rho + tau_h * lambda_ih * lambda_ih) / 2.0)
}

/// Shape and rate of `ζ_h | –` (zero-based `h`), given current `φ`, `ζ`.
///
/// The rate sums over columns `l ≥ h` of `τ_l^{(h)} Σᵢ φ_{il} λ²_{il}`, where
/// `τ_l^{(h)}` is `τ_l` with the factor `ζ_h` removed.
pub fn zeta_posterior(
    h: usize,
    lambda: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    zeta: &DVector<f64>,
    a1: f64,
    a2: f64,
) -> (f64, f64) {
    let p = lambda.nrows() as f64;
    let k = lambda.ncols();
    let base = if h == 0 { a1 } else { a2 };
    let shape = base + p * (k - h) as f64 / 2.0;
    let mut tau_minus = 1.0;
    for t in 0..h {
        tau_minus *= zeta[t];
    }
    let mut sum = 0.0;
    for l in h..k {
        if l > h {
            tau_minus *= zeta[l];
        }
        let col: f64 = lambda
            .column(l)
            .iter()
            .zip(phi.column(l).iter())
            .map(|(lam, ph)| ph * lam * lam)
            .sum();
        sum += tau_minus * col;
    }
    (shape, 1.0 + 0.5 * sum)
}

/// One draw of `φ_ih | –`.
pub fn draw_phi<R: Rng + ?Sized>(lambda_ih: f64, tau_h: f64, rho: f64, rng: &mut R) -> f64 {
    let (shape, rate) = phi_posterior(lambda_ih, tau_h, rho);
    gamma_rate(rng, shape, rate)
}

/// One draw of `ζ_h | –` at the given `φ` and `ζ`.
pub fn draw_zeta<R: Rng + ?Sized>(
    h: usize,
    lambda: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    zeta: &DVector<f64>,
    hyper: &HyperParams,
    rng: &mut R,
) -> f64 {
    let (shape, rate) = zeta_posterior(h, lambda, phi, zeta, hyper.a1, hyper.a2);
    gamma_rate(rng, shape, rate)
}

/// Local precisions first, then the column multipliers in order; `τ` is
/// recomputed from the new `ζ`.
pub fn update_mgps<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    zeta: &DVector<f64>,
    hyper: &HyperParams,
    rng: &mut R,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let tau = cumulative_product(zeta);
    let mut new_phi = phi.clone();
    for h in 0..lambda.ncols() {
        for i in 0..lambda.nrows() {
            new_phi[(i, h)] = draw_phi(lambda[(i, h)], tau[h], hyper.rho, rng);
        }
    }
    let mut new_zeta = zeta.clone();
    for h in 0..lambda.ncols() {
        new_zeta[h] = draw_zeta(h, lambda, &new_phi, &new_zeta, hyper, rng);
    }
    let new_tau = cumulative_product(&new_zeta);
    (new_phi, new_zeta, new_tau)
}
