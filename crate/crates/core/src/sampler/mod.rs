//! Posterior simulation: conditional updates, the sweep, and the chain driver.

pub mod chain;
pub mod conditionals;
pub mod prior;
pub mod sweep;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::DesignPair;
use crate::error::{Error, Result};
use crate::model::{
    apply_gamma_thresholds, apply_theta_thresholds, FactorBlock, GammaBlock, HyperParams, ModelState, NoiseAndBounds,
    RegressionMaps, ThetaBlock,
};
use crate::priors::mgps_prior_draw;
use crate::random::{std_normal, substream, uniform, StreamKind};

pub use chain::{run_chain, run_chain_with, ChainOutcome, RunOptions};
pub use prior::{prior_draw, simulate_data};
pub use sweep::{gibbs_sweep, Fault, SweepContext, SweepStats};

/// Whether the latent rhythmic coefficients share a factor structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dependent,
    Independent,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dependent" => Ok(Mode::Dependent),
            "independent" => Ok(Mode::Independent),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Dependent => "dependent",
            Mode::Independent => "independent",
        })
    }
}

/// Rank adaptation: after sweep `start`, with probability
/// `exp(c0 + c1·t)` drop columns whose loadings all lie in `(−ε, ε)`, or add
/// one if there are none.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSchedule {
    pub enabled: bool,
    pub start: u64,
    pub c0: f64,
    pub c1: f64,
    pub epsilon: f64,
    pub min_k: usize,
    pub max_k: usize,
}

impl Default for AdaptSchedule {
    fn default() -> Self {
        AdaptSchedule {
            enabled: true,
            start: 500,
            c0: -1.0,
            c1: -5e-4,
            epsilon: 1e-4,
            min_k: 1,
            max_k: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub n_iter: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    #[serde(default)]
    pub adapt: AdaptSchedule,
    /// Keep `Λ` and `η` at every n-th retained draw; 0 disables.
    #[serde(default = "default_record_every")]
    pub record_lambda_every: u64,
    #[serde(default = "default_true")]
    pub parallel: bool,
    /// Sweeps between checkpoints; 0 disables.
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn default_record_every() -> u64 {
    10
}

fn default_true() -> bool {
    true
}

impl ChainConfig {
    pub fn new(n_iter: u64, burn_in: u64, thin: u64, seed: u64) -> Self {
        ChainConfig {
            n_iter,
            burn_in,
            thin,
            seed,
            adapt: AdaptSchedule::default(),
            record_lambda_every: default_record_every(),
            parallel: true,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::invalid(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        let a = &self.adapt;
        if !(a.epsilon > 0.0) {
            return Err(Error::invalid("adaptation epsilon must be positive"));
        }
        if a.min_k == 0 || a.max_k < a.min_k {
            return Err(Error::invalid("adaptation needs 1 <= min_k <= max_k"));
        }
        if !(a.c0.is_finite() && a.c1.is_finite()) {
            return Err(Error::invalid("adaptation schedule coefficients must be finite"));
        }
        Ok(())
    }

    pub fn retained(&self) -> u64 {
        crate::archive::retained_count(self.n_iter, self.burn_in, self.thin)
    }
}

/// Starting state. Fourier coefficients start at a ridge fit, local terms at
/// zero, noise variances at the row variances and thresholds uniform under
/// the prior scales. Independent mode carries one all-zero factor column.
pub fn initial_state(y: &DMatrix<f64>, designs: &DesignPair, hyper: &HyperParams, mode: Mode, seed: u64) -> Result<ModelState> {
    let p = y.nrows();
    let t = y.ncols();
    if t != designs.n_times() {
        return Err(Error::dim("data and designs differ in time points"));
    }
    let q = designs.n_periods();
    let nl = designs.n_local();
    let mut rng = substream(seed, 0, StreamKind::Init, 0);

    let sigma2 = DVector::from_iterator(
        p,
        (0..p).map(|i| {
            let row = y.row(i);
            let mean = row.mean();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            var.max(1e-3)
        }),
    );

    let btb = designs.b.tr_mul(&designs.b);
    let mut theta_tilde = DMatrix::zeros(p, 2 * q);
    for i in 0..p {
        let s = 1.0 / sigma2[i];
        let prec = &btb * s + DMatrix::identity(2 * q, 2 * q);
        let lin = designs.b.tr_mul(&y.row(i).transpose()) * s;
        let chol = prec
            .cholesky()
            .ok_or_else(|| Error::Numerical("ridge start is not positive definite".into()))?;
        theta_tilde.row_mut(i).copy_from(&chol.solve(&lin).transpose());
    }
    let k_theta = hyper.b_theta;
    let k_gamma = hyper.b_gamma;
    let thresholds = DMatrix::from_fn(p, q, |_, _| uniform(&mut rng, 0.0, k_theta));
    let thresholds_star = DMatrix::from_fn(p, nl, |_, _| uniform(&mut rng, 0.0, k_gamma));
    let theta = apply_theta_thresholds(&theta_tilde, &thresholds)?;
    let gamma_tilde = DMatrix::zeros(p, nl);
    let gamma = apply_gamma_thresholds(&gamma_tilde, &thresholds_star)?;

    let factors = match mode {
        Mode::Dependent => {
            let k = hyper.k_init;
            let draw = mgps_prior_draw(p, k, hyper.rho, hyper.a1, hyper.a2, &mut rng);
            FactorBlock {
                lambda: DMatrix::zeros(p, k),
                eta: DMatrix::from_fn(t, k, |_, _| std_normal(&mut rng)),
                phi: draw.phi,
                zeta: draw.zeta,
                tau: draw.tau,
            }
        }
        Mode::Independent => independent_factors(p, t),
    };
    let k = factors.k();
    let state = ModelState {
        theta: ThetaBlock { theta_tilde, theta, thresholds },
        gamma: GammaBlock { gamma_tilde, gamma, thresholds_star },
        factors,
        maps: RegressionMaps {
            w: DMatrix::zeros(2 * q, k),
            z: DMatrix::zeros(nl, k),
        },
        noise: NoiseAndBounds { sigma2, k_theta, k_gamma },
    };
    state.check_invariants()?;
    Ok(state)
}

/// The fixed factor block of the independent model: one zero column with
/// unit shrinkage parameters.
pub fn independent_factors(p: usize, t: usize) -> FactorBlock {
    FactorBlock {
        lambda: DMatrix::zeros(p, 1),
        eta: DMatrix::zeros(t, 1),
        phi: DMatrix::from_element(p, 1, 1.0),
        zeta: DVector::from_element(1, 1.0),
        tau: DVector::from_element(1, 1.0),
    }
}
