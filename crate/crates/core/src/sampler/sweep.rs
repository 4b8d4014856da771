//! One full Gibbs sweep over every block of the model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::conditionals::{
    gamma_threshold_posterior, sigma_precision_posterior, theta_threshold_posterior, update_eta, update_gamma_tilde_mh, update_mgps,
    update_pareto_bounds, update_regression_map, update_sigma, update_theta_tilde_mh, LambdaTerms, LatentMhInput,
};
use super::{AdaptSchedule, Mode};
use crate::basis::DesignPair;
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelState};
use crate::random::{gamma_rate, std_normal, substream, StreamKind};

/// Fixed inputs shared by every sweep of a chain.
pub struct SweepContext<'a> {
    pub y: &'a DMatrix<f64>,
    pub designs: &'a DesignPair,
    pub hyper: &'a HyperParams,
    pub mode: Mode,
    pub seed: u64,
    pub parallel: bool,
    pub adapt: Option<AdaptSchedule>,
    fault: Option<Fault>,
    freeze_thresholds: bool,
    btb: DMatrix<f64>,
    ctc: DMatrix<f64>,
}

impl<'a> SweepContext<'a> {
    pub fn new(
        y: &'a DMatrix<f64>,
        designs: &'a DesignPair,
        hyper: &'a HyperParams,
        mode: Mode,
        seed: u64,
        parallel: bool,
        adapt: Option<AdaptSchedule>,
    ) -> Result<Self> {
        if y.ncols() != designs.n_times() {
            return Err(Error::dim(format!(
                "data has {} time points, designs have {}",
                y.ncols(),
                designs.n_times()
            )));
        }
        hyper.validate()?;
        Ok(SweepContext {
            y,
            designs,
            hyper,
            mode,
            seed,
            parallel,
            adapt,
            fault: None,
            freeze_thresholds: false,
            btb: designs.b.tr_mul(&designs.b),
            ctc: designs.c.tr_mul(&designs.c),
        })
    }

    /// Deliberately corrupts one update; used to check that the joint
    /// distribution test detects a broken kernel.
    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    /// Keeps every threshold and both bounds at their current values.
    pub fn with_frozen_thresholds(mut self) -> Self {
        self.freeze_thresholds = true;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The rate of the noise precision conditional is halved.
    HalveSigmaRate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub theta_accepted: u64,
    pub theta_proposed: u64,
    pub gamma_accepted: u64,
    pub gamma_proposed: u64,
    pub rank_changed: bool,
}

fn map_indices<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn collect_rows<T, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indices(n, parallel, f).into_iter().collect()
}

fn row_vec(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Mean components `ΘBᵀ`, `ΓCᵀ`, `Ληᵀ` kept current during a sweep.
struct Components {
    fourier: DMatrix<f64>,
    local: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl Components {
    fn new(state: &ModelState, designs: &DesignPair) -> Self {
        Components {
            fourier: &state.theta.theta * designs.b.transpose(),
            local: &state.gamma.gamma * designs.c.transpose(),
            factor: &state.factors.lambda * state.factors.eta.transpose(),
        }
    }
}

/// Advance `state` by one sweep. `sweep` is the 1-based sweep index and
/// keys every random substream used inside.
pub fn gibbs_sweep(state: &mut ModelState, ctx: &SweepContext<'_>, sweep: u64) -> Result<SweepStats> {
    let p = state.n_probes();
    if ctx.y.nrows() != p {
        return Err(Error::dim("data and state differ in probe count"));
    }
    let designs = ctx.designs;
    let seed = ctx.seed;
    let par = ctx.parallel;
    let mut stats = SweepStats::default();
    let mut comp = Components::new(state, designs);

    if ctx.mode == Mode::Dependent {
        // regression maps
        let lambda = &state.factors.lambda;
        state.maps.w = update_regression_map(
            &state.theta.theta_tilde,
            lambda,
            &mut substream(seed, sweep, StreamKind::RegressionW, 0),
        )?;
        state.maps.z = update_regression_map(
            &state.gamma.gamma_tilde,
            lambda,
            &mut substream(seed, sweep, StreamKind::RegressionZ, 0),
        )?;

        // loadings
        let eta = &state.factors.eta;
        let eta_gram = eta.tr_mul(eta);
        let map_gram = state.maps.w.tr_mul(&state.maps.w) + state.maps.z.tr_mul(&state.maps.z);
        let rows = {
            let st = &*state;
            let comp = &comp;
            collect_rows(p, par, |i| {
                let resid = row_vec(ctx.y, i) - row_vec(&comp.fourier, i) - row_vec(&comp.local, i);
                let tt = row_vec(&st.theta.theta_tilde, i);
                let gt = row_vec(&st.gamma.gamma_tilde, i);
                let prior_precision = row_vec(&st.factors.phi, i).component_mul(&st.factors.tau);
                let terms = LambdaTerms {
                    resid: &resid,
                    theta_tilde: &tt,
                    gamma_tilde: &gt,
                    eta: &st.factors.eta,
                    eta_gram: &eta_gram,
                    w: &st.maps.w,
                    z: &st.maps.z,
                    map_gram: &map_gram,
                    sigma2: st.noise.sigma2[i],
                    prior_precision: &prior_precision,
                };
                super::conditionals::update_lambda_row(&terms, &mut substream(seed, sweep, StreamKind::Lambda, i as u64))
            })?
        };
        for (i, r) in rows.into_iter().enumerate() {
            state.factors.lambda.row_mut(i).copy_from(&r.transpose());
        }
        comp.factor = &state.factors.lambda * state.factors.eta.transpose();
    }

    // latent Fourier coefficients
    let outcomes = {
        let st = &*state;
        let comp = &comp;
        collect_rows(p, par, |i| {
            let y_tilde = row_vec(ctx.y, i) - row_vec(&comp.local, i) - row_vec(&comp.factor, i);
            let prior_mean = &st.maps.w * row_vec(&st.factors.lambda, i);
            let cur = row_vec(&st.theta.theta_tilde, i);
            let eff = row_vec(&st.theta.theta, i);
            let thr: Vec<f64> = st.theta.thresholds.row(i).iter().copied().collect();
            let input = LatentMhInput {
                y_tilde: &y_tilde,
                design: &designs.b,
                gram: &ctx.btb,
                prior_mean: &prior_mean,
                sigma2: st.noise.sigma2[i],
                current_latent: &cur,
                current_effective: &eff,
                thresholds: &thr,
            };
            update_theta_tilde_mh(&input, &mut substream(seed, sweep, StreamKind::ThetaMh, i as u64))
        })?
    };
    for (i, o) in outcomes.into_iter().enumerate() {
        stats.theta_proposed += 1;
        stats.theta_accepted += o.accepted as u64;
        state.theta.theta_tilde.row_mut(i).copy_from(&o.latent.transpose());
        state.theta.theta.row_mut(i).copy_from(&o.effective.transpose());
    }
    comp.fourier = &state.theta.theta * designs.b.transpose();

    // latent local coefficients
    let outcomes = {
        let st = &*state;
        let comp = &comp;
        collect_rows(p, par, |i| {
            let y_tilde = row_vec(ctx.y, i) - row_vec(&comp.fourier, i) - row_vec(&comp.factor, i);
            let prior_mean = &st.maps.z * row_vec(&st.factors.lambda, i);
            let cur = row_vec(&st.gamma.gamma_tilde, i);
            let eff = row_vec(&st.gamma.gamma, i);
            let thr: Vec<f64> = st.gamma.thresholds_star.row(i).iter().copied().collect();
            let input = LatentMhInput {
                y_tilde: &y_tilde,
                design: &designs.c,
                gram: &ctx.ctc,
                prior_mean: &prior_mean,
                sigma2: st.noise.sigma2[i],
                current_latent: &cur,
                current_effective: &eff,
                thresholds: &thr,
            };
            update_gamma_tilde_mh(&input, &mut substream(seed, sweep, StreamKind::GammaMh, i as u64))
        })?
    };
    for (i, o) in outcomes.into_iter().enumerate() {
        stats.gamma_proposed += 1;
        stats.gamma_accepted += o.accepted as u64;
        state.gamma.gamma_tilde.row_mut(i).copy_from(&o.latent.transpose());
        state.gamma.gamma.row_mut(i).copy_from(&o.effective.transpose());
    }
    comp.local = &state.gamma.gamma * designs.c.transpose();

    if !ctx.freeze_thresholds {
        update_thresholds(state, ctx, &mut comp, sweep)?;
    }

    // noise variances
    let t = designs.n_times();
    let precisions = {
        let comp = &comp;
        map_indices(p, par, |i| {
            let resid = row_vec(ctx.y, i) - row_vec(&comp.fourier, i) - row_vec(&comp.local, i) - row_vec(&comp.factor, i);
            let mut rng = substream(seed, sweep, StreamKind::Sigma, i as u64);
            match ctx.fault {
                Some(Fault::HalveSigmaRate) => {
                    let (shape, rate) = sigma_precision_posterior(resid.norm_squared(), t, ctx.hyper);
                    gamma_rate(&mut rng, shape, rate / 2.0)
                }
                None => update_sigma(resid.norm_squared(), t, ctx.hyper, &mut rng),
            }
        })
    };
    for (i, prec) in precisions.into_iter().enumerate() {
        if !(prec > 0.0 && prec.is_finite()) {
            return Err(Error::Numerical(format!("noise precision draw {prec} for probe {i}")));
        }
        state.noise.sigma2[i] = 1.0 / prec;
    }

    if ctx.mode == Mode::Dependent {
        // latent factors
        let cols = {
            let st = &*state;
            let comp = &comp;
            collect_rows(t, par, |j| {
                let resid: DVector<f64> = ctx.y.column(j) - comp.fourier.column(j) - comp.local.column(j);
                update_eta(
                    &st.factors.lambda,
                    &st.noise.sigma2,
                    &resid,
                    &mut substream(seed, sweep, StreamKind::Eta, j as u64),
                )
            })?
        };
        for (j, e) in cols.into_iter().enumerate() {
            state.factors.eta.row_mut(j).copy_from(&e.transpose());
        }

        // shrinkage parameters
        let f = &mut state.factors;
        let (phi, zeta, tau) = update_mgps(
            &f.lambda,
            &f.phi,
            &f.zeta,
            ctx.hyper,
            &mut substream(seed, sweep, StreamKind::Mgps, 0),
        );
        f.phi = phi;
        f.zeta = zeta;
        f.tau = tau;

        if let Some(schedule) = ctx.adapt {
            stats.rank_changed = adapt_rank(state, ctx, &schedule, sweep)?;
        }
    }
    Ok(stats)
}

/// Fourier thresholds (sequential over pairs within a probe), local
/// thresholds, then both bounds.
fn update_thresholds(state: &mut ModelState, ctx: &SweepContext<'_>, comp: &mut Components, sweep: u64) -> Result<()> {
    let p = state.n_probes();
    let designs = ctx.designs;
    let seed = ctx.seed;
    let par = ctx.parallel;
    let q = state.n_periods();
    let rows = {
        let st = &*state;
        let comp = &*comp;
        collect_rows(p, par, |i| {
            let mut rng = substream(seed, sweep, StreamKind::ThetaThreshold, i as u64);
            let mut resid = row_vec(ctx.y, i) - row_vec(&comp.fourier, i) - row_vec(&comp.local, i) - row_vec(&comp.factor, i);
            let mut thr = vec![0.0; q];
            let mut eff = row_vec(&st.theta.theta, i);
            let sigma2 = st.noise.sigma2[i];
            for m in 0..q {
                let cols = designs.b.columns(2 * m, 2).into_owned();
                resid += &cols * eff.rows(2 * m, 2);
                let pair = (st.theta.theta_tilde[(i, 2 * m)], st.theta.theta_tilde[(i, 2 * m + 1)]);
                let post = theta_threshold_posterior(&resid, &cols, pair, sigma2, st.noise.k_theta)?;
                thr[m] = post.sample(&mut rng);
                let active = pair.0.hypot(pair.1) >= thr[m];
                let (s, c) = if active { pair } else { (0.0, 0.0) };
                eff[2 * m] = s;
                eff[2 * m + 1] = c;
                resid -= &cols * eff.rows(2 * m, 2);
            }
            Ok((thr, eff))
        })?
    };
    for (i, (thr, eff)) in rows.into_iter().enumerate() {
        for m in 0..q {
            state.theta.thresholds[(i, m)] = thr[m];
        }
        state.theta.theta.row_mut(i).copy_from(&eff.transpose());
    }
    comp.fourier = &state.theta.theta * designs.b.transpose();

    // local thresholds
    let nl = state.n_local();
    let rows = {
        let st = &*state;
        let comp = &*comp;
        collect_rows(p, par, |i| {
            let mut rng = substream(seed, sweep, StreamKind::GammaThreshold, i as u64);
            let mut resid = row_vec(ctx.y, i) - row_vec(&comp.fourier, i) - row_vec(&comp.local, i) - row_vec(&comp.factor, i);
            let mut thr = vec![0.0; nl];
            let mut eff = row_vec(&st.gamma.gamma, i);
            let sigma2 = st.noise.sigma2[i];
            for l in 0..nl {
                let col = designs.c.column(l).into_owned();
                resid += &col * eff[l];
                let latent = st.gamma.gamma_tilde[(i, l)];
                let post = gamma_threshold_posterior(&resid, &col, latent, sigma2, st.noise.k_gamma)?;
                thr[l] = post.sample(&mut rng);
                eff[l] = if latent.abs() >= thr[l] { latent } else { 0.0 };
                resid -= &col * eff[l];
            }
            Ok((thr, eff))
        })?
    };
    for (i, (thr, eff)) in rows.into_iter().enumerate() {
        for l in 0..nl {
            state.gamma.thresholds_star[(i, l)] = thr[l];
        }
        state.gamma.gamma.row_mut(i).copy_from(&eff.transpose());
    }
    comp.local = &state.gamma.gamma * designs.c.transpose();

    // threshold bounds
    let (kt, kg) = update_pareto_bounds(
        &state.theta.thresholds,
        &state.gamma.thresholds_star,
        ctx.hyper,
        &mut substream(seed, sweep, StreamKind::ParetoBounds, 0),
    )?;
    state.noise.k_theta = kt;
    state.noise.k_gamma = kg;

    Ok(())
}

/// Occasionally prune negligible factor columns, or add one drawn from the
/// prior when none is negligible.
pub fn adapt_rank(state: &mut ModelState, ctx: &SweepContext<'_>, schedule: &AdaptSchedule, sweep: u64) -> Result<bool> {
    if sweep <= schedule.start {
        return Ok(false);
    }
    let mut rng = substream(ctx.seed, sweep, StreamKind::Adapt, 0);
    let prob = (schedule.c0 + schedule.c1 * sweep as f64).exp();
    let u: f64 = rng.random();
    if u >= prob {
        return Ok(false);
    }
    let k = state.k();
    let negligible: Vec<usize> = (0..k)
        .filter(|&h| state.factors.lambda.column(h).iter().all(|v| v.abs() < schedule.epsilon))
        .collect();
    if !negligible.is_empty() {
        let keep_n = (k - negligible.len()).max(schedule.min_k);
        // drop negligible columns from the right so that at least min_k remain
        let n_drop = k - keep_n;
        if n_drop == 0 {
            return Ok(false);
        }
        let drop: Vec<usize> = negligible.iter().rev().take(n_drop).copied().collect();
        let keep: Vec<usize> = (0..k).filter(|h| !drop.contains(h)).collect();
        remove_columns(state, &keep);
        Ok(true)
    } else {
        if k >= schedule.max_k {
            return Ok(false);
        }
        append_column(state, ctx.hyper, &mut rng);
        Ok(true)
    }
}

fn select_columns(m: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| m[(r, keep[c])])
}

fn remove_columns(state: &mut ModelState, keep: &[usize]) {
    let f = &mut state.factors;
    f.lambda = select_columns(&f.lambda, keep);
    f.eta = select_columns(&f.eta, keep);
    f.phi = select_columns(&f.phi, keep);
    f.zeta = DVector::from_iterator(keep.len(), keep.iter().map(|&h| f.zeta[h]));
    f.refresh_tau();
    state.maps.w = select_columns(&state.maps.w, keep);
    state.maps.z = select_columns(&state.maps.z, keep);
}

fn append_column<R: Rng + ?Sized>(state: &mut ModelState, hyper: &HyperParams, rng: &mut R) {
    let k = state.k();
    let f = &mut state.factors;
    let zeta = gamma_rate(rng, hyper.a2, 1.0);
    let tau = f.tau.iter().last().copied().unwrap_or(1.0) * zeta;
    let p = f.lambda.nrows();
    let phi: Vec<f64> = (0..p).map(|_| gamma_rate(rng, hyper.rho / 2.0, hyper.rho / 2.0)).collect();
    let lambda: Vec<f64> = phi.iter().map(|ph| std_normal(rng) / (ph * tau).sqrt()).collect();
    let eta: Vec<f64> = (0..f.eta.nrows()).map(|_| std_normal(rng)).collect();
    let w: Vec<f64> = (0..state.maps.w.nrows()).map(|_| std_normal(rng)).collect();
    let z: Vec<f64> = (0..state.maps.z.nrows()).map(|_| std_normal(rng)).collect();

    f.lambda = f.lambda.clone().insert_column(k, 0.0);
    f.lambda.set_column(k, &DVector::from_vec(lambda));
    f.phi = f.phi.clone().insert_column(k, 0.0);
    f.phi.set_column(k, &DVector::from_vec(phi));
    f.eta = f.eta.clone().insert_column(k, 0.0);
    f.eta.set_column(k, &DVector::from_vec(eta));
    f.zeta = f.zeta.clone().insert_row(k, zeta);
    f.refresh_tau();
    state.maps.w = state.maps.w.clone().insert_column(k, 0.0);
    state.maps.w.set_column(k, &DVector::from_vec(w));
    state.maps.z = state.maps.z.clone().insert_column(k, 0.0);
    state.maps.z.set_column(k, &DVector::from_vec(z));
}
