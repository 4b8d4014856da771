//! MCMC quality control: effective sample size, a Kolmogorov–Smirnov
//! helper, and a joint-distribution test of the whole sampler.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::archive::PosteriorArchive;
use crate::basis::{standardize_times, DesignPair, KernelKind, PeriodSet};
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelState};
use crate::random::{substream, StreamKind};
use crate::sampler::{gibbs_sweep, prior_draw, simulate_data, Fault, Mode, SweepContext};

/// Effective sample size from Geyer's initial positive sequence estimator,
/// capped at the trace length.
pub fn effective_sample_size(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 4 {
        return Err(Error::invalid("effective sample size needs at least 4 values"));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| dev[..n - lag].iter().zip(&dev[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let gamma0 = autocov(0);
    if !(gamma0 > 0.0) {
        return Err(Error::invalid("trace is constant; effective sample size is undefined"));
    }
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum / gamma0).max(1.0);
    Ok((n as f64 / tau).min(n as f64))
}

/// `P(K > x)` for the limiting Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // the alternating series converges slowly here; the value is 1 to
        // double precision
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF. Returns the
/// statistic and its asymptotic p-value with Stephens' small-sample factor.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("KS test needs at least one sample"));
    }
    let mut x = samples.to_vec();
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("KS test samples contain NaN"));
    }
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, v) in x.iter().enumerate() {
        let f = cdf(*v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    Ok((d, kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)))
}

pub fn ks_uniform(samples: &[f64], lo: f64, hi: f64) -> Result<(f64, f64)> {
    ks_test(samples, |v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Tiny model instance and simulation budget for the joint test.
#[derive(Clone, Debug)]
pub struct GewekeConfig {
    pub p: usize,
    pub times_hours: Vec<f64>,
    pub periods: Vec<f64>,
    pub n_local: usize,
    pub bandwidth: f64,
    pub k: usize,
    pub hyper: HyperParams,
    pub mode: Mode,
    /// Draws per simulator.
    pub n_outer: usize,
    /// Independent successive-conditional chains sharing the draws.
    pub n_chains: usize,
    pub seed: u64,
    pub adapt: bool,
    pub fault: Option<Fault>,
}

impl GewekeConfig {
    /// p = 5, T = 8, two periods, three local kernels, two factors. Prior
    /// scales are chosen so every test function has finite variance.
    pub fn tiny(mode: Mode, seed: u64) -> Self {
        GewekeConfig {
            p: 5,
            times_hours: (0..8).map(|j| 3.0 * j as f64).collect(),
            periods: vec![12.0, 24.0],
            n_local: 3,
            bandwidth: 10.0,
            k: 2,
            hyper: HyperParams {
                a_sigma: 6.0,
                b_sigma: 3.0,
                rho: 6.0,
                a1: 3.0,
                a2: 4.0,
                a_theta: 8.0,
                b_theta: 1.0,
                a_gamma: 8.0,
                b_gamma: 1.0,
                k_init: 2,
            },
            mode,
            n_outer: 20_000,
            n_chains: 100,
            seed,
            adapt: false,
            fault: None,
        }
    }

    fn designs(&self) -> Result<DesignPair> {
        let grid = standardize_times(&self.times_hours)?;
        let periods = PeriodSet::new(self.periods.clone())?;
        DesignPair::build(&grid, &periods, self.n_local, KernelKind::Gaussian, self.bandwidth)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeStat {
    pub name: &'static str,
    pub prior_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeReport {
    pub mode: Mode,
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,function,prior_mean,chain_mean,z\n");
        for st in &self.stats {
            writeln!(s, "{},{},{},{},{}", self.mode, st.name, st.prior_mean, st.chain_mean, st.z).unwrap();
        }
        s
    }
}

type TestFn = (&'static str, fn(&ModelState) -> f64);

fn mean_of(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> f64 {
    m.iter().map(|&v| f(v)).sum::<f64>() / m.len() as f64
}

fn vmean(v: &DVector<f64>, f: impl Fn(f64) -> f64) -> f64 {
    v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64
}

fn common_functions() -> Vec<TestFn> {
    vec![
        ("theta_mean", |s| mean_of(&s.theta.theta, |v| v)),
        ("theta_sq", |s| mean_of(&s.theta.theta, |v| v * v)),
        ("theta_tilde_sq", |s| mean_of(&s.theta.theta_tilde, |v| v * v)),
        ("theta_active_frac", |s| {
            let q = s.n_periods();
            let p = s.n_probes();
            let on = (0..p)
                .flat_map(|i| (0..q).map(move |m| (i, m)))
                .filter(|&(i, m)| s.theta.theta[(i, 2 * m)] != 0.0 || s.theta.theta[(i, 2 * m + 1)] != 0.0)
                .count();
            on as f64 / (p * q) as f64
        }),
        ("gamma_mean", |s| mean_of(&s.gamma.gamma, |v| v)),
        ("gamma_sq", |s| mean_of(&s.gamma.gamma, |v| v * v)),
        ("gamma_tilde_sq", |s| mean_of(&s.gamma.gamma_tilde, |v| v * v)),
        ("gamma_active_frac", |s| mean_of(&s.gamma.gamma, |v| (v != 0.0) as u8 as f64)),
        ("sigma2_mean", |s| vmean(&s.noise.sigma2, |v| v)),
        ("sigma2_sq", |s| vmean(&s.noise.sigma2, |v| v * v)),
        ("k_theta", |s| s.noise.k_theta),
        ("k_theta_sq", |s| s.noise.k_theta * s.noise.k_theta),
        ("k_gamma", |s| s.noise.k_gamma),
        ("k_gamma_sq", |s| s.noise.k_gamma * s.noise.k_gamma),
        ("threshold_mean", |s| mean_of(&s.theta.thresholds, |v| v)),
        ("threshold_sq", |s| mean_of(&s.theta.thresholds, |v| v * v)),
        ("threshold_star_mean", |s| mean_of(&s.gamma.thresholds_star, |v| v)),
        ("threshold_star_sq", |s| mean_of(&s.gamma.thresholds_star, |v| v * v)),
    ]
}

fn factor_functions() -> Vec<TestFn> {
    vec![
        ("lambda_sq", |s| mean_of(&s.factors.lambda, |v| v * v)),
        ("lambda_cross", |s| {
            let l = &s.factors.lambda;
            (0..l.nrows()).map(|i| l[(i, 0)] * l[(i, 1)]).sum::<f64>() / l.nrows() as f64
        }),
        ("eta_sq", |s| mean_of(&s.factors.eta, |v| v * v)),
        ("w_sq", |s| mean_of(&s.maps.w, |v| v * v)),
        ("z_sq", |s| mean_of(&s.maps.z, |v| v * v)),
        ("theta_tilde_w_lambda", |s| {
            let m = &s.factors.lambda * s.maps.w.transpose();
            s.theta.theta_tilde.component_mul(&m).sum() / m.len() as f64
        }),
        ("gamma_tilde_z_lambda", |s| {
            let m = &s.factors.lambda * s.maps.z.transpose();
            s.gamma.gamma_tilde.component_mul(&m).sum() / m.len() as f64
        }),
        ("phi_mean", |s| mean_of(&s.factors.phi, |v| v)),
        ("zeta_1", |s| s.factors.zeta[0]),
        ("zeta_2", |s| s.factors.zeta[1]),
    ]
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Compares test-function moments under the prior (marginal-conditional
/// simulator) with those along chains that alternate a sampler sweep and a
/// fresh data draw (successive-conditional simulator). Every chain starts
/// from an exact prior draw, so chain means are independent and unbiased
/// under a correct sampler.
pub fn geweke_joint_test(config: &GewekeConfig) -> Result<GewekeReport> {
    if config.adapt {
        return Err(Error::invalid(
            "the joint distribution test requires a fixed factor rank; disable adaptation",
        ));
    }
    if config.n_chains < 2 || config.n_outer < config.n_chains {
        return Err(Error::invalid("need at least two chains and one sweep per chain"));
    }
    if config.mode == Mode::Dependent && config.k < 2 {
        return Err(Error::invalid("the factor test functions need k >= 2"));
    }
    let designs = config.designs()?;
    let mut functions = common_functions();
    if config.mode == Mode::Dependent {
        functions.extend(factor_functions());
    }
    let nf = functions.len();
    let eval = |s: &ModelState| -> Vec<f64> { functions.iter().map(|(_, f)| f(s)).collect() };

    let prior_values: Vec<Vec<f64>> = (0..config.n_outer)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(config.seed, 0, StreamKind::Prior, r as u64);
            prior_draw(config.p, &designs, &config.hyper, config.mode, config.k, &mut rng).map(|s| eval(&s))
        })
        .collect::<Result<_>>()?;

    let len = config.n_outer / config.n_chains;
    let chain_means: Vec<Vec<f64>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let chain_seed = config.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(c as u64 + 1));
            let mut rng = substream(chain_seed, 0, StreamKind::Prior, u64::MAX);
            let mut state = prior_draw(config.p, &designs, &config.hyper, config.mode, config.k, &mut rng)?;
            let mut sums = vec![0.0; nf];
            for sweep in 1..=len as u64 {
                let y = simulate_data(&state, &designs, &mut substream(chain_seed, sweep, StreamKind::Data, 0))?;
                let mut ctx = SweepContext::new(&y, &designs, &config.hyper, config.mode, chain_seed, false, None)?;
                if let Some(f) = config.fault {
                    ctx = ctx.with_fault(f);
                }
                gibbs_sweep(&mut state, &ctx, sweep)?;
                for (s, v) in sums.iter_mut().zip(eval(&state)) {
                    *s += v;
                }
            }
            Ok(sums.into_iter().map(|s| s / len as f64).collect())
        })
        .collect::<Result<_>>()?;

    let mut stats = Vec::with_capacity(nf);
    for (j, (name, _)) in functions.iter().enumerate() {
        let prior: Vec<f64> = prior_values.iter().map(|v| v[j]).collect();
        let chain: Vec<f64> = chain_means.iter().map(|v| v[j]).collect();
        let (pm, pv) = mean_var(&prior);
        let (cm, cv) = mean_var(&chain);
        let se = (pv / prior.len() as f64 + cv / chain.len() as f64).sqrt();
        let z = if se > 0.0 { (pm - cm) / se } else { 0.0 };
        stats.push(GewekeStat {
            name,
            prior_mean: pm,
            chain_mean: cm,
            z,
        });
    }
    Ok(GewekeReport { mode: config.mode, stats })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EssRow {
    pub quantity: String,
    pub ess: Option<f64>,
}

/// ESS of the rank, both threshold bounds and every probe's noise variance.
pub fn ess_table(archive: &PosteriorArchive) -> Vec<EssRow> {
    let mut rows = Vec::new();
    let mut push = |name: String, trace: Vec<f64>| {
        rows.push(EssRow {
            quantity: name,
            ess: effective_sample_size(&trace).ok(),
        })
    };
    push("k".into(), archive.draws.iter().map(|d| d.k as f64).collect());
    push("k_theta".into(), archive.draws.iter().map(|d| d.k_theta).collect());
    push("k_gamma".into(), archive.draws.iter().map(|d| d.k_gamma).collect());
    for (i, id) in archive.meta.probe_ids.iter().enumerate() {
        push(format!("sigma2[{id}]"), archive.draws.iter().map(|d| d.sigma2[i]).collect());
    }
    rows
}

pub fn ess_csv(rows: &[EssRow]) -> String {
    let mut s = String::from("quantity,ess\n");
    for r in rows {
        writeln!(s, "{},{}", r.quantity, r.ess.map(|e| e.to_string()).unwrap_or_default()).unwrap();
    }
    s
}
