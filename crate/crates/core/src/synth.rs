//! Synthetic benchmark datasets with known rhythmic structure.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{standardize_times, DesignPair, KernelKind, PeriodSet};
use crate::error::{Error, Result};
use crate::model::{apply_gamma_thresholds, apply_theta_thresholds, ExpressionMatrix};
use crate::random::{std_normal, uniform};

/// Noise variance: one value for every probe, or one per probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Scalar(f64),
    PerProbe(Vec<f64>),
}

impl NoiseSpec {
    fn resolve(&self, p: usize) -> Result<DVector<f64>> {
        let v = match self {
            NoiseSpec::Scalar(s) => DVector::from_element(p, *s),
            NoiseSpec::PerProbe(v) => {
                if v.len() != p {
                    return Err(Error::invalid(format!("sigma2 has {} entries for {p} probes", v.len())));
                }
                DVector::from_column_slice(v)
            }
        };
        if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("sigma2 must be positive"));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub p: usize,
    pub times_hours: Vec<f64>,
    pub periods: Vec<f64>,
    pub n_local: usize,
    pub kernel: KernelKind,
    pub bandwidth: f64,
    pub sigma2: NoiseSpec,
    pub k_true: usize,
    pub loading_sd: f64,
    /// Nonzero loadings per column, interpolated from the first bound (first
    /// column) to the second (last column).
    pub loading_count_range: (usize, usize),
    pub theta_threshold_range: (f64, f64),
    pub gamma_threshold_range: (f64, f64),
    /// The period whose sole activity marks a probe as circadian.
    pub target_period: f64,
    pub seed: u64,
}

/// Loading counts used for 500 probes; other sizes scale proportionally.
const COUNT_RANGE_500: (usize, usize) = (124, 99);

impl SynthConfig {
    /// Dependent benchmark: 24 samples every 2 h, five periods, ten local
    /// kernels, six factors.
    pub fn dependent(p: usize, seed: u64) -> Self {
        let scale = |c: usize| ((c * p) as f64 / 500.0).round() as usize;
        SynthConfig {
            p,
            times_hours: (0..24).map(|j| 2.0 * j as f64).collect(),
            periods: vec![4.0, 6.0, 8.0, 12.0, 24.0],
            n_local: 10,
            kernel: KernelKind::Gaussian,
            bandwidth: 25.0,
            sigma2: NoiseSpec::Scalar(0.5),
            k_true: 6,
            loading_sd: 3.0,
            loading_count_range: (scale(COUNT_RANGE_500.0).min(p), scale(COUNT_RANGE_500.1).min(p)),
            theta_threshold_range: (0.0, 6.0),
            gamma_threshold_range: (0.0, 10.0),
            target_period: 24.0,
            seed,
        }
    }

    /// Independent benchmark: as the dependent one with no loadings, unit
    /// noise and Fourier thresholds on (0, 5).
    pub fn independent(p: usize, seed: u64) -> Self {
        SynthConfig {
            sigma2: NoiseSpec::Scalar(1.0),
            loading_count_range: (0, 0),
            theta_threshold_range: (0.0, 5.0),
            ..SynthConfig::dependent(p, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.k_true == 0 || self.n_local == 0 {
            return Err(Error::invalid("p, k_true and n_local must be positive"));
        }
        let (a, b) = self.loading_count_range;
        if a > self.p || b > self.p {
            return Err(Error::invalid(format!(
                "loading count range ({a}, {b}) exceeds the number of probes {}",
                self.p
            )));
        }
        for (name, (lo, hi)) in [
            ("theta_threshold_range", self.theta_threshold_range),
            ("gamma_threshold_range", self.gamma_threshold_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(Error::invalid(format!("{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")));
            }
        }
        if !(self.loading_sd.is_finite() && self.loading_sd >= 0.0) {
            return Err(Error::invalid("loading_sd must be non-negative"));
        }
        if !self.periods.contains(&self.target_period) {
            return Err(Error::invalid(format!(
                "target period {} is not among the periods",
                self.target_period
            )));
        }
        Ok(())
    }

    pub fn designs(&self) -> Result<DesignPair> {
        let grid = standardize_times(&self.times_hours)?;
        let periods = PeriodSet::new(self.periods.clone())?;
        DesignPair::build(&grid, &periods, self.n_local, self.kernel, self.bandwidth)
    }

    fn loading_counts(&self) -> Vec<usize> {
        let (first, last) = self.loading_count_range;
        let k = self.k_true;
        (0..k)
            .map(|h| {
                if k == 1 {
                    first
                } else {
                    let f = h as f64 / (k - 1) as f64;
                    (first as f64 + (last as f64 - first as f64) * f).round() as usize
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub periods: Vec<f64>,
    pub target_period: f64,
    /// p×q pair activity.
    pub active: Vec<Vec<bool>>,
    /// Exactly one pair active.
    pub periodic: Vec<bool>,
    /// Only the target-period pair active.
    pub circadian: Vec<bool>,
    pub theta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub sigma2: DVector<f64>,
}

impl GroundTruth {
    fn from_coefficients(
        config: &SynthConfig,
        theta: DMatrix<f64>,
        gamma: DMatrix<f64>,
        lambda: DMatrix<f64>,
        eta: DMatrix<f64>,
        sigma2: DVector<f64>,
    ) -> Self {
        let q = config.periods.len();
        let target = config
            .periods
            .iter()
            .position(|&w| w == config.target_period)
            .expect("validated");
        let active: Vec<Vec<bool>> = (0..theta.nrows())
            .map(|i| (0..q).map(|m| theta[(i, 2 * m)] != 0.0 || theta[(i, 2 * m + 1)] != 0.0).collect())
            .collect();
        let periodic = active.iter().map(|a| a.iter().filter(|&&x| x).count() == 1).collect();
        let circadian = active
            .iter()
            .map(|a| a.iter().enumerate().all(|(m, &on)| on == (m == target)))
            .collect();
        GroundTruth {
            periods: config.periods.clone(),
            target_period: config.target_period,
            active,
            periodic,
            circadian,
            theta,
            gamma,
            lambda,
            eta,
            sigma2,
        }
    }

    pub fn n_periodic(&self) -> usize {
        self.periodic.iter().filter(|&&b| b).count()
    }

    pub fn n_circadian(&self) -> usize {
        self.circadian.iter().filter(|&&b| b).count()
    }

    pub fn write_json(&self, path: &Path, probe_ids: &[String]) -> Result<()> {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        let file = TruthFile {
            periods: self.periods.clone(),
            target_period: self.target_period,
            n_periodic: self.n_periodic(),
            n_circadian: self.n_circadian(),
            probe_ids: probe_ids.to_vec(),
            active: self.active.clone(),
            periodic: self.periodic.clone(),
            circadian: self.circadian.clone(),
            theta: rows(&self.theta),
            gamma: rows(&self.gamma),
            lambda: rows(&self.lambda),
            eta: rows(&self.eta),
            sigma2: self.sigma2.iter().copied().collect(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads back the probe ids and the per-probe periodic and circadian labels.
    pub fn read_labels(path: &Path) -> Result<TruthLabels> {
        let file: TruthFile = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok(TruthLabels {
            probe_ids: file.probe_ids,
            periodic: file.periodic,
            circadian: file.circadian,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthLabels {
    pub probe_ids: Vec<String>,
    pub periodic: Vec<bool>,
    pub circadian: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    periods: Vec<f64>,
    target_period: f64,
    n_periodic: usize,
    n_circadian: usize,
    probe_ids: Vec<String>,
    active: Vec<Vec<bool>>,
    periodic: Vec<bool>,
    circadian: Vec<bool>,
    theta: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    eta: Vec<Vec<f64>>,
    sigma2: Vec<f64>,
}

pub fn probe_id(i: usize) -> String {
    format!("probe_{:04}", i + 1)
}

/// Simulates from the factor-linked generative model.
pub fn generate_dependent(config: &SynthConfig) -> Result<(ExpressionMatrix, GroundTruth)> {
    config.validate()?;
    let designs = config.designs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p = config.p;
    let k = config.k_true;
    let t = designs.n_times();
    let q = designs.n_periods();
    let nl = designs.n_local();
    let sigma2 = config.sigma2.resolve(p)?;

    let mut lambda = DMatrix::zeros(p, k);
    for (h, count) in config.loading_counts().into_iter().enumerate() {
        for i in sample(&mut rng, p, count).into_iter() {
            lambda[(i, h)] = config.loading_sd * std_normal(&mut rng);
        }
    }
    let eta = DMatrix::from_fn(t, k, |_, _| std_normal(&mut rng));
    let w = DMatrix::from_fn(2 * q, k, |_, _| std_normal(&mut rng));
    let z = DMatrix::from_fn(nl, k, |_, _| std_normal(&mut rng));
    let theta_tilde = (&lambda * w.transpose()).map(|m| m + std_normal(&mut rng));
    let gamma_tilde = (&lambda * z.transpose()).map(|m| m + std_normal(&mut rng));
    let (tl, th) = config.theta_threshold_range;
    let (gl, gh) = config.gamma_threshold_range;
    let thresholds = DMatrix::from_fn(p, q, |_, _| uniform(&mut rng, tl, th));
    let thresholds_star = DMatrix::from_fn(p, nl, |_, _| uniform(&mut rng, gl, gh));
    let theta = apply_theta_thresholds(&theta_tilde, &thresholds)?;
    let gamma = apply_gamma_thresholds(&gamma_tilde, &thresholds_star)?;

    let mean = &theta * designs.b.transpose() + &gamma * designs.c.transpose() + &lambda * eta.transpose();
    let y = DMatrix::from_fn(p, t, |i, j| mean[(i, j)] + sigma2[i].sqrt() * std_normal(&mut rng));
    let grid = standardize_times(&config.times_hours)?;
    let data = ExpressionMatrix::new(y, (0..p).map(probe_id).collect(), grid)?;
    let truth = GroundTruth::from_coefficients(config, theta, gamma, lambda, eta, sigma2);
    Ok((data, truth))
}

/// The same generator with every loading fixed at zero.
pub fn generate_independent(config: &SynthConfig) -> Result<(ExpressionMatrix, GroundTruth)> {
    let cfg = SynthConfig {
        loading_count_range: (0, 0),
        ..config.clone()
    };
    generate_dependent(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_benchmark() {
        let c = SynthConfig::dependent(500, 1);
        assert_eq!(c.loading_count_range, (124, 99));
        assert_eq!(c.times_hours.len(), 24);
        assert_eq!(c.sigma2, NoiseSpec::Scalar(0.5));
        assert_eq!(c.k_true, 6);
        assert_eq!(c.loading_sd * c.loading_sd, 9.0);
        let c = SynthConfig::dependent(200, 1);
        assert_eq!(c.loading_count_range, (50, 40));
        let i = SynthConfig::independent(500, 1);
        assert_eq!(i.sigma2, NoiseSpec::Scalar(1.0));
        assert_eq!(i.theta_threshold_range, (0.0, 5.0));
    }

    #[test]
    fn loading_counts_interpolate() {
        let c = SynthConfig::dependent(500, 1);
        let counts = c.loading_counts();
        assert_eq!(counts.first(), Some(&124));
        assert_eq!(counts.last(), Some(&99));
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        let (_, truth) = generate_dependent(&c).unwrap();
        for (h, want) in counts.iter().enumerate() {
            assert_eq!(truth.lambda.column(h).iter().filter(|v| **v != 0.0).count(), *want);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let c = SynthConfig::dependent(60, 7);
        let (d1, t1) = generate_dependent(&c).unwrap();
        let (d2, t2) = generate_dependent(&c).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(t1, t2);
        let (d3, _) = generate_dependent(&SynthConfig { seed: 8, ..c }).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn collapsed_count_range_gives_zero_loadings() {
        let c = SynthConfig { loading_count_range: (0, 0), ..SynthConfig::dependent(50, 3) };
        let (_, truth) = generate_dependent(&c).unwrap();
        assert!(truth.lambda.iter().all(|&v| v == 0.0));
        let (a, _) = generate_independent(&SynthConfig::dependent(50, 3)).unwrap();
        let (b, _) = generate_dependent(&c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_agree_with_stored_coefficients() {
        let (_, truth) = generate_dependent(&SynthConfig::dependent(300, 11)).unwrap();
        let mut circ = 0;
        let mut per = 0;
        for i in 0..300 {
            let on: Vec<bool> = (0..5)
                .map(|m| truth.theta[(i, 2 * m)].hypot(truth.theta[(i, 2 * m + 1)]) > 0.0)
                .collect();
            let n_on = on.iter().filter(|&&b| b).count();
            per += (n_on == 1) as usize;
            circ += (n_on == 1 && on[4]) as usize;
        }
        assert_eq!(truth.n_periodic(), per);
        assert_eq!(truth.n_circadian(), circ);
        assert!(truth.circadian.iter().zip(&truth.periodic).all(|(c, p)| !c || *p));
    }

    #[test]
    fn zero_thresholds_activate_everything() {
        let c = SynthConfig {
            theta_threshold_range: (0.0, 0.0),
            ..SynthConfig::independent(40, 5)
        };
        let (_, truth) = generate_independent(&c).unwrap();
        assert!(truth.active.iter().all(|a| a.iter().all(|&x| x)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SynthConfig::dependent(50, 1);
        assert!(generate_dependent(&SynthConfig { loading_count_range: (60, 10), ..base.clone() }).is_err());
        assert!(generate_dependent(&SynthConfig { theta_threshold_range: (3.0, 1.0), ..base.clone() }).is_err());
        assert!(generate_dependent(&SynthConfig { target_period: 5.0, ..base.clone() }).is_err());
        assert!(generate_dependent(&SynthConfig { sigma2: NoiseSpec::PerProbe(vec![1.0; 3]), ..base }).is_err());
    }

    #[test]
    fn independent_residuals_are_uncorrelated_across_probes() {
        let c = SynthConfig::independent(400, 21);
        let designs = c.designs().unwrap();
        let (data, truth) = generate_independent(&c).unwrap();
        let mean = &truth.theta * designs.b.transpose() + &truth.gamma * designs.c.transpose();
        let mut resid = data.values() - mean;
        // undo row centring effects by re-centring the residuals
        for mut row in resid.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        let t = resid.ncols() as f64;
        let mut total = 0.0;
        let mut n = 0.0;
        for i in 0..100 {
            for j in (i + 1)..100 {
                let a = resid.row(i);
                let b = resid.row(j);
                total += (a.dot(&b) / (a.norm() * b.norm())).abs();
                n += 1.0;
            }
        }
        // |corr| of independent length-T series has mean about 0.8/√T
        assert!(total / n < 3.0 / t.sqrt(), "{}", total / n);
    }
}
