//! Posterior summaries: rhythm probabilities, amplitude and phase,
//! FDR-controlled discovery lists, correlation networks and ROC curves.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use statrs::statistics::{Data, OrderStatistics};

use crate::archive::PosteriorArchive;
use crate::error::{Error, Result};

fn non_empty(archive: &PosteriorArchive) -> Result<()> {
    if archive.is_empty() {
        Err(Error::invalid("the archive holds no retained draws"))
    } else {
        Ok(())
    }
}

fn target_index(archive: &PosteriorArchive, target_period: f64) -> Result<usize> {
    archive
        .meta
        .periods
        .iter()
        .position(|&w| (w - target_period).abs() < 1e-9)
        .ok_or_else(|| Error::invalid(format!("target period {target_period} is not among the fitted periods")))
}

/// Fraction of draws in which only the target-period pair is active.
pub fn prob_circadian(archive: &PosteriorArchive, i: usize, target_period: f64) -> Result<f64> {
    non_empty(archive)?;
    let target = target_index(archive, target_period)?;
    let q = archive.n_periods();
    let hits = archive
        .draws
        .iter()
        .filter(|d| (0..q).all(|m| d.pair_active(i, m) == (m == target)))
        .count();
    Ok(hits as f64 / archive.len() as f64)
}

/// Fraction of draws in which exactly one pair is active.
pub fn prob_periodic(archive: &PosteriorArchive, i: usize) -> Result<f64> {
    Ok(prob_per_period(archive, i)?.iter().sum())
}

/// For each period, the fraction of draws in which it is the only active pair.
pub fn prob_per_period(archive: &PosteriorArchive, i: usize) -> Result<Vec<f64>> {
    non_empty(archive)?;
    let q = archive.n_periods();
    let mut counts = vec![0usize; q];
    for d in &archive.draws {
        let mut only = None;
        let mut n_on = 0;
        for m in 0..q {
            if d.pair_active(i, m) {
                n_on += 1;
                only = Some(m);
            }
        }
        if n_on == 1 {
            counts[only.unwrap()] += 1;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / archive.len() as f64).collect())
}

/// Fraction of draws in which each pair is shrunk to zero.
pub fn prob_shrunk(archive: &PosteriorArchive, i: usize) -> Result<Vec<f64>> {
    non_empty(archive)?;
    let q = archive.n_periods();
    Ok((0..q)
        .map(|m| archive.draws.iter().filter(|d| !d.pair_active(i, m)).count() as f64 / archive.len() as f64)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhythmScore {
    pub probe_id: String,
    pub prob_periodic: f64,
    pub prob_per_period: Vec<f64>,
    pub prob_circadian: f64,
    /// `1 − prob_circadian`.
    pub beta: f64,
}

pub fn rhythm_scores(archive: &PosteriorArchive, target_period: f64) -> Result<Vec<RhythmScore>> {
    non_empty(archive)?;
    let target = target_index(archive, target_period)?;
    (0..archive.n_probes())
        .map(|i| {
            let per = prob_per_period(archive, i)?;
            let circ = per[target];
            Ok(RhythmScore {
                probe_id: archive.meta.probe_ids[i].clone(),
                prob_periodic: per.iter().sum(),
                prob_per_period: per,
                prob_circadian: circ,
                beta: 1.0 - circ,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudePhase {
    pub amplitude: f64,
    /// `arctan(θ₁/θ₂)` on `(−π/2, π/2]`.
    pub phase: f64,
    /// `atan2(θ₁, θ₂)` on `(−π, π]`.
    pub phase_full: f64,
}

/// Amplitude and phase of `θ₁ sin x + θ₂ cos x = A cos(x − ψ)`.
/// The zero pair has no phase.
pub fn amplitude_phase(sin_coef: f64, cos_coef: f64) -> Option<AmplitudePhase> {
    if sin_coef == 0.0 && cos_coef == 0.0 {
        return None;
    }
    let mut phase = (sin_coef / cos_coef).atan();
    if phase <= -std::f64::consts::FRAC_PI_2 {
        phase = std::f64::consts::FRAC_PI_2;
    }
    Some(AmplitudePhase {
        amplitude: sin_coef.hypot(cos_coef),
        phase,
        phase_full: sin_coef.atan2(cos_coef),
    })
}

/// Inverse of [`amplitude_phase`] via the full-circle phase.
pub fn pair_from_amplitude_phase(amplitude: f64, phase_full: f64) -> (f64, f64) {
    (amplitude * phase_full.sin(), amplitude * phase_full.cos())
}

pub const SUMMARY_QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];

#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudePhaseSummary {
    /// Draws in which the pair is active.
    pub n_active: usize,
    pub amplitude: Option<[f64; 3]>,
    pub phase: Option<[f64; 3]>,
}

fn quantiles(values: Vec<f64>) -> Option<[f64; 3]> {
    if values.is_empty() {
        return None;
    }
    let mut data = Data::new(values);
    Some(SUMMARY_QUANTILES.map(|tau| data.quantile(tau)))
}

/// Quantiles over the draws in which pair `m` of probe `i` is active.
pub fn amplitude_phase_summary(archive: &PosteriorArchive, i: usize, m: usize) -> AmplitudePhaseSummary {
    let mut amps = Vec::new();
    let mut phases = Vec::new();
    for d in &archive.draws {
        if d.pair_active(i, m) {
            let (s, c) = d.theta_pair(i, m);
            if let Some(ap) = amplitude_phase(s, c) {
                amps.push(ap.amplitude);
                phases.push(ap.phase);
            }
        }
    }
    AmplitudePhaseSummary {
        n_active: amps.len(),
        amplitude: quantiles(amps),
        phase: quantiles(phases),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscoveryList {
    pub k_star: f64,
    /// Largest selected β; `None` when nothing is selected.
    pub kappa: Option<f64>,
    /// Indices into the input, ordered by increasing β.
    pub selected: Vec<usize>,
    /// Mean β over the selection.
    pub expected_fdr: f64,
}

/// Largest prefix of the sorted βs whose mean stays at or below `k_star`.
/// Ties are selected or rejected together.
pub fn fdr_select(betas: &[f64], k_star: f64) -> Result<DiscoveryList> {
    if betas.is_empty() {
        return Err(Error::invalid("fdr_select needs at least one probe"));
    }
    if betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return Err(Error::invalid("betas must lie in [0, 1]"));
    }
    let mut order: Vec<usize> = (0..betas.len()).collect();
    order.sort_by(|&a, &b| betas[a].total_cmp(&betas[b]).then(a.cmp(&b)));
    let mut best = 0;
    let mut best_sum = 0.0;
    let mut sum = 0.0;
    for (n, &idx) in order.iter().enumerate() {
        sum += betas[idx];
        let len = n + 1;
        let closes_tie = len == order.len() || betas[order[len]] != betas[idx];
        if closes_tie && sum <= k_star * len as f64 {
            best = len;
            best_sum = sum;
        }
    }
    let selected: Vec<usize> = order[..best].to_vec();
    Ok(DiscoveryList {
        k_star,
        kappa: selected.last().map(|&i| betas[i]),
        expected_fdr: if best == 0 { 0.0 } else { best_sum / best as f64 },
        selected,
    })
}

/// Marginal correlation implied by `Ω = ΛΛᵀ + Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationNetwork {
    pub correlation: DMatrix<f64>,
    /// `(i, j, corr)` with `i < j` and `|corr| ≥ threshold`.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationEstimate {
    /// Standardize the posterior mean of `Ω`.
    PosteriorMeanCovariance,
    /// Average the per-snapshot correlation matrices.
    SnapshotAverage,
}

pub fn correlation_from_covariance(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d: Vec<f64> = omega.diagonal().iter().map(|v| v.sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("covariance has a non-positive diagonal".into()));
    }
    let n = omega.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { omega[(i, j)] / (d[i] * d[j]) }))
}

pub fn correlation_edges(corr: &DMatrix<f64>, threshold: f64) -> Result<Vec<(usize, usize, f64)>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("edge threshold must lie in [0, 1], got {threshold}")));
    }
    let mut edges = Vec::new();
    for i in 0..corr.nrows() {
        for j in (i + 1)..corr.ncols() {
            if corr[(i, j)].abs() >= threshold {
                edges.push((i, j, corr[(i, j)]));
            }
        }
    }
    Ok(edges)
}

pub fn marginal_correlation_from(lambda: &DMatrix<f64>, sigma2: &[f64], threshold: f64) -> Result<CorrelationNetwork> {
    let mut omega = lambda * lambda.transpose();
    for (i, s) in sigma2.iter().enumerate() {
        omega[(i, i)] += s;
    }
    let correlation = correlation_from_covariance(&omega)?;
    let edges = correlation_edges(&correlation, threshold)?;
    Ok(CorrelationNetwork { correlation, edges })
}

pub fn marginal_correlation(
    archive: &PosteriorArchive,
    threshold: f64,
    estimate: CorrelationEstimate,
) -> Result<CorrelationNetwork> {
    non_empty(archive)?;
    let p = archive.n_probes();
    let correlation = match estimate {
        CorrelationEstimate::PosteriorMeanCovariance => {
            let mut omega = archive.moments.mean_lambda_outer();
            let s = archive.moments.mean_sigma2();
            for i in 0..p {
                omega[(i, i)] += s[i];
            }
            correlation_from_covariance(&omega)?
        }
        CorrelationEstimate::SnapshotAverage => {
            if archive.snapshots.is_empty() {
                return Err(Error::invalid("the archive holds no factor snapshots"));
            }
            let mut acc = DMatrix::zeros(p, p);
            for snap in &archive.snapshots {
                let draw = archive
                    .draws
                    .iter()
                    .find(|d| d.sweep == snap.sweep)
                    .ok_or_else(|| Error::Format(format!("snapshot at sweep {} has no matching draw", snap.sweep)))?;
                let mut omega = &snap.lambda * snap.lambda.transpose();
                for i in 0..p {
                    omega[(i, i)] += draw.sigma2[i];
                }
                acc += correlation_from_covariance(&omega)?;
            }
            acc / archive.snapshots.len() as f64
        }
    };
    let edges = correlation_edges(&correlation, threshold)?;
    Ok(CorrelationNetwork { correlation, edges })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub tpr: f64,
    pub fpr: f64,
    /// `FP / (FP + TP)`.
    pub fdr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurves {
    /// Starts at (0, 0); one point per distinct score, descending.
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

/// Thresholds sweep the distinct scores from high to low; tied scores enter
/// together, so ties contribute half a concordant pair to the AUC.
pub fn roc_and_fdr_curves(scores: &[f64], truth: &[bool]) -> Result<RocCurves> {
    if scores.len() != truth.len() {
        return Err(Error::dim("scores and truth differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("ROC needs both positive and negative cases"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        true_positives: 0,
        false_positives: 0,
        tpr: 0.0,
        fpr: 0.0,
        fdr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if truth[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(CurvePoint {
            threshold: s,
            true_positives: tp,
            false_positives: fp,
            tpr: tp as f64 / n_pos as f64,
            fpr: fp as f64 / n_neg as f64,
            fdr: fp as f64 / (tp + fp) as f64,
        });
    }
    Ok(RocCurves {
        points,
        auc: auc / (n_pos * n_neg) as f64,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// One row per probe: per-pair shrinkage percentages, per-period and overall
/// rhythm probabilities, and amplitude/phase quantiles of every pair.
pub fn summary_table_csv(archive: &PosteriorArchive, target_period: f64) -> Result<String> {
    let scores = rhythm_scores(archive, target_period)?;
    let periods = &archive.meta.periods;
    let mut s = String::from("probe_id");
    for w in periods {
        write!(s, ",shrunk_pct_{w}h").unwrap();
    }
    for w in periods {
        write!(s, ",prob_only_{w}h").unwrap();
    }
    s.push_str(",prob_periodic,prob_circadian,beta");
    for w in periods {
        for kind in ["amplitude", "phase"] {
            for qn in ["q025", "q500", "q975"] {
                write!(s, ",{kind}_{w}h_{qn}").unwrap();
            }
        }
    }
    s.push('\n');
    for (i, sc) in scores.iter().enumerate() {
        s.push_str(&sc.probe_id);
        for v in prob_shrunk(archive, i)? {
            write!(s, ",{}", 100.0 * v).unwrap();
        }
        for v in &sc.prob_per_period {
            write!(s, ",{v}").unwrap();
        }
        write!(s, ",{},{},{}", sc.prob_periodic, sc.prob_circadian, sc.beta).unwrap();
        for m in 0..periods.len() {
            let ap = amplitude_phase_summary(archive, i, m);
            for qs in [ap.amplitude, ap.phase] {
                for j in 0..3 {
                    write!(s, ",{}", fmt_opt(qs.map(|q| q[j]))).unwrap();
                }
            }
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn discovery_csv(list: &DiscoveryList, probe_ids: &[String], betas: &[f64]) -> String {
    let mut s = String::from("rank,probe_id,beta\n");
    for (r, &i) in list.selected.iter().enumerate() {
        writeln!(s, "{},{},{}", r + 1, probe_ids[i], betas[i]).unwrap();
    }
    s
}

pub fn edge_list_csv(net: &CorrelationNetwork, probe_ids: &[String]) -> String {
    let mut s = String::from("probe_a,probe_b,correlation\n");
    for &(i, j, c) in &net.edges {
        writeln!(s, "{},{},{c}", probe_ids[i], probe_ids[j]).unwrap();
    }
    s
}

pub fn curves_csv(curves: &RocCurves) -> String {
    let mut s = String::from("threshold,true_positives,false_positives,tpr,fpr,fdr\n");
    for p in &curves.points {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            p.threshold, p.true_positives, p.false_positives, p.tpr, p.fpr, p.fdr
        )
        .unwrap();
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
