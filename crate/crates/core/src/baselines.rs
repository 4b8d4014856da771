//! Frequency-domain comparator: periodogram and Fisher's exact g-test.

use std::f64::consts::PI;
use std::path::Path;

use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Periodogram {
    /// Cycles per sample, `j / T`.
    pub frequencies: Vec<f64>,
    pub ordinates: Vec<f64>,
}

impl Periodogram {
    pub fn len(&self) -> usize {
        self.ordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordinates.is_empty()
    }

    pub fn is_flat_zero(&self) -> bool {
        self.ordinates.iter().all(|&v| v == 0.0)
    }
}

/// `I(j/T) = |Σₜ yₜ e^{−2πi jt/T}|² / T` for `j = 1..⌊(T−1)/2⌋` on the
/// mean-centred series. The zero and Nyquist frequencies are excluded.
pub fn periodogram(series: &[f64]) -> Result<Periodogram> {
    let t = series.len();
    if t < 4 {
        return Err(Error::invalid(format!("periodogram needs at least 4 samples, got {t}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let n = (t - 1) / 2;
    let mut frequencies = Vec::with_capacity(n);
    let mut ordinates = Vec::with_capacity(n);
    for j in 1..=n {
        let (mut re, mut im) = (0.0, 0.0);
        for (s, y) in series.iter().enumerate() {
            let arg = 2.0 * PI * (j * s % t) as f64 / t as f64;
            re += (y - mean) * arg.cos();
            im -= (y - mean) * arg.sin();
        }
        frequencies.push(j as f64 / t as f64);
        ordinates.push((re * re + im * im) / t as f64);
    }
    Ok(Periodogram { frequencies, ordinates })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GTest {
    pub g: f64,
    pub p_value: f64,
    /// Frequency (cycles per sample) of the largest ordinate.
    pub peak_frequency: f64,
}

/// `P(G > g) = Σ_{j=1}^{⌊1/g⌋} (−1)^{j−1} C(n,j) (1 − jg)^{n−1}`.
pub fn fisher_g_p_value(g: f64, n: usize) -> f64 {
    if g <= 1.0 / n as f64 {
        return 1.0;
    }
    let upper = ((1.0 / g).floor() as usize).min(n);
    let mut total = 0.0;
    for j in 1..=upper {
        let base = 1.0 - j as f64 * g;
        if base <= 0.0 {
            break;
        }
        let term = (ln_binomial(n as u64, j as u64) + (n - 1) as f64 * base.ln()).exp();
        if j % 2 == 1 {
            total += term;
        } else {
            total -= term;
        }
    }
    total.clamp(0.0, 1.0)
}

pub fn fisher_g_test(series: &[f64]) -> Result<GTest> {
    let pg = periodogram(series)?;
    if pg.len() < 3 {
        return Err(Error::invalid(format!(
            "the g-test needs at least 3 ordinates, series gives {}",
            pg.len()
        )));
    }
    let sum: f64 = pg.ordinates.iter().sum();
    let (arg, max) = pg
        .ordinates
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
    if sum <= 0.0 {
        return Ok(GTest {
            g: f64::NAN,
            p_value: 1.0,
            peak_frequency: f64::NAN,
        });
    }
    let g = max / sum;
    Ok(GTest {
        g,
        p_value: fisher_g_p_value(g, pg.len()),
        peak_frequency: pg.frequencies[arg],
    })
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn fdr_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("p-values must lie in [0, 1]"));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        running = running.min(p_values[idx] * m as f64 / (rank + 1) as f64);
        q[idx] = running.min(1.0);
    }
    Ok(q)
}

/// Whether higher or lower scores indicate periodicity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Higher,
    Lower,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher" => Ok(Direction::Higher),
            "lower" => Ok(Direction::Lower),
            other => Err(Error::invalid(format!("direction must be higher or lower, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Higher => "higher",
            Direction::Lower => "lower",
        })
    }
}

/// Scores from one method, keyed by probe.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreFile {
    pub probe_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub direction: Direction,
}

impl ScoreFile {
    /// Scores oriented so that higher means more periodic.
    pub fn oriented(&self) -> Vec<f64> {
        match self.direction {
            Direction::Higher => self.scores.clone(),
            Direction::Lower => self.scores.iter().map(|s| -s).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("probe_id,score,direction\n");
        for (id, v) in self.probe_ids.iter().zip(&self.scores) {
            s.push_str(&format!("{id},{v},{}\n", self.direction));
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let mut probe_ids = Vec::new();
        let mut scores = Vec::new();
        let mut direction = None;
        for record in reader.records() {
            let r = record.map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
            if r.len() != 3 {
                return Err(Error::invalid("score rows need probe_id,score,direction"));
            }
            let d: Direction = r[2].parse()?;
            if direction.is_some_and(|x| x != d) {
                return Err(Error::invalid("a score file must use a single direction"));
            }
            direction = Some(d);
            probe_ids.push(r[0].to_string());
            scores.push(
                r[1].parse::<f64>()
                    .map_err(|_| Error::invalid(format!("unparsable score {:?}", &r[1])))?,
            );
        }
        Ok(ScoreFile {
            probe_ids,
            scores,
            direction: direction.ok_or_else(|| Error::invalid("empty score file"))?,
        })
    }
}

/// Fisher g-test p-values for every row.
pub fn fisher_scores(probe_ids: &[String], rows: &nalgebra::DMatrix<f64>) -> Result<ScoreFile> {
    let scores = rows
        .row_iter()
        .map(|r| fisher_g_test(&r.iter().copied().collect::<Vec<_>>()).map(|g| g.p_value))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreFile {
        probe_ids: probe_ids.to_vec(),
        scores,
        direction: Direction::Lower,
    })
}
