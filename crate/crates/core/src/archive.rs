//! Thinned posterior draws and their on-disk container.
//!
//! An archive directory holds `manifest.json` (metadata and a section table)
//! and `draws.bin` (little-endian columns, one section after another).

use std::fs;
use std::path::Path;

use bitvec::prelude::*;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sampler::Mode;

pub const ARCHIVE_FORMAT: &str = "circafactor-archive";
pub const ARCHIVE_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const PAYLOAD: &str = "draws.bin";

pub type Mask = BitVec<u64, Lsb0>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub mode: Mode,
    pub probe_ids: Vec<String>,
    pub times_hours: Vec<f64>,
    pub periods: Vec<f64>,
    pub n_local: usize,
    pub n_iter: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    pub config_hash: String,
}

impl ArchiveMeta {
    pub fn n_probes(&self) -> usize {
        self.probe_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn n_times(&self) -> usize {
        self.times_hours.len()
    }

    /// Number of retained draws for the configured schedule.
    pub fn expected_len(&self) -> usize {
        retained_count(self.n_iter, self.burn_in, self.thin) as usize
    }
}

/// `(n_iter − burn_in) / thin`.
pub fn retained_count(n_iter: u64, burn_in: u64, thin: u64) -> u64 {
    n_iter.saturating_sub(burn_in) / thin.max(1)
}

/// Whether 1-based sweep `t` is kept.
pub fn is_retained(t: u64, burn_in: u64, thin: u64) -> bool {
    t > burn_in && (t - burn_in) % thin == 0
}

/// One retained state, reduced to the functionals used downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct RetainedDraw {
    pub sweep: u64,
    pub k: u32,
    pub k_theta: f64,
    pub k_gamma: f64,
    /// p×2q effective coefficients.
    pub theta: DMatrix<f64>,
    /// Row-major p×q pair indicators.
    pub theta_mask: Mask,
    /// Row-major p×T̃ local indicators.
    pub gamma_mask: Mask,
    pub sigma2: DVector<f64>,
}

impl RetainedDraw {
    pub fn n_periods(&self) -> usize {
        self.theta.ncols() / 2
    }

    pub fn pair_active(&self, i: usize, m: usize) -> bool {
        self.theta_mask[i * self.n_periods() + m]
    }

    pub fn gamma_active(&self, i: usize, l: usize) -> bool {
        let nl = self.gamma_mask.len() / self.theta.nrows().max(1);
        self.gamma_mask[i * nl + l]
    }

    pub fn theta_pair(&self, i: usize, m: usize) -> (f64, f64) {
        (self.theta[(i, 2 * m)], self.theta[(i, 2 * m + 1)])
    }

    /// Builds masks from effective values: a pair or entry is on iff nonzero.
    pub fn from_effective(
        sweep: u64,
        k: usize,
        k_theta: f64,
        k_gamma: f64,
        theta: &DMatrix<f64>,
        gamma: &DMatrix<f64>,
        sigma2: &DVector<f64>,
    ) -> Self {
        let p = theta.nrows();
        let q = theta.ncols() / 2;
        let mut theta_mask = Mask::with_capacity(p * q);
        for i in 0..p {
            for m in 0..q {
                theta_mask.push(theta[(i, 2 * m)] != 0.0 || theta[(i, 2 * m + 1)] != 0.0);
            }
        }
        let mut gamma_mask = Mask::with_capacity(gamma.len());
        for i in 0..gamma.nrows() {
            for l in 0..gamma.ncols() {
                gamma_mask.push(gamma[(i, l)] != 0.0);
            }
        }
        RetainedDraw {
            sweep,
            k: k as u32,
            k_theta,
            k_gamma,
            theta: theta.clone(),
            theta_mask,
            gamma_mask,
            sigma2: sigma2.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorSnapshot {
    pub sweep: u64,
    pub lambda: DMatrix<f64>,
    pub eta: DMatrix<f64>,
}

/// Running sums over retained sweeps of quantities that are invariant to
/// the rotation and rank of the factor block.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorMoments {
    pub count: u64,
    /// Σ ΛΛᵀ
    pub lambda_outer: DMatrix<f64>,
    /// Σ Ληᵀ
    pub factor_sum: DMatrix<f64>,
    /// Σ σ²
    pub sigma2_sum: DVector<f64>,
}

impl FactorMoments {
    pub fn zeros(p: usize, t: usize) -> Self {
        FactorMoments {
            count: 0,
            lambda_outer: DMatrix::zeros(p, p),
            factor_sum: DMatrix::zeros(p, t),
            sigma2_sum: DVector::zeros(p),
        }
    }

    pub fn add(&mut self, lambda: &DMatrix<f64>, eta: &DMatrix<f64>, sigma2: &DVector<f64>) {
        self.count += 1;
        self.lambda_outer += lambda * lambda.transpose();
        self.factor_sum += lambda * eta.transpose();
        self.sigma2_sum += sigma2;
    }

    fn scaled(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.count == 0 {
            m.clone()
        } else {
            m / self.count as f64
        }
    }

    /// Posterior mean of `ΛΛᵀ`.
    pub fn mean_lambda_outer(&self) -> DMatrix<f64> {
        self.scaled(&self.lambda_outer)
    }

    /// Posterior mean of the factor contribution `Ληᵀ`.
    pub fn mean_factor(&self) -> DMatrix<f64> {
        self.scaled(&self.factor_sum)
    }

    pub fn mean_sigma2(&self) -> DVector<f64> {
        if self.count == 0 {
            self.sigma2_sum.clone()
        } else {
            &self.sigma2_sum / self.count as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub theta_accepted: u64,
    pub theta_proposed: u64,
    pub gamma_accepted: u64,
    pub gamma_proposed: u64,
}

impl AcceptanceStats {
    pub fn theta_rate(&self) -> f64 {
        ratio(self.theta_accepted, self.theta_proposed)
    }

    pub fn gamma_rate(&self) -> f64 {
        ratio(self.gamma_accepted, self.gamma_proposed)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorArchive {
    pub meta: ArchiveMeta,
    pub draws: Vec<RetainedDraw>,
    pub snapshots: Vec<FactorSnapshot>,
    pub moments: FactorMoments,
    pub acceptance: AcceptanceStats,
}

impl PosteriorArchive {
    pub fn new(meta: ArchiveMeta) -> Self {
        let moments = FactorMoments::zeros(meta.n_probes(), meta.n_times());
        PosteriorArchive {
            meta,
            draws: Vec::new(),
            snapshots: Vec::new(),
            moments,
            acceptance: AcceptanceStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn n_probes(&self) -> usize {
        self.meta.n_probes()
    }

    pub fn n_periods(&self) -> usize {
        self.meta.n_periods()
    }

    /// Shapes agree with the metadata and every stored pair is zero exactly
    /// when its indicator is off.
    pub fn validate(&self) -> Result<()> {
        let p = self.n_probes();
        let q = self.n_periods();
        let nl = self.meta.n_local;
        for d in &self.draws {
            if d.theta.shape() != (p, 2 * q) || d.theta_mask.len() != p * q || d.gamma_mask.len() != p * nl || d.sigma2.len() != p {
                return Err(Error::Format(format!("draw at sweep {} has inconsistent shapes", d.sweep)));
            }
            for i in 0..p {
                for m in 0..q {
                    let (s, c) = d.theta_pair(i, m);
                    let on = d.pair_active(i, m);
                    if on != (s != 0.0 || c != 0.0) {
                        return Err(Error::Format(format!(
                            "sweep {}: mask disagrees with coefficients for probe {i}, pair {m}",
                            d.sweep
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (manifest, payload) = self.encode()?;
        fs::write(dir.join(PAYLOAD), payload)?;
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest = fs::read(dir.join(MANIFEST))?;
        let payload = fs::read(dir.join(PAYLOAD))?;
        Self::decode(&manifest, &payload)
    }

    /// Serialized manifest and payload bytes.
    pub fn encode(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let p = self.n_probes();
        let t = self.meta.n_times();
        let mut w = SectionWriter::default();
        w.u64s("sweep", self.draws.iter().map(|d| d.sweep));
        w.u64s("k", self.draws.iter().map(|d| d.k as u64));
        w.f64s("k_theta", self.draws.iter().map(|d| d.k_theta));
        w.f64s("k_gamma", self.draws.iter().map(|d| d.k_gamma));
        w.f64s("sigma2", self.draws.iter().flat_map(|d| d.sigma2.iter().copied()));
        w.f64s("theta", self.draws.iter().flat_map(|d| d.theta.iter().copied()));
        w.u64s("theta_mask", self.draws.iter().flat_map(|d| d.theta_mask.as_raw_slice().iter().copied()));
        w.u64s("gamma_mask", self.draws.iter().flat_map(|d| d.gamma_mask.as_raw_slice().iter().copied()));
        w.u64s("snapshot_sweep", self.snapshots.iter().map(|s| s.sweep));
        w.u64s("snapshot_k", self.snapshots.iter().map(|s| s.lambda.ncols() as u64));
        w.f64s("snapshot_lambda", self.snapshots.iter().flat_map(|s| s.lambda.iter().copied()));
        w.f64s("snapshot_eta", self.snapshots.iter().flat_map(|s| s.eta.iter().copied()));
        w.f64s("moment_lambda_outer", self.moments.lambda_outer.iter().copied());
        w.f64s("moment_factor", self.moments.factor_sum.iter().copied());
        w.f64s("moment_sigma2", self.moments.sigma2_sum.iter().copied());
        debug_assert_eq!(self.moments.lambda_outer.shape(), (p, p));
        debug_assert_eq!(self.moments.factor_sum.shape(), (p, t));

        let manifest = Manifest {
            format: ARCHIVE_FORMAT.to_string(),
            version: ARCHIVE_VERSION,
            meta: self.meta.clone(),
            n_draws: self.draws.len(),
            n_snapshots: self.snapshots.len(),
            moment_count: self.moments.count,
            acceptance: self.acceptance,
            payload_sha256: hex(&Sha256::digest(&w.buf)),
            sections: w.sections,
        };
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        Ok((text, w.buf))
    }

    pub fn decode(manifest: &[u8], payload: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(manifest)?;
        if m.format != ARCHIVE_FORMAT {
            return Err(Error::Format(format!("not an archive manifest: format {:?}", m.format)));
        }
        if m.version != ARCHIVE_VERSION {
            return Err(Error::Format(format!("unsupported archive version {}", m.version)));
        }
        if hex(&Sha256::digest(payload)) != m.payload_sha256 {
            return Err(Error::Format("archive payload checksum mismatch".into()));
        }
        let r = SectionReader { sections: &m.sections, buf: payload };
        let meta = m.meta;
        let p = meta.n_probes();
        let q = meta.n_periods();
        let t = meta.n_times();
        let nl = meta.n_local;
        let n = m.n_draws;
        let words = |bits: usize| bits.div_ceil(64);

        let sweep = r.u64s("sweep", n)?;
        let k = r.u64s("k", n)?;
        let k_theta = r.f64s("k_theta", n)?;
        let k_gamma = r.f64s("k_gamma", n)?;
        let sigma2 = r.f64s("sigma2", n * p)?;
        let theta = r.f64s("theta", n * p * 2 * q)?;
        let tw = words(p * q);
        let gw = words(p * nl);
        let theta_mask = r.u64s("theta_mask", n * tw)?;
        let gamma_mask = r.u64s("gamma_mask", n * gw)?;
        let mut draws = Vec::with_capacity(n);
        for s in 0..n {
            let mut tm = Mask::from_vec(theta_mask[s * tw..(s + 1) * tw].to_vec());
            tm.truncate(p * q);
            let mut gm = Mask::from_vec(gamma_mask[s * gw..(s + 1) * gw].to_vec());
            gm.truncate(p * nl);
            let block = p * 2 * q;
            draws.push(RetainedDraw {
                sweep: sweep[s],
                k: k[s] as u32,
                k_theta: k_theta[s],
                k_gamma: k_gamma[s],
                theta: DMatrix::from_column_slice(p, 2 * q, &theta[s * block..(s + 1) * block]),
                theta_mask: tm,
                gamma_mask: gm,
                sigma2: DVector::from_column_slice(&sigma2[s * p..(s + 1) * p]),
            });
        }

        let ns = m.n_snapshots;
        let snap_sweep = r.u64s("snapshot_sweep", ns)?;
        let snap_k = r.u64s("snapshot_k", ns)?;
        let total_k: usize = snap_k.iter().map(|&k| k as usize).sum();
        let lam = r.f64s("snapshot_lambda", total_k * p)?;
        let eta = r.f64s("snapshot_eta", total_k * t)?;
        let (mut lo, mut eo) = (0, 0);
        let mut snapshots = Vec::with_capacity(ns);
        for s in 0..ns {
            let k = snap_k[s] as usize;
            snapshots.push(FactorSnapshot {
                sweep: snap_sweep[s],
                lambda: DMatrix::from_column_slice(p, k, &lam[lo..lo + p * k]),
                eta: DMatrix::from_column_slice(t, k, &eta[eo..eo + t * k]),
            });
            lo += p * k;
            eo += t * k;
        }

        let moments = FactorMoments {
            count: m.moment_count,
            lambda_outer: DMatrix::from_column_slice(p, p, &r.f64s("moment_lambda_outer", p * p)?),
            factor_sum: DMatrix::from_column_slice(p, t, &r.f64s("moment_factor", p * t)?),
            sigma2_sum: DVector::from_column_slice(&r.f64s("moment_sigma2", p)?),
        };
        let archive = PosteriorArchive {
            meta,
            draws,
            snapshots,
            moments,
            acceptance: m.acceptance,
        };
        archive.validate()?;
        Ok(archive)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    meta: ArchiveMeta,
    n_draws: usize,
    n_snapshots: usize,
    moment_count: u64,
    acceptance: AcceptanceStats,
    payload_sha256: String,
    sections: Vec<Section>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Section {
    name: String,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Default)]
struct SectionWriter {
    buf: Vec<u8>,
    sections: Vec<Section>,
}

impl SectionWriter {
    fn push<const N: usize>(&mut self, name: &str, dtype: &str, items: impl Iterator<Item = [u8; N]>) {
        let offset = self.buf.len();
        let mut len = 0;
        for bytes in items {
            self.buf.extend_from_slice(&bytes);
            len += 1;
        }
        self.sections.push(Section {
            name: name.to_string(),
            dtype: dtype.to_string(),
            offset,
            len,
        });
    }

    fn f64s(&mut self, name: &str, items: impl Iterator<Item = f64>) {
        self.push(name, "f64", items.map(f64::to_le_bytes));
    }

    fn u64s(&mut self, name: &str, items: impl Iterator<Item = u64>) {
        self.push(name, "u64", items.map(u64::to_le_bytes));
    }
}

struct SectionReader<'a> {
    sections: &'a [Section],
    buf: &'a [u8],
}

impl SectionReader<'_> {
    fn raw(&self, name: &str, dtype: &str, expected: usize) -> Result<&[u8]> {
        let s = self
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Format(format!("archive section {name:?} missing")))?;
        if s.dtype != dtype || s.len != expected {
            return Err(Error::Format(format!(
                "archive section {name:?}: expected {expected} × {dtype}, found {} × {}",
                s.len, s.dtype
            )));
        }
        let end = s.offset + 8 * s.len;
        self.buf
            .get(s.offset..end)
            .ok_or_else(|| Error::Format(format!("archive section {name:?} runs past the payload")))
    }

    fn f64s(&self, name: &str, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .raw(name, "f64", n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u64s(&self, name: &str, n: usize) -> Result<Vec<u64>> {
        Ok(self
            .raw(name, "u64", n)?
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(p: usize, q: usize, nl: usize, t: usize) -> ArchiveMeta {
        ArchiveMeta {
            mode: Mode::Dependent,
            probe_ids: (0..p).map(|i| format!("g{i}")).collect(),
            times_hours: (0..t).map(|j| 2.0 * j as f64).collect(),
            periods: (0..q).map(|m| 4.0 + 2.0 * m as f64).collect(),
            n_local: nl,
            n_iter: 10,
            burn_in: 4,
            thin: 2,
            seed: 9,
            config_hash: "abc".into(),
        }
    }

    fn sample_archive() -> PosteriorArchive {
        let (p, q, nl, t) = (3, 2, 5, 6);
        let mut a = PosteriorArchive::new(meta(p, q, nl, t));
        for s in 0..3 {
            let mut theta = DMatrix::zeros(p, 2 * q);
            theta[(0, 0)] = 1.5 + s as f64;
            theta[(0, 1)] = -0.25;
            theta[(2, 3)] = 0.5;
            let mut gamma = DMatrix::zeros(p, nl);
            gamma[(1, 4)] = 2.0;
            let sigma2 = DVector::from_element(p, 0.5 + s as f64);
            a.draws.push(RetainedDraw::from_effective(5 + 2 * s as u64, 2, 7.0, 9.0, &theta, &gamma, &sigma2));
        }
        let lambda = DMatrix::from_fn(p, 2, |i, h| (i + h) as f64);
        let eta = DMatrix::from_fn(t, 2, |j, h| j as f64 - h as f64);
        a.snapshots.push(FactorSnapshot { sweep: 5, lambda: lambda.clone(), eta: eta.clone() });
        a.moments.add(&lambda, &eta, &DVector::from_element(p, 1.0));
        a.acceptance = AcceptanceStats { theta_accepted: 3, theta_proposed: 9, gamma_accepted: 1, gamma_proposed: 9 };
        a
    }

    #[test]
    fn retained_count_arithmetic() {
        assert_eq!(retained_count(50_000, 20_000, 5), 6000);
        assert_eq!(retained_count(12, 10, 2), 1);
        let kept: Vec<u64> = (1..=10).filter(|&t| is_retained(t, 4, 2)).collect();
        assert_eq!(kept, vec![6, 8, 10]);
    }

    #[test]
    fn masks_follow_effective_values() {
        let a = sample_archive();
        let d = &a.draws[0];
        assert!(d.pair_active(0, 0));
        assert!(!d.pair_active(0, 1));
        assert!(d.pair_active(2, 1));
        assert!(d.gamma_active(1, 4));
        assert!(!d.gamma_active(0, 4));
        a.validate().unwrap();
    }

    #[test]
    fn round_trip_is_exact() {
        let a = sample_archive();
        let dir = tempfile::tempdir().unwrap();
        a.write_dir(dir.path()).unwrap();
        let b = PosteriorArchive::read_dir(dir.path()).unwrap();
        assert_eq!(a, b);
        let (m1, p1) = a.encode().unwrap();
        let (m2, p2) = b.encode().unwrap();
        assert_eq!((m1, p1), (m2, p2));
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let a = sample_archive();
        let (m, mut p) = a.encode().unwrap();
        p[3] ^= 1;
        assert!(matches!(PosteriorArchive::decode(&m, &p), Err(Error::Format(_))));
    }

    #[test]
    fn inconsistent_mask_is_rejected() {
        let mut a = sample_archive();
        a.draws[1].theta_mask.set(1, true);
        assert!(a.validate().is_err());
    }
}
