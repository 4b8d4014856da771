//! The chain driver: sweeps, thinning, checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sweep::{gibbs_sweep, SweepContext};
use super::{initial_state, ChainConfig, Mode};
use crate::archive::{hex, is_retained, ArchiveMeta, FactorSnapshot, PosteriorArchive, RetainedDraw};
use crate::basis::{DesignPair, KernelKind};
use crate::error::{Error, Result};
use crate::model::{ExpressionMatrix, HyperParams, ModelState};

const CHECKPOINT_FORMAT: &str = "circafactor-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
const STATE_FILE: &str = "state.json";
const ARCHIVE_SUBDIR: &str = "archive";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory that receives checkpoints every `checkpoint_every` sweeps.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `checkpoint_dir`.
    pub resume: bool,
    /// Stop (after checkpointing) once this sweep completes.
    pub stop_after: Option<u64>,
    /// Log progress every this many sweeps; 0 disables.
    pub log_every: u64,
}

#[derive(Debug)]
pub enum ChainOutcome {
    Complete(PosteriorArchive),
    Interrupted { next_sweep: u64 },
}

/// Runs a chain to completion without checkpoints.
pub fn run_chain(
    data: &ExpressionMatrix,
    designs: &DesignPair,
    hyper: &HyperParams,
    config: &ChainConfig,
    mode: Mode,
) -> Result<PosteriorArchive> {
    match run_chain_with(data, designs, hyper, config, mode, &RunOptions::default())? {
        ChainOutcome::Complete(a) => Ok(a),
        ChainOutcome::Interrupted { .. } => unreachable!("no stop requested"),
    }
}

pub fn run_chain_with(
    data: &ExpressionMatrix,
    designs: &DesignPair,
    hyper: &HyperParams,
    config: &ChainConfig,
    mode: Mode,
    opts: &RunOptions,
) -> Result<ChainOutcome> {
    config.validate()?;
    hyper.validate()?;
    let y = data.values();
    let hash = config_hash(data, designs, hyper, config, mode)?;

    let (mut state, mut archive, start) = if opts.resume {
        let dir = opts
            .checkpoint_dir
            .as_deref()
            .ok_or_else(|| Error::invalid("resume requested without a checkpoint directory"))?;
        let ck = Checkpoint::load(dir)?;
        if ck.config_hash != hash {
            return Err(Error::ResumeMismatch(format!(
                "checkpoint was written for configuration {}, current configuration is {}",
                ck.config_hash, hash
            )));
        }
        (ck.state, ck.archive, ck.next_sweep)
    } else {
        let meta = ArchiveMeta {
            mode,
            probe_ids: data.probe_ids().to_vec(),
            times_hours: data.grid().times_hours().to_vec(),
            periods: designs.periods.as_slice().to_vec(),
            n_local: designs.n_local(),
            n_iter: config.n_iter,
            burn_in: config.burn_in,
            thin: config.thin,
            seed: config.seed,
            config_hash: hash.clone(),
        };
        let state = initial_state(y, designs, hyper, mode, config.seed)?;
        (state, PosteriorArchive::new(meta), 1)
    };

    let adapt = (mode == Mode::Dependent && config.adapt.enabled).then_some(config.adapt);
    let ctx = SweepContext::new(y, designs, hyper, mode, config.seed, config.parallel, adapt)?;

    for t in start..=config.n_iter {
        let stats = gibbs_sweep(&mut state, &ctx, t)?;
        let acc = &mut archive.acceptance;
        acc.theta_accepted += stats.theta_accepted;
        acc.theta_proposed += stats.theta_proposed;
        acc.gamma_accepted += stats.gamma_accepted;
        acc.gamma_proposed += stats.gamma_proposed;

        if is_retained(t, config.burn_in, config.thin) {
            record(&mut archive, &state, t, config.record_lambda_every);
        }
        if opts.log_every > 0 && t % opts.log_every == 0 {
            log::info!(
                "sweep {t}/{}: k = {}, theta acceptance {:.3}, gamma acceptance {:.3}",
                config.n_iter,
                state.k(),
                archive.acceptance.theta_rate(),
                archive.acceptance.gamma_rate()
            );
        }
        let stopping = opts.stop_after == Some(t) && t < config.n_iter;
        if let Some(dir) = &opts.checkpoint_dir {
            let due = config.checkpoint_every > 0 && t % config.checkpoint_every == 0;
            if (due || stopping) && t < config.n_iter {
                Checkpoint {
                    config_hash: hash.clone(),
                    next_sweep: t + 1,
                    state: state.clone(),
                    archive: archive.clone(),
                }
                .write_atomic(dir)?;
            }
        }
        if stopping {
            return Ok(ChainOutcome::Interrupted { next_sweep: t + 1 });
        }
    }
    Ok(ChainOutcome::Complete(archive))
}

fn record(archive: &mut PosteriorArchive, state: &ModelState, sweep: u64, every: u64) {
    let index = archive.draws.len() as u64;
    archive.draws.push(RetainedDraw::from_effective(
        sweep,
        state.k(),
        state.noise.k_theta,
        state.noise.k_gamma,
        &state.theta.theta,
        &state.gamma.gamma,
        &state.noise.sigma2,
    ));
    archive
        .moments
        .add(&state.factors.lambda, &state.factors.eta, &state.noise.sigma2);
    if every > 0 && index % every == 0 {
        archive.snapshots.push(FactorSnapshot {
            sweep,
            lambda: state.factors.lambda.clone(),
            eta: state.factors.eta.clone(),
        });
    }
}

#[derive(Serialize)]
struct HashInput<'a> {
    n_iter: u64,
    burn_in: u64,
    thin: u64,
    seed: u64,
    adapt: &'a super::AdaptSchedule,
    record_lambda_every: u64,
    hyper: &'a HyperParams,
    mode: Mode,
    periods: &'a [f64],
    kernel: KernelKind,
    bandwidth: f64,
    n_local: usize,
    times_hours: &'a [f64],
    probe_ids: &'a [String],
    data_sha256: String,
}

/// Digest of everything that determines the draws. Parallelism and
/// checkpoint cadence are excluded since they do not change the output.
pub fn config_hash(
    data: &ExpressionMatrix,
    designs: &DesignPair,
    hyper: &HyperParams,
    config: &ChainConfig,
    mode: Mode,
) -> Result<String> {
    let mut h = Sha256::new();
    for v in data.values().iter() {
        h.update(v.to_le_bytes());
    }
    let input = HashInput {
        n_iter: config.n_iter,
        burn_in: config.burn_in,
        thin: config.thin,
        seed: config.seed,
        adapt: &config.adapt,
        record_lambda_every: config.record_lambda_every,
        hyper,
        mode,
        periods: designs.periods.as_slice(),
        kernel: designs.kernel_kind,
        bandwidth: designs.bandwidth,
        n_local: designs.n_local(),
        times_hours: data.grid().times_hours(),
        probe_ids: data.probe_ids(),
        data_sha256: hex(&h.finalize()),
    };
    Ok(hex(&Sha256::digest(serde_json::to_vec(&input)?)))
}

/// Full chain state at a sweep boundary. Random substreams are keyed by
/// sweep, so the next sweep index is the entire generator position.
pub struct Checkpoint {
    pub config_hash: String,
    pub next_sweep: u64,
    pub state: ModelState,
    pub archive: PosteriorArchive,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    config_hash: String,
    next_sweep: u64,
    state: ModelState,
}

impl Checkpoint {
    /// Writes into a sibling directory and renames it into place.
    pub fn write_atomic(&self, dir: &Path) -> Result<()> {
        let staging = sibling(dir, "partial");
        let old = sibling(dir, "old");
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: self.config_hash.clone(),
            next_sweep: self.next_sweep,
            state: self.state.clone(),
        };
        fs::write(staging.join(STATE_FILE), serde_json::to_vec(&header)?)?;
        self.archive.write_dir(&staging.join(ARCHIVE_SUBDIR))?;
        if dir.exists() {
            if old.exists() {
                fs::remove_dir_all(&old)?;
            }
            fs::rename(dir, &old)?;
        }
        fs::rename(&staging, dir)?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = if dir.join(STATE_FILE).exists() {
            dir.to_path_buf()
        } else {
            // a crash between the two renames leaves only the old copy
            let old = sibling(dir, "old");
            if old.join(STATE_FILE).exists() {
                old
            } else {
                return Err(Error::invalid(format!("no checkpoint found in {}", dir.display())));
            }
        };
        let header: CheckpointHeader = serde_json::from_slice(&fs::read(path.join(STATE_FILE))?)?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                header.format, header.version
            )));
        }
        header.state.check_invariants()?;
        let archive = PosteriorArchive::read_dir(&path.join(ARCHIVE_SUBDIR))?;
        Ok(Checkpoint {
            config_hash: header.config_hash,
            next_sweep: header.next_sweep,
            state: header.state,
            archive,
        })
    }
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{suffix}"));
    dir.with_file_name(name)
}
