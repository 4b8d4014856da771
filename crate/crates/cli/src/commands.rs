use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use circafactor::archive::PosteriorArchive;
use circafactor::baselines::{fisher_scores, Direction, ScoreFile};
use circafactor::diagnostics::{ess_csv, ess_table, geweke_joint_test, GewekeConfig};
use circafactor::io::{read_dataset_csv, write_dataset_csv};
use circafactor::priors::marginal_sparsity_distribution;
use circafactor::sampler::{run_chain_with, ChainOutcome, RunOptions};
use circafactor::summaries::{
    curves_csv, discovery_csv, edge_list_csv, fdr_select, marginal_correlation, rhythm_scores, roc_and_fdr_curves,
    summary_table_csv, CorrelationEstimate,
};
use circafactor::synth::{generate_dependent, generate_independent, GroundTruth};
use circafactor::Error;

use crate::config::{FitConfig, Generator, SimulateConfig};
use crate::{BaselineArgs, EvaluateArgs, FitArgs, GewekeArgs, SimulateArgs, SparsityArgs, SummarizeArgs};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let config = SimulateConfig::parse(&read_text(&args.config)?)?;
    let (data, truth) = match config.model {
        Generator::Dependent => generate_dependent(&config.synth)?,
        Generator::Independent => generate_independent(&config.synth)?,
    };
    create_dir(&args.out)?;
    write_dataset_csv(&args.out.join("dataset.csv"), &data)?;
    truth.write_json(&args.out.join("truth.json"), data.probe_ids())?;
    let mut echo = serde_json::to_string_pretty(&config)?;
    echo.push('\n');
    write_text(&args.out.join("config.json"), &echo)?;
    log::info!(
        "simulated {} probes: {} periodic, {} circadian",
        data.n_probes(),
        truth.n_periodic(),
        truth.n_circadian()
    );
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let mut config = FitConfig::parse(&read_text(&args.config)?)?;
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    let data = read_dataset_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let designs = config.designs(data.grid().times_hours())?;
    let opts = RunOptions {
        checkpoint_dir: Some(args.checkpoint.clone().unwrap_or_else(|| args.out.join("checkpoint"))),
        resume: args.resume,
        stop_after: args.stop_after,
        log_every: args.log_every,
    };
    create_dir(&args.out)?;
    write_text(&args.out.join("config.json"), &config.to_json()?)?;
    match run_chain_with(&data, &designs, &config.hyper(), &config.chain(), config.mode, &opts)? {
        ChainOutcome::Complete(archive) => {
            archive.write_dir(&args.out)?;
            log::info!(
                "wrote {} retained draws; acceptance theta {:.3}, gamma {:.3}",
                archive.len(),
                archive.acceptance.theta_rate(),
                archive.acceptance.gamma_rate()
            );
        }
        ChainOutcome::Interrupted { next_sweep } => {
            log::info!("stopped before sweep {next_sweep}; continue with --resume");
        }
    }
    Ok(())
}

pub fn summarize(args: &SummarizeArgs) -> Result<()> {
    let archive = PosteriorArchive::read_dir(&args.archive)
        .with_context(|| format!("reading archive {}", args.archive.display()))?;
    let scores = rhythm_scores(&archive, args.target_period)?;
    let ids = &archive.meta.probe_ids;
    let betas: Vec<f64> = scores.iter().map(|s| s.beta).collect();
    let list = fdr_select(&betas, args.k_star)?;
    let estimate = if args.snapshot_correlation {
        CorrelationEstimate::SnapshotAverage
    } else {
        CorrelationEstimate::PosteriorMeanCovariance
    };
    let network = marginal_correlation(&archive, args.edge_threshold, estimate)?;

    create_dir(&args.out)?;
    write_text(&args.out.join("summary.csv"), &summary_table_csv(&archive, args.target_period)?)?;
    write_text(&args.out.join("discoveries.csv"), &discovery_csv(&list, ids, &betas))?;
    write_text(&args.out.join("edges.csv"), &edge_list_csv(&network, ids))?;
    write_text(&args.out.join("ess.csv"), &ess_csv(&ess_table(&archive)))?;
    for (name, values) in [
        ("periodic", scores.iter().map(|s| s.prob_periodic).collect::<Vec<_>>()),
        ("circadian", scores.iter().map(|s| s.prob_circadian).collect()),
    ] {
        let file = ScoreFile {
            probe_ids: ids.clone(),
            scores: values,
            direction: Direction::Higher,
        };
        file.write_csv(&args.out.join(format!("scores_{name}.csv")))?;
    }
    log::info!(
        "{} discoveries at expected FDR {:.4} (bound {}), {} edges",
        list.selected.len(),
        list.expected_fdr,
        args.k_star,
        network.edges.len()
    );
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let truth = GroundTruth::read_labels(&args.truth)
        .with_context(|| format!("reading truth {}", args.truth.display()))?;
    let labels = match args.label.as_str() {
        "periodic" => &truth.periodic,
        "circadian" => &truth.circadian,
        other => return Err(Error::invalid(format!("label must be periodic or circadian, got {other:?}")).into()),
    };
    let position: HashMap<&str, usize> = truth.probe_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    create_dir(&args.out)?;
    let mut table = String::from("method,auc\n");
    let mut seen = Vec::new();
    for entry in &args.scores {
        let (name, path) = entry
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--scores expects name=path, got {entry:?}")))?;
        if name.is_empty() || seen.contains(&name) {
            return Err(Error::invalid(format!("method names must be distinct and non-empty, got {name:?}")).into());
        }
        seen.push(name);
        let file = ScoreFile::read_csv(Path::new(path))?;
        if file.probe_ids.len() != truth.probe_ids.len() {
            return Err(Error::invalid(format!(
                "{path}: {} scores for {} probes",
                file.probe_ids.len(),
                truth.probe_ids.len()
            ))
            .into());
        }
        let mut aligned = vec![false; file.probe_ids.len()];
        for (k, id) in file.probe_ids.iter().enumerate() {
            let i = *position
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("{path}: probe {id} is not in the truth file")))?;
            aligned[k] = labels[i];
        }
        let curves = roc_and_fdr_curves(&file.oriented(), &aligned)?;
        write_text(&args.out.join(format!("curves_{name}.csv")), &curves_csv(&curves))?;
        writeln!(table, "{name},{}", curves.auc).expect("writing to a string");
        log::info!("{name}: AUC {:.4}", curves.auc);
    }
    write_text(&args.out.join("auc.csv"), &table)
}

pub fn baseline(args: &BaselineArgs) -> Result<()> {
    let data = read_dataset_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let scores = fisher_scores(data.probe_ids(), data.values())?;
    scores.write_csv(&args.out)?;
    Ok(())
}

pub fn sparsity(args: &SparsityArgs) -> Result<()> {
    if args.bins == 0 {
        return Err(Error::invalid("bins must be positive").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let probs = marginal_sparsity_distribution(args.a, args.b, args.draws, &mut rng)?;
    let mut counts = vec![0usize; args.bins];
    for p in &probs {
        let bin = ((p * args.bins as f64) as usize).min(args.bins - 1);
        counts[bin] += 1;
    }
    let mut s = String::from("bin_lower,bin_upper,count\n");
    for (b, c) in counts.iter().enumerate() {
        let w = 1.0 / args.bins as f64;
        writeln!(s, "{},{},{c}", b as f64 * w, (b + 1) as f64 * w).expect("writing to a string");
    }
    write_text(&args.out, &s)?;
    let mean = probs.iter().map(|p| 1.0 - p).sum::<f64>() / probs.len().max(1) as f64;
    let max = probs.iter().copied().fold(0.0, f64::max);
    log::info!("mean sparsity {mean:.5}, largest keep probability {max:.5}");
    Ok(())
}

pub fn geweke(args: &GewekeArgs) -> Result<()> {
    let mut config = GewekeConfig::tiny(args.mode, args.seed);
    config.n_outer = args.outer;
    let report = geweke_joint_test(&config)?;
    write_text(&args.out, &report.to_csv())?;
    log::info!("{}: max |z| {:.3} over {} functions", args.mode, report.max_abs_z(), report.stats.len());
    Ok(())
}
