use nalgebra::DMatrix;

use circafactor::archive::PosteriorArchive;
use circafactor::model::{fitted_mean, ExpressionMatrix, HyperParams};
use circafactor::sampler::sweep::adapt_rank;
use circafactor::sampler::{
    gibbs_sweep, initial_state, run_chain, run_chain_with, AdaptSchedule, ChainConfig, ChainOutcome, Mode,
    RunOptions, SweepContext,
};
use circafactor::synth::{generate_dependent, SynthConfig};
use circafactor::Error;

fn small_problem(p: usize, seed: u64) -> (ExpressionMatrix, SynthConfig) {
    let mut cfg = SynthConfig::dependent(p, seed);
    cfg.k_true = 2;
    let (data, _) = generate_dependent(&cfg).unwrap();
    (data, cfg)
}

fn fit(data: &ExpressionMatrix, cfg: &SynthConfig, chain: &ChainConfig, mode: Mode) -> PosteriorArchive {
    run_chain(data, &cfg.designs().unwrap(), &HyperParams::default(), chain, mode).unwrap()
}

#[test]
fn archive_length_follows_thinning() {
    let (data, cfg) = small_problem(12, 1);
    for (n_iter, burn_in, thin) in [(30, 10, 2), (31, 10, 3), (12, 10, 2), (25, 0, 5)] {
        let archive = fit(&data, &cfg, &ChainConfig::new(n_iter, burn_in, thin, 3), Mode::Dependent);
        assert_eq!(archive.len() as u64, (n_iter - burn_in) / thin, "{n_iter} {burn_in} {thin}");
        let sweeps: Vec<u64> = archive.draws.iter().map(|d| d.sweep).collect();
        let expected: Vec<u64> = (burn_in + 1..=n_iter).filter(|t| (t - burn_in) % thin == 0).collect();
        assert_eq!(sweeps, expected);
        archive.validate().unwrap();
    }
}

#[test]
fn single_retained_draw() {
    let (data, cfg) = small_problem(10, 2);
    let archive = fit(&data, &cfg, &ChainConfig::new(14, 10, 4, 1), Mode::Dependent);
    assert_eq!(archive.len(), 1);
    assert_eq!(archive.draws[0].sweep, 14);
}

#[test]
fn burn_in_must_be_below_iterations() {
    let (data, cfg) = small_problem(8, 2);
    let designs = cfg.designs().unwrap();
    let err = run_chain(&data, &designs, &HyperParams::default(), &ChainConfig::new(10, 10, 1, 1), Mode::Dependent)
        .unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn masks_zero_pairs_jointly() {
    let (data, cfg) = small_problem(15, 3);
    let archive = fit(&data, &cfg, &ChainConfig::new(40, 20, 1, 5), Mode::Dependent);
    for d in &archive.draws {
        for i in 0..15 {
            for m in 0..archive.n_periods() {
                let (s, c) = d.theta_pair(i, m);
                if d.pair_active(i, m) {
                    assert!(s != 0.0 || c != 0.0);
                } else {
                    assert_eq!((s, c), (0.0, 0.0));
                }
            }
        }
    }
}

#[test]
fn same_seed_gives_identical_archives_in_parallel_and_serial() {
    let (data, cfg) = small_problem(25, 4);
    let mut chain = ChainConfig::new(60, 20, 2, 9);
    let a = fit(&data, &cfg, &chain, Mode::Dependent);
    let b = fit(&data, &cfg, &chain, Mode::Dependent);
    chain.parallel = false;
    let c = fit(&data, &cfg, &chain, Mode::Dependent);
    assert_eq!(a.encode().unwrap(), b.encode().unwrap());
    assert_eq!(a.encode().unwrap(), c.encode().unwrap());

    chain.seed = 10;
    let d = fit(&data, &cfg, &chain, Mode::Dependent);
    assert_ne!(a.encode().unwrap().1, d.encode().unwrap().1);
}

#[test]
fn independent_mode_has_no_factor_contribution() {
    let (data, cfg) = small_problem(15, 5);
    let archive = fit(&data, &cfg, &ChainConfig::new(40, 10, 3, 2), Mode::Independent);
    assert!(!archive.snapshots.is_empty());
    for s in &archive.snapshots {
        assert!(s.lambda.iter().all(|v| *v == 0.0));
        assert!(s.eta.iter().all(|v| *v == 0.0));
    }
    assert!(archive.moments.mean_factor().iter().all(|v| *v == 0.0));
}

#[test]
fn archive_round_trips_through_disk() {
    let (data, cfg) = small_problem(10, 6);
    let archive = fit(&data, &cfg, &ChainConfig::new(30, 10, 2, 8), Mode::Dependent);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("archive");
    archive.write_dir(&path).unwrap();
    let back = PosteriorArchive::read_dir(&path).unwrap();
    assert_eq!(archive.encode().unwrap(), back.encode().unwrap());
}

#[test]
fn resumed_chain_matches_uninterrupted_chain() {
    let (data, cfg) = small_problem(15, 7);
    let designs = cfg.designs().unwrap();
    let hyper = HyperParams::default();
    let mut chain = ChainConfig::new(50, 10, 2, 11);
    chain.checkpoint_every = 7;
    let reference = fit(&data, &cfg, &chain, Mode::Dependent);

    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    let stop = RunOptions {
        checkpoint_dir: Some(ck.clone()),
        stop_after: Some(23),
        ..RunOptions::default()
    };
    match run_chain_with(&data, &designs, &hyper, &chain, Mode::Dependent, &stop).unwrap() {
        ChainOutcome::Interrupted { next_sweep } => assert_eq!(next_sweep, 24),
        ChainOutcome::Complete(_) => panic!("chain should have stopped"),
    }
    let resume = RunOptions {
        checkpoint_dir: Some(ck.clone()),
        resume: true,
        ..RunOptions::default()
    };
    let resumed = match run_chain_with(&data, &designs, &hyper, &chain, Mode::Dependent, &resume).unwrap() {
        ChainOutcome::Complete(a) => a,
        ChainOutcome::Interrupted { .. } => panic!("chain should finish"),
    };
    assert_eq!(reference.encode().unwrap(), resumed.encode().unwrap());

    let mut other = chain.clone();
    other.seed = 12;
    let err = run_chain_with(&data, &designs, &hyper, &other, Mode::Dependent, &resume).unwrap_err();
    assert!(matches!(err, Error::ResumeMismatch(_)));
}

#[test]
fn sweeps_preserve_state_invariants() {
    let (data, cfg) = small_problem(20, 8);
    let designs = cfg.designs().unwrap();
    let hyper = HyperParams::default();
    for mode in [Mode::Dependent, Mode::Independent] {
        let mut state = initial_state(data.values(), &designs, &hyper, mode, 3).unwrap();
        let schedule = AdaptSchedule {
            start: 5,
            c0: 0.0,
            c1: 0.0,
            ..AdaptSchedule::default()
        };
        let ctx = SweepContext::new(data.values(), &designs, &hyper, mode, 3, true, Some(schedule)).unwrap();
        for t in 1..=30 {
            gibbs_sweep(&mut state, &ctx, t).unwrap();
            state.check_invariants().unwrap();
            assert!(state.noise.k_theta >= state.theta.thresholds.max());
            assert!(state.noise.k_gamma >= state.gamma.thresholds_star.max());
        }
    }
}

#[test]
fn metropolis_acceptance_is_strictly_between_zero_and_one() {
    let (data, cfg) = small_problem(40, 9);
    let archive = fit(&data, &cfg, &ChainConfig::new(1000, 200, 10, 4), Mode::Dependent);
    let rates = [archive.acceptance.theta_rate(), archive.acceptance.gamma_rate()];
    for r in rates {
        assert!(r > 0.0 && r < 1.0, "{rates:?}");
    }
}

fn always(start: u64) -> AdaptSchedule {
    AdaptSchedule {
        start,
        c0: 0.0,
        c1: 0.0,
        ..AdaptSchedule::default()
    }
}

#[test]
fn rank_adaptation_drops_a_zero_column_without_changing_the_fit() {
    let (data, cfg) = small_problem(10, 10);
    let designs = cfg.designs().unwrap();
    let hyper = HyperParams::default();
    let mut state = initial_state(data.values(), &designs, &hyper, Mode::Dependent, 1).unwrap();
    let k = state.k();
    assert!(k >= 3);
    state.factors.lambda = DMatrix::from_fn(10, k, |i, h| if h == 1 { 0.0 } else { 0.3 + (i + h) as f64 * 0.1 });
    let before = fitted_mean(&state, &designs).unwrap();
    let ctx = SweepContext::new(data.values(), &designs, &hyper, Mode::Dependent, 1, false, None).unwrap();
    assert!(adapt_rank(&mut state, &ctx, &always(0), 1).unwrap());
    assert_eq!(state.k(), k - 1);
    state.check_invariants().unwrap();
    let after = fitted_mean(&state, &designs).unwrap();
    assert!((before - after).abs().max() < 1e-12);
}

#[test]
fn rank_adaptation_adds_a_column_when_none_is_negligible() {
    let (data, cfg) = small_problem(10, 11);
    let designs = cfg.designs().unwrap();
    let hyper = HyperParams::default();
    let mut state = initial_state(data.values(), &designs, &hyper, Mode::Dependent, 1).unwrap();
    let k = state.k();
    state.factors.lambda = DMatrix::from_element(10, k, 0.5);
    let ctx = SweepContext::new(data.values(), &designs, &hyper, Mode::Dependent, 1, false, None).unwrap();
    assert!(adapt_rank(&mut state, &ctx, &always(0), 1).unwrap());
    assert_eq!(state.k(), k + 1);
    state.check_invariants().unwrap();

    let mut capped = always(0);
    capped.max_k = state.k();
    assert!(!adapt_rank(&mut state, &ctx, &capped, 2).unwrap());
    assert!(!adapt_rank(&mut state, &ctx, &always(10), 3).unwrap());
}

#[test]
fn rank_adaptation_keeps_min_k_columns() {
    let (data, cfg) = small_problem(10, 12);
    let designs = cfg.designs().unwrap();
    let hyper = HyperParams::default();
    let mut state = initial_state(data.values(), &designs, &hyper, Mode::Dependent, 1).unwrap();
    state.factors.lambda.fill(0.0);
    let ctx = SweepContext::new(data.values(), &designs, &hyper, Mode::Dependent, 1, false, None).unwrap();
    let mut schedule = always(0);
    schedule.min_k = 2;
    assert!(adapt_rank(&mut state, &ctx, &schedule, 1).unwrap());
    assert_eq!(state.k(), 2);
    state.check_invariants().unwrap();
}
