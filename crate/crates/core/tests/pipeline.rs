//! Cross-module behavior: encoder separation after pretraining, frozen
//! encoders during RL, and log/compare interoperability on real runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use apfrl_core::config::{RunConfig, Variant};
use apfrl_core::envs::{make_env, PixelEnv};
use apfrl_core::stats::{compare_report, SignConvention};
use apfrl_core::trainer::{collect_corpus, train, EncoderPlug, TrainSession};
use apfrl_core::wnet::{pretrain, pretrain_optimizer, stack_frames, UNetConfig, WNet};

fn light_wnet(seed: u64) -> WNet {
    let (corpus, _) = collect_corpus("pellet_pursuit", 256, seed).unwrap();
    let cfg = UNetConfig {
        in_channels: 3,
        height: 96,
        width: 80,
        enc_widths: [4, 8, 8, 4],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wnet = WNet::build(cfg, &mut rng).unwrap();
    let mut opt = pretrain_optimizer(1e-3).unwrap();
    pretrain(&mut wnet, &corpus, 6, 32, &mut opt, &mut rng).unwrap();
    wnet
}

#[test]
fn sprite_position_separates_embeddings_after_pretraining() {
    let wnet = light_wnet(31);
    // two frames from the same seed differing only by one agent move
    let mut env = make_env("pellet_pursuit").unwrap();
    let f_before = env.reset(5);
    let start = env.oracle_features();
    let mut f_after = None;
    for a in 0..4 {
        env.reset(5);
        let out = env.step(a).unwrap();
        let now = env.oracle_features();
        if now[0] != start[0] || now[1] != start[1] {
            f_after = Some(out.frame);
            break;
        }
    }
    let f_after = f_after.expect("some action moves the agent");
    let x = stack_frames(&[f_before, f_after], &[0, 1]).unwrap();
    let z = wnet.encode(&x).unwrap();
    let d = z.shape()[1];
    let dist: f64 = (0..d)
        .map(|i| {
            let diff = (z.data()[i] - z.data()[d + i]) as f64;
            diff * diff
        })
        .sum::<f64>()
        .sqrt();
    assert!(dist > 0.0, "sprite move produced identical embeddings");
}

#[test]
fn encoder_stays_frozen_through_training() {
    let mut cfg = RunConfig::default();
    cfg.variant = Variant::ApfOracleDdqn;
    cfg.seed = 2;
    cfg.total_frames = 400;
    cfg.pre.side = 24;
    cfg.ddqn.conv_channels = [4, 8];
    cfg.ddqn.fc_features = 32;
    cfg.ddqn.warmup = 64;
    let mut session = TrainSession::new(cfg).unwrap();

    let mut probe_env = make_env("pellet_pursuit").unwrap();
    let frame = probe_env.reset(77);
    let before = session
        .encoder()
        .encode(&frame, probe_env.as_ref())
        .unwrap()
        .unwrap();
    session.run_episode().unwrap();
    session.run_episode().unwrap();
    let after = session
        .encoder()
        .encode(&frame, probe_env.as_ref())
        .unwrap()
        .unwrap();
    assert_eq!(before, after, "encoding changed during RL training");
    assert!(matches!(session.encoder(), EncoderPlug::Oracle { .. }));
}

#[test]
fn real_runs_flow_into_the_compare_report() {
    let run = |variant: Variant, seed: u64| {
        let mut cfg = RunConfig::default();
        cfg.variant = variant;
        cfg.seed = seed;
        cfg.total_frames = 900;
        cfg.pre.side = 24;
        cfg.ddqn.conv_channels = [4, 8];
        cfg.ddqn.fc_features = 32;
        cfg.ddqn.warmup = 64;
        cfg.ddqn.replay_capacity = 512;
        train(&cfg).unwrap().log
    };
    let a: Vec<_> = (0..2).map(|s| run(Variant::Ddqn, s)).collect();
    let b: Vec<_> = (0..2).map(|s| run(Variant::ApfOracleDdqn, s)).collect();
    let report = compare_report(&a, &b, 0.05, SignConvention::default()).unwrap();
    assert_eq!(report.envs.len(), 1);
    let tsv = report.to_tsv();
    assert!(tsv.contains("pellet_pursuit"));
    // logs round-trip through files into the same report
    let dir = tempfile::tempdir().unwrap();
    for (i, log) in a.iter().chain(&b).enumerate() {
        log.write(&dir.path().join(format!("log{i}.tsv"))).unwrap();
    }
    let a2: Vec<_> = (0..2)
        .map(|i| apfrl_core::trainlog::TrainLog::read(&dir.path().join(format!("log{i}.tsv"))).unwrap())
        .collect();
    let b2: Vec<_> = (2..4)
        .map(|i| apfrl_core::trainlog::TrainLog::read(&dir.path().join(format!("log{i}.tsv"))).unwrap())
        .collect();
    let report2 = compare_report(&a2, &b2, 0.05, SignConvention::default()).unwrap();
    assert_eq!(report.to_tsv(), report2.to_tsv());
}
