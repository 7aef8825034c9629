//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers (visible with `--nocapture`).
//!
//! The heavy criteria (encoder pretraining, desk-scale learning runs) share a
//! single deterministic pretrained W-Net through a `OnceLock`.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use apfrl_core::apf::{
    apf_update, potential_table, shaping, ApfNetwork, Trajectory,
};
use apfrl_core::config::{RunConfig, Variant};
use apfrl_core::ddqn::{argmax, DuelingConfig, DuelingNet};
use apfrl_core::envs::{
    make_env, value_iteration, ChainMdp, GameFrame, SpriteBox,
};
use apfrl_core::envs::chain::{greedy_policy, q_learning};
use apfrl_core::stats::{
    binomial_sign, compare_report, welch_t, SignConvention, TieRule,
};
use apfrl_core::trainer::{collect_corpus, random_policy_returns, train};
use apfrl_core::wnet::{pretrain, pretrain_optimizer, stack_frames, UNetConfig, WNet};
use apfrl_nn::{Algorithm, LayerSpec, Network32, Optimizer32, Tensor32};

const DESK_WIDTHS: [usize; 4] = [8, 16, 16, 8];
const PRETRAIN_FRAMES: usize = 5000;
const PRETRAIN_EPOCHS: usize = 30;
const PRETRAIN_BATCH: usize = 64;
const PRETRAIN_SEED: u64 = 42;

fn pass(criterion: u32, detail: &str) {
    println!("[criterion {criterion:>2}] PASS — {detail}");
}

/// Criterion 1: potential-based shaping preserves the greedy policy.
/// Tabular Q-learning on ChainMDP(n=7, slip=0.1, gamma=0.9), 50k steps, with
/// and without a random static potential, must match the value-iteration
/// oracle's argmax on every non-terminal state for all 10 seeds.
#[test]
fn criterion_01_pbrs_policy_invariance() {
    let start = Instant::now();
    let mdp = ChainMdp::new(7, 0.9, 0.1).unwrap();
    let (_, oracle) = value_iteration(&mdp, 1e-10).unwrap();
    for seed in 0..10u64 {
        let mut phi_rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut phi: Vec<f64> = (0..7).map(|_| phi_rng.gen_range(-1.0..1.0)).collect();
        phi[6] = 0.0; // terminal potential is zero by convention

        let q_plain = q_learning(&mdp, 50_000, 0.2, seed, None).unwrap();
        let q_shaped = q_learning(&mdp, 50_000, 0.2, seed, Some(&phi)).unwrap();
        let p_plain = greedy_policy(&q_plain);
        let p_shaped = greedy_policy(&q_shaped);
        for s in 0..6 {
            assert_eq!(
                p_plain[s], oracle[s],
                "seed {seed}: unshaped greedy differs from the oracle at state {s}"
            );
            assert_eq!(
                p_shaped[s], oracle[s],
                "seed {seed}: shaped greedy differs from the oracle at state {s}"
            );
        }
    }
    assert!(start.elapsed().as_secs() < 60, "took {:?}", start.elapsed());
    pass(1, &format!(
        "shaped and unshaped tabular Q-learning match the oracle policy on all 10 seeds ({:?})",
        start.elapsed()
    ));
}

/// Criterion 2: the potential table equals an independent brute-force recount
/// for 200 random synthetic trajectory sets over a 20-symbol alphabet.
#[test]
fn criterion_02_potential_table_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let n_good = rng.gen_range(1..6);
        let n_bad = rng.gen_range(0..6);
        let mut good = Vec::new();
        let mut bad = Vec::new();
        // independent oracle: plain integer counting over symbol ids
        let mut count_g = [0u32; 20];
        let mut count_b = [0u32; 20];
        let build = |counts: &mut [u32; 20], rng: &mut ChaCha8Rng| -> Trajectory {
            let len = rng.gen_range(1..40);
            let mut t = Trajectory::new(1000);
            for _ in 0..len {
                let sym = rng.gen_range(0..20usize);
                counts[sym] += 1;
                t.push(vec![sym as f32]);
            }
            t
        };
        for _ in 0..n_good {
            good.push(build(&mut count_g, &mut rng));
        }
        for _ in 0..n_bad {
            bad.push(build(&mut count_b, &mut rng));
        }
        let good_refs: Vec<&Trajectory> = good.iter().collect();
        let bad_refs: Vec<&Trajectory> = bad.iter().collect();
        let table = potential_table(&good_refs, &bad_refs, 3).unwrap();

        let mut seen = 0;
        for sym in 0..20usize {
            let (ng, nb) = (count_g[sym], count_b[sym]);
            if ng + nb == 0 {
                continue;
            }
            seen += 1;
            let (key, _) = apfrl_core::apf::quantize(&[sym as f32], 3);
            let entry = table.get(key).unwrap_or_else(|| {
                panic!("case {case}: symbol {sym} missing from the table")
            });
            assert_eq!((entry.n_good, entry.n_bad), (ng, nb), "case {case}, symbol {sym}");
            let p = entry.potential();
            assert!((-1.0..=1.0).contains(&p));
            let expect = (ng as f64 - nb as f64) / (ng as f64 + nb as f64);
            assert!((p as f64 - expect).abs() < 1e-6);
        }
        assert_eq!(table.len(), seen, "case {case}: table has extra keys");
    }
    pass(2, "200 random trajectory sets recounted exactly; all potentials in [-1, 1]");
}

/// Criterion 3: shaped rewards telescope: sum gamma^t F = gamma^T phi(z_T) -
/// phi(z_0) within 1e-4 for 100 random networks and 100-step sequences.
#[test]
fn criterion_03_shaping_telescopes() {
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + case);
        let dim = rng.gen_range(4..16);
        let net = ApfNetwork::build(dim, 0.5, &mut rng).unwrap();
        let gamma = rng.gen_range(0.9f32..1.0);
        let seq: Vec<Vec<f32>> = (0..101)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let mut sum = 0.0f64;
        for t in 0..100 {
            let f = shaping(&net, &seq[t], &seq[t + 1], gamma, false).unwrap();
            sum += (gamma as f64).powi(t as i32) * f as f64;
        }
        let expect = (gamma as f64).powi(100) * net.potential(&seq[100]).unwrap() as f64
            - net.potential(&seq[0]).unwrap() as f64;
        let err = (sum - expect).abs();
        worst = worst.max(err);
        assert!(err < 1e-4, "case {case}: telescoped {sum} vs {expect}");
    }
    pass(3, &format!("100 random telescoping sums agree within 1e-4 (worst {worst:.2e})"));
}

/// Criterion 4: dueling identities over 100 random nets and inputs:
/// mean_a Q = V within 1e-5 and an advantage-bias shift leaves Q unchanged.
#[test]
fn criterion_04_dueling_identities() {
    let mut worst_mean = 0.0f32;
    let mut worst_shift = 0.0f32;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + case);
        let cfg = DuelingConfig {
            in_channels: 4,
            side: 16,
            num_actions: rng.gen_range(2..8),
            conv_channels: [4, 8],
            fc_features: 24,
        };
        let mut net = DuelingNet::build(cfg.clone(), &mut rng).unwrap();
        let x = Tensor32::from_vec(
            &[2, 4, 16, 16],
            (0..2 * 4 * 16 * 16).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        )
        .unwrap();
        let (v, _, q) = net.streams(&x).unwrap();
        for b in 0..2 {
            let row = &q.data()[b * cfg.num_actions..(b + 1) * cfg.num_actions];
            let mean = row.iter().sum::<f32>() / cfg.num_actions as f32;
            let err = (mean - v.data()[b]).abs();
            worst_mean = worst_mean.max(err);
            assert!(err <= 1e-5, "case {case}: mean_a Q - V = {err}");
        }
        let greedy_before: Vec<usize> = (0..2)
            .map(|b| argmax(&q.data()[b * cfg.num_actions..(b + 1) * cfg.num_actions]))
            .collect();
        let shift = rng.gen_range(-7.0f32..7.0);
        net.shift_advantage_bias(shift);
        let q2 = net.q_values(&x).unwrap();
        for (a, b) in q.data().iter().zip(q2.data()) {
            let err = (a - b).abs();
            worst_shift = worst_shift.max(err);
            assert!(err <= 1e-5, "case {case}: Q moved by {err} under a constant shift");
        }
        let greedy_after: Vec<usize> = (0..2)
            .map(|b| argmax(&q2.data()[b * cfg.num_actions..(b + 1) * cfg.num_actions]))
            .collect();
        assert_eq!(greedy_before, greedy_after, "case {case}: greedy action changed");
    }
    pass(4, &format!(
        "100 random nets: |mean_a Q - V| <= {worst_mean:.2e}, shift invariance <= {worst_shift:.2e}"
    ));
}

/// Criterion 5: every layer kind passes randomized finite-difference gradient
/// verification (>= 100 coordinates) at 1e-3 relative error, 32-bit precision.
#[test]
fn criterion_05_gradient_checks() {
    let cases: Vec<(&str, Vec<LayerSpec>, Vec<usize>)> = vec![
        (
            "conv2d",
            vec![LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 8,
                kernel: 3,
                stride: 2,
                pad: 1,
            }],
            vec![2, 3, 8, 6],
        ),
        (
            "conv_transpose2d",
            vec![LayerSpec::ConvTranspose2d {
                in_channels: 4,
                out_channels: 6,
                kernel: 3,
                stride: 2,
                pad: 1,
                out_pad: 1,
            }],
            vec![2, 4, 4, 5],
        ),
        (
            "linear",
            vec![LayerSpec::Linear {
                in_features: 12,
                out_features: 9,
            }],
            vec![3, 12],
        ),
        (
            "relu",
            vec![
                LayerSpec::Linear {
                    in_features: 12,
                    out_features: 9,
                },
                LayerSpec::Relu,
            ],
            vec![3, 12],
        ),
        (
            "dropout",
            vec![
                LayerSpec::Linear {
                    in_features: 12,
                    out_features: 9,
                },
                LayerSpec::Dropout { p: 0.3 },
            ],
            vec![3, 12],
        ),
    ];
    let mut report = Vec::new();
    for (i, (name, specs, shape)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i as u64);
        let mut net = Network32::build(specs, &mut rng).unwrap();
        assert!(net.param_count() >= 100, "{name}: too few parameters to sample");
        let n: usize = shape.iter().product();
        let x = Tensor32::from_vec(
            shape,
            (0..n).map(|k| 0.3 + 0.5 * ((k * 37 % 83) as f32 / 83.0)).collect(),
        )
        .unwrap();
        let err = net.grad_check(&x, 1e-3, 150, 900 + i as u64).unwrap();
        assert!(err <= 1e-3, "{name}: max relative error {err}");
        report.push(format!("{name} {err:.1e}"));
    }
    pass(5, &format!("finite differences per layer kind: {}", report.join(", ")));
}

/// Criterion 6: paper-scale shape fidelity on a 3x208x160 frame: per-U-Net
/// bottleneck 13x10, W-Net embedding length 260, single U-Net length 130.
#[test]
fn criterion_06_wnet_shape_fidelity() {
    let cfg = UNetConfig::paper_scale();
    assert_eq!((cfg.height, cfg.width), (208, 160));
    assert_eq!(cfg.bottleneck_hw(), (13, 10));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let wnet = WNet::build(cfg.clone(), &mut rng).unwrap();
    let frame = Tensor32::from_vec(
        &[1, 3, 208, 160],
        (0..3 * 208 * 160).map(|i| (i % 255) as f32 / 255.0).collect(),
    )
    .unwrap();
    let f = wnet.forward_full(&frame).unwrap();
    assert_eq!(f.embedding.shape(), &[1, 260]);
    assert_eq!(wnet.embedding_len(), 260);
    // residual identity holds bit-exactly at full scale too
    for ((&x, &o1), &r) in frame.data().iter().zip(f.out_u1.data()).zip(f.residual.data()) {
        assert_eq!(x - o1, r);
    }
    let single = apfrl_core::wnet::SingleUNet::build(cfg, &mut rng).unwrap();
    assert_eq!(single.embedding_len(), 130);
    assert_eq!(single.encode(&frame).unwrap().shape(), &[1, 130]);
    pass(6, "208x160 frame: bottlenecks 13x10, embedding 260 (W-Net) / 130 (single U-Net)");
}

/// Held-out frames with ground-truth sprite boxes.
fn heldout_frames(count: usize, seed: u64) -> (Vec<GameFrame>, Vec<Vec<SpriteBox>>) {
    let mut env = make_env("pellet_pursuit").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut frames = Vec::with_capacity(count);
    let mut boxes = Vec::with_capacity(count);
    frames.push(env.reset(seeds.gen()));
    boxes.push(env.sprite_boxes());
    while frames.len() < count {
        if env.is_terminal() {
            frames.push(env.reset(seeds.gen()));
        } else {
            let a = rng.gen_range(0..env.num_actions());
            frames.push(env.step(a).unwrap().frame);
        }
        boxes.push(env.sprite_boxes());
    }
    (frames, boxes)
}

/// Shared pretrained desk-scale W-Net (criterion 7's regimen), reused by the
/// learning runs of criterion 10.
fn pretrained_wnet() -> &'static Arc<WNet> {
    static WNET: OnceLock<Arc<WNet>> = OnceLock::new();
    WNET.get_or_init(|| {
        let (corpus, _) = collect_corpus("pellet_pursuit", PRETRAIN_FRAMES, PRETRAIN_SEED).unwrap();
        let cfg = UNetConfig {
            in_channels: 3,
            height: 96,
            width: 80,
            enc_widths: DESK_WIDTHS,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(PRETRAIN_SEED);
        let mut wnet = WNet::build(cfg, &mut rng).unwrap();
        let mut opt = pretrain_optimizer(1e-3).unwrap();
        let history = pretrain(
            &mut wnet,
            &corpus,
            PRETRAIN_EPOCHS,
            PRETRAIN_BATCH,
            &mut opt,
            &mut rng,
        )
        .unwrap();
        println!(
            "shared W-Net pretrained: {} params, loss {:.5} -> {:.5}",
            wnet.param_count(),
            history.first().unwrap(),
            history.last().unwrap()
        );
        assert!(
            history.last().unwrap() < history.first().unwrap(),
            "pretraining loss failed to improve: {history:?}"
        );
        Arc::new(wnet)
    })
}

/// Criterion 7: behavioral decomposition after pretraining on 5000 frames for
/// 30 epochs at batch 64: the first U-Net reconstructs the background better
/// than the sprites, and >= 40% of the residual's L1 mass falls inside sprite
/// boxes covering < 10% of the pixels, on a held-out 500-frame set.
#[test]
fn criterion_07_wnet_behavioral_decomposition() {
    let start = Instant::now();
    let wnet = pretrained_wnet();
    let (frames, boxes) = heldout_frames(500, 777);

    let mut bg_sq = 0.0f64;
    let mut bg_n = 0u64;
    let mut sprite_sq = 0.0f64;
    let mut sprite_n = 0u64;
    let mut res_inside = 0.0f64;
    let mut res_total = 0.0f64;
    let mut box_pixels = 0u64;
    let mut all_pixels = 0u64;

    for chunk_start in (0..frames.len()).step_by(50) {
        let idx: Vec<usize> = (chunk_start..(chunk_start + 50).min(frames.len())).collect();
        let x = stack_frames(&frames, &idx).unwrap();
        let f = wnet.forward_full(&x).unwrap();
        let (h, w) = (96usize, 80usize);
        let hw = h * w;
        for (bi, &fi) in idx.iter().enumerate() {
            let sprite_box = &boxes[fi];
            box_pixels += sprite_box.iter().map(|b| b.area() as u64).sum::<u64>();
            all_pixels += hw as u64;
            for y in 0..h {
                for xx in 0..w {
                    let inside = sprite_box.iter().any(|b| b.contains(y, xx));
                    for c in 0..3 {
                        let at = bi * 3 * hw + c * hw + y * w + xx;
                        let d = (f.out_u1.data()[at] - x.data()[at]) as f64;
                        let r = f.residual.data()[at].abs() as f64;
                        if inside {
                            sprite_sq += d * d;
                            sprite_n += 1;
                            res_inside += r;
                        } else {
                            bg_sq += d * d;
                            bg_n += 1;
                        }
                        res_total += r;
                    }
                }
            }
        }
    }
    let bg_mse = bg_sq / bg_n as f64;
    let sprite_mse = sprite_sq / sprite_n as f64;
    let res_fraction = res_inside / res_total;
    let coverage = box_pixels as f64 / all_pixels as f64;

    assert!(coverage < 0.10, "sprite boxes cover {:.1}% of pixels", coverage * 100.0);
    assert!(
        bg_mse < sprite_mse,
        "background MSE {bg_mse:.6} not below sprite MSE {sprite_mse:.6}"
    );
    assert!(
        res_fraction >= 0.40,
        "only {:.1}% of residual L1 mass lies inside sprite boxes",
        res_fraction * 100.0
    );
    assert!(
        start.elapsed().as_secs() < 20 * 60,
        "criterion 7 took {:?}",
        start.elapsed()
    );
    pass(7, &format!(
        "bg MSE {bg_mse:.5} < sprite MSE {sprite_mse:.5}; {:.1}% of residual mass in {:.1}% of pixels ({:?})",
        res_fraction * 100.0,
        coverage * 100.0,
        start.elapsed()
    ));
}

/// Criterion 8: potential regression on a frozen 100-entry table reaches
/// MSE < 1e-3 within 2000 minibatch steps. Dropout is disabled in this
/// fixture so the regression path itself is what converges.
#[test]
fn criterion_08_apf_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut good = Trajectory::new(1_000_000);
    let mut bad = Trajectory::new(1_000_000);
    let embeddings: Vec<Vec<f32>> = (0..100)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    for z in &embeddings {
        let ng = rng.gen_range(0..=10u32);
        let nb = if ng == 0 { rng.gen_range(1..=10) } else { rng.gen_range(0..=10) };
        for _ in 0..ng {
            good.push(z.clone());
        }
        for _ in 0..nb {
            bad.push(z.clone());
        }
    }
    let table = potential_table(&[&good], &[&bad], 3).unwrap();
    assert_eq!(table.len(), 100);

    let mut net = ApfNetwork::build(8, 0.0, &mut rng).unwrap();
    let mut opt = Optimizer32::new(Algorithm::adam(), 1e-3).unwrap();
    let train_loss = apf_update(&mut net, &table, &mut opt, 2000, 256, &mut rng).unwrap();
    let mut mse = 0.0f64;
    for e in table.entries() {
        let d = (net.potential(&e.embedding).unwrap() - e.potential()) as f64;
        mse += d * d;
    }
    mse /= table.len() as f64;
    assert!(mse < 1e-3, "table MSE {mse} after 2000 steps (train loss {train_loss})");
    pass(8, &format!("100-entry table fitted to MSE {mse:.2e} within 2000 steps"));
}

fn desk_run_config(variant: Variant, seed: u64, frames: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.env = "pellet_pursuit".into();
    cfg.variant = variant;
    cfg.seed = seed;
    cfg.total_frames = frames;
    cfg
}

/// Criterion 9: with the potential output clamped to zero, the shaped variant
/// reproduces the bare DDQN's training log bit for bit (10k-frame run).
#[test]
fn criterion_09_zero_potential_equivalence() {
    let frames = 10_000;
    let ddqn = train(&desk_run_config(Variant::Ddqn, 3, frames)).unwrap();
    let mut clamp_cfg = desk_run_config(Variant::ApfOracleDdqn, 3, frames);
    clamp_cfg.apf.clamp_potential_zero = true;
    let clamped = train(&clamp_cfg).unwrap();

    // identical episode data; run metadata necessarily names the variant
    let rows = |log: &apfrl_core::trainlog::TrainLog| -> String {
        log.to_tsv()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(ddqn.log.episodes, clamped.log.episodes);
    assert_eq!(rows(&ddqn.log), rows(&clamped.log));
    pass(9, &format!(
        "10k-frame runs identical over {} episodes (byte-equal log rows)",
        ddqn.log.episodes.len()
    ));
}

/// Criterion 10: learning at desk scale. DDQN on PelletPursuit (5 seeds x
/// 200k frames) beats the uniform-random baseline by >= 3 standard errors in
/// the End period; the shaped variants are not significantly worse than DDQN
/// (Welch, alpha = 0.05, End period); and the comparison report runs
/// end-to-end over all three.
#[test]
fn criterion_10_desk_scale_learning() {
    let start = Instant::now();
    let frames = 200_000u64;
    let seeds: Vec<u64> = (0..5).collect();

    // pretrain once and share the frozen encoder across the wnet runs
    let dir = tempfile::tempdir().unwrap();
    let wnet_path = dir.path().join("wnet.bin");
    pretrained_wnet().save(&wnet_path, vec![]).unwrap();

    let mut jobs: Vec<RunConfig> = Vec::new();
    for &seed in &seeds {
        jobs.push(desk_run_config(Variant::Ddqn, seed, frames));
        jobs.push(desk_run_config(Variant::ApfOracleDdqn, seed, frames));
        let mut wnet_cfg = desk_run_config(Variant::ApfWnetDdqn, seed, frames);
        wnet_cfg.encoder.weights_path = Some(wnet_path.display().to_string());
        jobs.push(wnet_cfg);
    }
    let logs: Vec<apfrl_core::trainlog::TrainLog> = jobs
        .par_iter()
        .map(|cfg| {
            let out = train(cfg).expect("training run failed");
            println!(
                "run {} seed {}: {} episodes, last-20 mean {:.2}",
                cfg.variant.name(),
                cfg.seed,
                out.log.episodes.len(),
                out.log.episodes.iter().rev().take(20).map(|e| e.return_raw as f64).sum::<f64>()
                    / out.log.episodes.len().min(20) as f64
            );
            out.log
        })
        .collect();

    let by_variant = |name: &str| -> Vec<apfrl_core::trainlog::TrainLog> {
        logs.iter().filter(|l| l.variant == name).cloned().collect()
    };
    let end_returns = |set: &[apfrl_core::trainlog::TrainLog]| -> Vec<f64> {
        set.iter()
            .flat_map(|l| {
                apfrl_core::stats::period_split(l, l.total_frames).unwrap().end
            })
            .collect()
    };
    let ddqn_logs = by_variant("ddqn");
    let oracle_logs = by_variant("apf_oracle_ddqn");
    let wnet_logs = by_variant("apf_wnet_ddqn");
    assert_eq!(ddqn_logs.len(), 5);
    assert_eq!(oracle_logs.len(), 5);
    assert_eq!(wnet_logs.len(), 5);

    // (a) DDQN beats the uniform-random baseline by >= 3 standard errors
    let baseline = random_policy_returns("pellet_pursuit", 200, 99).unwrap();
    let ddqn_end = end_returns(&ddqn_logs);
    let mean_end = ddqn_end.iter().sum::<f64>() / ddqn_end.len() as f64;
    let var_end = ddqn_end.iter().map(|r| (r - mean_end).powi(2)).sum::<f64>()
        / (ddqn_end.len() as f64 - 1.0);
    let se = (var_end / ddqn_end.len() as f64
        + baseline.std * baseline.std / baseline.returns.len() as f64)
        .sqrt();
    println!(
        "DDQN End mean {mean_end:.2} over {} episodes vs random {:.2}; margin {:.2} needed {:.2}",
        ddqn_end.len(),
        baseline.mean,
        mean_end - baseline.mean,
        3.0 * se
    );
    assert!(
        mean_end - baseline.mean >= 3.0 * se,
        "DDQN End mean {mean_end:.3} does not beat the random baseline {:.3} by 3 SE ({:.3})",
        baseline.mean,
        3.0 * se
    );

    // (b) shaped variants not significantly worse than DDQN in the End period
    for (name, set) in [("apf_oracle_ddqn", &oracle_logs), ("apf_wnet_ddqn", &wnet_logs)] {
        let other = end_returns(set);
        let t = welch_t(&other, &ddqn_end).unwrap();
        println!(
            "{name} End mean {:.2} vs DDQN {:.2}: t {:.3}, p {:.4} ({})",
            t.mean_a,
            t.mean_b,
            t.t,
            t.p,
            if t.p < 0.05 {
                if t.t > 0.0 { "significantly better" } else { "significantly worse" }
            } else {
                "no significant difference"
            }
        );
        assert!(
            !(t.p < 0.05 && t.t < 0.0),
            "{name} is significantly worse than DDQN (t {:.3}, p {:.4})",
            t.t,
            t.p
        );
    }

    // (c) the comparison report runs end-to-end over all three
    for (a, b) in [(&ddqn_logs, &oracle_logs), (&ddqn_logs, &wnet_logs)] {
        let report = compare_report(a, b, 0.05, SignConvention::default()).unwrap();
        let tsv = report.to_tsv();
        assert!(tsv.contains("pellet_pursuit"));
        std::fs::write(
            dir.path().join(format!("report_{}.tsv", report.variant_b)),
            &tsv,
        )
        .unwrap();
        println!("{}", report.render());
    }
    pass(10, &format!(
        "5 seeds x 200k frames x 3 variants trained, compared, and reported ({:?})",
        start.elapsed()
    ));
}

/// Criterion 11: statistics exactness — binomial tails by exact integer
/// summation (agreeing with a brute-force 2^20 enumeration), the documented
/// convention reference points, and Welch fixtures from a high-precision
/// reference implementation within 1e-9 (t) / 1e-6 (p).
#[test]
fn criterion_11_statistics_exactness() {
    // exact binomial values
    let r15 = binomial_sign(15, 5, 0, SignConvention::default()).unwrap();
    assert_eq!(r15.exact, Some((21700, 1 << 20)));
    assert!((r15.p - 0.020694732666015625).abs() < 1e-15);
    let r14 = binomial_sign(14, 6, 0, SignConvention::default()).unwrap();
    assert_eq!(r14.exact, Some((60460, 1 << 20)));
    assert!((r14.p - 0.057659149169921875).abs() < 1e-12);

    // brute force: enumerate all 2^20 win/loss outcomes
    let mut ge15 = 0u32;
    let mut ge14 = 0u32;
    for mask in 0u32..(1 << 20) {
        let wins = mask.count_ones();
        if wins >= 15 {
            ge15 += 1;
        }
        if wins >= 14 {
            ge14 += 1;
        }
    }
    assert_eq!(ge15 as u128, 21700);
    assert_eq!(ge14 as u128, 60460);

    // the report documents the convention mapping for published numbers
    let make_log = |env: &str, variant: &str| apfrl_core::trainlog::TrainLog {
        env: env.into(),
        variant: variant.into(),
        seed: 0,
        total_frames: 300,
        config_hash: "t".into(),
        episodes: (0..30)
            .map(|i| apfrl_core::trainlog::EpisodeRecord {
                episode: i,
                end_frame: (i + 1) * 10,
                return_raw: (i % 4) as f32,
                return_shaped: 0.0,
                epsilon: 0.1,
                apf_loss: 0.0,
                td_loss: 0.0,
            })
            .collect(),
    };
    let report = compare_report(
        &[make_log("env", "a")],
        &[make_log("env", "b")],
        0.05,
        SignConvention::default(),
    )
    .unwrap();
    for text in [report.to_tsv(), report.render()] {
        assert!(text.contains("0.020695") && text.contains("0.057659"));
        assert!(text.contains("0.039177"));
        assert!(text.contains("P(X >= 15)"));
    }

    // Welch fixtures against the frozen high-precision reference
    let data = include_str!("data/welch_fixtures.tsv");
    let mut checked = 0;
    let mut worst_t = 0.0f64;
    let mut worst_p = 0.0f64;
    for line in data.lines().filter(|l| !l.starts_with('#')) {
        let cells: Vec<&str> = line.split('\t').collect();
        assert_eq!(cells.len(), 4, "bad fixture row");
        let parse = |s: &str| -> Vec<f64> {
            s.split(',').map(|v| v.parse().unwrap()).collect()
        };
        let (a, b) = (parse(cells[0]), parse(cells[1]));
        let t_ref: f64 = cells[2].parse().unwrap();
        let p_ref: f64 = cells[3].parse().unwrap();
        let r = welch_t(&a, &b).unwrap();
        worst_t = worst_t.max((r.t - t_ref).abs());
        worst_p = worst_p.max((r.p - p_ref).abs());
        assert!((r.t - t_ref).abs() < 1e-9, "t {} vs {}", r.t, t_ref);
        assert!((r.p - p_ref).abs() < 1e-6, "p {} vs {}", r.p, p_ref);
        checked += 1;
    }
    assert_eq!(checked, 100);

    // the mid-p flag reproduces the alternative published readings
    let midp = SignConvention { ties: TieRule::Drop, midp: true };
    assert!((binomial_sign(14, 6, 0, midp).unwrap().p - 0.03917694091796875).abs() < 1e-15);
    assert!((binomial_sign(8, 12, 0, midp).unwrap().p - 0.808344841003418).abs() < 1e-12);

    pass(11, &format!(
        "binomial tails exact (2^20 brute force agrees); 100 Welch fixtures within {worst_t:.1e} (t), {worst_p:.1e} (p)"
    ));
}
