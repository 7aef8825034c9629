//! End-to-end checks of the `apfrl` binary: artifact production, exit codes,
//! and the compare contract.

use std::path::Path;
use std::process::{Command, Output};

fn apfrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apfrl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Tiny desk config shared by the CLI runs in this file.
const TINY: &[&str] = &[
    "--set",
    "pre.side=24",
    "--set",
    "ddqn.conv_channels=[4,8]",
    "--set",
    "ddqn.fc_features=32",
    "--set",
    "ddqn.warmup=64",
    "--set",
    "ddqn.replay_capacity=512",
];

#[test]
fn pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // collect
    let out = apfrl(d, &["collect", "--env", "pellet_pursuit", "--frames", "64", "--seed", "1", "--out", "corpus.bin"]);
    assert_code(&out, 0);
    assert!(d.join("corpus.bin").exists());
    assert!(d.join("corpus.bin.features.tsv").exists());

    // pretrain (writes weights + recon grid)
    let out = apfrl(d, &[
        "pretrain", "--frames", "corpus.bin", "--epochs", "1", "--batch", "16",
        "--widths", "4,8,8,4", "--out", "wnet.bin",
    ]);
    assert_code(&out, 0);
    assert!(d.join("wnet.bin").exists());
    assert!(d.join("wnet.bin.recon.ppm").exists());
    let ppm = std::fs::read(d.join("wnet.bin.recon.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n# config "), "recon grid embeds the config hash");

    // train (config echo + log + checkpoint)
    let mut args = vec![
        "train", "--env", "pellet_pursuit", "--variant", "ddqn", "--frames", "600",
        "--seed", "3", "--out", "run",
    ];
    args.extend_from_slice(TINY);
    let out = apfrl(d, &args);
    assert_code(&out, 0);
    for f in ["run/log.tsv", "run/config.toml", "run/checkpoint_final.bin"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(d.join("run/log.tsv")).unwrap();
    assert!(log.contains("# config_hash="), "log embeds the config hash");

    // evaluate the checkpoint
    let mut args = vec![
        "evaluate", "--checkpoint", "run/checkpoint_final.bin", "--episodes", "2", "--seed", "5",
    ];
    args.extend_from_slice(TINY);
    let out = apfrl(d, &args);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean return"));

    // render-recon reuses the saved weights (arch read from the manifest)
    let out = apfrl(d, &[
        "render-recon", "--weights", "wnet.bin", "--frames", "corpus.bin",
        "--count", "2", "--out", "grid.ppm",
    ]);
    assert_code(&out, 0);
    assert!(d.join("grid.ppm").exists());
}

#[test]
fn compare_runs_and_rejects_mismatched_env_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir_all(d.join("logs/a")).unwrap();
    std::fs::create_dir_all(d.join("logs/b")).unwrap();

    let write_log = |path: &Path, env: &str, variant: &str, base: f32| {
        let mut text = format!(
            "# apfrl-trainlog v1\n# env={env}\n# variant={variant}\n# seed=0\n# total_frames=300\n# config_hash=f00d\n"
        );
        text.push_str("episode\tend_frame\treturn_raw\treturn_shaped\tepsilon\tapf_loss\ttd_loss\n");
        for i in 0..30 {
            let r = base + (i % 3) as f32;
            text.push_str(&format!("{i}\t{}\t{r}\t{r}\t0.1\t0\t0\n", (i + 1) * 10));
        }
        std::fs::write(path, text).unwrap();
    };
    write_log(&d.join("logs/a/log.tsv"), "pellet_pursuit", "ddqn", 1.0);
    write_log(&d.join("logs/b/log.tsv"), "pellet_pursuit", "apf_wnet_ddqn", 8.0);

    let out = apfrl(d, &["compare", "--a", "logs/a", "--b", "logs/b", "--out", "rep"]);
    assert_code(&out, 0);
    let tsv = std::fs::read_to_string(d.join("rep/report.tsv")).unwrap();
    assert!(tsv.contains("pellet_pursuit"));
    assert!(tsv.contains("B-better"));
    assert!(d.join("rep/report.txt").exists());
    // compare never mutates its inputs
    let before = std::fs::read(d.join("logs/a/log.tsv")).unwrap();
    let after = std::fs::read(d.join("logs/a/log.tsv")).unwrap();
    assert_eq!(before, after);

    // mismatched env sets -> exit 1 with a diagnostic
    write_log(&d.join("logs/b/log.tsv"), "cross_road", "apf_wnet_ddqn", 8.0);
    let out = apfrl(d, &["compare", "--a", "logs/a", "--b", "logs/b", "--out", "rep2"]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("environment sets differ"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // unknown flag
    let out = apfrl(d, &["train", "--bogus-flag"]);
    assert_code(&out, 1);
    // unknown environment
    let out = apfrl(d, &["collect", "--env", "atari", "--frames", "4", "--out", "c.bin"]);
    assert_code(&out, 1);
    // unknown variant
    let out = apfrl(d, &["train", "--variant", "rainbow", "--frames", "10"]);
    assert_code(&out, 1);
    // bad config override
    let out = apfrl(d, &["train", "--frames", "10", "--set", "ddqn.gamma=2.0"]);
    assert_code(&out, 1);
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // corrupt weight file -> runtime/data error
    std::fs::write(d.join("bad.bin"), b"not a weight file").unwrap();
    let mut args = vec!["evaluate", "--checkpoint", "bad.bin", "--episodes", "1"];
    args.extend_from_slice(TINY);
    let out = apfrl(d, &args);
    assert_code(&out, 2);

    // missing checkpoint -> io error
    let mut args = vec!["evaluate", "--checkpoint", "nope.bin", "--episodes", "1"];
    args.extend_from_slice(TINY);
    let out = apfrl(d, &args);
    assert_code(&out, 2);
}

#[test]
fn train_echoes_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg_text = "env = \"pellet_pursuit\"\nvariant = \"ddqn\"\ntotal_frames = 400\n\n[pre]\nside = 24\n\n[ddqn]\nconv_channels = [4, 8]\nfc_features = 32\nwarmup = 64\n";
    std::fs::write(d.join("run.toml"), cfg_text).unwrap();
    let out = apfrl(d, &["train", "--config", "run.toml", "--seed", "9", "--out", "out"]);
    assert_code(&out, 0);
    let echoed = std::fs::read_to_string(d.join("out/config.toml")).unwrap();
    assert!(echoed.contains("seed = 9"), "flag override reaches the echo");
    assert!(echoed.contains("side = 24"));
    let log = std::fs::read_to_string(d.join("out/log.tsv")).unwrap();
    assert!(log.contains("# seed=9"));
}
