//! `apfrl` — batch experimentation over the shaped-DQN pipeline:
//! collect, pretrain, train, evaluate, compare, render-recon.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use apfrl_core::config::RunConfig;
use apfrl_core::envs::corpus;
use apfrl_core::error::CoreError;
use apfrl_core::stats::{compare_report_with, SignConvention, TestFamily, TieRule};
use apfrl_core::trainer;
use apfrl_core::trainlog::TrainLog;
use apfrl_core::wnet::{
    pretrain, pretrain_optimizer, pretrain_single, recon_report, recon_report_single, write_ppm,
    SingleUNet, UNetConfig, WNet,
};
use rand_chacha::rand_core::SeedableRng;

#[derive(Parser)]
#[command(name = "apfrl", version, about = "Adaptive-potential-function RL pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump a random-policy frame corpus plus its oracle-feature sidecar.
    Collect(CollectArgs),
    /// Pretrain a frame encoder on a corpus; writes weights and a recon grid.
    Pretrain(PretrainArgs),
    /// Run one training run from a config file with flag overrides.
    Train(TrainArgs),
    /// Roll out a checkpoint greedily and report return statistics.
    Evaluate(EvaluateArgs),
    /// Statistical comparison of two log directories.
    Compare(CompareArgs),
    /// Render the reconstruction grid of saved encoder weights.
    RenderRecon(RenderReconArgs),
}

#[derive(Args)]
struct CollectArgs {
    /// Environment id (pellet_pursuit or cross_road).
    #[arg(long)]
    env: String,
    /// Number of frames to collect.
    #[arg(long)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output corpus path (a .features.tsv sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Corpus file produced by `collect`.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Encoder architecture: `wnet` or `unet`.
    #[arg(long, default_value = "wnet")]
    arch: String,
    /// Encoder stage widths, comma separated.
    #[arg(long, default_value = "8,16,16,8", value_parser = parse_widths)]
    widths: [usize; 4],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight file output path.
    #[arg(long, default_value = "encoder.bin")]
    out: PathBuf,
    /// Reconstruction grid path (default: <out>.recon.ppm).
    #[arg(long)]
    recon: Option<PathBuf>,
    /// Columns in the reconstruction grid.
    #[arg(long, default_value_t = 5)]
    recon_count: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    /// Total frame budget.
    #[arg(long)]
    frames: Option<u64>,
    /// Output directory for log.tsv, config echo, and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted config overrides, e.g. --set ddqn.learning_rate=1e-5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config describing the environment and network architecture.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory of training logs for the first variant.
    #[arg(long)]
    a: PathBuf,
    /// Directory of training logs for the second variant.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Mid-p correction for the binomial sign test.
    #[arg(long)]
    midp: bool,
    /// Use Student's pooled-variance t instead of Welch's.
    #[arg(long)]
    pooled: bool,
    /// Tie handling: `drop` or `count`.
    #[arg(long, default_value = "drop")]
    ties: String,
    /// Output directory for report.tsv and report.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RenderReconArgs {
    /// Encoder weight file (architecture read from its manifest).
    #[arg(long)]
    weights: PathBuf,
    /// Frame corpus to sample columns from.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 5)]
    count: usize,
    #[arg(long, default_value = "recon.ppm")]
    out: PathBuf,
}

fn parse_widths(s: &str) -> Result<[usize; 4], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| "expected exactly 4 comma-separated widths".to_string())
}

/// Provenance hash of a resolved flag set.
fn flags_hash(parts: &[String]) -> String {
    let digest = Sha256::digest(parts.join("\n").as_bytes());
    hex::encode(&digest[..8])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("APFRL_LOG_LEVEL", "info"),
    )
    .format_timestamp(None)
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through this path too
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 1 for usage/input errors, 2 for runtime errors.
fn exit_code(err: &CoreError) -> u8 {
    match err {
        CoreError::Usage(_) | CoreError::Config(_) | CoreError::Data(_) => 1,
        CoreError::Io(_) | CoreError::Nn(_) => 2,
    }
}

fn run(cli: Cli) -> Result<(), CoreError> {
    match cli.command {
        Command::Collect(a) => cmd_collect(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::RenderRecon(a) => cmd_render_recon(a),
    }
}

fn cmd_collect(a: CollectArgs) -> Result<(), CoreError> {
    if a.frames == 0 {
        return Err(CoreError::Usage("--frames must be positive".into()));
    }
    let hash = flags_hash(&[
        format!("collect env={}", a.env),
        format!("frames={}", a.frames),
        format!("seed={}", a.seed),
    ]);
    let (frames, feats) = trainer::collect_corpus(&a.env, a.frames, a.seed)?;
    corpus::write_corpus(&a.out, &frames, &[("config".into(), hash.clone())])?;
    let mut env = apfrl_core::envs::make_env(&a.env)?;
    env.reset(0);
    corpus::write_features(&corpus::features_path(&a.out), &env.feature_names(), &feats)?;
    println!(
        "wrote {} frames ({}x{}) to {} [config {hash}]",
        frames.len(),
        frames[0].height,
        frames[0].width,
        a.out.display()
    );
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<(), CoreError> {
    let frames = corpus::read_corpus(&a.frames)?;
    let first = frames
        .first()
        .ok_or_else(|| CoreError::Data("corpus holds no frames".into()))?;
    let cfg = UNetConfig {
        in_channels: 3,
        height: first.height,
        width: first.width,
        enc_widths: a.widths,
    };
    let hash = flags_hash(&[
        format!("pretrain arch={}", a.arch),
        format!("corpus={}", a.frames.display()),
        format!("epochs={}", a.epochs),
        format!("batch={}", a.batch),
        format!("lr={}", a.lr),
        format!("widths={:?}", a.widths),
        format!("seed={}", a.seed),
    ]);
    let meta = vec![("config".to_string(), hash.clone())];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let mut opt = pretrain_optimizer(a.lr)?;
    let recon_path = a
        .recon
        .unwrap_or_else(|| append_ext(&a.out, "recon.ppm"));
    let count = a.recon_count.clamp(1, frames.len());
    let history = match a.arch.as_str() {
        "wnet" => {
            let mut net = WNet::build(cfg, &mut rng)?;
            let history = pretrain(&mut net, &frames, a.epochs, a.batch, &mut opt, &mut rng)?;
            net.save(&a.out, meta)?;
            let grid = recon_report(&net, &frames[..count])?;
            write_ppm(&grid, &recon_path, Some(&format!("config {hash}")))?;
            println!("W-Net: {} trainable parameters", net.param_count());
            history
        }
        "unet" => {
            let mut net = SingleUNet::build(cfg, &mut rng)?;
            let history =
                pretrain_single(&mut net, &frames, a.epochs, a.batch, &mut opt, &mut rng)?;
            net.save(&a.out, meta)?;
            let grid = recon_report_single(&net, &frames[..count])?;
            write_ppm(&grid, &recon_path, Some(&format!("config {hash}")))?;
            println!("U-Net: {} trainable parameters", net.param_count());
            history
        }
        other => return Err(CoreError::Usage(format!("unknown arch `{other}`"))),
    };
    println!(
        "pretrained {} epochs on {} frames: loss {:.6} -> {:.6} [config {hash}]",
        a.epochs,
        frames.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    println!("weights: {}; recon grid: {}", a.out.display(), recon_path.display());
    Ok(())
}

fn append_ext(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

fn resolved_config(
    config: Option<&Path>,
    seed: Option<u64>,
    env: Option<&str>,
    variant: Option<&str>,
    frames: Option<u64>,
    out: Option<&Path>,
    set: &[String],
) -> Result<RunConfig, CoreError> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(env) = env {
        cfg.env = env.to_string();
    }
    if let Some(variant) = variant {
        cfg.variant = variant.parse()?;
    }
    if let Some(frames) = frames {
        cfg.total_frames = frames;
    }
    if let Some(out) = out {
        cfg.log.out_dir = Some(out.display().to_string());
    }
    for assignment in set {
        cfg.apply_override(assignment)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<(), CoreError> {
    let cfg = resolved_config(
        a.config.as_deref(),
        a.seed,
        a.env.as_deref(),
        a.variant.as_deref(),
        a.frames,
        a.out.as_deref(),
        &a.set,
    )?;
    println!(
        "training {} on {} for {} frames (seed {}, config {})",
        cfg.variant.name(),
        cfg.env,
        cfg.total_frames,
        cfg.seed,
        cfg.hash()
    );
    let out = trainer::train(&cfg)?;
    let episodes = out.log.episodes.len();
    let tail_mean = if episodes > 0 {
        let tail = &out.log.episodes[episodes.saturating_sub(20)..];
        tail.iter().map(|e| e.return_raw as f64).sum::<f64>() / tail.len() as f64
    } else {
        f64::NAN
    };
    println!("finished: {episodes} episodes; mean return over the last 20: {tail_mean:.3}");
    if let Some(dir) = &cfg.log.out_dir {
        println!("artifacts in {dir}: log.tsv, config.toml, checkpoint_final.bin");
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CoreError> {
    let cfg = resolved_config(a.config.as_deref(), None, None, None, None, None, &a.set)?;
    let stats = trainer::evaluate(&cfg, &a.checkpoint, a.episodes, a.seed)?;
    println!(
        "{} episodes on {}: mean return {:.3}, std {:.3}",
        stats.returns.len(),
        cfg.env,
        stats.mean,
        stats.std
    );
    let rendered: Vec<String> = stats.returns.iter().map(|r| r.to_string()).collect();
    println!("returns: {}", rendered.join(" "));
    Ok(())
}

/// Collects training logs under a directory (files named `log.tsv` or any
/// `.tsv` whose first line carries the train-log header), up to depth 2.
fn collect_logs(dir: &Path) -> Result<Vec<TrainLog>, CoreError> {
    fn visit(dir: &Path, depth: usize, out: &mut Vec<TrainLog>) -> Result<(), CoreError> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() && depth > 0 {
                visit(&path, depth - 1, out)?;
            } else if path.extension().is_some_and(|e| e == "tsv") {
                let head = std::fs::read_to_string(&path)
                    .ok()
                    .and_then(|t| t.lines().next().map(String::from))
                    .unwrap_or_default();
                if head == "# apfrl-trainlog v1" {
                    out.push(TrainLog::read(&path)?);
                }
            }
        }
        Ok(())
    }
    let mut logs = Vec::new();
    visit(dir, 2, &mut logs)?;
    if logs.is_empty() {
        return Err(CoreError::Data(format!(
            "no training logs found under {}",
            dir.display()
        )));
    }
    logs.sort_by(|a, b| (&a.env, a.seed).cmp(&(&b.env, b.seed)));
    Ok(logs)
}

fn cmd_compare(a: CompareArgs) -> Result<(), CoreError> {
    let ties = match a.ties.as_str() {
        "drop" => TieRule::Drop,
        "count" => TieRule::Count,
        other => return Err(CoreError::Usage(format!("unknown tie rule `{other}`"))),
    };
    let convention = SignConvention {
        ties,
        midp: a.midp,
    };
    let family = if a.pooled {
        TestFamily::StudentPooled
    } else {
        TestFamily::Welch
    };
    let logs_a = collect_logs(&a.a)?;
    let logs_b = collect_logs(&a.b)?;
    let report = compare_report_with(&logs_a, &logs_b, a.alpha, convention, family)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("report.tsv"), report.to_tsv())?;
    let rendered = report.render();
    std::fs::write(a.out.join("report.txt"), &rendered)?;
    print!("{rendered}");
    Ok(())
}

fn cmd_render_recon(a: RenderReconArgs) -> Result<(), CoreError> {
    let frames = corpus::read_corpus(&a.frames)?;
    let first = frames
        .first()
        .ok_or_else(|| CoreError::Data("corpus holds no frames".into()))?;
    let loaded = apfrl_nn::io::load_entries(&a.weights)?;
    let arch = loaded
        .meta
        .get("arch")
        .cloned()
        .ok_or_else(|| CoreError::Data("weight file does not name an architecture".into()))?;
    let widths: [usize; 4] = loaded
        .meta
        .get("widths")
        .and_then(|w| parse_widths(w).ok())
        .ok_or_else(|| CoreError::Data("weight file does not record encoder widths".into()))?;
    let cfg = UNetConfig {
        in_channels: 3,
        height: first.height,
        width: first.width,
        enc_widths: widths,
    };
    let count = a.count.clamp(1, frames.len());
    let comment = loaded
        .meta
        .get("config")
        .map(|h| format!("config {h}"))
        .unwrap_or_else(|| "config unknown".into());
    let grid = match arch.as_str() {
        "wnet" => recon_report(&WNet::load(cfg, &a.weights)?, &frames[..count])?,
        "unet" => recon_report_single(&SingleUNet::load(cfg, &a.weights)?, &frames[..count])?,
        other => return Err(CoreError::Data(format!("unknown arch `{other}` in weights"))),
    };
    write_ppm(&grid, &a.out, Some(&comment))?;
    println!("wrote {}x{} grid to {}", grid.width, grid.height, a.out.display());
    Ok(())
}
