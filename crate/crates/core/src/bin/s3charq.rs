//! Command-line surface: data generation, staged training, calibration,
//! evaluation sweeps, and plot-ready report emission.

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use s3charq::agent::ActorCritic;
use s3charq::codec::CodecBundle;
use s3charq::config::RunConfig;
use s3charq::data::{generate_splits, save_raw_images, DatasetSplit, PerceptualProjector};
use s3charq::error::Error;
use s3charq::eval;
use s3charq::harq::{LinkSystem, Policy, RetxBundle};
use s3charq::rng::{purpose, stream_rng};
use s3charq::training::{
    self, compute_threshold, load_system, save_system, AgentTrainingOutcome, StageReport,
};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "s3charq",
    about = "Semantic-HARQ link simulator: staged training, retransmission policies, evaluation sweeps"
)]
struct Cli {
    /// Configuration file (sectioned key = value text). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the three dataset splits and write them as raw image files.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run one training stage. Stages 2-4 read the previous stage's checkpoint.
    Train {
        #[arg(long)]
        stage: usize,
        /// Input system checkpoint (required for stages 2-4).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output system checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics CSV (loss for stages 1-3; reward curve for stage 4).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Bisect the rule-based policy's threshold scale to a target retransmission ratio.
    Calibrate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        target_ratio: f64,
        #[arg(long, default_value_t = 1.0)]
        snr_db: f64,
    },
    /// Evaluate one policy at one SNR on the test split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        snr_db: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sweep the SNR grid with every available policy; writes summary.csv,
    /// records.csv and summary.json.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated policy names; default is every policy the
        /// checkpoint supports.
        #[arg(long)]
        policies: Option<String>,
        /// Evaluate on an external raw image file instead of the generated
        /// test split.
        #[arg(long)]
        test_data: Option<PathBuf>,
    },
    /// Pivot a sweep summary into per-metric plot CSVs.
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}

/// 2 config error, 3 checkpoint error, 4 training divergence, 1 anything else.
fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Usage(_) | Error::Dimension(_)) => 2,
        Some(Error::Checkpoint(_)) => 3,
        Some(Error::Training(_)) => 4,
        _ => 1,
    }
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn splits(cfg: &RunConfig) -> anyhow::Result<(DatasetSplit, DatasetSplit, DatasetSplit)> {
    Ok(generate_splits(
        cfg.data.seed,
        (cfg.data.codec_train, cfg.data.agent_train, cfg.data.test),
        cfg.data.channels,
        cfg.data.height,
        cfg.data.width,
    )?)
}

fn projector(cfg: &RunConfig) -> PerceptualProjector {
    PerceptualProjector::new(
        cfg.data.seed,
        cfg.data.feature_count,
        cfg.data.channels,
        cfg.data.height,
        cfg.data.width,
    )
}

fn write_loss_csv(path: &Path, report: &StageReport) -> anyhow::Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (i, v) in report.epoch_values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, v));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_curve_csv(path: &Path, outcome: &AgentTrainingOutcome) -> anyhow::Result<()> {
    let mut out = String::from("epoch,mean_reward,retx_ratio,outage\n");
    for p in &outcome.curve {
        out.push_str(&format!("{},{},{},{}\n", p.epoch, p.mean_reward, p.retx_ratio, p.outage));
    }
    fs::write(path, out)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::GenData { out_dir } => {
            fs::create_dir_all(&out_dir)?;
            let (codec, agent, test) = splits(&cfg)?;
            for split in [&codec, &agent, &test] {
                let path = out_dir.join(format!("{}.raw", split.role.tag()));
                save_raw_images(&path, &split.images)?;
                println!("wrote {} images to {}", split.images.len(), path.display());
            }
        }

        Command::Train { stage, input, out, metrics } => {
            let (codec_split, agent_split, _) = splits(&cfg)?;
            let proj = projector(&cfg);
            match stage {
                1 => {
                    let mut init = stream_rng(cfg.data.seed, purpose::MODEL_INIT, 0);
                    let mut bundle = CodecBundle::new(cfg.codec_dims(), &mut init)?;
                    let report = training::stage1_train_backbone(&cfg, &codec_split, &mut bundle)?;
                    training::save_backbone(&out, &bundle)?;
                    if let Some(m) = metrics {
                        write_loss_csv(&m, &report)?;
                    }
                    println!(
                        "stage 1 done: {} epochs, final loss {:.6}",
                        report.epoch_values.len(),
                        report.epoch_values.last().unwrap_or(&f64::NAN)
                    );
                }
                2 => {
                    let input = input
                        .ok_or_else(|| anyhow!("stage 2 needs --input (the stage-1 checkpoint)"))?;
                    let mut loaded = load_system(&input, &cfg)?;
                    let report = training::stage2_train_check(
                        &cfg,
                        &codec_split,
                        &proj,
                        &mut loaded.codec,
                    )?;
                    save_system(&out, &loaded.codec, None, None, None)?;
                    if let Some(m) = metrics {
                        write_loss_csv(&m, &report)?;
                    }
                    println!(
                        "stage 2 done: final loss {:.6}",
                        report.epoch_values.last().unwrap_or(&f64::NAN)
                    );
                }
                3 => {
                    let input = input
                        .ok_or_else(|| anyhow!("stage 3 needs --input (the stage-2 checkpoint)"))?;
                    let loaded = load_system(&input, &cfg)?;
                    let mut retx_rng = stream_rng(cfg.data.seed, purpose::MODEL_INIT, 3);
                    let mut retx = RetxBundle::new(cfg.codec_dims(), &mut retx_rng)?;
                    let report = training::stage3_train_retx(
                        &cfg,
                        &codec_split,
                        &proj,
                        &loaded.codec,
                        &mut retx,
                    )?;
                    save_system(&out, &loaded.codec, Some(&retx), None, None)?;
                    if let Some(m) = metrics {
                        write_loss_csv(&m, &report)?;
                    }
                    println!(
                        "stage 3 done: final loss {:.6}",
                        report.epoch_values.last().unwrap_or(&f64::NAN)
                    );
                }
                4 => {
                    let input = input
                        .ok_or_else(|| anyhow!("stage 4 needs --input (the stage-3 checkpoint)"))?;
                    let loaded = load_system(&input, &cfg)?;
                    let retx = loaded.retx.ok_or_else(|| {
                        Error::Checkpoint("stage 4 needs a checkpoint with retransmission modules".into())
                    })?;
                    let system = LinkSystem {
                        codec: loaded.codec,
                        retx: Some(retx),
                        projector: proj,
                        channel_kind: cfg.channel.kind,
                    };
                    let threshold = compute_threshold(&cfg, &system, &agent_split)?;
                    println!("retransmission threshold (p{:.0} of agent-split scores): {threshold:.4}",
                        cfg.agent.threshold_percentile * 100.0);
                    let outcome =
                        training::stage4_train_agent(&cfg, &agent_split, &system, threshold)?;
                    save_system(
                        &out,
                        &system.codec,
                        system.retx.as_ref(),
                        Some(&outcome.actor_critic),
                        Some(threshold),
                    )?;
                    if let Some(m) = metrics {
                        write_curve_csv(&m, &outcome)?;
                    }
                    let last = outcome.curve.last();
                    println!(
                        "stage 4 done: random-policy reward {:.3}, first-epoch reward {:.3}, final reward {:.3}, final retx ratio {:.3}",
                        outcome.random_policy_mean_reward,
                        outcome.curve.first().map_or(f64::NAN, |p| p.mean_reward),
                        last.map_or(f64::NAN, |p| p.mean_reward),
                        last.map_or(f64::NAN, |p| p.retx_ratio),
                    );
                }
                other => return Err(anyhow!(Error::Usage(format!("unknown stage {other}")))),
            }
            println!("checkpoint written to {}", out.display());
        }

        Command::Calibrate { ckpt, target_ratio, snr_db } => {
            let (_, agent_split, _) = splits(&cfg)?;
            let (system, threshold) = load_link_system(&cfg, &ckpt)?;
            let estimates = eval::collect_estimates(
                &system,
                &agent_split,
                snr_db,
                cfg.eval.ratio,
                cfg.eval.seed,
            )?;
            let result = eval::calibrate_threshold_scale(&estimates, threshold, target_ratio)?;
            println!(
                "scale = {:.6} (achieved ratio {:.4}, target {:.4}, converged: {})",
                result.scale, result.achieved_ratio, target_ratio, result.converged
            );
            if !result.converged {
                println!("target unattainable on this split; closest achievable reported");
            }
        }

        Command::Evaluate { ckpt, policy, snr_db, out_dir } => {
            fs::create_dir_all(&out_dir)?;
            let (_, _, test_split) = splits(&cfg)?;
            let (system, threshold) = load_link_system(&cfg, &ckpt)?;
            let loaded_agent = load_agent(&cfg, &ckpt)?;
            let policies = resolve_policies(&cfg, &system, &loaded_agent, threshold, Some(&policy))?;
            let (cells, rows) = eval::evaluate_sweep(
                &system,
                &policies,
                &[snr_db],
                &test_split,
                threshold,
                cfg.eval.ratio,
                cfg.eval.ratio2,
                cfg.eval.seed,
            )?;
            eval::write_summary_csv(&out_dir.join("summary.csv"), &cells)?;
            eval::write_records_csv(&out_dir.join("records.csv"), &rows)?;
            eval::write_summary_json(&out_dir.join("summary.json"), &cells)?;
            for c in &cells {
                println!(
                    "{} @ {} dB: mean PSNR {:.2}, p97 PSNR {:.2}, outage {:.4}, retx {:.3}",
                    c.policy, c.snr_db, c.mean_psnr, c.p97_psnr, c.outage, c.retx_ratio
                );
            }
        }

        Command::Sweep { ckpt, out_dir, policies, test_data } => {
            fs::create_dir_all(&out_dir)?;
            let test_split = match &test_data {
                Some(path) => {
                    let images = s3charq::data::load_raw_images(
                        path,
                        cfg.data.channels,
                        cfg.data.height,
                        cfg.data.width,
                    )?;
                    println!("loaded {} external test images from {}", images.len(), path.display());
                    s3charq::data::DatasetSplit {
                        role: s3charq::data::SplitRole::Test,
                        images,
                        seed: cfg.data.seed,
                    }
                }
                None => splits(&cfg)?.2,
            };
            let (system, threshold) = load_link_system(&cfg, &ckpt)?;
            let loaded_agent = load_agent(&cfg, &ckpt)?;
            let filter = policies.as_deref();
            let policies = resolve_policies(&cfg, &system, &loaded_agent, threshold, filter)?;
            let (cells, rows) = eval::evaluate_sweep(
                &system,
                &policies,
                &cfg.channel.snr_db_grid,
                &test_split,
                threshold,
                cfg.eval.ratio,
                cfg.eval.ratio2,
                cfg.eval.seed,
            )?;
            eval::write_summary_csv(&out_dir.join("summary.csv"), &cells)?;
            eval::write_records_csv(&out_dir.join("records.csv"), &rows)?;
            eval::write_summary_json(&out_dir.join("summary.json"), &cells)?;
            println!(
                "swept {} policies x {} SNRs x {} samples -> {}",
                policies.len(),
                cfg.channel.snr_db_grid.len(),
                test_split.images.len(),
                out_dir.display()
            );
        }

        Command::Report { summary, out_dir } => {
            fs::create_dir_all(&out_dir)?;
            let cells = eval::read_summary_csv(&summary)?;
            let written = eval::write_report_csvs(&out_dir, &cells)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

/// Load a checkpoint as a runnable link system plus the decision threshold
/// (computed from the agent split when the checkpoint predates stage 4).
fn load_link_system(cfg: &RunConfig, ckpt: &Path) -> anyhow::Result<(LinkSystem, f64)> {
    let loaded = load_system(ckpt, cfg)?;
    let system = LinkSystem {
        codec: loaded.codec,
        retx: loaded.retx,
        projector: projector(cfg),
        channel_kind: cfg.channel.kind,
    };
    let threshold = match loaded.threshold {
        Some(t) => t,
        None => {
            let (_, agent_split, _) = splits(cfg)?;
            let t = compute_threshold(cfg, &system, &agent_split)
                .context("computing the threshold (checkpoint predates stage 4)")?;
            println!("note: checkpoint has no stored threshold; computed {t:.4} from the agent split");
            t
        }
    };
    Ok((system, threshold))
}

fn load_agent(cfg: &RunConfig, ckpt: &Path) -> anyhow::Result<Option<ActorCritic>> {
    Ok(load_system(ckpt, cfg)?.agent)
}

/// Expand a policy selection string (or the default set) into runnable
/// policies, restricted to what the checkpoint supports.
fn resolve_policies<'a>(
    cfg: &RunConfig,
    system: &LinkSystem,
    agent: &'a Option<ActorCritic>,
    threshold: f64,
    selection: Option<&str>,
) -> anyhow::Result<Vec<(String, Policy<'a>)>> {
    let has_retx = system.retx.is_some();
    let names: Vec<String> = match selection {
        Some(s) => s.split(',').map(|p| p.trim().to_string()).collect(),
        None => {
            let mut v = vec!["none".to_string()];
            if has_retx {
                v.extend(["always".into(), "threshold".into(), "oracle".into()]);
                if agent.is_some() {
                    v.push("agent".into());
                }
            }
            v
        }
    };
    let mut policies = Vec::with_capacity(names.len());
    for name in names {
        let policy = match name.as_str() {
            "none" => Policy::Never,
            "always" => Policy::Always,
            "threshold" => {
                Policy::Threshold { theta: threshold, scale: cfg.eval.threshold_scale }
            }
            "oracle" => Policy::Oracle,
            "agent" => {
                let ac = agent.as_ref().ok_or_else(|| {
                    Error::Checkpoint("agent policy requested but the checkpoint has no agent".into())
                })?;
                Policy::Agent { ac, greedy: true }
            }
            other => return Err(anyhow!(Error::Usage(format!("unknown policy '{other}'")))),
        };
        if !matches!(policy, Policy::Never) && !has_retx {
            return Err(anyhow!(Error::Checkpoint(format!(
                "policy '{name}' needs retransmission modules; train stage 3 first"
            ))));
        }
        policies.push((name, policy));
    }
    Ok(policies)
}
