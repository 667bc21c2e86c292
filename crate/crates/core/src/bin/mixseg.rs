//! Command-line driver: dataset generation, training, the ablation matrix,
//! dataset/contamination analyses, and mask rendering.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixseg_core::config::{parse_config, ExperimentConfig};
use mixseg_core::error::{Error, Result};
use mixseg_core::io::dataset::{load_dataset, save_dataset};
use mixseg_core::io::netpbm::{write_pgm, write_ppm};
use mixseg_core::metrics::{border_entropy_profile, spatial_class_distribution};
use mixseg_core::mixing::pseudo_label;
use mixseg_core::report::{write_metrics_csv, write_summary_csv, ExperimentReport};
use mixseg_core::runner::{run_ablation, run_seeds};
use mixseg_core::scenes::{generate_data, ExperimentData};
use mixseg_core::trainer::{make_batch, run_experiment, MixStrategy, TrainRngs};

#[derive(Parser)]
#[command(name = "mixseg", version, about = "Semi-supervised segmentation on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file with `key = value` lines; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated run seeds, overriding the config's `seeds`.
    #[arg(long)]
    seeds: Option<String>,
    /// Repeatable `key=value` config override.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory (PPM images, PGM segmaps, index file).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured experiment for every seed and write CSV + summary.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from gen-data; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the ablation arm matrix and write one CSV per arm plus a summary.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Emit spatial class heatmaps and a border-contamination profile.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a teacher, then emit example masks and mixed images per strategy.
    RenderMasks {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    load_config_with_data(common, &None)
}

/// Resolve the configuration: an explicit `--config` wins, else the dataset
/// directory's own snapshot (when training from `--data`), else defaults.
/// Overrides and `--seeds` apply on top.
fn load_config_with_data(common: &Common, data_dir: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let config_path = common.config.clone().or_else(|| {
        data_dir
            .as_ref()
            .map(|d| d.join("config.resolved"))
            .filter(|p| p.exists())
    });
    let mut config = match &config_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for pair in &common.overrides {
        config.apply_override(pair)?;
    }
    if let Some(seeds) = &common.seeds {
        config.set("seeds", seeds, 0)?;
    }
    config.validate()?;
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_snapshot(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join("config.resolved");
    fs::write(&path, config.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
}

fn obtain_data(config: &ExperimentConfig, data_dir: &Option<PathBuf>) -> Result<ExperimentData> {
    match data_dir {
        Some(dir) => load_dataset(dir),
        None => generate_data(
            &config.to_scene_config(),
            config.train_scenes,
            config.eval_scenes,
            config.labelled_fraction,
            config.data_seed,
        ),
    }
}

fn cmd_gen_data(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let data = obtain_data(&config, &None)?;
    ensure_dir(&common.out)?;
    save_dataset(&common.out, &data)?;
    write_snapshot(&config, &common.out)?;
    println!(
        "wrote {} train ({} labelled, {} unlabelled) and {} eval scenes to {}",
        data.train.items.len(),
        data.train.labelled.len(),
        data.train.unlabelled.len(),
        data.eval.len(),
        common.out.display()
    );
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    let s = report.summary();
    println!(
        "{:<22} seeds {}  final mIoU {:.4} +- {:.4}  best {:.4} +- {:.4}",
        report.arm, s.seeds, s.final_miou_mean, s.final_miou_std, s.best_miou_mean, s.best_miou_std
    );
}

fn cmd_train(common: &Common, data_dir: &Option<PathBuf>) -> Result<()> {
    let config = load_config_with_data(common, data_dir)?;
    let data = obtain_data(&config, data_dir)?;
    let report = run_seeds(&config, &data, "train")?;
    ensure_dir(&common.out)?;
    write_snapshot(&config, &common.out)?;
    write_metrics_csv(&report, &common.out.join("metrics.csv"))?;
    write_summary_csv(std::slice::from_ref(&report), &common.out.join("summary.csv"))?;
    print_summary(&report);
    Ok(())
}

fn cmd_ablate(common: &Common, data_dir: &Option<PathBuf>) -> Result<()> {
    let config = load_config_with_data(common, data_dir)?;
    let data = obtain_data(&config, data_dir)?;
    let reports = run_ablation(&config, &data)?;
    ensure_dir(&common.out)?;
    write_snapshot(&config, &common.out)?;
    for report in &reports {
        let arm_dir = common.out.join(&report.arm);
        ensure_dir(&arm_dir)?;
        fs::write(arm_dir.join("config.resolved"), &report.config_snapshot)
            .map_err(|e| Error::io(arm_dir.display().to_string(), e))?;
        write_metrics_csv(report, &arm_dir.join("metrics.csv"))?;
        print_summary(report);
    }
    write_summary_csv(&reports, &common.out.join("summary.csv"))?;
    println!("summary table: {}", common.out.join("summary.csv").display());
    Ok(())
}

fn cmd_analyze(common: &Common, data_dir: &Option<PathBuf>) -> Result<()> {
    let config = load_config_with_data(common, data_dir)?;
    let data = obtain_data(&config, data_dir)?;
    ensure_dir(&common.out)?;
    write_snapshot(&config, &common.out)?;

    // spatial class distributions over the training scenes
    let maps: Vec<_> = data.train.items.iter().map(|(_, s)| s.clone()).collect();
    for class in 0..config.classes {
        let heat = spatial_class_distribution(&maps, class as u8)?;
        let max = heat.data.iter().cloned().fold(0.0, f64::max);
        let scaled: Vec<f64> = if max > 0.0 {
            heat.data.iter().map(|v| v / max).collect()
        } else {
            heat.data.clone()
        };
        let path = common.out.join(format!("heatmap_class_{class}.pgm"));
        write_pgm(&path, heat.w, heat.h, &scaled)?;
    }
    println!("wrote {} class heatmaps", config.classes);

    // border contamination on mixed soft targets from a trained teacher
    let net = config.to_net_config();
    let train_cfg = config.to_train_config(config.seeds[0]);
    let run = run_experiment(&train_cfg, &net, &data)?;
    let mut rngs = TrainRngs::from_seed(config.seeds[0] ^ 0x5eed);
    let mix_cfg = mixseg_core::trainer::TrainConfig {
        mix_strategy: if train_cfg.mix_strategy == MixStrategy::None {
            MixStrategy::ClassMix
        } else {
            train_cfg.mix_strategy
        },
        ..train_cfg.clone()
    };
    let mut rows = String::from("pair,border_soft,interior_soft,border_pseudo,interior_pseudo\n");
    let mut soft_border_sum = 0.0;
    let mut soft_interior_sum = 0.0;
    let mut n = 0usize;
    for pair_idx in 0..16 {
        let batch = make_batch(&data.train, &mix_cfg, &mut rngs)?;
        for (a, b) in &batch.unlabelled_pairs {
            let out = mixseg_core::trainer::build_mix(a, b, &run.final_teacher, &net, &mix_cfg, &mut rngs.mask)?;
            let prof = border_entropy_profile(&out.soft_target, &out.mask, 2)?;
            let pseudo = pseudo_label(&out.soft_target);
            let prof_p = border_entropy_profile(&pseudo, &out.mask, 2)?;
            let (b_soft, i_soft) = (prof.border.unwrap_or(0.0), prof.interior.unwrap_or(0.0));
            rows.push_str(&format!(
                "{pair_idx},{},{},{},{}\n",
                b_soft,
                i_soft,
                prof_p.border.unwrap_or(0.0),
                prof_p.interior.unwrap_or(0.0)
            ));
            soft_border_sum += b_soft;
            soft_interior_sum += i_soft;
            n += 1;
        }
    }
    let path = common.out.join("contamination.csv");
    fs::write(&path, rows).map_err(|e| Error::io(path.display().to_string(), e))?;
    println!(
        "contamination over {n} mixed targets: border entropy {:.4}, interior {:.4} (pseudo-labelled: 0, 0)",
        soft_border_sum / n as f64,
        soft_interior_sum / n as f64
    );
    Ok(())
}

fn cmd_render_masks(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let data = obtain_data(&config, &None)?;
    ensure_dir(&common.out)?;
    write_snapshot(&config, &common.out)?;
    let net = config.to_net_config();
    let train_cfg = config.to_train_config(config.seeds[0]);
    let run = run_experiment(&train_cfg, &net, &data)?;
    for strategy in [MixStrategy::ClassMix, MixStrategy::CutMix, MixStrategy::CowMix] {
        let name = match strategy {
            MixStrategy::ClassMix => "classmix",
            MixStrategy::CutMix => "cutmix",
            MixStrategy::CowMix => "cowmix",
            MixStrategy::None => unreachable!(),
        };
        let cfg = mixseg_core::trainer::TrainConfig {
            mix_strategy: strategy,
            ..train_cfg.clone()
        };
        let mut rngs = TrainRngs::from_seed(config.seeds[0] ^ 0xa5a5);
        for i in 0..4 {
            let batch = make_batch(&data.train, &cfg, &mut rngs)?;
            let (a, b) = &batch.unlabelled_pairs[0];
            let out = mixseg_core::trainer::build_mix(a, b, &run.final_teacher, &net, &cfg, &mut rngs.mask)?;
            let mask_vals: Vec<f64> = out.mask.data.iter().map(|&v| v as f64).collect();
            write_pgm(&common.out.join(format!("mask_{name}_{i}.pgm")), out.mask.w, out.mask.h, &mask_vals)?;
            write_ppm(&common.out.join(format!("mixed_{name}_{i}.ppm")), &out.mixed_image)?;
        }
    }
    println!("wrote 4 masks and mixed images per strategy to {}", common.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { common } => cmd_gen_data(common),
        Command::Train { common, data } => cmd_train(common, data),
        Command::Ablate { common, data } => cmd_ablate(common, data),
        Command::Analyze { common, data } => cmd_analyze(common, data),
        Command::RenderMasks { common } => cmd_render_masks(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
