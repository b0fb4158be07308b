use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rmpr::harness::experiments::{
    collect_dataset, eval_csv, evaluate_agent, fit_vae, outcome_fractions, prepare_latent, stream_rng, train_variant,
    LatentModel,
};
use rmpr::harness::metrics::{metrics_csv, parse_metrics_csv, MetricsSeries, AER_WINDOW};
use rmpr::harness::plot::{emit_plots, image_svg, PlotOptions, RunCurves};
use rmpr::harness::{self, oracle, ExperimentConfig, LatentKind, Variant};
use rmpr::rl::Td3Agent;
use rmpr::vae::{ImageDataset, VaeModel};
use rmpr::world::WorldConfig;
use rmpr::{Error, Result};

#[derive(Parser)]
#[command(name = "rmpr", version, about = "Residual RMP policies with a beta-VAE latent state")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the number of obstacles per scene.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=3))]
    obstacles: Option<u64>,
    /// Override the render resolution in pixels.
    #[arg(long)]
    resolution: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.obstacles {
            config.world.scene.n_obstacles = n as usize;
        }
        if let Some(r) = self.resolution {
            config.world.resolution = r;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the full default configuration.
    InitConfig {
        #[arg(long, default_value = "rmpr.toml")]
        out: PathBuf,
    },
    /// Roll out Brownian actions and store the rendered images.
    Collect(Common),
    /// Train the VAE on a collected dataset (collecting one if none is given).
    TrainVae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train one policy variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Variant::Rpl)]
        variant: Variant,
        /// Trained VAE checkpoint; one is trained first when missing.
        #[arg(long)]
        vae: Option<PathBuf>,
    },
    /// Evaluate a trained agent (or the zero action) on fresh scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Variant::Rpl)]
        variant: Variant,
        #[arg(long)]
        agent: Option<PathBuf>,
        #[arg(long)]
        vae: Option<PathBuf>,
    },
    /// Single obstacle: RPL against VL over all seeds.
    ExpA(Common),
    /// Train with three obstacles, evaluate with one, two and three.
    ExpB(Common),
    /// Train on two shapes, evaluate on the held-out one.
    ExpC(Common),
    /// Plot one or more metrics.csv files.
    Plot {
        #[arg(long, default_value = "out/plots")]
        out: PathBuf,
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
    /// Finite-difference gradient checks of every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Brute-force reference comparisons.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn slots(world: &WorldConfig) -> usize {
    world.scene.n_obstacles
}

fn latent_for(config: &ExperimentConfig, vae: Option<&Path>, seed: u64) -> Result<LatentModel> {
    match (config.rl.latent, vae) {
        (LatentKind::Vae, Some(path)) => {
            let model = VaeModel::load(path, &mut stream_rng(seed, 0))?;
            if model.resolution != config.world.resolution {
                return Err(Error::Config(format!(
                    "VAE expects {0}x{0} images but the world renders {1}x{1}",
                    model.resolution, config.world.resolution
                )));
            }
            Ok(LatentModel::Vae(Box::new(model)))
        }
        _ => prepare_latent(config, &config.world, slots(&config.world), seed),
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::InitConfig { out } => {
            ExperimentConfig::default().save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Collect(common) => {
            let config = common.config()?;
            std::fs::create_dir_all(&common.out)?;
            let dataset = collect_dataset(&config, &config.world, common.seed)?;
            let path = common.out.join("dataset.ckpt");
            dataset.save(&path)?;
            println!("{} images -> {}", dataset.len(), path.display());
        }
        Command::TrainVae { common, dataset } => {
            let config = common.config()?;
            std::fs::create_dir_all(&common.out)?;
            let dataset = match dataset {
                Some(path) => ImageDataset::load(path)?,
                None => collect_dataset(&config, &config.world, common.seed)?,
            };
            let (model, curve) = fit_vae(&config, &dataset, common.seed)?;
            model.save(common.out.join("vae.ckpt"))?;
            let mut csv = String::from("step,beta,loss,recon,kl\n");
            for r in &curve {
                csv.push_str(&format!("{},{},{},{},{}\n", r.step, r.beta, r.loss.loss, r.loss.recon, r.loss.kl));
            }
            std::fs::write(common.out.join("vae_loss.csv"), csv)?;
            let traversal = model.decode_traversal(0, 1.min(model.latent_dim - 1), 7, (-1.0, 1.0))?;
            std::fs::write(common.out.join("latent_traversal.svg"), image_svg(&traversal, 2, "Latent traversal"))?;
            println!(
                "reconstruction mse {:.6}, mean-image baseline {:.6}",
                model.reconstruction_mse(&dataset)?,
                dataset.mean_image_mse()
            );
        }
        Command::Train { common, variant, vae } => {
            let config = common.config()?;
            std::fs::create_dir_all(&common.out)?;
            let latent = latent_for(&config, vae.as_deref(), common.seed)?;
            if let (None, Some(model)) = (&vae, latent.vae()) {
                model.save(common.out.join("vae.ckpt"))?;
            }
            let run = train_variant(&config, variant, &config.world, config.rl.episodes, &latent.source(), common.seed)?;
            std::fs::write(common.out.join("metrics.csv"), metrics_csv(&run.metrics))?;
            run.agent.save(common.out.join("agent.ckpt"))?;
            let curves = [RunCurves {
                label: variant.as_str().into(),
                series: MetricsSeries::from_metrics(&run.metrics, AER_WINDOW),
            }];
            let options = PlotOptions {
                window: AER_WINDOW,
                success_references: Vec::new(),
                traversal: None,
            };
            emit_plots(&curves, &options, &common.out.join("plots"))?;
            println!("{} episodes -> {}", run.metrics.len(), common.out.display());
        }
        Command::Eval {
            common,
            variant,
            agent,
            vae,
        } => {
            let config = common.config()?;
            std::fs::create_dir_all(&common.out)?;
            let latent = latent_for(&config, vae.as_deref(), common.seed)?;
            let agent = match agent {
                Some(path) => Some(Td3Agent::load(path, config.rl.td3.clone(), &mut stream_rng(common.seed, 0))?),
                None => None,
            };
            let records = evaluate_agent(&config, variant, &config.world, agent.as_ref(), &latent.source(), common.seed)?;
            std::fs::write(common.out.join("eval.csv"), eval_csv(&records))?;
            let f = outcome_fractions(&records);
            println!(
                "{} trials: success {:.1}%, near goal {:.1}%, failure {:.1}%",
                records.len(),
                100.0 * f[0],
                100.0 * f[1],
                100.0 * f[2]
            );
        }
        Command::ExpA(common) => {
            let report = harness::run_experiment_a(&common.config()?, common.seed, Some(&common.out))?;
            print!("{}", report.to_markdown());
        }
        Command::ExpB(common) => {
            let report = harness::run_experiment_b(&common.config()?, common.seed, Some(&common.out))?;
            print!("{}", report.to_markdown());
        }
        Command::ExpC(common) => {
            let report = harness::run_experiment_c(&common.config()?, common.seed, Some(&common.out))?;
            print!("{}", report.to_markdown());
        }
        Command::Plot { out, metrics } => {
            let mut curves = Vec::new();
            for path in &metrics {
                let parsed = parse_metrics_csv(&std::fs::read_to_string(path)?)?;
                let label = path
                    .parent()
                    .and_then(|p| p.file_name())
                    .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
                curves.push(RunCurves {
                    label,
                    series: MetricsSeries::from_metrics(&parsed, AER_WINDOW),
                });
            }
            let options = PlotOptions {
                window: AER_WINDOW,
                ..Default::default()
            };
            for p in emit_plots(&curves, &options, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck { seed } => {
            let reports = harness::gradcheck_all(seed)?;
            for r in &reports {
                println!(
                    "{} {:<24} checked {:>5}  skipped {:>3}  max rel error {:.3e}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.checked,
                    r.skipped,
                    r.max_rel_error
                );
            }
            return Ok(reports.iter().all(|r| r.passed()));
        }
        Command::Oracle { seed } => {
            let reports = oracle::run_all(seed)?;
            for r in &reports {
                println!(
                    "{} {:<50} cases {:>6}  max error {:.3e} (tol {:.0e})",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.cases,
                    r.max_error,
                    r.tolerance
                );
            }
            return Ok(reports.iter().all(|r| r.passed()));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
