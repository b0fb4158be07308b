//! The collect → train-vae → train → evaluate pipeline, seed-parallel
//! replicas and the three experiment protocols.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, LatentKind, Variant};
use super::metrics::{mean_std, metrics_csv, EpisodeMetrics, MetricsSeries, Outcome, AER_WINDOW};
use super::plot::{emit_plots, PlotOptions, RunCurves};
use crate::error::{Error, Result};
use crate::rl::{evaluate, run_training, LatentSource, Td3Agent, TrainingRun, TrialRecord};
use crate::vae::{collect_brownian, train_vae, ImageDataset, LossRecord, VaeModel};
use crate::world::WorldConfig;

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const VAE_STREAM: u64 = 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Worker count from `RMPR_THREADS`, else the available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("RMPR_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Apply `f` to every item on up to `threads` scoped workers. Results keep
/// the input order, so the output does not depend on scheduling.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .unwrap_or_else(|| Err(Error::Evaluation("worker thread panicked".into())))
        })
        .collect()
}

/// Seeds of the replicas: `base ⊕ seedᵢ` for every configured seed.
pub fn replica_seeds(config: &ExperimentConfig, base: u64) -> Vec<u64> {
    config.seeds.iter().map(|s| base ^ s).collect()
}

pub fn collect_dataset(config: &ExperimentConfig, world: &WorldConfig, seed: u64) -> Result<ImageDataset> {
    let mut rng = stream_rng(seed, VAE_STREAM);
    collect_brownian(&mut rng, &config.robot, world, &config.policy, &config.vae.collect_config())
}

pub fn fit_vae(config: &ExperimentConfig, dataset: &ImageDataset, seed: u64) -> Result<(VaeModel, Vec<LossRecord>)> {
    let mut rng = stream_rng(seed ^ 0x5eed, VAE_STREAM);
    let mut model = VaeModel::new(dataset.height, config.vae.latent_dim, config.vae.recon_weight, &mut rng)?;
    let curve = train_vae(&mut model, dataset, &config.vae, &mut rng)?;
    Ok((model, curve))
}

/// Owned counterpart of [`LatentSource`].
#[derive(Clone, Debug)]
pub enum LatentModel {
    Vae(Box<VaeModel>),
    SceneFeatures { slots: usize },
}

impl LatentModel {
    pub fn source(&self) -> LatentSource<'_> {
        match self {
            LatentModel::Vae(v) => LatentSource::Vae(v),
            LatentModel::SceneFeatures { slots } => LatentSource::SceneFeatures { slots: *slots },
        }
    }

    pub fn vae(&self) -> Option<&VaeModel> {
        match self {
            LatentModel::Vae(v) => Some(v),
            LatentModel::SceneFeatures { .. } => None,
        }
    }
}

/// Build the configured latent: a VAE trained on Brownian rollouts in
/// `world`, or scene features with `slots` obstacle slots.
pub fn prepare_latent(config: &ExperimentConfig, world: &WorldConfig, slots: usize, seed: u64) -> Result<LatentModel> {
    match config.rl.latent {
        LatentKind::SceneFeatures => Ok(LatentModel::SceneFeatures { slots }),
        LatentKind::Vae => {
            log::info!("collecting {} Brownian episodes", config.vae.collect_episodes);
            let dataset = collect_dataset(config, world, seed)?;
            let (model, _) = fit_vae(config, &dataset, seed)?;
            log::info!(
                "vae reconstruction mse {:.5} (mean-image baseline {:.5})",
                model.reconstruction_mse(&dataset)?,
                dataset.mean_image_mse()
            );
            Ok(LatentModel::Vae(Box::new(model)))
        }
    }
}

pub fn train_variant(
    config: &ExperimentConfig,
    variant: Variant,
    world: &WorldConfig,
    episodes: usize,
    latent: &LatentSource,
    seed: u64,
) -> Result<TrainingRun> {
    let setup = config.train_setup(variant, world.clone(), episodes);
    run_training(&setup, latent, &mut stream_rng(seed, TRAIN_STREAM))
}

pub fn evaluate_agent(
    config: &ExperimentConfig,
    variant: Variant,
    world: &WorldConfig,
    agent: Option<&Td3Agent>,
    latent: &LatentSource,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    let setup = config.train_setup(variant, world.clone(), 0);
    evaluate(&setup, agent, latent, config.eval_trials, &mut stream_rng(seed, EVAL_STREAM))
}

pub const EVAL_HEADER: &str = "trial,label,min_dist,steps";

pub fn eval_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.trial, r.outcome.as_str(), r.min_distance, r.steps);
    }
    out
}

pub fn outcome_fractions(records: &[TrialRecord]) -> [f64; 3] {
    let n = records.len().max(1) as f64;
    Outcome::ALL.map(|o| records.iter().filter(|r| r.outcome == o).count() as f64 / n)
}

pub fn success_rate(records: &[TrialRecord]) -> f64 {
    outcome_fractions(records)[0]
}

/// Element-wise mean of several runs' series, truncated to the shortest.
pub fn mean_series(series: &[MetricsSeries]) -> MetricsSeries {
    let avg = |get: fn(&MetricsSeries) -> &Vec<f64>| -> Vec<f64> {
        let len = series.iter().map(|s| get(s).len()).min().unwrap_or(0);
        (0..len)
            .map(|i| series.iter().map(|s| get(s)[i]).sum::<f64>() / series.len() as f64)
            .collect()
    };
    MetricsSeries {
        returns: avg(|s| &s.returns),
        aer: avg(|s| &s.aer),
        smoothed_aer: avg(|s| &s.smoothed_aer),
        success_rate: avg(|s| &s.success_rate),
        r_collide: avg(|s| &s.r_collide),
        r_goal: avg(|s| &s.r_goal),
        r_dist: avg(|s| &s.r_dist),
        r_ctrl: avg(|s| &s.r_ctrl),
    }
}

/// One trained replica and its evaluations.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub variant: Variant,
    pub seed: u64,
    pub agent: Td3Agent,
    pub metrics: Vec<EpisodeMetrics>,
    /// Evaluation label (e.g. obstacle count or shape set) and trials.
    pub evals: Vec<(String, Vec<TrialRecord>)>,
}

impl SeedRun {
    pub fn final_aer(&self) -> f64 {
        MetricsSeries::from_metrics(&self.metrics, AER_WINDOW)
            .smoothed_aer
            .last()
            .copied()
            .unwrap_or(f64::NAN)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), metrics_csv(&self.metrics))?;
        for (label, records) in &self.evals {
            std::fs::write(dir.join(format!("eval_{label}.csv")), eval_csv(records))?;
        }
        self.agent.save(dir.join("agent.ckpt"))
    }
}

struct Job<'a> {
    variant: Variant,
    seed: u64,
    train_world: &'a WorldConfig,
    evals: &'a [(String, WorldConfig)],
}

fn run_jobs(config: &ExperimentConfig, jobs: &[Job], episodes: usize, latent: &LatentModel) -> Result<Vec<SeedRun>> {
    let source = latent.source();
    parallel_map(jobs, thread_cap(), |job| {
        log::info!("training {} seed {}", job.variant.as_str(), job.seed);
        let run = train_variant(config, job.variant, job.train_world, episodes, &source, job.seed)?;
        let evals = job
            .evals
            .iter()
            .map(|(label, world)| {
                let records = evaluate_agent(config, job.variant, world, Some(&run.agent), &source, job.seed)?;
                Ok((label.clone(), records))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SeedRun {
            variant: job.variant,
            seed: job.seed,
            agent: run.agent,
            metrics: run.metrics,
            evals,
        })
    })
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

fn pct_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{:.1} ± {:.1}%", 100.0 * m, 100.0 * s)
}

fn write_outputs(out: &Path, runs: &[SeedRun], latent: &LatentModel, report: &str, references: Vec<(String, f64)>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for run in runs {
        run.write(&out.join(run.variant.as_str()).join(format!("seed_{}", run.seed)))?;
    }
    let mut curves = Vec::new();
    for variant in Variant::ALL {
        let series: Vec<MetricsSeries> = runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| MetricsSeries::from_metrics(&r.metrics, AER_WINDOW))
            .collect();
        if !series.is_empty() {
            curves.push(RunCurves {
                label: variant.as_str().to_string(),
                series: mean_series(&series),
            });
        }
    }
    let traversal = match latent.vae() {
        Some(vae) => Some(vae.decode_traversal(0, 1.min(vae.latent_dim - 1), 7, (-1.0, 1.0))?),
        None => None,
    };
    let options = PlotOptions {
        window: AER_WINDOW,
        success_references: references,
        traversal,
    };
    emit_plots(&curves, &options, &out.join("plots"))?;
    std::fs::write(out.join("report.md"), report)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ExperimentAReport {
    pub runs: Vec<SeedRun>,
}

impl ExperimentAReport {
    pub fn success(&self, variant: Variant) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| success_rate(&r.evals[0].1))
            .collect()
    }

    /// Replica pairs (matched by seed order) where RPL beats VL.
    pub fn ordered_pairs(&self) -> usize {
        self.success(Variant::Rpl)
            .iter()
            .zip(self.success(Variant::Vl))
            .filter(|(r, v)| **r > *v)
            .count()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Experiment A: single obstacle, RPL vs VL\n\n");
        out.push_str("| variant | seed | eval success | near goal | failure | final AER |\n|---|---|---|---|---|---|\n");
        for r in &self.runs {
            let f = outcome_fractions(&r.evals[0].1);
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {:.4} |",
                r.variant.as_str(),
                r.seed,
                pct(f[0]),
                pct(f[1]),
                pct(f[2]),
                r.final_aer()
            );
        }
        out.push('\n');
        for v in Variant::ALL {
            let s = self.success(v);
            let _ = writeln!(out, "- {} success: {} over {} seeds", v.as_str(), pct_mean_std(&s), s.len());
        }
        let _ = writeln!(
            out,
            "- seed pairs with RPL > VL: {}/{}",
            self.ordered_pairs(),
            self.success(Variant::Rpl).len()
        );
        out.push_str("- full-scale reference: RPL 84 ± 6%, VL 39 ± 27%\n");
        out
    }
}

pub fn run_experiment_a(config: &ExperimentConfig, base_seed: u64, out: Option<&Path>) -> Result<ExperimentAReport> {
    config.validate()?;
    let world = config.world_with_obstacles(1);
    let latent = prepare_latent(config, &world, 1, base_seed)?;
    let evals = vec![("1_obstacle".to_string(), world.clone())];
    let seeds = replica_seeds(config, base_seed);
    let jobs: Vec<Job> = Variant::ALL
        .iter()
        .flat_map(|&variant| {
            seeds.iter().map(move |&seed| (variant, seed))
        })
        .map(|(variant, seed)| Job {
            variant,
            seed,
            train_world: &world,
            evals: &evals,
        })
        .collect();
    let report = ExperimentAReport {
        runs: run_jobs(config, &jobs, config.rl.episodes, &latent)?,
    };
    if let Some(out) = out {
        let refs = vec![("RPL 84%".to_string(), 0.84), ("VL 39%".to_string(), 0.39)];
        write_outputs(out, &report.runs, &latent, &report.to_markdown(), refs)?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ExperimentBReport {
    pub train_obstacles: usize,
    pub runs: Vec<SeedRun>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeRow {
    pub obstacles: usize,
    pub trials_per_seed: usize,
    /// Mean over seeds of the success / near-goal / failure fractions.
    pub fractions: [f64; 3],
}

impl ExperimentBReport {
    pub fn table(&self) -> Vec<OutcomeRow> {
        let Some(first) = self.runs.first() else {
            return Vec::new();
        };
        first
            .evals
            .iter()
            .enumerate()
            .map(|(k, (label, records))| {
                let mut fractions = [0.0; 3];
                for run in &self.runs {
                    let f = outcome_fractions(&run.evals[k].1);
                    (0..3).for_each(|i| fractions[i] += f[i] / self.runs.len() as f64);
                }
                OutcomeRow {
                    obstacles: label.split('_').next().and_then(|n| n.parse().ok()).unwrap_or(0),
                    trials_per_seed: records.len(),
                    fractions,
                }
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "# Experiment B: trained with {} obstacles, {} seeds\n\n",
            self.train_obstacles,
            self.runs.len()
        );
        out.push_str("| # obstacles | trials/seed | success | near goal | failure |\n|---|---|---|---|---|\n");
        for row in self.table() {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                row.obstacles,
                row.trials_per_seed,
                pct(row.fractions[0]),
                pct(row.fractions[1]),
                pct(row.fractions[2])
            );
        }
        out
    }
}

pub fn run_experiment_b(config: &ExperimentConfig, base_seed: u64, out: Option<&Path>) -> Result<ExperimentBReport> {
    config.validate()?;
    let b = &config.experiment_b;
    let world = config.world_with_obstacles(b.train_obstacles);
    let slots = b.eval_obstacles.iter().copied().chain([b.train_obstacles]).max().unwrap_or(1);
    let latent = prepare_latent(config, &world, slots, base_seed)?;
    let evals: Vec<(String, WorldConfig)> = b
        .eval_obstacles
        .iter()
        .map(|&n| (format!("{n}_obstacles"), config.world_with_obstacles(n)))
        .collect();
    let jobs: Vec<Job> = replica_seeds(config, base_seed)
        .into_iter()
        .map(|seed| Job {
            variant: Variant::Rpl,
            seed,
            train_world: &world,
            evals: &evals,
        })
        .collect();
    let report = ExperimentBReport {
        train_obstacles: b.train_obstacles,
        runs: run_jobs(config, &jobs, b.episodes, &latent)?,
    };
    if let Some(out) = out {
        write_outputs(out, &report.runs, &latent, &report.to_markdown(), Vec::new())?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ExperimentCReport {
    pub train_shapes: Vec<String>,
    pub held_out: Vec<String>,
    pub reference_success: f64,
    pub runs: Vec<SeedRun>,
}

impl ExperimentCReport {
    pub fn success(&self) -> Vec<f64> {
        self.runs.iter().map(|r| success_rate(&r.evals[0].1)).collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "# Experiment C: trained on {}, evaluated on {}\n\n",
            self.train_shapes.join(" + "),
            self.held_out.join(" + ")
        );
        out.push_str("| seed | trials | success | near goal | failure |\n|---|---|---|---|---|\n");
        for r in &self.runs {
            let f = outcome_fractions(&r.evals[0].1);
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                r.seed,
                r.evals[0].1.len(),
                pct(f[0]),
                pct(f[1]),
                pct(f[2])
            );
        }
        let _ = writeln!(out, "\n- held-out success: {}", pct_mean_std(&self.success()));
        let _ = writeln!(out, "- full-scale reference: {}", pct(self.reference_success));
        out
    }
}

pub fn run_experiment_c(config: &ExperimentConfig, base_seed: u64, out: Option<&Path>) -> Result<ExperimentCReport> {
    config.validate()?;
    let c = &config.experiment_c;
    let mut world = config.world_with_obstacles(c.n_obstacles);
    world.scene.obstacle_types = c.train_shapes.clone();
    let mut held_out = world.clone();
    held_out.scene.obstacle_types = c.held_out.clone();
    let latent = prepare_latent(config, &world, c.n_obstacles, base_seed)?;
    let evals = vec![("held_out".to_string(), held_out)];
    let jobs: Vec<Job> = replica_seeds(config, base_seed)
        .into_iter()
        .map(|seed| Job {
            variant: Variant::Rpl,
            seed,
            train_world: &world,
            evals: &evals,
        })
        .collect();
    let names = |s: &[crate::world::ShapeKind]| s.iter().map(|k| k.name().to_string()).collect::<Vec<_>>();
    let report = ExperimentCReport {
        train_shapes: names(&c.train_shapes),
        held_out: names(&c.held_out),
        reference_success: c.reference_success,
        runs: run_jobs(config, &jobs, config.rl.episodes, &latent)?,
    };
    if let Some(out) = out {
        let refs = vec![(format!("ref {}", pct(c.reference_success)), c.reference_success)];
        write_outputs(out, &report.runs, &latent, &report.to_markdown(), refs)?;
    }
    Ok(report)
}
