//! Trial classification, per-episode metrics and their smoothed series.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{EpisodeTrace, RewardTerms, TerminationCause};

pub const AER_WINDOW: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    NearGoal,
    Failure,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Success, Outcome::NearGoal, Outcome::Failure];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::NearGoal => "near_goal",
            Outcome::Failure => "failure",
        }
    }
}

/// Success: no collision and the last `hold_steps` steps all within
/// `goal_radius`. Near goal: no collision and the closest approach within
/// `near_radius`. Anything else fails.
pub fn classify_trial(trace: &EpisodeTrace, goal_radius: f64, near_radius: f64, hold_steps: usize) -> Outcome {
    if trace.is_empty() || trace.collided() {
        return Outcome::Failure;
    }
    let rows = &trace.rows;
    let held = rows.len() >= hold_steps
        && rows[rows.len() - hold_steps..].iter().all(|r| r.distance < goal_radius);
    if held {
        Outcome::Success
    } else if trace.min_distance() <= near_radius {
        Outcome::NearGoal
    } else {
        Outcome::Failure
    }
}

/// Steps needed to cover `seconds` at time step `dt`.
pub fn hold_steps(seconds: f64, dt: f64) -> usize {
    (seconds / dt - 1e-9).ceil() as usize
}

/// Arithmetic mean over every full sliding window.
pub fn running_mean(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || series.len() < window {
        return Err(Error::InvalidArgument(format!(
            "running mean with window {window} needs at least {window} values, got {}",
            series.len()
        )));
    }
    Ok(series
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect())
}

/// Rescale to `[0, 1]`; a constant series maps to zeros.
pub fn min_max_normalize(series: &[f64]) -> Vec<f64> {
    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub ret: f64,
    pub terms: RewardTerms,
    pub outcome: Outcome,
    pub steps: usize,
    pub cause: TerminationCause,
    pub min_distance: f64,
}

impl EpisodeMetrics {
    pub fn from_trace(episode: usize, trace: &EpisodeTrace, outcome: Outcome) -> Self {
        Self {
            episode,
            ret: trace.total_reward(),
            terms: trace.term_sums(),
            outcome,
            steps: trace.len(),
            cause: trace.cause(),
            min_distance: trace.min_distance(),
        }
    }

    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// Average per-step reward of the episode.
    pub fn aer(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.ret / self.steps as f64
        }
    }
}

pub const METRICS_HEADER: &str = "episode,return,r_collide_sum,r_goal_sum,r_dist_sum,r_ctrl_sum,success,steps,cause";

pub fn metrics_csv(metrics: &[EpisodeMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            m.episode,
            m.ret,
            m.terms.collide,
            m.terms.goal,
            m.terms.dist,
            m.terms.control,
            u8::from(m.success()),
            m.steps,
            m.cause.as_str()
        );
    }
    out
}

/// Read back a file written by [`metrics_csv`]. The CSV keeps only the
/// success flag, so other outcomes come back as failures and the closest
/// approach as NaN.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpisodeMetrics>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::InvalidArgument("metrics CSV header mismatch".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::InvalidArgument(format!("metrics CSV row {}: bad {what}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad("column count"));
            }
            let num = |k: usize, name: &str| f[k].parse::<f64>().map_err(|_| bad(name));
            let cause = match f[8] {
                "none" => TerminationCause::None,
                "collision" => TerminationCause::Collision,
                "max_steps" => TerminationCause::MaxSteps,
                _ => return Err(bad("cause")),
            };
            Ok(EpisodeMetrics {
                episode: f[0].parse().map_err(|_| bad("episode"))?,
                ret: num(1, "return")?,
                terms: RewardTerms {
                    collide: num(2, "r_collide_sum")?,
                    goal: num(3, "r_goal_sum")?,
                    dist: num(4, "r_dist_sum")?,
                    control: num(5, "r_ctrl_sum")?,
                },
                outcome: match f[6] {
                    "1" => Outcome::Success,
                    "0" => Outcome::Failure,
                    _ => return Err(bad("success")),
                },
                steps: f[7].parse().map_err(|_| bad("steps"))?,
                cause,
                min_distance: f64::NAN,
            })
        })
        .collect()
}

/// Raw and smoothed per-episode curves of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsSeries {
    pub returns: Vec<f64>,
    pub aer: Vec<f64>,
    pub smoothed_aer: Vec<f64>,
    pub success_rate: Vec<f64>,
    pub r_collide: Vec<f64>,
    pub r_goal: Vec<f64>,
    pub r_dist: Vec<f64>,
    pub r_ctrl: Vec<f64>,
}

impl MetricsSeries {
    /// Smoothed series are empty when the run is shorter than the window.
    pub fn from_metrics(metrics: &[EpisodeMetrics], window: usize) -> Self {
        let col = |f: &dyn Fn(&EpisodeMetrics) -> f64| metrics.iter().map(f).collect::<Vec<f64>>();
        let aer = col(&|m| m.aer());
        let success = col(&|m| if m.success() { 1.0 } else { 0.0 });
        Self {
            returns: col(&|m| m.ret),
            smoothed_aer: running_mean(&aer, window).unwrap_or_default(),
            success_rate: running_mean(&success, window).unwrap_or_default(),
            aer,
            r_collide: col(&|m| m.terms.collide),
            r_goal: col(&|m| m.terms.goal),
            r_dist: col(&|m| m.terms.dist),
            r_ctrl: col(&|m| m.terms.control),
        }
    }
}
