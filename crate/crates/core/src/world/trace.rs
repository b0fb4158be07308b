//! Per-step episode traces and their CSV export.

use std::fmt::Write as _;

use super::{RewardTerms, StepResult, TerminationCause};

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub x: Vec<f64>,
    pub terms: RewardTerms,
    pub reward: f64,
    pub distance: f64,
    pub collided: bool,
    pub at_goal: bool,
    pub cause: TerminationCause,
}

impl From<&StepResult> for TraceRow {
    fn from(step: &StepResult) -> Self {
        Self {
            step: step.state.step_index,
            q: step.state.q.iter().copied().collect(),
            qdot: step.state.qdot.iter().copied().collect(),
            x: step.state.x.iter().copied().collect(),
            terms: step.terms,
            reward: step.reward,
            distance: step.distance,
            collided: step.collided,
            at_goal: step.at_goal,
            cause: step.cause,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn push(&mut self, step: &StepResult) {
        self.rows.push(TraceRow::from(step));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn collided(&self) -> bool {
        self.rows.iter().any(|r| r.collided)
    }

    pub fn min_distance(&self) -> f64 {
        self.rows.iter().map(|r| r.distance).fold(f64::INFINITY, f64::min)
    }

    pub fn total_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.reward).sum()
    }

    pub fn term_sums(&self) -> RewardTerms {
        let mut sums = RewardTerms::default();
        for row in &self.rows {
            sums += row.terms;
        }
        sums
    }

    pub fn cause(&self) -> TerminationCause {
        self.rows.last().map_or(TerminationCause::None, |r| r.cause)
    }

    /// Row-per-step CSV with a header line.
    pub fn to_csv(&self) -> String {
        let dof = self.rows.first().map_or(0, |r| r.q.len());
        let task = self.rows.first().map_or(0, |r| r.x.len());
        let mut out = String::from("step");
        for i in 0..dof {
            let _ = write!(out, ",q{i}");
        }
        for i in 0..dof {
            let _ = write!(out, ",qdot{i}");
        }
        for i in 0..task {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",r_collide,r_goal,r_dist,r_ctrl,reward,distance,collided,at_goal,cause\n");
        for row in &self.rows {
            let _ = write!(out, "{}", row.step);
            for v in row.q.iter().chain(&row.qdot).chain(&row.x) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{},{},{},{}",
                row.terms.collide,
                row.terms.goal,
                row.terms.dist,
                row.terms.control,
                row.reward,
                row.distance,
                u8::from(row.collided),
                u8::from(row.at_goal),
                row.cause.as_str()
            );
        }
        out
    }
}
