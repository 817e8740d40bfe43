//! Difficulty budget curve and the stage-by-stage input-step schedule.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::difficulty::DifficultyTable;
use crate::error::{Error, Result};
use crate::numeric::stable_sum;
use crate::selection::{candidate_increments, ClusterAssignment, SelectionProblem};

/// `u` such that the curve reaches `b` at stage `t_max`.
pub fn solve_growth_rate(b: f64, c0: f64, p: f64, t_max: f64) -> Result<f64> {
    if !(c0 >= 0.0) || !(b >= c0) {
        return Err(Error::invalid(format!(
            "need B >= C0 >= 0, got B = {b}, C0 = {c0}"
        )));
    }
    if !(p > 0.0) {
        return Err(Error::invalid(format!(
            "growth exponent p must be > 0, got {p}"
        )));
    }
    if !(t_max >= 1.0) {
        return Err(Error::invalid(format!(
            "terminal stage T must be >= 1, got {t_max}"
        )));
    }
    Ok((b - c0) * (p + 1.0) / t_max.powf(p + 1.0))
}

/// `D(t) = u t^(p+1) / (p+1) + C0`, reaching `B` at `T` and flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub u: f64,
    pub p: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "T")]
    pub t_max: usize,
    #[serde(rename = "B")]
    pub b: f64,
}

impl BudgetCurve {
    pub fn new(b: f64, c0: f64, p: f64, t_max: usize) -> Result<Self> {
        let u = solve_growth_rate(b, c0, p, t_max as f64)?;
        Ok(Self { u, p, c0, t_max, b })
    }

    pub fn budget_at(&self, t: f64) -> f64 {
        if t >= self.t_max as f64 {
            return self.b;
        }
        let t = t.max(0.0);
        (self.u * t.powf(self.p + 1.0) / (self.p + 1.0) + self.c0).min(self.b)
    }
}

/// One emitted stage; the schedule JSON's `stages` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub t: usize,
    #[serde(rename = "D_t")]
    pub d_t: f64,
    #[serde(rename = "delta_D")]
    pub delta_d: f64,
    pub selected: Vec<String>,
    #[serde(rename = "delta_H")]
    pub delta_h: f64,
    pub c: IndexMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub t: usize,
    /// Input-step count per question, in corpus order.
    pub c: IndexMap<String, usize>,
    /// Total generated difficulty at the current counts.
    pub h: f64,
    pub history: Vec<StageRecord>,
}

impl ScheduleState {
    /// Stage-0 start: every step is input, nothing is generated.
    pub fn initial(table: &DifficultyTable) -> Self {
        let c = table
            .rows
            .iter()
            .map(|(id, r)| (id.clone(), r.step_difficulties.len()))
            .collect();
        Self {
            t: 0,
            c,
            h: 0.0,
            history: Vec::new(),
        }
    }

    pub fn generated_difficulty(
        c: &IndexMap<String, usize>,
        table: &DifficultyTable,
    ) -> Result<f64> {
        let parts = c
            .iter()
            .map(|(id, &ci)| table.question_generation_difficulty(id, ci))
            .collect::<Result<Vec<_>>>()?;
        Ok(stable_sum(parts))
    }

    pub fn stage_budget_delta(&self, curve: &BudgetCurve) -> f64 {
        (curve.budget_at(self.t as f64) - self.h).max(0.0)
    }

    /// Reduces the selected questions' input steps by `step_reduction`
    /// (clamped at zero) without moving to the next stage.
    pub fn apply_selection(
        &self,
        table: &DifficultyTable,
        selected: &[String],
        step_reduction: usize,
    ) -> Result<Self> {
        if step_reduction == 0 {
            return Err(Error::invalid("step reduction must be >= 1"));
        }
        let mut next = self.clone();
        for id in selected {
            let ci = next
                .c
                .get_mut(id)
                .ok_or_else(|| Error::invalid(format!("selected id `{id}` is not scheduled")))?;
            if *ci == 0 {
                return Err(Error::invalid(format!(
                    "selected id `{id}` has no input steps left to reduce"
                )));
            }
            *ci = ci.saturating_sub(step_reduction);
        }
        next.h = Self::generated_difficulty(&next.c, table)?;
        Ok(next)
    }

    /// Applies a selection, records the stage and increments `t`.
    pub fn advance_stage(
        &self,
        table: &DifficultyTable,
        curve: &BudgetCurve,
        selected: &[String],
        step_reduction: usize,
    ) -> Result<Self> {
        let mut next = self.apply_selection(table, selected, step_reduction)?;
        next.t = self.t + 1;
        let d_t = curve.budget_at(next.t as f64);
        next.history.push(StageRecord {
            t: next.t,
            d_t,
            delta_d: (d_t - self.h).max(0.0),
            selected: selected.to_vec(),
            delta_h: next.h - self.h,
            c: next.c.clone(),
        });
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub beta: f64,
    pub epsilon: f64,
    pub step_reduction: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            beta: 12.0,
            epsilon: crate::selection::DEFAULT_EPSILON,
            step_reduction: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    #[serde(flatten)]
    pub curve: BudgetCurve,
    pub epochs: usize,
    pub step_reduction: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub stages: Vec<StageRecord>,
    pub params: ScheduleParams,
}

impl Schedule {
    /// Input-step counts used for training epoch `epoch` (1-based).
    pub fn counts_for_epoch(&self, epoch: usize) -> Option<&IndexMap<String, usize>> {
        self.stages.iter().find(|s| s.t == epoch).map(|s| &s.c)
    }
}

fn select_round(
    state: &ScheduleState,
    table: &DifficultyTable,
    clusters: &ClusterAssignment,
    budget: f64,
    cfg: &SelectionConfig,
) -> Result<Vec<String>> {
    let increments = candidate_increments(state, table, cfg.step_reduction)?;
    let problem = SelectionProblem::from_increments(&increments, clusters, budget, cfg.beta)?;
    let picked = problem.select_ftgp(cfg.epsilon)?;
    Ok(problem.ids(&picked))
}

/// Plans stages `0..=epochs`.
///
/// Stage 0 starts with every step as input and runs selection rounds until
/// the initial budget admits no candidate. Stages `1..T` run one round each
/// against `D(t) - H`. Stage `T` releases every remaining step, since
/// `D(T) = B` covers the whole corpus; later stages keep all counts at zero.
pub fn plan_full_schedule(
    table: &DifficultyTable,
    clusters: &ClusterAssignment,
    curve: &BudgetCurve,
    epochs: usize,
    cfg: &SelectionConfig,
) -> Result<Schedule> {
    if curve.t_max == 0 || curve.t_max > epochs {
        return Err(Error::invalid(format!(
            "terminal stage T = {} must lie in [1, epochs = {epochs}]",
            curve.t_max
        )));
    }
    if cfg.step_reduction == 0 {
        return Err(Error::invalid("step reduction must be >= 1"));
    }

    let mut state = ScheduleState::initial(table);
    let mut stage0 = Vec::new();
    loop {
        let budget = (curve.c0 - state.h).max(0.0);
        let picked = select_round(&state, table, clusters, budget, cfg)?;
        if picked.is_empty() {
            break;
        }
        state = state.apply_selection(table, &picked, cfg.step_reduction)?;
        stage0.extend(picked);
    }
    state.history.push(StageRecord {
        t: 0,
        d_t: curve.budget_at(0.0),
        delta_d: curve.budget_at(0.0),
        selected: stage0,
        delta_h: state.h,
        c: state.c.clone(),
    });

    for t in 1..=epochs {
        let d_t = curve.budget_at(t as f64);
        let delta_d = (d_t - state.h).max(0.0);
        let picked = if t < curve.t_max {
            select_round(&state, table, clusters, delta_d, cfg)?
        } else {
            state
                .c
                .iter()
                .filter(|(_, &c)| c > 0)
                .map(|(id, _)| id.clone())
                .collect()
        };
        let reduction = if t < curve.t_max {
            cfg.step_reduction
        } else {
            usize::MAX
        };
        state = state.advance_stage(table, curve, &picked, reduction)?;
    }

    Ok(Schedule {
        stages: state.history,
        params: ScheduleParams {
            curve: *curve,
            epochs,
            step_reduction: cfg.step_reduction,
            k: clusters.k,
            beta: cfg.beta,
            epsilon: cfg.epsilon,
        },
    })
}
