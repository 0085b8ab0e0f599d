//! Centralized covering: repeatedly step an unsatisfied constraint, then
//! round.

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostFunction, LinearCost};
use crate::instances::{ConsId, ConstraintView, CoveringInstance};
use crate::relax::{self, Beta, RelaxError};
use crate::tolerance;

/// Covering vector plus whether the final rounding has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub x: Vec<f64>,
    pub rounded: bool,
}

impl Assignment {
    pub fn zeros(n: usize) -> Self {
        Self { x: vec![0.0; n], rounded: false }
    }

    pub fn rounded(&self, inst: &CoveringInstance) -> Assignment {
        Assignment { x: inst.round(&self.x), rounded: true }
    }
}

/// Which stepsize a step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StepRule {
    /// Cheapest single-variable raise lowering the relaxation potential.
    #[default]
    Relaxation,
    /// Vertex cover: `β = min((1 - x_v) c_v, (1 - x_w) c_w)`, so one step
    /// brings an endpoint into the cover.
    VertexCover,
}

/// One covering step. `t` is the 1-based position in the log; `stamp` holds
/// the distributed (round, within-round) time when the step came from a
/// protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub cons: ConsId,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<(u64, u64)>,
}

impl StepRecord {
    /// Time used to order steps: the distributed stamp if present, else
    /// `(t, 0)`.
    pub fn key(&self) -> (u64, u64) {
        self.stamp.unwrap_or((self.t, 0))
    }
}

/// Ordered record of covering steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub records: Vec<StepRecord>,
}

impl StepLog {
    pub fn push(&mut self, cons: ConsId, beta: f64, stamp: Option<(u64, u64)>) {
        let t = self.records.len() as u64 + 1;
        self.records.push(StepRecord { t, cons, beta, stamp });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Constraint order of the steps.
    pub fn order(&self) -> Vec<ConsId> {
        self.records.iter().map(|r| r.cons).collect()
    }

    pub fn beta_sum(&self) -> f64 {
        self.records.iter().map(|r| r.beta).sum()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> io::Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { records })
    }
}

/// How the next constraint to step is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionPolicy {
    /// Lowest-index unsatisfied constraint, stepped until satisfied.
    InputOrder,
    /// As `InputOrder` over a seeded random permutation.
    Random(u64),
    /// As `InputOrder` over this order; unlisted constraints follow in
    /// index order.
    Priority(Vec<ConsId>),
    /// Exactly this sequence of steps.
    External(Vec<ConsId>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoverError {
    #[error("instance is infeasible: constraints {0:?} cannot be met at their caps")]
    Infeasible(Vec<ConsId>),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error("constraint {cons} was stepped {steps} times, above its bound {bound}")]
    StepLimit { cons: ConsId, steps: usize, bound: usize },
    #[error("step {t} targets constraint {cons}, which is already satisfied")]
    ReplayOnSatisfied { t: usize, cons: ConsId },
    #[error("no constraint {0}")]
    UnknownConstraint(ConsId),
    #[error("constraint {0} is still unsatisfied after the external sequence")]
    Unfinished(ConsId),
    #[error("the vertex-cover rule needs a two-variable unit constraint with demand 1 (constraint {0})")]
    NotVertexCover(ConsId),
}

/// Step size of `rule` for `view` at `x`.
pub fn step_beta(
    rule: StepRule,
    x: &[f64],
    view: &ConstraintView<'_>,
    cost: &dyn CostFunction,
) -> Result<Beta, CoverError> {
    match rule {
        StepRule::Relaxation => Ok(relax::stepsize(x, view, cost)?),
        StepRule::VertexCover => {
            let [(v, a), (w, b)] = view.terms else {
                return Err(CoverError::NotVertexCover(view.index));
            };
            if *a != 1.0 || *b != 1.0 || view.demand != 1.0 {
                return Err(CoverError::NotVertexCover(view.index));
            }
            if tolerance::covers(x[*v], 1.0) || tolerance::covers(x[*w], 1.0) {
                return Err(RelaxError::Satisfied { cons: view.index }.into());
            }
            let cv = cost.linear_coefficient(*v).ok_or(CoverError::NotVertexCover(view.index))?;
            let cw = cost.linear_coefficient(*w).ok_or(CoverError::NotVertexCover(view.index))?;
            let (bv, bw) = ((1.0 - x[*v]) * cv, (1.0 - x[*w]) * cw);
            Ok(if bw < bv { Beta { beta: bw, var: *w } } else { Beta { beta: bv, var: *v } })
        }
    }
}

/// Satisfaction test matching `rule`.
pub fn satisfied(rule: StepRule, inst: &CoveringInstance, cons: ConsId, x: &[f64]) -> bool {
    match rule {
        StepRule::Relaxation => inst.is_satisfied(cons, x),
        StepRule::VertexCover => inst.row(cons).iter().any(|&(j, _)| tolerance::covers(x[j], 1.0)),
    }
}

/// Result of a sequential covering run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverRun {
    /// Pre-rounding `x`.
    pub x: Assignment,
    pub rounded: Assignment,
    pub log: StepLog,
}

impl CoverRun {
    pub fn cost(&self, inst: &CoveringInstance) -> f64 {
        inst.cost_of(&self.rounded.x)
    }
}

/// Runs the sequential covering algorithm with linear costs and the
/// relaxation stepsize.
pub fn sequential_cover(inst: &CoveringInstance, policy: &SelectionPolicy) -> Result<CoverRun, CoverError> {
    let cost = LinearCost::new(inst.costs().to_vec());
    sequential_cover_with(inst, &cost, StepRule::Relaxation, policy)
}

/// Sequential covering with an arbitrary cost function and step rule.
pub fn sequential_cover_with(
    inst: &CoveringInstance,
    cost: &dyn CostFunction,
    rule: StepRule,
    policy: &SelectionPolicy,
) -> Result<CoverRun, CoverError> {
    let bad = inst.infeasible_constraints();
    if !bad.is_empty() {
        return Err(CoverError::Infeasible(bad));
    }
    let mut x = vec![0.0; inst.n_vars()];
    let mut log = StepLog::default();
    match policy {
        SelectionPolicy::InputOrder | SelectionPolicy::Random(_) | SelectionPolicy::Priority(_) => {
            let mut order: Vec<ConsId> = (0..inst.n_cons()).collect();
            if let SelectionPolicy::Random(seed) = policy {
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            }
            if let SelectionPolicy::Priority(first) = policy {
                if let Some(&i) = first.iter().find(|&&i| i >= inst.n_cons()) {
                    return Err(CoverError::UnknownConstraint(i));
                }
                let mut seen = vec![false; inst.n_cons()];
                order = first.iter().copied().chain(0..inst.n_cons()).filter(|&i| !std::mem::replace(&mut seen[i], true)).collect();
            }
            for i in order {
                let view = inst.constraint(i);
                let bound = match rule {
                    StepRule::Relaxation => relax::relaxation_count(&view),
                    StepRule::VertexCover => 1,
                };
                let mut steps = 0;
                while !satisfied(rule, inst, i, &x) {
                    steps += 1;
                    if steps > bound {
                        return Err(CoverError::StepLimit { cons: i, steps, bound });
                    }
                    let b = step_beta(rule, &x, &view, cost)?;
                    relax::step(&mut x, &view, b.beta, cost);
                    log.push(i, b.beta, None);
                }
            }
        }
        SelectionPolicy::External(seq) => {
            x = replay(inst, cost, rule, seq, &mut log)?;
            if let Some(i) = (0..inst.n_cons()).find(|&i| !satisfied(rule, inst, i, &x)) {
                return Err(CoverError::Unfinished(i));
            }
        }
    }
    let x = Assignment { x, rounded: false };
    let rounded = x.rounded(inst);
    Ok(CoverRun { x, rounded, log })
}

/// Performs one step per entry of `seq`, in order, from `x = 0`, appending
/// to `log`. Returns the pre-rounding `x`.
pub fn replay(
    inst: &CoveringInstance,
    cost: &dyn CostFunction,
    rule: StepRule,
    seq: &[ConsId],
    log: &mut StepLog,
) -> Result<Vec<f64>, CoverError> {
    let mut x = vec![0.0; inst.n_vars()];
    for (t, &i) in seq.iter().enumerate() {
        if satisfied(rule, inst, i, &x) {
            return Err(CoverError::ReplayOnSatisfied { t: t + 1, cons: i });
        }
        let view = inst.constraint(i);
        let b = step_beta(rule, &x, &view, cost)?;
        relax::step(&mut x, &view, b.beta, cost);
        log.push(i, b.beta, None);
    }
    Ok(x)
}
