//! Distributed covering on the simulator.

use thiserror::Error;

use crate::cluster::{ClusterNode, ClusterProtocol, RadiusSchedule};
use crate::cost::CostFunction;
use crate::instances::{ConsId, CoveringInstance};
use crate::sequential::{Assignment, StepLog};
use crate::sim::{self, Network, Outcome, RandomSource, RoundTrace, SimError};
use crate::star::{StarNode, StarProtocol, StarVariant};

pub use crate::relax::hit_detector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("instance is infeasible: constraints {0:?} cannot be met at their caps")]
    Infeasible(Vec<ConsId>),
    #[error("instance is not a vertex-cover instance")]
    NotVertexCover,
    #[error("constraint {0} has more than two variables")]
    TooWide(ConsId),
    #[error("instance is not fractional (integer variables or upper bounds present)")]
    NotFractional,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Output of one distributed covering execution.
#[derive(Debug, Clone)]
pub struct DistRun {
    /// Pre-rounding `x`.
    pub x: Assignment,
    pub rounded: Assignment,
    /// Steps in a sequentially valid order, with their distributed stamps.
    pub log: StepLog,
    pub outcome: Outcome,
    pub trace: RoundTrace,
}

impl DistRun {
    /// Communication rounds used.
    pub fn rounds(&self) -> u64 {
        self.outcome.rounds()
    }

    pub fn cost(&self, inst: &CoveringInstance) -> f64 {
        inst.cost_of(&self.rounded.x)
    }
}

pub(crate) fn check_feasible(inst: &CoveringInstance) -> Result<(), DistError> {
    let bad = inst.infeasible_constraints();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(DistError::Infeasible(bad))
    }
}

pub(crate) fn check_pairs(inst: &CoveringInstance) -> Result<(), DistError> {
    match (0..inst.n_cons()).find(|&i| inst.row(i).len() > 2) {
        Some(i) => Err(DistError::TooWide(i)),
        None => Ok(()),
    }
}

pub(crate) fn run_star<'a>(
    inst: &'a CoveringInstance,
    variant: StarVariant,
    pack: bool,
    rng: &mut dyn RandomSource,
    max_rounds: u64,
) -> Result<(DistRun, StarProtocol<'a>, Vec<StarNode>), DistError> {
    let net = StarProtocol::network(inst);
    let protocol = StarProtocol::new(inst, variant, pack);
    let exec = sim::run(&protocol, &net, rng, max_rounds)?;
    let run = assemble(inst, &protocol, &net, &exec.states, exec.outcome, exec.trace);
    Ok((run, protocol, exec.states))
}

fn assemble(
    inst: &CoveringInstance,
    protocol: &StarProtocol<'_>,
    net: &Network,
    states: &[StarNode],
    outcome: Outcome,
    trace: RoundTrace,
) -> DistRun {
    let x = Assignment { x: states.iter().map(|s| s.x).collect(), rounded: false };
    let rounded = x.rounded(inst);
    DistRun { x, rounded, log: protocol.collect_log(states, net), outcome, trace }
}

/// Randomized 2-approximate weighted vertex cover.
pub fn wvc(inst: &CoveringInstance, rng: &mut dyn RandomSource, max_rounds: u64) -> Result<DistRun, DistError> {
    if !inst.is_vertex_cover() {
        return Err(DistError::NotVertexCover);
    }
    Ok(run_star(inst, StarVariant::VertexCover, false, rng, max_rounds)?.0)
}

/// Randomized 2-approximation for covering with at most two variables per
/// constraint.
pub fn cmip2(inst: &CoveringInstance, rng: &mut dyn RandomSource, max_rounds: u64) -> Result<DistRun, DistError> {
    check_pairs(inst)?;
    check_feasible(inst)?;
    Ok(run_star(inst, StarVariant::Cmip2, false, rng, max_rounds)?.0)
}

pub(crate) fn run_cluster<'a>(
    inst: &'a CoveringInstance,
    cost: &'a dyn CostFunction,
    schedule: RadiusSchedule,
    pack: bool,
    rng: &mut dyn RandomSource,
    max_rounds: u64,
) -> Result<(DistRun, ClusterProtocol<'a>, Vec<ClusterNode>), DistError> {
    check_feasible(inst)?;
    let net = ClusterProtocol::network(inst);
    let protocol = ClusterProtocol::new(inst, cost, schedule, pack);
    let exec = sim::run(&protocol, &net, rng, max_rounds)?;
    let x = Assignment { x: protocol.collect_x(&exec.states), rounded: false };
    let rounded = x.rounded(inst);
    let log = protocol.collect_log(&exec.states, &net);
    let run = DistRun { x, rounded, log, outcome: exec.outcome, trace: exec.trace };
    Ok((run, protocol, exec.states))
}

/// Covering with any number of variables per constraint and a separable
/// cost, by repeated decomposition phases; each cluster leader steps its
/// gathered constraints until they are met.
pub fn submodular_cover(
    inst: &CoveringInstance,
    cost: &dyn CostFunction,
    schedule: RadiusSchedule,
    rng: &mut dyn RandomSource,
    max_rounds: u64,
) -> Result<DistRun, DistError> {
    Ok(run_cluster(inst, cost, schedule, false, rng, max_rounds)?.0)
}
