//! Distributed packing: dual values set in reverse step order once the
//! covering run leaves them settled.

use crate::cluster::RadiusSchedule;
use crate::cost::LinearCost;
use crate::dist_cover::{self, DistError, DistRun};
use crate::instances::{ConsId, CoveringInstance};
use crate::sim::RandomSource;
use crate::star::{algorithm_round, StarVariant};

pub use crate::star::{wait_condition, Readiness};

/// Covering run plus the packing built on top of it.
#[derive(Debug, Clone)]
pub struct PackRun {
    pub cover: DistRun,
    pub y: Vec<f64>,
    /// Whether each dual was set before the run ended.
    pub done: Vec<bool>,
    /// Algorithm round (star protocols) or phase (cluster protocols) in
    /// which each dual was set, 0 if never.
    pub set_round: Vec<u64>,
    /// Algorithm round or phase of each constraint's last step, 0 if never.
    pub step_round: Vec<u64>,
    /// Algorithm round or phase in which the last node saw its constraints
    /// met.
    pub cover_round: u64,
}

impl PackRun {
    pub fn value(&self, inst: &CoveringInstance) -> f64 {
        inst.demands().iter().zip(&self.y).map(|(w, y)| w * y).sum()
    }

    /// Constraints whose dual was set later than `T + t + 1`, where `T` is
    /// the covering round and the constraint was stepped in round `T - t`.
    pub fn late(&self) -> Vec<ConsId> {
        (0..self.y.len())
            .filter(|&i| match self.step_round[i] {
                0 => !self.done[i],
                s => {
                    let t = self.cover_round.saturating_sub(s);
                    !self.done[i] || self.set_round[i] > self.cover_round + t + 1
                }
            })
            .collect()
    }
}

/// Covering plus packing on a fractional instance with at most two
/// variables per constraint; both sides are within a factor 2 of optimal.
pub fn pack2(inst: &CoveringInstance, rng: &mut dyn RandomSource, max_rounds: u64) -> Result<PackRun, DistError> {
    if !inst.is_fractional() {
        return Err(DistError::NotFractional);
    }
    dist_cover::check_pairs(inst)?;
    let (cover, protocol, states) = dist_cover::run_star(inst, StarVariant::Cmip2, true, rng, max_rounds)?;
    let (y, done, set) = protocol.collect_duals(&states);
    let cover_round = states.iter().filter_map(|s| s.finished_round).map(algorithm_round).max().unwrap_or(0);
    let set_round = set.iter().map(|&r| if r == 0 { 0 } else { algorithm_round(r) }).collect();
    // Initialization steps carry round 1, main-loop round r carries r + 1.
    let step_round = step_rounds(&cover, inst.n_cons(), |tr| tr.saturating_sub(1).max(1));
    Ok(PackRun { cover, y, done, set_round, step_round, cover_round })
}

/// Covering plus packing for any number of variables per constraint;
/// both sides are within a factor `rho` of optimal.
pub fn pack_general(
    inst: &CoveringInstance,
    schedule: RadiusSchedule,
    rng: &mut dyn RandomSource,
    max_rounds: u64,
) -> Result<PackRun, DistError> {
    if !inst.is_fractional() {
        return Err(DistError::NotFractional);
    }
    let cost = LinearCost::new(inst.costs().to_vec());
    let (cover, protocol, states) = dist_cover::run_cluster(inst, &cost, schedule, true, rng, max_rounds)?;
    let y = states.iter().map(|s| s.y.unwrap_or(0.0)).collect();
    let done = states.iter().map(|s| s.y.is_some()).collect();
    let set_round = states.iter().map(|s| if s.y.is_some() { protocol.phase_of(s.set_round.max(1)) } else { 0 }).collect();
    let cover_round = states.iter().filter_map(|s| s.satisfied_round).map(|r| protocol.phase_of(r.max(1))).max().unwrap_or(0);
    let step_round = step_rounds(&cover, inst.n_cons(), |phase| phase);
    Ok(PackRun { cover, y, done, set_round, step_round, cover_round })
}

fn step_rounds(cover: &DistRun, m: usize, to_round: impl Fn(u64) -> u64) -> Vec<u64> {
    let mut out = vec![0; m];
    for r in &cover.log.records {
        out[r.cons] = to_round(r.key().0);
    }
    out
}
