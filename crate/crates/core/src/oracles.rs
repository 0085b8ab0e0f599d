//! Brute-force ground truth for small instances.

use std::collections::BTreeMap;

use num_rational::Ratio;
use thiserror::Error;

use crate::instances::{CoveringInstance, PackingInstance};
use crate::sequential::StepRule;
use crate::sim::{self, enumerate_outcomes, Execution, Network, Protocol, ScriptError};
use crate::star::{StarProtocol, StarVariant, SUBROUNDS};

pub const MAX_COVER_VARS: usize = 24;
pub const MAX_MATCHING_ITEMS: usize = 20;
pub const MAX_RANDOM_BITS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExactError {
    #[error("{what} has size {size}, above the oracle limit {limit}")]
    TooLarge { what: &'static str, size: usize, limit: usize },
    #[error("instance is not a vertex-cover instance")]
    NotVertexCover,
    #[error("instance is not a b-matching instance")]
    NotBMatching,
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
}

/// Optimal objective with a witness and the number of search nodes visited.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactOptimum {
    pub value: f64,
    pub witness: Vec<f64>,
    pub explored: u64,
}

/// Minimum-cost vertex cover by branching on an uncovered edge.
pub fn exact_vertex_cover(inst: &CoveringInstance) -> Result<ExactOptimum, ExactError> {
    if !inst.is_vertex_cover() {
        return Err(ExactError::NotVertexCover);
    }
    let n = inst.n_vars();
    if n > MAX_COVER_VARS {
        return Err(ExactError::TooLarge { what: "vertex count", size: n, limit: MAX_COVER_VARS });
    }
    let edges: Vec<(usize, usize)> = (0..inst.n_cons())
        .map(|i| {
            let r = inst.row(i);
            (r[0].0, r[1].0)
        })
        .collect();
    let costs = inst.costs();

    struct Search<'a> {
        edges: &'a [(usize, usize)],
        costs: &'a [f64],
        best: f64,
        best_set: u32,
        explored: u64,
    }
    impl Search<'_> {
        fn go(&mut self, set: u32, cost: f64) {
            self.explored += 1;
            if cost >= self.best {
                return;
            }
            let open = self.edges.iter().find(|&&(u, v)| set & (1 << u) == 0 && set & (1 << v) == 0);
            match open {
                None => {
                    self.best = cost;
                    self.best_set = set;
                }
                Some(&(u, v)) => {
                    self.go(set | 1 << u, cost + self.costs[u]);
                    self.go(set | 1 << v, cost + self.costs[v]);
                }
            }
        }
    }
    let mut s = Search { edges: &edges, costs, best: f64::INFINITY, best_set: 0, explored: 0 };
    s.go(0, 0.0);
    let witness = (0..n).map(|j| if s.best_set & (1 << j) != 0 { 1.0 } else { 0.0 }).collect();
    Ok(ExactOptimum { value: s.best, witness, explored: s.explored })
}

/// Maximum-weight integral b-matching by depth-first search over each
/// hyperedge's multiplicity, pruned by an optimistic bound.
pub fn exact_bmatching(inst: &PackingInstance) -> Result<ExactOptimum, ExactError> {
    if !inst.is_b_matching() {
        return Err(ExactError::NotBMatching);
    }
    let m = inst.n_items();
    if m > MAX_MATCHING_ITEMS {
        return Err(ExactError::TooLarge { what: "hyperedge count", size: m, limit: MAX_MATCHING_ITEMS });
    }
    let cov = inst.covering();
    let edges: Vec<Vec<usize>> = (0..m).map(|i| cov.row(i).iter().map(|&(j, _)| j).collect()).collect();
    let weights = inst.weights();
    let caps: Vec<u64> = inst.capacities().iter().map(|&c| c.round() as u64).collect();

    struct Search<'a> {
        edges: &'a [Vec<usize>],
        weights: &'a [f64],
        left: Vec<u64>,
        y: Vec<u64>,
        best: f64,
        best_y: Vec<u64>,
        explored: u64,
    }
    impl Search<'_> {
        fn room(&self, i: usize) -> u64 {
            self.edges[i].iter().map(|&j| self.left[j]).min().unwrap_or(0)
        }
        fn go(&mut self, i: usize, value: f64) {
            self.explored += 1;
            if i == self.edges.len() {
                if value > self.best {
                    self.best = value;
                    self.best_y = self.y.clone();
                }
                return;
            }
            let bound: f64 = value + (i..self.edges.len()).map(|e| self.weights[e] * self.room(e) as f64).sum::<f64>();
            if bound <= self.best {
                return;
            }
            for mult in (0..=self.room(i)).rev() {
                for &j in &self.edges[i] {
                    self.left[j] -= mult;
                }
                self.y[i] = mult;
                self.go(i + 1, value + self.weights[i] * mult as f64);
                for &j in &self.edges[i] {
                    self.left[j] += mult;
                }
            }
            self.y[i] = 0;
        }
    }
    let mut s = Search {
        edges: &edges,
        weights,
        left: caps,
        y: vec![0; m],
        best: f64::NEG_INFINITY,
        best_y: vec![0; m],
        explored: 0,
    };
    s.go(0, 0.0);
    Ok(ExactOptimum { value: s.best, witness: s.best_y.iter().map(|&v| v as f64).collect(), explored: s.explored })
}

/// Exact distribution of `observe` over every outcome of the protocol's
/// random choices within `max_rounds` communication rounds.
pub fn exhaustive_protocol_outcomes<P: Protocol, T: Ord>(
    protocol: &P,
    net: &Network,
    max_rounds: u64,
    observe: impl Fn(&Execution<P::State>) -> T,
) -> Result<BTreeMap<T, Ratio<u64>>, ExactError> {
    let mut failure = None;
    let outcomes = enumerate_outcomes(MAX_RANDOM_BITS, |src| match sim::run(protocol, net, src, max_rounds) {
        Ok(exec) => Some(observe(&exec)),
        Err(e) => {
            failure.get_or_insert(e);
            None
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(sim::distribution(outcomes.into_iter().map(|(p, v)| (p, v.expect("no failure"))).collect()))
}

/// Exact probability that each edge is covered after `rounds` rounds of
/// the vertex-cover star protocol, counting the round's results as
/// delivered.
pub fn vertex_cover_coverage(inst: &CoveringInstance, rounds: u64) -> Result<Vec<Ratio<u64>>, ExactError> {
    if !inst.is_vertex_cover() {
        return Err(ExactError::NotVertexCover);
    }
    let net = StarProtocol::network(inst);
    let protocol = StarProtocol::new(inst, StarVariant::VertexCover, false);
    let dist = exhaustive_protocol_outcomes(&protocol, &net, rounds * SUBROUNDS + 1, |exec| {
        let x: Vec<f64> = exec.states.iter().map(|s| s.x).collect();
        (0..inst.n_cons())
            .map(|i| crate::sequential::satisfied(StepRule::VertexCover, inst, i, &x))
            .collect::<Vec<bool>>()
    })?;
    let mut p = vec![Ratio::from_integer(0); inst.n_cons()];
    for (covered, prob) in dist {
        for (i, c) in covered.into_iter().enumerate() {
            if c {
                p[i] += prob;
            }
        }
    }
    Ok(p)
}
