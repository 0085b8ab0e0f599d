//! Step-time partial order over covering constraints and the reverse-order
//! packing extraction.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::{ConsId, CoveringInstance};
use crate::sequential::StepLog;
use crate::tolerance;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PosetError {
    #[error("constraints {a} and {b} share a variable and have the same step time {stamp:?}")]
    DuplicateStamp { a: ConsId, b: ConsId, stamp: (u64, u64) },
    #[error("order is not a linear extension: {0}")]
    NotLinearExtension(String),
    #[error("packing variable {0} appears in no packing constraint")]
    EmptyColumn(ConsId),
}

/// Constraints with a step, ordered by the transitive closure of "shares a
/// variable and was stepped earlier". A constraint stepped several times is
/// placed at its last step.
#[derive(Debug, Clone, PartialEq)]
pub struct Poset {
    stamps: BTreeMap<ConsId, (u64, u64)>,
    /// Immediate successors along each variable's chain.
    succ: HashMap<ConsId, Vec<ConsId>>,
    pred: HashMap<ConsId, Vec<ConsId>>,
}

/// Builds the step-time poset of `log` over `inst`.
pub fn build_poset(log: &StepLog, inst: &CoveringInstance) -> Result<Poset, PosetError> {
    let mut stamps = BTreeMap::new();
    for r in &log.records {
        stamps.insert(r.cons, r.key());
    }
    let mut succ: HashMap<ConsId, Vec<ConsId>> = HashMap::new();
    let mut pred: HashMap<ConsId, Vec<ConsId>> = HashMap::new();
    for j in 0..inst.n_vars() {
        let mut chain: Vec<(ConsId, (u64, u64))> = inst
            .col(j)
            .iter()
            .filter_map(|&(i, _)| stamps.get(&i).map(|&s| (i, s)))
            .collect();
        chain.sort_by_key(|&(i, s)| (s, i));
        for w in chain.windows(2) {
            let ((a, sa), (b, sb)) = (w[0], w[1]);
            if sa == sb {
                return Err(PosetError::DuplicateStamp { a, b, stamp: sa });
            }
            let out = succ.entry(a).or_default();
            if !out.contains(&b) {
                out.push(b);
                pred.entry(b).or_default().push(a);
            }
        }
    }
    for v in succ.values_mut().chain(pred.values_mut()) {
        v.sort_unstable();
    }
    Ok(Poset { stamps, succ, pred })
}

impl Poset {
    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn contains(&self, i: ConsId) -> bool {
        self.stamps.contains_key(&i)
    }

    pub fn stamp(&self, i: ConsId) -> Option<(u64, u64)> {
        self.stamps.get(&i).copied()
    }

    /// Elements in increasing step time.
    pub fn elements(&self) -> Vec<ConsId> {
        let mut v: Vec<ConsId> = self.stamps.keys().copied().collect();
        v.sort_by_key(|i| (self.stamps[i], *i));
        v
    }

    pub fn successors(&self, i: ConsId) -> &[ConsId] {
        self.succ.get(&i).map_or(&[], Vec::as_slice)
    }

    pub fn predecessors(&self, i: ConsId) -> &[ConsId] {
        self.pred.get(&i).map_or(&[], Vec::as_slice)
    }

    /// `a ≺ b` in the transitive closure.
    pub fn precedes(&self, a: ConsId, b: ConsId) -> bool {
        if a == b || !self.contains(a) || !self.contains(b) {
            return false;
        }
        let target = self.stamps[&b];
        let mut stack = vec![a];
        let mut seen = std::collections::HashSet::new();
        while let Some(u) = stack.pop() {
            for &v in self.successors(u) {
                if v == b {
                    return true;
                }
                if self.stamps[&v] < target && seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        false
    }

    /// True when `order` lists every element once and respects `≺`.
    pub fn is_linear_extension(&self, order: &[ConsId]) -> bool {
        self.check_extension(order).is_ok()
    }

    fn check_extension(&self, order: &[ConsId]) -> Result<(), PosetError> {
        if order.len() != self.len() {
            return Err(PosetError::NotLinearExtension(format!(
                "{} entries for {} elements",
                order.len(),
                self.len()
            )));
        }
        let mut pos = HashMap::with_capacity(order.len());
        for (k, &i) in order.iter().enumerate() {
            if !self.contains(i) {
                return Err(PosetError::NotLinearExtension(format!("{i} is not an element")));
            }
            if pos.insert(i, k).is_some() {
                return Err(PosetError::NotLinearExtension(format!("{i} listed twice")));
            }
        }
        for (&a, outs) in &self.succ {
            for &b in outs {
                if pos[&a] > pos[&b] {
                    return Err(PosetError::NotLinearExtension(format!("{a} must precede {b}")));
                }
            }
        }
        Ok(())
    }

    /// A uniformly seeded random topological order (Kahn's algorithm with
    /// random choice among the currently minimal elements).
    pub fn random_linear_extension(&self, rng: &mut impl Rng) -> Vec<ConsId> {
        let mut indeg: HashMap<ConsId, usize> =
            self.stamps.keys().map(|&i| (i, self.predecessors(i).len())).collect();
        let mut ready: Vec<ConsId> = self.elements().into_iter().filter(|i| indeg[i] == 0).collect();
        let mut out = Vec::with_capacity(self.len());
        while !ready.is_empty() {
            let k = rng.random_range(0..ready.len());
            let i = ready.swap_remove(k);
            out.push(i);
            for &v in self.successors(i) {
                let d = indeg.get_mut(&v).expect("element");
                *d -= 1;
                if *d == 0 {
                    ready.push(v);
                }
            }
        }
        out
    }
}

/// Dual vector with a per-variable "final" flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSolution {
    pub y: Vec<f64>,
    pub done: Vec<bool>,
}

impl PackingSolution {
    pub fn value(&self, inst: &CoveringInstance) -> f64 {
        inst.demands().iter().zip(&self.y).map(|(w, y)| w * y).sum()
    }
}

/// Residual `c_j - sum_i A_ij y_i` per packing constraint, updated one
/// raise at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Slack {
    pub slack: Vec<f64>,
}

impl Slack {
    pub fn new(inst: &CoveringInstance) -> Self {
        Self { slack: inst.costs().to_vec() }
    }

    /// Largest feasible value of `y_s` given the current slack.
    pub fn headroom(&self, inst: &CoveringInstance, s: ConsId) -> Result<f64, PosetError> {
        let row = inst.row(s);
        if row.is_empty() {
            return Err(PosetError::EmptyColumn(s));
        }
        let m = row
            .iter()
            .map(|&(j, a)| self.slack[j] / a)
            .fold(f64::INFINITY, f64::min);
        Ok(m.max(0.0))
    }

    pub fn apply(&mut self, inst: &CoveringInstance, s: ConsId, ys: f64) {
        for &(j, a) in inst.row(s) {
            self.slack[j] -= a * ys;
        }
    }
}

/// `min_{j in cons(y_s)} (c_j - A_j^T y) / A_sj` with `y_s` itself excluded.
pub fn raise_maximally(inst: &CoveringInstance, y: &[f64], s: ConsId) -> Result<f64, PosetError> {
    let row = inst.row(s);
    if row.is_empty() {
        return Err(PosetError::EmptyColumn(s));
    }
    let mut best = f64::INFINITY;
    for &(j, a) in row {
        let used: f64 = inst
            .col(j)
            .iter()
            .filter(|&&(i, _)| i != s)
            .map(|&(i, b)| b * y[i])
            .sum();
        best = best.min((inst.costs()[j] - used) / a);
    }
    Ok(best.max(0.0))
}

/// Raises packing variables maximally in reverse of `order`, which must be
/// a linear extension of `poset`. Constraints outside the poset get `y = 0`.
pub fn sequential_pack(
    inst: &CoveringInstance,
    poset: &Poset,
    order: &[ConsId],
) -> Result<PackingSolution, PosetError> {
    poset.check_extension(order)?;
    let mut y = vec![0.0; inst.n_cons()];
    let mut slack = Slack::new(inst);
    for &s in order.iter().rev() {
        let v = slack.headroom(inst, s)?;
        y[s] = v;
        slack.apply(inst, s, v);
    }
    Ok(PackingSolution { y, done: vec![true; inst.n_cons()] })
}

/// Objective values of a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub cost_x: f64,
    pub value_y: f64,
    /// `cost_x / value_y`; 1 when both are 0.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RatioError {
    #[error("covering constraint {0} is violated")]
    CoverViolated(ConsId),
    #[error("packing constraint {var} is violated: load {load} > capacity {cap}")]
    PackViolated { var: usize, load: f64, cap: f64 },
    #[error("packing variable {0} is negative")]
    Negative(ConsId),
    #[error("cost {cost_x} exceeds {rho} times the dual value {value_y}")]
    RatioExceeded { cost_x: f64, value_y: f64, rho: usize },
}

/// Ratio of a covering cost to a dual value; 1 when both vanish.
pub fn ratio_of(cost_x: f64, value_y: f64) -> f64 {
    if value_y > 0.0 {
        cost_x / value_y
    } else if cost_x <= 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Checks feasibility of both sides and `c·x <= ρ · w·y + 1e-6`.
pub fn verify_ratio(inst: &CoveringInstance, x: &[f64], y: &[f64]) -> Result<RatioReport, RatioError> {
    if let Some(i) = inst.first_violated(x) {
        return Err(RatioError::CoverViolated(i));
    }
    check_packing(inst, y)?;
    let cost_x = inst.cost_of(x);
    let value_y: f64 = inst.demands().iter().zip(y).map(|(w, v)| w * v).sum();
    let rho = inst.rho();
    if cost_x > rho as f64 * value_y + 1e-6 {
        return Err(RatioError::RatioExceeded { cost_x, value_y, rho });
    }
    Ok(RatioReport { cost_x, value_y, ratio: ratio_of(cost_x, value_y) })
}

/// `y >= 0` and `A^T y <= c` up to the shared tolerance.
pub fn check_packing(inst: &CoveringInstance, y: &[f64]) -> Result<(), RatioError> {
    if let Some(i) = y.iter().position(|&v| v < 0.0) {
        return Err(RatioError::Negative(i));
    }
    for j in 0..inst.n_vars() {
        let load: f64 = inst.col(j).iter().map(|&(i, a)| a * y[i]).sum();
        let cap = inst.costs()[j];
        if !tolerance::covers(cap, load) {
            return Err(RatioError::PackViolated { var: j, load, cap });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::CoveringInstance;
    use crate::sequential::{sequential_cover, SelectionPolicy};

    fn appendix(second_demand: f64) -> CoveringInstance {
        CoveringInstance::fractional(
            vec![1.0, 1.0, 1.0],
            &[(vec![(0, 1.0), (1, 1.0)], 1.0), (vec![(0, 1.0), (2, 1.0)], second_demand)],
        )
        .unwrap()
    }

    #[test]
    fn shared_variable_orders_steps() {
        let inst = appendix(5.0);
        let run = sequential_cover(&inst, &SelectionPolicy::InputOrder).unwrap();
        let p = build_poset(&run.log, &inst).unwrap();
        assert!(p.precedes(0, 1));
        assert!(!p.precedes(1, 0));
    }

    #[test]
    fn disjoint_constraints_incomparable() {
        let inst = CoveringInstance::fractional(
            vec![1.0, 1.0],
            &[(vec![(0, 1.0)], 1.0), (vec![(1, 1.0)], 1.0)],
        )
        .unwrap();
        let run = sequential_cover(&inst, &SelectionPolicy::InputOrder).unwrap();
        let p = build_poset(&run.log, &inst).unwrap();
        assert!(!p.precedes(0, 1) && !p.precedes(1, 0));
        assert!(p.is_linear_extension(&[1, 0]));
    }

    #[test]
    fn empty_log_empty_poset() {
        let p = build_poset(&StepLog::default(), &appendix(5.0)).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn duplicate_stamp_rejected() {
        let inst = appendix(5.0);
        let mut log = StepLog::default();
        log.push(0, 1.0, Some((1, 1)));
        log.push(1, 4.0, Some((1, 1)));
        assert!(matches!(build_poset(&log, &inst), Err(PosetError::DuplicateStamp { .. })));
    }

    #[test]
    fn appendix_packings() {
        let inst = appendix(5.0);
        let run = sequential_cover(&inst, &SelectionPolicy::InputOrder).unwrap();
        let p = build_poset(&run.log, &inst).unwrap();
        let pack = sequential_pack(&inst, &p, &p.elements()).unwrap();
        assert_eq!(pack.y, vec![0.0, 1.0]);
        let r = verify_ratio(&inst, &run.rounded.x, &pack.y).unwrap();
        assert_eq!((r.cost_x, r.value_y, r.ratio), (10.0, 5.0, 2.0));

        let inst = appendix(0.0);
        let run = sequential_cover(&inst, &SelectionPolicy::InputOrder).unwrap();
        let p = build_poset(&run.log, &inst).unwrap();
        let pack = sequential_pack(&inst, &p, &p.elements()).unwrap();
        assert_eq!(pack.y, vec![1.0, 0.0]);
        assert_eq!(pack.value(&inst), 1.0);
    }

    #[test]
    fn raise_examples() {
        let inst = CoveringInstance::fractional(vec![2.0, 3.0], &[(vec![(0, 1.0), (1, 1.0)], 1.0)]).unwrap();
        assert_eq!(raise_maximally(&inst, &[0.0], 0).unwrap(), 2.0);
        let appendix = appendix(5.0);
        assert_eq!(raise_maximally(&appendix, &[0.0, 1.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn single_edge_packing_is_beta() {
        let inst = CoveringInstance::fractional(vec![3.0, 5.0], &[(vec![(0, 1.0), (1, 1.0)], 1.0)]).unwrap();
        let run = sequential_cover(&inst, &SelectionPolicy::InputOrder).unwrap();
        let p = build_poset(&run.log, &inst).unwrap();
        let pack = sequential_pack(&inst, &p, &[0]).unwrap();
        assert_eq!(pack.y, vec![3.0]);
        assert_eq!(run.log.records[0].beta, 3.0);
        assert_eq!(inst.cost_of(&run.x.x), 6.0);
    }

    #[test]
    fn zero_instance_ratio() {
        let inst = CoveringInstance::fractional(vec![1.0], &[(vec![(0, 1.0)], 0.0)]).unwrap();
        let r = verify_ratio(&inst, &[0.0], &[0.0]).unwrap();
        assert_eq!((r.cost_x, r.value_y), (0.0, 0.0));
    }

    #[test]
    fn bad_extension_rejected() {
        let inst = appendix(5.0);
        let run = sequential_cover(&inst, &SelectionPolicy::InputOrder).unwrap();
        let p = build_poset(&run.log, &inst).unwrap();
        assert!(matches!(sequential_pack(&inst, &p, &[1, 0]), Err(PosetError::NotLinearExtension(_))));
    }
}
