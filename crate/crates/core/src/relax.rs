//! Relaxed constraints, the potential `Φ` and the one-variable stepsize.
//!
//! A constraint `sum_j A_j ⌊min(x_j, u_j)⌋ >= w` is relaxed by independently
//! dropping each variable's floor and/or cap. `Φ(x, S)` counts the relaxed
//! constraints `x` violates; the stepsize is the cheapest single-variable
//! raise that satisfies at least one of them.

use thiserror::Error;

use crate::cost::CostFunction;
use crate::instances::{ConsId, ConstraintView, VarId};
use crate::tolerance;

/// Enumeration limit on relaxations per constraint (`4^8`).
pub const MAX_RELAXATIONS: usize = 1 << 16;

/// How one variable enters a relaxed constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Mode {
    pub floor: bool,
    pub cap: bool,
}

impl Mode {
    pub fn apply(self, v: f64, upper: Option<f64>) -> f64 {
        let mut v = v;
        if self.cap {
            if let Some(u) = upper {
                v = v.min(u);
            }
        }
        if self.floor {
            v = tolerance::floor(v);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelaxError {
    #[error("constraint {cons} has {count} relaxations, above the enumeration limit")]
    TooManyRelaxations { cons: ConsId, count: usize },
    #[error("constraint {cons} cannot be satisfied even with every variable at its cap")]
    Infeasible { cons: ConsId },
    #[error("constraint {cons} is already satisfied")]
    Satisfied { cons: ConsId },
}

/// Modes available to a variable: floors only for integer variables, caps
/// only for bounded ones.
fn choices(view: &ConstraintView<'_>, var: VarId) -> &'static [Mode] {
    const PLAIN: Mode = Mode { floor: false, cap: false };
    const FLOOR: Mode = Mode { floor: true, cap: false };
    const CAP: Mode = Mode { floor: false, cap: true };
    const BOTH: Mode = Mode { floor: true, cap: true };
    match (view.is_integer(var), view.upper(var).is_some()) {
        (false, false) => &[PLAIN],
        (true, false) => &[PLAIN, FLOOR],
        (false, true) => &[PLAIN, CAP],
        (true, true) => &[PLAIN, FLOOR, CAP, BOTH],
    }
}

/// Number of relaxed constraints of `view`.
pub fn relaxation_count(view: &ConstraintView<'_>) -> usize {
    view.vars()
        .map(|j| choices(view, j).len())
        .try_fold(1usize, |acc, k| acc.checked_mul(k))
        .unwrap_or(usize::MAX)
}

/// Calls `f` with the per-term modes of every relaxed constraint.
pub fn for_each_relaxation(
    view: &ConstraintView<'_>,
    mut f: impl FnMut(&[Mode]),
) -> Result<(), RelaxError> {
    let count = relaxation_count(view);
    if count > MAX_RELAXATIONS {
        return Err(RelaxError::TooManyRelaxations { cons: view.index, count });
    }
    let opts: Vec<&[Mode]> = view.vars().map(|j| choices(view, j)).collect();
    let mut digits = vec![0usize; opts.len()];
    let mut modes: Vec<Mode> = opts.iter().map(|o| o[0]).collect();
    loop {
        f(&modes);
        let mut k = 0;
        loop {
            if k == digits.len() {
                return Ok(());
            }
            digits[k] += 1;
            if digits[k] < opts[k].len() {
                modes[k] = opts[k][digits[k]];
                break;
            }
            digits[k] = 0;
            modes[k] = opts[k][0];
            k += 1;
        }
    }
}

fn relaxed_lhs(view: &ConstraintView<'_>, modes: &[Mode], x: &[f64]) -> f64 {
    view.terms
        .iter()
        .zip(modes)
        .map(|(&(j, a), m)| a * m.apply(x[j], view.upper(j)))
        .sum()
}

/// `Φ(x, S)`: relaxed constraints of `view` not satisfied by `x`.
pub fn phi(x: &[f64], view: &ConstraintView<'_>) -> Result<usize, RelaxError> {
    let mut unmet = 0;
    for_each_relaxation(view, |modes| {
        if !tolerance::covers(relaxed_lhs(view, modes, x), view.demand) {
            unmet += 1;
        }
    })?;
    Ok(unmet)
}

/// Smallest value of a variable whose term `a * mode(v)` reaches `need`,
/// or `None` when its cap makes that impossible.
fn reach(need: f64, a: f64, upper: Option<f64>, mode: Mode) -> Option<f64> {
    let mut target = need / a;
    if mode.floor {
        target = tolerance::ceil(target);
    }
    if mode.cap {
        if let Some(u) = upper {
            if !tolerance::covers(u, target) {
                return None;
            }
        }
    }
    Some(target)
}

/// Result of [`stepsize`]: the step size and the variable whose lone raise
/// achieves it (lowest index on ties).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta {
    pub beta: f64,
    pub var: VarId,
}

/// Cheapest single-variable raise, under `cost`, that lowers `Φ(x, S)`.
///
/// Constraints with no floors or caps and linear costs use the closed form
/// `residual * min_j c_j / A_j`.
pub fn stepsize(
    x: &[f64],
    view: &ConstraintView<'_>,
    cost: &dyn CostFunction,
) -> Result<Beta, RelaxError> {
    if view.is_plain() && view.vars().all(|j| cost.linear_coefficient(j).is_some()) {
        let lhs: f64 = view.terms.iter().map(|&(j, a)| a * x[j]).sum();
        if tolerance::covers(lhs, view.demand) {
            return Err(RelaxError::Satisfied { cons: view.index });
        }
        let residual = view.demand - lhs;
        let mut best: Option<(f64, VarId)> = None;
        for &(j, a) in view.terms {
            let ratio = cost.linear_coefficient(j).expect("linear") / a;
            if best.map_or(true, |(r, _)| ratio < r) {
                best = Some((ratio, j));
            }
        }
        let (ratio, var) = best.expect("constraint has variables");
        return Ok(Beta { beta: residual * ratio, var });
    }

    let mut best: Option<Beta> = None;
    let mut unmet = 0usize;
    for_each_relaxation(view, |modes| {
        let terms: Vec<f64> = view
            .terms
            .iter()
            .zip(modes)
            .map(|(&(j, a), m)| a * m.apply(x[j], view.upper(j)))
            .collect();
        let total: f64 = terms.iter().sum();
        if tolerance::covers(total, view.demand) {
            return;
        }
        unmet += 1;
        for (k, &(j, a)) in view.terms.iter().enumerate() {
            let others: f64 = terms
                .iter()
                .enumerate()
                .filter(|&(q, _)| q != k)
                .map(|(_, t)| t)
                .sum();
            let need = view.demand - others;
            let Some(target) = reach(need, a, view.upper(j), modes[k]) else {
                continue;
            };
            if target <= x[j] {
                continue;
            }
            let c = cost.raise_cost(j, x[j], target);
            if !(c > 0.0) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => c < b.beta || (c == b.beta && j < b.var),
            };
            if better {
                best = Some(Beta { beta: c, var: j });
            }
        }
    })?;
    if unmet == 0 {
        return Err(RelaxError::Satisfied { cons: view.index });
    }
    best.ok_or(RelaxError::Infeasible { cons: view.index })
}

/// Stepsize under the instance's own linear costs.
pub fn stepsize_cmip(x: &[f64], view: &ConstraintView<'_>) -> Result<Beta, RelaxError> {
    stepsize(x, view, &InstanceCosts(view))
}

/// Raises every variable of `view` maximally within cost budget `beta`.
pub fn step(x: &mut [f64], view: &ConstraintView<'_>, beta: f64, cost: &dyn CostFunction) {
    for j in view.vars() {
        x[j] = cost.max_raise(j, x[j], beta);
    }
}

/// True when the move from `before` to `after` lowered `Φ`.
pub fn hit_detector(before: &[f64], after: &[f64], view: &ConstraintView<'_>) -> Result<bool, RelaxError> {
    Ok(phi(after, view)? < phi(before, view)?)
}

/// True when raising just `var` by budget `beta` would lower `Φ`.
pub fn can_hit(
    x: &[f64],
    view: &ConstraintView<'_>,
    var: VarId,
    beta: f64,
    cost: &dyn CostFunction,
) -> Result<bool, RelaxError> {
    let mut raised = x.to_vec();
    raised[var] = cost.max_raise(var, x[var], beta);
    hit_detector(x, &raised, view)
}

/// The instance's linear costs seen through [`CostFunction`].
struct InstanceCosts<'a>(&'a ConstraintView<'a>);

impl CostFunction for InstanceCosts<'_> {
    fn raise_cost(&self, var: VarId, from: f64, to: f64) -> f64 {
        self.0.cost(var) * (to - from)
    }
    fn max_raise(&self, var: VarId, from: f64, budget: f64) -> f64 {
        from + budget / self.0.cost(var)
    }
    fn total(&self, x: &[f64]) -> f64 {
        self.0.instance().cost_of(x)
    }
    fn linear_coefficient(&self, var: VarId) -> Option<f64> {
        Some(self.0.cost(var))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("constraint {cons} has arity {arity}; the distance oracle handles at most 3")]
    ArityTooLarge { cons: ConsId, arity: usize },
}

/// Exact `min { c·x̂ - c·x : x̂ >= x, x̂ in S }` under linear costs, by
/// enumerating candidate values per variable: its current value, integer
/// breakpoints, its cap, and (for at most one continuous variable) the
/// value that makes the constraint tight. `modes` selects a relaxed form;
/// `None` means the constraint itself.
pub fn distance_oracle_with(
    x: &[f64],
    view: &ConstraintView<'_>,
    modes: Option<&[Mode]>,
) -> Result<f64, OracleError> {
    let arity = view.arity();
    if arity > 3 {
        return Err(OracleError::ArityTooLarge { cons: view.index, arity });
    }
    let strict: Vec<Mode> = view
        .vars()
        .map(|j| Mode { floor: view.is_integer(j), cap: view.upper(j).is_some() })
        .collect();
    let modes = modes.unwrap_or(&strict);
    let value = |k: usize, v: f64| {
        let (j, a) = view.terms[k];
        a * modes[k].apply(v, view.upper(j))
    };
    if tolerance::covers((0..arity).map(|k| value(k, x[view.terms[k].0])).sum(), view.demand) {
        return Ok(0.0);
    }

    let candidates: Vec<Vec<f64>> = (0..arity)
        .map(|k| {
            let (j, a) = view.terms[k];
            let mut c = vec![x[j]];
            let limit = match (modes[k].cap, view.upper(j)) {
                (true, Some(u)) => u,
                _ => f64::INFINITY,
            };
            if modes[k].floor {
                let alone = tolerance::ceil(view.demand / a);
                let top = alone.min(tolerance::floor(limit));
                let mut v = tolerance::floor(x[j]) + 1.0;
                while v <= top {
                    c.push(v);
                    v += 1.0;
                }
            } else if limit.is_finite() && limit > x[j] {
                c.push(limit);
            }
            c
        })
        .collect();

    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; arity];
    loop {
        let point: Vec<f64> = (0..arity).map(|k| candidates[k][pick[k]]).collect();
        let base: f64 = (0..arity).map(|k| view.cost(view.terms[k].0) * (point[k] - x[view.terms[k].0])).sum();
        let lhs: f64 = (0..arity).map(|k| value(k, point[k])).sum();
        if tolerance::covers(lhs, view.demand) {
            best = best.min(base);
        } else {
            for k in 0..arity {
                if modes[k].floor {
                    continue;
                }
                let (j, a) = view.terms[k];
                let need = view.demand - (lhs - value(k, point[k]));
                let target = need / a;
                if target <= point[k] {
                    continue;
                }
                if modes[k].cap {
                    if let Some(u) = view.upper(j) {
                        if !tolerance::covers(u, target) {
                            continue;
                        }
                    }
                }
                best = best.min(base + view.cost(j) * (target - point[k]));
            }
        }
        let mut k = 0;
        loop {
            if k == arity {
                return Ok(best);
            }
            pick[k] += 1;
            if pick[k] < candidates[k].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

/// `distance_c(x, S)` for the constraint itself.
pub fn distance_oracle(x: &[f64], view: &ConstraintView<'_>) -> Result<f64, OracleError> {
    distance_oracle_with(x, view, None)
}
