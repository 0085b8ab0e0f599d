//! Covering/packing instance model, validation, generators and the JSON
//! interchange format.
//!
//! A [`CoveringInstance`] describes
//!
//! ```text
//! minimize c·x  subject to  A x >= w,  x <= u,  x_j integer for j in I
//! ```
//!
//! and, read column-wise, its packing dual `maximize w·y s.t. Aᵀy <= c`.

use std::collections::HashSet;
use std::fmt;
use std::ops::RangeInclusive;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tolerance;

pub type VarId = usize;
pub type ConsId = usize;

/// One nonzero `A[cons][var] = coef`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub cons: ConsId,
    pub var: VarId,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstanceError {
    #[error("variable {var} has nonpositive cost {cost}")]
    NonpositiveCost { var: VarId, cost: f64 },
    #[error("entry ({cons}, {var}) has nonpositive coefficient {coef}")]
    NonpositiveCoefficient { cons: ConsId, var: VarId, coef: f64 },
    #[error("duplicate entry ({cons}, {var})")]
    DuplicateEntry { cons: ConsId, var: VarId },
    #[error("entry ({cons}, {var}) out of range for {n_cons} constraints x {n_vars} variables")]
    IndexOutOfRange {
        cons: ConsId,
        var: VarId,
        n_cons: usize,
        n_vars: usize,
    },
    #[error("integer variable index {var} out of range")]
    IntegerVarOutOfRange { var: VarId },
    #[error("constraint {cons} has negative or non-finite demand {demand}")]
    BadDemand { cons: ConsId, demand: f64 },
    #[error("variable {var} has nonpositive or non-finite upper bound {bound}")]
    BadUpperBound { var: VarId, bound: f64 },
    #[error("constraint {cons} has no variables")]
    EmptyConstraint { cons: ConsId },
    #[error("{field} has length {got}, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Every invariant violation found in one pass.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationErrors(pub Vec<InstanceError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invalid instance field(s)", self.0.len())?;
        for e in &self.0 {
            write!(f, "; {e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed instance document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationErrors),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("infeasible generator parameters: {0}")]
    InfeasibleParameters(String),
}

/// Sparse covering instance with row and column adjacency built at load.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveringInstance {
    n_vars: usize,
    n_cons: usize,
    entries: Vec<Entry>,
    demands: Vec<f64>,
    costs: Vec<f64>,
    upper_bounds: Vec<Option<f64>>,
    integer: Vec<bool>,
    rows: Vec<Vec<(VarId, f64)>>,
    cols: Vec<Vec<(ConsId, f64)>>,
    rho: usize,
    delta: usize,
}

/// Borrowed view of one covering constraint `sum_j A_ij x_j >= w_i`.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintView<'a> {
    pub index: ConsId,
    /// `(var, coefficient)` sorted by variable index.
    pub terms: &'a [(VarId, f64)],
    pub demand: f64,
    inst: &'a CoveringInstance,
}

impl<'a> ConstraintView<'a> {
    pub fn arity(&self) -> usize {
        self.terms.len()
    }
    pub fn vars(&self) -> impl Iterator<Item = VarId> + 'a {
        self.terms.iter().map(|&(j, _)| j)
    }
    pub fn upper(&self, var: VarId) -> Option<f64> {
        self.inst.upper_bounds[var]
    }
    pub fn is_integer(&self, var: VarId) -> bool {
        self.inst.integer[var]
    }
    pub fn cost(&self, var: VarId) -> f64 {
        self.inst.costs[var]
    }
    pub fn instance(&self) -> &'a CoveringInstance {
        self.inst
    }
    /// True when the constraint has exactly one relaxation (no floors, no caps).
    pub fn is_plain(&self) -> bool {
        self.terms
            .iter()
            .all(|&(j, _)| !self.inst.integer[j] && self.inst.upper_bounds[j].is_none())
    }
}

impl CoveringInstance {
    /// Builds and validates an instance. `integer_vars` lists indices in `I`.
    pub fn new(
        n_vars: usize,
        n_cons: usize,
        entries: Vec<Entry>,
        demands: Vec<f64>,
        costs: Vec<f64>,
        upper_bounds: Vec<Option<f64>>,
        integer_vars: &[VarId],
    ) -> Result<Self, ValidationErrors> {
        let mut errs = Vec::new();
        let mut check_len = |field, got: usize, expected| {
            if got != expected {
                errs.push(InstanceError::LengthMismatch {
                    field,
                    got,
                    expected,
                });
            }
        };
        check_len("demands", demands.len(), n_cons);
        check_len("costs", costs.len(), n_vars);
        check_len("upper_bounds", upper_bounds.len(), n_vars);
        if !errs.is_empty() {
            return Err(ValidationErrors(errs));
        }

        for (j, &c) in costs.iter().enumerate() {
            if !(c > 0.0 && c.is_finite()) {
                errs.push(InstanceError::NonpositiveCost { var: j, cost: c });
            }
        }
        for (i, &w) in demands.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                errs.push(InstanceError::BadDemand { cons: i, demand: w });
            }
        }
        for (j, u) in upper_bounds.iter().enumerate() {
            if let Some(u) = *u {
                if !(u > 0.0 && u.is_finite()) {
                    errs.push(InstanceError::BadUpperBound { var: j, bound: u });
                }
            }
        }
        let mut integer = vec![false; n_vars];
        for &j in integer_vars {
            match integer.get_mut(j) {
                Some(flag) => *flag = true,
                None => errs.push(InstanceError::IntegerVarOutOfRange { var: j }),
            }
        }

        let mut seen = HashSet::with_capacity(entries.len());
        let mut rows: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); n_cons];
        let mut cols: Vec<Vec<(ConsId, f64)>> = vec![Vec::new(); n_vars];
        for e in &entries {
            if e.cons >= n_cons || e.var >= n_vars {
                errs.push(InstanceError::IndexOutOfRange {
                    cons: e.cons,
                    var: e.var,
                    n_cons,
                    n_vars,
                });
                continue;
            }
            if !(e.coef > 0.0 && e.coef.is_finite()) {
                errs.push(InstanceError::NonpositiveCoefficient {
                    cons: e.cons,
                    var: e.var,
                    coef: e.coef,
                });
                continue;
            }
            if !seen.insert((e.cons, e.var)) {
                errs.push(InstanceError::DuplicateEntry {
                    cons: e.cons,
                    var: e.var,
                });
                continue;
            }
            rows[e.cons].push((e.var, e.coef));
            cols[e.var].push((e.cons, e.coef));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                errs.push(InstanceError::EmptyConstraint { cons: i });
            }
        }
        if !errs.is_empty() {
            return Err(ValidationErrors(errs));
        }
        for r in &mut rows {
            r.sort_by_key(|&(j, _)| j);
        }
        for c in &mut cols {
            c.sort_by_key(|&(i, _)| i);
        }
        let rho = rows.iter().map(Vec::len).max().unwrap_or(0);
        let delta = cols.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            n_vars,
            n_cons,
            entries,
            demands,
            costs,
            upper_bounds,
            integer,
            rows,
            cols,
            rho,
            delta,
        })
    }

    /// Weighted vertex cover: one variable per vertex, `x_u + x_v >= 1` per
    /// edge, every variable integral and unbounded.
    pub fn vertex_cover(costs: Vec<f64>, edges: &[(VarId, VarId)]) -> Result<Self, ValidationErrors> {
        let n = costs.len();
        let entries = edges
            .iter()
            .enumerate()
            .flat_map(|(i, &(u, v))| {
                [
                    Entry { cons: i, var: u, coef: 1.0 },
                    Entry { cons: i, var: v, coef: 1.0 },
                ]
            })
            .collect();
        let all: Vec<VarId> = (0..n).collect();
        Self::new(n, edges.len(), entries, vec![1.0; edges.len()], costs, vec![None; n], &all)
    }

    /// Pure fractional covering (`I` empty, no upper bounds) from dense rows.
    pub fn fractional(
        costs: Vec<f64>,
        rows: &[(Vec<(VarId, f64)>, f64)],
    ) -> Result<Self, ValidationErrors> {
        let n = costs.len();
        let mut entries = Vec::new();
        for (i, (terms, _)) in rows.iter().enumerate() {
            entries.extend(terms.iter().map(|&(j, a)| Entry { cons: i, var: j, coef: a }));
        }
        let demands = rows.iter().map(|(_, w)| *w).collect();
        Self::new(n, rows.len(), entries, demands, costs, vec![None; n], &[])
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }
    pub fn n_cons(&self) -> usize {
        self.n_cons
    }
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }
    pub fn demands(&self) -> &[f64] {
        &self.demands
    }
    pub fn costs(&self) -> &[f64] {
        &self.costs
    }
    pub fn upper_bounds(&self) -> &[Option<f64>] {
        &self.upper_bounds
    }
    pub fn is_integer(&self, var: VarId) -> bool {
        self.integer[var]
    }
    pub fn integer_vars(&self) -> Vec<VarId> {
        (0..self.n_vars).filter(|&j| self.integer[j]).collect()
    }
    /// Max variables in any constraint.
    pub fn rho(&self) -> usize {
        self.rho
    }
    /// Max constraints any variable occurs in.
    pub fn delta(&self) -> usize {
        self.delta
    }
    pub fn row(&self, cons: ConsId) -> &[(VarId, f64)] {
        &self.rows[cons]
    }
    /// `(cons, coefficient)` for every constraint containing `var`.
    pub fn col(&self, var: VarId) -> &[(ConsId, f64)] {
        &self.cols[var]
    }
    pub fn constraint(&self, cons: ConsId) -> ConstraintView<'_> {
        ConstraintView {
            index: cons,
            terms: &self.rows[cons],
            demand: self.demands[cons],
            inst: self,
        }
    }
    pub fn constraints(&self) -> impl Iterator<Item = ConstraintView<'_>> {
        (0..self.n_cons).map(move |i| self.constraint(i))
    }

    /// No integer variables and no upper bounds.
    pub fn is_fractional(&self) -> bool {
        self.integer.iter().all(|&b| !b) && self.upper_bounds.iter().all(Option::is_none)
    }

    /// All coefficients 0/1 and all costs integral.
    pub fn is_zero_one_integral(&self) -> bool {
        self.entries.iter().all(|e| e.coef == 1.0)
            && self.costs.iter().all(|&c| c.fract() == 0.0)
    }

    /// Vertex-cover shape: every constraint is `x_u + x_v >= 1` over integral,
    /// unbounded variables.
    pub fn is_vertex_cover(&self) -> bool {
        self.rows.iter().all(|r| r.len() == 2 && r.iter().all(|&(_, a)| a == 1.0))
            && self.demands.iter().all(|&w| w == 1.0)
            && self.integer.iter().all(|&b| b)
            && self.upper_bounds.iter().all(Option::is_none)
    }

    /// Left-hand side of constraint `cons` in its strict form
    /// `sum_{I} A⌊min(x,u)⌋ + sum_{not I} A min(x,u)`.
    pub fn strict_lhs(&self, cons: ConsId, x: &[f64]) -> f64 {
        self.rows[cons]
            .iter()
            .map(|&(j, a)| {
                let mut v = x[j];
                if let Some(u) = self.upper_bounds[j] {
                    v = v.min(u);
                }
                if self.integer[j] {
                    v = tolerance::floor(v);
                }
                a * v
            })
            .sum()
    }

    pub fn is_satisfied(&self, cons: ConsId, x: &[f64]) -> bool {
        tolerance::covers(self.strict_lhs(cons, x), self.demands[cons])
    }

    /// First constraint the assignment violates, if any.
    pub fn first_violated(&self, x: &[f64]) -> Option<ConsId> {
        (0..self.n_cons).find(|&i| !self.is_satisfied(i, x))
    }

    /// Constraints unsatisfiable even with every variable at its cap.
    pub fn infeasible_constraints(&self) -> Vec<ConsId> {
        (0..self.n_cons)
            .filter(|&i| {
                if self.rows[i].iter().any(|&(j, _)| self.upper_bounds[j].is_none()) {
                    return false;
                }
                let x: Vec<f64> = self
                    .upper_bounds
                    .iter()
                    .map(|u| u.unwrap_or(f64::INFINITY))
                    .collect();
                !self.is_satisfied(i, &x)
            })
            .collect()
    }

    /// `x_j = ⌊min(x_j, u_j)⌋` for `j ∈ I`, `min(x_j, u_j)` otherwise.
    pub fn round(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let v = match self.upper_bounds[j] {
                    Some(u) => v.min(u),
                    None => v,
                };
                if self.integer[j] {
                    tolerance::floor(v)
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn cost_of(&self, x: &[f64]) -> f64 {
        self.costs.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let doc = InstanceDoc {
            n_vars: self.n_vars,
            n_cons: self.n_cons,
            entries: self.entries.iter().map(|e| (e.cons, e.var, e.coef)).collect(),
            demands: self.demands.clone(),
            costs: self.costs.clone(),
            upper_bounds: self.upper_bounds.clone(),
            integer_vars: self.integer_vars(),
        };
        serde_json::to_vec(&doc).expect("instance serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, FormatError> {
        let doc: InstanceDoc = serde_json::from_slice(bytes)?;
        let entries = doc
            .entries
            .into_iter()
            .map(|(cons, var, coef)| Entry { cons, var, coef })
            .collect();
        Ok(Self::new(
            doc.n_vars,
            doc.n_cons,
            entries,
            doc.demands,
            doc.costs,
            doc.upper_bounds,
            &doc.integer_vars,
        )?)
    }
}

/// Parses an instance document.
pub fn read_instance(bytes: &[u8]) -> Result<CoveringInstance, FormatError> {
    CoveringInstance::from_json(bytes)
}

/// Serializes an instance document.
pub fn write_instance(inst: &CoveringInstance) -> Vec<u8> {
    inst.to_json()
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    n_vars: usize,
    n_cons: usize,
    entries: Vec<(usize, usize, f64)>,
    demands: Vec<f64>,
    costs: Vec<f64>,
    upper_bounds: Vec<Option<f64>>,
    integer_vars: Vec<usize>,
}

/// The packing side `maximize w·y s.t. Aᵀy <= c, y >= 0` of a covering
/// instance. Packing variables are covering constraints; packing
/// constraints are covering variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PackingInstance {
    covering: CoveringInstance,
}

impl PackingInstance {
    pub fn from_covering(covering: CoveringInstance) -> Self {
        Self { covering }
    }

    /// Hypergraph b-matching: `capacities[v]` per vertex, `(vertices, weight)`
    /// per hyperedge.
    pub fn b_matching(
        capacities: &[u32],
        hyperedges: &[(Vec<VarId>, f64)],
    ) -> Result<Self, ValidationErrors> {
        let costs = capacities.iter().map(|&c| f64::from(c)).collect();
        let rows: Vec<_> = hyperedges
            .iter()
            .map(|(vs, w)| (vs.iter().map(|&v| (v, 1.0)).collect(), *w))
            .collect();
        CoveringInstance::fractional(costs, &rows).map(Self::from_covering)
    }

    pub fn covering(&self) -> &CoveringInstance {
        &self.covering
    }
    pub fn into_covering(self) -> CoveringInstance {
        self.covering
    }
    /// Number of packing variables (hyperedges).
    pub fn n_items(&self) -> usize {
        self.covering.n_cons
    }
    pub fn weights(&self) -> &[f64] {
        &self.covering.demands
    }
    pub fn capacities(&self) -> &[f64] {
        &self.covering.costs
    }
    /// 0/1 coefficients and integral capacities.
    pub fn is_b_matching(&self) -> bool {
        self.covering.is_zero_one_integral()
    }
    pub fn value(&self, y: &[f64]) -> f64 {
        self.covering.demands.iter().zip(y).map(|(w, v)| w * v).sum()
    }
}

fn draw(rng: &mut ChaCha8Rng, range: &RangeInclusive<f64>) -> f64 {
    let (lo, hi) = (*range.start(), *range.end());
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Erdős–Rényi weighted vertex cover instance.
pub fn gen_wvc(n: usize, edge_prob: f64, cost_range: RangeInclusive<f64>, seed: u64) -> CoveringInstance {
    assert!(n >= 1, "gen_wvc needs at least one vertex");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs: Vec<f64> = (0..n).map(|_| draw(&mut rng, &cost_range)).collect();
    let p = edge_prob.clamp(0.0, 1.0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    CoveringInstance::vertex_cover(costs, &edges).expect("generated vertex cover is valid")
}

/// Knobs for the random CMIP generator. Ranges are harness choices.
#[derive(Debug, Clone, PartialEq)]
pub struct CmipOptions {
    /// Chance that a constraint depends on a single variable.
    pub single_var_prob: f64,
    pub coef: RangeInclusive<f64>,
    pub demand: RangeInclusive<f64>,
    pub cost: RangeInclusive<f64>,
    pub integer_prob: f64,
    pub bound_prob: f64,
    /// Upper bounds are drawn as integers from this range.
    pub bound: RangeInclusive<u32>,
}

impl Default for CmipOptions {
    fn default() -> Self {
        Self {
            single_var_prob: 0.1,
            coef: 0.5..=4.0,
            demand: 1.0..=10.0,
            cost: 1.0..=10.0,
            integer_prob: 0.5,
            bound_prob: 0.3,
            bound: 1..=5,
        }
    }
}

impl CmipOptions {
    /// Pure fractional covering: no integers, no bounds, no unary rows.
    pub fn fractional() -> Self {
        Self {
            single_var_prob: 0.0,
            integer_prob: 0.0,
            bound_prob: 0.0,
            ..Self::default()
        }
    }
}

/// Random CMIP with at most `rho` variables per constraint. Constraints
/// infeasible at the caps get one of their variables unbounded.
pub fn gen_cmip(
    n: usize,
    m: usize,
    rho: usize,
    seed: u64,
    opts: &CmipOptions,
) -> Result<CoveringInstance, GeneratorError> {
    if n == 0 || m == 0 || rho == 0 {
        return Err(GeneratorError::InfeasibleParameters(format!(
            "n={n}, m={m}, rho={rho} must all be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs: Vec<f64> = (0..n).map(|_| draw(&mut rng, &opts.cost)).collect();
    let mut integer = Vec::new();
    let mut bounds = vec![None; n];
    for (j, b) in bounds.iter_mut().enumerate() {
        if rng.random_bool(opts.integer_prob.clamp(0.0, 1.0)) {
            integer.push(j);
        }
        if rng.random_bool(opts.bound_prob.clamp(0.0, 1.0)) {
            let (lo, hi) = (*opts.bound.start(), *opts.bound.end());
            *b = Some(f64::from(rng.random_range(lo.max(1)..=hi.max(lo.max(1)))));
        }
    }
    let max_arity = rho.min(n);
    let mut entries = Vec::new();
    let mut demands = Vec::with_capacity(m);
    let mut rows: Vec<Vec<VarId>> = Vec::with_capacity(m);
    for i in 0..m {
        let arity = if max_arity == 1 || rng.random_bool(opts.single_var_prob.clamp(0.0, 1.0)) {
            1
        } else {
            rng.random_range(2..=max_arity)
        };
        let mut vars: Vec<VarId> = sample(&mut rng, n, arity).into_vec();
        vars.sort_unstable();
        for &j in &vars {
            entries.push(Entry {
                cons: i,
                var: j,
                coef: draw(&mut rng, &opts.coef),
            });
        }
        demands.push(draw(&mut rng, &opts.demand));
        rows.push(vars);
    }
    let mut inst = CoveringInstance::new(n, m, entries.clone(), demands.clone(), costs.clone(), bounds.clone(), &integer)
        .map_err(|e| GeneratorError::InfeasibleParameters(e.to_string()))?;
    let bad = inst.infeasible_constraints();
    if !bad.is_empty() {
        for i in bad {
            bounds[rows[i][0]] = None;
        }
        inst = CoveringInstance::new(n, m, entries, demands, costs, bounds, &integer)
            .map_err(|e| GeneratorError::InfeasibleParameters(e.to_string()))?;
    }
    Ok(inst)
}

/// CMIP with at most two variables per constraint.
pub fn gen_cmip2(n: usize, m: usize, seed: u64, opts: &CmipOptions) -> Result<CoveringInstance, GeneratorError> {
    gen_cmip(n, m, 2, seed, opts)
}

/// Fractional covering with at most `rho` variables per constraint.
pub fn gen_fractional(n: usize, m: usize, rho: usize, seed: u64) -> Result<CoveringInstance, GeneratorError> {
    gen_cmip(n, m, rho, seed, &CmipOptions::fractional())
}

/// Random hypergraph b-matching. Hyperedge sizes are uniform in `2..=rho`,
/// weights uniform in `[1, 10]`, capacities uniform integers in `cap_range`.
pub fn gen_hypergraph_bmatching(
    n_vertices: usize,
    n_edges: usize,
    rho: usize,
    cap_range: RangeInclusive<u32>,
    seed: u64,
) -> Result<PackingInstance, GeneratorError> {
    if rho < 2 {
        return Err(GeneratorError::InfeasibleParameters(format!("rho={rho} must be at least 2")));
    }
    if rho > n_vertices {
        return Err(GeneratorError::InfeasibleParameters(format!(
            "rho={rho} exceeds n_vertices={n_vertices}"
        )));
    }
    let (lo, hi) = (*cap_range.start(), *cap_range.end());
    if lo == 0 || lo > hi {
        return Err(GeneratorError::InfeasibleParameters(format!(
            "capacity range {lo}..={hi} must be nonempty and positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let caps: Vec<u32> = (0..n_vertices).map(|_| rng.random_range(lo..=hi)).collect();
    let edges: Vec<(Vec<VarId>, f64)> = (0..n_edges)
        .map(|_| {
            let size = rng.random_range(2..=rho);
            let mut vs = sample(&mut rng, n_vertices, size).into_vec();
            vs.sort_unstable();
            (vs, rng.random_range(1.0..=10.0))
        })
        .collect();
    PackingInstance::b_matching(&caps, &edges).map_err(|e| GeneratorError::InfeasibleParameters(e.to_string()))
}
