//! Leaf/root star rounds on the variable network (one node per variable,
//! one edge per two-variable constraint), with optional reverse-order
//! packing layered on top.
//!
//! One algorithm round takes three communication rounds:
//!
//! 0. apply step results, pick a role, announce `x` and the role;
//! 1. finish if every incident constraint is met, otherwise leaves send a
//!    request for one active constraint to its root;
//! 2. roots flip a coin and run heads or tails on their star, then send the
//!    new values back to the stepped leaves.
//!
//! When packing is on, every node also broadcasts the step time and dual
//! status of its incident constraints each communication round, and the
//! node that stepped a constraint sets its dual variable once every later
//! neighbor is settled.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;
use std::sync::Arc;

use crate::cost::LinearCost;
use crate::instances::{ConsId, ConstraintView, CoveringInstance, VarId};
use crate::relax::{self, Mode};
use crate::sequential::{StepLog, StepRule};
use crate::sim::{Counters, Ctx, Fnv, Network, NodeId, Protocol, Violation, WireSize};
use crate::tolerance;

pub type Stamp = (u64, u64);

/// Which star algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarVariant {
    /// Vertex cover with the closed-form step that brings one endpoint in.
    VertexCover,
    /// Two-variable covering with the relaxation stepsize and thresholds.
    Cmip2,
}

/// Result of the readiness test for setting a dual variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readiness {
    Done,
    NotDone,
}

/// Whether dual variable `i` may be set now: its constraint and every
/// constraint sharing a variable with it are satisfied, and every such
/// constraint stepped after `i` already has its dual set. `adjacent` yields
/// `(step time, done)` for those neighbors. Never-stepped constraints are
/// ready as soon as the satisfaction test passes.
pub fn wait_condition(
    own: Option<Stamp>,
    all_satisfied: bool,
    adjacent: impl IntoIterator<Item = (Option<Stamp>, bool)>,
) -> Readiness {
    if !all_satisfied {
        return Readiness::NotDone;
    }
    let Some(own) = own else {
        return Readiness::Done;
    };
    for (stamp, done) in adjacent {
        if matches!(stamp, Some(s) if s > own) && !done {
            return Readiness::NotDone;
        }
    }
    Readiness::Done
}

/// Smallest `x_w' >= x_w` at which raising the root variable alone either
/// hits `view` or leaves the leaf variable unable to hit it. Infinite when
/// neither ever happens.
pub fn threshold(x: &mut [f64], view: &ConstraintView<'_>, root: VarId, leaf: VarId) -> f64 {
    let kw = view.terms.iter().position(|&(j, _)| j == root).expect("root in constraint");
    let kv = view.terms.iter().position(|&(j, _)| j == leaf).expect("leaf in constraint");
    let (aw, av) = (view.terms[kw].1, view.terms[kv].1);
    let (uw, uv) = (view.upper(root), view.upper(leaf));
    let (cw, cv) = (view.cost(root), view.cost(leaf));
    let (xw0, xv) = (x[root], x[leaf]);

    let mut unmet: Vec<(Mode, Mode)> = Vec::new();
    let _ = relax::for_each_relaxation(view, |modes| {
        let lhs = aw * modes[kw].apply(xw0, uw) + av * modes[kv].apply(xv, uv);
        if !tolerance::covers(lhs, view.demand) {
            unmet.push((modes[kw], modes[kv]));
        }
    });
    let reach = |need: f64, a: f64, upper: Option<f64>, mode: Mode| -> Option<f64> {
        let mut t = need / a;
        if mode.floor {
            t = tolerance::ceil(t);
        }
        if mode.cap {
            if let Some(u) = upper {
                if !tolerance::covers(u, t) {
                    return None;
                }
            }
        }
        Some(t)
    };
    let hit = unmet
        .iter()
        .filter_map(|&(mw, mv)| reach(view.demand - av * mv.apply(xv, uv), aw, uw, mw))
        .fold(f64::INFINITY, f64::min);
    if !hit.is_finite() || view.is_plain() {
        return hit;
    }

    // Leaf's cheapest hit when the root sits at `xw`, for x_w in [xw0, hit).
    let leaf_cost = |xw: f64| -> f64 {
        unmet
            .iter()
            .filter_map(|&(mw, mv)| {
                reach(view.demand - aw * mw.apply(xw, uw), av, uv, mv).map(|t| cv * (t - xv).max(0.0))
            })
            .fold(f64::INFINITY, f64::min)
    };
    let root_cost = |xw: f64| cw * (hit - xw);
    let leaf_lost = |xw: f64| leaf_cost(xw) > root_cost(xw);

    let mut pts: Vec<f64> = vec![xw0, hit];
    if view.is_integer(root) {
        let mut k = tolerance::floor(xw0) + 1.0;
        while k < hit {
            pts.push(k);
            k += 1.0;
        }
    }
    if let Some(u) = uw {
        pts.push(u);
    }
    // Where the leaf's requirement crosses an integer or its cap while the
    // root's term grows linearly.
    let need_hi = view.demand - aw * xw0;
    let need_lo = view.demand - aw * hit;
    let (k_lo, k_hi) = ((need_lo / av).floor() - 1.0, (need_hi / av).ceil() + 1.0);
    if view.is_integer(leaf) {
        let mut k = k_lo.max(0.0);
        while k <= k_hi {
            pts.push((view.demand - av * k) / aw);
            k += 1.0;
        }
    }
    if let Some(u) = uv {
        pts.push((view.demand - av * u) / aw);
    }
    pts.retain(|&p| p >= xw0 && p <= hit);
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a > xw0 && leaf_lost(a) {
            return a;
        }
        if b - a <= 0.0 {
            continue;
        }
        let (q1, q2) = (a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0);
        // Each relaxation's leaf cost is linear inside (a, b); intersect the
        // half-lines where it exceeds the root's cost.
        let (mut lo, mut hi) = (a, b);
        let mut empty = false;
        for &(mw, mv) in &unmet {
            let g = |xw: f64| {
                reach(view.demand - aw * mw.apply(xw, uw), av, uv, mv).map(|t| cv * (t - xv).max(0.0) - root_cost(xw))
            };
            let (Some(g1), Some(g2)) = (g(q1), g(q2)) else {
                continue;
            };
            let slope = (g2 - g1) / (q2 - q1);
            if slope.abs() <= 1e-12 * (1.0 + g1.abs()) {
                if g1 <= 0.0 {
                    empty = true;
                    break;
                }
                continue;
            }
            let root = q1 - g1 / slope;
            if slope > 0.0 {
                lo = lo.max(root);
            } else {
                hi = hi.min(root);
            }
        }
        if !empty && lo < hi {
            return lo;
        }
    }
    hit
}

/// One step performed at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalStep {
    pub cons: ConsId,
    pub beta: f64,
    pub stamp: Stamp,
}

/// A constraint's step time and settled dual value as one endpoint sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackRecord {
    pub cons: ConsId,
    pub coef: f64,
    pub stamp: Option<Stamp>,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackInfo {
    pub all_satisfied: bool,
    pub records: Vec<PackRecord>,
}

#[derive(Debug, Clone)]
pub enum StarMsg {
    Announce { x: f64, root: bool },
    Request { cons: ConsId, x: f64 },
    Result { cons: ConsId, x: f64, stamp: Stamp },
    Pack(Arc<PackInfo>),
}

impl WireSize for StarMsg {
    fn wire_size(&self) -> usize {
        match self {
            StarMsg::Announce { .. } => 9,
            StarMsg::Request { .. } => 16,
            StarMsg::Result { .. } => 32,
            StarMsg::Pack(info) => 1 + 41 * info.records.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Idle,
    Leaf,
    Root,
}

/// Per-variable node state.
#[derive(Debug, Clone)]
pub struct StarNode {
    pub x: f64,
    known: BTreeMap<VarId, f64>,
    role: Role,
    roots: BTreeSet<VarId>,
    /// Communication round in which the node saw all its constraints met.
    pub finished_round: Option<u64>,
    /// Steps this node performed, as root or during initialization.
    pub steps: Vec<LocalStep>,
    /// Step times of incident constraints.
    pub stamps: BTreeMap<ConsId, Stamp>,
    /// Owned step groups in creation order, each in increasing step time.
    stars: Vec<Vec<ConsId>>,
    /// Settled duals of incident constraints.
    pub duals: BTreeMap<ConsId, f64>,
    /// Communication round in which this node set each owned dual.
    pub set_round: BTreeMap<ConsId, u64>,
    infos: BTreeMap<VarId, Arc<PackInfo>>,
    quiet: bool,
}

impl StarNode {
    pub fn finished(&self) -> bool {
        self.finished_round.is_some()
    }
}

/// The star protocol over one instance.
pub struct StarProtocol<'a> {
    inst: &'a CoveringInstance,
    variant: StarVariant,
    pack: bool,
    cost: LinearCost,
    scratch: RefCell<Vec<f64>>,
}

/// Communication rounds per algorithm round.
pub const SUBROUNDS: u64 = 3;

/// Algorithm round containing communication round `round`.
pub fn algorithm_round(round: u64) -> u64 {
    (round - 1) / SUBROUNDS + 1
}

impl<'a> StarProtocol<'a> {
    pub fn new(inst: &'a CoveringInstance, variant: StarVariant, pack: bool) -> Self {
        Self {
            inst,
            variant,
            pack,
            cost: LinearCost::new(inst.costs().to_vec()),
            scratch: RefCell::new(vec![0.0; inst.n_vars()]),
        }
    }

    /// Variable network: an edge per pair of variables sharing a constraint.
    pub fn network(inst: &CoveringInstance) -> Network {
        let mut edges = Vec::new();
        for i in 0..inst.n_cons() {
            if let [(a, _), (b, _)] = inst.row(i) {
                edges.push((*a, *b));
            }
        }
        Network::new(inst.n_vars(), &edges).expect("instance network")
    }

    fn rule(&self) -> StepRule {
        match self.variant {
            StarVariant::VertexCover => StepRule::VertexCover,
            StarVariant::Cmip2 => StepRule::Relaxation,
        }
    }

    fn other(&self, cons: ConsId, me: VarId) -> Option<VarId> {
        self.inst.row(cons).iter().map(|&(j, _)| j).find(|&j| j != me)
    }

    fn value_of(&self, st: &StarNode, me: VarId, j: VarId) -> f64 {
        if j == me {
            st.x
        } else {
            st.known.get(&j).copied().unwrap_or(0.0)
        }
    }

    fn load(&self, st: &StarNode, me: VarId, cons: ConsId) {
        let mut s = self.scratch.borrow_mut();
        for &(j, _) in self.inst.row(cons) {
            s[j] = self.value_of(st, me, j);
        }
    }

    fn met(&self, st: &StarNode, me: VarId, cons: ConsId) -> bool {
        self.load(st, me, cons);
        crate::sequential::satisfied(self.rule(), self.inst, cons, &self.scratch.borrow())
    }

    fn all_met(&self, st: &StarNode, me: VarId) -> bool {
        self.inst.col(me).iter().all(|&(i, _)| self.met(st, me, i))
    }

    fn beta(&self, x: &[f64], cons: ConsId) -> Result<relax::Beta, Violation> {
        crate::sequential::step_beta(self.rule(), x, &self.inst.constraint(cons), &self.cost)
            .map_err(|e| Violation(e.to_string()))
    }

    fn apply_step(&self, x: &mut [f64], cons: ConsId) -> Result<f64, Violation> {
        let b = self.beta(x, cons)?;
        relax::step(x, &self.inst.constraint(cons), b.beta, &self.cost);
        if self.variant == StarVariant::VertexCover {
            for &(j, _) in self.inst.row(cons) {
                if x[j] > 1.0 + tolerance::EPS {
                    return Err(Violation(format!("vertex-cover step raised x_{j} to {}", x[j])));
                }
            }
        }
        Ok(b.beta)
    }

    /// Initialization: meet every single-variable constraint of `me`,
    /// always stepping the one with the largest stepsize.
    fn init_unary(&self, me: VarId, st: &mut StarNode) -> Result<(), Violation> {
        let unary: Vec<ConsId> = self
            .inst
            .col(me)
            .iter()
            .map(|&(i, _)| i)
            .filter(|&i| self.inst.row(i).len() == 1)
            .collect();
        let mut ts = 0;
        loop {
            let mut best: Option<(f64, ConsId)> = None;
            let mut s = self.scratch.borrow_mut();
            s[me] = st.x;
            for &i in &unary {
                if self.inst.is_satisfied(i, &s) {
                    continue;
                }
                let b = self.beta(&s, i)?.beta;
                if best.map_or(true, |(bb, _)| b > bb) {
                    best = Some((b, i));
                }
            }
            let Some((_, i)) = best else {
                return Ok(());
            };
            let beta = self.apply_step(&mut s, i)?;
            st.x = s[me];
            ts += 1;
            let stamp = (1, ts);
            st.steps.push(LocalStep { cons: i, beta, stamp });
            st.stamps.insert(i, stamp);
            match st.stars.last_mut() {
                Some(g) if st.steps.len() > 1 => g.push(i),
                _ => st.stars.push(vec![i]),
            }
        }
    }

    fn is_active(&self, st: &StarNode, me: VarId, cons: ConsId, root: VarId) -> Result<bool, Violation> {
        self.load(st, me, cons);
        let s = self.scratch.borrow();
        Ok(match self.variant {
            StarVariant::VertexCover => {
                let (cv, cw) = (self.inst.costs()[me], self.inst.costs()[root]);
                (1.0 - s[me]) * cv <= (1.0 - s[root]) * cw
            }
            StarVariant::Cmip2 => {
                let view = self.inst.constraint(cons);
                let b = self.beta(&s, cons)?;
                relax::can_hit(&s, &view, me, b.beta, &self.cost).map_err(|e| Violation(e.to_string()))?
            }
        })
    }

    /// Steps `heads` would take, in order, on `x` (mutated).
    fn heads(&self, x: &mut [f64], root: VarId, star: &[(ConsId, VarId)]) -> Result<Vec<(ConsId, f64)>, Violation> {
        let mut steps = Vec::new();
        match self.variant {
            StarVariant::VertexCover => {
                let mut order = star.to_vec();
                order.sort_by_key(|&(i, v)| (v, i));
                for (i, _) in order {
                    if tolerance::covers(x[root], 1.0) {
                        break;
                    }
                    steps.push((i, self.apply_step(x, i)?));
                }
            }
            StarVariant::Cmip2 => {
                let views: Vec<_> = star.iter().map(|&(i, _)| self.inst.constraint(i)).collect();
                let phi = |x: &[f64], k: usize| relax::phi(x, &views[k]).map_err(|e| Violation(e.to_string()));
                let phi0: Vec<usize> = (0..star.len()).map(|k| phi(x, k)).collect::<Result<_, _>>()?;
                let mut order: Vec<(f64, usize)> = star
                    .iter()
                    .enumerate()
                    .map(|(k, &(_, v))| (threshold(x, &views[k], root, v), k))
                    .collect();
                order.sort_by(|a, b| b.0.total_cmp(&a.0).then(star[a.1].0.cmp(&star[b.1].0)));
                let mut stepped = vec![false; star.len()];
                let mut stopped = false;
                for &(t, k) in &order {
                    if x[root] < t {
                        steps.push((star[k].0, self.apply_step(x, star[k].0)?));
                        stepped[k] = true;
                    } else {
                        stopped = true;
                        break;
                    }
                }
                if stopped {
                    let mut runt: Option<(f64, usize)> = None;
                    for k in 0..star.len() {
                        if stepped[k] || phi(x, k)? < phi0[k] {
                            continue;
                        }
                        let b = self.beta(x, star[k].0)?.beta;
                        let better = match runt {
                            None => true,
                            Some((rb, rk)) => b > rb || (b == rb && star[k].0 < star[rk].0),
                        };
                        if better {
                            runt = Some((b, k));
                        }
                    }
                    if let Some((_, k)) = runt {
                        steps.push((star[k].0, self.apply_step(x, star[k].0)?));
                    }
                }
            }
        }
        Ok(steps)
    }

    fn run_star(
        &self,
        ctx: &mut Ctx<'_, StarMsg>,
        st: &mut StarNode,
        star: &[(ConsId, VarId, f64)],
    ) -> Result<(), Violation> {
        let me = ctx.node;
        let r = algorithm_round(ctx.round);
        let pairs: Vec<(ConsId, VarId)> = star.iter().map(|&(i, v, _)| (i, v)).collect();
        let mut s = self.scratch.borrow_mut();
        let reset = |s: &mut Vec<f64>| {
            s[me] = st.x;
            for &(_, v, xv) in star {
                s[v] = xv;
            }
        };
        reset(&mut s);
        let steps = if ctx.rng.coin() {
            self.heads(&mut s, me, &pairs)?
        } else {
            let sim = self.heads(&mut s, me, &pairs)?;
            reset(&mut s);
            match sim.last() {
                Some(&(i, _)) => vec![(i, self.apply_step(&mut s, i)?)],
                None => Vec::new(),
            }
        };
        if steps.is_empty() {
            return Ok(());
        }
        st.x = s[me];
        let mut group = Vec::new();
        for (k, &(i, beta)) in steps.iter().enumerate() {
            let stamp = (r + 1, k as u64 + 1);
            st.steps.push(LocalStep { cons: i, beta, stamp });
            st.stamps.insert(i, stamp);
            group.push(i);
            let leaf = self.other(i, me).expect("star constraint has a leaf");
            ctx.send(leaf, StarMsg::Result { cons: i, x: s[leaf], stamp });
        }
        st.stars.push(group);
        Ok(())
    }

    fn records(&self, st: &StarNode, me: VarId) -> Vec<PackRecord> {
        self.inst
            .col(me)
            .iter()
            .map(|&(i, a)| PackRecord {
                cons: i,
                coef: a,
                stamp: st.stamps.get(&i).copied(),
                y: st.duals.get(&i).copied(),
            })
            .collect()
    }

    /// Records of variable `j` as seen from `me`.
    fn records_of(&self, st: &StarNode, me: VarId, j: VarId) -> Option<(bool, Vec<PackRecord>)> {
        if j == me {
            Some((self.all_met(st, me), self.records(st, me)))
        } else {
            st.infos.get(&j).map(|info| (info.all_satisfied, info.records.clone()))
        }
    }

    fn try_pack(&self, st: &StarNode, me: VarId, cons: ConsId) -> Option<f64> {
        let own = st.stamps.get(&cons).copied();
        let mut all_sat = true;
        let mut per_var = Vec::new();
        for &(j, a) in self.inst.row(cons) {
            let (sat, recs) = self.records_of(st, me, j)?;
            all_sat &= sat;
            per_var.push((j, a, recs));
        }
        let adjacent = per_var
            .iter()
            .flat_map(|(_, _, recs)| recs.iter())
            .filter(|r| r.cons != cons)
            .map(|r| (r.stamp, r.y.is_some()));
        if wait_condition(own, all_sat, adjacent) == Readiness::NotDone {
            return None;
        }
        let Some(own) = own else {
            return Some(0.0);
        };
        let mut best = f64::INFINITY;
        for (j, a, mut recs) in per_var {
            recs.retain(|r| matches!(r.stamp, Some(s) if s > own));
            recs.sort_by(|p, q| q.stamp.cmp(&p.stamp));
            let slack = recs.iter().fold(self.inst.costs()[j], |s, r| s - r.coef * r.y.expect("later neighbor settled"));
            best = best.min(slack / a);
        }
        Some(best.max(0.0))
    }

    fn pack_round(&self, ctx: &mut Ctx<'_, StarMsg>, st: &mut StarNode) {
        let me = ctx.node;
        for (from, msg) in ctx.inbox {
            if let StarMsg::Pack(info) = msg {
                for r in &info.records {
                    if let Some(y) = r.y {
                        if self.inst.col(me).iter().any(|&(i, _)| i == r.cons) {
                            st.duals.insert(r.cons, y);
                        }
                    }
                }
                st.infos.insert(*from, Arc::clone(info));
            }
        }
        for g in (0..st.stars.len()).rev() {
            let group = st.stars[g].clone();
            for &i in group.iter().rev() {
                if st.duals.contains_key(&i) {
                    continue;
                }
                match self.try_pack(st, me, i) {
                    Some(y) => {
                        st.duals.insert(i, y);
                        st.set_round.insert(i, ctx.round);
                    }
                    None => break,
                }
            }
        }
        for &(i, _) in self.inst.col(me) {
            let owner = self.inst.row(i)[0].0;
            if owner != me || st.stamps.contains_key(&i) || st.duals.contains_key(&i) {
                continue;
            }
            if let Some(y) = self.try_pack(st, me, i) {
                st.duals.insert(i, y);
                st.set_round.insert(i, ctx.round);
            }
        }
        if st.quiet {
            return;
        }
        let all_done = self.inst.col(me).iter().all(|&(i, _)| st.duals.contains_key(&i));
        let info = Arc::new(PackInfo { all_satisfied: self.all_met(st, me), records: self.records(st, me) });
        ctx.broadcast(StarMsg::Pack(info));
        if all_done {
            st.quiet = true;
        }
    }
}

impl Protocol for StarProtocol<'_> {
    type State = StarNode;
    type Msg = StarMsg;

    fn init(&self, _net: &Network, _node: NodeId) -> StarNode {
        StarNode {
            x: 0.0,
            known: BTreeMap::new(),
            role: Role::Idle,
            roots: BTreeSet::new(),
            finished_round: None,
            steps: Vec::new(),
            stamps: BTreeMap::new(),
            stars: Vec::new(),
            duals: BTreeMap::new(),
            set_round: BTreeMap::new(),
            infos: BTreeMap::new(),
            quiet: false,
        }
    }

    fn step(&self, ctx: &mut Ctx<'_, StarMsg>, st: &mut StarNode) -> Result<(), Violation> {
        let me = ctx.node;
        match (ctx.round - 1) % SUBROUNDS {
            0 => {
                if ctx.round == 1 && self.variant == StarVariant::Cmip2 {
                    self.init_unary(me, st)?;
                }
                for (_, msg) in ctx.inbox {
                    if let StarMsg::Result { cons, x, stamp } = *msg {
                        st.x = x;
                        st.stamps.insert(cons, stamp);
                    }
                }
                st.role = Role::Idle;
                if !st.finished() {
                    st.role = if ctx.rng.coin() { Role::Leaf } else { Role::Root };
                    ctx.broadcast(StarMsg::Announce { x: st.x, root: st.role == Role::Root });
                }
            }
            1 => {
                st.roots.clear();
                for (from, msg) in ctx.inbox {
                    if let StarMsg::Announce { x, root } = *msg {
                        st.known.insert(*from, x);
                        if root {
                            st.roots.insert(*from);
                        }
                    }
                }
                if !st.finished() && self.all_met(st, me) {
                    st.finished_round = Some(ctx.round);
                    st.role = Role::Idle;
                }
                if st.role == Role::Leaf {
                    let mut active = Vec::new();
                    for &(i, _) in self.inst.col(me) {
                        let Some(w) = self.other(i, me) else {
                            continue;
                        };
                        if st.roots.contains(&w) && !self.met(st, me, i) && self.is_active(st, me, i, w)? {
                            active.push((i, w));
                        }
                    }
                    if !active.is_empty() {
                        let (i, w) = active[ctx.rng.index(active.len())];
                        ctx.send(w, StarMsg::Request { cons: i, x: st.x });
                    }
                }
            }
            _ => {
                if st.role == Role::Root {
                    let star: Vec<(ConsId, VarId, f64)> = ctx
                        .inbox
                        .iter()
                        .filter_map(|(from, msg)| match *msg {
                            StarMsg::Request { cons, x } => Some((cons, *from, x)),
                            _ => None,
                        })
                        .collect();
                    if !star.is_empty() {
                        self.run_star(ctx, st, &star)?;
                    }
                }
            }
        }
        if self.pack {
            self.pack_round(ctx, st);
        }
        Ok(())
    }

    fn finished(&self, states: &[StarNode]) -> bool {
        states.iter().all(|s| s.finished() && (!self.pack || s.quiet))
    }

    fn counters(&self, states: &[StarNode]) -> Counters {
        let x: Vec<f64> = states.iter().map(|s| s.x).collect();
        let rule = self.rule();
        let mut c = Counters::default();
        for i in 0..self.inst.n_cons() {
            if crate::sequential::satisfied(rule, self.inst, i, &x) {
                c.satisfied += 1;
            } else if let Ok(p) = relax::phi(&x, &self.inst.constraint(i)) {
                c.phi_total += p as f64;
            }
        }
        if self.pack {
            c.packed = (0..self.inst.n_cons())
                .filter(|&i| {
                    let owner = self.owner_hint(states, i);
                    states[owner].duals.contains_key(&i)
                })
                .count();
        }
        c
    }

    fn digest(&self, st: &StarNode, h: &mut Fnv) {
        h.f64(st.x);
        h.write_u64(st.finished_round.unwrap_or(0));
        h.write_usize(st.steps.len());
        for (i, y) in &st.duals {
            h.write_usize(*i);
            h.f64(*y);
        }
    }
}

impl StarProtocol<'_> {
    fn owner_hint(&self, states: &[StarNode], cons: ConsId) -> VarId {
        let row = self.inst.row(cons);
        row.iter()
            .map(|&(j, _)| j)
            .find(|&j| states[j].steps.iter().any(|s| s.cons == cons))
            .unwrap_or(row[0].0)
    }

    /// Steps of all nodes in a sequentially valid order: by round, then by
    /// owning node, then by position within the star.
    pub fn collect_log(&self, states: &[StarNode], net: &Network) -> StepLog {
        let mut all: Vec<(u64, u64, u64, LocalStep)> = Vec::new();
        for (v, st) in states.iter().enumerate() {
            for s in &st.steps {
                all.push((s.stamp.0, net.label(v), s.stamp.1, *s));
            }
        }
        all.sort_by_key(|&(r, l, t, _)| (r, l, t));
        let mut log = StepLog::default();
        for (_, _, _, s) in all {
            log.push(s.cons, s.beta, Some(s.stamp));
        }
        log
    }

    /// Final duals, indexed by constraint, from each constraint's owner.
    pub fn collect_duals(&self, states: &[StarNode]) -> (Vec<f64>, Vec<bool>, Vec<u64>) {
        let m = self.inst.n_cons();
        let (mut y, mut done, mut set) = (vec![0.0; m], vec![false; m], vec![0; m]);
        for i in 0..m {
            let owner = self.owner_hint(states, i);
            if let Some(&v) = states[owner].duals.get(&i) {
                y[i] = v;
                done[i] = true;
                set[i] = states[owner].set_round.get(&i).copied().unwrap_or(0);
            }
        }
        (y, done, set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::Entry;

    #[test]
    fn fractional_threshold_is_hit_point() {
        let inst = CoveringInstance::fractional(
            vec![1.0, 1.0, 1.0],
            &[(vec![(0, 1.0), (1, 1.0)], 4.0), (vec![(0, 1.0), (2, 1.0)], 2.0)],
        )
        .unwrap();
        let mut x = vec![0.0; 3];
        assert_eq!(threshold(&mut x, &inst.constraint(0), 0, 1), 4.0);
        assert_eq!(threshold(&mut x, &inst.constraint(1), 0, 2), 2.0);
    }

    #[test]
    fn integer_threshold_crosses_before_hit() {
        // 0.5 x0 + 3 x1 >= 5, both integer, at x = (5/3, 5/3). The unmet
        // relaxations floor x1; the root x0 hits at 4 while the leaf's
        // cost stays 1/3 until the root's cost 4 - x0 drops below it at 11/3.
        let inst = CoveringInstance::new(
            2,
            1,
            vec![
                Entry { cons: 0, var: 0, coef: 0.5 },
                Entry { cons: 0, var: 1, coef: 3.0 },
            ],
            vec![5.0],
            vec![1.0, 1.0],
            vec![None, None],
            &[0, 1],
        )
        .unwrap();
        let mut x = vec![5.0 / 3.0, 5.0 / 3.0];
        let t = threshold(&mut x, &inst.constraint(0), 0, 1);
        assert!((t - 11.0 / 3.0).abs() < 1e-9, "{t}");
    }

    #[test]
    fn capped_root_never_hits() {
        let inst = CoveringInstance::new(
            2,
            1,
            vec![
                Entry { cons: 0, var: 0, coef: 0.5 },
                Entry { cons: 0, var: 1, coef: 3.0 },
            ],
            vec![5.0],
            vec![1.0, 1.0],
            vec![None, Some(1.0)],
            &[0, 1],
        )
        .unwrap();
        let mut x = vec![2.0, 2.0];
        assert_eq!(threshold(&mut x, &inst.constraint(0), 1, 0), f64::INFINITY);
    }

    #[test]
    fn wait_condition_cases() {
        assert_eq!(wait_condition(Some((2, 1)), true, [(Some((1, 1)), false)]), Readiness::Done);
        assert_eq!(wait_condition(Some((2, 1)), true, [(Some((3, 1)), false)]), Readiness::NotDone);
        assert_eq!(wait_condition(Some((2, 1)), true, [(Some((2, 2)), true)]), Readiness::Done);
        assert_eq!(wait_condition(Some((2, 1)), false, []), Readiness::NotDone);
        assert_eq!(wait_condition(None, true, [(Some((9, 1)), false)]), Readiness::Done);
    }
}
