//! Cluster phases on the constraint network (one node per constraint, an
//! edge between constraints sharing a variable).
//!
//! A phase with radius bound `k` runs `3k + 1` communication rounds:
//!
//! * offset 0: take the maximum of values synced by last phase's members,
//!   draw a truncated geometric radius and send the own token;
//! * offsets 1..=k: flood tokens, keeping the Pareto front of (leader,
//!   remaining hops); at offset `k` join the highest covering leader and,
//!   if strictly interior, send the constraint's values towards it;
//! * offsets k+1..=2k: relay gathered constraints; at `2k` each leader
//!   steps its members until all are met and routes results back;
//! * offsets 2k+1..=3k: relay results; at `3k` members apply them and
//!   broadcast their variables' new values.
//!
//! With packing on, each node also broadcasts its step time, satisfaction
//! and dual value whenever they change. Neighbors stepped in the same phase
//! belong to the same component. A stepped node waits only for its other
//! neighbors, then reports to its leader the slack each of its variables
//! has left after the later neighbors' duals. The leader settles its
//! component's members in decreasing step order, subtracting the duals it
//! has just set, and stops at the first member not yet reported.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::hash::Hasher;
use std::sync::Arc;

use crate::cost::CostFunction;
use crate::instances::{ConsId, CoveringInstance, VarId};
use crate::relax;
use crate::sequential::StepLog;
use crate::sim::{Counters, Ctx, Fnv, Network, NodeId, Protocol, RandomSource, Violation, WireSize};
use crate::star::{wait_condition, Readiness, Stamp};

/// How the radius bound `k` is chosen per phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusSchedule {
    /// Every phase uses this `k`.
    Fixed(u32),
    /// `k = 1, 2, 4, ...`, running `ceil(a * k)` phases per value and
    /// staying at `max_k` once reached.
    Doubling { a: f64, max_k: u32 },
}

impl RadiusSchedule {
    /// `k = ceil(ln m)`, at least 1.
    pub fn for_size(m: usize) -> Self {
        RadiusSchedule::Fixed(default_k(m))
    }

    fn k_of_phase(&self, phase: u64) -> u32 {
        match *self {
            RadiusSchedule::Fixed(k) => k.max(1),
            RadiusSchedule::Doubling { a, max_k } => {
                let mut k = 1u32;
                let mut left = phase;
                loop {
                    if k >= max_k {
                        return max_k.max(1);
                    }
                    let len = (a * k as f64).ceil().max(1.0) as u64;
                    if left <= len {
                        return k;
                    }
                    left -= len;
                    k = (k * 2).min(max_k.max(1));
                }
            }
        }
    }
}

pub fn default_k(m: usize) -> u32 {
    ((m.max(2) as f64).ln().ceil() as u32).max(1)
}

/// Maps communication rounds to (phase, k, offset within phase).
#[derive(Debug, Clone)]
struct Calendar {
    schedule: RadiusSchedule,
    starts: RefCell<Vec<(u64, u32)>>,
}

impl Calendar {
    fn new(schedule: RadiusSchedule) -> Self {
        Self { schedule, starts: RefCell::new(vec![(1, schedule.k_of_phase(1))]) }
    }

    /// `(phase, k, offset)` for communication round `round >= 1`.
    fn locate(&self, round: u64) -> (u64, u32, u64) {
        let mut starts = self.starts.borrow_mut();
        loop {
            let &(start, k) = starts.last().expect("nonempty");
            let len = 3 * k as u64 + 1;
            if round < start + len {
                let idx = match starts.binary_search_by(|&(s, _)| s.cmp(&round)) {
                    Ok(i) => i,
                    Err(i) => i - 1,
                };
                let (s, k) = starts[idx];
                return (idx as u64 + 1, k, round - s);
            }
            let next = starts.len() as u64 + 1;
            starts.push((start + len, self.schedule.k_of_phase(next)));
        }
    }
}

/// Radius in `0..=k` with `Pr[r >= i] = p^i` for `i <= k`.
pub fn draw_radius(rng: &mut dyn RandomSource, p: f64, k: u32) -> u32 {
    let mut r = 0;
    while r < k && rng.unit() < p {
        r += 1;
    }
    r
}

/// Token state during one phase's flood.
#[derive(Debug, Clone, Default)]
struct Flood {
    /// leader label -> (remaining hops, neighbor it came from).
    best: BTreeMap<u64, (u32, Option<NodeId>)>,
}

impl Flood {
    fn start(&mut self, own: u64, r: u32) {
        self.best.clear();
        self.best.insert(own, (r, None));
    }

    fn offer(&mut self, from: NodeId, tokens: &[(u64, u32)]) {
        for &(l, rem) in tokens {
            if rem == 0 {
                continue;
            }
            let cand = rem - 1;
            match self.best.get(&l) {
                Some(&(have, _)) if have >= cand => {}
                _ => {
                    self.best.insert(l, (cand, Some(from)));
                }
            }
        }
    }

    /// Tokens worth forwarding: not beaten by a higher leader that reaches
    /// at least as far.
    fn front(&self) -> Vec<(u64, u32)> {
        let mut out = Vec::new();
        let mut reach = None;
        for (&l, &(rem, _)) in self.best.iter().rev() {
            if rem >= 1 && reach.is_none_or(|r| rem > r) {
                out.push((l, rem));
                reach = Some(rem);
            }
        }
        out.reverse();
        out
    }

    /// Highest covering leader and the hops it has left here.
    fn winner(&self) -> (u64, u32, Option<NodeId>) {
        let (&l, &(rem, parent)) = self.best.iter().next_back().expect("own token present");
        (l, rem, parent)
    }
}

/// Output of one decomposition phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub k: u32,
    pub in_r: Vec<bool>,
    /// Leader label per node.
    pub leader: Vec<u64>,
    /// Dense cluster index per node, by ascending leader label.
    pub block: Vec<usize>,
}

struct LsOnly {
    k: u32,
    p: f64,
}

#[derive(Debug, Clone, Default)]
struct LsNode {
    flood: Flood,
    out: Option<(u64, bool)>,
}

#[derive(Debug, Clone)]
struct Tokens(Vec<(u64, u32)>);

impl WireSize for Tokens {
    fn wire_size(&self) -> usize {
        12 * self.0.len()
    }
}

impl Protocol for LsOnly {
    type State = LsNode;
    type Msg = Tokens;

    fn init(&self, _net: &Network, _node: NodeId) -> LsNode {
        LsNode::default()
    }

    fn step(&self, ctx: &mut Ctx<'_, Tokens>, st: &mut LsNode) -> Result<(), Violation> {
        let off = ctx.round - 1;
        if off == 0 {
            let r = draw_radius(ctx.rng, self.p, self.k);
            st.flood.start(ctx.label(), r);
        } else {
            for (from, Tokens(t)) in ctx.inbox {
                st.flood.offer(*from, t);
            }
        }
        if off < self.k as u64 {
            ctx.broadcast(Tokens(st.flood.front()));
        } else {
            let (l, rem, _) = st.flood.winner();
            st.out = Some((l, rem >= 1));
        }
        Ok(())
    }

    fn finished(&self, states: &[LsNode]) -> bool {
        states.iter().all(|s| s.out.is_some())
    }

    fn digest(&self, st: &LsNode, h: &mut Fnv) {
        if let Some((l, r)) = st.out {
            h.write_u64(l);
            h.write_u8(r as u8);
        }
    }
}

/// One phase of the randomized low-diameter decomposition with
/// `p = |C|^(-1/k)`. A node is in `R` when its leader's ball reaches
/// strictly past it, so all its neighbors share that leader.
pub fn linial_saks_phase(net: &Network, k: u32, rng: &mut dyn RandomSource) -> Decomposition {
    let k = k.max(1);
    let p = (net.len().max(1) as f64).powf(-1.0 / k as f64);
    let exec = crate::sim::run(&LsOnly { k, p }, net, rng, k as u64 + 1).expect("flood stays on edges");
    let outs: Vec<(u64, bool)> = exec.states.iter().map(|s| s.out.expect("decided")).collect();
    let mut leaders: Vec<u64> = outs.iter().map(|o| o.0).collect();
    leaders.sort_unstable();
    leaders.dedup();
    Decomposition {
        k,
        in_r: outs.iter().map(|o| o.1).collect(),
        leader: outs.iter().map(|o| o.0).collect(),
        block: outs.iter().map(|o| leaders.binary_search(&o.0).expect("present")).collect(),
    }
}


/// One step taken by a leader, as reported back to the stepped member.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNote {
    pub t: u64,
    pub beta: f64,
    /// Per-variable cost increase the leader computed for this step.
    pub claimed: Vec<f64>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// What a node tells its neighbors for the packing wait condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRecord {
    pub stamp: Option<Stamp>,
    pub satisfied: bool,
    pub y: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum Routed {
    Result { back: Vec<NodeId>, values: Vec<f64>, steps: Vec<StepNote> },
    /// Per-variable slack (row order) left by neighbors outside the
    /// member's component.
    Report { member: NodeId, slack: Vec<f64> },
    Confirm { y: f64 },
}

#[derive(Debug, Clone)]
pub enum ClusterMsg {
    Tokens(Vec<(u64, u32)>),
    Gather { leader: u64, path: Vec<NodeId>, values: Vec<f64> },
    /// `route` lists the hops left after the receiver.
    Routed { route: Vec<NodeId>, body: Arc<Routed> },
    Sync(Vec<(VarId, f64)>),
    Record(NodeRecord),
}

impl WireSize for ClusterMsg {
    fn wire_size(&self) -> usize {
        match self {
            ClusterMsg::Tokens(t) => 12 * t.len(),
            ClusterMsg::Gather { path, values, .. } => 8 + 8 * path.len() + 8 * values.len(),
            ClusterMsg::Routed { route, body } => {
                8 * route.len()
                    + match &**body {
                        Routed::Result { back, values, steps } => {
                            8 * (back.len() + values.len())
                                + steps.iter().map(|s| 16 + 8 * (s.before.len() + s.after.len() + s.claimed.len())).sum::<usize>()
                        }
                        Routed::Report { slack, .. } => 8 + 8 * slack.len(),
                        Routed::Confirm { .. } => 8,
                    }
            }
            ClusterMsg::Sync(v) => 16 * v.len(),
            ClusterMsg::Record(_) => 26,
        }
    }
}

#[derive(Debug, Clone)]
struct Member {
    node: NodeId,
    route: Vec<NodeId>,
    t: u64,
    slack: Option<Vec<f64>>,
    y: Option<f64>,
}

/// Per-constraint node state.
#[derive(Debug, Clone)]
pub struct ClusterNode {
    /// Local copy of this constraint's variables, in row order.
    pub values: Vec<f64>,
    flood: Flood,
    gathered: Vec<(Vec<NodeId>, Vec<f64>)>,
    updated: bool,
    /// Steps this node performed as a leader.
    pub steps: Vec<(ConsId, f64, Stamp)>,
    /// Time of this constraint's last step.
    pub stamp: Option<Stamp>,
    route_to_leader: Vec<NodeId>,
    /// Stepped components led here, members in decreasing step order.
    components: Vec<Vec<Member>>,
    neighbors: BTreeMap<NodeId, NodeRecord>,
    last_sent: Option<NodeRecord>,
    reported: bool,
    /// Settled dual of this constraint.
    pub y: Option<f64>,
    /// Communication round in which `y` was set.
    pub set_round: u64,
    pub satisfied: bool,
    /// Communication round in which the node first saw itself satisfied.
    pub satisfied_round: Option<u64>,
}

/// Covering (and optionally packing) by cluster phases, for any number of
/// variables per constraint and any separable cost.
pub struct ClusterProtocol<'a> {
    inst: &'a CoveringInstance,
    cost: &'a dyn CostFunction,
    pack: bool,
    calendar: Calendar,
    scratch: RefCell<Vec<f64>>,
}

impl<'a> ClusterProtocol<'a> {
    pub fn new(inst: &'a CoveringInstance, cost: &'a dyn CostFunction, schedule: RadiusSchedule, pack: bool) -> Self {
        Self { inst, cost, pack, calendar: Calendar::new(schedule), scratch: RefCell::new(vec![0.0; inst.n_vars()]) }
    }

    /// Constraint network: an edge between every two constraints sharing a
    /// variable.
    pub fn network(inst: &CoveringInstance) -> Network {
        let mut edges = Vec::new();
        for j in 0..inst.n_vars() {
            let col = inst.col(j);
            for a in 0..col.len() {
                for b in a + 1..col.len() {
                    edges.push((col[a].0, col[b].0));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Network::new(inst.n_cons(), &edges).expect("constraint network")
    }

    /// Phase containing communication round `round`.
    pub fn phase_of(&self, round: u64) -> u64 {
        self.calendar.locate(round).0
    }

    fn load(&self, me: ConsId, values: &[f64]) -> std::cell::RefMut<'_, Vec<f64>> {
        let mut s = self.scratch.borrow_mut();
        for (&(j, _), &v) in self.inst.row(me).iter().zip(values) {
            s[j] = v;
        }
        s
    }

    fn is_met(&self, me: ConsId, values: &[f64]) -> bool {
        let s = self.load(me, values);
        self.inst.is_satisfied(me, &s)
    }

    fn send_routed(
        &self,
        ctx: &mut Ctx<'_, ClusterMsg>,
        st: &mut ClusterNode,
        route: &[NodeId],
        body: Arc<Routed>,
    ) -> Result<(), Violation> {
        let me = ctx.node;
        let route: Vec<NodeId> = route.iter().copied().skip_while(|&v| v == me).collect();
        match route.split_first() {
            None => self.arrive(ctx, st, &body),
            Some((&next, rest)) => {
                ctx.send(next, ClusterMsg::Routed { route: rest.to_vec(), body });
                Ok(())
            }
        }
    }

    fn arrive(&self, ctx: &mut Ctx<'_, ClusterMsg>, st: &mut ClusterNode, body: &Routed) -> Result<(), Violation> {
        let me = ctx.node;
        match body {
            Routed::Result { back, values, steps } => {
                for note in steps {
                    let tol = 1e-9 * note.beta.abs().max(1.0);
                    for (k, &(j, _)) in self.inst.row(me).iter().enumerate() {
                        let local = self.cost.raise_cost(j, note.before[k], note.after[k]);
                        if (local - note.claimed[k]).abs() > tol || local > note.beta + tol {
                            return Err(Violation(format!(
                                "step {} on constraint {me} raises the cost of x_{j} by {local} locally but {} at the leader (β = {})",
                                note.t, note.claimed[k], note.beta
                            )));
                        }
                    }
                }
                for (v, &nv) in st.values.iter_mut().zip(values) {
                    *v = v.max(nv);
                }
                st.updated = true;
                if let Some(last) = steps.last() {
                    let (phase, _, _) = self.calendar.locate(ctx.round);
                    st.stamp = Some((phase, last.t));
                    st.route_to_leader = back.clone();
                }
            }
            Routed::Report { member, slack } => {
                for comp in &mut st.components {
                    for m in comp.iter_mut().filter(|m| m.node == *member) {
                        m.slack = Some(slack.clone());
                    }
                }
            }
            Routed::Confirm { y } => {
                if !st.reported {
                    return Err(Violation("confirmed before reporting".into()));
                }
                if st.y.is_none() {
                    st.y = Some(*y);
                    st.set_round = ctx.round;
                }
            }
        }
        Ok(())
    }

    fn lead(&self, ctx: &mut Ctx<'_, ClusterMsg>, st: &mut ClusterNode, phase: u64) -> Result<(), Violation> {
        let mut members = std::mem::take(&mut st.gathered);
        members.sort_by_key(|(path, _)| path[0]);
        let ids: Vec<ConsId> = members.iter().map(|(p, _)| p[0]).collect();
        let mut x = self.scratch.borrow_mut();
        for (path, values) in &members {
            for (&(j, _), &v) in self.inst.row(path[0]).iter().zip(values) {
                x[j] = v;
            }
        }
        let bound: usize = ids.iter().map(|&i| relax::relaxation_count(&self.inst.constraint(i))).sum();
        let mut notes: BTreeMap<ConsId, Vec<StepNote>> = BTreeMap::new();
        let mut t = 0u64;
        while let Some(&i) = ids.iter().find(|&&i| !self.inst.is_satisfied(i, &x)) {
            if t as usize >= bound {
                return Err(Violation(format!("leader exceeded {bound} steps on its component")));
            }
            t += 1;
            let view = self.inst.constraint(i);
            let b = relax::stepsize(&x, &view, self.cost).map_err(|e| Violation(e.to_string()))?;
            let before: Vec<f64> = view.terms.iter().map(|&(j, _)| x[j]).collect();
            relax::step(&mut x, &view, b.beta, self.cost);
            let after: Vec<f64> = view.terms.iter().map(|&(j, _)| x[j]).collect();
            let claimed = view
                .terms
                .iter()
                .zip(before.iter().zip(&after))
                .map(|(&(j, _), (&f, &to))| self.cost.raise_cost(j, f, to))
                .collect();
            st.steps.push((i, b.beta, (phase, t)));
            notes.entry(i).or_default().push(StepNote { t, beta: b.beta, claimed, before, after });
        }
        let results: Vec<(Vec<NodeId>, Vec<NodeId>, Routed)> = members
            .into_iter()
            .map(|(path, _)| {
                let i = path[0];
                let values = self.inst.row(i).iter().map(|&(j, _)| x[j]).collect();
                let steps = notes.remove(&i).unwrap_or_default();
                let to_member: Vec<NodeId> = path.iter().rev().copied().collect();
                let back: Vec<NodeId> = path[1..].iter().copied().chain(std::iter::once(ctx.node)).collect();
                (path, to_member, Routed::Result { back, values, steps })
            })
            .collect();
        drop(x);
        let mut comp = Vec::new();
        for (path, to_member, body) in results {
            if let Routed::Result { steps, .. } = &body {
                if let Some(last) = steps.last() {
                    comp.push(Member { node: path[0], route: to_member.clone(), t: last.t, slack: None, y: None });
                }
            }
            self.send_routed(ctx, st, &to_member, Arc::new(body))?;
        }
        if !comp.is_empty() {
            comp.sort_by(|a, b| b.t.cmp(&a.t));
            st.components.push(comp);
        }
        Ok(())
    }

    /// Once the wait condition over neighbors outside the component holds:
    /// `Some(None)` for a never-stepped node (its dual is 0), otherwise the
    /// slack per variable after subtracting those later neighbors' duals in
    /// decreasing step order.
    fn external_slack(&self, me: ConsId, st: &ClusterNode) -> Option<Option<Vec<f64>>> {
        let mut all_sat = st.satisfied;
        let mut adjacent = Vec::new();
        for &(j, _) in self.inst.row(me) {
            for &(i, _) in self.inst.col(j) {
                if i == me {
                    continue;
                }
                let r = st.neighbors.get(&i)?;
                all_sat &= r.satisfied;
                if r.stamp.is_none() || r.stamp.map(|s| s.0) != st.stamp.map(|s| s.0) {
                    adjacent.push((r.stamp, r.y.is_some()));
                }
            }
        }
        if wait_condition(st.stamp, all_sat, adjacent) == Readiness::NotDone {
            return None;
        }
        let Some(own) = st.stamp else {
            return Some(None);
        };
        let slack = self
            .inst
            .row(me)
            .iter()
            .map(|&(j, _)| {
                let mut later: Vec<(Stamp, f64, f64)> = self
                    .inst
                    .col(j)
                    .iter()
                    .filter(|&&(i, _)| i != me)
                    .filter_map(|&(i, b)| {
                        let r = st.neighbors[&i];
                        r.stamp.filter(|&s| s.0 > own.0).map(|s| (s, b, r.y.expect("later neighbor settled")))
                    })
                    .collect();
                later.sort_by(|p, q| q.0.cmp(&p.0));
                later.iter().fold(self.inst.costs()[j], |s, &(_, b, y)| s - b * y)
            })
            .collect();
        Some(Some(slack))
    }

    /// Settles a component's reported members in decreasing step order,
    /// stopping at the first unreported one. Returns the confirmations to
    /// send.
    fn settle(&self, comp: &mut [Member]) -> Vec<(Vec<NodeId>, f64)> {
        let mut out = Vec::new();
        for k in 0..comp.len() {
            if comp[k].y.is_some() {
                continue;
            }
            let Some(slack) = &comp[k].slack else {
                break;
            };
            let mut best = f64::INFINITY;
            for (&(j, a), &s0) in self.inst.row(comp[k].node).iter().zip(slack) {
                let mut s = s0;
                for later in &comp[..k] {
                    if let Some(&(_, b)) = self.inst.row(later.node).iter().find(|&&(jj, _)| jj == j) {
                        s -= b * later.y.expect("settled in order");
                    }
                }
                best = best.min(s / a);
            }
            let y = best.max(0.0);
            comp[k].y = Some(y);
            out.push((comp[k].route.clone(), y));
        }
        out
    }

    fn pack_round(&self, ctx: &mut Ctx<'_, ClusterMsg>, st: &mut ClusterNode) -> Result<(), Violation> {
        let me = ctx.node;
        if st.y.is_none() && !st.reported {
            match self.external_slack(me, st) {
                None => {}
                Some(None) => {
                    st.y = Some(0.0);
                    st.set_round = ctx.round;
                }
                Some(Some(slack)) => {
                    st.reported = true;
                    let route = st.route_to_leader.clone();
                    self.send_routed(ctx, st, &route, Arc::new(Routed::Report { member: me, slack }))?;
                }
            }
        }
        let mut confirms = Vec::new();
        let mut comps = std::mem::take(&mut st.components);
        for comp in comps.iter_mut().rev() {
            confirms.extend(self.settle(comp));
        }
        st.components = comps;
        for (route, y) in confirms {
            self.send_routed(ctx, st, &route, Arc::new(Routed::Confirm { y }))?;
        }
        let rec = NodeRecord { stamp: st.stamp, satisfied: st.satisfied, y: st.y };
        if st.last_sent != Some(rec) {
            ctx.broadcast(ClusterMsg::Record(rec));
            st.last_sent = Some(rec);
        }
        Ok(())
    }

    /// Steps of all leaders ordered by phase, leader, and position.
    pub fn collect_log(&self, states: &[ClusterNode], net: &Network) -> StepLog {
        let mut all: Vec<(u64, u64, u64, ConsId, f64)> = Vec::new();
        for (v, st) in states.iter().enumerate() {
            for &(i, beta, (p, t)) in &st.steps {
                all.push((p, net.label(v), t, i, beta));
            }
        }
        all.sort_by_key(|&(p, l, t, _, _)| (p, l, t));
        let mut log = StepLog::default();
        for (p, _, t, i, beta) in all {
            log.push(i, beta, Some((p, t)));
        }
        log
    }

    /// Covering vector assembled from the constraints' local copies.
    pub fn collect_x(&self, states: &[ClusterNode]) -> Vec<f64> {
        let mut x = vec![0.0f64; self.inst.n_vars()];
        for (i, st) in states.iter().enumerate() {
            for (&(j, _), &v) in self.inst.row(i).iter().zip(&st.values) {
                x[j] = x[j].max(v);
            }
        }
        x
    }
}

impl Protocol for ClusterProtocol<'_> {
    type State = ClusterNode;
    type Msg = ClusterMsg;

    fn init(&self, _net: &Network, node: NodeId) -> ClusterNode {
        let values = vec![0.0; self.inst.row(node).len()];
        let satisfied = self.is_met(node, &values);
        ClusterNode {
            values,
            flood: Flood::default(),
            gathered: Vec::new(),
            updated: false,
            steps: Vec::new(),
            stamp: None,
            route_to_leader: Vec::new(),
            components: Vec::new(),
            neighbors: BTreeMap::new(),
            last_sent: None,
            reported: false,
            y: None,
            set_round: 0,
            satisfied,
            satisfied_round: None,
        }
    }

    fn step(&self, ctx: &mut Ctx<'_, ClusterMsg>, st: &mut ClusterNode) -> Result<(), Violation> {
        let me = ctx.node;
        let (phase, k, off) = self.calendar.locate(ctx.round);
        let k64 = k as u64;
        if off == 0 {
            let p = (self.inst.n_cons().max(1) as f64).powf(-1.0 / k as f64);
            let r = draw_radius(ctx.rng, p, k);
            st.flood.start(ctx.label(), r);
        }
        for (from, msg) in ctx.inbox {
            match msg {
                ClusterMsg::Tokens(t) => st.flood.offer(*from, t),
                ClusterMsg::Gather { leader, path, values } => {
                    if *leader == ctx.label() {
                        st.gathered.push((path.clone(), values.clone()));
                    } else {
                        let Some(&(_, Some(parent))) = st.flood.best.get(leader) else {
                            return Err(Violation(format!("no route towards leader {leader}")));
                        };
                        let mut path = path.clone();
                        path.push(me);
                        ctx.send(parent, ClusterMsg::Gather { leader: *leader, path, values: values.clone() });
                    }
                }
                ClusterMsg::Routed { route, body } => {
                    let body = Arc::clone(body);
                    self.send_routed(ctx, st, &route.clone(), body)?;
                }
                ClusterMsg::Sync(vals) => {
                    for &(j, v) in vals {
                        if let Some(pos) = self.inst.row(me).iter().position(|&(jj, _)| jj == j) {
                            st.values[pos] = st.values[pos].max(v);
                        }
                    }
                }
                ClusterMsg::Record(rec) => {
                    st.neighbors.insert(*from, *rec);
                }
            }
        }
        st.satisfied = self.is_met(me, &st.values);
        if off < k64 {
            let front = st.flood.front();
            if !front.is_empty() {
                ctx.broadcast(ClusterMsg::Tokens(front));
            }
        }
        if off == k64 {
            let (leader, rem, parent) = st.flood.winner();
            if rem >= 1 && !st.satisfied {
                let values = st.values.clone();
                match parent {
                    None => st.gathered.push((vec![me], values)),
                    Some(p) => ctx.send(p, ClusterMsg::Gather { leader, path: vec![me], values }),
                }
            }
        }
        if off == 2 * k64 && !st.gathered.is_empty() {
            self.lead(ctx, st, phase)?;
        }
        if off == 3 * k64 && std::mem::take(&mut st.updated) {
            let vals = self.inst.row(me).iter().map(|&(j, _)| j).zip(st.values.iter().copied()).collect();
            ctx.broadcast(ClusterMsg::Sync(vals));
        }
        st.satisfied = self.is_met(me, &st.values);
        if st.satisfied && st.satisfied_round.is_none() {
            st.satisfied_round = Some(ctx.round);
        }
        if self.pack {
            self.pack_round(ctx, st)?;
        }
        Ok(())
    }

    fn finished(&self, states: &[ClusterNode]) -> bool {
        states.iter().all(|s| s.satisfied && (!self.pack || s.y.is_some()))
    }

    fn counters(&self, states: &[ClusterNode]) -> Counters {
        let mut c = Counters::default();
        for (i, st) in states.iter().enumerate() {
            if st.satisfied {
                c.satisfied += 1;
            } else {
                let s = self.load(i, &st.values);
                if let Ok(p) = relax::phi(&s, &self.inst.constraint(i)) {
                    c.phi_total += p as f64;
                }
            }
            if st.y.is_some() {
                c.packed += 1;
            }
        }
        c
    }

    fn digest(&self, st: &ClusterNode, h: &mut Fnv) {
        for &v in &st.values {
            h.f64(v);
        }
        if let Some((a, b)) = st.stamp {
            h.write_u64(a);
            h.write_u64(b);
        }
        if let Some(y) = st.y {
            h.f64(y);
        }
    }
}
