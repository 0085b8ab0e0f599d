//! Batch runs: generate or load instances, run an algorithm over seeds,
//! check every result, and tabulate.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::cluster::RadiusSchedule;
use crate::cost::LinearCost;
use crate::dist_cover::{self, DistError};
use crate::dist_pack;
use crate::instances::{
    gen_cmip, gen_fractional, gen_hypergraph_bmatching, gen_wvc, read_instance, CmipOptions, ConsId,
    CoveringInstance, FormatError, GeneratorError,
};
use crate::poset::{build_poset, check_packing, ratio_of, sequential_pack, PosetError};
use crate::sequential::{sequential_cover, CoverError, SelectionPolicy, StepLog, StepRule};
use crate::sim::{RoundTrace, SeededSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algo {
    SeqCover,
    SeqPack,
    Wvc,
    Cmip2,
    SubmodCover,
    Pack2,
    PackGeneral,
}

impl Algo {
    pub const ALL: [Algo; 7] =
        [Algo::SeqCover, Algo::SeqPack, Algo::Wvc, Algo::Cmip2, Algo::SubmodCover, Algo::Pack2, Algo::PackGeneral];

    pub fn name(self) -> &'static str {
        match self {
            Algo::SeqCover => "seq-cover",
            Algo::SeqPack => "seq-pack",
            Algo::Wvc => "wvc",
            Algo::Cmip2 => "cmip2",
            Algo::SubmodCover => "submod-cover",
            Algo::Pack2 => "pack2",
            Algo::PackGeneral => "pack-general",
        }
    }

    pub fn is_distributed(self) -> bool {
        !matches!(self, Algo::SeqCover | Algo::SeqPack)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?}; expected one of {}", names()))
    }
}

fn names() -> String {
    Algo::ALL.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{algo} cannot run on this instance: {why}")]
    Incompatible { algo: Algo, why: String },
    #[error("unknown generator {0:?}; expected wvc, cmip, cmip2, fractional or bmatching")]
    UnknownGenerator(String),
    #[error("generator argument {key}: {why}")]
    BadArgument { key: String, why: String },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Cover(#[from] CoverError),
    #[error(transparent)]
    Poset(#[from] PosetError),
    #[error(transparent)]
    Dist(DistError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where instances come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    /// One instance file, reused for every seed.
    File(PathBuf),
    /// A named generator; the run seed is also the generator seed unless
    /// `gen_seed` is given.
    Generator { name: String, args: BTreeMap<String, String> },
}

/// Generator names with their arguments and defaults.
pub const GENERATORS: &str = "\
wvc: n=64 p=0.05 cmin=1 cmax=100
cmip: n=64 m=128 rho=3
cmip2: n=64 m=128
fractional: n=64 m=128 rho=3
bmatching: n=32 m=64 rho=3 capmin=1 capmax=3
any generator also takes gen_seed=S to fix the instance across run seeds";

fn arg<T: FromStr>(args: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, ExperimentError>
where
    T::Err: fmt::Display,
{
    match args.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|e: T::Err| ExperimentError::BadArgument { key: key.into(), why: e.to_string() }),
    }
}

/// Builds the instance a generator spec describes for `seed`.
pub fn generate(name: &str, args: &BTreeMap<String, String>, seed: u64) -> Result<CoveringInstance, ExperimentError> {
    let known: &[&str] = match name {
        "wvc" => &["n", "p", "cmin", "cmax"],
        "cmip" | "fractional" => &["n", "m", "rho"],
        "cmip2" => &["n", "m"],
        "bmatching" => &["n", "m", "rho", "capmin", "capmax"],
        _ => return Err(ExperimentError::UnknownGenerator(name.into())),
    };
    if let Some(k) = args.keys().find(|k| k.as_str() != "gen_seed" && !known.contains(&k.as_str())) {
        return Err(ExperimentError::BadArgument { key: k.clone(), why: format!("not an argument of {name}") });
    }
    let seed = arg(args, "gen_seed", seed)?;
    Ok(match name {
        "wvc" => gen_wvc(arg(args, "n", 64)?, arg(args, "p", 0.05)?, arg(args, "cmin", 1.0)?..=arg(args, "cmax", 100.0)?, seed),
        "cmip" => gen_cmip(arg(args, "n", 64)?, arg(args, "m", 128)?, arg(args, "rho", 3)?, seed, &CmipOptions::default())?,
        "cmip2" => gen_cmip(arg(args, "n", 64)?, arg(args, "m", 128)?, 2, seed, &CmipOptions::default())?,
        "fractional" => gen_fractional(arg(args, "n", 64)?, arg(args, "m", 128)?, arg(args, "rho", 3)?, seed)?,
        _ => gen_hypergraph_bmatching(
            arg(args, "n", 32)?,
            arg(args, "m", 64)?,
            arg(args, "rho", 3)?,
            arg(args, "capmin", 1)?..=arg(args, "capmax", 3)?,
            seed,
        )?
        .into_covering(),
    })
}

/// `200 * (1 + ceil(ln max(2, m))^2)`.
pub fn default_max_rounds(m: usize) -> u64 {
    let l = (m.max(2) as f64).ln().ceil() as u64;
    200 * (1 + l * l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub algo: Algo,
    pub source: InstanceSource,
    pub seeds: Vec<u64>,
    pub max_rounds: Option<u64>,
    /// Constraint priority for the sequential algorithms; input order if
    /// absent.
    pub order: Option<Vec<ConsId>>,
    /// Record wall-clock time per run (makes output nondeterministic).
    pub timing: bool,
}

/// One checked run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub algo: Algo,
    pub n_vars: usize,
    pub n_cons: usize,
    pub rho: usize,
    pub seed: u64,
    /// Communication rounds; 0 for sequential algorithms.
    pub rounds: u64,
    pub terminated: bool,
    pub cost_x: f64,
    pub value_y: f64,
    pub ratio: f64,
    /// Cover and packing both feasible and the run terminated.
    pub feasible: bool,
    pub wall_ms: u64,
    /// Rounded cover.
    pub x: Vec<f64>,
    /// Packing certificate; empty when the bound is the sum of step sizes.
    pub y: Vec<f64>,
}

impl RunRow {
    /// Feasible and `c·x <= rho·w·y + 1e-6`.
    pub fn passes(&self) -> bool {
        self.feasible && self.cost_x <= self.rho as f64 * self.value_y + 1e-6
    }
}

/// Rows plus per-run round traces of one experiment.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub rows: Vec<RunRow>,
    pub traces: Vec<(u64, RoundTrace)>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(RunRow::passes)
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "algo,n_vars,n_cons,rho,seed,rounds,cost_x,value_y,ratio,feasible,wall_ms")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.algo, r.n_vars, r.n_cons, r.rho, r.seed, r.rounds, r.cost_x, r.value_y, r.ratio, r.feasible, r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for r in &self.rows {
            let v = serde_json::json!({
                "algo": r.algo.name(), "n_vars": r.n_vars, "n_cons": r.n_cons, "rho": r.rho,
                "seed": r.seed, "rounds": r.rounds, "terminated": r.terminated, "cost_x": r.cost_x,
                "value_y": r.value_y, "ratio": r.ratio, "feasible": r.feasible, "wall_ms": r.wall_ms,
                "x": r.x, "y": r.y,
            });
            serde_json::to_writer(&mut out, &v)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl RunReport {
    /// One line per (seed, communication round), seed first.
    pub fn write_traces(&self, mut out: impl Write) -> io::Result<()> {
        for (seed, trace) in &self.traces {
            for row in &trace.rows {
                let mut v = serde_json::json!({ "seed": seed });
                if let (Some(obj), serde_json::Value::Object(fields)) = (v.as_object_mut(), serde_json::to_value(row)?) {
                    obj.extend(fields);
                }
                serde_json::to_writer(&mut out, &v)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// Lower-bound certificate for a covering run without its own packing:
/// the edge packing `y_e = sum of β on e` under the vertex-cover rule, the
/// reverse-order packing on fractional instances, and `sum β` otherwise.
fn cover_certificate(inst: &CoveringInstance, log: &StepLog, rule: StepRule) -> Result<Vec<f64>, ExperimentError> {
    if rule == StepRule::VertexCover {
        let mut y = vec![0.0; inst.n_cons()];
        for r in &log.records {
            y[r.cons] += r.beta;
        }
        return Ok(y);
    }
    if inst.is_fractional() {
        let poset = build_poset(log, inst)?;
        let y = sequential_pack(inst, &poset, &poset.elements())?.y;
        return Ok(y);
    }
    Ok(Vec::new())
}

fn incompatible(algo: Algo, why: impl Into<String>) -> ExperimentError {
    ExperimentError::Incompatible { algo, why: why.into() }
}

fn dist_err(algo: Algo, e: DistError) -> ExperimentError {
    match e {
        DistError::Sim(_) => ExperimentError::Dist(e),
        other => incompatible(algo, other.to_string()),
    }
}

/// Runs `algo` once and checks the result.
pub fn run_one(
    algo: Algo,
    inst: &CoveringInstance,
    seed: u64,
    max_rounds: u64,
    order: Option<&[ConsId]>,
    timing: bool,
) -> Result<(RunRow, Option<RoundTrace>), ExperimentError> {
    let start = Instant::now();
    let policy = match order {
        Some(o) => SelectionPolicy::Priority(o.to_vec()),
        None => SelectionPolicy::InputOrder,
    };
    let mut rng = SeededSource::new(seed);
    let schedule = RadiusSchedule::for_size(inst.n_cons());
    // (pre-rounding x, rounded x, value_y, packing feasible, rounds, terminated, trace)
    let (x, rounded, y, pack_ok, rounds, terminated, trace, beta_sum) = match algo {
        Algo::SeqCover => {
            let run = sequential_cover(inst, &policy)?;
            let y = cover_certificate(inst, &run.log, StepRule::Relaxation)?;
            (run.x.x, run.rounded.x, y, true, 0, true, None, run.log.beta_sum())
        }
        Algo::SeqPack => {
            if !inst.is_fractional() {
                return Err(incompatible(algo, "needs a fractional instance"));
            }
            let run = sequential_cover(inst, &policy)?;
            let poset = build_poset(&run.log, inst)?;
            let y = sequential_pack(inst, &poset, &poset.elements())?.y;
            (run.x.x, run.rounded.x, y, true, 0, true, None, 0.0)
        }
        Algo::Wvc | Algo::Cmip2 | Algo::SubmodCover => {
            let (run, rule) = match algo {
                Algo::Wvc => (dist_cover::wvc(inst, &mut rng, max_rounds), StepRule::VertexCover),
                Algo::Cmip2 => (dist_cover::cmip2(inst, &mut rng, max_rounds), StepRule::Relaxation),
                _ => {
                    let cost = LinearCost::new(inst.costs().to_vec());
                    (dist_cover::submodular_cover(inst, &cost, schedule, &mut rng, max_rounds), StepRule::Relaxation)
                }
            };
            let run = run.map_err(|e| dist_err(algo, e))?;
            let y = cover_certificate(inst, &run.log, rule)?;
            let b = run.log.beta_sum();
            let (t, r) = (run.outcome.terminated(), run.rounds());
            (run.x.x, run.rounded.x, y, true, r, t, Some(run.trace), b)
        }
        Algo::Pack2 | Algo::PackGeneral => {
            let run = if algo == Algo::Pack2 {
                dist_pack::pack2(inst, &mut rng, max_rounds)
            } else {
                dist_pack::pack_general(inst, schedule, &mut rng, max_rounds)
            }
            .map_err(|e| dist_err(algo, e))?;
            let ok = run.done.iter().all(|&d| d);
            let (t, r) = (run.cover.outcome.terminated(), run.cover.rounds());
            (run.cover.x.x, run.cover.rounded.x, run.y, ok, r, t, Some(run.cover.trace), 0.0)
        }
    };
    debug_assert_eq!(x.len(), rounded.len());
    let cover_ok = inst.first_violated(&rounded).is_none();
    let cost_x = inst.cost_of(&rounded);
    let (value_y, pack_ok) = if y.is_empty() {
        (beta_sum, pack_ok)
    } else {
        (inst.demands().iter().zip(&y).map(|(w, v)| w * v).sum(), pack_ok && check_packing(inst, &y).is_ok())
    };
    let row = RunRow {
        algo,
        n_vars: inst.n_vars(),
        n_cons: inst.n_cons(),
        rho: inst.rho(),
        seed,
        rounds,
        terminated,
        cost_x,
        value_y,
        ratio: ratio_of(cost_x, value_y),
        feasible: terminated && cover_ok && pack_ok,
        wall_ms: if timing { start.elapsed().as_millis() as u64 } else { 0 },
        x: rounded,
        y,
    };
    Ok((row, trace))
}

/// Runs every seed of `spec`; rows come back sorted by (size, seed).
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunReport, ExperimentError> {
    let file_inst = match &spec.source {
        InstanceSource::File(p) => Some(read_instance(&std::fs::read(p)?)?),
        InstanceSource::Generator { .. } => None,
    };
    let mut report = RunReport::default();
    for &seed in &spec.seeds {
        let inst = match (&file_inst, &spec.source) {
            (Some(i), _) => i.clone(),
            (None, InstanceSource::Generator { name, args }) => generate(name, args, seed)?,
            (None, InstanceSource::File(_)) => unreachable!("file instance loaded above"),
        };
        let max_rounds = spec.max_rounds.unwrap_or_else(|| default_max_rounds(inst.n_cons()));
        let (row, trace) = run_one(spec.algo, &inst, seed, max_rounds, spec.order.as_deref(), spec.timing)?;
        report.rows.push(row);
        if let Some(t) = trace {
            report.traces.push((seed, t));
        }
    }
    let mut idx: Vec<usize> = (0..report.rows.len()).collect();
    idx.sort_by_key(|&i| (report.rows[i].n_vars, report.rows[i].n_cons, report.rows[i].seed));
    report.rows = idx.iter().map(|&i| report.rows[i].clone()).collect();
    Ok(report)
}

/// Round statistics at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRow {
    pub n: usize,
    pub runs: usize,
    pub median_rounds: f64,
    pub max_rounds: u64,
    /// `median_rounds / ln n`.
    pub median_over_ln: f64,
    pub timeouts: usize,
    pub failures: usize,
}

impl ScaleRow {
    pub fn csv_header() -> &'static str {
        "n,runs,median_rounds,max_rounds,median_over_ln,timeouts,failures"
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{},{}",
            self.n, self.runs, self.median_rounds, self.max_rounds, self.median_over_ln, self.timeouts, self.failures
        )
    }
}

pub fn median(v: &mut [u64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_unstable();
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2] as f64
    } else {
        (v[k / 2 - 1] + v[k / 2]) as f64 / 2.0
    }
}

/// Runs `algo` on `make(n, seed)` for every size and `seeds_per_size`
/// seeds, and summarizes the rounds used. `n` is whatever size the caller
/// scales by; the logarithm in the table uses it too.
pub fn scaling_table(
    algo: Algo,
    sizes: &[usize],
    seeds_per_size: u64,
    make: impl Fn(usize, u64) -> Result<CoveringInstance, ExperimentError>,
) -> Result<Vec<ScaleRow>, ExperimentError> {
    let mut table = Vec::new();
    for &n in sizes {
        let mut rounds = Vec::new();
        let (mut timeouts, mut failures) = (0, 0);
        for seed in 0..seeds_per_size {
            let inst = make(n, seed)?;
            let (row, _) = run_one(algo, &inst, seed, default_max_rounds(inst.n_cons()), None, false)?;
            if !row.terminated {
                timeouts += 1;
            } else if !row.passes() {
                failures += 1;
            }
            rounds.push(row.rounds);
        }
        let max_rounds = rounds.iter().copied().max().unwrap_or(0);
        let med = median(&mut rounds);
        table.push(ScaleRow {
            n,
            runs: rounds.len(),
            median_rounds: med,
            max_rounds,
            median_over_ln: med / (n.max(2) as f64).ln(),
            timeouts,
            failures,
        });
    }
    Ok(table)
}
