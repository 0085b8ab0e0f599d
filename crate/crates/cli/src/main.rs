use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use covpack::experiment::{
    generate, run_experiment, scaling_table, Algo, ExperimentSpec, InstanceSource, ScaleRow, GENERATORS,
};
use covpack::instances::write_instance;

#[derive(Parser)]
#[command(name = "covpack", version, about = "Run covering and packing algorithms on generated or stored instances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm over a range of seeds and report every run.
    Run(RunArgs),
    /// Tabulate rounds used across instance sizes.
    Scale(ScaleArgs),
    /// Write a generated instance as JSON.
    Gen(GenArgs),
    /// List generators and their arguments.
    Generators,
}

#[derive(Args)]
struct Source {
    /// Instance file (JSON).
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    instance: Option<PathBuf>,
    /// Generator name (see `covpack generators`).
    #[arg(long)]
    gen: Option<String>,
    /// Generator arguments as KEY=VALUE.
    #[arg(long, num_args = 1.., value_parser = parse_kv)]
    gen_args: Vec<(String, String)>,
}

impl Source {
    fn resolve(self) -> InstanceSource {
        match (self.instance, self.gen) {
            (Some(p), _) => InstanceSource::File(p),
            (None, Some(name)) => InstanceSource::Generator { name, args: self.gen_args.into_iter().collect() },
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_algo)]
    algo: Algo,
    #[command(flatten)]
    source: Source,
    /// Seeds as A..B (half-open), A..=B, or a comma list.
    #[arg(long, default_value = "0..1", value_parser = parse_seeds)]
    seeds: Seeds,
    /// Communication-round limit per run; a run hitting it is reported as a timeout.
    #[arg(long)]
    max_rounds: Option<u64>,
    /// Constraint order for seq-cover and seq-pack, comma separated.
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<usize>>,
    /// Directory for runs.{csv,jsonl} and traces.jsonl; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Fill wall_ms (output is then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long, value_parser = parse_algo)]
    algo: Algo,
    #[arg(long)]
    gen: String,
    #[arg(long, num_args = 1.., value_parser = parse_kv)]
    gen_args: Vec<(String, String)>,
    /// Generator argument that takes each size.
    #[arg(long, default_value = "n")]
    size_arg: String,
    /// Further generator arguments set to a multiple of the size, as KEY=FACTOR.
    #[arg(long, num_args = 1.., value_parser = parse_kv)]
    scale_with: Vec<(String, String)>,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    seeds_per_size: u64,
    /// Output CSV file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    gen: String,
    #[arg(long, num_args = 1.., value_parser = parse_kv)]
    gen_args: Vec<(String, String)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    s.parse()
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

#[derive(Clone, Debug, PartialEq)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    if let Some((a, b)) = s.split_once("..=") {
        return Ok(Seeds((num(a)?..=num(b)?).collect()));
    }
    if let Some((a, b)) = s.split_once("..") {
        return Ok(Seeds((num(a)?..num(b)?).collect()));
    }
    s.split(',').map(num).collect::<Result<_, _>>().map(Seeds)
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(args: RunArgs) -> Result<bool> {
    let spec = ExperimentSpec {
        algo: args.algo,
        source: args.source.resolve(),
        seeds: args.seeds.0,
        max_rounds: args.max_rounds,
        order: args.order,
        timing: args.timing,
    };
    let report = run_experiment(&spec)?;
    let ext = match args.format {
        Format::Csv => "csv",
        Format::Jsonl => "jsonl",
    };
    let runs_path = match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Some(dir.join(format!("runs.{ext}")))
        }
        None => None,
    };
    let mut out = output(runs_path.as_ref())?;
    match args.format {
        Format::Csv => report.write_csv(&mut out)?,
        Format::Jsonl => report.write_jsonl(&mut out)?,
    }
    out.flush()?;
    if let Some(dir) = &args.out {
        let mut traces = output(Some(&dir.join("traces.jsonl")))?;
        report.write_traces(&mut traces)?;
        traces.flush()?;
    }
    for r in report.rows.iter().filter(|r| !r.passes()) {
        let why = if !r.terminated { "timed out" } else if !r.feasible { "infeasible" } else { "ratio above rho" };
        eprintln!("seed {}: {why} (cost {}, lower bound {})", r.seed, r.cost_x, r.value_y);
    }
    Ok(report.all_pass())
}

fn scale(args: ScaleArgs) -> Result<bool> {
    let base: BTreeMap<String, String> = args.gen_args.into_iter().collect();
    let factors = args
        .scale_with
        .iter()
        .map(|(k, v)| Ok((k.clone(), v.parse::<f64>().with_context(|| format!("factor for {k}"))?)))
        .collect::<Result<Vec<_>>>()?;
    let mut sizes = args.sizes.clone();
    sizes.sort_unstable();
    let table = scaling_table(args.algo, &sizes, args.seeds_per_size, |n, seed| {
        let mut a = base.clone();
        a.insert(args.size_arg.clone(), n.to_string());
        for (k, f) in &factors {
            a.insert(k.clone(), ((n as f64 * f).round() as usize).to_string());
        }
        generate(&args.gen, &a, seed)
    })?;
    let mut out = output(args.out.as_ref())?;
    writeln!(out, "{}", ScaleRow::csv_header())?;
    for row in &table {
        writeln!(out, "{}", row.csv())?;
    }
    out.flush()?;
    Ok(table.iter().all(|r| r.timeouts == 0 && r.failures == 0))
}

fn gen(args: GenArgs) -> Result<()> {
    let inst = generate(&args.gen, &args.gen_args.into_iter().collect(), args.seed)?;
    let mut out = output(args.out.as_ref())?;
    out.write_all(&write_instance(&inst))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Scale(a) => scale(a),
        Command::Gen(a) => gen(a).map(|()| true),
        Command::Generators => {
            println!("{GENERATORS}");
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
