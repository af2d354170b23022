use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use nano_infer::backend::{Backend, CpuBackend, MemoryMode, Session, SimBackend};
use nano_infer::bench::{benchmark, output_hash};
use nano_infer::compare::compare_schemes;
use nano_infer::graph::{fuse, load_model, save_model, Graph};
use nano_infer::preinference::{pre_infer, BackendPolicy, BackendProfile, CostModel, PlanOptions};
use nano_infer::presets::{preset, random_input, PRESETS};
use nano_infer::tensor::{Layout, Tensor};
use nano_infer::winograd::{generate_transforms, DEFAULT_SPACING};

/// Outputs with more elements than this are summarised by hash only in JSON.
const MAX_PRINTED_VALUES: usize = 4096;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Engine(#[from] nano_infer::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "nano-infer", version, about = "Desk-scale inference engine with semi-automated search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic preset model.
    Gen(GenArgs),
    /// Benchmark a model: warm-up, then timed runs on one session.
    Run(RunArgs),
    /// Run every conv under each applicable scheme and report deviations.
    Compare(CompareArgs),
    /// Print the Winograd A, B, G matrices as JSON.
    WinogradDump(WinogradArgs),
    /// Print the execution plan as JSON.
    DumpPlan(PlanArgs),
}

#[derive(Args)]
struct GenArgs {
    /// One of mobilenet-mini, squeezenet-mini, resnet-mini, inception-mini.
    preset: String,
    #[arg(long, short, visible_alias = "model")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Cpu,
    Sim,
    Auto,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    #[arg(long, value_enum, default_value_t = BackendArg::Auto)]
    backend: BackendArg,
    /// JSON of `{name: {flops, t_schedule_ms}}` overriding the built-in table.
    #[arg(long)]
    cost_model: Option<PathBuf>,
    /// Winograd interpolation point spacing.
    #[arg(long = "f", default_value_t = DEFAULT_SPACING)]
    spacing: f64,
}

#[derive(Args)]
struct InputArgs {
    /// Raw little-endian f32 NCHW, graph inputs back to back.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Seed of the uniform input used when no file is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Also emit the execution plan.
    #[arg(long)]
    dump_plan: bool,
    /// Write the outputs as raw little-endian f32.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    /// Timed repetitions per scheme.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long = "f", default_value_t = DEFAULT_SPACING)]
    spacing: f64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct WinogradArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_SPACING)]
    f: f64,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load(path: &Path) -> Result<Graph> {
    Ok(load_model(&read(path)?)?)
}

fn inputs(g: &Graph, args: &InputArgs) -> Result<Vec<Tensor>> {
    let shapes: Vec<_> = g.inputs().iter().map(|&t| g.shape(t).clone()).collect();
    let Some(path) = &args.input else {
        return Ok(shapes
            .iter()
            .enumerate()
            .map(|(i, s)| random_input(s, args.seed.wrapping_add(i as u64)))
            .collect());
    };
    let bytes = read(path)?;
    let want: usize = shapes.iter().map(|s| s.element_count() * 4).sum();
    if bytes.len() != want {
        return Err(CliError::Input(format!(
            "{} holds {} bytes, the model expects {want}",
            path.display(),
            bytes.len()
        )));
    }
    let mut floats = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    shapes
        .into_iter()
        .map(|s| {
            let data = floats.by_ref().take(s.element_count()).collect();
            Ok(Tensor::from_vec(s, Layout::Nchw, data)?)
        })
        .collect()
}

fn cost_model(path: Option<&Path>) -> Result<CostModel> {
    match path {
        Some(p) => Ok(CostModel::from_json(&String::from_utf8_lossy(&read(p)?))?),
        None => Ok(CostModel::default()),
    }
}

fn backends(args: &PlanArgs) -> Result<(Vec<Box<dyn Backend>>, BackendPolicy)> {
    let costs = cost_model(args.cost_model.as_deref())?;
    let default = CostModel::default();
    let cost = |name: &str| {
        costs
            .get(name)
            .or_else(|| default.get(name))
            .copied()
            .expect("built-in table has cpu and sim")
    };
    let cpu: Box<dyn Backend> = Box::new(CpuBackend::with_cost(cost("cpu"), MemoryMode::Pooled));
    if args.backend == BackendArg::Cpu {
        return Ok((vec![cpu], BackendPolicy::Force(0)));
    }
    let sim = SimBackend::with_profile(BackendProfile::all_kinds("sim", cost("sim")), MemoryMode::Pooled);
    let policy = match args.backend {
        BackendArg::Sim => BackendPolicy::Force(1),
        _ => BackendPolicy::Auto,
    };
    Ok((vec![cpu, Box::new(sim)], policy))
}

fn options(args: &PlanArgs, policy: BackendPolicy) -> PlanOptions {
    PlanOptions {
        threads: args.threads as usize,
        spacing: args.spacing,
        policy,
        ..PlanOptions::default()
    }
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let g = preset(&args.preset, args.seed)?;
    let bytes = save_model(&g)?;
    write(&args.out, &bytes)?;
    println!("wrote {} ({} nodes, {} bytes)", args.out.display(), g.nodes().len(), bytes.len());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let g = fuse(&load(&args.plan.model)?)?;
    let xs = inputs(&g, &args.input)?;
    let (backends, policy) = backends(&args.plan)?;
    let mut session = Session::build(g, backends, options(&args.plan, policy))?;
    info!("session ready, pool {} bytes", session.plan().pool_size());
    let (report, outputs) = benchmark(&mut session, &xs, args.runs, args.warmup)?;
    if let Some(path) = &args.output {
        let bytes: Vec<u8> = outputs.iter().flat_map(|t| t.data()).flat_map(|v| v.to_le_bytes()).collect();
        write(path, &bytes)?;
    }
    let g = session.plan().graph();
    let names: Vec<&str> = g.outputs().iter().map(|&t| g.tensor(t).name.as_str()).collect();
    match args.format {
        Format::Json => {
            let outs: Vec<Value> = names
                .iter()
                .zip(&outputs)
                .map(|(name, t)| {
                    let mut o = json!({
                        "name": name,
                        "shape": t.shape().dims(),
                        "hash": output_hash(std::slice::from_ref(t)),
                    });
                    if t.data().len() <= MAX_PRINTED_VALUES {
                        o["values"] = json!(t.data());
                    }
                    o
                })
                .collect();
            let mut v = json!({ "report": report, "outputs": outs });
            if args.dump_plan {
                v["plan"] = session.plan().dump();
            }
            print_json(&v)?;
        }
        Format::Table => {
            if args.dump_plan {
                print_json(&session.plan().dump())?;
            }
            println!("{}", report.table());
            for (name, t) in names.iter().zip(&outputs) {
                let top = t.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1));
                match top {
                    Some((i, v)) => println!("output       {name} {} argmax {i} ({v:.4})", t.shape()),
                    None => println!("output       {name} {}", t.shape()),
                }
            }
        }
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let g = load(&args.model)?;
    let xs = inputs(&g, &args.input)?;
    let report = compare_schemes(&g, &xs, args.threads as usize, args.spacing, args.runs)?;
    match args.format {
        Format::Json => print_json(&serde_json::to_value(&report)?),
        Format::Table => {
            println!("{}", report.table());
            Ok(())
        }
    }
}

fn winograd_dump(args: WinogradArgs) -> Result<()> {
    let t = generate_transforms(args.n, args.k, args.f)?;
    let rows = |m: &[f64], cols: usize| m.chunks(cols).map(<[f64]>::to_vec).collect::<Vec<_>>();
    print_json(&json!({
        "n": t.n,
        "k": t.k,
        "alpha": t.alpha,
        "f": t.f,
        "A": rows(&t.a, t.n),
        "B": rows(&t.b, t.alpha),
        "G": rows(&t.g, t.k),
    }))
}

fn dump_plan(args: PlanArgs) -> Result<()> {
    let g = fuse(&load(&args.model)?)?;
    let (backends, policy) = backends(&args)?;
    let profiles: Vec<BackendProfile> = backends.iter().map(|b| b.profile().clone()).collect();
    let plan = pre_infer(g, &profiles, options(&args, policy))?;
    print_json(&plan.dump())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NANO_INFER_LOG", "error"))
        .format_timestamp(None)
        .init();
    let result = match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::WinogradDump(a) => winograd_dump(a),
        Command::DumpPlan(a) => dump_plan(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Engine(nano_infer::Error::UnknownPreset(_)) = e {
                eprintln!("error: {e} (known: {})", PRESETS.join(", "));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}
