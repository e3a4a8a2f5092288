//! The `gaflow` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gaflow_core::attribution::attribute;
use gaflow_core::evaluation::{example_scores, Metric, K_GRID};
use gaflow_core::graph::{build_graph_with, GraphOptions};
use gaflow_core::{
    aggregate, aopc, aso, cls_metrics, compare_directions, lodds, AggregationMode, AsoConfig,
    AttentionBundle, BarrierConfig, BarrierSolver, CapacityScale, DenseTensor, Direction, InfoTensor,
    LayeredGraph, MaskDirection, MaskedRecord,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::formats::{
    parse_records, AttributionJson, FlowJson, GraphJson, NonUniquenessJson, RankingJson,
};
use crate::gaft::{self, TensorArchive};

const FORMATS: &str = "\
Formats:
  GAFT archive    8-byte magic \"GAFT1\\0\\0\\0\", u32 LE manifest length, JSON manifest
                  {\"metadata\":{..},\"tensors\":[{\"name\",\"shape\",\"offset\",\"len\"}]},
                  then little-endian f32 payloads (offset and len in bytes from the
                  payload start). Tensor names: A and gradA [l,h,t,t], info [l,t,t].
                  Metadata keys read: example_id, tokens, mode.
  graph JSON      {\"t\",\"l\",\"direction\",\"gamma\",\"ss\",\"st\",
                   \"edges\":[{\"tail\",\"head\",\"upper\",\"iupper\",\"cost\"}]}
                  the last edge is the st -> ss return edge with cost -1.
  flow JSON       {\"solver\":\"barrier|exact\",\"value\",\"mu_final\",\"residual\",\"flows\"}
  attribution     {\"example_id\",\"mode\",\"layer\",\"scores\",\"tokens\",\"total_flow\"}
  ranking         {\"example_id\",\"order\",\"tokens\",\"scores\"} by descending score,
                  ties broken by ascending token index.
  records JSONL   one {\"example_id\",\"k\",\"direction\":\"top|bottom\",\"p_orig\",
                  \"p_masked\",\"y_hat\",\"y_masked\",\"y_true\"} per line.

Exit codes: 0 success, 1 invalid input or usage, 2 solver did not converge, 3 I/O.";

#[derive(Debug, Parser)]
#[command(name = "gaflow", version, about = "Shapley attributions from attention flow", after_long_help = FORMATS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Average attention (and gradients) over heads into an information tensor.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mode: AggregationMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the layered capacity graph of an archive.
    BuildGraph {
        #[arg(long = "in")]
        input: PathBuf,
        /// Needed when the archive holds raw attention rather than `info`.
        #[arg(long)]
        mode: Option<AggregationMode>,
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the log-barrier circulation problem of a graph.
    Solve {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact maximum flow of a graph (not usable for attribution).
    Maxflow {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = Scale::Integral)]
        scale: Scale,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token attributions, from an archive (or a directory of them) or from
    /// a graph and a barrier flow.
    Attribute(AttributeArgs),
    /// Solve the backward and forward graphs of a seeded uniform tensor exactly.
    DemoNonuniqueness {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        t: usize,
        #[arg(long, default_value_t = 4)]
        l: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AOPC, log-odds and classification metrics per method, plus pairwise
    /// ASO tests. Each JSONL file is one method, named by its file stem.
    Evaluate {
        /// JSONL files or directories of them.
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        num_classes: usize,
        #[command(flatten)]
        aso: AsoArgs,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ASO test of method A over method B on per-example grid means.
    Aso {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "aopc")]
        metric: Metric,
        #[arg(long, default_value = "top")]
        direction: MaskDirection,
        #[command(flatten)]
        aso: AsoArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Integral,
    Real,
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    #[arg(long, default_value = "backward")]
    pub direction: Direction,
    /// Added to every middle capacity; 0 disables smoothing.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon_smooth: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub mu0: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub shrink: f64,
}

impl SolverArgs {
    pub fn solver(&self) -> Result<BarrierSolver> {
        Ok(BarrierSolver::new(BarrierConfig {
            eps: self.eps,
            mu0: self.mu0,
            shrink: self.shrink,
            ..Default::default()
        })?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct AsoArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl AsoArgs {
    fn config(&self) -> AsoConfig {
        AsoConfig {
            alpha: self.alpha,
            tau: self.tau,
            n_bootstrap: self.bootstrap,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AttributeArgs {
    /// A GAFT archive or a directory of `.gaft` files.
    #[arg(long = "in", conflicts_with_all = ["graph", "flow"])]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "flow")]
    pub graph: Option<PathBuf>,
    #[arg(long, requires = "graph")]
    pub flow: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<AggregationMode>,
    #[command(flatten)]
    pub graph_args: GraphArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Node layer to read, 1 being the input tokens.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub ranking_out: Option<PathBuf>,
    /// Worker threads for directory input; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Aggregate { input, mode, out } => {
            let archive = read_archive(&input)?;
            let info = aggregate(&bundle_of(&archive, &input)?, mode)?;
            let mut result = TensorArchive::new();
            result.metadata = archive.metadata.clone();
            result.metadata.insert("mode".into(), Value::from(mode.as_str()));
            result
                .insert(info.values().clone().with_name("info"))
                .map_err(|e| Error::gaft(&out, e))?;
            gaft::write_file(&result, &out).map_err(|e| Error::gaft(&out, e))?;
            Ok(())
        }
        Command::BuildGraph {
            input,
            mode,
            graph,
            out,
        } => {
            let archive = read_archive(&input)?;
            let g = graph_of(&info_of(&archive, &input, mode)?, &graph)?;
            write_json(out.as_deref(), &GraphJson::from_graph(&g))
        }
        Command::Solve { graph, solver, out } => {
            let solver = solver.solver()?;
            let g = read_graph(&graph)?;
            let sol = solver.solve(&gaflow_core::to_circulation(&g))?;
            write_json(out.as_deref(), &FlowJson::from_solution(&sol))
        }
        Command::Maxflow { graph, scale, out } => {
            let g = read_graph(&graph)?;
            let scale = match scale {
                Scale::Integral => CapacityScale::Integral,
                Scale::Real => CapacityScale::Real,
            };
            let sol = gaflow_core::max_flow_exact(&g, scale);
            write_json(out.as_deref(), &FlowJson::from_solution(&sol))
        }
        Command::Attribute(args) => run_attribute(&args),
        Command::DemoNonuniqueness { seed, t, l, out } => {
            let info = gaflow_core::synthetic::uniform_info_tensor(seed, l, t)?;
            let report = compare_directions(&info)?;
            write_json(out.as_deref(), &NonUniquenessJson::from(&report))
        }
        Command::Evaluate {
            records,
            num_classes,
            aso,
            jobs,
            out,
        } => {
            let config = aso.config();
            config.validate()?;
            let files = collect_files(&records, "jsonl")?;
            let mut methods = BTreeMap::new();
            for path in files {
                let name = stem(&path);
                let recs = read_records(&path)?;
                if methods.insert(name.clone(), recs).is_some() {
                    return Err(Error::invalid(format!("two record files define method {name}")));
                }
            }
            let report = pool(jobs)?.install(|| evaluate(&methods, num_classes, &config))?;
            write_json(out.as_deref(), &report)
        }
        Command::Aso {
            a,
            b,
            metric,
            direction,
            aso,
            out,
        } => {
            let config = aso.config();
            let entry = aso_entry(
                (&stem(&a), &read_records(&a)?),
                (&stem(&b), &read_records(&b)?),
                metric,
                direction,
                &config,
            )?;
            write_json(out.as_deref(), &entry)
        }
    }
}

fn run_attribute(args: &AttributeArgs) -> Result<()> {
    let solver = args.solver.solver()?;
    if let (Some(graph), Some(flow)) = (&args.graph, &args.flow) {
        let g = read_graph(graph)?;
        let sol = read_json::<FlowJson>(flow)?.to_solution()?;
        let a = attribute(&sol, &g, args.layer, args.normalize)?;
        let mode = args.mode.unwrap_or(AggregationMode::Af);
        let tokens = (0..g.tokens()).map(|i| i.to_string()).collect();
        let json = AttributionJson::new(stem(flow), mode, tokens, &a);
        return emit_attribution(&json, args.out.as_deref(), args.ranking_out.as_deref());
    }
    let input = args
        .input
        .as_ref()
        .ok_or_else(|| Error::invalid("attribute needs --in, or --graph with --flow"))?;
    if !input.is_dir() {
        let json = attribute_file(input, args, &solver)?;
        return emit_attribution(&json, args.out.as_deref(), args.ranking_out.as_deref());
    }
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| Error::invalid("--out must name a directory when --in is a directory"))?;
    let files = collect_files(std::slice::from_ref(input), "gaft")?;
    for dir in std::iter::once(out).chain(args.ranking_out.as_ref()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    pool(args.jobs)?.install(|| {
        files.par_iter().try_for_each(|path| {
            let json = attribute_file(path, args, &solver)?;
            let name = format!("{}.json", stem(path));
            let ranking = args.ranking_out.as_ref().map(|d| d.join(&name));
            emit_attribution(&json, Some(&out.join(&name)), ranking.as_deref())
        })
    })
}

fn attribute_file(path: &Path, args: &AttributeArgs, solver: &BarrierSolver) -> Result<AttributionJson> {
    let archive = read_archive(path)?;
    attribute_archive(&archive, &stem(path), args.mode, &args.graph_args, solver, args.layer, args.normalize)
}

/// Runs aggregation, graph construction, the barrier solve and attribution
/// on one archive. `fallback_id` is used when the metadata has no
/// `example_id`.
pub fn attribute_archive(
    archive: &TensorArchive,
    fallback_id: &str,
    mode: Option<AggregationMode>,
    graph: &GraphArgs,
    solver: &BarrierSolver,
    layer: usize,
    normalize: bool,
) -> Result<AttributionJson> {
    let info = info_of(archive, Path::new(fallback_id), mode)?;
    let g = graph_of(&info, graph)?;
    let sol = solver.solve(&gaflow_core::to_circulation(&g))?;
    let a = attribute(&sol, &g, layer, normalize)?;
    let tokens = match archive.metadata.get("tokens") {
        Some(Value::Array(items)) => {
            let tokens: Option<Vec<String>> = items.iter().map(|v| v.as_str().map(str::to_owned)).collect();
            match tokens {
                Some(t) if t.len() == g.tokens() => t,
                _ => {
                    return Err(Error::invalid(format!(
                        "metadata tokens must be {} strings",
                        g.tokens()
                    )))
                }
            }
        }
        Some(_) => return Err(Error::invalid("metadata tokens must be an array")),
        None => (0..g.tokens()).map(|i| i.to_string()).collect(),
    };
    let id = archive.metadata_str("example_id").unwrap_or(fallback_id).to_owned();
    Ok(AttributionJson::new(id, info.mode(), tokens, &a))
}

fn emit_attribution(json: &AttributionJson, out: Option<&Path>, ranking: Option<&Path>) -> Result<()> {
    write_json(out, json)?;
    if let Some(path) = ranking {
        write_json(Some(path), &RankingJson::from_attribution(json))?;
    }
    Ok(())
}

fn bundle_of(archive: &TensorArchive, path: &Path) -> Result<AttentionBundle> {
    let weights = archive
        .get("A")
        .ok_or_else(|| Error::invalid(format!("{}: archive has no tensor A", path.display())))?;
    Ok(AttentionBundle::new(weights.clone(), archive.get("gradA").cloned())?)
}

/// The information tensor of an archive: its `info` tensor when present,
/// otherwise the aggregation of `A` (and `gradA`) under `mode`.
fn info_of(archive: &TensorArchive, path: &Path, mode: Option<AggregationMode>) -> Result<InfoTensor> {
    if let Some(info) = archive.get("info") {
        let stored = archive.metadata_str("mode").map(str::parse::<AggregationMode>).transpose()?;
        let mode = match (stored, mode) {
            (Some(s), Some(m)) if s != m => {
                return Err(Error::invalid(format!(
                    "{}: archive was aggregated with mode {s}, not {m}",
                    path.display()
                )))
            }
            (s, m) => s.or(m).unwrap_or(AggregationMode::Af),
        };
        return Ok(InfoTensor::new(info.clone(), mode)?);
    }
    let mode = mode.ok_or_else(|| Error::invalid("--mode is required to aggregate raw attention"))?;
    Ok(aggregate(&bundle_of(archive, path)?, mode)?)
}

fn graph_of(info: &InfoTensor, args: &GraphArgs) -> Result<LayeredGraph> {
    if !(args.epsilon_smooth >= 0.0 && args.epsilon_smooth.is_finite()) {
        return Err(Error::invalid("epsilon-smooth must be a finite non-negative number"));
    }
    Ok(build_graph_with(
        info,
        args.direction,
        GraphOptions {
            epsilon_smooth: args.epsilon_smooth,
        },
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub methods: Vec<MethodReport>,
    pub aso: Vec<AsoEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub direction: String,
    pub per_k: Vec<CellReport>,
    pub grid_mean: GridMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub k: u32,
    pub n: usize,
    pub aopc: f64,
    pub lodds: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridMean {
    pub aopc: f64,
    pub lodds: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsoEntry {
    pub method_a: String,
    pub method_b: String,
    pub metric: String,
    pub direction: String,
    pub eps_min: f64,
    pub eps_hat: f64,
    pub reject_h0: bool,
}

const DIRECTIONS: [MaskDirection; 2] = [MaskDirection::Top, MaskDirection::Bottom];

/// Metrics for every method and direction present, and the ASO test for
/// every ordered pair of methods on both metrics.
pub fn evaluate(
    methods: &BTreeMap<String, Vec<MaskedRecord>>,
    num_classes: usize,
    config: &AsoConfig,
) -> Result<EvaluationReport> {
    let mut reports = Vec::new();
    for (name, records) in methods {
        for direction in DIRECTIONS {
            let mut per_k = Vec::new();
            for k in K_GRID {
                let cell: Vec<MaskedRecord> =
                    records.iter().filter(|r| r.k == k && r.direction == direction).cloned().collect();
                if cell.is_empty() {
                    continue;
                }
                let cls = cls_metrics(&cell, num_classes)?;
                per_k.push(CellReport {
                    k,
                    n: cell.len(),
                    aopc: aopc(&cell, k)?,
                    lodds: lodds(&cell, k)?,
                    accuracy: cls.accuracy,
                    precision: cls.precision,
                    recall: cls.recall,
                    f1: cls.f1,
                    zero_division: cls.zero_division,
                });
            }
            if per_k.is_empty() {
                continue;
            }
            let mean = |f: fn(&CellReport) -> f64| per_k.iter().map(f).sum::<f64>() / per_k.len() as f64;
            let grid_mean = GridMean {
                aopc: mean(|c| c.aopc),
                lodds: mean(|c| c.lodds),
                accuracy: mean(|c| c.accuracy),
                precision: mean(|c| c.precision),
                recall: mean(|c| c.recall),
                f1: mean(|c| c.f1),
            };
            reports.push(MethodReport {
                method: name.clone(),
                direction: direction.as_str().into(),
                per_k,
                grid_mean,
            });
        }
    }

    let mut cells = Vec::new();
    for (a, ra) in methods {
        for (b, rb) in methods {
            if a == b {
                continue;
            }
            for direction in DIRECTIONS {
                let present = |r: &[MaskedRecord]| r.iter().any(|x| x.direction == direction);
                if present(ra) && present(rb) {
                    for metric in [Metric::Aopc, Metric::Lodds] {
                        cells.push(((a, ra), (b, rb), metric, direction));
                    }
                }
            }
        }
    }
    let aso = cells
        .par_iter()
        .map(|&((a, ra), (b, rb), metric, direction)| {
            aso_entry((a, ra), (b, rb), metric, direction, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport { methods: reports, aso })
}

fn aso_entry(
    (a, ra): (&str, &[MaskedRecord]),
    (b, rb): (&str, &[MaskedRecord]),
    metric: Metric,
    direction: MaskDirection,
    config: &AsoConfig,
) -> Result<AsoEntry> {
    let scores = |r: &[MaskedRecord]| -> Result<Vec<f64>> {
        Ok(example_scores(r, metric, direction)?.into_iter().map(|(_, s)| s).collect())
    };
    let r = aso(&scores(ra)?, &scores(rb)?, config)?;
    Ok(AsoEntry {
        method_a: a.into(),
        method_b: b.into(),
        metric: metric.as_str().into(),
        direction: direction.as_str().into(),
        eps_min: r.eps_min,
        eps_hat: r.eps_hat,
        reject_h0: r.reject_h0,
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Files with extension `ext`: each path itself, or the sorted matching
/// entries of a directory.
fn collect_files(paths: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for path in paths {
        if !path.is_dir() {
            out.push(path.clone());
            continue;
        }
        let mut found = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if p.is_file() && p.extension().is_some_and(|x| x == ext) {
                found.push(p);
            }
        }
        if found.is_empty() {
            return Err(Error::invalid(format!("{}: no .{ext} files", path.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn read_archive(path: &Path) -> Result<TensorArchive> {
    gaft::read_file(path).map_err(|e| Error::gaft(path, e))
}

fn read_graph(path: &Path) -> Result<LayeredGraph> {
    read_json::<GraphJson>(path)?.to_graph()
}

fn read_records(path: &Path) -> Result<Vec<MaskedRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// Pretty JSON to `path`, or to stdout when no path is given.
fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Builds a bundle archive from raw tensors, as the model adapter would.
pub fn bundle_archive(
    weights: DenseTensor,
    grads: Option<DenseTensor>,
    metadata: BTreeMap<String, Value>,
) -> Result<TensorArchive> {
    let mut archive = TensorArchive::new();
    archive.metadata = metadata;
    let to_err = |e| Error::invalid(format!("{e}"));
    archive.insert(weights.with_name("A")).map_err(to_err)?;
    if let Some(g) = grads {
        archive.insert(g.with_name("gradA")).map_err(to_err)?;
    }
    Ok(archive)
}
