//! Batch command-line surface: ingestion, fitting, heldout prediction,
//! model-selection grids, synthetic generation, and dataset summaries.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use hypermeso::compute::PhiTables;
use hypermeso::generate::{sample_hypergraph, GenSpec};
use hypermeso::hypergraph::{parse_hyperedges, write_hyperedges, ParseOptions};
use hypermeso::inference::{e_step, fit, heldout_score, EdgeList, FitConfig, HeldoutScore};
use hypermeso::metrics::{auc, pair_rates, relative_gain, MetricReport};
use hypermeso::{Error, Hypergraph, MaskedSplit, ModelParams, PriorSpec, Result, Variant};

#[derive(Parser)]
#[command(
    name = "hypermeso",
    version,
    about = "Mesoscale structure discovery in sparse multi-order hypergraphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write a checkpoint, iteration log, and metrics.
    Fit(FitArgs),
    /// Mask a split and score heldout entries under a checkpoint.
    Predict(PredictArgs),
    /// Recompute interpretation metrics for a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Fit a (C, K) grid on a shared masked split and select the winner.
    Grid(GridArgs),
    /// Sample a synthetic hypergraph from a checkpoint.
    Generate(GenerateArgs),
    /// Print dataset summary statistics as JSON.
    Summarize(SummarizeArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model variant: strict, semi, or omni.
    #[arg(long, default_value = "semi")]
    variant: Variant,
    /// Number of classes.
    #[arg(long = "C", default_value_t = 2)]
    c: usize,
    /// Number of communities (C pure + K - C mixed).
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    /// Largest hyperedge order to keep and model.
    #[arg(long = "max-order")]
    max_order: Option<usize>,
    /// EM iteration cap.
    #[arg(long = "iters", default_value_t = 1000)]
    iters: usize,
    /// Gradient step size for the mixing-matrix update.
    #[arg(long = "step", default_value_t = 1e-6)]
    step: f64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gamma-prior shape for MAP updates.
    #[arg(long = "prior-alpha")]
    prior_alpha: Option<f64>,
    /// Gamma-prior rate for MAP updates.
    #[arg(long = "prior-beta")]
    prior_beta: Option<f64>,
    /// Start pure communities at a low rate.
    #[arg(long)]
    gamma_assortative_init: bool,
}

impl ModelArgs {
    fn fit_config(&self) -> FitConfig {
        let mut config = FitConfig::new(self.variant, self.c, self.k);
        config.max_order = self.max_order;
        config.max_iters = self.iters;
        config.step_size = self.step;
        config.restarts = self.restarts;
        config.seed = self.seed;
        config.gamma_assortative_init = self.gamma_assortative_init;
        if self.prior_alpha.is_some() || self.prior_beta.is_some() {
            config.prior = Some(PriorSpec {
                alpha: self.prior_alpha.unwrap_or(1.0),
                beta: self.prior_beta.unwrap_or(0.0),
            });
        }
        config
    }
}

#[derive(Args)]
struct FitArgs {
    /// Hyperedge text file: one edge per line, whitespace-separated labels.
    input: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct PredictArgs {
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Checkpoint of a baseline model for relative-gain reporting.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long = "mask-seed", default_value_t = 0)]
    mask_seed: u64,
    /// Seed for the zero/nonzero pairing behind the AUC.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-order")]
    max_order: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    input: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Comma-separated class counts to try.
    #[arg(long = "grid-c", value_delimiter = ',', required = true)]
    grid_c: Vec<usize>,
    /// Comma-separated community counts to try.
    #[arg(long = "grid-k", value_delimiter = ',', required = true)]
    grid_k: Vec<usize>,
    #[arg(long = "mask-seed", default_value_t = 0)]
    mask_seed: u64,
    /// Parallel grid cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hard cap on generated events.
    #[arg(long)]
    cap: Option<u64>,
    /// Emit one line per distinct edge with a trailing count column.
    #[arg(long)]
    aggregate: bool,
    /// Source dataset for degree/order/inclusion comparison CSVs.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    input: PathBuf,
}

fn load_graph(path: &Path, max_order: Option<usize>) -> Result<Hypergraph> {
    let file = File::open(path)?;
    let options = ParseOptions {
        max_order: max_order.unwrap_or(64),
        ..ParseOptions::default()
    };
    parse_hyperedges(BufReader::new(file), &options)
}

fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    ModelParams::load_json(BufReader::new(File::open(path)?))
}

fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    params.save_json(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)?;
    Ok(())
}

fn train_metrics(params: &ModelParams, graph: &Hypergraph) -> Result<MetricReport> {
    let edges = EdgeList::from_graph(graph);
    let phi = PhiTables::build(params.mixed_memberships(), params.max_order)?;
    let stats = e_step(&edges, params, &phi);
    Ok(MetricReport::build(params, &edges, &stats, None))
}

fn write_metrics(report: &MetricReport, out: &Path) -> Result<()> {
    write_text(&out.join("metrics.json"), &report.to_json()?)?;
    write_text(&out.join("metrics.csv"), &report.to_csv())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let graph = load_graph(&args.input, args.model.max_order)?;
    let config = args.model.fit_config();
    let result = fit(&graph, &config)?;
    std::fs::create_dir_all(&args.out)?;
    write_checkpoint(&result.params, &args.out.join("checkpoint.json"))?;

    let mut log = String::from("restart\titer\tloglik\tdelta\n");
    for (r, trace) in result.ll_trace.iter().enumerate() {
        let mut prev = None;
        for (t, ll) in trace.iter().enumerate() {
            let delta = prev.map(|p: f64| format!("{:.6}", ll - p)).unwrap_or_default();
            log.push_str(&format!("{r}\t{}\t{ll:.6}\t{delta}\n", t + 1));
            prev = Some(*ll);
        }
    }
    write_text(&args.out.join("fit_log.tsv"), &log)?;
    write_metrics(&train_metrics(&result.params, &graph)?, &args.out)?;
    println!(
        "fit: restart {} of {} selected, loglik {:.6}, {} ms",
        result.best_restart,
        config.restarts,
        result.final_ll,
        result.wall_time_ms
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct PredictReport {
    per_order: BTreeMap<usize, OrderReport>,
    total: f64,
    uniform: f64,
    auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_gain_per_order: Option<BTreeMap<usize, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_gain_total: Option<f64>,
}

#[derive(serde::Serialize)]
struct OrderReport {
    loglik: f64,
    n_test: usize,
    auc: Option<f64>,
}

fn score_with_auc(split: &MaskedSplit, params: &ModelParams, seed: u64) -> (HeldoutScore, PredictReport) {
    let score = heldout_score(split, params);
    let mut per_order = BTreeMap::new();
    let mut all_pairs = Vec::new();
    for (&d, rates) in &score.rates {
        let positive: Vec<f64> =
            rates.iter().filter(|(a, _)| *a > 0).map(|&(_, mu)| mu).collect();
        let zero: Vec<f64> =
            rates.iter().filter(|(a, _)| *a == 0).map(|&(_, mu)| mu).collect();
        let pairs = pair_rates(&positive, &zero, seed.wrapping_add(d as u64));
        let order_auc = auc(&pairs).ok();
        all_pairs.extend(pairs);
        let (ll, n) = score.per_order[&d];
        per_order.insert(d, OrderReport { loglik: ll, n_test: n, auc: order_auc });
    }
    let report = PredictReport {
        per_order,
        total: score.total,
        uniform: score.uniform,
        auc: auc(&all_pairs).ok(),
        relative_gain_per_order: None,
        relative_gain_total: None,
    };
    (score, report)
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let graph = load_graph(&args.input, args.max_order)?;
    let params = load_checkpoint(&args.checkpoint)?;
    let split = graph.mask_split(args.mask_seed)?;
    let (score, mut report) = score_with_auc(&split, &params, args.seed);
    if let Some(base_path) = &args.baseline {
        let base = load_checkpoint(base_path)?;
        let base_score = heldout_score(&split, &base);
        let mut gains = BTreeMap::new();
        for (&d, &(ll, _)) in &score.per_order {
            if let Some(&(base_ll, _)) = base_score.per_order.get(&d) {
                gains.insert(d, relative_gain(ll, base_ll));
            }
        }
        report.relative_gain_total = Some(relative_gain(score.total, base_score.total));
        report.relative_gain_per_order = Some(gains);
    }
    std::fs::create_dir_all(&args.out)?;
    write_text(
        &args.out.join("heldout.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "predict: heldout loglik {:.6}, uniform {:.6}, auc {}",
        report.total,
        report.uniform,
        report.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let graph = load_graph(&args.input, Some(params.max_order))?;
    std::fs::create_dir_all(&args.out)?;
    let report = train_metrics(&params, &graph)?;
    write_metrics(&report, &args.out)?;
    println!("eval: median entropy {:.6}", report.median_entropy);
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let graph = load_graph(&args.input, args.model.max_order)?;
    let split = graph.mask_split(args.mask_seed)?;
    let cells: Vec<(usize, usize)> = args
        .grid_c
        .iter()
        .flat_map(|&c| args.grid_k.iter().map(move |&k| (c, k)))
        .filter(|&(c, k)| c <= k && (args.model.variant != Variant::Strict || c == k))
        .collect();
    if cells.is_empty() {
        return Err(Error::Dimension("grid has no admissible (C, K) cells".into()));
    }

    let results: Mutex<Vec<(usize, usize, Result<(f64, f64, ModelParams)>)>> =
        Mutex::new(Vec::new());
    let queue: Mutex<Vec<(usize, usize)>> = Mutex::new(cells.clone());
    let jobs = args.jobs.max(1).min(cells.len());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let cell = queue.lock().expect("queue lock").pop();
                let Some((c, k)) = cell else { break };
                let mut config = args.model.fit_config();
                config.n_classes = c;
                config.n_communities = k;
                let outcome = fit(&split.train, &config).map(|result| {
                    let score = heldout_score(&split, &result.params);
                    (score.total, score.uniform, result.params)
                });
                results.lock().expect("results lock").push((c, k, outcome));
            });
        }
    });

    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|&(c, k, _)| (c, k));
    let mut winner: Option<(f64, usize, usize, ModelParams)> = None;
    let mut table = String::from("C\tK\tloglik\tloglik_uniform\tstatus\n");
    let mut failures = 0;
    for (c, k, outcome) in results {
        match outcome {
            Ok((total, uniform, params)) => {
                table.push_str(&format!("{c}\t{k}\t{total:.6}\t{uniform:.6}\tok\n"));
                let better = match &winner {
                    None => true,
                    Some((best, bc, bk, _)) => {
                        uniform > *best || (uniform == *best && (c, k) < (*bc, *bk))
                    }
                };
                if better {
                    winner = Some((uniform, c, k, params));
                }
            }
            Err(e) => {
                failures += 1;
                table.push_str(&format!("{c}\t{k}\t\t\tfailed: {e}\n"));
            }
        }
    }
    let Some((best_uniform, best_c, best_k, best_params)) = winner else {
        return Err(Error::Numeric(format!("all {failures} grid cells failed")));
    };
    std::fs::create_dir_all(&args.out)?;
    write_text(&args.out.join("grid.tsv"), &table)?;
    write_checkpoint(&best_params, &args.out.join("best_checkpoint.json"))?;
    write_text(
        &args.out.join("grid_winner.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "c": best_c,
            "k": best_k,
            "loglik_uniform": best_uniform,
        }))?,
    )?;
    println!("grid: selected C={best_c} K={best_k} (uniform loglik {best_uniform:.6})");
    Ok(())
}

fn degree_counts(graph: &Hypergraph) -> Vec<u64> {
    let mut deg = vec![0u64; graph.n_nodes()];
    for (edge, count) in graph.iter() {
        for &i in edge.nodes() {
            deg[i as usize] += count;
        }
    }
    deg
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let spec = GenSpec { params, seed: args.seed, cap: args.cap };
    let graph = sample_hypergraph(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    let mut out = BufWriter::new(File::create(args.out.join("generated.txt"))?);
    write_hyperedges(&graph, &mut out, args.aggregate)?;
    out.flush()?;
    write_text(
        &args.out.join("generated_stats.json"),
        &serde_json::to_string_pretty(&graph.summarize())?,
    )?;

    if let Some(ref_path) = &args.reference {
        let reference = load_graph(ref_path, Some(spec.params.max_order))?;
        let mut degree = String::from("node,reference,generated\n");
        let ref_deg = degree_counts(&reference);
        let gen_deg = degree_counts(&graph);
        for i in 0..reference.n_nodes().max(graph.n_nodes()) {
            degree.push_str(&format!(
                "{i},{},{}\n",
                ref_deg.get(i).copied().unwrap_or(0),
                gen_deg.get(i).copied().unwrap_or(0)
            ));
        }
        write_text(&args.out.join("compare_degree.csv"), &degree)?;

        let mut order = String::from("order,reference,generated\n");
        let d_hi = reference.max_order().max(graph.max_order());
        for d in 2..=d_hi {
            let ref_events: u64 = reference.edges_at(d).map(|(_, c)| c).sum();
            let gen_events: u64 = graph.edges_at(d).map(|(_, c)| c).sum();
            order.push_str(&format!("{d},{ref_events},{gen_events}\n"));
        }
        write_text(&args.out.join("compare_order.csv"), &order)?;

        let mut inclusion = String::from("order,reference,generated\n");
        for d in 2..d_hi {
            inclusion.push_str(&format!(
                "{d},{:.6},{:.6}\n",
                reference.inclusion_occurrences(d, 200, 20, args.seed),
                graph.inclusion_occurrences(d, 200, 20, args.seed)
            ));
        }
        write_text(&args.out.join("compare_inclusion.csv"), &inclusion)?;
    }
    let total: u64 = graph.iter().map(|(_, c)| c).sum();
    println!("generate: {total} events over {} distinct edges", graph.iter().count());
    Ok(())
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let graph = load_graph(&args.input, None)?;
    println!("{}", serde_json::to_string_pretty(&graph.summarize())?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Summarize(args) => cmd_summarize(args),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } | Error::EmptyInput | Error::Dimension(_) => 2,
        Error::Numeric(_) | Error::Sampling(_) => 3,
        Error::Io(_) | Error::Json(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
