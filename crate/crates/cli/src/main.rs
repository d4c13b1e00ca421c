//! `mrp`: perceptual distances, 2AFC evaluations and ablation sweeps.
//!
//! Exit codes: 0 ok, 2 usage or input error, 3 dataset ingestion error,
//! 4 weight file error.

mod grid;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mrperceptual::eval::{
    self, grid_to_csv, grid_to_json, grid_to_text, EvalOptions, GridRow, Subsample,
};
use mrperceptual::model::{load_weights, LayerKind, WeightStore};
use mrperceptual::pipeline::{
    compute_metric, parse_blocks, parse_branches, ssim, L2Mode, Metric, MetricConfig,
};
use mrperceptual::{image_io, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_INGESTION: u8 = 3;
const EXIT_WEIGHTS: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "mrp",
    version,
    about = "Deep perceptual image similarity and 2AFC evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distance between two images.
    Distance {
        image_a: PathBuf,
        image_b: PathBuf,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Score one metric on a 2AFC dataset.
    Evaluate {
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score every cell of an ablation grid, sharing forward passes.
    Ablate {
        /// `ablation`, `blocks`, or a JSON grid file.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the architecture, block count and checksum of a weight file.
    InspectWeights {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Args, Debug, Clone)]
struct MetricArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    /// classical, mr, ssim or ablation-1..ablation-9.
    #[arg(long, conflicts_with_all = ["norm", "measure", "branches", "l2_per_location"])]
    preset: Option<String>,
    /// l2, sigmoid or relu_l1.
    #[arg(long)]
    norm: Option<String>,
    /// mse, mae or ce.
    #[arg(long)]
    measure: Option<String>,
    /// Comma-separated branches such as `x1:linear,x1:quadratic,x2:linear`.
    #[arg(long)]
    branches: Option<String>,
    /// Comma-separated 1-based block indices, or `all`.
    #[arg(long)]
    blocks: Option<String>,
    /// L2-normalize each spatial position's channel vector instead of the whole map.
    #[arg(long)]
    l2_per_location: bool,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Triplets kept per category.
    #[arg(long, requires = "seed")]
    subsample: Option<usize>,
    #[arg(long, requires = "subsample")]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Add a generation timestamp to the report.
    #[arg(long)]
    stamp: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
    Text,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> CliResult<T> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

/// Exit code for a library error raised outside weight loading.
fn classify(e: Error) -> Failure {
    let code = match &e {
        Error::Ingestion { .. } => EXIT_INGESTION,
        Error::Format(_) | Error::Corrupt { .. } | Error::Manifest { .. } => EXIT_WEIGHTS,
        _ => EXIT_USAGE,
    };
    Failure {
        code,
        error: e.into(),
    }
}

impl MetricArgs {
    fn metric(&self) -> CliResult<Metric> {
        let mut metric = match (&self.preset, &self.norm, &self.measure) {
            (Some(p), _, _) => Metric::preset(p).map_err(classify)?,
            (None, Some(n), Some(m)) => {
                let branches = parse_branches(self.branches.as_deref().unwrap_or("x1:linear"))
                    .map_err(classify)?;
                let mut c = MetricConfig::new(
                    branches,
                    n.parse().map_err(classify)?,
                    m.parse().map_err(classify)?,
                );
                if self.l2_per_location {
                    c.l2_mode = L2Mode::PerLocation;
                }
                Metric::Deep(c)
            }
            _ => {
                return Err(anyhow!("give --preset, or both --norm and --measure"))
                    .exit_with(EXIT_USAGE);
            }
        };
        if let Some(blocks) = &self.blocks {
            match &mut metric {
                Metric::Deep(c) => c.block_mask = parse_blocks(blocks).map_err(classify)?,
                Metric::Ssim => {
                    return Err(anyhow!("--blocks does not apply to ssim")).exit_with(EXIT_USAGE)
                }
            }
        }
        if let Metric::Deep(c) = &metric {
            c.validate().map_err(classify)?;
        }
        Ok(metric)
    }
}

fn load_store(path: Option<&Path>, needed: bool) -> CliResult<Option<WeightStore>> {
    match path {
        Some(p) => load_weights(p)
            .with_context(|| format!("loading weights {}", p.display()))
            .exit_with(EXIT_WEIGHTS)
            .map(Some),
        None if needed => Err(anyhow!("deep metrics need --weights")).exit_with(EXIT_USAGE),
        None => Ok(None),
    }
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .exit_with(EXIT_USAGE),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn stamp_json(json: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(json).expect("valid report json");
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    v["generated_unix"] = now.into();
    let mut s = serde_json::to_string_pretty(&v).expect("json");
    s.push('\n');
    s
}

fn render(json: String, csv: String, text: String, format: Format, stamp: bool) -> String {
    match (format, stamp) {
        (Format::Json, true) => stamp_json(&json),
        (Format::Json, false) => json,
        (Format::Csv, _) => csv,
        (Format::Text, _) => text,
    }
}

fn load_dataset(root: &Path) -> CliResult<Vec<eval::TripletRecord>> {
    let records = eval::load_2afc(root).map_err(|e| Failure {
        code: EXIT_INGESTION,
        error: anyhow::Error::from(e).context(format!("loading dataset {}", root.display())),
    })?;
    eprintln!("loaded {} triplets from {}", records.len(), root.display());
    Ok(records)
}

fn options(run: &RunArgs) -> EvalOptions {
    EvalOptions {
        subsample: run
            .subsample
            .zip(run.seed)
            .map(|(count, seed)| Subsample { count, seed }),
        workers: run.workers,
    }
}

fn cmd_distance(a: &Path, b: &Path, metric: &MetricArgs, format: Format) -> CliResult<()> {
    let m = metric.metric()?;
    let store = load_store(metric.weights.as_deref(), m.needs_weights())?;
    let img_a = image_io::load_rgb(a).map_err(classify)?;
    let img_b = image_io::load_rgb(b).map_err(classify)?;
    let text = match &m {
        Metric::Ssim => {
            let s = ssim(&img_a, &img_b).map_err(classify)?;
            match format {
                Format::Json => format!(
                    "{}\n",
                    serde_json::json!({"metric": "ssim", "ssim": s, "distance": 1.0 - s})
                ),
                Format::Csv => format!("metric, distance\nssim, {}\n", 1.0 - s),
                Format::Text => format!("metric: ssim\nssim: {s}\ndistance: {}\n", 1.0 - s),
            }
        }
        Metric::Deep(config) => {
            let store = store.as_ref().expect("weights checked above");
            let r = compute_metric(&img_a, &img_b, store, config).map_err(classify)?;
            match format {
                Format::Json => {
                    let v = serde_json::json!({"metric": config.label(), "result": r});
                    format!("{}\n", serde_json::to_string_pretty(&v).expect("json"))
                }
                Format::Csv => {
                    let mut s = String::from("branch, block, distance\n");
                    for br in &r.per_branch {
                        for (b, d) in &br.blocks {
                            s.push_str(&format!("{}, {b}, {d}\n", br.branch));
                        }
                    }
                    s.push_str(&format!("all, all, {}\n", r.distance));
                    s
                }
                Format::Text => {
                    let mut s = format!("metric: {}\ndistance: {}\n", config.label(), r.distance);
                    for br in &r.per_branch {
                        let blocks: Vec<String> = br
                            .blocks
                            .iter()
                            .map(|(b, d)| format!("b{b}={d:.6}"))
                            .collect();
                        s.push_str(&format!(
                            "  {:<13} {:.6}  [{}]\n",
                            br.branch.to_string(),
                            br.distance,
                            blocks.join(" ")
                        ));
                    }
                    s
                }
            }
        }
    };
    emit(&text, None)
}

fn cmd_evaluate(metric: &MetricArgs, run: &RunArgs) -> CliResult<()> {
    let m = metric.metric()?;
    let store = load_store(metric.weights.as_deref(), m.needs_weights())?;
    let records = load_dataset(&run.dataset)?;
    let report = eval::evaluate(&records, store.as_ref(), &m, &options(run)).map_err(classify)?;
    let body = render(
        report.to_json(),
        report.to_csv(),
        report.to_text(),
        run.format,
        run.stamp,
    );
    emit(&body, run.out.as_deref())?;
    if run.out.is_some() {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_ablate(grid_spec: &str, weights: Option<&Path>, run: &RunArgs) -> CliResult<()> {
    let cells = grid::load_grid(grid_spec).exit_with(EXIT_USAGE)?;
    let metrics: Vec<Metric> = cells.iter().map(|c| c.metric.clone()).collect();
    let store = load_store(weights, metrics.iter().any(Metric::needs_weights))?;
    let records = load_dataset(&run.dataset)?;
    eprintln!("evaluating {} grid cells", cells.len());
    let reports =
        eval::evaluate_grid(&records, store.as_ref(), &metrics, &options(run)).map_err(classify)?;
    let rows: Vec<GridRow> = cells
        .into_iter()
        .zip(reports)
        .map(|(c, report)| GridRow {
            name: c.name,
            report,
        })
        .collect();
    let body = render(
        grid_to_json(&rows),
        grid_to_csv(&rows),
        grid_to_text(&rows),
        run.format,
        run.stamp,
    );
    emit(&body, run.out.as_deref())?;
    if run.out.is_some() {
        print!("{}", grid_to_text(&rows));
    }
    Ok(())
}

fn cmd_inspect(path: &Path, format: Format) -> CliResult<()> {
    let store = load_weights(path)
        .with_context(|| format!("loading weights {}", path.display()))
        .exit_with(EXIT_WEIGHTS)?;
    let m = store.manifest();
    if format == Format::Json {
        let v = serde_json::json!({
            "backbone": m.backbone,
            "blocks": store.block_count(),
            "block_channels": store.block_channels(),
            "checksum": format!("{:08x}", store.checksum()),
            "manifest": m,
        });
        return emit(
            &format!("{}\n", serde_json::to_string_pretty(&v).expect("json")),
            None,
        );
    }
    let mut s = format!(
        "backbone: {}\nblocks: {}\nchecksum: {:08x}\ninput channels: {}\nmean: {:?}\nstd: {:?}\nlayers:\n",
        m.backbone,
        store.block_count(),
        store.checksum(),
        m.input_channels,
        m.mean,
        m.std
    );
    for (i, layer) in m.layers.iter().enumerate() {
        let name = layer.name.clone().unwrap_or_else(|| format!("#{i}"));
        let tap = if layer.tap { "  [tap]" } else { "" };
        let desc = match &layer.kind {
            LayerKind::Conv {
                weight,
                bias,
                stride,
                padding,
                ..
            } => {
                let dims = |n: &str| {
                    store
                        .param(n)
                        .map(|a| format!("{:?}", a.dims()))
                        .unwrap_or_default()
                };
                format!(
                    "conv  {weight} {} {bias} {} stride {stride} pad {padding}",
                    dims(weight),
                    dims(bias)
                )
            }
            LayerKind::Relu => "relu".to_string(),
            LayerKind::Maxpool { size, stride } => format!("maxpool {size}x{size} stride {stride}"),
        };
        s.push_str(&format!("  {name:<12} {desc}{tap}\n"));
    }
    emit(&s, None)
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Distance {
            image_a,
            image_b,
            metric,
            format,
        } => cmd_distance(image_a, image_b, metric, *format),
        Command::Evaluate { metric, run } => cmd_evaluate(metric, run),
        Command::Ablate { grid, weights, run } => cmd_ablate(grid, weights.as_deref(), run),
        Command::InspectWeights { path, format } => cmd_inspect(path, *format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
