// SPDX-License-Identifier: MIT OR Apache-2.0

//! `relprobe` command-line interface.
//!
//! Exit status: 0 on success, 1 when a dataset fails validation or a command
//! fails at run time, 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use relprobe_core::analysis::{
    compare_paraphrases, dataset_split, layer_sweep, lda_project, lre_grid_search,
    max_prob_histogram, percent_normalize, GridSpec, SweepConfig, SweepResult,
};
use relprobe_core::dataset::{load_dataset, save_dataset, ProbeDataset};
use relprobe_core::kernel::{css, kl_divergence, softmax};
use relprobe_core::probes::{
    evaluate_lre, evaluate_probe, load_probe, lre_build_from_payload, save_lre, save_probe,
    train_klrp, train_random_baseline, train_weak_probe, TrainConfig,
};
use relprobe_core::report::{
    render_histogram, render_layer_curves, render_scatter, render_ternary, ColorScale, DatasetRef,
    ReportBundle, RunManifest, Table, TableFormat,
};
use relprobe_core::synth::{generate, oracle_best_constant_kl, SynthKind, SynthSpec};
use relprobe_core::{Error, ProbeKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "relprobe", version, about = "Relational linearity probing")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "RELPROBE_THREADS")]
    threads: Option<usize>,
    /// Seed for splits, shuffles and generators (subcommands may override).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a dataset directory and check every invariant.
    Validate { dir: PathBuf },
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train one probe and store it.
    Train(TrainArgs),
    /// Train and evaluate probes at several layers.
    Sweep(SweepArgs),
    /// Grid search over LRE hyper-parameters.
    LreGrid(GridArgs),
    /// Random-permutation baseline.
    Baseline(BaselineArgs),
    /// Compare KL probes trained on several paraphrase datasets.
    Paraphrase(ParaphraseArgs),
    /// Print the collapse-on-simplex score of a dataset.
    Css {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Re-emit tables and figures from stored sweep results.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TrainingFlags {
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl TrainingFlags {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            cfg.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        cfg
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_from_str::<SynthKind>)]
    kind: SynthKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    /// Logit noise standard deviation (planted_linear).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Add a pure-noise layer 1.
    #[arg(long)]
    decoy: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    layer: usize,
    #[arg(long, value_parser = parse_from_str::<ProbeKind>)]
    kind: ProbeKind,
    #[command(flatten)]
    training: TrainingFlags,
    /// LRE scale on the Jacobian term.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// LRE rank; defaults to the hidden size.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "klrp", value_parser = parse_from_str::<ProbeKind>)]
    kinds: Vec<ProbeKind>,
    #[command(flatten)]
    training: TrainingFlags,
    #[arg(short = 'f', long, default_value = "csv", value_parser = parse_from_str::<TableFormat>)]
    format: TableFormat,
    /// Also write per-metric percent-normalized tables.
    #[arg(long)]
    percent: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3,3.5,4,4.5,5")]
    betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,100")]
    rhos: Vec<usize>,
    #[arg(short = 'f', long, default_value = "csv", value_parser = parse_from_str::<TableFormat>)]
    format: TableFormat,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    layer: usize,
    #[command(flatten)]
    training: TrainingFlags,
    #[arg(short = 'f', long, default_value = "csv", value_parser = parse_from_str::<TableFormat>)]
    format: TableFormat,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ParaphraseArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    layer: usize,
    #[command(flatten)]
    training: TrainingFlags,
    #[arg(short = 'f', long, default_value = "csv", value_parser = parse_from_str::<TableFormat>)]
    format: TableFormat,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `sweep.json` written by `sweep`.
    #[arg(long)]
    results: PathBuf,
    #[arg(short = 'f', long, default_value = "csv", value_parser = parse_from_str::<TableFormat>)]
    format: TableFormat,
    /// Also render figures.
    #[arg(long)]
    figures: bool,
    /// Dataset for the LDA, simplex and histogram figures.
    #[arg(long, requires = "figures")]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Probe whose per-example divergence colours the points.
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long, default_value_t = relprobe_core::report::DEFAULT_COLOR_CEILING)]
    color_ceiling: f64,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(short, long)]
    output: PathBuf,
}

fn parse_from_str<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

/// Failure of a command, mapped to an exit status.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(_)
            | Error::Probability { .. }
            | Error::Checksum { .. }
            | Error::Shape { .. }
            | Error::Manifest { .. }
            | Error::MissingFile(_) => Failure::Validation(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

struct Ctx {
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let ctx = Ctx {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command, &ctx)),
            Err(e) => Err(Failure::Runtime(e.to_string())),
        },
        None => dispatch(cli.command, &ctx),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            EXIT_FAILURE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command, ctx: &Ctx) -> CmdResult {
    match command {
        Command::Validate { dir } => cmd_validate(&dir),
        Command::Synth(a) => cmd_synth(a, ctx),
        Command::Train(a) => cmd_train(a, ctx),
        Command::Sweep(a) => cmd_sweep(a, ctx),
        Command::LreGrid(a) => cmd_grid(a, ctx),
        Command::Baseline(a) => cmd_baseline(a, ctx),
        Command::Paraphrase(a) => cmd_paraphrase(a, ctx),
        Command::Css { dataset } => cmd_css(&dataset),
        Command::Report(a) => cmd_report(a, ctx),
    }
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load(path: &Path, ctx: &Ctx) -> Result<ProbeDataset, Failure> {
    ctx.note(format_args!("loading {}", path.display()));
    Ok(load_dataset(path)?)
}

fn manifest_for(command: &str, config: serde_json::Value, ctx: &Ctx) -> RunManifest {
    RunManifest::new(command, config).with_seed("global", ctx.seed)
}

fn print_table(table: &Table, format: TableFormat) {
    print!("{}", table.render(format));
}

fn cmd_validate(dir: &Path) -> CmdResult {
    let ds = load_dataset(dir)?;
    println!(
        "ok: {} examples, d = {}, k = {}, layers {:?}",
        ds.num_examples(),
        ds.hidden_dim(),
        ds.k(),
        ds.manifest.layer_indices
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs, ctx: &Ctx) -> CmdResult {
    let mut spec = SynthSpec::new(a.kind, a.n, a.d, a.k, ctx.seed).with_noise(a.noise);
    if a.decoy {
        spec = spec.with_decoy();
    }
    let (ds, oracle) = generate(&spec)?;
    save_dataset(&ds, &a.output)?;
    let oracle_json = json!({
        "expected_css": oracle.expected_css,
        "best_constant_kl": oracle.best_constant_kl,
        "linear_f1_ceiling": oracle.linear_f1_ceiling,
    });
    let text = serde_json::to_string_pretty(&oracle_json).map_err(runtime)? + "\n";
    std::fs::write(a.output.join("oracle.json"), text).map_err(runtime)?;
    if let Some(probe) = &oracle.planted_probe {
        save_probe(probe, ProbeKind::Klrp, None, a.output.join("planted_probe"))?;
    }
    let manifest = manifest_for(
        "synth",
        json!({"kind": a.kind.as_str(), "n": a.n, "d": a.d, "k": a.k, "noise": a.noise, "decoy": a.decoy}),
        ctx,
    )
    .with_seed("generator", ctx.seed)
    .with_dataset(DatasetRef::new(&a.output, &ds));
    manifest.write(&a.output)?;
    ctx.note(format_args!("wrote {}", a.output.display()));
    Ok(())
}

fn cmd_train(a: TrainArgs, ctx: &Ctx) -> CmdResult {
    let ds = load(&a.dataset, ctx)?;
    let split = dataset_split(&ds)?;
    let (record, config) = match a.kind {
        ProbeKind::Lre => {
            let rank = a.rank.unwrap_or(ds.hidden_dim());
            let op = lre_build_from_payload(&ds, a.layer, a.beta, rank, None)?;
            save_lre(&op, &a.output)?;
            (evaluate_lre(&op, &ds, &split.eval)?, json!({"beta": a.beta, "rank": rank}))
        }
        kind => {
            let base = if kind == ProbeKind::Weak { TrainConfig::weak() } else { TrainConfig::klrp() };
            let cfg = a.training.apply(base).with_seed(ctx.seed);
            let (probe, record) = match kind {
                ProbeKind::Weak => {
                    let fit = train_weak_probe(&ds, a.layer, &split, &cfg)?;
                    for w in &fit.warnings {
                        ctx.note(format_args!("warning: {w}"));
                    }
                    let record = evaluate_probe(&fit.probe, &ds, &split.eval, kind)?;
                    (fit.probe, record)
                }
                ProbeKind::Random => {
                    let (fit, record) = train_random_baseline(&ds, a.layer, &split, &cfg, ctx.seed)?;
                    (fit.probe, record)
                }
                _ => {
                    let fit = train_klrp(&ds, a.layer, &split, &cfg)?;
                    let record = evaluate_probe(&fit.probe, &ds, &split.eval, kind)?;
                    (fit.probe, record)
                }
            };
            save_probe(&probe, kind, Some(&cfg), &a.output)?;
            (record, serde_json::to_value(&cfg).map_err(runtime)?)
        }
    };
    let mut bundle = ReportBundle::new(
        manifest_for("train", json!({"layer": a.layer, "kind": a.kind.as_str(), "train": config}), ctx)
            .with_seed("split", ds.manifest.split_seed)
            .with_dataset(DatasetRef::new(&a.dataset, &ds)),
    );
    let table = Table::from_metrics("metrics", &[record]);
    print_table(&table, TableFormat::Csv);
    bundle.tables.push(table);
    bundle.write(&a.output, TableFormat::Json)?;
    Ok(())
}

fn sweep_config(training: &TrainingFlags) -> SweepConfig {
    let mut cfg = SweepConfig::default();
    cfg.klrp = training.apply(cfg.klrp);
    cfg.weak = training.apply(cfg.weak);
    cfg
}

fn cmd_sweep(a: SweepArgs, ctx: &Ctx) -> CmdResult {
    let ds = load(&a.dataset, ctx)?;
    let cfg = sweep_config(&a.training);
    ctx.note(format_args!("sweeping layers {:?}", a.layers));
    let result = layer_sweep(&ds, &a.layers, &a.kinds, &cfg, ctx.seed)?;
    let kinds: Vec<&str> = a.kinds.iter().map(|k| k.as_str()).collect();
    let mut bundle = ReportBundle::new(
        manifest_for(
            "sweep",
            json!({"layers": a.layers, "kinds": kinds, "sweep": serde_json::to_value(&cfg).map_err(runtime)?}),
            ctx,
        )
        .with_seed("split", ds.manifest.split_seed)
        .with_seed("training", ctx.seed)
        .with_dataset(DatasetRef::new(&a.dataset, &ds)),
    );
    let table = Table::from_metrics("metrics", &result.rows);
    print_table(&table, TableFormat::Csv);
    bundle.tables.push(table);
    if a.percent {
        let (pct, _) = percent_normalize(&result);
        bundle.tables.push(Table::from_metrics("metrics_percent", &pct.rows));
    }
    bundle
        .figures
        .push(("layer_curves".into(), render_layer_curves(&result, "Layer sweep")));
    bundle.write(&a.output, a.format)?;
    write_json(&a.output.join("sweep.json"), &serde_json::to_value(&result).map_err(runtime)?)?;
    ctx.note(format_args!("wrote {}", a.output.display()));
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(runtime)? + "\n";
    relprobe_core::dataset::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn cmd_grid(a: GridArgs, ctx: &Ctx) -> CmdResult {
    let ds = load(&a.dataset, ctx)?;
    let grid = GridSpec {
        betas: a.betas.clone(),
        ranks: a.rhos.clone(),
        ..GridSpec::with_layers(a.layers.clone())
    };
    let result = lre_grid_search(&ds, &grid)?;
    let table = Table::from_grid("lre_grid", &result);
    print_table(&table, TableFormat::Csv);
    ctx.note(format_args!(
        "best: layer {} beta {} rank {} F1(LLM) {:.4} d_KL {:.4}",
        result.best.layer, result.best.beta, result.best.rank, result.best.f1_llm, result.best.d_kl
    ));
    if let Some(out) = &a.output {
        let mut bundle = ReportBundle::new(
            manifest_for("lre-grid", serde_json::to_value(&grid).map_err(runtime)?, ctx)
                .with_seed("split", ds.manifest.split_seed)
                .with_dataset(DatasetRef::new(&a.dataset, &ds)),
        );
        bundle.tables.push(table);
        bundle.write(out, a.format)?;
    }
    Ok(())
}

fn cmd_baseline(a: BaselineArgs, ctx: &Ctx) -> CmdResult {
    let ds = load(&a.dataset, ctx)?;
    let split = dataset_split(&ds)?;
    let cfg = a.training.apply(TrainConfig::klrp()).with_seed(ctx.seed);
    let (_, record) = train_random_baseline(&ds, a.layer, &split, &cfg, ctx.seed)?;
    let refs = ds.reference_distributions();
    let eval_refs: Vec<_> = split.eval.iter().map(|&i| refs[i].clone()).collect();
    let best = oracle_best_constant_kl(&eval_refs)?;
    let table = Table::from_metrics("baseline", &[record]);
    print_table(&table, TableFormat::Csv);
    ctx.note(format_args!("best constant predictor d_KL on eval: {best:.6}"));
    if let Some(out) = &a.output {
        let mut bundle = ReportBundle::new(
            manifest_for("baseline", json!({"layer": a.layer, "train": serde_json::to_value(&cfg).map_err(runtime)?}), ctx)
                .with_seed("permutation", ctx.seed)
                .with_seed("split", ds.manifest.split_seed)
                .with_dataset(DatasetRef::new(&a.dataset, &ds)),
        );
        bundle.tables.push(table);
        bundle.write(out, a.format)?;
    }
    Ok(())
}

fn cmd_paraphrase(a: ParaphraseArgs, ctx: &Ctx) -> CmdResult {
    let datasets = a
        .datasets
        .iter()
        .map(|p| load(p, ctx))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = a.training.apply(TrainConfig::klrp()).with_seed(ctx.seed);
    let rows = compare_paraphrases(&datasets, a.layer, &cfg)?;
    let table = Table::from_paraphrases("paraphrases", &rows);
    print_table(&table, TableFormat::Csv);
    if let Some(out) = &a.output {
        let mut manifest = manifest_for(
            "paraphrase",
            json!({"layer": a.layer, "train": serde_json::to_value(&cfg).map_err(runtime)?}),
            ctx,
        )
        .with_seed("split", datasets[0].manifest.split_seed);
        for (p, ds) in a.datasets.iter().zip(&datasets) {
            manifest = manifest.with_dataset(DatasetRef::new(p, ds));
        }
        let mut bundle = ReportBundle::new(manifest);
        bundle.tables.push(table);
        bundle.write(out, a.format)?;
    }
    Ok(())
}

fn cmd_css(dataset: &Path) -> CmdResult {
    let ds = load_dataset(dataset)?;
    println!("{:.6}", css(&ds.reference_distributions())?);
    Ok(())
}

fn cmd_report(a: ReportArgs, ctx: &Ctx) -> CmdResult {
    let text = std::fs::read_to_string(&a.results).map_err(runtime)?;
    let result: SweepResult = serde_json::from_str(&text).map_err(runtime)?;
    let mut manifest = manifest_for(
        "report",
        json!({"results": a.results.display().to_string(), "layer": a.layer, "color_ceiling": a.color_ceiling, "bins": a.bins}),
        ctx,
    );
    let mut figures = Vec::new();
    if a.figures {
        figures.push(("layer_curves".to_string(), render_layer_curves(&result, "Layer sweep")));
    }
    if let Some(path) = &a.dataset {
        let ds = load(path, ctx)?;
        manifest = manifest.with_dataset(DatasetRef::new(path, &ds));
        figures.extend(dataset_figures(&ds, &a)?);
    }
    let mut bundle = ReportBundle::new(manifest);
    bundle.tables.push(Table::from_metrics("metrics", &result.rows));
    bundle.figures = figures;
    bundle.write(&a.output, a.format)?;
    ctx.note(format_args!("wrote {}", a.output.display()));
    Ok(())
}

fn dataset_figures(ds: &ProbeDataset, a: &ReportArgs) -> Result<Vec<(String, String)>, Failure> {
    let refs = ds.reference_distributions();
    let acts = ds.layer(a.layer)?;
    let colors: Vec<f64> = match &a.probe {
        Some(dir) => {
            let (probe, _) = load_probe(dir)?;
            (0..ds.num_examples())
                .map(|i| Ok(kl_divergence(&refs[i], &softmax(&probe.logits(acts.row(i))?))))
                .collect::<Result<_, Error>>()?
        }
        None => refs.iter().map(relprobe_core::kernel::entropy_normalized).collect(),
    };
    let scale = ColorScale {
        ceiling: a.color_ceiling,
    };
    let mut figures = Vec::new();
    let labels: Vec<usize> = refs.iter().map(|r| r.argmax()).collect();
    match lda_project(acts, &labels, 2.min(ds.hidden_dim())) {
        Ok(p) => {
            let coords: Vec<(f64, f64)> = p
                .coords
                .iter()
                .map(|c| (c[0], c.get(1).copied().unwrap_or(0.0)))
                .collect();
            figures.push(("lda".into(), render_scatter(&coords, &colors, &scale, "LDA projection")?));
        }
        Err(e) => eprintln!("skipping LDA figure: {e}"),
    }
    if ds.k() == 3 {
        figures.push((
            "simplex".into(),
            render_ternary(&refs, &colors, ds.token_set(), &scale, "Reference distributions")?,
        ));
    }
    let hist = max_prob_histogram(&refs, a.bins)?;
    figures.push(("max_prob_histogram".into(), render_histogram(&hist, "Max probability")));
    Ok(figures)
}
