//! Command-line pipeline driver: trace generation, simulation, dataset
//! builds, predictor training, constraint sweeps, metaheuristic search,
//! ensemble fine-tuning, and results summarization.
//!
//! Every subcommand writes a `<name>.run.json` manifest (arguments, seeds,
//! input fingerprints, outputs) so its results can be reproduced. Exit
//! codes: 0 success, 1 any domain error, 2 usage errors (from the parser).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use onedse::datagen::{build_dataset, load_dataset, load_validated, save_dataset, Dataset};
use onedse::design_space::{
    default_catalog, dump_design_space, parse_design_space, Configuration, DesignSpace, Subsystem,
};
use onedse::mast::{mast_search, MastSpec};
use onedse::metaheuristics::{
    abc_search, convergence_iteration, exhaustive_search, ga_search, Evaluator, SearchOutcome,
    SearchSpec,
};
use onedse::metrics::{compute_metrics, load_weights, MetricKind, MetricWeights};
use onedse::neural::{Model, ModelConfig};
use onedse::report::{summarize_results, RunManifest, TrainHistoryFile};
use onedse::simulator::simulate;
use onedse::smart::{
    ensemble_rank_mse, load_ensemble, save_ensemble, smart_finetune, AgentEnsemble, FinetuneSpec,
};
use onedse::trace::{
    builtin_profiles, chunk_trace, generate_synthetic_trace, parse_profile, parse_trace,
    profile_named, tokenize_chunk, write_trace, Chunk, TokenDict, TraceRecord,
};
use onedse::trace_models::{
    aggregate_weighted, params_only_config, params_only_trainset, prepare_m, prepare_p,
    round_ranks, train_model, Mode, PredictorModel, TrainSpec,
};
use onedse::{derive_seed, fmt_f64, Error, Result};

#[derive(Parser)]
#[command(
    name = "onedse",
    version,
    about = "Trace-driven CPU design space exploration",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic instruction traces from workload profiles.
    GenTraces(GenTracesCmd),
    /// Simulate traces on one configuration and report metrics.
    Simulate(SimulateCmd),
    /// Simulate a (chunk x configuration) grid into a training dataset.
    BuildDataset(BuildDatasetCmd),
    /// Train a P-mode predictor: (trace, configuration) -> metric.
    TrainP(TrainCmd),
    /// Train an M-mode predictor: (trace, metric target) -> configuration.
    TrainM(TrainCmd),
    /// Run a trained predictor over traces.
    Predict(PredictCmd),
    /// Sweep the metric constraint through an M-mode model (MAST).
    Mast(MastCmd),
    /// Genetic-algorithm search against the simulator.
    SearchGa(SearchCmd),
    /// Artificial-bee-colony search against the simulator.
    SearchAbc(SearchCmd),
    /// Enumerate every configuration (capped) against the simulator.
    SearchExhaustive(ExhaustiveCmd),
    /// Fine-tune a four-agent ensemble with a shared performance reward.
    SmartFinetune(SmartCmd),
    /// Summarize a results directory into plot-ready CSVs.
    Report(ReportCmd),
    /// Print the design-space parameter table.
    DumpSpace(DumpSpaceCmd),
}

fn main() {
    let cli = Cli::parse();
    init_threads();
    match run(cli.cmd) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

/// `ONEDSE_THREADS` caps the global worker pool.
fn init_threads() {
    if let Ok(v) = std::env::var("ONEDSE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenTraces(c) => run_gen_traces(c),
        Cmd::Simulate(c) => run_simulate(c),
        Cmd::BuildDataset(c) => run_build_dataset(c),
        Cmd::TrainP(c) => run_train(c, Mode::P),
        Cmd::TrainM(c) => run_train(c, Mode::M),
        Cmd::Predict(c) => run_predict(c),
        Cmd::Mast(c) => run_mast(c),
        Cmd::SearchGa(c) => run_search(c, SearchKind::Ga),
        Cmd::SearchAbc(c) => run_search(c, SearchKind::Abc),
        Cmd::SearchExhaustive(c) => run_exhaustive(c),
        Cmd::SmartFinetune(c) => run_smart(c),
        Cmd::Report(c) => run_report(c),
        Cmd::DumpSpace(c) => run_dump_space(c),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn parse_metric_arg(s: &str) -> std::result::Result<MetricKind, String> {
    MetricKind::parse(s).map_err(|e| e.to_string())
}

fn load_space(path: &Option<PathBuf>) -> Result<DesignSpace> {
    match path {
        Some(p) => parse_design_space(&std::fs::read_to_string(p)?),
        None => Ok(default_catalog()),
    }
}

fn load_weights_opt(path: &Option<PathBuf>, space: &DesignSpace) -> Result<MetricWeights> {
    match path {
        Some(p) => load_weights(p, space),
        None => Ok(MetricWeights::for_space(space)),
    }
}

/// Load one `.trace` file or every `*.trace` in a directory, sorted by
/// file name so downstream chunk ids are stable.
fn load_traces(path: &Path) -> Result<Vec<(String, Vec<TraceRecord>)>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "trace") {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::invalid_argument(format!(
                "no .trace files in '{}'",
                path.display()
            )));
        }
    } else {
        files.push(path.to_path_buf());
    }
    let mut out = Vec::new();
    for f in files {
        let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((name, parse_trace(&std::fs::read_to_string(&f)?)?));
    }
    Ok(out)
}

/// Chunk every trace, re-numbering chunk ids globally in trace order;
/// returns (trace name, chunk) pairs.
fn chunk_traces(
    traces: Vec<(String, Vec<TraceRecord>)>,
    chunk_len: usize,
) -> Result<Vec<(String, Chunk)>> {
    let mut out = Vec::new();
    let mut next_id = 0u64;
    for (name, records) in traces {
        for mut c in chunk_trace(records, chunk_len)? {
            c.id = next_id;
            next_id += 1;
            out.push((name.clone(), c));
        }
    }
    Ok(out)
}

fn chunks_only(named: Vec<(String, Chunk)>) -> Vec<Chunk> {
    named.into_iter().map(|(_, c)| c).collect()
}

/// Parse a configuration argument: `mid`, `min`, `sample` (seeded), or a
/// comma-separated rank list in space order.
fn parse_ranks(spec: &str, space: &DesignSpace, seed: u64) -> Result<Configuration> {
    let cfg = match spec {
        "mid" => space.mid_config(),
        "min" => space.min_config(),
        "sample" => space.sample_config(&mut ChaCha8Rng::seed_from_u64(seed)),
        list => {
            let ranks = list
                .split(',')
                .map(|t| {
                    t.trim().parse::<u16>().map_err(|_| {
                        Error::invalid_argument(format!("bad rank '{t}' in --ranks"))
                    })
                })
                .collect::<Result<Vec<u16>>>()?;
            Configuration::new(ranks)
        }
    };
    space.validate_config(&cfg)?;
    Ok(cfg)
}

/// Higher-is-better orientation for each metric.
fn metric_sign(metric: MetricKind) -> f64 {
    match metric {
        MetricKind::Power => -1.0,
        _ => 1.0,
    }
}

/// Instruction-weighted mean of the chosen metric over all chunks of a
/// full-space configuration, oriented so larger is better.
fn simulate_fitness(
    chunks: &[Chunk],
    cfg: &Configuration,
    space: &DesignSpace,
    weights: &MetricWeights,
    metric: MetricKind,
    seed: u64,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut total = 0u64;
    for chunk in chunks {
        let stats = simulate(chunk, cfg, space, derive_seed(seed, chunk.id, 0xf17))?;
        let m = compute_metrics(&stats, space, cfg, weights)?;
        let w = chunk.records.len() as u64;
        acc += metric.select(&m) * w as f64;
        total += w;
    }
    if total == 0 {
        return Err(Error::validation("all chunks are empty"));
    }
    Ok(metric_sign(metric) * acc / total as f64)
}

fn tokens_u32(chunk: &Chunk, dict: &TokenDict, seq_len: usize) -> Result<Vec<u32>> {
    Ok(tokenize_chunk(chunk, dict, seq_len)?.into_iter().map(|t| t as u32).collect())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::validation(format!("json serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Dataset plus the chunks/dict/space it was built against, reloaded and
/// fingerprint-checked. The chunk length comes from the dataset manifest
/// so chunking always matches the build.
struct LoadedCorpus {
    space: DesignSpace,
    dict: TokenDict,
    chunks: Vec<Chunk>,
    dataset: Dataset,
}

fn load_corpus(
    dataset_path: &Path,
    traces_path: &Path,
    space_path: &Option<PathBuf>,
) -> Result<LoadedCorpus> {
    let space = load_space(space_path)?;
    let chunk_len = load_dataset(dataset_path)?.manifest.chunk_len;
    let traces = load_traces(traces_path)?;
    let all_records: Vec<TraceRecord> =
        traces.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let dict = TokenDict::build(&all_records);
    let chunks = chunks_only(chunk_traces(traces, chunk_len)?);
    let dataset = load_validated(dataset_path, &space, &dict)?;
    Ok(LoadedCorpus { space, dict, chunks, dataset })
}

// ---------------------------------------------------------------------------
// gen-traces
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenTracesCmd {
    /// Output directory for .trace files.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated builtin profile names, or "all".
    #[arg(long, default_value = "all", value_delimiter = ',')]
    profiles: Vec<String>,
    /// Custom profile file (key = value lines); overrides --profiles.
    #[arg(long)]
    profile_file: Option<PathBuf>,
    /// Traces per profile.
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Instructions per trace.
    #[arg(long, default_value_t = 2000)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_gen_traces(c: GenTracesCmd) -> Result<()> {
    if c.count == 0 || c.len == 0 {
        return Err(Error::invalid_argument("--count and --len must be positive"));
    }
    let profiles = if let Some(file) = &c.profile_file {
        let stem =
            file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![(stem, parse_profile(&std::fs::read_to_string(file)?)?)]
    } else if c.profiles == ["all"] {
        builtin_profiles().into_iter().map(|(n, p)| (n.to_string(), p)).collect()
    } else {
        c.profiles
            .iter()
            .map(|n| profile_named(n).map(|p| (n.clone(), p)))
            .collect::<Result<Vec<_>>>()?
    };
    std::fs::create_dir_all(&c.out)?;
    let mut manifest = RunManifest::new("gen-traces");
    manifest
        .arg("profiles", profiles.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(","))
        .arg("count", c.count)
        .arg("len", c.len)
        .arg("seed", c.seed);
    let mut written = 0;
    for (pi, (name, profile)) in profiles.iter().enumerate() {
        for i in 0..c.count {
            let mut p = profile.clone();
            p.seed = derive_seed(c.seed, pi as u64, i as u64);
            let records = generate_synthetic_trace(&p, c.len)?;
            let file = format!("{name}_{i}.trace");
            std::fs::write(c.out.join(&file), write_trace(&records))?;
            manifest.output(&file);
            written += 1;
        }
    }
    manifest.write(&c.out)?;
    println!("wrote {written} traces to {}", c.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateCmd {
    /// Trace file or directory of .trace files.
    #[arg(long)]
    traces: PathBuf,
    /// Design-space file (defaults to the builtin catalog).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Metric weights file (defaults to builtin weights).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Configuration: "mid", "min", "sample", or comma-separated ranks.
    #[arg(long, default_value = "mid")]
    ranks: String,
    #[arg(long, default_value_t = 256)]
    chunk_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn run_simulate(c: SimulateCmd) -> Result<()> {
    let space = load_space(&c.space)?;
    let weights = load_weights_opt(&c.weights, &space)?;
    let cfg = parse_ranks(&c.ranks, &space, c.seed)?;
    let named = chunk_traces(load_traces(&c.traces)?, c.chunk_len)?;

    let mut csv = String::from("trace,chunk_id,instructions,cycles,ipc,power,area,objective\n");
    let mut weighted_obj = 0.0;
    let mut total_instr = 0u64;
    for (trace, chunk) in &named {
        let stats = simulate(chunk, &cfg, &space, derive_seed(c.seed, chunk.id, 0xf17))?;
        let m = compute_metrics(&stats, &space, &cfg, &weights)?;
        csv.push_str(&format!(
            "{trace},{},{},{},{},{},{},{}\n",
            chunk.id,
            stats.get("instructions").unwrap_or(0),
            stats.get("cycles").unwrap_or(0),
            fmt_f64(m.ipc),
            fmt_f64(m.power),
            fmt_f64(m.area),
            fmt_f64(m.objective)
        ));
        let w = chunk.records.len() as u64;
        weighted_obj += m.objective * w as f64;
        total_instr += w;
    }
    if total_instr == 0 {
        return Err(Error::validation("traces contain no instructions"));
    }
    std::fs::create_dir_all(&c.out)?;
    std::fs::write(c.out.join("metrics.csv"), &csv)?;

    let mut manifest = RunManifest::new("simulate");
    manifest
        .arg("ranks", &c.ranks)
        .arg("chunk_len", c.chunk_len)
        .arg("seed", c.seed)
        .fingerprint("space", space.fingerprint())
        .input("traces", c.traces.display())
        .output("metrics.csv");
    manifest.write(&c.out)?;
    println!(
        "{} chunks; instruction-weighted objective {}",
        named.len(),
        fmt_f64(weighted_obj / total_instr as f64)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BuildDatasetCmd {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Number of distinct sampled configurations in the grid.
    #[arg(long, default_value_t = 32)]
    configs: usize,
    #[arg(long, default_value_t = 256)]
    chunk_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV path (the manifest sidecar goes next to it).
    #[arg(long)]
    out: PathBuf,
}

/// Sample `n` distinct configurations (fewer only if the space is smaller).
fn sample_distinct_configs(
    space: &DesignSpace,
    n: usize,
    seed: u64,
) -> Result<Vec<Configuration>> {
    let want = match space.total_configs() {
        Some(t) if t < n as u128 => t as usize,
        _ => n,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ff_ee);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(want);
    let mut attempts = 0usize;
    while out.len() < want {
        attempts += 1;
        if attempts > want.saturating_mul(1000) + 1000 {
            return Err(Error::invalid_argument(format!(
                "could not sample {want} distinct configurations"
            )));
        }
        let cfg = space.sample_config(&mut rng);
        if seen.insert(cfg.ranks.clone()) {
            out.push(cfg);
        }
    }
    Ok(out)
}

fn run_build_dataset(c: BuildDatasetCmd) -> Result<()> {
    if c.configs == 0 {
        return Err(Error::invalid_argument("--configs must be positive"));
    }
    let space = load_space(&c.space)?;
    let weights = load_weights_opt(&c.weights, &space)?;
    let traces = load_traces(&c.traces)?;
    let all_records: Vec<TraceRecord> =
        traces.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let dict = TokenDict::build(&all_records);
    let chunks = chunks_only(chunk_traces(traces, c.chunk_len)?);
    let configs = sample_distinct_configs(&space, c.configs, c.seed)?;

    if let Some(dir) = c.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let ds = build_dataset(&chunks, &configs, &space, &weights, &dict, c.seed)?;
    save_dataset(&ds, &c.out)?;

    let out_dir = c.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = c.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut manifest = RunManifest::new("build-dataset");
    manifest
        .arg("configs", configs.len())
        .arg("chunk_len", c.chunk_len)
        .arg("seed", c.seed)
        .fingerprint("space", space.fingerprint())
        .fingerprint("dict", dict.fingerprint())
        .input("traces", c.traces.display())
        .output(&file)
        .output(format!("{file}.manifest.json"));
    manifest.write(&out_dir)?;
    println!(
        "dataset: {} rows over {} chunks x {} configs ({} failures)",
        ds.rows.len(),
        chunks.len(),
        configs.len(),
        ds.manifest.failures
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-p / train-m
// ---------------------------------------------------------------------------

#[derive(Args)]
struct NetArgs {
    /// Token sequence length fed to the encoder.
    #[arg(long, default_value_t = 256)]
    seq_len: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    encoder_layers: usize,
    #[arg(long, default_value_t = 3)]
    head_layers: usize,
    /// Attention window radius (positions attend within +/- window).
    #[arg(long, default_value_t = 64)]
    window: usize,
}

impl NetArgs {
    fn to_config(&self, vocab: usize, constraint_dim: usize, out_dim: usize) -> ModelConfig {
        ModelConfig {
            seq_len: self.seq_len,
            dim: self.dim,
            heads: self.heads,
            encoder_layers: self.encoder_layers,
            head_layers: self.head_layers,
            window: self.window,
            vocab,
            constraint_dim,
            out_dim,
        }
    }
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    dataset: PathBuf,
    /// The trace corpus the dataset was built from.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, default_value = "objective", value_parser = parse_metric_arg)]
    metric: MetricKind,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Fraction of chunks held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also train a parameters-only baseline for comparison (P-mode).
    #[arg(long)]
    baseline: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn run_train(c: TrainCmd, mode: Mode) -> Result<()> {
    let corpus = load_corpus(&c.dataset, &c.traces, &c.space)?;
    let set = match mode {
        Mode::P => prepare_p(
            &corpus.dataset,
            &corpus.chunks,
            &corpus.space,
            &corpus.dict,
            c.metric,
            c.net.seq_len,
        )?,
        Mode::M => prepare_m(
            &corpus.dataset,
            &corpus.chunks,
            &corpus.space,
            &corpus.dict,
            c.metric,
            c.net.seq_len,
        )?,
    };
    let spec = TrainSpec {
        epochs: c.epochs,
        batch_size: c.batch_size,
        lr: c.lr,
        seed: c.seed,
        val_frac: c.val_frac,
    };
    let cfg = c.net.to_config(corpus.dict.vocab_size(), set.constraint_dim, set.out_dim);
    let mut net = Model::new(cfg, c.seed)?;
    let rep = train_model(&mut net, &set, &spec)?;

    let model = PredictorModel {
        mode,
        net,
        dict: corpus.dict.clone(),
        metric: c.metric,
        param_names: corpus.space.param_names(),
        param_counts: corpus.space.rank_counts(),
    };
    std::fs::create_dir_all(&c.out)?;
    let tag = match mode {
        Mode::P => "p",
        Mode::M => "m",
    };
    let ckpt = format!("trace-{tag}.ckpt");
    let train_json = format!("trace-{tag}.train.json");
    model.save(&c.out.join(&ckpt))?;
    let hist = TrainHistoryFile {
        train_loss: rep.train_loss.clone(),
        val_loss: rep.val_loss.clone(),
        best_epoch: rep.best_epoch,
        best_val: rep.best_val,
    };
    write_json(
        &c.out.join(&train_json),
        &serde_json::to_value(&hist)
            .map_err(|e| Error::validation(format!("history serialization failed: {e}")))?,
    )?;

    let sub = format!("train-{tag}");
    let mut manifest = RunManifest::new(&sub);
    manifest
        .arg("metric", c.metric)
        .arg("epochs", c.epochs)
        .arg("batch_size", c.batch_size)
        .arg("lr", c.lr)
        .arg("val_frac", c.val_frac)
        .arg("seq_len", c.net.seq_len)
        .arg("seed", c.seed)
        .fingerprint("space", corpus.space.fingerprint())
        .fingerprint("dict", corpus.dict.fingerprint())
        .input("dataset", c.dataset.display())
        .input("traces", c.traces.display())
        .output(&ckpt)
        .output(&train_json);

    if c.baseline && mode == Mode::P {
        let base_set = params_only_trainset(&set);
        let base_cfg = params_only_config(&model.net.config);
        let mut base_net = Model::new(base_cfg, c.seed)?;
        let base_rep = train_model(&mut base_net, &base_set, &spec)?;
        let base_json = "baseline.train.json";
        write_json(
            &c.out.join(base_json),
            &serde_json::to_value(&TrainHistoryFile {
                train_loss: base_rep.train_loss.clone(),
                val_loss: base_rep.val_loss.clone(),
                best_epoch: base_rep.best_epoch,
                best_val: base_rep.best_val,
            })
            .map_err(|e| Error::validation(format!("history serialization failed: {e}")))?,
        )?;
        manifest.output(base_json);
        println!(
            "trace model val MSE {} vs params-only baseline {} (ratio {})",
            fmt_f64(rep.best_val),
            fmt_f64(base_rep.best_val),
            fmt_f64(rep.best_val / base_rep.best_val)
        );
    } else {
        println!("best val MSE {} at epoch {}", fmt_f64(rep.best_val), rep.best_epoch);
    }
    manifest.write(&c.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PredictCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
    /// P-mode: configuration to evaluate ("mid", "min", "sample", or ranks).
    #[arg(long)]
    ranks: Option<String>,
    /// M-mode: metric target to invert.
    #[arg(long)]
    metric_value: Option<f64>,
    #[arg(long, default_value_t = 256)]
    chunk_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (prints to stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_predict(c: PredictCmd) -> Result<()> {
    let model = PredictorModel::load(&c.checkpoint)?;
    let space = load_space(&c.space)?;
    let named = chunk_traces(load_traces(&c.traces)?, c.chunk_len)?;
    if named.is_empty() {
        return Err(Error::invalid_argument("no chunks to predict on"));
    }
    let seq_len = model.net.config.seq_len;
    let (csv, file, summary) = match model.mode {
        Mode::P => {
            let spec = c.ranks.as_deref().ok_or_else(|| {
                Error::invalid_argument("P-mode prediction needs --ranks")
            })?;
            let cfg = parse_ranks(spec, &space, c.seed)?;
            let mut csv = String::from("trace,chunk_id,predicted\n");
            let mut preds = Vec::new();
            let mut instrs = Vec::new();
            for (trace, chunk) in &named {
                let tokens = tokens_u32(chunk, &model.dict, seq_len)?;
                let p = model.forward_p(&tokens, &space, &cfg)?;
                csv.push_str(&format!("{trace},{},{}\n", chunk.id, fmt_f64(p)));
                preds.push(p);
                instrs.push(chunk.records.len() as u64);
            }
            let agg = aggregate_weighted(&preds, &instrs)?;
            let summary = format!(
                "predicted {} (instruction-weighted over {} chunks)",
                fmt_f64(agg),
                preds.len()
            );
            (csv, "predictions.csv", summary)
        }
        Mode::M => {
            let target = c.metric_value.ok_or_else(|| {
                Error::invalid_argument("M-mode prediction needs --metric-value")
            })?;
            let model_space = space.subset_by_names(&model.param_names)?;
            let mut mean = vec![0.0; model.param_names.len()];
            for (_, chunk) in &named {
                let tokens = tokens_u32(chunk, &model.dict, seq_len)?;
                let raw = model.forward_m(&tokens, target)?;
                for (m, r) in mean.iter_mut().zip(raw) {
                    *m += r;
                }
            }
            for m in mean.iter_mut() {
                *m /= named.len() as f64;
            }
            let cfg = round_ranks(&mean, &model.param_counts)?;
            let values = model_space.rank_decode(&cfg)?;
            let mut csv = String::from("parameter,rank,value\n");
            for ((name, &rank), value) in
                model.param_names.iter().zip(&cfg.ranks).zip(&values)
            {
                csv.push_str(&format!("{name},{rank},{value}\n"));
            }
            let summary = format!(
                "predicted configuration for {} target {}",
                model.metric,
                fmt_f64(target)
            );
            (csv, "config.csv", summary)
        }
    };
    match &c.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(file), &csv)?;
            let mut manifest = RunManifest::new("predict");
            manifest
                .arg("chunk_len", c.chunk_len)
                .arg("seed", c.seed)
                .fingerprint("space", space.fingerprint())
                .input("checkpoint", c.checkpoint.display())
                .input("traces", c.traces.display())
                .output(file);
            if let Some(r) = &c.ranks {
                manifest.arg("ranks", r);
            }
            if let Some(v) = c.metric_value {
                manifest.arg("metric_value", fmt_f64(v));
            }
            manifest.write(dir)?;
        }
        None => print!("{csv}"),
    }
    println!("{summary}");
    Ok(())
}

// ---------------------------------------------------------------------------
// mast
// ---------------------------------------------------------------------------

#[derive(Args)]
struct MastCmd {
    /// M-mode predictor checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Initial metric constraint.
    #[arg(long, default_value_t = 0.1)]
    start: f64,
    /// Constraint increment per step.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Steps the configuration must hold to declare convergence.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Relative objective change that defines the critical step.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Annotate the trajectory with simulator objectives afterwards.
    #[arg(long)]
    annotate: bool,
    #[arg(long, default_value_t = 256)]
    chunk_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn run_mast(c: MastCmd) -> Result<()> {
    let model = PredictorModel::load(&c.checkpoint)?;
    let space = load_space(&c.space)?;
    let weights = load_weights_opt(&c.weights, &space)?;
    let named = chunk_traces(load_traces(&c.traces)?, c.chunk_len)?;
    let seq_len = model.net.config.seq_len;
    let chunk_tokens = named
        .iter()
        .map(|(_, ch)| tokens_u32(ch, &model.dict, seq_len))
        .collect::<Result<Vec<_>>>()?;

    let spec =
        MastSpec { start: c.start, step: c.step, patience: c.patience, max_iter: c.max_iter };
    let mut result = mast_search(&model, &chunk_tokens, &spec)?;

    let model_space = space.subset_by_names(&model.param_names)?;
    let chunks: Vec<&Chunk> = named.iter().map(|(_, ch)| ch).collect();
    if c.annotate {
        let base = space.mid_config();
        result.annotate_objectives(|cfg| {
            let full = space.overlay(&base, &model_space, cfg)?;
            let mut acc = 0.0;
            let mut total = 0u64;
            for chunk in &chunks {
                let stats = simulate(chunk, &full, &space, derive_seed(c.seed, chunk.id, 0xf17))?;
                let m = compute_metrics(&stats, &space, &full, &weights)?;
                let w = chunk.records.len() as u64;
                acc += m.objective * w as f64;
                total += w;
            }
            Ok(acc / total.max(1) as f64)
        })?;
        result.analyze(c.delta)?;
    }

    std::fs::create_dir_all(&c.out)?;
    std::fs::write(c.out.join("mast.trajectory.csv"), result.trajectory_csv())?;
    let decoded = model_space.rank_decode(&result.converged_config)?;
    let summary = serde_json::json!({
        "converged": result.converged,
        "end_step": result.end_step,
        "steps": result.trajectory.len(),
        "final_constraint": result.trajectory.last().map(|s| s.constraint),
        "config": model.param_names.iter().zip(&result.converged_config.ranks).zip(&decoded)
            .map(|((name, &rank), value)| serde_json::json!({
                "parameter": name, "rank": rank, "value": value.to_string(),
            }))
            .collect::<Vec<_>>(),
        "p_step": result.p_step,
        "critical": result.critical,
        "flexible": result.flexible,
        "near_optimal_count": result.near_optimal.len(),
    });
    write_json(&c.out.join("mast.json"), &summary)?;

    let mut manifest = RunManifest::new("mast");
    manifest
        .arg("start", c.start)
        .arg("step", c.step)
        .arg("patience", c.patience)
        .arg("max_iter", c.max_iter)
        .arg("delta", c.delta)
        .arg("annotate", c.annotate)
        .arg("chunk_len", c.chunk_len)
        .arg("seed", c.seed)
        .fingerprint("space", space.fingerprint())
        .input("checkpoint", c.checkpoint.display())
        .input("traces", c.traces.display())
        .output("mast.trajectory.csv")
        .output("mast.json");
    manifest.write(&c.out)?;
    println!(
        "{} after {} steps ({} trajectory rows)",
        if result.converged { "converged" } else { "did not converge" },
        result.end_step,
        result.trajectory.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// search-ga / search-abc / search-exhaustive
// ---------------------------------------------------------------------------

enum SearchKind {
    Ga,
    Abc,
}

#[derive(Args)]
struct SearchCmd {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "objective", value_parser = parse_metric_arg)]
    metric: MetricKind,
    /// Search one subsystem (imem|dmem|core|branch) or "all"; parameters
    /// outside the subsystem stay at their mid ranks.
    #[arg(long, default_value = "all")]
    subsystem: String,
    #[arg(long, default_value_t = 24)]
    population: usize,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    /// Disable annealing and stagnation handling (baseline preset).
    #[arg(long)]
    vanilla: bool,
    #[arg(long, default_value_t = 256)]
    chunk_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

struct SearchSetup {
    space: DesignSpace,
    search_space: DesignSpace,
    base: Configuration,
    chunks: Vec<Chunk>,
    weights: MetricWeights,
}

fn search_setup(
    traces: &Path,
    space_path: &Option<PathBuf>,
    weights_path: &Option<PathBuf>,
    subsystem: &str,
    chunk_len: usize,
) -> Result<SearchSetup> {
    let space = load_space(space_path)?;
    let weights = load_weights_opt(weights_path, &space)?;
    let search_space = match subsystem {
        "all" => space.clone(),
        s => space.subsystem_subset(Subsystem::parse(s)?),
    };
    let base = space.mid_config();
    let chunks = chunks_only(chunk_traces(load_traces(traces)?, chunk_len)?);
    Ok(SearchSetup { space, search_space, base, chunks, weights })
}

fn write_search_outputs(
    out_dir: &Path,
    name: &str,
    outcome: &SearchOutcome,
    setup: &SearchSetup,
    metric: MetricKind,
    manifest: &mut RunManifest,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut hist = String::from("iteration,best_fitness\n");
    for (i, v) in outcome.history.iter().enumerate() {
        hist.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    let hist_file = format!("{name}.history.csv");
    std::fs::write(out_dir.join(&hist_file), hist)?;

    let full = setup.space.overlay(&setup.base, &setup.search_space, &outcome.best)?;
    let decoded = setup.search_space.rank_decode(&outcome.best)?;
    let best = serde_json::json!({
        "fitness": outcome.best_fitness,
        "metric": metric.to_string(),
        "metric_value": metric_sign(metric) * outcome.best_fitness,
        "evaluations": outcome.evaluations,
        "iterations": outcome.history.len(),
        "iters_to_90pct": convergence_iteration(&outcome.history, 0.9),
        "config": setup.search_space.param_names().iter().zip(&outcome.best.ranks).zip(&decoded)
            .map(|((n, &r), v)| serde_json::json!({"parameter": n, "rank": r, "value": v.to_string()}))
            .collect::<Vec<_>>(),
        "full_ranks": full.ranks,
    });
    let best_file = format!("{name}.best.json");
    write_json(&out_dir.join(&best_file), &best)?;
    manifest.output(&hist_file).output(&best_file);
    println!(
        "best {} {} after {} evaluations",
        metric,
        fmt_f64(metric_sign(metric) * outcome.best_fitness),
        outcome.evaluations
    );
    Ok(())
}

fn run_search(c: SearchCmd, kind: SearchKind) -> Result<()> {
    let setup = search_setup(&c.traces, &c.space, &c.weights, &c.subsystem, c.chunk_len)?;
    let mut spec =
        if c.vanilla { SearchSpec::vanilla(c.seed) } else { SearchSpec::optimized(c.seed) };
    spec.population = c.population;
    spec.iterations = c.iterations;

    let eval = Evaluator::new(|cfg: &Configuration| {
        let full = setup.space.overlay(&setup.base, &setup.search_space, cfg)?;
        simulate_fitness(&setup.chunks, &full, &setup.space, &setup.weights, c.metric, c.seed)
    });
    let (name, outcome) = match kind {
        SearchKind::Ga => ("ga", ga_search(&setup.search_space, &eval, &spec)?),
        SearchKind::Abc => ("abc", abc_search(&setup.search_space, &eval, &spec)?),
    };

    let mut manifest = RunManifest::new(&format!("search-{name}"));
    manifest
        .arg("metric", c.metric)
        .arg("subsystem", &c.subsystem)
        .arg("population", c.population)
        .arg("iterations", c.iterations)
        .arg("vanilla", c.vanilla)
        .arg("chunk_len", c.chunk_len)
        .arg("seed", c.seed)
        .fingerprint("space", setup.space.fingerprint())
        .input("traces", c.traces.display());
    write_search_outputs(&c.out, name, &outcome, &setup, c.metric, &mut manifest)?;
    manifest.write(&c.out)?;
    Ok(())
}

#[derive(Args)]
struct ExhaustiveCmd {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "objective", value_parser = parse_metric_arg)]
    metric: MetricKind,
    /// Search one subsystem (imem|dmem|core|branch) or "all".
    #[arg(long, default_value = "all")]
    subsystem: String,
    /// Maximum number of configurations to enumerate.
    #[arg(long)]
    cap: Option<u128>,
    #[arg(long, default_value_t = 256)]
    chunk_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn run_exhaustive(c: ExhaustiveCmd) -> Result<()> {
    let setup = search_setup(&c.traces, &c.space, &c.weights, &c.subsystem, c.chunk_len)?;
    let eval = Evaluator::new(|cfg: &Configuration| {
        let full = setup.space.overlay(&setup.base, &setup.search_space, cfg)?;
        simulate_fitness(&setup.chunks, &full, &setup.space, &setup.weights, c.metric, c.seed)
    });
    let outcome = exhaustive_search(&setup.search_space, &eval, c.cap)?;

    let mut manifest = RunManifest::new("search-exhaustive");
    manifest
        .arg("metric", c.metric)
        .arg("subsystem", &c.subsystem)
        .arg("cap", c.cap.map(|v| v.to_string()).unwrap_or_else(|| "default".to_string()))
        .arg("chunk_len", c.chunk_len)
        .arg("seed", c.seed)
        .fingerprint("space", setup.space.fingerprint())
        .input("traces", c.traces.display());
    write_search_outputs(&c.out, "exhaustive", &outcome, &setup, c.metric, &mut manifest)?;
    manifest.write(&c.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// smart-finetune
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SmartCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "objective", value_parser = parse_metric_arg)]
    metric: MetricKind,
    /// Reward weight; 0 degenerates to independent supervised training.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Sampling noise of the score-function estimator, in rank units.
    #[arg(long, default_value_t = 0.25)]
    sigma: f64,
    /// Continue from a saved ensemble manifest instead of fresh agents.
    #[arg(long)]
    ensemble: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn run_smart(c: SmartCmd) -> Result<()> {
    let corpus = load_corpus(&c.dataset, &c.traces, &c.space)?;
    let weights = load_weights_opt(&c.weights, &corpus.space)?;
    let set = prepare_m(
        &corpus.dataset,
        &corpus.chunks,
        &corpus.space,
        &corpus.dict,
        c.metric,
        c.net.seq_len,
    )?;
    let mut ens = match &c.ensemble {
        Some(path) => load_ensemble(path, &corpus.space)?,
        None => AgentEnsemble::new_fresh(
            &corpus.space,
            &corpus.dict,
            c.metric,
            &c.net.to_config(2, 1, 1),
            c.lambda,
            c.seed,
        )?,
    };
    ens.lambda = c.lambda;
    ens.sample_std = c.sigma;

    let by_id: std::collections::HashMap<u64, &Chunk> =
        corpus.chunks.iter().map(|ch| (ch.id, ch)).collect();
    let pre_mse = ensemble_rank_mse(&ens, &set)?;
    let spec =
        FinetuneSpec { epochs: c.epochs, batch_size: c.batch_size, lr: c.lr, seed: c.seed };
    let space = &corpus.space;
    let rep = smart_finetune(&mut ens, &set, &spec, |cfg, chunk_id| {
        let chunk = by_id
            .get(&chunk_id)
            .ok_or_else(|| Error::validation(format!("unknown chunk id {chunk_id}")))?;
        let stats = simulate(chunk, cfg, space, derive_seed(c.seed, chunk_id, 0xf17))?;
        let m = compute_metrics(&stats, space, cfg, &weights)?;
        Ok(metric_sign(c.metric) * c.metric.select(&m))
    })?;
    let post_mse = ensemble_rank_mse(&ens, &set)?;

    std::fs::create_dir_all(&c.out)?;
    save_ensemble(&ens, &c.out, "ensemble")?;
    let summary = serde_json::json!({
        "lambda": c.lambda,
        "sigma": c.sigma,
        "pre_rank_mse": pre_mse,
        "post_rank_mse": post_mse,
        "relative_mse": post_mse / pre_mse,
        "supervised_loss": rep.supervised_loss,
        "reward_mean": rep.reward_mean,
        "skipped_batches": rep.skipped_batches,
        "baseline": rep.baseline_final,
    });
    write_json(&c.out.join("smart.json"), &summary)?;

    let mut manifest = RunManifest::new("smart-finetune");
    manifest
        .arg("metric", c.metric)
        .arg("lambda", c.lambda)
        .arg("sigma", c.sigma)
        .arg("epochs", c.epochs)
        .arg("batch_size", c.batch_size)
        .arg("lr", c.lr)
        .arg("seed", c.seed)
        .fingerprint("space", corpus.space.fingerprint())
        .fingerprint("dict", corpus.dict.fingerprint())
        .input("dataset", c.dataset.display())
        .input("traces", c.traces.display())
        .output("smart.json")
        .output("ensemble.manifest.json");
    manifest.write(&c.out)?;
    println!(
        "rank MSE {} -> {} (relative {})",
        fmt_f64(pre_mse),
        fmt_f64(post_mse),
        fmt_f64(post_mse / pre_mse)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report / dump-space
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReportCmd {
    /// Directory containing run outputs to summarize.
    #[arg(long)]
    results: PathBuf,
    /// Output directory for summary CSVs.
    #[arg(long)]
    out: PathBuf,
}

fn run_report(c: ReportCmd) -> Result<()> {
    let summary = summarize_results(&c.results, &c.out)?;
    let mut manifest = RunManifest::new("report");
    manifest.input("results", c.results.display());
    for p in &summary.written {
        if let Some(name) = p.file_name() {
            manifest.output(name.to_string_lossy());
        }
    }
    manifest.write(&c.out)?;
    println!(
        "summarized {} runs, {} trajectories, {} convergence curves, {} trainings",
        summary.runs, summary.trajectories, summary.histories, summary.trainings
    );
    if !summary.skipped.is_empty() {
        println!("skipped unparsable artifacts: {}", summary.skipped.join(", "));
    }
    Ok(())
}

#[derive(Args)]
struct DumpSpaceCmd {
    #[arg(long)]
    space: Option<PathBuf>,
    /// Write the table to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_dump_space(c: DumpSpaceCmd) -> Result<()> {
    let space = load_space(&c.space)?;
    let text = dump_design_space(&space);
    match &c.out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(path, &text)?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut manifest = RunManifest::new("dump-space");
            manifest
                .fingerprint("space", space.fingerprint())
                .output(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            manifest.write(&dir)?;
            println!("wrote {} parameters to {}", space.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
