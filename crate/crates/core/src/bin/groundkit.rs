use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use groundkit::geometry::BBox;
use groundkit::harness::{
    adapt_upstream, load_benchmark, load_summaries, report, run_matrix, synth_benchmark, write_manifest,
    AdapterConfig, BenchmarkSet, HarnessError, MatrixOptions, ReportFormat, ResponseCache, SynthConfig,
};
use groundkit::methods::{render_overlay, run_method, Decoding, MethodConfig, MethodError, Query};
use groundkit::model_client::{
    ConstantResponder, FixedResponder, ModelEndpoint, ModelError, OpenAiClient, PerfectReader, VisionModel,
    DEFAULT_API_KEY_ENV,
};
use groundkit::overlay::{OverlayError, RasterImage};
use groundkit::pointing_game::{load_attention_dump, pointing_game_score, DumpError, Interp};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_TRANSPORT: u8 = 4;
const EXIT_PARSE: u8 = 5;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(m: impl std::fmt::Display) -> Self {
        Self { code: EXIT_USAGE, message: m.to_string() }
    }
    fn io(m: impl std::fmt::Display) -> Self {
        Self { code: EXIT_IO, message: m.to_string() }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Argument(_) | HarnessError::Mismatch(_) => EXIT_USAGE,
            _ => EXIT_IO,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<MethodError> for CliError {
    fn from(e: MethodError) -> Self {
        let code = match &e {
            MethodError::Transport { .. } => EXIT_TRANSPORT,
            MethodError::Parse { .. } => EXIT_PARSE,
            MethodError::Overlay(OverlayError::Image(_)) => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<OverlayError> for CliError {
    fn from(e: OverlayError) -> Self {
        let code = if matches!(e, OverlayError::Image(_)) { EXIT_IO } else { EXIT_USAGE };
        Self { code, message: e.to_string() }
    }
}

impl From<DumpError> for CliError {
    fn from(e: DumpError) -> Self {
        Self::io(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Config(_) => EXIT_USAGE,
            _ => EXIT_TRANSPORT,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "groundkit", version, about = "Zero-shot GUI grounding toolkit")]
struct Cli {
    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `groundkit=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a method's overlay onto a screenshot.
    Overlay(OverlayArgs),
    /// Ground one instruction on one screenshot.
    Ground(GroundArgs),
    /// Score an attention dump against a box.
    PointingGame(PointingGameArgs),
    /// Evaluate a benchmark x model x method matrix.
    Run(RunArgs),
    /// Turn a run's summaries into markdown or CSV tables.
    Report(ReportArgs),
    /// Generate a seeded synthetic benchmark.
    Synth(SynthArgs),
    /// Convert an upstream annotation file into a canonical manifest.
    Adapt(AdaptArgs),
}

/// Method selection; individual flags override the method string's parameters.
#[derive(Args, Debug, Clone, Default)]
struct MethodFlags {
    /// `kind[:key=value,...]`, e.g. `mark-grid` or `axis-grid:interval=50`.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    rows: Option<u32>,
    #[arg(long)]
    cols: Option<u32>,
    /// Scaffold labels: none, indices or coords.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    interval: Option<u32>,
    /// Axis sides, e.g. `all` or `bottom+left`.
    #[arg(long)]
    sides: Option<String>,
    /// Axis grid lines on or off.
    #[arg(long)]
    grid: Option<bool>,
    #[arg(long)]
    zoom: Option<u32>,
    #[arg(long)]
    short_side: Option<u32>,
    #[arg(long)]
    margin: Option<f64>,
    /// Mark-grid click: edge or centroid.
    #[arg(long)]
    center: Option<String>,
}

impl MethodFlags {
    fn resolve(&self, fallback: Option<&str>) -> CliResult<MethodConfig> {
        let base = self.method.as_deref().or(fallback).unwrap_or("direct");
        let mut spec = base.to_string();
        let mut extra = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                extra.push(format!("{k}={v}"));
            }
        };
        push("rows", self.rows.map(|v| v.to_string()));
        push("cols", self.cols.map(|v| v.to_string()));
        push("labels", self.labels.clone());
        push("interval", self.interval.map(|v| v.to_string()));
        push("sides", self.sides.clone());
        push("grid", self.grid.map(|v| v.to_string()));
        push("zoom", self.zoom.map(|v| v.to_string()));
        push("short_side", self.short_side.map(|v| v.to_string()));
        push("margin", self.margin.map(|v| v.to_string()));
        push("center", self.center.clone());
        if !extra.is_empty() {
            spec.push(if base.contains(':') { ',' } else { ':' });
            spec.push_str(&extra.join(","));
        }
        spec.parse().map_err(|e| CliError::usage(format!("--method: {e}")))
    }
}

/// Model selection: a mock or an OpenAI-compatible endpoint.
#[derive(Args, Debug, Clone, Default)]
struct ModelFlags {
    /// `perfect`, `fixed:<answer>[||<answer>...]` or `const:<answer>`.
    #[arg(long)]
    mock: Vec<String>,
    /// Served model name at the endpoint.
    #[arg(long)]
    model: Vec<String>,
    #[arg(long)]
    base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Requests per second per model.
    #[arg(long)]
    rate_limit: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args, Debug)]
struct OverlayArgs {
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    method: MethodFlags,
    #[arg(long)]
    out: PathBuf,
    /// Also write the render plan as JSON.
    #[arg(long)]
    plan_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GroundArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    instruction: String,
    #[command(flatten)]
    method: MethodFlags,
    #[command(flatten)]
    model: ModelFlags,
    /// Ground-truth box `x1,y1,x2,y2`; needed by the perfect mock.
    #[arg(long)]
    bbox: Option<String>,
    /// Where to write the stage trace.
    #[arg(long, default_value = "trace.json")]
    trace_out: PathBuf,
}

#[derive(Args, Debug)]
struct PointingGameArgs {
    /// Dump directory with meta.json and layer files.
    #[arg(long)]
    dump: PathBuf,
    /// Ground-truth box `x1,y1,x2,y2` in original-image pixels.
    #[arg(long)]
    bbox: String,
    /// nearest or bilinear.
    #[arg(long, default_value = "nearest")]
    interp: String,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Benchmark manifest, optionally `name=path`. Repeatable.
    #[arg(long)]
    benchmark: Vec<String>,
    /// Method string; repeatable. Method flags below apply to each.
    #[command(flatten)]
    method: MethodFlags,
    /// Additional method strings.
    #[arg(long = "also")]
    also: Vec<String>,
    #[command(flatten)]
    model: ModelFlags,
    /// Response cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip per-sample trace files.
    #[arg(long)]
    no_traces: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `summaries.json` or the run directory holding it.
    #[arg(long)]
    input: PathBuf,
    /// md or csv.
    #[arg(long, default_value = "md")]
    format: String,
    /// Directory for report files; markdown goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1024)]
    width: u32,
    #[arg(long, default_value_t = 768)]
    height: u32,
    /// Every n-th target covers the image center (0 disables).
    #[arg(long, default_value_t = 4)]
    center_period: usize,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    input: PathBuf,
    /// screenspot, screenspot-v2, screenspot-pro or ui-i2e.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the preset's box convention: x1y1x2y2 or x1y1wh.
    #[arg(long)]
    convention: Option<String>,
    /// Prefix joined onto every image path.
    #[arg(long)]
    image_prefix: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    methods: Vec<String>,
    #[serde(default)]
    mocks: Vec<String>,
    #[serde(default)]
    models: Vec<String>,
    #[serde(default)]
    benchmarks: BTreeMap<String, PathBuf>,
    base_url: Option<String>,
    api_key_env: Option<String>,
    rate_limit: Option<f64>,
    max_retries: Option<u32>,
    timeout: Option<f64>,
    max_tokens: Option<u32>,
    temperature: Option<f64>,
    cache: Option<PathBuf>,
    concurrency: Option<usize>,
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn parse_bbox(s: &str) -> CliResult<BBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(format!("--bbox {s:?}: {e}")))?;
    let [l, t, r, b] = v[..] else {
        return Err(CliError::usage(format!("--bbox {s:?}: expected x1,y1,x2,y2")));
    };
    BBox::new(l, t, r, b).map_err(|e| CliError::usage(format!("--bbox: {e}")))
}

fn build_mock(spec: &str) -> CliResult<Box<dyn VisionModel>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "perfect" => Box::new(PerfectReader::new()),
        "fixed" => Box::new(FixedResponder::new(arg.split("||").map(str::to_string).collect::<Vec<_>>())),
        "const" => Box::new(ConstantResponder::new(arg)),
        other => return Err(CliError::usage(format!("--mock: unknown mock {other:?} (perfect|fixed:..|const:..)"))),
    })
}

fn build_models(flags: &ModelFlags, file: &FileConfig) -> CliResult<Vec<Box<dyn VisionModel>>> {
    let mocks = if flags.mock.is_empty() && flags.model.is_empty() { &file.mocks } else { &flags.mock };
    let names = if flags.model.is_empty() && flags.mock.is_empty() { &file.models } else { &flags.model };
    let mut out: Vec<Box<dyn VisionModel>> = Vec::new();
    for m in mocks {
        out.push(build_mock(m)?);
    }
    for name in names {
        let mut ep = ModelEndpoint::new(name.clone());
        if let Some(u) = flags.base_url.clone().or_else(|| file.base_url.clone()) {
            ep.base_url = u;
        }
        ep.auth_env = flags
            .api_key_env
            .clone()
            .or_else(|| file.api_key_env.clone())
            .unwrap_or_else(|| DEFAULT_API_KEY_ENV.to_string());
        if let Some(r) = flags.rate_limit.or(file.rate_limit) {
            ep.rate_limit = r;
        }
        if let Some(r) = flags.max_retries.or(file.max_retries) {
            ep.max_retries = r;
        }
        if let Some(t) = flags.timeout.or(file.timeout) {
            ep.request_timeout = Duration::try_from_secs_f64(t)
                .map_err(|e| CliError::usage(format!("--timeout: {e}")))?;
        }
        out.push(Box::new(OpenAiClient::new(ep)?));
    }
    if out.is_empty() {
        return Err(CliError::usage("select a model with --model or --mock"));
    }
    Ok(out)
}

fn decoding(flags: &ModelFlags, file: &FileConfig) -> Decoding {
    let mut d = Decoding::default();
    if let Some(t) = flags.max_tokens.or(file.max_tokens) {
        d.max_tokens = t;
    }
    if let Some(t) = flags.temperature.or(file.temperature) {
        d.temperature = t;
    }
    d
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn cmd_overlay(args: &OverlayArgs, file: &FileConfig) -> CliResult {
    let method = args.method.resolve(file.methods.first().map(String::as_str))?;
    let img = RasterImage::load(&args.image).map_err(|e| CliError::io(format!("{}: {e}", args.image.display())))?;
    let rendered = render_overlay(&img, &method)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
    }
    rendered
        .image
        .save_png(&args.out)
        .map_err(|e| CliError::io(format!("{}: {e}", args.out.display())))?;
    if let Some(plan) = &args.plan_out {
        write_file(plan, rendered.plan.to_json())?;
    }
    log::info!("{} overlay written to {}", method.label(), args.out.display());
    Ok(())
}

fn cmd_ground(args: &GroundArgs, file: &FileConfig) -> CliResult {
    let method = args.method.resolve(file.methods.first().map(String::as_str))?;
    let gt = args.bbox.as_deref().map(parse_bbox).transpose()?;
    let mut models = build_models(&args.model, file)?;
    if models.len() != 1 {
        return Err(CliError::usage("ground takes exactly one --model or --mock"));
    }
    let model = models.remove(0);
    let img = RasterImage::load(&args.image).map_err(|e| CliError::io(format!("{}: {e}", args.image.display())))?;
    let id = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "query".into());
    let query = Query {
        id: &id,
        image: &img,
        instruction: &args.instruction,
        ground_truth: gt,
    };
    match run_method(&query, model.as_ref(), &method, &decoding(&args.model, file)) {
        Ok(pred) => {
            write_file(&args.trace_out, pred.trace_json())?;
            println!("{} {}", pred.click.x, pred.click.y);
            println!("trace: {}", args.trace_out.display());
            Ok(())
        }
        Err(e) => {
            if !e.stages().is_empty() {
                let trace = serde_json::to_string_pretty(e.stages()).expect("stages are plain data");
                write_file(&args.trace_out, trace)?;
            }
            Err(e.into())
        }
    }
}

fn cmd_pointing_game(args: &PointingGameArgs) -> CliResult {
    let gt = parse_bbox(&args.bbox)?;
    let interp: Interp = args.interp.parse().map_err(CliError::usage)?;
    let dump = load_attention_dump(&args.dump)?;
    let res = pointing_game_score(&dump, &gt, interp)?;
    println!("hit: {}", res.hit);
    println!("| layer | peak x | peak y | hit |");
    println!("|---:|---:|---:|:---:|");
    for (l, (p, h)) in res.per_layer_points.iter().zip(&res.per_layer).enumerate() {
        println!("| {l} | {} | {} | {} |", p.x, p.y, if *h { "yes" } else { "no" });
    }
    Ok(())
}

fn cmd_run(args: &RunArgs, file: &FileConfig) -> CliResult {
    let mut methods = Vec::new();
    let mut specs: Vec<String> = args.method.method.iter().cloned().chain(args.also.iter().cloned()).collect();
    if specs.is_empty() {
        specs = file.methods.clone();
    }
    if specs.is_empty() {
        return Err(CliError::usage("select at least one --method"));
    }
    for s in &specs {
        let flags = MethodFlags {
            method: Some(s.clone()),
            ..args.method.clone()
        };
        methods.push(flags.resolve(None)?);
    }

    let mut named: Vec<(String, PathBuf)> = Vec::new();
    for b in &args.benchmark {
        let (name, path) = match b.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(b);
                let name = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "benchmark".into());
                (name, p)
            }
        };
        named.push((name, path));
    }
    if named.is_empty() {
        named = file.benchmarks.iter().map(|(n, p)| (n.clone(), p.clone())).collect();
    }
    if named.is_empty() {
        return Err(CliError::usage("select at least one --benchmark"));
    }

    let out = args.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let cache_dir = args.cache.clone().or_else(|| file.cache.clone()).unwrap_or_else(|| out.join("cache"));
    let mut opts = MatrixOptions::new(&out);
    opts.concurrency = args.concurrency.or(file.concurrency).unwrap_or(opts.concurrency);
    opts.decoding = decoding(&args.model, file);
    opts.write_traces = !args.no_traces;
    let models = build_models(&args.model, file)?;

    let mut benches = Vec::new();
    for (name, path) in named {
        let samples = load_benchmark(&path)?;
        benches.push(BenchmarkSet { name, samples });
    }
    let cache = ResponseCache::open(&cache_dir)?;
    let model_refs: Vec<&dyn VisionModel> = models.iter().map(|m| m.as_ref()).collect();
    let results = run_matrix(&benches, &model_refs, &methods, &cache, &opts)?;
    let stats = results.stats();
    log::info!("{} new calls, {} cache hits", stats.new_calls, stats.cache_hits);
    let md = &report(&results.summaries(), ReportFormat::Markdown)[0];
    write_file(&out.join(&md.name), &md.content)?;
    print!("{}", md.content);
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> CliResult {
    let format: ReportFormat = args.format.parse().map_err(CliError::usage)?;
    let path = if args.input.is_dir() { args.input.join("summaries.json") } else { args.input.clone() };
    let cells = load_summaries(&path)?;
    let docs = report(&cells, format);
    match &args.out {
        Some(dir) => {
            for d in &docs {
                write_file(&dir.join(&d.name), &d.content)?;
                log::info!("wrote {}", dir.join(&d.name).display());
            }
        }
        None => {
            for d in &docs {
                print!("{}", d.content);
            }
        }
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let cfg = SynthConfig {
        seed: args.seed,
        n_samples: args.n,
        width: args.width,
        height: args.height,
        center_period: args.center_period,
        ..SynthConfig::default()
    };
    let bench = synth_benchmark(&cfg, &args.out)?;
    println!("{}", bench.manifest.display());
    log::info!("{} samples, {} cover the image center", bench.samples.len(), bench.center_hits);
    Ok(())
}

fn cmd_adapt(args: &AdaptArgs) -> CliResult {
    let mut cfg = match &args.preset {
        Some(p) => AdapterConfig::preset(p).ok_or_else(|| CliError::usage(format!("--preset: unknown preset {p:?}")))?,
        None => AdapterConfig::preset("screenspot-pro").expect("built-in preset"),
    };
    if let Some(c) = &args.convention {
        cfg.convention = c.parse().map_err(CliError::usage)?;
    }
    if args.image_prefix.is_some() {
        cfg.image_prefix = args.image_prefix.clone();
    }
    let text = fs::read_to_string(&args.input).map_err(|e| CliError::io(format!("{}: {e}", args.input.display())))?;
    let entries = adapt_upstream(&text, &cfg)?;
    write_manifest(&args.out, &entries)?;
    log::info!("{} entries written to {}", entries.len(), args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    let file = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Overlay(a) => cmd_overlay(a, &file),
        Command::Ground(a) => cmd_ground(a, &file),
        Command::PointingGame(a) => cmd_pointing_game(a),
        Command::Run(a) => cmd_run(a, &file),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Adapt(a) => cmd_adapt(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
