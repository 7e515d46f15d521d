use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{CacheStats, CachedModel, ResponseCache};
use super::{io_err, score, EvalRecord, EvalSummary, FailureKind, GroundingSample, HarnessError};
use crate::methods::{run_method, Decoding, MethodConfig, MethodError, Query};
use crate::model_client::VisionModel;
use crate::overlay::RasterImage;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSet {
    pub name: String,
    pub samples: Vec<GroundingSample>,
}

#[derive(Debug, Clone)]
pub struct MatrixOptions {
    /// Worker threads; samples run in parallel within each cell.
    pub concurrency: usize,
    pub decoding: Decoding,
    /// Results, records and traces land here.
    pub out_dir: PathBuf,
    pub write_traces: bool,
}

impl MatrixOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            concurrency: 4,
            decoding: Decoding::default(),
            out_dir: out_dir.into(),
            write_traces: true,
        }
    }
}

/// Deterministic per-cell outcome; this is what `summaries.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub benchmark: String,
    pub model: String,
    pub method: MethodConfig,
    pub method_label: String,
    pub method_digest: String,
    pub fallbacks: usize,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub summary: CellSummary,
    pub records: Vec<EvalRecord>,
    pub stats: CacheStats,
}

#[derive(Debug, Clone)]
pub struct MatrixResults {
    pub cells: Vec<CellResult>,
}

impl MatrixResults {
    pub fn summaries(&self) -> Vec<CellSummary> {
        self.cells.iter().map(|c| c.summary.clone()).collect()
    }

    pub fn stats(&self) -> CacheStats {
        self.cells.iter().fold(CacheStats::default(), |acc, c| CacheStats {
            new_calls: acc.new_calls + c.stats.new_calls,
            cache_hits: acc.cache_hits + c.stats.cache_hits,
        })
    }
}

pub(crate) fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn write_json(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn failure_kind(e: &MethodError) -> FailureKind {
    match e {
        MethodError::Parse { .. } => FailureKind::Parse,
        MethodError::Transport { .. } => FailureKind::Transport,
        _ => FailureKind::Other,
    }
}

/// Evaluates every (benchmark, model, method) cell. Responses go through
/// `cache`, so a rerun with the same inputs makes no new model calls.
pub fn run_matrix(
    benchmarks: &[BenchmarkSet],
    models: &[&dyn VisionModel],
    methods: &[MethodConfig],
    cache: &ResponseCache,
    opts: &MatrixOptions,
) -> Result<MatrixResults, HarnessError> {
    if opts.concurrency == 0 {
        return Err(HarnessError::Argument("concurrency must be at least 1".into()));
    }
    for m in methods {
        m.validate().map_err(|e| HarnessError::Argument(e.to_string()))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency)
        .build()
        .map_err(|e| HarnessError::Argument(e.to_string()))?;
    fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;

    let mut cells = Vec::new();
    for bench in benchmarks {
        let images: Vec<RasterImage> = pool.install(|| {
            bench
                .samples
                .par_iter()
                .map(|s| RasterImage::load(&s.image).map_err(|e| (s.image.display().to_string(), e)))
                .collect::<Result<_, _>>()
        })
        .map_err(|(path, e)| HarnessError::MissingImages(vec![format!("{path} ({e})")]))?;

        for model in models {
            for method in methods {
                let cell = run_cell(&pool, bench, &images, *model, method, cache, opts)?;
                log::info!(
                    "{} / {} / {}: {:.2}% ({} new calls, {} cached)",
                    bench.name,
                    cell.summary.model,
                    cell.summary.method_label,
                    cell.summary.summary.accuracy,
                    cell.stats.new_calls,
                    cell.stats.cache_hits
                );
                cells.push(cell);
            }
        }
    }
    let results = MatrixResults { cells };
    let summaries = serde_json::to_string_pretty(&results.summaries()).expect("summaries are plain data");
    write_json(&opts.out_dir.join("summaries.json"), &(summaries + "\n"))?;
    Ok(results)
}

fn run_cell(
    pool: &rayon::ThreadPool,
    bench: &BenchmarkSet,
    images: &[RasterImage],
    model: &dyn VisionModel,
    method: &MethodConfig,
    cache: &ResponseCache,
    opts: &MatrixOptions,
) -> Result<CellResult, HarnessError> {
    let cached = CachedModel::new(model, cache);
    let digest = method.digest();
    let model_name = model.name().to_string();
    let cell_dir = PathBuf::from(file_safe(&bench.name))
        .join(file_safe(&model_name))
        .join(&digest);

    let outcomes: Vec<Result<EvalRecord, HarnessError>> = pool.install(|| {
        bench
            .samples
            .par_iter()
            .zip(images.par_iter())
            .map(|(sample, image)| {
                let started = Instant::now();
                let query = Query {
                    id: &sample.id,
                    image,
                    instruction: &sample.instruction,
                    ground_truth: Some(sample.gt),
                };
                let outcome = run_method(&query, &cached, method, &opts.decoding);
                let (mut record, trace) = match outcome {
                    Ok(pred) => {
                        let mut r = EvalRecord::scored(sample, &digest, &model_name, pred.click);
                        r.fallback = pred.fallback;
                        (r, Some(pred.trace_json()))
                    }
                    Err(e) => {
                        log::debug!("{}: {e}", sample.id);
                        let trace = (!e.stages().is_empty())
                            .then(|| serde_json::to_string_pretty(e.stages()).expect("stages are plain data"));
                        (
                            EvalRecord::failed(sample, &digest, &model_name, failure_kind(&e), e.to_string()),
                            trace,
                        )
                    }
                };
                if let (true, Some(trace)) = (opts.write_traces, trace) {
                    let rel = cell_dir.join(format!("{}.json", file_safe(&sample.id)));
                    write_json(&opts.out_dir.join("traces").join(&rel), &trace)?;
                    record.stage_trace_ref = Some(Path::new("traces").join(rel).to_string_lossy().into_owned());
                }
                record.wall_time = started.elapsed().as_secs_f64();
                Ok(record)
            })
            .collect()
    });
    let records: Vec<EvalRecord> = outcomes.into_iter().collect::<Result<_, _>>()?;
    let summary = score(&records, &bench.samples)?;

    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).expect("record is plain data"));
        lines.push('\n');
    }
    let records_path = opts.out_dir.join("records").join(format!(
        "{}__{}__{}.jsonl",
        file_safe(&bench.name),
        file_safe(&model_name),
        digest
    ));
    write_json(&records_path, &lines)?;

    Ok(CellResult {
        summary: CellSummary {
            benchmark: bench.name.clone(),
            model: model_name,
            method: *method,
            method_label: method.label(),
            method_digest: digest,
            fallbacks: records.iter().filter(|r| r.fallback).count(),
            summary,
        },
        records,
        stats: cached.stats(),
    })
}

/// Reads a `summaries.json` written by [`run_matrix`].
pub fn load_summaries(path: &Path) -> Result<Vec<CellSummary>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        sample: None,
        field: "<summaries>".into(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::harness::Platform;
    use crate::model_client::{ConstantResponder, FixedResponder};

    fn bench(dir: &Path) -> BenchmarkSet {
        let img = dir.join("a.png");
        RasterImage::filled(200, 100, [200, 200, 200]).unwrap().save_png(&img).unwrap();
        let samples = (0..3)
            .map(|i| GroundingSample {
                id: format!("s{i}"),
                image: img.clone(),
                instruction: "press ok".into(),
                gt: BBox::new(0.0, 0.0, 50.0 * (i as f64 + 1.0), 100.0).unwrap(),
                platform: Platform::Web,
                source: "t".into(),
            })
            .collect();
        BenchmarkSet { name: "tiny".into(), samples }
    }

    #[test]
    fn matrix_scores_and_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let b = bench(dir.path());
        let model = ConstantResponder::new("(75, 50)");
        let cache = ResponseCache::open(dir.path().join("cache")).unwrap();
        let mut opts = MatrixOptions::new(dir.path().join("out"));
        opts.concurrency = 1;
        let res = run_matrix(&[b], &[&model], &["direct".parse().unwrap()], &cache, &opts).unwrap();
        let s = &res.cells[0].summary.summary;
        assert_eq!((s.total, s.hits), (3, 2));
        // identical prompt and pixels for all three samples; serial, so one real call
        assert_eq!(res.stats().new_calls, 1);
        assert!(opts.out_dir.join("summaries.json").exists());
        let rec = &res.cells[0].records[0];
        assert!(opts.out_dir.join(rec.stage_trace_ref.as_ref().unwrap()).exists());
        let loaded = load_summaries(&opts.out_dir.join("summaries.json")).unwrap();
        assert_eq!(loaded, res.summaries());
    }

    #[test]
    fn transport_failure_is_a_recorded_miss() {
        let dir = tempfile::tempdir().unwrap();
        let b = bench(dir.path());
        let model = FixedResponder::new(Vec::<String>::new());
        let cache = ResponseCache::open(dir.path().join("cache")).unwrap();
        let mut opts = MatrixOptions::new(dir.path().join("out"));
        opts.concurrency = 2;
        let res = run_matrix(&[b], &[&model], &["direct".parse().unwrap()], &cache, &opts).unwrap();
        let s = &res.cells[0].summary.summary;
        assert_eq!((s.hits, s.transport_failures), (0, 3));
    }
}
