//! Benchmark loading, click-accuracy scoring, cached evaluation matrices and
//! reports.

mod cache;
mod matrix;
mod report;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{point_in_bbox, BBox, Point};

pub use cache::{cache_key, CacheEntry, CacheStats, CachedModel, ResponseCache};
pub use matrix::{load_summaries, run_matrix, BenchmarkSet, CellResult, CellSummary, MatrixOptions, MatrixResults};
pub use report::{format_accuracy, report, Document, ReportFormat};
pub use synth::{mark_grid_oracle, synth_benchmark, SynthBenchmark, SynthConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}{}: field `{field}`: {message}", sample.as_ref().map(|s| format!(" (sample {s})")).unwrap_or_default())]
    Schema {
        path: PathBuf,
        line: usize,
        sample: Option<String>,
        field: String,
        message: String,
    },
    #[error("{} image(s) missing or undecodable: {}", .0.len(), .0.join(", "))]
    MissingImages(Vec<String>),
    #[error("records do not match samples: {0}")]
    Mismatch(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("writing image: {0}")]
    Image(#[from] crate::overlay::OverlayError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Mobile,
    Desktop,
    Web,
    Other,
}

impl Platform {
    pub fn as_str(&self) -> &'static str {
        match self {
            Platform::Mobile => "mobile",
            Platform::Desktop => "desktop",
            Platform::Web => "web",
            Platform::Other => "other",
        }
    }

    /// Maps upstream platform / data-source names onto the four buckets.
    pub fn from_upstream(name: &str) -> Platform {
        match name.trim().to_ascii_lowercase().as_str() {
            "mobile" | "ios" | "android" => Platform::Mobile,
            "desktop" | "windows" | "macos" | "mac" | "linux" => Platform::Desktop,
            "web" | "shop" | "forum" | "gitlab" | "tool" => Platform::Web,
            _ => Platform::Other,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSample {
    pub id: String,
    /// Resolved path of the screenshot.
    pub image: PathBuf,
    pub instruction: String,
    pub gt: BBox,
    pub platform: Platform,
    pub source: String,
}

/// One line of a canonical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub instruction: String,
    pub bbox: [f64; 4],
    pub platform: Platform,
    pub source: String,
}

impl ManifestEntry {
    pub fn from_sample(s: &GroundingSample, image: impl Into<String>) -> Self {
        Self {
            id: s.id.clone(),
            image: image.into(),
            instruction: s.instruction.clone(),
            bbox: [s.gt.left, s.gt.top, s.gt.right, s.gt.bottom],
            platform: s.platform,
            source: s.source.clone(),
        }
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entry is plain data"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a canonical JSON Lines manifest. Image paths resolve relative to the
/// manifest's directory; every image must exist and decode, and every box
/// must lie inside its image.
pub fn load_benchmark(manifest: impl AsRef<Path>) -> Result<Vec<GroundingSample>, HarnessError> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let schema = |line: usize, sample: Option<&str>, field: &str, message: String| HarnessError::Schema {
        path: manifest.to_path_buf(),
        line,
        sample: sample.map(str::to_string),
        field: field.to_string(),
        message,
    };

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| schema(line, None, "<json>", e.to_string()))?;
        let id = value.get("id").and_then(Value::as_str).map(str::to_string);
        let entry: ManifestEntry = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .unwrap_or("<entry>")
                .to_string();
            schema(line, id.as_deref(), &field, msg)
        })?;
        let sid = Some(entry.id.as_str());
        if entry.id.trim().is_empty() {
            return Err(schema(line, sid, "id", "must be non-empty".into()));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(schema(line, sid, "id", "duplicate id".into()));
        }
        if entry.instruction.trim().is_empty() {
            return Err(schema(line, sid, "instruction", "must be non-empty".into()));
        }
        let [l, t, r, b] = entry.bbox;
        let gt = BBox::new(l, t, r, b).map_err(|e| schema(line, sid, "bbox", e.to_string()))?;
        let image = base.join(&entry.image);
        match image::ImageReader::open(&image)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
        {
            Ok((w, h)) => {
                if !BBox::full(w, h).contains_box(&gt) {
                    return Err(schema(
                        line,
                        sid,
                        "bbox",
                        format!("box {:?} extends past the {w}x{h} image", entry.bbox),
                    ));
                }
            }
            Err(e) => {
                missing.push(format!("{} ({e})", entry.image));
                continue;
            }
        }
        samples.push(GroundingSample {
            id: entry.id,
            image,
            instruction: entry.instruction,
            gt,
            platform: entry.platform,
            source: entry.source,
        });
    }
    if !missing.is_empty() {
        return Err(HarnessError::MissingImages(missing));
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BboxConvention {
    /// `[x1, y1, x2, y2]`
    X1y1x2y2,
    /// `[x, y, width, height]`
    X1y1wh,
}

impl BboxConvention {
    pub fn to_corners(&self, v: [f64; 4]) -> [f64; 4] {
        match self {
            BboxConvention::X1y1x2y2 => v,
            BboxConvention::X1y1wh => [v[0], v[1], v[0] + v[2], v[1] + v[3]],
        }
    }
}

impl FromStr for BboxConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x1y1x2y2" => Ok(Self::X1y1x2y2),
            "x1y1wh" => Ok(Self::X1y1wh),
            other => Err(format!("unknown bbox convention {other:?} (x1y1x2y2|x1y1wh)")),
        }
    }
}

/// Field mapping from an upstream annotation file to canonical entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub source: String,
    /// Generated as `<source>-<index>` when absent.
    pub id_field: Option<String>,
    pub image_field: String,
    pub instruction_field: String,
    pub bbox_field: String,
    pub platform_field: Option<String>,
    pub convention: BboxConvention,
    /// Prefix joined onto every image path.
    pub image_prefix: Option<String>,
}

impl AdapterConfig {
    /// Field layouts of the public releases as documented by their authors;
    /// check them against the copy you downloaded.
    pub fn preset(name: &str) -> Option<AdapterConfig> {
        let base = |source: &str, platform: &str, convention| AdapterConfig {
            source: source.into(),
            id_field: None,
            image_field: "img_filename".into(),
            instruction_field: "instruction".into(),
            bbox_field: "bbox".into(),
            platform_field: Some(platform.into()),
            convention,
            image_prefix: None,
        };
        Some(match name {
            "screenspot" => base("screenspot", "data_source", BboxConvention::X1y1wh),
            "screenspot-v2" | "screenspot_v2" => base("screenspot-v2", "data_source", BboxConvention::X1y1wh),
            "screenspot-pro" | "screenspot_pro" => AdapterConfig {
                id_field: Some("id".into()),
                ..base("screenspot-pro", "platform", BboxConvention::X1y1x2y2)
            },
            "ui-i2e" | "ui_i2e" => AdapterConfig {
                image_field: "image_path".into(),
                ..base("ui-i2e-bench", "platform", BboxConvention::X1y1x2y2)
            },
            _ => return None,
        })
    }
}

/// Converts upstream records (a JSON array or JSON Lines) to canonical entries.
pub fn adapt_upstream(text: &str, cfg: &AdapterConfig) -> Result<Vec<ManifestEntry>, HarnessError> {
    let records: Vec<Value> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(items)) => items,
        Ok(single @ Value::Object(_)) => vec![single],
        _ => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::Argument(format!("record {}: {e}", i + 1))))
            .collect::<Result<_, _>>()?,
    };
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let field = |name: &str| {
            rec.get(name)
                .ok_or_else(|| HarnessError::Argument(format!("record {}: missing field `{name}`", i + 1)))
        };
        let text_field = |name: &str| -> Result<String, HarnessError> {
            let v = field(name)?;
            Ok(match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
        };
        let raw_box = field(&cfg.bbox_field)?
            .as_array()
            .filter(|a| a.len() == 4)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| HarnessError::Argument(format!("record {}: `{}` is not four numbers", i + 1, cfg.bbox_field)))?;
        let bbox = cfg.convention.to_corners([raw_box[0], raw_box[1], raw_box[2], raw_box[3]]);
        let image = text_field(&cfg.image_field)?;
        let image = match &cfg.image_prefix {
            Some(prefix) => Path::new(prefix).join(image).to_string_lossy().into_owned(),
            None => image,
        };
        let id = match &cfg.id_field {
            Some(f) => text_field(f)?,
            None => format!("{}-{i:05}", cfg.source),
        };
        let platform = match &cfg.platform_field {
            Some(f) => rec
                .get(f)
                .and_then(Value::as_str)
                .map(Platform::from_upstream)
                .unwrap_or(Platform::Other),
            None => Platform::Other,
        };
        out.push(ManifestEntry {
            id,
            image,
            instruction: text_field(&cfg.instruction_field)?,
            bbox,
            platform,
            source: cfg.source.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Parse,
    Transport,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub method_digest: String,
    pub model_name: String,
    pub hit: bool,
    pub click: Option<Point>,
    pub failure: Option<FailureKind>,
    pub failure_reason: Option<String>,
    pub fallback: bool,
    pub stage_trace_ref: Option<String>,
    pub wall_time: f64,
}

impl EvalRecord {
    /// Record for a produced click; `hit` follows from the ground truth.
    pub fn scored(sample: &GroundingSample, method_digest: &str, model: &str, click: Point) -> Self {
        Self {
            sample_id: sample.id.clone(),
            method_digest: method_digest.to_string(),
            model_name: model.to_string(),
            hit: point_in_bbox(click, &sample.gt),
            click: Some(click),
            failure: None,
            failure_reason: None,
            fallback: false,
            stage_trace_ref: None,
            wall_time: 0.0,
        }
    }

    pub fn failed(sample: &GroundingSample, method_digest: &str, model: &str, kind: FailureKind, reason: String) -> Self {
        Self {
            sample_id: sample.id.clone(),
            method_digest: method_digest.to_string(),
            model_name: model.to_string(),
            hit: false,
            click: None,
            failure: Some(kind),
            failure_reason: Some(reason),
            fallback: false,
            stage_trace_ref: None,
            wall_time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSummary {
    pub total: usize,
    pub hits: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub total: usize,
    pub hits: usize,
    /// Percent, micro-averaged over all samples.
    pub accuracy: f64,
    pub parse_failures: usize,
    pub transport_failures: usize,
    pub other_failures: usize,
    pub per_platform: BTreeMap<Platform, PlatformSummary>,
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// Click accuracy over exactly one record per sample; failures count as misses.
pub fn score(records: &[EvalRecord], samples: &[GroundingSample]) -> Result<EvalSummary, HarnessError> {
    if records.len() != samples.len() {
        return Err(HarnessError::Mismatch(format!(
            "{} records for {} samples",
            records.len(),
            samples.len()
        )));
    }
    let by_id: HashMap<&str, &GroundingSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut seen = HashSet::new();
    let mut summary = EvalSummary {
        total: records.len(),
        hits: 0,
        accuracy: 0.0,
        parse_failures: 0,
        transport_failures: 0,
        other_failures: 0,
        per_platform: BTreeMap::new(),
    };
    for r in records {
        let sample = by_id
            .get(r.sample_id.as_str())
            .ok_or_else(|| HarnessError::Mismatch(format!("record for unknown sample {:?}", r.sample_id)))?;
        if !seen.insert(r.sample_id.as_str()) {
            return Err(HarnessError::Mismatch(format!("duplicate record for sample {:?}", r.sample_id)));
        }
        if r.hit && !r.click.is_some_and(|c| point_in_bbox(c, &sample.gt)) {
            return Err(HarnessError::Mismatch(format!(
                "record for {:?} claims a hit without a click inside the ground truth",
                r.sample_id
            )));
        }
        let plat = summary.per_platform.entry(sample.platform).or_insert(PlatformSummary {
            total: 0,
            hits: 0,
            accuracy: 0.0,
        });
        plat.total += 1;
        if r.hit {
            plat.hits += 1;
            summary.hits += 1;
        }
        match r.failure {
            Some(FailureKind::Parse) => summary.parse_failures += 1,
            Some(FailureKind::Transport) => summary.transport_failures += 1,
            Some(FailureKind::Other) => summary.other_failures += 1,
            None => {}
        }
    }
    summary.accuracy = percent(summary.hits, summary.total);
    for p in summary.per_platform.values_mut() {
        p.accuracy = percent(p.hits, p.total);
    }
    Ok(summary)
}
