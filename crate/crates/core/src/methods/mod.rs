//! Grounding method controllers: overlay, prompt, model call(s), answer
//! parsing and mapping back to a click on the original screenshot.

mod parse;
mod prompt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{
    extremity_bbox, extremity_centroid, transform_to_original, BBox, ExtremityIds, GeometryError, GridSpec, Point,
    Transform,
};
use crate::model_client::{AnswerFormat, CallContext, ChatRequest, ModelError, VisionModel};
use crate::overlay::{
    annotate_bbox, crop_and_resize, render_axis_grid, render_grid_augmented, render_mark_grid, render_scaffold_dots,
    AxisSides, LabelMode, OverlayError, OverlayStyle, RasterImage, RenderPlan, Rendered, RED, WHITE,
};

pub use parse::{parse_grid_ids, parse_point, ParseError};
pub use prompt::{build_prompt, PROMPT_VERSION, QUESTION_STEM};

#[derive(Debug, Error)]
pub enum MethodError {
    #[error("invalid method configuration: {0}")]
    Config(String),
    #[error("overlay: {0}")]
    Overlay(#[from] OverlayError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("model call failed at stage {stage}: {source}")]
    Transport {
        stage: usize,
        #[source]
        source: ModelError,
        stages: Vec<StageRecord>,
    },
    #[error("unparseable answer at stage {stage}: {source}")]
    Parse {
        stage: usize,
        #[source]
        source: ParseError,
        stages: Vec<StageRecord>,
    },
}

impl MethodError {
    /// Stage trace gathered before the failure, if any.
    pub fn stages(&self) -> &[StageRecord] {
        match self {
            MethodError::Transport { stages, .. } | MethodError::Parse { stages, .. } => stages,
            _ => &[],
        }
    }
}

/// How Mark-Grid turns the final four extremity cells into a click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    /// Center of the box spanned by the cells' outer edges.
    #[default]
    Edge,
    /// Mean of the four cell centers.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkGridConfig {
    pub rows: u32,
    pub cols: u32,
    /// Crop-and-regrid refinement passes after the full-image pass.
    pub zoom_levels: u32,
    pub crop_short_side: u32,
    /// Pixels added around each box before cropping.
    pub margin: f64,
    pub center_mode: CenterMode,
}

impl Default for MarkGridConfig {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            zoom_levels: 1,
            crop_short_side: 512,
            margin: 0.0,
            center_mode: CenterMode::Edge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Direct,
    GridAugmented {
        rows: u32,
        cols: u32,
    },
    ScaffoldPrompting {
        rows: u32,
        cols: u32,
        label_mode: LabelMode,
    },
    CoordinateScaffold {
        rows: u32,
        cols: u32,
        label_mode: LabelMode,
    },
    AxisGrid {
        interval: u32,
        sides: AxisSides,
        draw_grid: bool,
    },
    MarkGrid(MarkGridConfig),
}

impl Method {
    pub fn kind(&self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::GridAugmented { .. } => "grid_augmented",
            Method::ScaffoldPrompting { .. } => "scaffold_prompting",
            Method::CoordinateScaffold { .. } => "coordinate_scaffold",
            Method::AxisGrid { .. } => "axis_grid",
            Method::MarkGrid(_) => "mark_grid",
        }
    }

    pub fn default_for(kind: &str) -> Option<Method> {
        Some(match kind.replace('-', "_").as_str() {
            "direct" => Method::Direct,
            "grid_augmented" => Method::GridAugmented { rows: 9, cols: 9 },
            "scaffold_prompting" => Method::ScaffoldPrompting {
                rows: 6,
                cols: 6,
                label_mode: LabelMode::Indices,
            },
            "coordinate_scaffold" => Method::CoordinateScaffold {
                rows: 6,
                cols: 6,
                label_mode: LabelMode::Coords,
            },
            "axis_grid" => Method::AxisGrid {
                interval: 100,
                sides: AxisSides::ALL,
                draw_grid: true,
            },
            "mark_grid" => Method::MarkGrid(MarkGridConfig::default()),
            _ => return None,
        })
    }

    pub fn is_single_pass(&self) -> bool {
        !matches!(self, Method::MarkGrid(_))
    }
}

/// A method plus an optional style override for its overlays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    #[serde(flatten)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<OverlayStyle>,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self { method, style: None }
    }

    pub fn with_style(mut self, style: OverlayStyle) -> Self {
        self.style = Some(style);
        self
    }

    pub fn style(&self) -> OverlayStyle {
        self.style.unwrap_or_else(|| match self.method {
            Method::GridAugmented { .. } => OverlayStyle::black_grid(),
            _ => OverlayStyle::scaffold(),
        })
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        let grid = |rows: u32, cols: u32| {
            if rows < 2 || cols < 2 {
                Err(MethodError::Config(format!("grid needs at least 2x2, got {rows}x{cols}")))
            } else {
                Ok(())
            }
        };
        match self.method {
            Method::Direct => {}
            Method::GridAugmented { rows, cols }
            | Method::ScaffoldPrompting { rows, cols, .. }
            | Method::CoordinateScaffold { rows, cols, .. } => grid(rows, cols)?,
            Method::AxisGrid { interval, .. } => {
                if interval < 10 {
                    return Err(MethodError::Config(format!("axis interval must be >= 10, got {interval}")));
                }
            }
            Method::MarkGrid(cfg) => {
                grid(cfg.rows, cfg.cols)?;
                if cfg.zoom_levels > 2 {
                    return Err(MethodError::Config(format!(
                        "zoom_levels must be 0, 1 or 2, got {}",
                        cfg.zoom_levels
                    )));
                }
                if cfg.crop_short_side < 64 {
                    return Err(MethodError::Config(format!(
                        "crop_short_side must be >= 64, got {}",
                        cfg.crop_short_side
                    )));
                }
                if !(cfg.margin.is_finite() && cfg.margin >= 0.0) {
                    return Err(MethodError::Config(format!("margin must be >= 0, got {}", cfg.margin)));
                }
            }
        }
        if let Some(style) = &self.style {
            style.validate()?;
        }
        Ok(())
    }

    /// Stable short hash of the configuration and prompt version.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config is plain data");
        let mut h = Sha256::new();
        h.update(PROMPT_VERSION.as_bytes());
        h.update(json.as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// Human-readable label used in reports.
    pub fn label(&self) -> String {
        match self.method {
            Method::Direct => "direct".into(),
            Method::GridAugmented { rows, cols } => format!("grid_augmented {rows}x{cols}"),
            Method::ScaffoldPrompting { rows, cols, label_mode } => {
                format!("scaffold_prompting {rows}x{cols} {}", label_mode_name(label_mode))
            }
            Method::CoordinateScaffold { rows, cols, label_mode } => {
                format!("coordinate_scaffold {rows}x{cols} {}", label_mode_name(label_mode))
            }
            Method::AxisGrid {
                interval,
                sides,
                draw_grid,
            } => format!(
                "axis_grid i{interval} {}{}",
                sides.label(),
                if draw_grid { "" } else { " nogrid" }
            ),
            Method::MarkGrid(c) => {
                let mut s = format!("mark_grid {}x{} z{}", c.rows, c.cols, c.zoom_levels);
                if c.crop_short_side != 512 {
                    s.push_str(&format!(" s{}", c.crop_short_side));
                }
                if c.margin != 0.0 {
                    s.push_str(&format!(" m{}", c.margin));
                }
                if c.center_mode == CenterMode::Centroid {
                    s.push_str(" centroid");
                }
                s
            }
        }
    }
}

fn label_mode_name(m: LabelMode) -> &'static str {
    match m {
        LabelMode::None => "dots",
        LabelMode::Indices => "indices",
        LabelMode::Coords => "coords",
    }
}

impl fmt::Display for MethodConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn parse_flag<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("invalid boolean {value:?} for {key}")),
    }
}

impl FromStr for MethodConfig {
    type Err = String;

    /// `kind[:key=value,...]`, e.g. `mark-grid:rows=5,cols=5,zoom=2` or
    /// `axis-grid:interval=50,sides=bottom+left,grid=false`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let mut method = Method::default_for(kind.trim()).ok_or_else(|| {
            format!(
                "unknown method {kind:?} (direct|grid-augmented|scaffold-prompting|coordinate-scaffold|axis-grid|mark-grid)"
            )
        })?;
        for kv in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {kv:?}"))?;
            let key = key.trim().replace('-', "_");
            let value = value.trim();
            match (&mut method, key.as_str()) {
                (Method::GridAugmented { rows, .. }, "rows")
                | (Method::ScaffoldPrompting { rows, .. }, "rows")
                | (Method::CoordinateScaffold { rows, .. }, "rows") => *rows = parse_flag(&key, value)?,
                (Method::GridAugmented { cols, .. }, "cols")
                | (Method::ScaffoldPrompting { cols, .. }, "cols")
                | (Method::CoordinateScaffold { cols, .. }, "cols") => *cols = parse_flag(&key, value)?,
                (Method::ScaffoldPrompting { label_mode, .. }, "labels" | "label_mode")
                | (Method::CoordinateScaffold { label_mode, .. }, "labels" | "label_mode") => {
                    *label_mode = value.parse()?
                }
                (Method::AxisGrid { interval, .. }, "interval") => *interval = parse_flag(&key, value)?,
                (Method::AxisGrid { sides, .. }, "sides") => *sides = value.parse()?,
                (Method::AxisGrid { draw_grid, .. }, "grid" | "draw_grid") => *draw_grid = parse_bool(&key, value)?,
                (Method::MarkGrid(c), "rows") => c.rows = parse_flag(&key, value)?,
                (Method::MarkGrid(c), "cols") => c.cols = parse_flag(&key, value)?,
                (Method::MarkGrid(c), "zoom" | "zoom_levels") => c.zoom_levels = parse_flag(&key, value)?,
                (Method::MarkGrid(c), "short_side" | "crop_short_side") => c.crop_short_side = parse_flag(&key, value)?,
                (Method::MarkGrid(c), "margin") => c.margin = parse_flag(&key, value)?,
                (Method::MarkGrid(c), "center") => {
                    c.center_mode = match value {
                        "edge" => CenterMode::Edge,
                        "centroid" => CenterMode::Centroid,
                        other => return Err(format!("unknown center mode {other:?} (edge|centroid)")),
                    }
                }
                (m, k) => return Err(format!("parameter {k:?} does not apply to {}", m.kind())),
            }
        }
        let cfg = MethodConfig::new(method);
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

/// A grounding query. `ground_truth` is only forwarded to oracle mocks.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub id: &'a str,
    pub image: &'a RasterImage,
    pub instruction: &'a str,
    pub ground_truth: Option<BBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            max_tokens: ChatRequest::DEFAULT_MAX_TOKENS,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParsedAnswer {
    Point { point: Point },
    GridIds { ids: ExtremityIds },
    Failed { reason: String },
}

/// One model call and everything needed to re-derive its contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub prompt: String,
    pub images_digest: Vec<String>,
    pub raw_response: String,
    pub parsed: ParsedAnswer,
    /// Grid drawn on the answered image (grid stages only).
    pub grid: Option<GridSpec>,
    /// Answered-image pixels -> original screenshot pixels.
    pub to_original: Transform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub click: Point,
    pub bbox: Option<BBox>,
    pub stages: Vec<StageRecord>,
    pub method: MethodConfig,
    pub model_name: String,
    /// Set when a refinement stage failed to parse and the click came from an
    /// earlier box.
    pub fallback: bool,
    pub image_width: u32,
    pub image_height: u32,
}

impl Prediction {
    /// Recomputes the click from the recorded parsed answers alone.
    pub fn replay(&self) -> Result<Point, GeometryError> {
        replay_click(&self.method, &self.stages, self.image_width, self.image_height)
    }

    pub fn trace_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prediction is plain data")
    }
}

/// Click implied by a stage trace: the last parsed point for single-pass
/// methods, the center of the last parsed grid box for Mark-Grid.
pub fn replay_click(
    method: &MethodConfig,
    stages: &[StageRecord],
    width: u32,
    height: u32,
) -> Result<Point, GeometryError> {
    let mut click = None;
    for stage in stages {
        match (&stage.parsed, stage.grid) {
            (ParsedAnswer::Point { point }, _) => click = Some(transform_to_original(*point, &stage.to_original)),
            (ParsedAnswer::GridIds { ids }, Some(grid)) => {
                click = Some(grid_stage_click(method, &grid, ids, &stage.to_original)?.0)
            }
            _ => {}
        }
    }
    let click = click.ok_or(GeometryError::InvalidBox {
        left: f64::NAN,
        top: f64::NAN,
        right: f64::NAN,
        bottom: f64::NAN,
    })?;
    Ok(click.clamp_to(width, height))
}

/// Original-space box and click for one grid answer.
fn grid_stage_click(
    method: &MethodConfig,
    grid: &GridSpec,
    ids: &ExtremityIds,
    to_original: &Transform,
) -> Result<(Point, BBox), GeometryError> {
    let local = extremity_bbox(grid, ids)?;
    let bbox = to_original.to_original_box(&local);
    let center_mode = match method.method {
        Method::MarkGrid(c) => c.center_mode,
        _ => CenterMode::Edge,
    };
    let click = match center_mode {
        CenterMode::Edge => bbox.center(),
        CenterMode::Centroid => transform_to_original(extremity_centroid(grid, ids)?, to_original),
    };
    Ok((click, bbox))
}

fn call(
    model: &dyn VisionModel,
    query: &Query<'_>,
    decoding: &Decoding,
    images: Vec<RasterImage>,
    prompt: String,
    ctx: CallContext,
    stages: &[StageRecord],
) -> Result<(ChatRequest, String), MethodError> {
    let req = ChatRequest::new(images, prompt)
        .map_err(|source| MethodError::Transport {
            stage: ctx.stage,
            source,
            stages: stages.to_vec(),
        })?
        .with_decoding(decoding.max_tokens, decoding.temperature);
    log::debug!("{} stage {} -> {}", query.id, ctx.stage, model.name());
    let completion = model.complete(&req, &ctx).map_err(|source| MethodError::Transport {
        stage: ctx.stage,
        source,
        stages: stages.to_vec(),
    })?;
    Ok((req, completion.text))
}

/// Runs any method on one query.
pub fn run_method(
    query: &Query<'_>,
    model: &dyn VisionModel,
    cfg: &MethodConfig,
    decoding: &Decoding,
) -> Result<Prediction, MethodError> {
    match cfg.method {
        Method::MarkGrid(_) => run_mark_grid(query, model, cfg, decoding),
        _ => run_single_pass(query, model, cfg, decoding),
    }
}

/// The first image a method shows the model, with its render plan. For
/// Mark-Grid this is the full-image labelled grid.
pub fn render_overlay(img: &RasterImage, cfg: &MethodConfig) -> Result<Rendered, MethodError> {
    cfg.validate()?;
    let style = cfg.style();
    Ok(match cfg.method {
        Method::Direct => Rendered {
            image: img.clone(),
            plan: RenderPlan::default(),
        },
        Method::GridAugmented { rows, cols } => render_grid_augmented(img, rows, cols, &style)?,
        Method::ScaffoldPrompting { rows, cols, label_mode } | Method::CoordinateScaffold { rows, cols, label_mode } => {
            render_scaffold_dots(img, rows, cols, label_mode, &style)?
        }
        Method::AxisGrid {
            interval,
            sides,
            draw_grid,
        } => render_axis_grid(img, interval, sides, draw_grid, &style)?,
        Method::MarkGrid(mg) => render_mark_grid(img, mg.rows, mg.cols, &style)?.0,
    })
}

/// One overlay, one call, one `(x, y)` answer.
pub fn run_single_pass(
    query: &Query<'_>,
    model: &dyn VisionModel,
    cfg: &MethodConfig,
    decoding: &Decoding,
) -> Result<Prediction, MethodError> {
    cfg.validate()?;
    if !cfg.method.is_single_pass() {
        return Err(MethodError::Config("mark_grid is a multi-stage method".into()));
    }
    let img = query.image;
    let shown = render_overlay(img, cfg)?.image;
    let (w, h) = (img.width(), img.height());
    let prompt = build_prompt(cfg, query.instruction, 0, (w, h));
    let ctx = CallContext {
        sample_id: query.id.to_string(),
        stage: 0,
        format: AnswerFormat::Point,
        to_original: Transform::IDENTITY,
        ground_truth: query.ground_truth,
    };
    let (req, raw) = call(model, query, decoding, vec![shown], prompt, ctx, &[])?;
    let mut record = StageRecord {
        stage: 0,
        prompt: req.prompt.clone(),
        images_digest: req.image_digests(),
        raw_response: raw.clone(),
        parsed: ParsedAnswer::Failed { reason: String::new() },
        grid: None,
        to_original: Transform::IDENTITY,
    };
    match parse_point(&raw, w, h) {
        Ok(point) => {
            record.parsed = ParsedAnswer::Point { point };
            let click = transform_to_original(point, &Transform::IDENTITY).clamp_to(w, h);
            Ok(Prediction {
                click,
                bbox: None,
                stages: vec![record],
                method: *cfg,
                model_name: model.name().to_string(),
                fallback: false,
                image_width: w,
                image_height: h,
            })
        }
        Err(source) => {
            record.parsed = ParsedAnswer::Failed {
                reason: source.reason.clone(),
            };
            Err(MethodError::Parse {
                stage: 0,
                source,
                stages: vec![record],
            })
        }
    }
}

/// Full-image labelled grid, then `zoom_levels` crop-magnify-regrid passes.
///
/// Each pass crops the clean original to the previous box, regrids the
/// magnified crop, and shows the model the original (with the previous box
/// outlined) next to the gridded crop. The click is the center of the last
/// parsed box. A parse failure after the first pass keeps the last good box.
pub fn run_mark_grid(
    query: &Query<'_>,
    model: &dyn VisionModel,
    cfg: &MethodConfig,
    decoding: &Decoding,
) -> Result<Prediction, MethodError> {
    cfg.validate()?;
    let Method::MarkGrid(mg) = cfg.method else {
        return Err(MethodError::Config(format!("{} is not mark_grid", cfg.method.kind())));
    };
    let style = cfg.style();
    let box_style = OverlayStyle {
        line_color: RED,
        line_thickness: 3,
        label_color: RED,
        label_background: Some(WHITE),
        font_height: style.font_height,
    };
    let img = query.image;
    let (w, h) = (img.width(), img.height());
    let max_id = mg.rows * mg.cols;
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut last: Option<(Point, BBox)> = None;
    let mut fallback = false;

    for stage in 0..=mg.zoom_levels as usize {
        let (images, grid, to_original) = if let Some((_, prev)) = last {
            let crop_box = prev.expand(mg.margin);
            let (crop, t) = crop_and_resize(img, &crop_box, mg.crop_short_side)?;
            let (gridded, grid) = render_mark_grid(&crop, mg.rows, mg.cols, &style)?;
            let annotated = annotate_bbox(img, &prev, &box_style)?;
            (vec![annotated.image, gridded.image], grid, t)
        } else {
            let (gridded, grid) = render_mark_grid(img, mg.rows, mg.cols, &style)?;
            (vec![gridded.image], grid, Transform::IDENTITY)
        };
        let prompt = build_prompt(cfg, query.instruction, stage, (grid.width, grid.height));
        let ctx = CallContext {
            sample_id: query.id.to_string(),
            stage,
            format: AnswerFormat::GridIds { grid },
            to_original,
            ground_truth: query.ground_truth,
        };
        let (req, raw) = call(model, query, decoding, images, prompt, ctx, &stages)?;
        let mut record = StageRecord {
            stage,
            prompt: req.prompt.clone(),
            images_digest: req.image_digests(),
            raw_response: raw.clone(),
            parsed: ParsedAnswer::Failed { reason: String::new() },
            grid: Some(grid),
            to_original,
        };
        match parse_grid_ids(&raw, max_id) {
            Ok(ids) => {
                record.parsed = ParsedAnswer::GridIds { ids };
                stages.push(record);
                last = Some(grid_stage_click(cfg, &grid, &ids, &to_original)?);
            }
            Err(source) => {
                record.parsed = ParsedAnswer::Failed {
                    reason: source.reason.clone(),
                };
                stages.push(record);
                if last.is_none() {
                    return Err(MethodError::Parse { stage, source, stages });
                }
                log::debug!("{}: stage {stage} unparseable, keeping previous box", query.id);
                fallback = true;
                break;
            }
        }
    }
    let (click, bbox) = last.expect("stage 0 either parsed or returned");
    Ok(Prediction {
        click: click.clamp_to(w, h),
        bbox: Some(bbox),
        stages,
        method: *cfg,
        model_name: model.name().to_string(),
        fallback,
        image_width: w,
        image_height: h,
    })
}
