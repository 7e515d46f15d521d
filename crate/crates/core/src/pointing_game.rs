//! Pointing Game diagnostic over exported attention slices.
//!
//! For each layer the attention from the last instruction token to every image
//! token is averaged over heads, laid out on the image-token grid, resized to
//! the screenshot, and its peak tested against the ground-truth box. A sample
//! counts as a hit when any layer's peak lands inside the box.
//!
//! Dump layout (one directory per sample):
//!
//! ```text
//! meta.json       {"layers","heads","grid_h","grid_w","t_star","total_tokens",
//!                  "image_token_count","image_w","image_h","dtype":"f32le","model_id"}
//! layer_000.bin   little-endian f32, row-major [heads, image_token_count]
//! ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_in_bbox, BBox, Point};

const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("attention dump format error in `{field}`: {message}")]
    Format { field: String, message: String },
    #[error("layer {layer} out of range (dump has {layers} layers)")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("vector of length {len} cannot be reshaped to {grid_h}x{grid_w}")]
    LengthMismatch { len: usize, grid_h: u32, grid_w: u32 },
}

fn format_err(field: impl Into<String>, message: impl Into<String>) -> DumpError {
    DumpError::Format {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub layers: usize,
    pub heads: usize,
    pub grid_h: u32,
    pub grid_w: u32,
    pub t_star: usize,
    pub total_tokens: usize,
    pub image_token_count: usize,
    pub image_w: u32,
    pub image_h: u32,
    pub dtype: String,
    pub model_id: String,
}

impl DumpMeta {
    fn validate(&self) -> Result<(), DumpError> {
        if self.layers == 0 {
            return Err(format_err("layers", "must be >= 1"));
        }
        if self.heads == 0 {
            return Err(format_err("heads", "must be >= 1"));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(format_err("grid_h", "image-token grid must be non-empty"));
        }
        let cells = self.grid_h as usize * self.grid_w as usize;
        if self.image_token_count != cells {
            return Err(format_err(
                "image_token_count",
                format!(
                    "{} does not equal grid_h*grid_w = {}x{} = {cells}",
                    self.image_token_count, self.grid_h, self.grid_w
                ),
            ));
        }
        if self.t_star >= self.total_tokens {
            return Err(format_err(
                "t_star",
                format!("{} is not below total_tokens {}", self.t_star, self.total_tokens),
            ));
        }
        // the query is a text token, so at least one token lies outside I
        if self.image_token_count >= self.total_tokens {
            return Err(format_err(
                "total_tokens",
                format!(
                    "{} leaves no room for text tokens beside {} image tokens",
                    self.total_tokens, self.image_token_count
                ),
            ));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(format_err("image_w", "source image dimensions must be positive"));
        }
        if self.dtype != "f32le" {
            return Err(format_err("dtype", format!("unsupported dtype {:?}", self.dtype)));
        }
        Ok(())
    }
}

/// Per-layer, per-head attention rows from the query token to the image tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    meta: DumpMeta,
    /// `layers[l][h * image_token_count + k]`
    layers: Vec<Vec<f32>>,
}

pub fn layer_file_name(layer: usize) -> String {
    format!("layer_{layer:03}.bin")
}

impl AttentionDump {
    pub fn new(meta: DumpMeta, layers: Vec<Vec<f32>>) -> Result<Self, DumpError> {
        meta.validate()?;
        if layers.len() != meta.layers {
            return Err(format_err(
                "layers",
                format!("meta declares {} layers, got {}", meta.layers, layers.len()),
            ));
        }
        let row = meta.image_token_count;
        for (l, values) in layers.iter().enumerate() {
            let field = layer_file_name(l);
            if values.len() != meta.heads * row {
                return Err(format_err(
                    field,
                    format!("expected {} values ([{}, {}]), got {}", meta.heads * row, meta.heads, row, values.len()),
                ));
            }
            for (h, head) in values.chunks_exact(row).enumerate() {
                let mut sum = 0.0f64;
                for (k, &v) in head.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(format_err(&field, format!("non-finite value at head {h}, token {k}")));
                    }
                    if v < 0.0 {
                        return Err(format_err(&field, format!("negative value {v} at head {h}, token {k}")));
                    }
                    if v > 1.0 {
                        return Err(format_err(&field, format!("value {v} above 1 at head {h}, token {k}")));
                    }
                    sum += f64::from(v);
                }
                if sum > 1.0 + ROW_SUM_TOLERANCE {
                    return Err(format_err(
                        &field,
                        format!("head {h} attention over image tokens sums to {sum}, above 1"),
                    ));
                }
            }
        }
        Ok(Self { meta, layers })
    }

    pub fn meta(&self) -> &DumpMeta {
        &self.meta
    }

    pub fn layer_count(&self) -> usize {
        self.meta.layers
    }

    /// Row `A[layer, head, t*, I]`.
    pub fn head_row(&self, layer: usize, head: usize) -> &[f32] {
        let n = self.meta.image_token_count;
        &self.layers[layer][head * n..(head + 1) * n]
    }

    /// Appends one more layer, revalidating the dump.
    pub fn with_layer(mut self, values: Vec<f32>) -> Result<Self, DumpError> {
        self.layers.push(values);
        self.meta.layers += 1;
        Self::new(self.meta, self.layers)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), DumpError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DumpError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let meta_path = dir.join("meta.json");
        let json = serde_json::to_string_pretty(&self.meta).expect("meta is plain data");
        fs::write(&meta_path, json).map_err(io(&meta_path))?;
        for (l, values) in self.layers.iter().enumerate() {
            let path = dir.join(layer_file_name(l));
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&path, bytes).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// Reads and validates a dump directory.
pub fn load_attention_dump(dir: impl AsRef<Path>) -> Result<AttentionDump, DumpError> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|source| DumpError::Io {
        path: meta_path.clone(),
        source,
    })?;
    let meta: DumpMeta = serde_json::from_str(&text).map_err(|e| format_err("meta.json", e.to_string()))?;
    meta.validate()?;
    let expected = meta.heads * meta.image_token_count * 4;
    let mut layers = Vec::with_capacity(meta.layers);
    for l in 0..meta.layers {
        let name = layer_file_name(l);
        let path = dir.join(&name);
        if !path.exists() {
            return Err(format_err(name, "layer file missing"));
        }
        let bytes = fs::read(&path).map_err(|source| DumpError::Io { path, source })?;
        if bytes.len() != expected {
            return Err(format_err(
                name,
                format!("{} bytes on disk, expected {expected} (heads*image_token_count*4)", bytes.len()),
            ));
        }
        layers.push(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
    }
    AttentionDump::new(meta, layers)
}

/// Mean over heads of the query-to-image attention row of `layer` (0-based).
pub fn head_average(dump: &AttentionDump, layer: usize) -> Result<Vec<f64>, DumpError> {
    if layer >= dump.layer_count() {
        return Err(DumpError::LayerOutOfRange {
            layer,
            layers: dump.layer_count(),
        });
    }
    let heads = dump.meta.heads;
    let mut acc = vec![0.0f64; dump.meta.image_token_count];
    for h in 0..heads {
        for (a, &v) in acc.iter_mut().zip(dump.head_row(layer, h)) {
            *a += f64::from(v);
        }
    }
    let n = heads as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    #[default]
    Nearest,
    Bilinear,
}

impl std::str::FromStr for Interp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(format!("unknown interpolation {other:?} (nearest|bilinear)")),
        }
    }
}

/// Dense `height x width` map in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl AttentionMap {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }
}

/// Lays `v` out as a `grid_h x grid_w` grid and resizes it to `out_h x out_w`.
pub fn reshape_resize(
    v: &[f64],
    grid_h: u32,
    grid_w: u32,
    out_h: u32,
    out_w: u32,
    interp: Interp,
) -> Result<AttentionMap, DumpError> {
    if v.len() != grid_h as usize * grid_w as usize || v.is_empty() {
        return Err(DumpError::LengthMismatch {
            len: v.len(),
            grid_h,
            grid_w,
        });
    }
    let gw = grid_w as usize;
    let mut values = Vec::with_capacity(out_h as usize * out_w as usize);
    match interp {
        Interp::Nearest => {
            let cols: Vec<usize> = (0..out_w)
                .map(|x| (u64::from(x) * u64::from(grid_w) / u64::from(out_w)) as usize)
                .collect();
            for y in 0..out_h {
                let row = (u64::from(y) * u64::from(grid_h) / u64::from(out_h)) as usize;
                values.extend(cols.iter().map(|&c| v[row * gw + c]));
            }
        }
        Interp::Bilinear => {
            let xs: Vec<(usize, usize, f64)> = (0..out_w).map(|x| bilinear_taps(x, out_w, grid_w)).collect();
            for y in 0..out_h {
                let (y0, y1, fy) = bilinear_taps(y, out_h, grid_h);
                for &(x0, x1, fx) in &xs {
                    let top = v[y0 * gw + x0] * (1.0 - fx) + v[y0 * gw + x1] * fx;
                    let bottom = v[y1 * gw + x0] * (1.0 - fx) + v[y1 * gw + x1] * fx;
                    values.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Ok(AttentionMap {
        width: out_w,
        height: out_h,
        values,
    })
}

/// Half-pixel-center sampling taps along one axis.
fn bilinear_taps(out: u32, out_len: u32, src_len: u32) -> (usize, usize, f64) {
    let max = f64::from(src_len - 1);
    let s = ((f64::from(out) + 0.5) * f64::from(src_len) / f64::from(out_len) - 0.5).clamp(0.0, max);
    let i0 = s.floor();
    let i1 = (i0 + 1.0).min(max);
    (i0 as usize, i1 as usize, s - i0)
}

/// Pixel of the maximum; ties go to the smallest `y`, then the smallest `x`.
pub fn argmax_point(m: &AttentionMap) -> Point {
    let mut best = 0usize;
    for (i, &v) in m.values.iter().enumerate() {
        if v > m.values[best] {
            best = i;
        }
    }
    let w = m.width as usize;
    Point::new((best % w) as f64, (best / w) as f64)
}

pub fn layer_hit(p: Point, gt: &BBox) -> bool {
    point_in_bbox(p, gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointingGameResult {
    pub hit: bool,
    pub per_layer: Vec<bool>,
    pub per_layer_points: Vec<Point>,
}

/// Per-layer peak of the head-averaged map, and the union of layer hits.
pub fn pointing_game_score(dump: &AttentionDump, gt: &BBox, interp: Interp) -> Result<PointingGameResult, DumpError> {
    let meta = dump.meta();
    let mut per_layer = Vec::with_capacity(meta.layers);
    let mut per_layer_points = Vec::with_capacity(meta.layers);
    for l in 0..meta.layers {
        let avg = head_average(dump, l)?;
        let map = reshape_resize(&avg, meta.grid_h, meta.grid_w, meta.image_h, meta.image_w, interp)?;
        let p = argmax_point(&map);
        per_layer.push(layer_hit(p, gt));
        per_layer_points.push(p);
    }
    Ok(PointingGameResult {
        hit: per_layer.iter().any(|&h| h),
        per_layer,
        per_layer_points,
    })
}

/// Accuracy over many samples: the any-layer union, and each single layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointingGameSummary {
    pub samples: usize,
    pub union_accuracy: f64,
    pub per_layer_accuracy: Vec<f64>,
    pub best_layer: Option<usize>,
}

pub fn summarize(results: &[PointingGameResult]) -> PointingGameSummary {
    let n = results.len();
    let pct = |hits: usize| if n == 0 { 0.0 } else { 100.0 * hits as f64 / n as f64 };
    let layers = results.iter().map(|r| r.per_layer.len()).max().unwrap_or(0);
    let per_layer_accuracy: Vec<f64> = (0..layers)
        .map(|l| pct(results.iter().filter(|r| r.per_layer.get(l).copied().unwrap_or(false)).count()))
        .collect();
    let best_layer = per_layer_accuracy
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (l, &a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((l, a)),
        })
        .map(|(l, _)| l);
    PointingGameSummary {
        samples: n,
        union_accuracy: pct(results.iter().filter(|r| r.hit).count()),
        per_layer_accuracy,
        best_layer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(layers: usize, heads: usize, gh: u32, gw: u32, iw: u32, ih: u32) -> DumpMeta {
        DumpMeta {
            layers,
            heads,
            grid_h: gh,
            grid_w: gw,
            t_star: (gh * gw) as usize + 3,
            total_tokens: (gh * gw) as usize + 5,
            image_token_count: (gh * gw) as usize,
            image_w: iw,
            image_h: ih,
            dtype: "f32le".into(),
            model_id: "unit".into(),
        }
    }

    #[test]
    fn single_head_average_is_identity() {
        let row = vec![0.1, 0.2, 0.3, 0.05];
        let dump = AttentionDump::new(meta(1, 1, 2, 2, 4, 4), vec![row.clone()]).unwrap();
        let avg = head_average(&dump, 0).unwrap();
        for (a, r) in avg.iter().zip(&row) {
            assert_eq!(*a, f64::from(*r));
        }
    }

    #[test]
    fn two_head_average_is_mean() {
        let dump = AttentionDump::new(meta(1, 2, 1, 2, 4, 4), vec![vec![0.5, 0.25, 0.0, 0.75]]).unwrap();
        assert_eq!(head_average(&dump, 0).unwrap(), vec![0.25, 0.5]);
        assert!(matches!(head_average(&dump, 1), Err(DumpError::LayerOutOfRange { .. })));
    }

    #[test]
    fn identity_resize() {
        let v = [1.0, 2.0, 3.0, 4.0];
        for interp in [Interp::Nearest, Interp::Bilinear] {
            let m = reshape_resize(&v, 2, 2, 2, 2, interp).unwrap();
            assert_eq!(m.values, v.to_vec());
        }
    }

    #[test]
    fn nearest_upsamples_blocks() {
        let m = reshape_resize(&[0.0, 0.0, 0.0, 1.0], 2, 2, 4, 4, Interp::Nearest).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = if x >= 2 && y >= 2 { 1.0 } else { 0.0 };
                assert_eq!(m.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            reshape_resize(&[1.0; 5], 2, 2, 4, 4, Interp::Nearest),
            Err(DumpError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn argmax_tie_breaks_top_left() {
        let single = AttentionMap { width: 1, height: 1, values: vec![0.3] };
        assert_eq!(argmax_point(&single), Point::new(0.0, 0.0));
        let uniform = AttentionMap { width: 3, height: 2, values: vec![0.5; 6] };
        assert_eq!(argmax_point(&uniform), Point::new(0.0, 0.0));
        let m = AttentionMap { width: 3, height: 2, values: vec![0.0, 0.1, 0.0, 0.9, 0.0, 0.9] };
        assert_eq!(argmax_point(&m), Point::new(0.0, 1.0));
    }

    #[test]
    fn layer_hit_closed_box() {
        let gt = BBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
        assert!(layer_hit(Point::new(10.0, 20.0), &gt));
        assert!(!layer_hit(Point::new(21.0, 15.0), &gt));
        assert!(layer_hit(Point::new(3.0, 7.0), &BBox::full(40, 40)));
    }

    #[test]
    fn union_over_layers() {
        // layer 0 peaks top-left, layer 1 bottom-right
        let layers = vec![vec![0.9, 0.0, 0.0, 0.1], vec![0.1, 0.0, 0.0, 0.9]];
        let dump = AttentionDump::new(meta(2, 1, 2, 2, 100, 100), layers).unwrap();
        let gt = BBox::new(40.0, 40.0, 90.0, 90.0).unwrap();
        let r = pointing_game_score(&dump, &gt, Interp::Nearest).unwrap();
        assert_eq!(r.per_layer, vec![false, true]);
        assert!(r.hit);
        assert_eq!(r.per_layer_points[1], Point::new(50.0, 50.0));
    }

    #[test]
    fn validation_failures_name_fields() {
        let mut m = meta(1, 1, 8, 8, 10, 10);
        m.image_token_count = 100;
        let err = AttentionDump::new(m, vec![vec![0.0; 100]]).unwrap_err();
        assert!(err.to_string().contains("image_token_count"), "{err}");

        let err = AttentionDump::new(meta(1, 1, 1, 2, 4, 4), vec![vec![-0.1, 0.1]]).unwrap_err();
        assert!(err.to_string().contains("layer_000.bin") && err.to_string().contains("negative"), "{err}");

        let err = AttentionDump::new(meta(1, 1, 1, 2, 4, 4), vec![vec![0.7, 0.7]]).unwrap_err();
        assert!(err.to_string().contains("sums to"), "{err}");

        let mut m = meta(1, 1, 1, 2, 4, 4);
        m.t_star = m.total_tokens;
        assert!(AttentionDump::new(m, vec![vec![0.1, 0.1]]).is_err());
    }

    #[test]
    fn summary_picks_best_layer() {
        let r = |layers: Vec<bool>| PointingGameResult {
            hit: layers.iter().any(|&h| h),
            per_layer: layers,
            per_layer_points: vec![],
        };
        let s = summarize(&[r(vec![true, false]), r(vec![false, true]), r(vec![false, true]), r(vec![false, false])]);
        assert_eq!(s.union_accuracy, 75.0);
        assert_eq!(s.per_layer_accuracy, vec![25.0, 50.0]);
        assert_eq!(s.best_layer, Some(1));
    }
}
