//! Deterministic rendering of spatial scaffolds onto screenshots.
//!
//! Every render op returns the pixels together with a [`RenderPlan`], the list
//! of primitives it drew, so geometry can be checked without OCR.

mod draw;
mod raster;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cell_center, BBox, GeometryError, GridSpec, Transform};

pub use draw::{label_size, LABEL_PAD};
pub use raster::{RasterImage, Rgb};

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

pub const BLACK: Rgb = [0, 0, 0];
pub const WHITE: Rgb = [255, 255, 255];
pub const RED: Rgb = [255, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub line_color: Rgb,
    pub line_thickness: u32,
    pub label_color: Rgb,
    pub label_background: Option<Rgb>,
    pub font_height: u32,
}

impl OverlayStyle {
    pub fn new(
        line_color: Rgb,
        line_thickness: u32,
        label_color: Rgb,
        label_background: Option<Rgb>,
        font_height: u32,
    ) -> Result<Self, OverlayError> {
        let style = Self {
            line_color,
            line_thickness,
            label_color,
            label_background,
            font_height,
        };
        style.validate()?;
        Ok(style)
    }

    pub fn validate(&self) -> Result<(), OverlayError> {
        if self.line_thickness < 1 {
            return Err(OverlayError::Degenerate("line_thickness must be >= 1".into()));
        }
        if self.font_height < 6 {
            return Err(OverlayError::Degenerate("font_height must be >= 6".into()));
        }
        Ok(())
    }

    /// Plain black 2 px grid used by the grid-augmented baseline.
    pub fn black_grid() -> Self {
        Self {
            line_color: BLACK,
            line_thickness: 2,
            label_color: BLACK,
            label_background: Some(WHITE),
            font_height: 16,
        }
    }

    /// Red 2 px lines with black labels on white boxes, for the scaffolds.
    pub fn scaffold() -> Self {
        Self {
            line_color: RED,
            line_thickness: 2,
            label_color: BLACK,
            label_background: Some(WHITE),
            font_height: 16,
        }
    }

    fn dot_radius(&self) -> u32 {
        2 * self.line_thickness + 1
    }
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self::scaffold()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinePrim {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotPrim {
    pub x: i64,
    pub y: i64,
    pub r: u32,
}

/// A label; `(x, y)` is the top-left corner of its background box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPrim {
    pub x: i64,
    pub y: i64,
    pub s: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderPlan {
    pub lines: Vec<LinePrim>,
    pub dots: Vec<DotPrim>,
    pub texts: Vec<TextPrim>,
}

impl RenderPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan is plain data")
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: RasterImage,
    pub plan: RenderPlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    None,
    Indices,
    Coords,
}

impl std::str::FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "indices" => Ok(Self::Indices),
            "coords" => Ok(Self::Coords),
            other => Err(format!("unknown label mode {other:?} (none|indices|coords)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AxisSides {
    pub top: bool,
    pub bottom: bool,
    pub left: bool,
    pub right: bool,
}

impl AxisSides {
    pub const ALL: AxisSides = AxisSides {
        top: true,
        bottom: true,
        left: true,
        right: true,
    };

    pub fn label(&self) -> String {
        if *self == Self::ALL {
            return "all".into();
        }
        let mut parts = Vec::new();
        for (on, name) in [
            (self.top, "top"),
            (self.bottom, "bottom"),
            (self.left, "left"),
            (self.right, "right"),
        ] {
            if on {
                parts.push(name);
            }
        }
        parts.join("+")
    }
}

impl Default for AxisSides {
    fn default() -> Self {
        Self::ALL
    }
}

impl std::str::FromStr for AxisSides {
    type Err = String;

    /// Accepts `all` or a `,`/`+` separated subset of `top,bottom,left,right`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Self::ALL);
        }
        let mut sides = AxisSides {
            top: false,
            bottom: false,
            left: false,
            right: false,
        };
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "top" => sides.top = true,
                "bottom" => sides.bottom = true,
                "left" => sides.left = true,
                "right" => sides.right = true,
                other => return Err(format!("unknown axis side {other:?}")),
            }
        }
        if !(sides.top || sides.bottom || sides.left || sides.right) {
            return Err("at least one axis side is required".into());
        }
        Ok(sides)
    }
}

fn check_grid_counts(rows: u32, cols: u32) -> Result<(), OverlayError> {
    if rows < 2 || cols < 2 {
        return Err(OverlayError::Degenerate(format!(
            "grid needs at least 2 rows and 2 cols, got {rows}x{cols}"
        )));
    }
    Ok(())
}

fn grid_for(img: &RasterImage, rows: u32, cols: u32) -> Result<GridSpec, OverlayError> {
    check_grid_counts(rows, cols)?;
    GridSpec::new(rows, cols, img.width(), img.height()).map_err(|_| {
        OverlayError::Degenerate(format!(
            "{}x{} image is smaller than a {rows}x{cols} grid",
            img.width(),
            img.height()
        ))
    })
}

fn draw_interior_lines(img: &mut RasterImage, plan: &mut RenderPlan, grid: &GridSpec, style: &OverlayStyle) {
    let w = i64::from(grid.width);
    let h = i64::from(grid.height);
    for i in 1..grid.rows {
        let y = i64::from(grid.row_edge(i));
        draw::segment(img, plan, 0, y, w, y, style);
    }
    for j in 1..grid.cols {
        let x = i64::from(grid.col_edge(j));
        draw::segment(img, plan, x, 0, x, h, style);
    }
}

/// Unlabelled `rows x cols` grid: `rows-1` horizontal and `cols-1` vertical
/// interior lines on the tiling boundaries.
pub fn render_grid_augmented(
    img: &RasterImage,
    rows: u32,
    cols: u32,
    style: &OverlayStyle,
) -> Result<Rendered, OverlayError> {
    style.validate()?;
    let grid = grid_for(img, rows, cols)?;
    let mut out = img.clone();
    let mut plan = RenderPlan::default();
    draw_interior_lines(&mut out, &mut plan, &grid, style);
    Ok(Rendered { image: out, plan })
}

/// Anchor coordinates `round((k + 0.5) * extent / count)` for `k in 0..count`.
pub fn anchor_positions(extent: u32, count: u32) -> Vec<u32> {
    (0..count)
        .map(|k| {
            let num = 2 * (2 * u64::from(k) + 1) * u64::from(extent) + 2 * u64::from(count);
            (num / (4 * u64::from(count))) as u32
        })
        .collect()
}

/// Dot matrix with optional labels: `(i+1,j+1)` in indices mode, the anchor's
/// pixel coordinates `(x,y)` in coords mode.
pub fn render_scaffold_dots(
    img: &RasterImage,
    rows: u32,
    cols: u32,
    label_mode: LabelMode,
    style: &OverlayStyle,
) -> Result<Rendered, OverlayError> {
    style.validate()?;
    check_grid_counts(rows, cols)?;
    let xs = anchor_positions(img.width(), cols);
    let ys = anchor_positions(img.height(), rows);
    let r = style.dot_radius();
    let mut out = img.clone();
    let mut plan = RenderPlan::default();
    for &y in &ys {
        for &x in &xs {
            draw::dot(&mut out, &mut plan, i64::from(x), i64::from(y), r, style.line_color);
        }
    }
    if label_mode != LabelMode::None {
        for (i, &y) in ys.iter().enumerate() {
            for (j, &x) in xs.iter().enumerate() {
                let text = match label_mode {
                    LabelMode::Indices => format!("({},{})", i + 1, j + 1),
                    LabelMode::Coords => format!("({x},{y})"),
                    LabelMode::None => unreachable!(),
                };
                let (w, h) = label_size(&text, style);
                let lx = draw::clamp_origin(i64::from(x + r + 2), w, img.width());
                let ly = draw::clamp_origin(i64::from(y + r + 2), h, img.height());
                draw::label(&mut out, &mut plan, lx, ly, &text, style);
            }
        }
    }
    Ok(Rendered { image: out, plan })
}

/// Tick coordinates `0, interval, 2*interval, ...` strictly below `extent`.
pub fn axis_ticks(extent: u32, interval: u32) -> Vec<u32> {
    (0..extent).step_by(interval.max(1) as usize).collect()
}

/// Coordinate scales along the selected edges, optionally with a full grid at
/// the same coordinates.
pub fn render_axis_grid(
    img: &RasterImage,
    interval: u32,
    sides: AxisSides,
    draw_grid: bool,
    style: &OverlayStyle,
) -> Result<Rendered, OverlayError> {
    style.validate()?;
    if interval < 10 {
        return Err(OverlayError::Degenerate(format!(
            "axis interval must be >= 10, got {interval}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let (wi, hi) = (i64::from(w), i64::from(h));
    let xs = axis_ticks(w, interval);
    let ys = axis_ticks(h, interval);
    let tick = i64::from(style.font_height / 2 + 2);
    let mut out = img.clone();
    let mut plan = RenderPlan::default();

    if draw_grid {
        for &y in &ys {
            draw::segment(&mut out, &mut plan, 0, i64::from(y), wi, i64::from(y), style);
        }
        for &x in &xs {
            draw::segment(&mut out, &mut plan, i64::from(x), 0, i64::from(x), hi, style);
        }
    }
    for &x in &xs {
        let x = i64::from(x);
        if sides.top {
            draw::segment(&mut out, &mut plan, x, 0, x, tick, style);
        }
        if sides.bottom {
            draw::segment(&mut out, &mut plan, x, hi - tick, x, hi, style);
        }
    }
    for &y in &ys {
        let y = i64::from(y);
        if sides.left {
            draw::segment(&mut out, &mut plan, 0, y, tick, y, style);
        }
        if sides.right {
            draw::segment(&mut out, &mut plan, wi - tick, y, wi, y, style);
        }
    }

    let gap = tick + 1;
    for &x in &xs {
        let text = x.to_string();
        let (lw, lh) = label_size(&text, style);
        let lx = draw::clamp_origin(i64::from(x) - i64::from(lw) / 2, lw, w);
        if sides.top {
            let ly = draw::clamp_origin(gap, lh, h);
            draw::label(&mut out, &mut plan, lx, ly, &text, style);
        }
        if sides.bottom {
            let ly = draw::clamp_origin(hi - gap - i64::from(lh), lh, h);
            draw::label(&mut out, &mut plan, lx, ly, &text, style);
        }
    }
    for &y in &ys {
        let text = y.to_string();
        let (lw, lh) = label_size(&text, style);
        let ly = draw::clamp_origin(i64::from(y) - i64::from(lh) / 2, lh, h);
        if sides.left {
            let lx = draw::clamp_origin(gap, lw, w);
            draw::label(&mut out, &mut plan, lx, ly, &text, style);
        }
        if sides.right {
            let lx = draw::clamp_origin(wi - gap - i64::from(lw), lw, w);
            draw::label(&mut out, &mut plan, lx, ly, &text, style);
        }
    }
    Ok(Rendered { image: out, plan })
}

/// Grid with every cell labelled by its row-major ID at the cell center.
pub fn render_mark_grid(
    img: &RasterImage,
    rows: u32,
    cols: u32,
    style: &OverlayStyle,
) -> Result<(Rendered, GridSpec), OverlayError> {
    style.validate()?;
    let grid = grid_for(img, rows, cols)?;
    let min_w = (0..cols).map(|j| grid.col_edge(j + 1) - grid.col_edge(j)).min().unwrap_or(0);
    let min_h = (0..rows).map(|i| grid.row_edge(i + 1) - grid.row_edge(i)).min().unwrap_or(0);
    if min_w.min(min_h) < style.font_height {
        return Err(OverlayError::Degenerate(format!(
            "{rows}x{cols} cells on a {}x{} image are {min_w}x{min_h} px, smaller than the \
             {} px font; use a coarser grid or a larger image",
            img.width(),
            img.height(),
            style.font_height
        )));
    }
    let mut out = img.clone();
    let mut plan = RenderPlan::default();
    draw_interior_lines(&mut out, &mut plan, &grid, style);
    for id in 1..=grid.cell_count() {
        let c = cell_center(&grid, id)?;
        let text = id.to_string();
        let (lw, lh) = label_size(&text, style);
        let (lx, ly) = draw::centered_origin(c.x, c.y, lw, lh, img.width(), img.height());
        draw::label(&mut out, &mut plan, lx, ly, &text, style);
    }
    Ok((Rendered { image: out, plan }, grid))
}

/// Rectangle outline of `bbox`, clipped to the last pixel row/column.
pub fn annotate_bbox(img: &RasterImage, bbox: &BBox, style: &OverlayStyle) -> Result<Rendered, OverlayError> {
    style.validate()?;
    let frame = BBox::full(img.width(), img.height());
    let clipped = bbox.intersect(&frame).ok_or_else(|| {
        OverlayError::Degenerate(format!("box {bbox:?} does not intersect the image"))
    })?;
    let max_x = i64::from(img.width()) - 1;
    let max_y = i64::from(img.height()) - 1;
    let l = (clipped.left.round() as i64).clamp(0, max_x);
    let t = (clipped.top.round() as i64).clamp(0, max_y);
    let r = (clipped.right.round() as i64).clamp(0, max_x);
    let b = (clipped.bottom.round() as i64).clamp(0, max_y);
    let mut out = img.clone();
    let mut plan = RenderPlan::default();
    draw::segment(&mut out, &mut plan, l, t, r, t, style);
    draw::segment(&mut out, &mut plan, l, b, r, b, style);
    draw::segment(&mut out, &mut plan, l, t, l, b, style);
    draw::segment(&mut out, &mut plan, r, t, r, b, style);
    Ok(Rendered { image: out, plan })
}

/// Integer pixel region covered by `bbox`, clipped to the image, as
/// `(x, y, w, h)`.
pub fn crop_region(width: u32, height: u32, bbox: &BBox) -> Result<(u32, u32, u32, u32), OverlayError> {
    let x0 = bbox.left.max(0.0).floor();
    let y0 = bbox.top.max(0.0).floor();
    let x1 = bbox.right.min(f64::from(width)).ceil();
    let y1 = bbox.bottom.min(f64::from(height)).ceil();
    if !(x1 > x0 && y1 > y0) {
        return Err(OverlayError::Degenerate(format!(
            "crop box {bbox:?} has no area inside the {width}x{height} image"
        )));
    }
    Ok((x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
}

/// Pixel geometry of a crop-and-resize without touching pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropGeometry {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub out_width: u32,
    pub out_height: u32,
    pub transform: Transform,
}

pub fn crop_geometry(width: u32, height: u32, bbox: &BBox, short_side: u32) -> Result<CropGeometry, OverlayError> {
    if short_side == 0 {
        return Err(OverlayError::Degenerate("short_side must be positive".into()));
    }
    let (x, y, w, h) = crop_region(width, height, bbox)?;
    let scale = f64::from(short_side) / f64::from(w.min(h));
    let (out_width, out_height) = if w <= h {
        (short_side, (f64::from(h) * scale).round() as u32)
    } else {
        ((f64::from(w) * scale).round() as u32, short_side)
    };
    Ok(CropGeometry {
        x,
        y,
        width: w,
        height: h,
        out_width,
        out_height,
        transform: Transform::new(f64::from(x), f64::from(y), scale)?,
    })
}

/// Crops to `bbox` and scales uniformly so the shorter side becomes
/// `short_side`. The returned transform maps crop pixels back to `img`.
pub fn crop_and_resize(
    img: &RasterImage,
    bbox: &BBox,
    short_side: u32,
) -> Result<(RasterImage, Transform), OverlayError> {
    let g = crop_geometry(img.width(), img.height(), bbox, short_side)?;
    let crop = img.sub_image(g.x, g.y, g.width, g.height);
    let resized = if (g.out_width, g.out_height) == (g.width, g.height) {
        crop
    } else {
        RasterImage::from_rgb_image(image::imageops::resize(
            &crop.to_rgb_image(),
            g.out_width,
            g.out_height,
            image::imageops::FilterType::Triangle,
        ))
    };
    Ok((resized, g.transform))
}

/// Draws a label box with its top-left corner at `(x, y)`.
pub fn draw_label(img: &mut RasterImage, x: i64, y: i64, text: &str, style: &OverlayStyle) -> TextPrim {
    let mut plan = RenderPlan::default();
    draw::label(img, &mut plan, x, y, text, style);
    plan.texts.pop().expect("label recorded")
}
