//! Grid tiling, cell-ID arithmetic, box algebra and crop-stage transforms.
//!
//! Coordinates follow screen conventions: `x` grows to the right from the
//! left edge, `y` grows downwards from the top edge. A ground-truth region
//! indexed as `GT(x, y)` therefore reads column `x`, row `y`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cell id {id} out of range 1..={max}")]
    CellIdOutOfRange { id: u32, max: u32 },
    #[error("invalid grid {rows}x{cols} over {width}x{height} image: every cell needs at least one pixel")]
    InvalidGrid {
        rows: u32,
        cols: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid box ({left}, {top}, {right}, {bottom}): need finite left < right and top < bottom")]
    InvalidBox {
        left: f64,
        top: f64,
        right: f64,
        bottom: f64,
    },
    #[error("transform scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Clamps into the pixel extent `[0, width-1] x [0, height-1]`.
    pub fn clamp_to(self, width: u32, height: u32) -> Self {
        let max_x = f64::from(width.max(1) - 1);
        let max_y = f64::from(height.max(1) - 1);
        Self {
            x: self.x.clamp(0.0, max_x),
            y: self.y.clamp(0.0, max_y),
        }
    }
}

/// Axis-aligned closed rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, GeometryError> {
        let finite = [left, top, right, bottom].iter().all(|v| v.is_finite());
        if !finite || left >= right || top >= bottom {
            return Err(GeometryError::InvalidBox {
                left,
                top,
                right,
                bottom,
            });
        }
        Ok(Self {
            left,
            top,
            right,
            bottom,
        })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            left: 0.0,
            top: 0.0,
            right: f64::from(width),
            bottom: f64::from(height),
        }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(
            (self.left + self.right) / 2.0,
            (self.top + self.bottom) / 2.0,
        )
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            left: self.left.min(other.left),
            top: self.top.min(other.top),
            right: self.right.max(other.right),
            bottom: self.bottom.max(other.bottom),
        }
    }

    /// Intersection with another box, `None` when the overlap has no area.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let left = self.left.max(other.left);
        let top = self.top.max(other.top);
        let right = self.right.min(other.right);
        let bottom = self.bottom.min(other.bottom);
        (left < right && top < bottom).then_some(BBox {
            left,
            top,
            right,
            bottom,
        })
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.left <= other.left
            && self.top <= other.top
            && self.right >= other.right
            && self.bottom >= other.bottom
    }

    /// Grows the box by `margin` on every side.
    pub fn expand(&self, margin: f64) -> BBox {
        BBox {
            left: self.left - margin,
            top: self.top - margin,
            right: self.right + margin,
            bottom: self.bottom + margin,
        }
    }
}

/// Closed-box membership: edges count as inside.
pub fn point_in_bbox(p: Point, b: &BBox) -> bool {
    b.left <= p.x && p.x <= b.right && b.top <= p.y && p.y <= b.bottom
}

/// Exact integer tiling of a `width x height` image into `rows x cols` cells.
///
/// Column boundaries sit at `round(j * width / cols)` for `j = 0..=cols`
/// (rows analogous), so residual pixels spread evenly and cell sizes differ
/// by at most one pixel. Cell IDs run `1..=rows*cols` in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    pub width: u32,
    pub height: u32,
}

impl GridSpec {
    pub fn new(rows: u32, cols: u32, width: u32, height: u32) -> Result<Self, GeometryError> {
        if rows == 0 || cols == 0 || width < cols || height < rows {
            return Err(GeometryError::InvalidGrid {
                rows,
                cols,
                width,
                height,
            });
        }
        Ok(Self {
            rows,
            cols,
            width,
            height,
        })
    }

    pub fn cell_count(&self) -> u32 {
        self.rows * self.cols
    }

    /// x coordinate of column boundary `j` (`0..=cols`).
    pub fn col_edge(&self, j: u32) -> u32 {
        rounded_edge(j, self.width, self.cols)
    }

    /// y coordinate of row boundary `i` (`0..=rows`).
    pub fn row_edge(&self, i: u32) -> u32 {
        rounded_edge(i, self.height, self.rows)
    }

    pub fn col_edges(&self) -> Vec<u32> {
        (0..=self.cols).map(|j| self.col_edge(j)).collect()
    }

    pub fn row_edges(&self) -> Vec<u32> {
        (0..=self.rows).map(|i| self.row_edge(i)).collect()
    }

    /// Zero-based (row, col) of a 1-based cell id.
    pub fn cell_position(&self, id: u32) -> Result<(u32, u32), GeometryError> {
        self.check_id(id)?;
        Ok(((id - 1) / self.cols, (id - 1) % self.cols))
    }

    pub fn cell_id(&self, row: u32, col: u32) -> u32 {
        row * self.cols + col + 1
    }

    fn check_id(&self, id: u32) -> Result<(), GeometryError> {
        if id == 0 || id > self.cell_count() {
            return Err(GeometryError::CellIdOutOfRange {
                id,
                max: self.cell_count(),
            });
        }
        Ok(())
    }

    /// Column whose half-open span `[x_j, x_{j+1})` holds `x`, clamped to the grid.
    pub fn col_at(&self, x: f64) -> u32 {
        span_index(x, self.cols, |j| self.col_edge(j))
    }

    pub fn row_at(&self, y: f64) -> u32 {
        span_index(y, self.rows, |i| self.row_edge(i))
    }

    /// Last column that overlaps `(.., x]` with positive width; used for
    /// right edges, where a box ending exactly on a boundary does not reach
    /// into the next cell.
    pub fn col_ending_at(&self, x: f64) -> u32 {
        closing_span_index(x, self.cols, |j| self.col_edge(j))
    }

    pub fn row_ending_at(&self, y: f64) -> u32 {
        closing_span_index(y, self.rows, |i| self.row_edge(i))
    }
}

fn rounded_edge(j: u32, extent: u32, parts: u32) -> u32 {
    // round-half-up of j * extent / parts in exact integer arithmetic
    let num = 2 * u64::from(j) * u64::from(extent) + u64::from(parts);
    (num / (2 * u64::from(parts))) as u32
}

fn span_index(v: f64, parts: u32, edge: impl Fn(u32) -> u32) -> u32 {
    let mut idx = 0;
    for j in 1..parts {
        if v >= f64::from(edge(j)) {
            idx = j;
        } else {
            break;
        }
    }
    idx
}

fn closing_span_index(v: f64, parts: u32, edge: impl Fn(u32) -> u32) -> u32 {
    let mut idx = 0;
    for j in 1..parts {
        if v > f64::from(edge(j)) {
            idx = j;
        } else {
            break;
        }
    }
    idx
}

pub fn cell_id_to_bounds(grid: &GridSpec, id: u32) -> Result<BBox, GeometryError> {
    let (row, col) = grid.cell_position(id)?;
    Ok(BBox {
        left: f64::from(grid.col_edge(col)),
        top: f64::from(grid.row_edge(row)),
        right: f64::from(grid.col_edge(col + 1)),
        bottom: f64::from(grid.row_edge(row + 1)),
    })
}

pub fn cell_center(grid: &GridSpec, id: u32) -> Result<Point, GeometryError> {
    cell_id_to_bounds(grid, id).map(|b| b.center())
}

/// Cell IDs naming the four sides of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtremityIds {
    pub leftmost: u32,
    pub topmost: u32,
    pub rightmost: u32,
    pub bottommost: u32,
}

impl ExtremityIds {
    pub fn uniform(id: u32) -> Self {
        Self {
            leftmost: id,
            topmost: id,
            rightmost: id,
            bottommost: id,
        }
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.leftmost, self.topmost, self.rightmost, self.bottommost]
    }
}

/// Box spanned by the outer edges of the four extremity cells.
///
/// An inverted answer (rightmost column left of leftmost, or bottommost row
/// above topmost) falls back to the union of the four cells.
pub fn extremity_bbox(grid: &GridSpec, ids: &ExtremityIds) -> Result<BBox, GeometryError> {
    let left = cell_id_to_bounds(grid, ids.leftmost)?;
    let top = cell_id_to_bounds(grid, ids.topmost)?;
    let right = cell_id_to_bounds(grid, ids.rightmost)?;
    let bottom = cell_id_to_bounds(grid, ids.bottommost)?;
    let edge_box = BBox {
        left: left.left,
        top: top.top,
        right: right.right,
        bottom: bottom.bottom,
    };
    if edge_box.right <= edge_box.left || edge_box.bottom <= edge_box.top {
        return Ok(left.union(&top).union(&right).union(&bottom));
    }
    Ok(edge_box)
}

/// Centroid of the four extremity cell centers; kept for ablation against
/// the edge-box center.
pub fn extremity_centroid(grid: &GridSpec, ids: &ExtremityIds) -> Result<Point, GeometryError> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    for id in ids.as_array() {
        let c = cell_center(grid, id)?;
        sx += c.x;
        sy += c.y;
    }
    Ok(Point::new(sx / 4.0, sy / 4.0))
}

/// The extremity cells a flawless reader would name for `target`.
///
/// Leftmost and topmost take the cell under the top-left corner, rightmost the
/// cell under the top-right corner, bottommost the one under the bottom-right
/// corner. Right and bottom edges use closing spans so a box that ends on a
/// boundary does not claim the neighbouring cell.
pub fn covering_extremities(grid: &GridSpec, target: &BBox) -> ExtremityIds {
    let left_col = grid.col_at(target.left);
    let right_col = grid.col_ending_at(target.right).max(left_col);
    let top_row = grid.row_at(target.top);
    let bottom_row = grid.row_ending_at(target.bottom).max(top_row);
    ExtremityIds {
        leftmost: grid.cell_id(top_row, left_col),
        topmost: grid.cell_id(top_row, left_col),
        rightmost: grid.cell_id(top_row, right_col),
        bottommost: grid.cell_id(bottom_row, right_col),
    }
}

/// Uniform scale plus offset mapping crop-space points back to the image the
/// crop was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub offset_x: f64,
    pub offset_y: f64,
    pub scale: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        offset_x: 0.0,
        offset_y: 0.0,
        scale: 1.0,
    };

    pub fn new(offset_x: f64, offset_y: f64, scale: f64) -> Result<Self, GeometryError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeometryError::InvalidScale(scale));
        }
        Ok(Self {
            offset_x,
            offset_y,
            scale,
        })
    }

    /// Original-image point into crop space.
    pub fn forward(&self, p: Point) -> Point {
        Point::new(
            (p.x - self.offset_x) * self.scale,
            (p.y - self.offset_y) * self.scale,
        )
    }

    pub fn forward_box(&self, b: &BBox) -> BBox {
        let tl = self.forward(Point::new(b.left, b.top));
        let br = self.forward(Point::new(b.right, b.bottom));
        BBox {
            left: tl.x,
            top: tl.y,
            right: br.x,
            bottom: br.y,
        }
    }

    pub fn to_original_box(&self, b: &BBox) -> BBox {
        let tl = transform_to_original(Point::new(b.left, b.top), self);
        let br = transform_to_original(Point::new(b.right, b.bottom), self);
        BBox {
            left: tl.x,
            top: tl.y,
            right: br.x,
            bottom: br.y,
        }
    }

    /// Chains `self` (inner crop -> intermediate) with `outer`
    /// (intermediate -> original).
    pub fn then(&self, outer: &Transform) -> Transform {
        Transform {
            offset_x: self.offset_x / outer.scale + outer.offset_x,
            offset_y: self.offset_y / outer.scale + outer.offset_y,
            scale: self.scale * outer.scale,
        }
    }
}

pub fn transform_to_original(p: Point, t: &Transform) -> Point {
    Point::new(p.x / t.scale + t.offset_x, p.y / t.scale + t.offset_y)
}
