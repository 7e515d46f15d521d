//! C ABI over the groundkit core.
//!
//! Every fallible function returns a [`GkStatus`]; on failure a message is
//! available from [`gk_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `*_free` function. Strings returned by
//! the library are freed with [`gk_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use groundkit::geometry::{self, BBox, ExtremityIds, GridSpec, Point};
use groundkit::methods::{self, MethodConfig};
use groundkit::overlay::{self, RasterImage};
use groundkit::pointing_game::{self, AttentionDump, Interp};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Parse = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Axis-aligned box in pixels; membership tests include the edges.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkPoint {
    pub x: f64,
    pub y: f64,
}

/// Maps crop pixels back to the source image: `p / scale + offset`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkTransform {
    pub offset_x: f64,
    pub offset_y: f64,
    pub scale: f64,
}

/// Four extremity cell IDs, 1-based row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GkExtremities {
    pub leftmost: u32,
    pub topmost: u32,
    pub rightmost: u32,
    pub bottommost: u32,
}

/// Opaque RGB8 image.
pub struct GkImage(RasterImage);

/// Opaque attention dump.
pub struct GkAttentionDump(AttentionDump);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GkStatus, String);

impl Failure {
    fn new(status: GkStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GkStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(GkStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(GkStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(GkStatus::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(GkStatus::NullPointer, format!("{name} is null")))
}

fn invalid(e: impl ToString) -> Failure {
    Failure::new(GkStatus::InvalidArgument, e)
}

fn to_box(b: &GkBox) -> Result<BBox, Failure> {
    BBox::new(b.left, b.top, b.right, b.bottom).map_err(invalid)
}

fn from_box(b: BBox) -> GkBox {
    GkBox {
        left: b.left,
        top: b.top,
        right: b.right,
        bottom: b.bottom,
    }
}

fn grid(rows: u32, cols: u32, width: u32, height: u32) -> Result<GridSpec, Failure> {
    GridSpec::new(rows, cols, width, height).map_err(invalid)
}

fn overlay_failure(e: overlay::OverlayError) -> Failure {
    match e {
        overlay::OverlayError::Image(_) => Failure::new(GkStatus::Io, e),
        _ => invalid(e),
    }
}

fn method_failure(e: methods::MethodError) -> Failure {
    match e {
        methods::MethodError::Overlay(o) => overlay_failure(o),
        other => invalid(other),
    }
}

fn dump_failure(e: pointing_game::DumpError) -> Failure {
    match e {
        pointing_game::DumpError::Io { .. } => Failure::new(GkStatus::Io, e),
        pointing_game::DumpError::Format { .. } => Failure::new(GkStatus::Format, e),
        other => invalid(other),
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn gk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn gk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Decodes an image file (PNG, JPEG, ...) into a new handle.
#[no_mangle]
pub unsafe extern "C" fn gk_image_load(path: *const c_char, out_image: *mut *mut GkImage) -> GkStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out_image = out(out_image, "out_image")?;
        let img = RasterImage::load(path).map_err(|e| Failure::new(GkStatus::Io, format!("{path}: {e}")))?;
        *out_image = Box::into_raw(Box::new(GkImage(img)));
        Ok(())
    })
}

/// Copies `len` bytes of tightly packed RGB8 pixels into a new handle.
#[no_mangle]
pub unsafe extern "C" fn gk_image_from_rgb(
    width: u32,
    height: u32,
    pixels: *const u8,
    len: usize,
    out_image: *mut *mut GkImage,
) -> GkStatus {
    guard(|| {
        if pixels.is_null() {
            return Err(Failure::new(GkStatus::NullPointer, "pixels is null"));
        }
        let out_image = out(out_image, "out_image")?;
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        let img = RasterImage::from_raw(width, height, data).map_err(invalid)?;
        *out_image = Box::into_raw(Box::new(GkImage(img)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gk_image_free(image: *mut GkImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Width in pixels, 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn gk_image_width(image: *const GkImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.width())
}

/// Height in pixels, 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn gk_image_height(image: *const GkImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.height())
}

/// Borrowed RGB8 pixel data, valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn gk_image_pixels(image: *const GkImage, out_len: *mut usize) -> *const u8 {
    match image.as_ref() {
        Some(i) => {
            if let Some(l) = out_len.as_mut() {
                *l = i.0.pixels().len();
            }
            i.0.pixels().as_ptr()
        }
        None => ptr::null(),
    }
}

#[no_mangle]
pub unsafe extern "C" fn gk_image_save_png(image: *const GkImage, path: *const c_char) -> GkStatus {
    guard(|| {
        let img = handle(image, "image")?;
        let path = str_arg(path, "path")?;
        img.0
            .save_png(path)
            .map_err(|e| Failure::new(GkStatus::Io, format!("{path}: {e}")))
    })
}

/// Renders the first overlay of `method` (e.g. `"mark-grid:rows=6,cols=6"`).
/// `out_plan_json` may be NULL; otherwise it receives the render plan, to be
/// freed with [`gk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn gk_render_overlay(
    image: *const GkImage,
    method: *const c_char,
    out_image: *mut *mut GkImage,
    out_plan_json: *mut *mut c_char,
) -> GkStatus {
    guard(|| {
        let img = handle(image, "image")?;
        let spec = str_arg(method, "method")?;
        let out_image = out(out_image, "out_image")?;
        let cfg: MethodConfig = spec.parse().map_err(invalid)?;
        let rendered = methods::render_overlay(&img.0, &cfg).map_err(method_failure)?;
        if let Some(plan) = out_plan_json.as_mut() {
            *plan = into_c_string(rendered.plan.to_json());
        }
        *out_image = Box::into_raw(Box::new(GkImage(rendered.image)));
        Ok(())
    })
}

/// Outlines `bbox` on a copy of `image`.
#[no_mangle]
pub unsafe extern "C" fn gk_annotate_box(image: *const GkImage, bbox: GkBox, out_image: *mut *mut GkImage) -> GkStatus {
    guard(|| {
        let img = handle(image, "image")?;
        let out_image = out(out_image, "out_image")?;
        let b = to_box(&bbox)?;
        let rendered = overlay::annotate_bbox(&img.0, &b, &overlay::OverlayStyle::default()).map_err(overlay_failure)?;
        *out_image = Box::into_raw(Box::new(GkImage(rendered.image)));
        Ok(())
    })
}

/// Crops to `bbox` and scales so the shorter side is `short_side` pixels.
#[no_mangle]
pub unsafe extern "C" fn gk_crop_and_resize(
    image: *const GkImage,
    bbox: GkBox,
    short_side: u32,
    out_image: *mut *mut GkImage,
    out_transform: *mut GkTransform,
) -> GkStatus {
    guard(|| {
        let img = handle(image, "image")?;
        let out_image = out(out_image, "out_image")?;
        let out_transform = out(out_transform, "out_transform")?;
        let b = to_box(&bbox)?;
        let (crop, t) = overlay::crop_and_resize(&img.0, &b, short_side).map_err(overlay_failure)?;
        *out_transform = GkTransform {
            offset_x: t.offset_x,
            offset_y: t.offset_y,
            scale: t.scale,
        };
        *out_image = Box::into_raw(Box::new(GkImage(crop)));
        Ok(())
    })
}

/// Pixel bounds of cell `id` in a `rows x cols` grid over `width x height`.
#[no_mangle]
pub unsafe extern "C" fn gk_cell_bounds(
    rows: u32,
    cols: u32,
    width: u32,
    height: u32,
    id: u32,
    out_box: *mut GkBox,
) -> GkStatus {
    guard(|| {
        let out_box = out(out_box, "out_box")?;
        let g = grid(rows, cols, width, height)?;
        *out_box = from_box(geometry::cell_id_to_bounds(&g, id).map_err(invalid)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gk_cell_center(
    rows: u32,
    cols: u32,
    width: u32,
    height: u32,
    id: u32,
    out_point: *mut GkPoint,
) -> GkStatus {
    guard(|| {
        let out_point = out(out_point, "out_point")?;
        let g = grid(rows, cols, width, height)?;
        let p = geometry::cell_center(&g, id).map_err(invalid)?;
        *out_point = GkPoint { x: p.x, y: p.y };
        Ok(())
    })
}

/// Box spanned by four extremity cells.
#[no_mangle]
pub unsafe extern "C" fn gk_extremity_box(
    rows: u32,
    cols: u32,
    width: u32,
    height: u32,
    ids: GkExtremities,
    out_box: *mut GkBox,
) -> GkStatus {
    guard(|| {
        let out_box = out(out_box, "out_box")?;
        let g = grid(rows, cols, width, height)?;
        let ids = ExtremityIds {
            leftmost: ids.leftmost,
            topmost: ids.topmost,
            rightmost: ids.rightmost,
            bottommost: ids.bottommost,
        };
        *out_box = from_box(geometry::extremity_bbox(&g, &ids).map_err(invalid)?);
        Ok(())
    })
}

/// Extremity cells that cover `target`.
#[no_mangle]
pub unsafe extern "C" fn gk_covering_extremities(
    rows: u32,
    cols: u32,
    width: u32,
    height: u32,
    target: GkBox,
    out_ids: *mut GkExtremities,
) -> GkStatus {
    guard(|| {
        let out_ids = out(out_ids, "out_ids")?;
        let g = grid(rows, cols, width, height)?;
        let t = to_box(&target)?;
        let frame = BBox::full(width, height);
        let t = t
            .intersect(&frame)
            .ok_or_else(|| invalid("target does not overlap the grid"))?;
        let ids = geometry::covering_extremities(&g, &t);
        *out_ids = GkExtremities {
            leftmost: ids.leftmost,
            topmost: ids.topmost,
            rightmost: ids.rightmost,
            bottommost: ids.bottommost,
        };
        Ok(())
    })
}

/// Maps a crop-space point to the source image.
#[no_mangle]
pub extern "C" fn gk_transform_to_original(t: GkTransform, p: GkPoint) -> GkPoint {
    let q = Point::new(p.x / t.scale + t.offset_x, p.y / t.scale + t.offset_y);
    GkPoint { x: q.x, y: q.y }
}

/// Reads a click point from a model answer for a `width x height` image.
#[no_mangle]
pub unsafe extern "C" fn gk_parse_point(raw: *const c_char, width: u32, height: u32, out_point: *mut GkPoint) -> GkStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let out_point = out(out_point, "out_point")?;
        let p = methods::parse_point(raw, width, height).map_err(|e| Failure::new(GkStatus::Parse, e))?;
        *out_point = GkPoint { x: p.x, y: p.y };
        Ok(())
    })
}

/// Reads four extremity cell IDs (each in `1..=max_id`) from a model answer.
#[no_mangle]
pub unsafe extern "C" fn gk_parse_grid_ids(raw: *const c_char, max_id: u32, out_ids: *mut GkExtremities) -> GkStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let out_ids = out(out_ids, "out_ids")?;
        let ids = methods::parse_grid_ids(raw, max_id).map_err(|e| Failure::new(GkStatus::Parse, e))?;
        *out_ids = GkExtremities {
            leftmost: ids.leftmost,
            topmost: ids.topmost,
            rightmost: ids.rightmost,
            bottommost: ids.bottommost,
        };
        Ok(())
    })
}

/// Loads and validates an attention dump directory.
#[no_mangle]
pub unsafe extern "C" fn gk_dump_load(dir: *const c_char, out_dump: *mut *mut GkAttentionDump) -> GkStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let out_dump = out(out_dump, "out_dump")?;
        let dump = pointing_game::load_attention_dump(dir).map_err(dump_failure)?;
        *out_dump = Box::into_raw(Box::new(GkAttentionDump(dump)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gk_dump_free(dump: *mut GkAttentionDump) {
    if !dump.is_null() {
        drop(Box::from_raw(dump));
    }
}

/// Number of layers, 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn gk_dump_layer_count(dump: *const GkAttentionDump) -> usize {
    dump.as_ref().map_or(0, |d| d.0.layer_count())
}

/// Scores a dump against `gt`. `interp` is 0 for nearest, 1 for bilinear.
/// `layer_hits` may be NULL; otherwise it must hold `layer_hits_len` bytes and
/// receives 1 per hitting layer, 0 otherwise.
#[no_mangle]
pub unsafe extern "C" fn gk_pointing_game(
    dump: *const GkAttentionDump,
    gt: GkBox,
    interp: u32,
    out_hit: *mut bool,
    layer_hits: *mut u8,
    layer_hits_len: usize,
) -> GkStatus {
    guard(|| {
        let dump = handle(dump, "dump")?;
        let out_hit = out(out_hit, "out_hit")?;
        let interp = match interp {
            0 => Interp::Nearest,
            1 => Interp::Bilinear,
            other => return Err(invalid(format!("interp {other} is not 0 (nearest) or 1 (bilinear)"))),
        };
        let b = to_box(&gt)?;
        let res = pointing_game::pointing_game_score(&dump.0, &b, interp).map_err(dump_failure)?;
        if !layer_hits.is_null() {
            if layer_hits_len < res.per_layer.len() {
                return Err(Failure::new(
                    GkStatus::BufferTooSmall,
                    format!("layer_hits holds {layer_hits_len}, need {}", res.per_layer.len()),
                ));
            }
            let buf = std::slice::from_raw_parts_mut(layer_hits, res.per_layer.len());
            for (slot, hit) in buf.iter_mut().zip(&res.per_layer) {
                *slot = u8::from(*hit);
            }
        }
        *out_hit = res.hit;
        Ok(())
    })
}
