//! Axis-aligned primitives and bitmap text. Everything is integer arithmetic
//! so renders are byte-identical across platforms.

use font8x8::legacy::BASIC_LEGACY;

use super::raster::{RasterImage, Rgb};
use super::{DotPrim, LinePrim, OverlayStyle, RenderPlan, TextPrim};

/// Padding between label text and its background box.
pub const LABEL_PAD: u32 = 2;

/// Pixel size of a rendered label box, including padding.
pub fn label_size(text: &str, style: &OverlayStyle) -> (u32, u32) {
    let n = text.chars().count() as u32;
    (
        n * style.font_height + 2 * LABEL_PAD,
        style.font_height + 2 * LABEL_PAD,
    )
}

fn glyph(c: char) -> [u8; 8] {
    let code = if c.is_ascii() { c as usize } else { '?' as usize };
    BASIC_LEGACY[code]
}

/// Draws one glyph scaled from the 8x8 source to a `size x size` cell.
fn draw_glyph(img: &mut RasterImage, x: i64, y: i64, c: char, size: u32, color: Rgb) {
    let rows = glyph(c);
    for gy in 0..size {
        let bits = rows[(gy * 8 / size) as usize];
        for gx in 0..size {
            if bits >> (gx * 8 / size) & 1 == 1 {
                let px = x + i64::from(gx);
                let py = y + i64::from(gy);
                if px >= 0 && py >= 0 && px < i64::from(img.width()) && py < i64::from(img.height())
                {
                    img.set(px as u32, py as u32, color);
                }
            }
        }
    }
}

/// Top-left corner that centers a box of `w x h` on `(cx, cy)` while keeping
/// it inside the frame.
pub fn centered_origin(cx: f64, cy: f64, w: u32, h: u32, img_w: u32, img_h: u32) -> (i64, i64) {
    let x = (cx - f64::from(w) / 2.0).round() as i64;
    let y = (cy - f64::from(h) / 2.0).round() as i64;
    (clamp_origin(x, w, img_w), clamp_origin(y, h, img_h))
}

pub fn clamp_origin(v: i64, size: u32, extent: u32) -> i64 {
    let max = i64::from(extent) - i64::from(size);
    v.min(max).max(0)
}

/// Renders a label box with its top-left at `(x, y)` and records it.
pub fn label(img: &mut RasterImage, plan: &mut RenderPlan, x: i64, y: i64, text: &str, style: &OverlayStyle) {
    let (w, h) = label_size(text, style);
    if let Some(bg) = style.label_background {
        img.fill_rect(x, y, x + i64::from(w), y + i64::from(h), bg);
    }
    let step = i64::from(style.font_height);
    let pad = i64::from(LABEL_PAD);
    for (i, c) in text.chars().enumerate() {
        draw_glyph(img, x + pad + i as i64 * step, y + pad, c, style.font_height, style.label_color);
    }
    plan.texts.push(TextPrim {
        x,
        y,
        s: text.to_string(),
    });
}

/// Axis-aligned segment of `style.line_thickness`, centered on the nominal
/// coordinates and clipped to the image.
pub fn segment(img: &mut RasterImage, plan: &mut RenderPlan, x1: i64, y1: i64, x2: i64, y2: i64, style: &OverlayStyle) {
    debug_assert!(x1 == x2 || y1 == y2, "only axis-aligned segments");
    let t = i64::from(style.line_thickness);
    let half = t / 2;
    let (lx, hx) = (x1.min(x2), x1.max(x2));
    let (ly, hy) = (y1.min(y2), y1.max(y2));
    img.fill_rect(lx - half, ly - half, hx - half + t, hy - half + t, style.line_color);
    plan.lines.push(LinePrim { x1, y1, x2, y2 });
}

pub fn dot(img: &mut RasterImage, plan: &mut RenderPlan, x: i64, y: i64, r: u32, color: Rgb) {
    let r = i64::from(r);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                let px = x + dx;
                let py = y + dy;
                if px >= 0 && py >= 0 && px < i64::from(img.width()) && py < i64::from(img.height())
                {
                    img.set(px as u32, py as u32, color);
                }
            }
        }
    }
    plan.dots.push(DotPrim { x, y, r: r as u32 });
}
