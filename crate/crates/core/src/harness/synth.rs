use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, write_manifest, GroundingSample, HarnessError, ManifestEntry, Platform};
use crate::geometry::{cell_id_to_bounds, covering_extremities, extremity_bbox, point_in_bbox, BBox, GridSpec, Point, Transform};
use crate::overlay::{crop_geometry, draw_label, label_size, OverlayStyle, RasterImage, Rgb, BLACK};

/// Parameters of a generated screenshot benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub width: u32,
    pub height: u32,
    /// Mark-grid layout the targets are sized for.
    pub rows: u32,
    pub cols: u32,
    pub zoom_levels: u32,
    pub crop_short_side: u32,
    /// Full final-stage cells each target must contain.
    pub min_target_cells: usize,
    /// Every n-th target covers the image center, no other does. 0 disables.
    pub center_period: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_samples: 64,
            width: 1024,
            height: 768,
            rows: 8,
            cols: 8,
            zoom_levels: 1,
            crop_short_side: 512,
            min_target_cells: 1,
            center_period: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub manifest: PathBuf,
    pub samples: Vec<GroundingSample>,
    /// Samples whose target contains the image center.
    pub center_hits: usize,
}

const WORDS: [&str; 12] = [
    "Save", "Open", "Search", "Submit", "Cancel", "Share", "Print", "Export", "Delete", "Upload", "Login", "Help",
];

/// Click a flawless mark-grid reader would produce for `gt`, plus the number
/// of whole final-stage cells inside `gt`.
pub fn mark_grid_oracle(cfg: &SynthConfig, gt: &BBox) -> Option<(Point, usize)> {
    let (w, h) = (cfg.width, cfg.height);
    let mut to_original = Transform::IDENTITY;
    let mut grid = GridSpec::new(cfg.rows, cfg.cols, w, h).ok()?;
    let mut bbox = BBox::full(w, h);
    for stage in 0..=cfg.zoom_levels {
        if stage > 0 {
            let g = crop_geometry(w, h, &bbox, cfg.crop_short_side).ok()?;
            to_original = g.transform;
            grid = GridSpec::new(cfg.rows, cfg.cols, g.out_width, g.out_height).ok()?;
        }
        let shown = to_original.forward_box(gt);
        let target = shown.intersect(&BBox::full(grid.width, grid.height))?;
        let ids = covering_extremities(&grid, &target);
        bbox = to_original.to_original_box(&extremity_bbox(&grid, &ids).ok()?);
    }
    let shown = to_original.forward_box(gt);
    let inside = (1..=grid.cell_count())
        .filter(|&id| cell_id_to_bounds(&grid, id).is_ok_and(|c| shown.contains_box(&c)))
        .count();
    Some((bbox.center(), inside))
}

fn pastel(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.gen_range(200..=250), rng.gen_range(200..=250), rng.gen_range(200..=250)]
}

fn widget(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.gen_range(40..=180), rng.gen_range(40..=180), rng.gen_range(40..=180)]
}

fn draw_widget(img: &mut RasterImage, b: &BBox, fill: Rgb, text: &str, style: &OverlayStyle) {
    let (l, t, r, bo) = (b.left as i64, b.top as i64, b.right as i64, b.bottom as i64);
    img.fill_rect(l, t, r, bo, BLACK);
    img.fill_rect(l + 1, t + 1, r - 1, bo - 1, fill);
    let (lw, lh) = label_size(text, style);
    if i64::from(lw) <= r - l - 2 && i64::from(lh) <= bo - t - 2 {
        let x = l + (r - l - i64::from(lw)) / 2;
        let y = t + (bo - t - i64::from(lh)) / 2;
        draw_label(img, x, y, text, style);
    }
}

fn place_target(rng: &mut ChaCha8Rng, cfg: &SynthConfig, want_center: Option<bool>) -> Result<BBox, HarnessError> {
    let (w, h) = (f64::from(cfg.width), f64::from(cfg.height));
    let center = Point::new((w / 2.0).round(), (h / 2.0).round());
    let min_w = (2.0 * w / f64::from(cfg.cols) / f64::from(cfg.cols)).ceil().max(8.0);
    let min_h = (2.0 * h / f64::from(cfg.rows) / f64::from(cfg.rows)).ceil().max(8.0);
    for _ in 0..20_000 {
        let bw = rng.gen_range(min_w..=(w / 4.0).max(min_w)).round();
        let bh = rng.gen_range(min_h..=(h / 6.0).max(min_h)).round();
        let x = rng.gen_range(0.0..=(w - bw)).round();
        let y = rng.gen_range(0.0..=(h - bh)).round();
        let gt = BBox::new(x, y, x + bw, y + bh).map_err(|e| HarnessError::Argument(e.to_string()))?;
        if want_center.is_some_and(|want| point_in_bbox(center, &gt) != want) {
            continue;
        }
        if let Some((click, cells)) = mark_grid_oracle(cfg, &gt) {
            if point_in_bbox(click, &gt) && cells >= cfg.min_target_cells {
                return Ok(gt);
            }
        }
    }
    Err(HarnessError::Argument(format!(
        "could not place a target meeting the constraints on a {}x{} image",
        cfg.width, cfg.height
    )))
}

/// Writes `images/<id>.png` and `manifest.jsonl` under `out_dir`. Output is a
/// pure function of `cfg`.
pub fn synth_benchmark(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthBenchmark, HarnessError> {
    if cfg.n_samples == 0 || cfg.rows < 2 || cfg.cols < 2 || cfg.width < 64 || cfg.height < 64 {
        return Err(HarnessError::Argument(
            "need at least one sample, a grid of at least 2x2 and an image of at least 64x64".into(),
        ));
    }
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let style = OverlayStyle {
        label_background: None,
        font_height: 8,
        ..OverlayStyle::scaffold()
    };
    let platforms = [Platform::Desktop, Platform::Web, Platform::Mobile];

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut entries = Vec::with_capacity(cfg.n_samples);
    let mut center_hits = 0;
    for i in 0..cfg.n_samples {
        let id = format!("synth-{i:04}");
        let mut img = RasterImage::filled(cfg.width, cfg.height, pastel(&mut rng))?;
        // title bar and a few distractor widgets
        img.fill_rect(0, 0, i64::from(cfg.width), 24, widget(&mut rng));
        let word = WORDS[rng.gen_range(0..WORDS.len())];
        let name = format!("{word} {}", i + 1);
        for d in 0..rng.gen_range(3..7) {
            let bw = f64::from(rng.gen_range(60..160u32));
            let bh = f64::from(rng.gen_range(24..48u32));
            let x = f64::from(rng.gen_range(0..cfg.width - bw as u32));
            let y = f64::from(rng.gen_range(24..cfg.height - bh as u32));
            let b = BBox::new(x, y, x + bw, y + bh).map_err(|e| HarnessError::Argument(e.to_string()))?;
            let other = WORDS[(d + i) % WORDS.len()];
            draw_widget(&mut img, &b, widget(&mut rng), other, &style);
        }
        let want_center = (cfg.center_period > 0).then(|| i % cfg.center_period == 0);
        let gt = place_target(&mut rng, cfg, want_center)?;
        draw_widget(&mut img, &gt, widget(&mut rng), &name, &style);
        if want_center == Some(true) {
            center_hits += 1;
        }

        let rel = format!("images/{id}.png");
        let path = out_dir.join(&rel);
        img.save_png(&path)?;
        let sample = GroundingSample {
            id,
            image: path,
            instruction: format!("press the \"{name}\" button"),
            gt,
            platform: platforms[i % platforms.len()],
            source: "synthetic".into(),
        };
        entries.push(ManifestEntry::from_sample(&sample, rel));
        samples.push(sample);
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(SynthBenchmark {
        manifest,
        samples,
        center_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::load_benchmark;

    #[test]
    fn generation_is_deterministic_and_loadable() {
        let cfg = SynthConfig {
            n_samples: 6,
            width: 320,
            height: 240,
            center_period: 3,
            ..SynthConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = synth_benchmark(&cfg, a.path()).unwrap();
        let sb = synth_benchmark(&cfg, b.path()).unwrap();
        assert_eq!(sa.center_hits, 2);
        assert_eq!(
            fs::read_to_string(&sa.manifest).unwrap(),
            fs::read_to_string(&sb.manifest).unwrap()
        );
        let img_a = fs::read(a.path().join("images/synth-0003.png")).unwrap();
        let img_b = fs::read(b.path().join("images/synth-0003.png")).unwrap();
        assert_eq!(img_a, img_b);
        let loaded = load_benchmark(&sa.manifest).unwrap();
        assert_eq!(loaded.len(), 6);
        for (s, l) in sa.samples.iter().zip(&loaded) {
            assert_eq!(s.gt, l.gt);
        }
    }

    #[test]
    fn oracle_click_lands_in_target() {
        let cfg = SynthConfig::default();
        let gt = BBox::new(300.0, 200.0, 340.0, 230.0).unwrap();
        let (click, cells) = mark_grid_oracle(&cfg, &gt).unwrap();
        assert!(point_in_bbox(click, &gt), "{click:?}");
        assert!(cells >= 1);
    }
}
