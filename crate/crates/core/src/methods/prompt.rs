//! Versioned prompt templates. Every template opens with the same question
//! stem and then states the answer format for its method.

use super::{Method, MethodConfig};
use crate::overlay::LabelMode;

/// Bumped whenever a template changes; part of every method digest.
pub const PROMPT_VERSION: &str = "v1";

pub const QUESTION_STEM: &str = "Where should I click if I want to";

const POINT_DIRECT: &str = include_str!("../../prompts/point_direct.txt");
const POINT_GRID_AUGMENTED: &str = include_str!("../../prompts/point_grid_augmented.txt");
const POINT_SCAFFOLD_DOTS: &str = include_str!("../../prompts/point_scaffold_dots.txt");
const POINT_SCAFFOLD_INDICES: &str = include_str!("../../prompts/point_scaffold_indices.txt");
const POINT_SCAFFOLD_COORDS: &str = include_str!("../../prompts/point_scaffold_coords.txt");
const POINT_AXIS_GRID: &str = include_str!("../../prompts/point_axis_grid.txt");
const MARK_GRID_STAGE0: &str = include_str!("../../prompts/mark_grid_stage0.txt");
const MARK_GRID_ZOOM: &str = include_str!("../../prompts/mark_grid_zoom.txt");

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.trim_end().to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Prompt for `stage` of `method` on an image of `dims` (width, height).
/// The instruction is embedded verbatim, trailing `?`/`.` aside.
pub fn build_prompt(method: &MethodConfig, instruction: &str, stage: usize, dims: (u32, u32)) -> String {
    let instruction = instruction.trim().trim_end_matches(['?', '.']);
    let mut vars = vec![
        ("instruction", instruction.to_string()),
        ("width", dims.0.to_string()),
        ("height", dims.1.to_string()),
    ];
    let template = match &method.method {
        Method::Direct => POINT_DIRECT,
        Method::GridAugmented { rows, cols } => {
            vars.push(("rows", rows.to_string()));
            vars.push(("cols", cols.to_string()));
            POINT_GRID_AUGMENTED
        }
        Method::ScaffoldPrompting { rows, cols, label_mode } | Method::CoordinateScaffold { rows, cols, label_mode } => {
            vars.push(("rows", rows.to_string()));
            vars.push(("cols", cols.to_string()));
            match label_mode {
                LabelMode::None => POINT_SCAFFOLD_DOTS,
                LabelMode::Indices => POINT_SCAFFOLD_INDICES,
                LabelMode::Coords => POINT_SCAFFOLD_COORDS,
            }
        }
        Method::AxisGrid {
            interval,
            sides,
            draw_grid,
        } => {
            vars.push(("interval", interval.to_string()));
            let sides = if sides.label() == "all" {
                "all four edges".to_string()
            } else {
                sides.label().replace('+', ", ")
            };
            vars.push(("sides", sides));
            let note = if *draw_grid { " and matching grid lines across the image" } else { "" };
            vars.push(("grid_note", note.to_string()));
            POINT_AXIS_GRID
        }
        Method::MarkGrid(cfg) => {
            vars.push(("rows", cfg.rows.to_string()));
            vars.push(("cols", cfg.cols.to_string()));
            vars.push(("max_id", (cfg.rows * cfg.cols).to_string()));
            if stage == 0 {
                MARK_GRID_STAGE0
            } else {
                MARK_GRID_ZOOM
            }
        }
    };
    fill(template, &vars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::MarkGridConfig;

    #[test]
    fn direct_prompt_has_stem_with_instruction() {
        let p = build_prompt(&MethodConfig::new(Method::Direct), "open settings", 0, (800, 600));
        assert!(p.starts_with("Where should I click if I want to open settings?"), "{p}");
        assert!(p.contains("800x600"));
        assert_eq!(p, build_prompt(&MethodConfig::new(Method::Direct), "open settings", 0, (800, 600)));
    }

    #[test]
    fn no_unfilled_placeholders() {
        for spec in ["direct", "grid-augmented", "scaffold-prompting", "coordinate-scaffold", "coordinate-scaffold:labels=none", "axis-grid:sides=bottom+left,grid=false", "mark-grid"] {
            let m: MethodConfig = spec.parse().unwrap();
            for stage in 0..2 {
                let p = build_prompt(&m, "close the tab", stage, (100, 100));
                assert!(!p.contains('{') && !p.contains('}'), "{spec}: {p}");
            }
        }
    }

    #[test]
    fn mark_grid_zoom_prompt_mentions_both_images() {
        let m = MethodConfig::new(Method::MarkGrid(MarkGridConfig::default()));
        let p = build_prompt(&m, "close the tab", 1, (512, 512));
        assert!(p.contains("two images"));
        assert!(p.contains("original screenshot") && p.contains("magnified"));
        assert!(p.contains("leftmost, topmost, rightmost and bottommost"));
        assert!(p.contains("1 to 64"));
        let p0 = build_prompt(&m, "close the tab", 0, (512, 512));
        assert!(!p0.contains("two images"));
    }
}
