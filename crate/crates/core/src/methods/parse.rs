//! Extraction of click points and grid IDs from free-form model answers.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::geometry::{ExtremityIds, Point};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason} (raw response: {raw:?})")]
pub struct ParseError {
    pub reason: String,
    pub raw: String,
}

impl ParseError {
    fn new(reason: impl Into<String>, raw: &str) -> Self {
        Self {
            reason: reason.into(),
            raw: raw.to_string(),
        }
    }
}

const NUM: &str = r"[-+]?\d+(?:\.\d+)?";

fn labeled_xy() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(&format!(
            r#"(?i)\bx["']?\s*[:=]\s*({NUM})\s*(?:,|;|and)?\s*["']?\by["']?\s*[:=]\s*({NUM})"#
        ))
        .unwrap()
    })
}

fn bracketed_xy() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!(r"[\(\[]\s*({NUM})\s*,\s*({NUM})\s*[\)\]]")).unwrap())
}

fn bare_xy() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!(r"(?:^|[^\w.])({NUM})\s*,\s*({NUM})(?:$|[^\w.])")).unwrap())
}

fn pair(re: &Regex, raw: &str) -> Option<(f64, f64)> {
    let caps = re.captures(raw)?;
    let x = caps.get(1)?.as_str().parse().ok()?;
    let y = caps.get(2)?.as_str().parse().ok()?;
    Some((x, y))
}

/// First plausible coordinate pair in `raw`, mapped into pixel space of a
/// `width x height` image.
///
/// `x=.., y=..` beats `(x, y)` / `[x, y]`, which beats a bare `x, y`. Pairs
/// with both values in `[0, 1]` are treated as normalized; pairs within
/// `[0, 1000]` that overflow the image are treated as 0-1000 normalized. The
/// result is clamped into the image.
pub fn parse_point(raw: &str, width: u32, height: u32) -> Result<Point, ParseError> {
    let (x, y) = pair(labeled_xy(), raw)
        .or_else(|| pair(bracketed_xy(), raw))
        .or_else(|| pair(bare_xy(), raw))
        .ok_or_else(|| ParseError::new("no coordinate pair found", raw))?;
    let (w, h) = (f64::from(width), f64::from(height));
    let p = if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
        Point::new(x * w, y * h)
    } else if x <= 1000.0 && y <= 1000.0 && (x > w || y > h) {
        Point::new(x / 1000.0 * w, y / 1000.0 * h)
    } else {
        Point::new(x, y)
    };
    Ok(p.clamp_to(width, height))
}

fn labeled_id() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(left|top|right|bottom)(?:most)?\b[^\d\n]{0,25}?(\d+(?:\.\d+)?)").unwrap())
}

fn any_number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?").unwrap())
}

fn id_value(text: &str, max_id: u32, what: &str, raw: &str) -> Result<u32, ParseError> {
    let id: u32 = text
        .parse()
        .map_err(|_| ParseError::new(format!("{what} id {text:?} is not an integer"), raw))?;
    if id == 0 || id > max_id {
        return Err(ParseError::new(format!("{what} id {id} outside 1..={max_id}"), raw));
    }
    Ok(id)
}

/// Four extremity cell IDs from an answer.
///
/// Labeled answers (`leftmost: 10, ...`) are read by label; without labels,
/// exactly four integers are taken in leftmost, topmost, rightmost,
/// bottommost order.
pub fn parse_grid_ids(raw: &str, max_id: u32) -> Result<ExtremityIds, ParseError> {
    let mut slots: [Option<&str>; 4] = [None; 4];
    for caps in labeled_id().captures_iter(raw) {
        let slot = match caps[1].to_ascii_lowercase().as_str() {
            "left" => 0,
            "top" => 1,
            "right" => 2,
            _ => 3,
        };
        if slots[slot].is_none() {
            slots[slot] = caps.get(2).map(|m| m.as_str());
        }
    }
    const NAMES: [&str; 4] = ["leftmost", "topmost", "rightmost", "bottommost"];
    let found = slots.iter().filter(|s| s.is_some()).count();
    if found > 0 {
        let mut ids = [0u32; 4];
        for (i, slot) in slots.iter().enumerate() {
            if let Some(text) = slot {
                ids[i] = id_value(text, max_id, NAMES[i], raw)?;
            }
        }
        if found < 4 {
            let missing: Vec<&str> = (0..4).filter(|&i| slots[i].is_none()).map(|i| NAMES[i]).collect();
            return Err(ParseError::new(format!("missing extremities: {}", missing.join(", ")), raw));
        }
        return Ok(ExtremityIds {
            leftmost: ids[0],
            topmost: ids[1],
            rightmost: ids[2],
            bottommost: ids[3],
        });
    }
    let numbers: Vec<&str> = any_number().find_iter(raw).map(|m| m.as_str()).collect();
    if numbers.len() != 4 {
        return Err(ParseError::new(
            format!("expected four grid ids, found {} number(s)", numbers.len()),
            raw,
        ));
    }
    let mut ids = [0u32; 4];
    for (i, text) in numbers.iter().enumerate() {
        ids[i] = id_value(text, max_id, NAMES[i], raw)?;
    }
    Ok(ExtremityIds {
        leftmost: ids[0],
        topmost: ids[1],
        rightmost: ids[2],
        bottommost: ids[3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_pixels() {
        assert_eq!(parse_point("(150, 125)", 800, 600).unwrap(), Point::new(150.0, 125.0));
    }

    #[test]
    fn normalized_pair() {
        assert_eq!(
            parse_point("click at x=0.5, y=0.25", 800, 600).unwrap(),
            Point::new(400.0, 150.0)
        );
    }

    #[test]
    fn thousand_normalized_pair() {
        // 900 > 800 wide: read as 0-1000 scale
        assert_eq!(parse_point("(900, 500)", 800, 600).unwrap(), Point::new(720.0, 300.0));
    }

    #[test]
    fn refusal_is_error() {
        let err = parse_point("I cannot determine that", 800, 600).unwrap_err();
        assert_eq!(err.raw, "I cannot determine that");
    }

    #[test]
    fn out_of_frame_clamped() {
        assert_eq!(parse_point("(2500, -4)", 800, 600).unwrap(), Point::new(799.0, 0.0));
    }

    #[test]
    fn labeled_beats_bracketed() {
        assert_eq!(
            parse_point("Step (1, 2): x = 300, y = 200", 800, 600).unwrap(),
            Point::new(300.0, 200.0)
        );
    }

    #[test]
    fn grid_ids_labeled() {
        let ids = parse_grid_ids("leftmost: 10, topmost: 2, rightmost: 12, bottommost: 26", 64).unwrap();
        assert_eq!(ids.as_array(), [10, 2, 12, 26]);
    }

    #[test]
    fn grid_ids_positional() {
        assert_eq!(parse_grid_ids("10 2 12 26", 64).unwrap().as_array(), [10, 2, 12, 26]);
    }

    #[test]
    fn grid_ids_out_of_range() {
        assert!(parse_grid_ids("leftmost: 99", 64).is_err());
        assert!(parse_grid_ids("10 2 12 99", 64).is_err());
        assert!(parse_grid_ids("10 2 12", 64).is_err());
        assert!(parse_grid_ids("leftmost: 1, topmost: 1, rightmost: 2", 64).is_err());
    }
}
