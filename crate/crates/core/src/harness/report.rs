use std::collections::BTreeMap;
use std::str::FromStr;

use super::matrix::CellSummary;

/// Accuracy as printed everywhere: percent with two decimals.
pub fn format_accuracy(acc: f64) -> String {
    format!("{acc:.2}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown report format {other:?} (md|csv)")),
        }
    }
}

/// A named report file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub name: String,
    pub content: String,
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Renders summaries as one markdown document or as CSV files
/// (`results.csv` plus one `ablation_<kind>.csv` per method kind that was run
/// with more than one configuration).
pub fn report(cells: &[CellSummary], format: ReportFormat) -> Vec<Document> {
    match format {
        ReportFormat::Markdown => vec![Document {
            name: "results.md".into(),
            content: markdown(cells),
        }],
        ReportFormat::Csv => csv_documents(cells),
    }
}

fn markdown(cells: &[CellSummary]) -> String {
    let mut out = String::new();
    for bench in first_seen(cells.iter().map(|c| c.benchmark.as_str())) {
        let in_bench: Vec<&CellSummary> = cells.iter().filter(|c| c.benchmark == bench).collect();
        let models = first_seen(in_bench.iter().map(|c| c.model.as_str()));
        let methods = first_seen(in_bench.iter().map(|c| c.method_label.as_str()));
        let lookup: BTreeMap<(&str, &str), f64> = in_bench
            .iter()
            .map(|c| ((c.model.as_str(), c.method_label.as_str()), c.summary.accuracy))
            .collect();
        // rank on the printed value so ties are visible ties
        let ranks: BTreeMap<&str, (Option<String>, Option<String>)> = models
            .iter()
            .map(|m| {
                let mut vals: Vec<String> = methods
                    .iter()
                    .filter_map(|me| lookup.get(&(*m, *me)).map(|a| format_accuracy(*a)))
                    .collect();
                vals.sort_by(|a, b| b.parse::<f64>().unwrap().total_cmp(&a.parse::<f64>().unwrap()));
                vals.dedup();
                (*m, (vals.first().cloned(), vals.get(1).cloned()))
            })
            .collect();

        out.push_str(&format!("## {bench}\n\n| Method |"));
        for m in &models {
            out.push_str(&format!(" {m} |"));
        }
        out.push_str("\n|---|");
        for _ in &models {
            out.push_str("---:|");
        }
        out.push('\n');
        for me in &methods {
            out.push_str(&format!("| {me} |"));
            for m in &models {
                let cell = match lookup.get(&(*m, *me)) {
                    None => "--".to_string(),
                    Some(a) => {
                        let v = format_accuracy(*a);
                        let (best, second) = &ranks[m];
                        if best.as_ref() == Some(&v) {
                            format!("**{v}**")
                        } else if second.as_ref() == Some(&v) {
                            format!("<u>{v}</u>")
                        } else {
                            v
                        }
                    }
                };
                out.push_str(&format!(" {cell} |"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

const CSV_HEADER: [&str; 12] = [
    "benchmark",
    "model",
    "method",
    "kind",
    "method_digest",
    "total",
    "hits",
    "accuracy",
    "parse_failures",
    "transport_failures",
    "other_failures",
    "fallbacks",
];

fn csv_table<'a>(cells: impl Iterator<Item = &'a CellSummary>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for c in cells {
        let s = &c.summary;
        w.write_record([
            c.benchmark.clone(),
            c.model.clone(),
            c.method_label.clone(),
            c.method.method.kind().to_string(),
            c.method_digest.clone(),
            s.total.to_string(),
            s.hits.to_string(),
            format_accuracy(s.accuracy),
            s.parse_failures.to_string(),
            s.transport_failures.to_string(),
            s.other_failures.to_string(),
            c.fallbacks.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn csv_documents(cells: &[CellSummary]) -> Vec<Document> {
    let mut docs = vec![Document {
        name: "results.csv".into(),
        content: csv_table(cells.iter()),
    }];
    for kind in first_seen(cells.iter().map(|c| c.method.method.kind())) {
        let configs = first_seen(
            cells
                .iter()
                .filter(|c| c.method.method.kind() == kind)
                .map(|c| c.method_digest.as_str()),
        );
        if configs.len() > 1 {
            docs.push(Document {
                name: format!("ablation_{kind}.csv"),
                content: csv_table(cells.iter().filter(|c| c.method.method.kind() == kind)),
            });
        }
    }
    docs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::EvalSummary;
    use crate::methods::MethodConfig;

    fn cell(model: &str, method: &str, accuracy: f64) -> CellSummary {
        let m: MethodConfig = method.parse().unwrap();
        CellSummary {
            benchmark: "b".into(),
            model: model.into(),
            method: m,
            method_label: m.label(),
            method_digest: m.digest(),
            fallbacks: 0,
            summary: EvalSummary {
                total: 100,
                hits: accuracy as usize,
                accuracy,
                parse_failures: 0,
                transport_failures: 0,
                other_failures: 0,
                per_platform: Default::default(),
            },
        }
    }

    #[test]
    fn markdown_marks_best_and_second() {
        let cells = vec![
            cell("m1", "direct", 10.0),
            cell("m1", "mark-grid", 50.0),
            cell("m1", "axis-grid", 30.0),
            cell("m2", "direct", 20.0),
        ];
        let md = &report(&cells, ReportFormat::Markdown)[0].content;
        assert!(md.contains("| mark_grid 8x8 z1 | **50.00** | -- |"), "{md}");
        assert!(md.contains("<u>30.00</u>"));
        assert!(md.contains("| direct | 10.00 | **20.00** |"), "{md}");
    }

    #[test]
    fn csv_has_ablation_files_only_for_varied_kinds() {
        let cells = vec![
            cell("m", "direct", 10.0),
            cell("m", "mark-grid", 50.0),
            cell("m", "mark-grid:zoom=0", 40.0),
        ];
        let docs = report(&cells, ReportFormat::Csv);
        let names: Vec<&str> = docs.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["results.csv", "ablation_mark_grid.csv"]);
        assert_eq!(docs[0].content.lines().count(), 4);
        assert!(docs[0].content.lines().nth(1).unwrap().contains(",10.00,"));
        assert_eq!(docs[1].content.lines().count(), 3);
    }
}
