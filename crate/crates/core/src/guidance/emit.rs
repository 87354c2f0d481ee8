use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::guidance::{GuidanceDiagram, LooReport, QuadrantStatus, TargetMetric};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Dot,
    Text,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "json" => Ok(Format::Json),
            "dot" => Ok(Format::Dot),
            "text" => Ok(Format::Text),
            _ => Err(Error::InvalidArgument(format!("unknown format `{s}`"))),
        }
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn leaf_text(d: &GuidanceDiagram, qi: usize, t: TargetMetric) -> String {
    let q = &d.quadrants[qi];
    if q.status != QuadrantStatus::Ok {
        return q.status.to_string();
    }
    q.cells[t.key()]
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}. {} ({:.3})", i + 1, e.pipeline, e.value))
        .collect::<Vec<_>>()
        .join("\n")
}

fn dot(d: &GuidanceDiagram) -> String {
    let p = &d.params;
    let mut s = String::from("digraph guidance {\n  node [shape=box, fontname=\"Helvetica\"];\n");
    let _ = writeln!(s, "  root [label={}];", quote("dataset size"));
    for (i, size) in ["small", "large"].iter().enumerate() {
        let _ = writeln!(s, "  {size} [label={}];", quote("baseline disparate impact"));
        let edge = if i == 0 {
            format!("rows < {}", p.rows_threshold)
        } else {
            format!("rows >= {}", p.rows_threshold)
        };
        let _ = writeln!(s, "  root -> {size} [label={}];", quote(&edge));
    }
    for (qi, q) in d.quadrants.iter().enumerate() {
        let node = format!("{}_{}", q.size, q.fairness);
        let edge = match q.fairness {
            crate::guidance::FairnessClass::Fair => format!("DI >= {}", p.di_threshold),
            crate::guidance::FairnessClass::Unfair => format!("DI < {}", p.di_threshold),
        };
        let _ = writeln!(s, "  {node} [label={}];", quote("target metric"));
        let _ = writeln!(s, "  {} -> {node} [label={}];", q.size, quote(&edge));
        for t in TargetMetric::ALL {
            let leaf = format!("{node}_{}", t.key());
            let _ = writeln!(s, "  {leaf} [shape=note, label={}];", quote(&leaf_text(d, qi, t)));
            let _ = writeln!(s, "  {node} -> {leaf} [label={}];", quote(t.label()));
        }
    }
    s.push_str("}\n");
    s
}

fn text(d: &GuidanceDiagram) -> String {
    let mut s = String::new();
    for (qi, q) in d.quadrants.iter().enumerate() {
        let _ = writeln!(s, "{} / {} [{}]", q.size, q.fairness, q.datasets.join(", "));
        for t in TargetMetric::ALL {
            let _ = writeln!(s, "  {}:", t.label());
            for line in leaf_text(d, qi, t).lines() {
                let _ = writeln!(s, "    {line}");
            }
        }
    }
    s
}

/// Renders the diagram. JSON keys come out in a fixed order.
pub fn emit(d: &GuidanceDiagram, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(d).expect("diagram serializes");
            s.push('\n');
            s
        }
        Format::Dot => dot(d),
        Format::Text => text(d),
    }
}

/// Table with a (count, signed difference) column pair per target metric.
pub fn loo_table(r: &LooReport) -> String {
    let mut s = format!("{:<20} {:<14}", "dataset", "quadrant");
    for t in TargetMetric::ALL {
        let _ = write!(s, " {:>8} {:>10}", format!("{}:num", t.key()), "metric");
    }
    s.push('\n');
    for row in &r.rows {
        let _ = write!(s, "{:<20} {:<14}", row.dataset, format!("{}/{}", row.size, row.fairness));
        for t in TargetMetric::ALL {
            let c = &row.cells[t.key()];
            let num = c.differences.map_or_else(|| "-".to_string(), |n| n.to_string());
            let m = c
                .metric_difference
                .map_or_else(|| c.status.clone(), |v| format!("{v:+.4}"));
            let _ = write!(s, " {num:>8} {m:>10}");
        }
        s.push('\n');
    }
    s
}
