//! Static HTML heatmaps and leaderboard tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::Attribution;
use crate::metrics::MetricTable;

const NEGATIVE: (f64, f64, f64) = (33.0, 102.0, 172.0);
const NEUTRAL: (f64, f64, f64) = (255.0, 255.0, 255.0);
const POSITIVE: (f64, f64, f64) = (178.0, 24.0, 43.0);

/// Diverging blue–white–red color for `t` in `[-1, 1]`.
pub fn diverging_color(t: f64) -> String {
    let t = if t.is_finite() {
        t.clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let end = if t < 0.0 { NEGATIVE } else { POSITIVE };
    let a = t.abs();
    let mix = |n: f64, e: f64| (n + (e - n) * a).round() as u8;
    format!(
        "rgb({},{},{})",
        mix(NEUTRAL.0, end.0),
        mix(NEUTRAL.1, end.1),
        mix(NEUTRAL.2, end.2)
    )
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// One table row per method, one cell per token, colored by the score
/// divided by that row's largest `|score|`.
pub fn render_heatmap_html(
    title: &str,
    tokens: &[String],
    attributions: &[Attribution],
) -> Result<String> {
    for a in attributions {
        if a.scores.len() != tokens.len() || a.token_texts != tokens {
            return Err(Error::Alignment(format!(
                "{} attribution does not match the instance tokens",
                a.method
            )));
        }
    }
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(html, "<title>{}</title>", escape(title));
    html.push_str(
        "<style>\nbody{font-family:sans-serif}\ntable{border-collapse:collapse}\n\
         th{text-align:right;padding:2px 8px;font-weight:normal;color:#444}\n\
         td{padding:2px 4px;border:1px solid #eee}\n</style>\n</head>\n<body>\n",
    );
    let _ = writeln!(html, "<h3>{}</h3>", escape(title));
    html.push_str("<table>\n");
    for a in attributions {
        let max = a.scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let _ = write!(html, "<tr><th>{}</th>", a.method);
        for (tok, s) in tokens.iter().zip(&a.scores) {
            let t = if max > 0.0 { s / max } else { 0.0 };
            let _ = write!(
                html,
                "<td style=\"background:{}\" title=\"{:.6}\">{}</td>",
                diverging_color(t),
                s,
                escape(tok)
            );
        }
        html.push_str("</tr>\n");
    }
    html.push_str("</table>\n</body>\n</html>\n");
    Ok(html)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(Error::Config(format!(
                "unknown table format {other:?}; expected text, csv or json"
            ))),
        }
    }
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Renders the aggregated table. Best cells carry an asterisk in text and a
/// parallel `<metric>_best` column in CSV; JSON is the table itself.
pub fn render_table(table: &MetricTable, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Json => Ok(serde_json::to_string_pretty(table)? + "\n"),
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["method".to_string()];
            for m in &table.metrics {
                header.push(m.to_string());
                header.push(format!("{m}_best"));
            }
            w.write_record(&header).map_err(csv_err)?;
            for method in &table.methods {
                let mut row = vec![method.to_string()];
                for metric in &table.metrics {
                    let cell = table.get(*method, *metric).cloned().unwrap_or_default();
                    row.push(cell.value.map(|v| v.to_string()).unwrap_or_default());
                    row.push(cell.best.to_string());
                }
                w.write_record(&row).map_err(csv_err)?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Validation(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        TableFormat::Text => {
            let mut columns: Vec<Vec<String>> = Vec::new();
            let mut first = vec!["method".to_string()];
            first.extend(table.methods.iter().map(|m| m.to_string()));
            columns.push(first);
            for metric in &table.metrics {
                let mut col = vec![format!("{metric} {}", metric.direction().arrow())];
                for method in &table.methods {
                    let cell = table.get(*method, *metric).cloned().unwrap_or_default();
                    let mark = if cell.best { "*" } else { "" };
                    col.push(format!("{}{mark}", fmt_value(cell.value)));
                }
                columns.push(col);
            }
            let widths: Vec<usize> = columns
                .iter()
                .map(|c| c.iter().map(|s| s.chars().count()).max().unwrap_or(0))
                .collect();
            let mut out = String::new();
            for row in 0..=table.methods.len() {
                let line: Vec<String> = columns
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (col, w))| {
                        let pad = w - col[row].chars().count();
                        if i == 0 {
                            format!("{}{}", col[row], " ".repeat(pad))
                        } else {
                            format!("{}{}", " ".repeat(pad), col[row])
                        }
                    })
                    .collect();
                out.push_str(line.join("  ").trim_end());
                out.push('\n');
            }
            let _ = writeln!(
                out,
                "* best per metric; one method best on every metric: {}",
                if table.any_method_swept_all {
                    "yes"
                } else {
                    "no"
                }
            );
            Ok(out)
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::Method;
    use crate::metrics::{aggregate, Metric, MetricResult, Scope};

    fn attr(method: Method, tokens: &[&str], scores: Vec<f64>) -> Attribution {
        Attribution::new(
            "i",
            method,
            0,
            scores,
            tokens.iter().map(|t| t.to_string()).collect(),
        )
    }

    #[test]
    fn scale_endpoints() {
        assert_eq!(diverging_color(-1.0), "rgb(33,102,172)");
        assert_eq!(diverging_color(0.0), "rgb(255,255,255)");
        assert_eq!(diverging_color(1.0), "rgb(178,24,43)");
    }

    #[test]
    fn zero_scores_are_neutral() {
        let html = render_heatmap_html(
            "x",
            &["a".into(), "b".into()],
            &[attr(Method::Lime, &["a", "b"], vec![0.0, 0.0])],
        )
        .unwrap();
        assert_eq!(html.matches("rgb(255,255,255)").count(), 2);
    }

    #[test]
    fn signed_scores_map_to_extremes() {
        let tokens = ["x", "y", "z"];
        let html = render_heatmap_html(
            "t",
            &tokens.map(String::from),
            &[attr(Method::Saliency, &tokens, vec![-1.0, 0.0, 1.0])],
        )
        .unwrap();
        let neg = html.find("rgb(33,102,172)").unwrap();
        let neu = html.find("rgb(255,255,255)").unwrap();
        let pos = html.find("rgb(178,24,43)").unwrap();
        assert!(neg < neu && neu < pos);
    }

    #[test]
    fn tokens_are_escaped_and_misalignment_rejected() {
        let html = render_heatmap_html(
            "t",
            &["<b>".into()],
            &[attr(Method::Lime, &["<b>"], vec![1.0])],
        )
        .unwrap();
        assert!(html.contains("&lt;b&gt;"));
        let err = render_heatmap_html(
            "t",
            &["a".into()],
            &[attr(Method::Lime, &["a", "b"], vec![1.0, 2.0])],
        );
        assert!(matches!(err, Err(Error::Alignment(_))));
    }

    fn table() -> MetricTable {
        let r = |m, v| MetricResult::new(m, v, Scope::Instance);
        aggregate(
            &[Method::Saliency, Method::Lime],
            &[Metric::Complexity, Metric::SoftComp],
            &[
                (Method::Saliency, r(Metric::Complexity, 0.1)),
                (Method::Lime, r(Metric::Complexity, 0.9)),
                (Method::Saliency, r(Metric::SoftComp, 0.1)),
                (Method::Lime, r(Metric::SoftComp, 0.9)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn text_marks_best_with_asterisk() {
        let text = render_table(&table(), TableFormat::Text).unwrap();
        let sal = text.lines().find(|l| l.starts_with("saliency")).unwrap();
        let lime = text.lines().find(|l| l.starts_with("lime")).unwrap();
        assert!(sal.contains("0.1000*") && sal.matches('*').count() == 1);
        assert!(lime.contains("0.9000*") && lime.matches('*').count() == 1);
        assert_eq!(text.matches('*').count(), 3);
    }

    #[test]
    fn csv_has_parallel_best_columns() {
        let csv = render_table(&table(), TableFormat::Csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,complexity,complexity_best,soft_comp,soft_comp_best"
        );
        assert_eq!(lines.next().unwrap(), "saliency,0.1,true,0.1,false");
        assert_eq!(lines.next().unwrap(), "lime,0.9,false,0.9,true");
    }

    #[test]
    fn json_round_trips() {
        let t = table();
        let json = render_table(&t, TableFormat::Json).unwrap();
        let back: MetricTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back.best, t.best);
    }
}
