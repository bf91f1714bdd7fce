//! CSV tables, text summaries and SVG curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stlth_core::lottery::{Seeds, TicketRecord};
use stlth_core::metrics::ErrorReport;

use crate::error::{CliError, CliResult};

pub const TICKET_COLUMNS: [&str; 7] =
    ["trial", "round", "sparsity", "content_error", "style_error", "total", "matching_verdict"];

pub fn pct(sparsity: f64) -> String {
    format!("{:.1}", 100.0 * sparsity)
}

pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn verdict(matching: bool) -> &'static str {
    if matching {
        "matching"
    } else {
        "not-matching"
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ticket_row(trial: u32, t: &TicketRecord, full: &ErrorReport) -> Vec<String> {
    vec![
        trial.to_string(),
        t.round.to_string(),
        pct(t.sparsity),
        num(t.report.content_error),
        num(t.report.style_error),
        num(t.report.total),
        verdict(t.matching(full)).into(),
    ]
}

pub fn seed_rows(trials: u32, seeds: impl Fn(u32) -> Seeds) -> Vec<Vec<String>> {
    (0..trials)
        .map(|t| {
            let s = seeds(t);
            vec![t.to_string(), s.init.to_string(), s.data.to_string(), s.prune.to_string(), s.reinit.to_string()]
        })
        .collect()
}

/// Trial-averaged error at one grid round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub round: u32,
    pub sparsity: f64,
    pub content_error: f64,
    pub style_error: f64,
    pub total: f64,
}

/// Averages tickets over trials, grouped by round.
pub fn mean_curve<'a>(tickets: impl IntoIterator<Item = &'a TicketRecord>) -> Vec<CurvePoint> {
    let mut by_round: BTreeMap<u32, Vec<&TicketRecord>> = BTreeMap::new();
    for t in tickets {
        by_round.entry(t.round).or_default().push(t);
    }
    by_round
        .into_iter()
        .map(|(round, ts)| {
            let n = ts.len() as f64;
            let avg = |f: &dyn Fn(&TicketRecord) -> f64| ts.iter().map(|t| f(t)).sum::<f64>() / n;
            let content_error = avg(&|t| t.report.content_error);
            let style_error = avg(&|t| t.report.style_error);
            CurvePoint {
                round,
                sparsity: avg(&|t| t.sparsity),
                content_error,
                style_error,
                total: content_error + style_error,
            }
        })
        .collect()
}

pub fn mean_report(reports: &[ErrorReport]) -> ErrorReport {
    let n = reports.len().max(1) as f64;
    let c = reports.iter().map(|r| r.content_error).sum::<f64>() / n;
    let s = reports.iter().map(|r| r.style_error).sum::<f64>() / n;
    ErrorReport::new(c, s, reports.first().map_or(0, |r| r.n_pairs))
}

pub fn curve_rows(curve: &[CurvePoint], full: f64) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|p| {
            vec![
                p.round.to_string(),
                pct(p.sparsity),
                num(p.content_error),
                num(p.style_error),
                num(p.total),
                verdict(p.total <= full).into(),
            ]
        })
        .collect()
}

pub const CURVE_COLUMNS: [&str; 6] = ["round", "sparsity", "content_error", "style_error", "total", "matching_verdict"];

/// Lowest error on the curve, written `error(sparsity%)`.
pub fn e_best(curve: &[CurvePoint]) -> String {
    curve
        .iter()
        .min_by(|a, b| a.total.total_cmp(&b.total))
        .map_or_else(|| "n/a".into(), |p| format!("{:.3}({}%)", p.total, pct(p.sparsity)))
}

/// Largest sparsity whose mean error still matches the full model.
pub fn s_extreme(curve: &[CurvePoint], full: f64) -> f64 {
    curve.iter().filter(|p| p.total <= full).map(|p| p.sparsity).fold(0.0, f64::max)
}

/// Error against percent of remaining weights, one line per series, with
/// the full model as a dashed reference.
pub fn svg_chart(title: &str, series: &[(String, Vec<CurvePoint>)], full: f64) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let ys = series.iter().flat_map(|(_, c)| c.iter().map(|p| p.total)).chain([full]);
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    // x runs from 100% remaining on the left to 0% on the right
    let x = |remaining: f64| M + (100.0 - remaining) / 100.0 * (W - 2.0 * M);
    let y = |v: f64| H - M - (v - lo) / span * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    for tick in [100.0, 80.0, 60.0, 40.0, 20.0] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{tick}</text>"#, x(tick), H - M + 16.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">percent of remaining weights</text>"#,
        W / 2.0,
        H - 10.0
    );
    let _ = writeln!(s, r#"<text x="8" y="{M}">{hi:.3}</text><text x="8" y="{}">{lo:.3}</text>"#, H - M);
    let _ = writeln!(
        s,
        r##"<line x1="{M}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#555" stroke-dasharray="6 4"/>"##,
        y(full),
        W - M
    );
    for (i, (label, curve)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> =
            curve.iter().map(|p| format!("{:.1},{:.1}", x(100.0 * (1.0 - p.sparsity)), y(p.total))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{label}</text>"#, W - M - 60.0, M + 16.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}
