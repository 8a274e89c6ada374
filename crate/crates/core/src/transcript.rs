//! Standalone transcript export: one HTML file with inline SVG charts, or
//! the raw entries as JSON.

use std::fmt::Write;

use crate::agent::{Speaker, TranscriptEntry};
use crate::chart::{format_significant, ChartSpec, Series, TreeNode};

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 300.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 56.0;
const PALETTE: [&str; 5] = ["#3b6fb6", "#e07b39", "#4f9d69", "#b6463b", "#7d5ba6"];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn y_bounds(series: &[Series]) -> (f64, f64) {
    let mut lo = 0.0f64;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for (i, y) in s.y.iter().enumerate() {
            let e = s.y_error.as_ref().and_then(|e| e.get(i)).copied().unwrap_or(0.0);
            lo = lo.min(y - e);
            hi = hi.max(y + e);
        }
    }
    if !hi.is_finite() || hi <= lo {
        hi = lo + 1.0;
    }
    (lo, hi)
}

fn xy_chart(out: &mut String, title: &str, x_label: &str, y_label: &str, series: &[Series], bars: bool) {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let (lo, hi) = y_bounds(series);
    let sy = |y: f64| MARGIN_TOP + plot_h * (1.0 - (y - lo) / (hi - lo));
    let categories = series.first().map_or(0, |s| s.x.len()).max(1);
    let slot = plot_w / categories as f64;
    let cx = |i: usize| MARGIN_LEFT + slot * (i as f64 + 0.5);

    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" class="chart chart-{}" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#,
        if bars { "bar" } else { "line" }
    );
    let _ = write!(out, r#"<text x="{}" y="20" text-anchor="middle" font-weight="bold">{}</text>"#, WIDTH / 2.0, escape(title));
    let base = sy(0.0f64.max(lo));
    let _ = write!(
        out,
        r##"<line x1="{MARGIN_LEFT}" y1="{base:.1}" x2="{}" y2="{base:.1}" stroke="#444"/><line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{}" stroke="#444"/>"##,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = write!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            MARGIN_LEFT - 4.0,
            sy(v) + 3.0,
            format_significant(v, 3)
        );
    }
    if let Some(first) = series.first() {
        for (i, x) in first.x.iter().enumerate() {
            let _ = write!(
                out,
                r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                cx(i),
                HEIGHT - MARGIN_BOTTOM + 14.0,
                escape(&x.to_string())
            );
        }
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    );
    let _ = write!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="11" transform="rotate(-90 14 {})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );
    let n = series.len().max(1) as f64;
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if bars {
            let w = slot * 0.7 / n;
            for (i, y) in s.y.iter().enumerate() {
                let x = cx(i) - slot * 0.35 + w * si as f64;
                let (top, bottom) = (sy(y.max(0.0)), sy(y.min(0.0)));
                let _ = write!(
                    out,
                    r#"<rect x="{x:.1}" y="{top:.1}" width="{w:.1}" height="{:.1}" fill="{color}"><title>{}: {}</title></rect>"#,
                    (bottom - top).max(0.5),
                    escape(&s.x[i].to_string()),
                    format_significant(*y, 4)
                );
            }
        } else {
            let points: Vec<String> = s.y.iter().enumerate().map(|(i, y)| format!("{:.1},{:.1}", cx(i), sy(*y))).collect();
            let _ = write!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, points.join(" "));
            for (i, y) in s.y.iter().enumerate() {
                let _ = write!(
                    out,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"><title>{}: {}</title></circle>"#,
                    cx(i),
                    sy(*y),
                    escape(&s.x[i].to_string()),
                    format_significant(*y, 4)
                );
            }
        }
        if let Some(errs) = &s.y_error {
            for (i, (y, e)) in s.y.iter().zip(errs).enumerate() {
                let x = if bars { cx(i) - slot * 0.35 + slot * 0.7 / n * (si as f64 + 0.5) } else { cx(i) };
                let _ = write!(
                    out,
                    r##"<line class="error-bar" x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#222"/>"##,
                    sy(y - e),
                    sy(y + e)
                );
            }
        }
        if series.len() > 1 {
            let _ = write!(
                out,
                r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
                WIDTH - MARGIN_RIGHT - 120.0,
                MARGIN_TOP + 12.0 * si as f64,
                escape(&s.label)
            );
        }
    }
    out.push_str("</svg>");
}

struct Placed<'a> {
    node: &'a TreeNode,
    x: f64,
    depth: usize,
    parent: Option<usize>,
}

fn place<'a>(node: &'a TreeNode, depth: usize, parent: Option<usize>, next_leaf: &mut f64, out: &mut Vec<Placed<'a>>) -> f64 {
    let idx = out.len();
    out.push(Placed {
        node,
        x: 0.0,
        depth,
        parent,
    });
    let x = if node.children.is_empty() {
        let x = *next_leaf;
        *next_leaf += 1.0;
        x
    } else {
        let xs: Vec<f64> = node.children.iter().map(|c| place(c, depth + 1, Some(idx), next_leaf, out)).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    out[idx].x = x;
    x
}

fn tree_chart(out: &mut String, title: &str, root: &TreeNode) {
    let mut nodes = Vec::new();
    let mut leaves = 0.0;
    place(root, 0, None, &mut leaves, &mut nodes);
    let depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0) as f64;
    let col_w = 190.0;
    let width = (leaves * col_w).max(WIDTH);
    let row_h = 90.0;
    let height = MARGIN_TOP + (depth + 1.0) * row_h + 10.0;
    let px = |x: f64| (width - leaves * col_w) / 2.0 + col_w * (x + 0.5);
    let py = |d: usize| MARGIN_TOP + 20.0 + row_h * d as f64;
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" class="chart chart-tree" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = write!(out, r#"<text x="{}" y="20" text-anchor="middle" font-weight="bold">{}</text>"#, width / 2.0, escape(title));
    for n in &nodes {
        if let Some(p) = n.parent {
            let (x1, y1, x2, y2) = (px(nodes[p].x), py(nodes[p].depth) + 12.0, px(n.x), py(n.depth) - 14.0);
            let _ = write!(out, r##"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="#888"/>"##);
            let _ = write!(
                out,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10" fill="#555">{}</text>"##,
                (x1 + x2) / 2.0,
                (y1 + y2) / 2.0,
                escape(&n.node.edge)
            );
        }
    }
    for n in &nodes {
        let leaf = n.node.children.is_empty();
        let label = escape(&n.node.label);
        let w = (n.node.label.chars().count() as f64 * 6.6 + 16.0).min(col_w - 8.0);
        let _ = write!(
            out,
            r##"<rect class="{}" x="{:.1}" y="{:.1}" width="{w:.1}" height="26" rx="5" fill="{}" stroke="#555"/>"##,
            if leaf { "tree-leaf" } else { "tree-split" },
            px(n.x) - w / 2.0,
            py(n.depth) - 14.0,
            if leaf { "#e3f0e3" } else { "#eef2fa" }
        );
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{label}</text>"#,
            px(n.x),
            py(n.depth) + 3.0
        );
    }
    out.push_str("</svg>");
}

/// Inline SVG for a chart.
pub fn render_svg(chart: &ChartSpec) -> String {
    let mut out = String::new();
    match chart {
        ChartSpec::Bar {
            title,
            x_label,
            y_label,
            series,
        } => xy_chart(&mut out, title, x_label, y_label, series, true),
        ChartSpec::Line {
            title,
            x_label,
            y_label,
            series,
        } => xy_chart(&mut out, title, x_label, y_label, series, false),
        ChartSpec::Tree { title, root } => tree_chart(&mut out, title, root),
    }
    out
}

const STYLE: &str = "body{font-family:sans-serif;max-width:760px;margin:2em auto;color:#222}\
.msg{margin:.6em 0;padding:.6em .9em;border-radius:10px;max-width:80%;white-space:pre-wrap}\
.user{margin-left:auto;background:#3b6fb6;color:#fff;text-align:right}\
.agent{background:#f0f0f0}\
.chart{display:block;margin:.5em 0;background:#fff;border:1px solid #ddd;border-radius:6px}\
.conditions{font-size:.85em;color:#555}";

/// A self-contained HTML page for the conversation.
pub fn render_html(title: &str, entries: &[TranscriptEntry]) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{}</h1>\n",
        escape(title),
        escape(title)
    );
    for e in entries {
        let class = match e.speaker {
            Speaker::User => "user",
            Speaker::Agent => "agent",
        };
        let _ = write!(out, "<div class=\"msg {class}\">{}", escape(&e.text));
        out.push_str("</div>\n");
        for c in &e.charts {
            out.push_str("<figure>");
            out.push_str(&render_svg(c));
            out.push_str("</figure>\n");
        }
    }
    out.push_str("</body>\n</html>\n");
    out
}

pub fn render_json(entries: &[TranscriptEntry]) -> String {
    serde_json::to_string_pretty(entries).expect("serializable transcript") + "\n"
}
