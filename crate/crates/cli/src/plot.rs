//! Standalone SVG line charts from report CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::fail::CliError;

pub struct PlotSpec {
    pub x: Option<String>,
    pub y: Vec<String>,
    pub group: Option<String>,
    pub log: bool,
    pub title: Option<String>,
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Read a report CSV, skipping `#` comment lines.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::data(format!("column `{name}` not found (have {})", header.join(", "))))
}

/// Columns that parse as numbers in every non-empty cell, and have at
/// least one such cell.
fn numeric_columns(header: &[String], rows: &[Vec<String>]) -> Vec<usize> {
    (0..header.len())
        .filter(|&c| {
            let cells: Vec<&str> = rows.iter().map(|r| r[c].as_str()).filter(|s| !s.is_empty()).collect();
            !cells.is_empty() && cells.iter().all(|s| s.parse::<f64>().is_ok())
        })
        .collect()
}

/// The x column's name and one series per y column (and group).
pub fn load_series(path: &Path, spec: &PlotSpec) -> Result<(String, Vec<Series>), CliError> {
    let (header, rows) = read_table(path)?;
    if rows.is_empty() {
        return Err(CliError::data(format!("{} has no data rows", path.display())));
    }
    let numeric = numeric_columns(&header, &rows);
    let x = match &spec.x {
        Some(name) => column(&header, name)?,
        None => *numeric
            .first()
            .ok_or_else(|| CliError::data("no numeric column to use as x"))?,
    };
    let group = spec.group.as_deref().map(|g| column(&header, g)).transpose()?;
    let ys: Vec<usize> = if spec.y.is_empty() {
        numeric.iter().copied().filter(|&c| c != x && Some(c) != group).collect()
    } else {
        spec.y.iter().map(|name| column(&header, name)).collect::<Result<_, _>>()?
    };
    if ys.is_empty() {
        return Err(CliError::data("no numeric column to plot"));
    }

    let mut groups: Vec<String> = Vec::new();
    if let Some(g) = group {
        for r in &rows {
            if !groups.contains(&r[g]) {
                groups.push(r[g].clone());
            }
        }
    } else {
        groups.push(String::new());
    }
    let mut out = Vec::new();
    for g in &groups {
        for &y in &ys {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| group.is_none_or(|gc| &r[gc] == g))
                .filter_map(|r| Some((r[x].parse().ok()?, r[y].parse().ok()?)))
                .filter(|&(a, b): &(f64, f64)| a.is_finite() && b.is_finite() && (!spec.log || (a > 0.0 && b > 0.0)))
                .collect();
            if points.is_empty() {
                continue;
            }
            let label = match (group.is_some(), ys.len() > 1) {
                (true, true) => format!("{g} {}", header[y]),
                (true, false) => g.clone(),
                _ => header[y].clone(),
            };
            out.push(Series { label, points });
        }
    }
    if out.is_empty() {
        return Err(CliError::data("no plottable points"));
    }
    Ok((header[x].clone(), out))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn render(series: &[Series], x_label: &str, y_label: &str, log: bool, title: Option<&str>) -> String {
    let tf = |v: f64| if log { v.log10() } else { v };
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(tf(x));
        x1 = x1.max(tf(x));
        y0 = y0.min(tf(y));
        y1 = y1.max(tf(y));
    }
    let (x0, x1) = nice_range(x0, x1);
    let (y0, y1) = nice_range(y0, y1);
    let px = |x: f64| MARGIN + (tf(x) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (tf(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = title {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{m}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}"/></g>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let fmt = |v: f64| {
        let v = if log { 10f64.powf(v) } else { v };
        format!("{v:.4}")
    };
    for (v, anchor_x, anchor_y) in [
        (x0, MARGIN, HEIGHT - MARGIN + 16.0),
        (x1, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{anchor_x}" y="{anchor_y}" text-anchor="middle" font-size="10">{}</text>"#,
            fmt(v)
        );
    }
    for (v, y) in [(y0, HEIGHT - MARGIN), (y1, MARGIN)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
            MARGIN - 4.0,
            y + 3.0,
            fmt(v)
        );
    }
    let scale = if log { " (log)" } else { "" };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}{scale}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}{scale}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            escape(&ser.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}
