//! Line plots of CSV columns and heat maps of stored 2-d fields, as SVG with CSV alongside.

use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::output::{load_container, write_manifest, Output};
use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Numeric columns after the first, against the first; non-numeric rows (e.g. `mean`) are skipped.
pub fn parse_csv(text: &str) -> CliResult<Vec<Series>> {
    let mut lines = text.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split(',').map(str::trim).collect(),
        None => return Ok(Vec::new()),
    };
    let mut series: Vec<Series> = header.iter().skip(1).map(|n| Series { name: n.to_string(), points: Vec::new() }).collect();
    for line in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(x) = cells.first().and_then(|c| c.parse::<f64>().ok()) else { continue };
        for (s, cell) in series.iter_mut().zip(cells.iter().skip(1)) {
            if let Ok(y) = cell.parse::<f64>() {
                if y.is_finite() {
                    s.points.push((x, y));
                }
            }
        }
    }
    Ok(series)
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Axes, ticks and one polyline per series; a logarithmic y axis when every value is positive.
pub fn line_plot(title: &str, xlabel: &str, series: &[Series]) -> String {
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let log = !pts.is_empty() && pts.iter().all(|p| p.1 > 0.0);
    let ty = |y: f64| if log { y.log10() } else { y };
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    if !pts.is_empty() {
        x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        y0 = pts.iter().map(|p| ty(p.1)).fold(f64::INFINITY, f64::min);
        y1 = pts.iter().map(|p| ty(p.1)).fold(f64::NEG_INFINITY, f64::max);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| H - MARGIN - (ty(y) - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#, m = MARGIN, b = H - MARGIN, r = W - MARGIN);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#, m = MARGIN, t = MARGIN, b = H - MARGIN);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (MARGIN + f * pw, H - MARGIN - f * ph);
        let ylabel = if log { tick(10f64.powf(yv)) } else { tick(yv) };
        let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, fmt(px), H - MARGIN, fmt(px), H - MARGIN + 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#, fmt(px), H - MARGIN + 18.0, tick(xv));
        let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, MARGIN - 5.0, fmt(py), MARGIN, fmt(py));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#, MARGIN - 8.0, fmt(py + 3.0), ylabel);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(xlabel));
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if !ser.points.is_empty() {
            let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y)))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        }
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" fill="{color}">{}</text>"#, W - MARGIN + 4.0, fmt(ly), escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue–white–red map symmetric about zero.
fn color(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Heat map of a row-major `n × n` field.
pub fn heat_map(title: &str, n: usize, values: &[f64]) -> String {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cell = (H - 2.0 * MARGIN) / n.max(1) as f64;
    let mut s = String::new();
    let side = 2.0 * MARGIN + cell * n as f64;
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}">"#);
    let _ = writeln!(s, r#"<rect width="{side}" height="{side}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{} (max |v| = {})</text>"#, side / 2.0, escape(title), tick(scale));
    for i in 0..n {
        for j in 0..n {
            // First index along x, second along y, origin at the lower left.
            let (x, y) = (MARGIN + i as f64 * cell, MARGIN + (n - 1 - j) as f64 * cell);
            let _ = writeln!(s, r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#, fmt(x), fmt(y), fmt(cell), fmt(cell), color(values[i * n + j], scale));
        }
    }
    let _ = writeln!(s, r#"<rect x="{m}" y="{m}" width="{w}" height="{w}" fill="none" stroke="black"/>"#, m = MARGIN, w = fmt(cell * n as f64));
    s.push_str("</svg>\n");
    s
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn series_csv(series: &[Series]) -> String {
    let mut s = String::from("series,x,y\n");
    for ser in series {
        for (x, y) in &ser.points {
            let _ = writeln!(s, "{},{x},{y}", ser.name);
        }
    }
    s
}

pub fn run(cfg: &Config, extra: &[String]) -> CliResult<()> {
    let out = Output::new(cfg.out_dir())?;
    let mut inputs = cfg.list("report.inputs");
    inputs.extend(extra.iter().cloned());
    let mut notes = String::new();
    let mut firsts = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let path = Path::new(input);
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{input}: {e}")))?;
        let header = text.lines().next().unwrap_or("");
        let xlabel = header.split(',').next().unwrap_or("").trim().to_string();
        let series = parse_csv(&text).at(input)?;
        let name = format!("plot_{i}_{}", stem(path));
        out.text(&format!("{name}.svg"), &line_plot(input, &xlabel, &series))?;
        out.text(&format!("{name}.csv"), &series_csv(&series))?;
        let _ = writeln!(notes, "{name} <- {input}");
        if let Some(first) = series.first() {
            firsts.push(Series { name: format!("{input}:{}", first.name), points: first.points.clone() });
        }
    }
    if inputs.len() > 1 {
        out.text("plot_combined.svg", &line_plot("comparison", "", &firsts))?;
        out.text("plot_combined.csv", &series_csv(&firsts))?;
    }
    for (i, spec) in cfg.list("report.fields").iter().enumerate() {
        let (file, record) = spec.rsplit_once(':').ok_or_else(|| CliError::config(format!("`report.fields` entry `{spec}` is not `container:record`")))?;
        let c = load_container(Path::new(file))?;
        let (dims, values) = c.f64(record).at(file)?;
        let n = match dims {
            [1, a, b] | [a, b] if a == b => *a,
            _ => return Err(CliError::config(format!("{file}: record `{record}` with dims {dims:?} is not a square 2-d field"))),
        };
        let name = format!("field_{i}_{}", record);
        out.text(&format!("{name}.svg"), &heat_map(spec, n, values))?;
        let mut csv = String::from("i,j,value\n");
        for a in 0..n {
            for b in 0..n {
                let _ = writeln!(csv, "{a},{b},{}", values[a * n + b]);
            }
        }
        out.text(&format!("{name}.csv"), &csv)?;
        let _ = writeln!(notes, "{name} <- {spec}");
    }
    write_manifest(&out, "report", cfg, &notes)
}
