//! Static SVG line charts from harness CSV files.
//!
//! Rows are grouped by an optional series column; rows sharing a series and
//! an x value are averaged, and their spread becomes the shaded band.

use std::fmt::Write as _;
use std::path::Path;

use rdrlvi_core::diagnostics::loglog_slope;

use crate::error::{HarnessError, Result};
use crate::output::mean_sd;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub series: Option<String>,
    /// Column holding a precomputed spread; used when rows are not replicated.
    pub sd: Option<String>,
    pub log_x: bool,
    pub log_y: bool,
    /// x-range for a log-log regression overlay.
    pub fit: Option<(f64, f64)>,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

fn malformed(msg: impl Into<String>) -> HarnessError {
    HarnessError::Runtime(format!("malformed CSV: {}", msg.into()))
}

/// Parses and aggregates the CSV text into series sorted by x.
pub fn load_series(csv_text: &str, spec: &PlotSpec) -> Result<Vec<Series>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| malformed(format!("missing column {name:?}")))
    };
    let xi = col(&spec.x)?;
    let yi = col(&spec.y)?;
    let si = spec.series.as_deref().map(col).transpose()?;
    let di = spec.sd.as_deref().map(col).transpose()?;

    // (series name, [(x, [ys], [sds])]) in first-appearance order.
    let mut groups: Vec<(String, Vec<(f64, Vec<f64>, Vec<f64>)>)> = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            let field = row.get(i).ok_or_else(|| malformed(format!("row {} is short", line + 2)))?;
            field.parse().map_err(|_| malformed(format!("row {}: {field:?} is not a number", line + 2)))
        };
        let (x, y) = (num(xi)?, num(yi)?);
        let sd = di.map(num).transpose()?;
        let name = si.map_or(String::new(), |i| row.get(i).unwrap_or_default().to_string());
        let g = match groups.iter().position(|(n, _)| *n == name) {
            Some(g) => g,
            None => {
                groups.push((name, Vec::new()));
                groups.len() - 1
            }
        };
        let pts = &mut groups[g].1;
        match pts.iter_mut().find(|(px, _, _)| *px == x) {
            Some((_, ys, sds)) => {
                ys.push(y);
                sds.extend(sd);
            }
            None => pts.push((x, vec![y], sd.into_iter().collect())),
        }
    }
    if groups.is_empty() {
        return Err(HarnessError::Runtime("nothing to plot: the series is empty".into()));
    }
    let mut out = Vec::with_capacity(groups.len());
    for (name, mut pts) in groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let points = pts
            .into_iter()
            .map(|(x, ys, sds)| {
                let m = mean_sd(&ys);
                let sd = if ys.len() > 1 { m.sd } else { sds.first().copied().unwrap_or(0.0) };
                Point { x, y: m.mean, sd }
            })
            .collect();
        out.push(Series { name, points });
    }
    Ok(out)
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    start: f64,
    len: f64,
    flip: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool, start: f64, len: f64, flip: bool) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            if log && !(v > 0.0) {
                return Err(HarnessError::Runtime(format!("log axis cannot show {v}")));
            }
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(HarnessError::Runtime("no finite values to plot".into()));
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
            lo -= pad;
            hi += pad;
        } else if !log {
            let pad = 0.04 * (hi - lo);
            lo -= pad;
            hi += pad;
        } else {
            lo = lo.floor().min(lo - 0.05);
            hi = hi.ceil().max(hi + 0.05);
        }
        Ok(Self { lo, hi, log, start, len, flip })
    }

    fn map(&self, v: f64) -> f64 {
        let v = if self.log { v.max(f64::MIN_POSITIVE).log10() } else { v };
        let t = ((v - self.lo) / (self.hi - self.lo)).clamp(-0.05, 1.05);
        if self.flip {
            self.start + self.len * (1.0 - t)
        } else {
            self.start + self.len * t
        }
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            return (a..=b).map(|k| 10f64.powi(k)).collect();
        }
        let raw = (self.hi - self.lo) / 6.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-9 * step {
            out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
            t += step;
        }
        out
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("1e{}", v.log10().round() as i32)
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Slope and intercept of the log-log fit for one series.
pub fn series_fit(series: &Series, range: (f64, f64)) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .filter(|p| p.x >= range.0 * (1.0 - 1e-12) && p.x <= range.1 * (1.0 + 1e-12))
        .map(|p| (p.x, p.y))
        .collect();
    let slope = loglog_slope(&pts)?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0.ln()).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    Ok((slope, my - slope * mx))
}

pub fn render(series: &[Series], spec: &PlotSpec) -> Result<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(HarnessError::Runtime("nothing to plot: the series is empty".into()));
    }
    if spec.fit.is_some() && !(spec.log_x && spec.log_y) {
        return Err(HarnessError::Runtime("a regression overlay needs both axes logarithmic".into()));
    }
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.x));
    let ys = series.iter().flat_map(|s| {
        s.points.iter().flat_map(move |p| {
            let lo = if spec.log_y && p.y - p.sd <= 0.0 { p.y } else { p.y - p.sd };
            [lo, p.y + p.sd]
        })
    });
    let ax = Axis::new(xs, spec.log_x, LEFT, pw, false)?;
    let ay = Axis::new(ys, spec.log_y, TOP, ph, true)?;

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(&spec.title));
    for t in ax.ticks() {
        let px = ax.map(t);
        let _ = writeln!(w, r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##, TOP + ph);
        let _ = writeln!(w, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(t));
    }
    for t in ay.ticks() {
        let py = ay.map(t);
        let _ = writeln!(w, r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e5e5e5"/>"##, LEFT + pw);
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, tick_label(t));
    }
    let _ = writeln!(w, r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#);
    let axis_name = |name: &str, log: bool| if log { format!("{name} (log)") } else { name.to_string() };
    let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 16.0, escape(&axis_name(&spec.x, spec.log_x)));
    let _ = writeln!(w, r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#, TOP + ph / 2.0, TOP + ph / 2.0, escape(&axis_name(&spec.y, spec.log_y)));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.iter().any(|p| p.sd > 0.0) {
            let mut poly = String::new();
            for p in &s.points {
                let _ = write!(poly, "{:.2},{:.2} ", ax.map(p.x), ay.map(p.y + p.sd));
            }
            for p in s.points.iter().rev() {
                let lo = if spec.log_y && p.y - p.sd <= 0.0 { p.y } else { p.y - p.sd };
                let _ = write!(poly, "{:.2},{:.2} ", ax.map(p.x), ay.map(lo));
            }
            let _ = writeln!(w, r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, poly.trim_end());
        }
        let line: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", ax.map(p.x), ay.map(p.y))).collect();
        let _ = writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#, line.join(" "));
        if s.points.len() <= 40 {
            for p in &s.points {
                let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, ax.map(p.x), ay.map(p.y));
            }
        }
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(w, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let name = if s.name.is_empty() { &spec.y } else { &s.name };
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));

        if let Some(range) = spec.fit {
            let (slope, icpt) = series_fit(s, range)?;
            let y_at = |x: f64| (icpt + slope * x.ln()).exp();
            let _ = writeln!(
                w,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000" stroke-dasharray="6 4" stroke-width="1.4"/>"##,
                ax.map(range.0),
                ay.map(y_at(range.0)),
                ax.map(range.1),
                ay.map(y_at(range.1))
            );
            let _ = writeln!(w, r#"<text x="{lx:.2}" y="{:.2}">slope {slope:.3}</text>"#, ly + 22.0 + 20.0 * (series.len() - 1) as f64);
        }
    }
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

pub fn plot_file(csv_in: &Path, spec: &PlotSpec, svg_out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_in).map_err(|e| HarnessError::io(csv_in, e))?;
    let series = load_series(&text, spec)?;
    let svg = render(&series, spec)?;
    std::fs::write(svg_out, svg).map_err(|e| HarnessError::io(svg_out, e))
}
