//! Deterministic SVG charts rendered straight from CSV tables. No
//! timestamps, no randomness: identical inputs yield identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ExperimentError;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// Fixed series palette; charts never need more than seven series.
const PALETTE: [&str; 7] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Line,
    Bar,
}

/// Wide-format chart data: one x column, one series per further column.
/// Empty cells are gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct WideCsv {
    pub x_label: String,
    pub series_names: Vec<String>,
    pub rows: Vec<(f64, Vec<Option<f64>>)>,
}

/// Parses a wide-format CSV: a header line, then numeric rows. Errors
/// carry the 1-based line number of the offending row.
pub fn read_wide_csv(path: &Path) -> Result<WideCsv, ExperimentError> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let bad = |line: usize, reason: String| ExperimentError::Csv {
        path: display.clone(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(1, "empty file, expected a header".into()))?;
    let mut cols = header.split(',').map(str::trim);
    let x_label = cols
        .next()
        .filter(|c| !c.is_empty())
        .ok_or_else(|| bad(1, "header needs at least an x column".into()))?
        .to_string();
    let series_names: Vec<String> = cols.map(str::to_string).collect();
    if series_names.is_empty() || series_names.iter().any(String::is_empty) {
        return Err(bad(1, "header needs at least one named series column".into()));
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != series_names.len() + 1 {
            return Err(bad(
                lineno,
                format!(
                    "expected {} columns, got {}",
                    series_names.len() + 1,
                    cells.len()
                ),
            ));
        }
        let x: f64 = cells[0]
            .parse()
            .map_err(|_| bad(lineno, format!("bad x value {:?}", cells[0])))?;
        let mut ys = Vec::with_capacity(series_names.len());
        for (name, cell) in series_names.iter().zip(&cells[1..]) {
            if cell.is_empty() {
                ys.push(None);
            } else {
                let y: f64 = cell
                    .parse()
                    .map_err(|_| bad(lineno, format!("bad value {cell:?} in column {name}")))?;
                ys.push(Some(y));
            }
        }
        rows.push((x, ys));
    }
    Ok(WideCsv {
        x_label,
        series_names,
        rows,
    })
}

/// Decimal formatting with trailing zeros trimmed; stable across runs.
fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.into()
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        self.px_lo + t * (self.px_hi - self.px_lo)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = write!(
        out,
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" "#,
            r#"viewBox="0 0 {w} {h}" font-family="monospace" font-size="12">"#,
            "\n",
            r#"<rect width="{w}" height="{h}" fill="white"/>"#,
            "\n",
            r#"<text x="{tx}" y="24" text-anchor="middle" font-size="15">{title}</text>"#,
            "\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        tx = WIDTH / 2.0,
        title = xml_escape(title),
    );
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, x_label: &str, y_label: &str, xs: &Scale, ys: &Scale) {
    let _ = write!(
        out,
        concat!(
            r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
            "\n",
            r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
            "\n"
        ),
        l = MARGIN_LEFT,
        r = WIDTH - MARGIN_RIGHT,
        t = MARGIN_TOP,
        b = HEIGHT - MARGIN_BOTTOM,
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = xs.lo + f * (xs.hi - xs.lo);
        let yv = ys.lo + f * (ys.hi - ys.lo);
        let xp = xs.map(xv);
        let yp = ys.map(yv);
        let _ = write!(
            out,
            concat!(
                r#"<line x1="{xp}" y1="{b}" x2="{xp}" y2="{b2}" stroke="black"/>"#,
                "\n",
                r#"<text x="{xp}" y="{xty}" text-anchor="middle">{xl}</text>"#,
                "\n",
                r#"<line x1="{l}" y1="{yp}" x2="{l2}" y2="{yp}" stroke="black"/>"#,
                "\n",
                r#"<text x="{yl_x}" y="{yty}" text-anchor="end">{yl}</text>"#,
                "\n"
            ),
            xp = xp,
            b = HEIGHT - MARGIN_BOTTOM,
            b2 = HEIGHT - MARGIN_BOTTOM + 5.0,
            xty = HEIGHT - MARGIN_BOTTOM + 18.0,
            xl = fmt_num(xv),
            l = MARGIN_LEFT,
            l2 = MARGIN_LEFT - 5.0,
            yp = yp,
            yl_x = MARGIN_LEFT - 8.0,
            yty = yp + 4.0,
            yl = fmt_num(yv),
        );
    }
    let _ = write!(
        out,
        concat!(
            r#"<text x="{cx}" y="{cy}" text-anchor="middle">{xl}</text>"#,
            "\n",
            r#"<text x="18" y="{my}" text-anchor="middle" transform="rotate(-90 18 {my})">{yl}</text>"#,
            "\n"
        ),
        cx = (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        cy = HEIGHT - 12.0,
        xl = xml_escape(x_label),
        my = (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        yl = xml_escape(y_label),
    );
}

fn no_data(out: &mut String) {
    let _ = write!(
        out,
        r#"<text x="{x}" y="{y}" text-anchor="middle" font-size="15">no data</text>{nl}"#,
        x = (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        y = (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        nl = "\n",
    );
}

/// Multi-series line chart. Gaps (missing cells) simply drop points.
pub fn line_chart_svg(title: &str, y_label: &str, data: &WideCsv) -> String {
    let mut points_exist = false;
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for (x, ys) in &data.rows {
        for y in ys.iter().flatten() {
            points_exist = true;
            x_lo = x_lo.min(*x);
            x_hi = x_hi.max(*x);
            y_lo = y_lo.min(*y);
            y_hi = y_hi.max(*y);
        }
    }
    let mut out = String::new();
    svg_open(&mut out, title);
    if !points_exist {
        let xs = Scale { lo: 0.0, hi: 1.0, px_lo: MARGIN_LEFT, px_hi: WIDTH - MARGIN_RIGHT };
        let ys = Scale { lo: 0.0, hi: 1.0, px_lo: HEIGHT - MARGIN_BOTTOM, px_hi: MARGIN_TOP };
        axes(&mut out, &data.x_label, y_label, &xs, &ys);
        no_data(&mut out);
        out.push_str("</svg>\n");
        return out;
    }
    let (x_lo, x_hi) = padded(x_lo, x_hi);
    let (y_lo, y_hi) = padded(y_lo, y_hi);
    let xs = Scale { lo: x_lo, hi: x_hi, px_lo: MARGIN_LEFT, px_hi: WIDTH - MARGIN_RIGHT };
    let ys = Scale { lo: y_lo, hi: y_hi, px_lo: HEIGHT - MARGIN_BOTTOM, px_hi: MARGIN_TOP };
    axes(&mut out, &data.x_label, y_label, &xs, &ys);

    for (si, name) in data.series_names.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut pts = String::new();
        for (x, row) in &data.rows {
            if let Some(y) = row[si] {
                let _ = write!(pts, "{},{} ", fmt_num(xs.map(*x)), fmt_num(ys.map(y)));
            }
        }
        if !pts.is_empty() {
            let _ = write!(
                out,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                pts.trim_end(),
            );
        }
        let ly = MARGIN_TOP + 16.0 * si as f64;
        let _ = write!(
            out,
            concat!(
                r#"<line x1="{lx}" y1="{ly}" x2="{lx2}" y2="{ly}" stroke="{color}" stroke-width="1.5"/>"#,
                "\n",
                r#"<text x="{tx}" y="{ty}">{name}</text>"#,
                "\n"
            ),
            lx = WIDTH - MARGIN_RIGHT + 10.0,
            lx2 = WIDTH - MARGIN_RIGHT + 34.0,
            ly = ly,
            color = color,
            tx = WIDTH - MARGIN_RIGHT + 40.0,
            ty = ly + 4.0,
            name = xml_escape(name),
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bar chart over labeled values.
pub fn bar_chart_svg(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let ys_px = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    if bars.is_empty() {
        let xs = Scale { lo: 0.0, hi: 1.0, px_lo: MARGIN_LEFT, px_hi: WIDTH - MARGIN_RIGHT };
        let ys = Scale { lo: 0.0, hi: 1.0, px_lo: ys_px.0, px_hi: ys_px.1 };
        axes(&mut out, "", y_label, &xs, &ys);
        no_data(&mut out);
        out.push_str("</svg>\n");
        return out;
    }
    let y_hi = bars.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);
    let (y_lo, y_hi) = padded(0.0, y_hi.max(0.0));
    let ys = Scale { lo: y_lo, hi: y_hi, px_lo: ys_px.0, px_hi: ys_px.1 };
    let xs = Scale {
        lo: 0.0,
        hi: bars.len() as f64,
        px_lo: MARGIN_LEFT,
        px_hi: WIDTH - MARGIN_RIGHT,
    };
    axes(&mut out, "", y_label, &xs, &ys);
    let slot = (WIDTH - MARGIN_RIGHT - MARGIN_LEFT) / bars.len() as f64;
    let bar_w = slot * 0.6;
    for (i, (label, value)) in bars.iter().enumerate() {
        let cx = MARGIN_LEFT + slot * (i as f64 + 0.5);
        let top = ys.map(*value);
        let _ = write!(
            out,
            concat!(
                r#"<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="{color}"/>"#,
                "\n",
                r#"<text x="{cx}" y="{lby}" text-anchor="middle">{label}</text>"#,
                "\n",
                r#"<text x="{cx}" y="{vy}" text-anchor="middle">{val}</text>"#,
                "\n"
            ),
            x = fmt_num(cx - bar_w / 2.0),
            y = fmt_num(top),
            w = fmt_num(bar_w),
            h = fmt_num(HEIGHT - MARGIN_BOTTOM - top),
            color = PALETTE[i % PALETTE.len()],
            cx = fmt_num(cx),
            lby = HEIGHT - MARGIN_BOTTOM + 18.0,
            label = xml_escape(label),
            vy = fmt_num(top - 6.0),
            val = fmt_num(*value),
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Renders a wide CSV to an SVG file. Line charts plot every series;
/// bar charts use the first series column keyed by the x column.
pub fn plot_csv(input: &Path, out: &Path, kind: PlotKind) -> Result<(), ExperimentError> {
    let data = read_wide_csv(input)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let svg = match kind {
        PlotKind::Line => line_chart_svg(&stem, "value", &data),
        PlotKind::Bar => {
            let bars: Vec<(String, f64)> = data
                .rows
                .iter()
                .filter_map(|(x, ys)| ys[0].map(|v| (fmt_num(*x), v)))
                .collect();
            bar_chart_svg(&stem, &data.series_names[0], &bars)
        }
    };
    fs::write(out, svg)?;
    Ok(())
}
