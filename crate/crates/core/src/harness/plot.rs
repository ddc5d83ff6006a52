//! Self-contained SVG line charts with optional bands, from CSV series.

use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    /// Column for the x axis.
    pub x: String,
    /// Column for the line.
    pub y: String,
    /// Optional `(lo, hi)` columns drawn as a shaded band.
    pub band: Option<(String, String)>,
    /// Clamp the y axis to `[0, 1]`.
    pub fraction: bool,
    pub x_label: String,
    pub y_label: String,
}

impl PlotSpec {
    pub fn new(x: &str, y: &str) -> Self {
        PlotSpec {
            title: String::new(),
            x: x.into(),
            y: y.into(),
            band: None,
            fraction: false,
            x_label: x.into(),
            y_label: y.into(),
        }
    }
}

/// One named CSV input; each becomes a series in the legend.
#[derive(Clone, Debug)]
pub struct SeriesInput<'a> {
    pub label: &'a str,
    pub csv: &'a str,
}

#[derive(Clone, Debug, Default)]
struct Series {
    label: String,
    x: Vec<f64>,
    y: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn parse_series(input: &SeriesInput<'_>, spec: &PlotSpec) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input.csv.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            row: 0,
            column: name.into(),
            message: format!("column missing from `{}` (have: {})", input.label, headers.iter().collect::<Vec<_>>().join(",")),
        })
    };
    let cx = col(&spec.x)?;
    let cy = col(&spec.y)?;
    let band = match &spec.band {
        Some((lo, hi)) => Some((col(lo)?, col(hi)?)),
        None => None,
    };
    let mut s = Series {
        label: input.label.into(),
        ..Default::default()
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| Error::Schema {
                row,
                column: headers[c].to_string(),
                message: format!("`{raw}` is not a number in `{}`", input.label),
            })
        };
        s.x.push(num(cx)?);
        s.y.push(num(cy)?);
        if let Some((l, h)) = band {
            s.lo.push(num(l)?);
            s.hi.push(num(h)?);
        }
    }
    Ok(s)
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders the inputs as one SVG document.
pub fn emit_plot(inputs: &[SeriesInput<'_>], spec: &PlotSpec) -> Result<String> {
    let series: Vec<Series> = inputs.iter().map(|i| parse_series(i, spec)).collect::<Result<_>>()?;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if !spec.title.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(&spec.title));
    }
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y_label)
    );

    let finite = |v: &&f64| v.is_finite();
    let xs: Vec<f64> = series.iter().flat_map(|s| s.x.iter()).filter(finite).copied().collect();
    if xs.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" fill="gray">no data</text>"#,
            LEFT + pw / 2.0,
            TOP + ph / 2.0
        );
        svg.push_str("</svg>\n");
        return Ok(svg);
    }
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let (y0, y1) = if spec.fraction {
        (0.0, 1.0)
    } else {
        let ys = series.iter().flat_map(|s| s.y.iter().chain(&s.lo).chain(&s.hi)).filter(finite);
        let (a, b) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if a == b {
            (a - 0.5, b + 0.5)
        } else {
            (a, b)
        }
    };
    let clamp = |v: f64| if spec.fraction { v.clamp(0.0, 1.0) } else { v };
    let px = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
    let py = |v: f64| TOP + ph - (clamp(v) - y0) / (y1 - y0) * ph;

    for t in ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, fmt_tick(t));
    }
    for t in ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(t));
    }

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if !s.lo.is_empty() {
            let mut pts: Vec<String> = s.x.iter().zip(&s.hi).map(|(&x, &h)| format!("{:.2},{:.2}", px(x), py(h))).collect();
            pts.extend(s.x.iter().zip(&s.lo).rev().map(|(&x, &l)| format!("{:.2},{:.2}", px(x), py(l))));
            if !pts.is_empty() {
                let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
            }
        }
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(&s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        }
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = "generation,mean,lo,hi\n0,1,1,1\n1,0.5,0.4,0.6\n2,1.2,1.1,1.3\n";
    const B: &str = "generation,mean,lo,hi\n0,0.2,0.1,0.3\n1,0.1,0.0,0.2\n";

    #[test]
    fn empty_series_says_no_data() {
        let svg = emit_plot(&[SeriesInput { label: "a", csv: "generation,mean\n" }], &PlotSpec::new("generation", "mean")).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("no data"));
        assert!(svg.trim_end().ends_with("</svg>"));
        let none = emit_plot(&[], &PlotSpec::new("generation", "mean")).unwrap();
        assert!(none.contains("no data"));
    }

    #[test]
    fn two_series_with_legend_and_band() {
        let mut spec = PlotSpec::new("generation", "mean");
        spec.band = Some(("lo".into(), "hi".into()));
        spec.fraction = true;
        spec.title = "in-OPT <fraction>".into();
        let svg = emit_plot(&[SeriesInput { label: "ea", csv: A }, SeriesInput { label: "pop", csv: B }], &spec).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.contains(">ea<") && svg.contains(">pop<"));
        assert!(svg.contains("&lt;fraction&gt;"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn fraction_plots_are_clamped() {
        let mut spec = PlotSpec::new("generation", "mean");
        spec.fraction = true;
        let svg = emit_plot(&[SeriesInput { label: "a", csv: A }], &spec).unwrap();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let pts = line.split('"').nth(1).unwrap();
        for p in pts.split(' ') {
            let y: f64 = p.split(',').nth(1).unwrap().parse().unwrap();
            assert!((TOP..=TOP + H - TOP - BOTTOM).contains(&y));
        }
    }

    #[test]
    fn schema_errors_name_row_and_column() {
        let err = emit_plot(&[SeriesInput { label: "a", csv: "generation,avg\n0,1\n" }], &PlotSpec::new("generation", "mean")).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 0, ref column, .. } if column == "mean"));
        let err = emit_plot(&[SeriesInput { label: "a", csv: "generation,mean\n0,1\n1,x\n" }], &PlotSpec::new("generation", "mean")).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 2, ref column, .. } if column == "mean"));
    }
}
