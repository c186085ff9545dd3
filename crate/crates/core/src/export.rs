//! CSV, JSON and SVG writers.
//!
//! Floats are written with 17 significant digits so a CSV round-trips to the
//! same f64 and reruns are byte-identical.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Integral values print as integers so index and count columns stay readable.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_csv_row<W: Write>(out: &mut W, fields: &[String]) -> Result<()> {
    writeln!(out, "{}", fields.join(","))?;
    Ok(())
}

/// Writes a header followed by numeric rows.
pub fn write_csv_table<W: Write>(mut out: W, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        write_csv_row(&mut out, &fields)?;
    }
    Ok(())
}

/// Writes the same table as a JSON object of named columns.
pub fn write_json_table<W: Write>(out: W, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut columns = serde_json::Map::new();
    for (c, name) in header.iter().enumerate() {
        let values: Vec<serde_json::Value> = rows.iter().map(|r| json_number(r[c])).collect();
        columns.insert(name.clone(), serde_json::Value::Array(values));
    }
    write_json(out, &serde_json::Value::Object(columns))
}

/// Non-finite floats have no JSON representation; they become strings.
pub fn json_number(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or_else(|| serde_json::Value::String(format_float(v)))
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Serde helper that writes non-finite floats as strings.
pub mod finite_or_string {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::format_float(*v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone)]
struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    markers_only: bool,
}

/// Minimal static SVG line chart.
#[derive(Debug, Clone)]
pub struct SvgPlot {
    title: String,
    x_label: String,
    y_label: String,
    y_scale: AxisScale,
    series: Vec<Series>,
    width: f64,
    height: f64,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

impl SvgPlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            y_scale: AxisScale::Linear,
            series: Vec::new(),
            width: 720.0,
            height: 440.0,
        }
    }

    pub fn log_y(mut self) -> Self {
        self.y_scale = AxisScale::Log;
        self
    }

    pub fn line(&mut self, label: &str, points: Vec<(f64, f64)>) -> &mut Self {
        self.series.push(Series {
            label: label.to_string(),
            points,
            markers_only: false,
        });
        self
    }

    pub fn markers(&mut self, label: &str, points: Vec<(f64, f64)>) -> &mut Self {
        self.series.push(Series {
            label: label.to_string(),
            points,
            markers_only: true,
        });
        self
    }

    fn usable(&self, y: f64) -> bool {
        y.is_finite() && (self.y_scale == AxisScale::Linear || y > 0.0)
    }

    fn ty(&self, y: f64) -> f64 {
        match self.y_scale {
            AxisScale::Linear => y,
            AxisScale::Log => y.log10(),
        }
    }

    pub fn render(&self) -> String {
        let (ml, mr, mt, mb) = (70.0, 150.0, 40.0, 50.0);
        let pw = self.width - ml - mr;
        let ph = self.height - mt - mb;
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && self.usable(*y));
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            let y = self.ty(y);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            ml + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let ylab = match self.y_scale {
                AxisScale::Linear => format!("{fy:.3e}"),
                AxisScale::Log => format!("1e{fy:.1}"),
            };
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.3}</text>"#,
                sx(fx),
                mt + ph + 16.0,
                fx
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                ml - 4.0,
                sy(fy) + 4.0,
                ylab
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            ml + pw / 2.0,
            self.height - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
            escape(&self.y_label),
            y = mt + ph / 2.0
        );
        for (i, s) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            if s.markers_only {
                for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && self.usable(*y)) {
                    let _ = writeln!(
                        svg,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#,
                        sx(x),
                        sy(self.ty(y))
                    );
                }
            } else {
                // Non-finite points break the polyline into segments.
                let mut segment = Vec::new();
                let flush = |seg: &mut Vec<String>, svg: &mut String| {
                    if seg.len() > 1 {
                        let _ = writeln!(
                            svg,
                            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{}"/>"#,
                            seg.join(" ")
                        );
                    }
                    seg.clear();
                };
                for &(x, y) in &s.points {
                    if x.is_finite() && self.usable(y) {
                        segment.push(format!("{:.2},{:.2}", sx(x), sy(self.ty(y))));
                    } else {
                        flush(&mut segment, &mut svg);
                    }
                }
                flush(&mut segment, &mut svg);
            }
            let ly = mt + 14.0 * (i as f64 + 1.0);
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{colour}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                ml + pw + 10.0,
                ly - 9.0,
                ml + pw + 24.0,
                ly,
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.render().as_bytes())?;
        Ok(())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
