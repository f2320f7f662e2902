//! Plain-text and 8-bit outputs: PGM images, SVG line plots, CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Binary PGM (P5) of an `h x w` image stored column-major (`h` fastest),
/// mapping `[lo, hi]` linearly onto `0..=255` with clamping.
pub fn encode_pgm(image: &[f64], h: usize, w: usize, window: (f64, f64)) -> Result<Vec<u8>> {
    if image.len() != h * w {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for a {h}x{w} image",
            image.len()
        )));
    }
    if !image.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("image".into()));
    }
    let (lo, hi) = window;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for row in 0..h {
        for col in 0..w {
            let v = (image[row + h * col] - lo) / span;
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, image: &[f64], h: usize, w: usize, window: (f64, f64)) -> Result<()> {
    write_atomic(path, &encode_pgm(image, h, w, window)?)
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct PlotLabels {
    pub title: String,
    pub x: String,
    pub y: String,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG 1.1 line chart, one `<polyline>` per series.
pub fn encode_svg_lines(series: &[Series], labels: &PlotLabels) -> Result<String> {
    let (width, height) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let pw = width - left - right;
    let ph = height - top - bottom;

    let pts = series.iter().flat_map(|s| s.points.iter());
    let mut bounds = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite("plot series".into()));
        }
        bounds = (bounds.0.min(x), bounds.1.max(x), bounds.2.min(y), bounds.3.max(y));
    }
    if !bounds.0.is_finite() {
        bounds = (0.0, 1.0, 0.0, 1.0);
    }
    let (x0, mut x1, y0, mut y1) = bounds;
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(&labels.title)
    );
    // axes
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        height - 10.0,
        escape(&labels.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&labels.y)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

pub fn write_svg_lines(path: &Path, series: &[Series], labels: &PlotLabels) -> Result<()> {
    write_atomic(path, encode_svg_lines(series, labels)?.as_bytes())
}

/// RFC 4180 CSV with a header row.
pub fn encode_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::DimensionMismatch(format!(
                "row with {} fields under a {}-column header",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &encode_csv(header, rows)?)
}

/// Shortest round-trip representation, with `inf`/`-inf`/`nan` spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_pgm() {
        let bytes = encode_pgm(&[0.5; 12], 3, 4, (0.0, 1.0)).unwrap();
        let header = b"P5\n4 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let payload = &bytes[header.len()..];
        assert_eq!(payload.len(), 12);
        assert!(payload.iter().all(|&b| b == payload[0]));
    }

    #[test]
    fn pgm_row_major_from_column_major() {
        // 2x2 image, column-major [a(0,0), b(1,0), c(0,1), d(1,1)]
        let bytes = encode_pgm(&[0.0, 1.0, 0.5, 0.25], 2, 2, (0.0, 1.0)).unwrap();
        let payload = &bytes[bytes.len() - 4..];
        assert_eq!(payload, &[0, 128, 255, 64]);
    }

    #[test]
    fn svg_single_polyline() {
        let s = encode_svg_lines(
            &[Series {
                label: "a".into(),
                points: vec![(0.0, 0.0), (1.0, 1.0)],
            }],
            &PlotLabels::default(),
        )
        .unwrap();
        assert_eq!(s.matches("<polyline").count(), 1);
        assert!(s.starts_with("<?xml"));
    }

    #[test]
    fn csv_two_by_two() {
        let out = encode_csv(
            &["a", "b"],
            &[vec!["1".into(), "2".into()], vec!["3".into(), "x,y".into()]],
        )
        .unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("\"x,y\""));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(encode_pgm(&[f64::NAN], 1, 1, (0.0, 1.0)).is_err());
    }
}
