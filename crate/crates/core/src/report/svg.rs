// SPDX-License-Identifier: MIT OR Apache-2.0

//! Self-contained SVG figures. Output depends only on the inputs; text uses
//! the generic `sans-serif` family so no font files are referenced.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{simplex_coords, MaxProbHistogram, SweepResult};
use crate::dataset::{write_atomic, TokenSet};
use crate::error::{Error, Result};
use crate::kernel::{Distribution, ProbeKind};

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 480.0;
const X0: f64 = 60.0;
const Y0: f64 = 40.0;
const PLOT: f64 = 400.0;
const MARKER_RADIUS: f64 = 3.0;
const COLORBAR_STEPS: usize = 32;

/// Default clip ceiling for per-point divergences.
pub const DEFAULT_COLOR_CEILING: f64 = 1.5;

const RAMP: [(u8, u8, u8); 5] = [
    (0x44, 0x01, 0x54),
    (0x3b, 0x52, 0x8b),
    (0x21, 0x91, 0x8c),
    (0x5e, 0xc9, 0x62),
    (0xfd, 0xe7, 0x25),
];

const SERIES: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

/// Maps `[0, ceiling]` onto a continuous ramp; values above the ceiling get
/// the ceiling colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorScale {
    pub ceiling: f64,
}

impl Default for ColorScale {
    fn default() -> Self {
        Self {
            ceiling: DEFAULT_COLOR_CEILING,
        }
    }
}

impl ColorScale {
    pub fn color(&self, value: f64) -> String {
        let t = if self.ceiling > 0.0 {
            (value / self.ceiling).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let pos = t * (RAMP.len() - 1) as f64;
        let i = (pos.floor() as usize).min(RAMP.len() - 2);
        let f = pos - i as f64;
        let mix = |a: u8, b: u8| (f64::from(a) + f * (f64::from(b) - f64::from(a))).round() as u8;
        let (a, b) = (RAMP[i], RAMP[i + 1]);
        format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <title>{}</title>\n\
         <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        escape(title),
        WIDTH / 2.0,
        escape(title)
    );
}

fn footer(out: &mut String) {
    out.push_str("</svg>\n");
}

fn axes(out: &mut String) {
    let _ = writeln!(
        out,
        "<rect class=\"axes\" x=\"{X0}\" y=\"{Y0}\" width=\"{PLOT}\" height=\"{PLOT}\" fill=\"none\" stroke=\"#000000\"/>"
    );
}

fn colorbar(out: &mut String, scale: &ColorScale) {
    let x = X0 + PLOT + 30.0;
    let h = PLOT / COLORBAR_STEPS as f64;
    out.push_str("<g class=\"colorbar\">\n");
    for i in 0..COLORBAR_STEPS {
        let v = scale.ceiling * (i as f64 + 0.5) / COLORBAR_STEPS as f64;
        let y = Y0 + PLOT - (i + 1) as f64 * h;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"16\" height=\"{h:.2}\" fill=\"{}\"/>",
            scale.color(v)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\">0</text>\n<text x=\"{:.2}\" y=\"{:.2}\">\u{2265}{}</text>\n</g>",
        x + 20.0,
        Y0 + PLOT,
        x + 20.0,
        Y0 + 10.0,
        super::format_sig(scale.ceiling)
    );
}

fn check_points(n: usize, colors: &[f64]) -> Result<()> {
    if colors.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: colors.len(),
        });
    }
    if colors.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite colour value"));
    }
    Ok(())
}

fn marker(out: &mut String, x: f64, y: f64, color: &str) {
    let _ = writeln!(
        out,
        "<circle class=\"pt\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{MARKER_RADIUS}\" fill=\"{color}\"/>"
    );
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn scale_to(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

/// 2-D scatter (typically LDA coordinates) coloured by `colors`.
pub fn render_scatter(
    coords: &[(f64, f64)],
    colors: &[f64],
    scale: &ColorScale,
    title: &str,
) -> Result<String> {
    check_points(coords.len(), colors)?;
    if coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("non-finite coordinate"));
    }
    let xr = span(coords.iter().map(|c| c.0));
    let yr = span(coords.iter().map(|c| c.1));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out);
    out.push_str("<g class=\"points\">\n");
    for (&(x, y), &c) in coords.iter().zip(colors) {
        marker(
            &mut out,
            X0 + PLOT * scale_to(x, xr),
            Y0 + PLOT - PLOT * scale_to(y, yr),
            &scale.color(c),
        );
    }
    out.push_str("</g>\n");
    colorbar(&mut out, scale);
    footer(&mut out);
    Ok(out)
}

/// Pixel position of barycentric simplex coordinates: vertex 0 bottom-left,
/// vertex 1 bottom-right, vertex 2 on top.
pub fn ternary_pixel((x, y): (f64, f64)) -> (f64, f64) {
    (X0 + PLOT * x, Y0 + PLOT - PLOT * y)
}

/// Three-answer distributions on the probability triangle.
pub fn render_ternary(
    dists: &[Distribution],
    colors: &[f64],
    labels: &TokenSet,
    scale: &ColorScale,
    title: &str,
) -> Result<String> {
    if labels.k() != 3 {
        return Err(Error::invalid(format!("ternary plot needs k = 3, got {}", labels.k())));
    }
    if let Some(d) = dists.iter().find(|d| d.len() != 3) {
        return Err(Error::DimensionMismatch {
            expected: 3,
            actual: d.len(),
        });
    }
    check_points(dists.len(), colors)?;
    let corners = [(0.0, 0.0), (1.0, 0.0), (0.5, 3f64.sqrt() / 2.0)].map(ternary_pixel);
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        "<polygon class=\"simplex\" points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"none\" stroke=\"#000000\"/>",
        corners[0].0, corners[0].1, corners[1].0, corners[1].1, corners[2].0, corners[2].1
    );
    let offsets = [(-8.0, 18.0, "end"), (8.0, 18.0, "start"), (0.0, -8.0, "middle")];
    for ((cx, cy), (label, (dx, dy, anchor))) in corners.iter().zip(labels.labels().iter().zip(offsets)) {
        let _ = writeln!(
            out,
            "<text class=\"vertex\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"{anchor}\">{}</text>",
            cx + dx,
            cy + dy,
            escape(label)
        );
    }
    out.push_str("<g class=\"points\">\n");
    for (d, &c) in dists.iter().zip(colors) {
        let (px, py) = ternary_pixel(simplex_coords(d)?);
        marker(&mut out, px, py, &scale.color(c));
    }
    out.push_str("</g>\n");
    colorbar(&mut out, scale);
    footer(&mut out);
    Ok(out)
}

/// Three stacked panels (F1 against ground truth, F1 against the model,
/// d_KL) with one polyline per probe kind across layers.
pub fn render_layer_curves(sweep: &SweepResult, title: &str) -> String {
    let mut layers: Vec<usize> = sweep.rows.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let mut kinds: Vec<ProbeKind> = sweep.rows.iter().map(|r| r.probe_kind).collect();
    kinds.sort();
    kinds.dedup();

    type Metric = fn(&crate::kernel::MetricsRecord) -> Option<f64>;
    let panels: [(&str, Metric); 3] = [
        ("F1 (GT)", |r| r.f1_gt),
        ("F1 (LLM)", |r| Some(r.f1_llm)),
        ("d_KL", |r| Some(r.d_kl)),
    ];
    let panel_h = (PLOT - 40.0) / 3.0;
    let xpos = |layer: usize| {
        let i = layers.iter().position(|&l| l == layer).unwrap_or(0);
        if layers.len() > 1 {
            X0 + PLOT * i as f64 / (layers.len() - 1) as f64
        } else {
            X0 + PLOT / 2.0
        }
    };

    let mut out = String::new();
    header(&mut out, title);
    for (p, (name, metric)) in panels.iter().enumerate() {
        let top = Y0 + p as f64 * (panel_h + 20.0);
        let range = span(sweep.rows.iter().filter_map(metric));
        let _ = writeln!(
            out,
            "<g class=\"panel\">\n<rect x=\"{X0}\" y=\"{top:.2}\" width=\"{PLOT}\" height=\"{panel_h:.2}\" fill=\"none\" stroke=\"#000000\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            X0 - 6.0,
            top + panel_h / 2.0,
            escape(name)
        );
        for (s, kind) in kinds.iter().enumerate() {
            let pts: Vec<String> = layers
                .iter()
                .filter_map(|&l| {
                    let v = sweep
                        .rows
                        .iter()
                        .find(|r| r.layer == l && r.probe_kind == *kind)
                        .and_then(metric)?;
                    let y = top + panel_h - panel_h * scale_to(v, range);
                    Some(format!("{:.2},{:.2}", xpos(l), y))
                })
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(
                    out,
                    "<polyline class=\"series\" data-kind=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{}\"/>",
                    kind.as_str(),
                    pts.join(" "),
                    SERIES[s % SERIES.len()]
                );
            }
        }
        out.push_str("</g>\n");
    }
    for &l in &layers {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{l}</text>",
            xpos(l),
            Y0 + PLOT + 14.0
        );
    }
    for (s, kind) in kinds.iter().enumerate() {
        let y = Y0 + 10.0 + 16.0 * s as f64;
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{y:.2}\" fill=\"{}\">{}</text>",
            X0 + PLOT + 12.0,
            SERIES[s % SERIES.len()],
            kind.as_str()
        );
    }
    footer(&mut out);
    out
}

/// Bar chart of a max-probability histogram.
pub fn render_histogram(hist: &MaxProbHistogram, title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out);
    let max = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bins = hist.counts.len().max(1) as f64;
    let w = PLOT / bins;
    out.push_str("<g class=\"bars\">\n");
    for (i, &c) in hist.counts.iter().enumerate() {
        let h = PLOT * c as f64 / max;
        let _ = writeln!(
            out,
            "<rect class=\"bar\" x=\"{:.2}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{}\" stroke=\"#ffffff\"/>",
            X0 + i as f64 * w,
            Y0 + PLOT - h,
            SERIES[0]
        );
    }
    out.push_str("</g>\n");
    if let (Some(first), Some(last)) = (hist.edges.first(), hist.edges.last()) {
        let _ = writeln!(
            out,
            "<text x=\"{X0}\" y=\"{:.2}\">{}</text>\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            Y0 + PLOT + 14.0,
            super::format_sig(*first),
            X0 + PLOT,
            Y0 + PLOT + 14.0,
            super::format_sig(*last)
        );
    }
    footer(&mut out);
    out
}

pub fn write_svg(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    write_atomic(path.as_ref(), svg.as_bytes())
}

/// Renders and writes a scatter figure.
pub fn emit_scatter(
    coords: &[(f64, f64)],
    colors: &[f64],
    scale: &ColorScale,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_svg(path, &render_scatter(coords, colors, scale, "LDA projection")?)
}

/// Renders and writes a ternary figure.
pub fn emit_ternary(
    dists: &[Distribution],
    colors: &[f64],
    labels: &TokenSet,
    scale: &ColorScale,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_svg(path, &render_ternary(dists, colors, labels, scale, "Probability simplex")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::max_prob_histogram;
    use crate::analysis::Normalization;
    use crate::kernel::MetricsRecord;

    fn circles(svg: &str) -> Vec<(f64, f64, String)> {
        svg.lines()
            .filter(|l| l.starts_with("<circle class=\"pt\""))
            .map(|l| {
                let attr = |name: &str| {
                    let start = l.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
                    let end = start + l[start..].find('"').unwrap();
                    l[start..end].to_string()
                };
                (attr("cx").parse().unwrap(), attr("cy").parse().unwrap(), attr("fill"))
            })
            .collect()
    }

    #[test]
    fn three_points_at_scaled_positions() {
        let svg = render_scatter(&[(0.0, 0.0), (1.0, 2.0), (0.5, 1.0)], &[0.0, 0.5, 1.0], &ColorScale::default(), "t")
            .unwrap();
        let pts = circles(&svg);
        assert_eq!(pts.len(), 3);
        assert_eq!((pts[0].0, pts[0].1), (X0, Y0 + PLOT));
        assert_eq!((pts[1].0, pts[1].1), (X0 + PLOT, Y0));
        assert_eq!((pts[2].0, pts[2].1), (X0 + PLOT / 2.0, Y0 + PLOT / 2.0));
        assert!(svg.contains("class=\"colorbar\""));
    }

    #[test]
    fn values_above_ceiling_get_ceiling_colour() {
        let scale = ColorScale::default();
        assert_eq!(scale.color(9.0), scale.color(1.5));
        assert_eq!(scale.color(1.5), "#fde725");
        assert_eq!(scale.color(0.0), "#440154");
        assert_eq!(scale.color(-1.0), "#440154");
        assert_ne!(scale.color(0.75), scale.color(1.5));
        let svg = render_scatter(&[(0.0, 0.0), (1.0, 1.0)], &[9.0, 1.5], &scale, "t").unwrap();
        let pts = circles(&svg);
        assert_eq!(pts[0].2, pts[1].2);
    }

    #[test]
    fn empty_scatter_is_valid_document() {
        let svg = render_scatter(&[], &[], &ColorScale::default(), "empty").unwrap();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("class=\"axes\""));
        assert!(circles(&svg).is_empty());
        assert!(render_scatter(&[(0.0, 0.0)], &[], &ColorScale::default(), "t").is_err());
        assert!(render_scatter(&[(f64::NAN, 0.0)], &[0.0], &ColorScale::default(), "t").is_err());
    }

    #[test]
    fn ternary_vertices_and_centroid() {
        let labels = TokenSet::new(vec!["past".into(), "present".into(), "fut<ure>".into()]).unwrap();
        let dists = vec![
            Distribution::one_hot(3, 0),
            Distribution::one_hot(3, 1),
            Distribution::one_hot(3, 2),
            Distribution::uniform(3),
        ];
        let svg = render_ternary(&dists, &[0.0; 4], &labels, &ColorScale::default(), "s").unwrap();
        let pts = circles(&svg);
        assert_eq!((pts[0].0, pts[0].1), (X0, Y0 + PLOT));
        assert_eq!((pts[1].0, pts[1].1), (X0 + PLOT, Y0 + PLOT));
        let top = ternary_pixel((0.5, 3f64.sqrt() / 2.0));
        assert!((pts[2].0 - top.0).abs() < 0.01 && (pts[2].1 - top.1).abs() < 0.01);
        let c = ternary_pixel((0.5, 3f64.sqrt() / 6.0));
        assert!((pts[3].0 - c.0).abs() < 0.01 && (pts[3].1 - c.1).abs() < 0.01);
        assert!(svg.contains("fut&lt;ure&gt;"));
        assert_eq!(svg, render_ternary(&dists, &[0.0; 4], &labels, &ColorScale::default(), "s").unwrap());
        let two = TokenSet::numbered(2).unwrap();
        assert!(render_ternary(&[], &[], &two, &ColorScale::default(), "s").is_err());
    }

    #[test]
    fn curves_and_histogram_render() {
        let rec = |layer, kind, f1| MetricsRecord {
            layer,
            probe_kind: kind,
            f1_gt: None,
            f1_llm: f1,
            d_kl: 1.0 - f1,
            css: Some(0.3),
        };
        let sweep = SweepResult {
            rows: vec![
                rec(0, ProbeKind::Klrp, 0.9),
                rec(0, ProbeKind::Random, 0.3),
                rec(1, ProbeKind::Klrp, 0.4),
                rec(1, ProbeKind::Random, 0.3),
            ],
            css: 0.3,
            normalization: Normalization::Raw,
        };
        let svg = render_layer_curves(&sweep, "sweep");
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg, render_layer_curves(&sweep, "sweep"));

        let h = max_prob_histogram(&[Distribution::uniform(2), Distribution::one_hot(2, 0)], 4).unwrap();
        let svg = render_histogram(&h, "hist");
        assert_eq!(svg.matches("class=\"bar\"").count(), 4);
    }
}
