//! SVG figures: covariance heatmaps on a shared colour scale and 2-D
//! scatter plots with 1σ/2σ ellipses.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Result};
use fgprop_core::Gaussian;
use nalgebra::{DMatrix, Matrix2};

use crate::experiment::ExperimentReport;

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// A `k`-sigma ellipse in data coordinates. `angle_deg` is the direction of
/// the major axis, counter-clockwise from +x, in `(-90, 90]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle_deg: f64,
}

impl Ellipse {
    pub fn from_gaussian(g: &Gaussian, k_sigma: f64) -> Result<Self> {
        ensure!(g.dim() == 2, "ellipses need a 2-D Gaussian, got dimension {}", g.dim());
        let c = g.cov();
        let eig = Matrix2::new(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]).symmetric_eigen();
        let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let v = eig.eigenvectors.column(major);
        let mut angle = v[1].atan2(v[0]).to_degrees();
        if angle <= -90.0 {
            angle += 180.0;
        } else if angle > 90.0 {
            angle -= 180.0;
        }
        Ok(Self {
            cx: g.mean()[0],
            cy: g.mean()[1],
            semi_major: k_sigma * eig.eigenvalues[major].max(0.0).sqrt(),
            semi_minor: k_sigma * eig.eigenvalues[minor].max(0.0).sqrt(),
            angle_deg: angle,
        })
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let r = self.semi_major;
        (self.cx - r, self.cx + r, self.cy - r, self.cy + r)
    }
}

/// Uniform data-to-pixel map, y pointing up in data space.
struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
    pad: f64,
}

impl Frame {
    fn fit(bounds: (f64, f64, f64, f64), size: f64, pad: f64) -> Self {
        let (x0, x1, y0, y1) = bounds;
        let span = (x1 - x0).max(y1 - y0).max(1e-12);
        Self { x0, y1, scale: (size - 2.0 * pad) / span, pad }
    }

    fn x(&self, x: f64) -> f64 {
        self.pad + (x - self.x0) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        self.pad + (self.y1 - y) * self.scale
    }
}

fn union(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> (f64, f64, f64, f64) {
    (a.0.min(b.0), a.1.max(b.1), a.2.min(b.2), a.3.max(b.3))
}

/// Scatter of `samples` (2 × N) with 1σ and 2σ ellipses per method.
pub fn ellipse_svg(samples: &DMatrix<f64>, methods: &[(String, Gaussian)]) -> Result<String> {
    ensure!(samples.nrows() == 2 || samples.ncols() == 0, "scatter samples must be 2-D");
    let mut ellipses = Vec::new();
    for (name, g) in methods {
        for k in [1.0, 2.0] {
            ellipses.push((name.as_str(), k, Ellipse::from_gaussian(g, k)?));
        }
    }
    let mut bounds = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in samples.column_iter() {
        bounds = union(bounds, (s[0], s[0], s[1], s[1]));
    }
    for (_, _, e) in &ellipses {
        bounds = union(bounds, e.bounds());
    }
    let size = 480.0;
    let frame = Frame::fit(bounds, size, 20.0);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    svg.push('\n');
    for s in samples.column_iter() {
        writeln!(svg, r##"<circle cx="{:.3}" cy="{:.3}" r="1.2" fill="#999" fill-opacity="0.4"/>"##, frame.x(s[0]), frame.y(s[1]))?;
    }
    for (i, (name, _)) in methods.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for (n, k, e) in ellipses.iter().filter(|(n, _, _)| *n == name) {
            let (cx, cy) = (frame.x(e.cx), frame.y(e.cy));
            writeln!(
                svg,
                r#"<ellipse data-method="{n}" data-sigma="{k}" cx="{cx:.6}" cy="{cy:.6}" rx="{:.6}" ry="{:.6}" transform="rotate({:.6} {cx:.6} {cy:.6})" fill="none" stroke="{colour}" stroke-dasharray="{}"/>"#,
                e.semi_major * frame.scale,
                e.semi_minor * frame.scale,
                -e.angle_deg,
                if *k > 1.0 { "4 3" } else { "none" },
            )?;
        }
        writeln!(svg, r#"<text x="24" y="{}" font-size="12" fill="{colour}">{name}</text>"#, 34 + 16 * i)?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn colour(v: f64, vmax: f64) -> String {
    let t = if vmax > 0.0 { (v / vmax).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("rgb(255,{fade},{fade})")
    } else {
        format!("rgb({fade},{fade},255)")
    }
}

/// One heatmap per covariance, all on the colour scale `[-vmax, vmax]`
/// with `vmax` the largest absolute entry across the set.
pub fn heatmap_svg(covariances: &[(String, DMatrix<f64>)]) -> Result<String> {
    ensure!(!covariances.is_empty(), "nothing to render");
    let vmax = covariances.iter().flat_map(|(_, c)| c.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
    let panel = 200.0;
    let width = panel * covariances.len() as f64 + 20.0;
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" data-vmax="{vmax:e}">"#, panel + 40.0);
    svg.push('\n');
    for (p, (name, cov)) in covariances.iter().enumerate() {
        ensure!(cov.is_square(), "covariance for {name} is not square");
        let n = cov.nrows().max(1);
        let cell = (panel - 20.0) / n as f64;
        let x0 = 10.0 + panel * p as f64;
        writeln!(svg, r#"<g data-method="{name}"><text x="{x0}" y="16" font-size="13">{name}</text>"#)?;
        for i in 0..cov.nrows() {
            for j in 0..cov.ncols() {
                writeln!(
                    svg,
                    r#"<rect x="{:.3}" y="{:.3}" width="{cell:.3}" height="{cell:.3}" fill="{}"/>"#,
                    x0 + j as f64 * cell,
                    24.0 + i as f64 * cell,
                    colour(cov[(i, j)], vmax)
                )?;
            }
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Bar chart of median scores per method for each setting.
pub fn summary_svg(report: &ExperimentReport) -> Result<String> {
    let rows: Vec<(String, String, f64)> = report
        .settings
        .iter()
        .flat_map(|s| s.methods.iter().map(move |m| (s.setting.clone(), m.method.clone(), m.median)))
        .collect();
    summary_bars(&rows)
}

/// Bars for `(setting, method, median)` triples.
pub fn summary_bars(rows: &[(String, String, f64)]) -> Result<String> {
    ensure!(!rows.is_empty(), "nothing to render");
    let vmax = rows.iter().map(|r| r.2).fold(0.0f64, f64::max).max(1e-12);
    let (bar, label_w, chart_w) = (18.0, 160.0, 360.0);
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.1.as_str()) {
            methods.push(&r.1);
        }
    }
    let height = bar * rows.len() as f64 + 20.0;
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}">"#, label_w + chart_w + 80.0);
    svg.push('\n');
    for (i, (setting, method, v)) in rows.iter().enumerate() {
        let y = 10.0 + bar * i as f64;
        let c = PALETTE[methods.iter().position(|m| m == method).unwrap() % PALETTE.len()];
        writeln!(svg, r#"<text x="4" y="{:.1}" font-size="11">{setting} {method}</text>"#, y + 13.0)?;
        writeln!(svg, r#"<rect x="{label_w}" y="{y:.1}" width="{:.3}" height="{:.1}" fill="{c}"/>"#, v / vmax * chart_w, bar - 4.0)?;
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="11">{v:.4}</text>"#, label_w + v / vmax * chart_w + 4.0, y + 13.0)?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg(svg: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn gaussian(cov: [f64; 4]) -> Gaussian {
        Gaussian::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::from_row_slice(2, 2, &cov)).unwrap()
    }

    /// Numeric value of `attr="..."` in the first element carrying `marker`.
    fn attr(svg: &str, marker: &str, attr: &str) -> f64 {
        let line = svg.lines().find(|l| l.contains(marker)).unwrap();
        let start = line.find(&format!(" {attr}=\"")).unwrap() + attr.len() + 3;
        let end = start + line[start..].find('"').unwrap();
        line[start..end].parse().unwrap()
    }

    #[test]
    fn identity_gives_circles() {
        let g = gaussian([1.0, 0.0, 0.0, 1.0]);
        let e1 = Ellipse::from_gaussian(&g, 1.0).unwrap();
        let e2 = Ellipse::from_gaussian(&g, 2.0).unwrap();
        assert!((e1.semi_major - 1.0).abs() < 1e-12 && (e1.semi_minor - 1.0).abs() < 1e-12);
        assert!((e2.semi_major - 2.0).abs() < 1e-12 && (e2.semi_minor - 2.0).abs() < 1e-12);
        let svg = ellipse_svg(&DMatrix::zeros(2, 0), &[("fg".into(), g)]).unwrap();
        let one = r#"data-sigma="1""#;
        let two = r#"data-sigma="2""#;
        assert_eq!(attr(&svg, one, "rx"), attr(&svg, one, "ry"));
        assert_eq!(attr(&svg, two, "rx"), attr(&svg, two, "ry"));
        assert!((attr(&svg, two, "rx") / attr(&svg, one, "rx") - 2.0).abs() < 1e-6);
    }

    #[test]
    fn diagonal_gives_axis_aligned_ellipse() {
        let e = Ellipse::from_gaussian(&gaussian([4.0, 0.0, 0.0, 1.0]), 1.0).unwrap();
        assert!((e.semi_major - 2.0).abs() < 1e-12 && (e.semi_minor - 1.0).abs() < 1e-12);
        assert!(e.angle_deg.abs() < 1e-9);
    }

    #[test]
    fn rotated_covariance_major_axis_at_45_degrees() {
        let (c, s) = (std::f64::consts::FRAC_PI_4.cos(), std::f64::consts::FRAC_PI_4.sin());
        let r = Matrix2::new(c, -s, s, c);
        let m = r * Matrix2::new(4.0, 0.0, 0.0, 1.0) * r.transpose();
        let e = Ellipse::from_gaussian(&gaussian([m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]), 1.0).unwrap();
        assert!((e.angle_deg - 45.0).abs() < 0.5, "{}", e.angle_deg);
        // The SVG y axis points down, so the rotation is mirrored.
        let svg = ellipse_svg(&DMatrix::zeros(2, 0), &[("ekf".into(), gaussian([m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]))]).unwrap();
        assert!(svg.contains("rotate(-45.0000"));
    }

    #[test]
    fn ellipse_rejects_other_dimensions() {
        let g = Gaussian::isotropic(3, 1.0);
        assert!(Ellipse::from_gaussian(&g, 1.0).is_err());
    }

    #[test]
    fn heatmaps_share_a_scale() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[4.0, -4.0, -4.0, 4.0]);
        let svg = heatmap_svg(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert!(svg.contains(r#"data-vmax="4e0""#));
        assert!(svg.contains("rgb(255,0,0)") && svg.contains("rgb(0,0,255)"));
        assert_eq!(svg.matches("<rect").count(), 8);
    }
}
