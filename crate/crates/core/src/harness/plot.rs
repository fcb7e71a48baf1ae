use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Smoothing lengthscale for learning curves.
pub const SMOOTHING_SIGMA: f64 = 2.0;

/// Normalised Gaussian weights for offsets `-r..=r`, `r = round(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).round() as i64;
    let raw: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// 1-D Gaussian filter with mirrored edges (`d c b a | a b c d`).
pub fn gaussian_filter(xs: &[f64], sigma: f64) -> Vec<f64> {
    if xs.is_empty() || sigma <= 0.0 {
        return xs.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let n = xs.len() as i64;
    let reflect = |mut i: i64| {
        // Repeat until inside; long kernels on short series can bounce more than once.
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    (0..n).map(|i| k.iter().enumerate().map(|(j, w)| w * xs[reflect(i + j as i64 - r)]).sum()).collect()
}

/// Per-index mean and population standard deviation across runs of equal length.
pub fn mean_std(runs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = runs.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no runs to aggregate".into()))?;
    if runs.iter().any(|r| r.len() != len) {
        return Err(Error::InvalidArgument("runs have different lengths".into()));
    }
    let n = runs.len() as f64;
    let mean: Vec<f64> = (0..len).map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let std = (0..len).map(|i| (runs.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt()).collect();
    Ok((mean, std))
}

/// One labelled curve with its band.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Self-contained SVG line plot with mean +- std bands.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, curves: &[Curve]) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 70.0, 150.0, 40.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let len = curves.iter().map(|c| c.mean.len()).max().unwrap_or(0).max(2);
    let lo = curves.iter().flat_map(|c| c.mean.iter().zip(&c.std).map(|(m, s)| m - s)).fold(f64::INFINITY, f64::min);
    let hi = curves.iter().flat_map(|c| c.mean.iter().zip(&c.std).map(|(m, s)| m + s)).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 1.0, lo.max(0.0) + 1.0) };
    let px = |i: usize| ml + pw * i as f64 / (len - 1) as f64;
    let py = |v: f64| mt + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, ml + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.1}</text>"#,
            ml - 6.0,
            py(v) + 4.0,
            v
        );
        let i = (len - 1) * t / 4;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            px(i),
            mt + ph + 16.0,
            i + 1
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let upper: Vec<String> = c.mean.iter().zip(&c.std).enumerate().map(|(i, (m, sd))| format!("{:.2},{:.2}", px(i), py(m + sd))).collect();
        let lower: Vec<String> = c.mean.iter().zip(&c.std).enumerate().rev().map(|(i, (m, sd))| format!("{:.2},{:.2}", px(i), py(m - sd))).collect();
        let _ = writeln!(s, r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let line: Vec<String> = c.mean.iter().enumerate().map(|(i, m)| format!("{:.2},{:.2}", px(i), py(*m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let ly = mt + 16.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, ml + pw + 12.0, ml + pw + 32.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#, ml + pw + 38.0, ly + 4.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
