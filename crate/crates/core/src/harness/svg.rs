//! Minimal self-contained SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    /// Fraction along the axis.
    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, f: f64) -> String {
        let v = self.lo + f * (self.hi - self.lo);
        let v = if self.log { 10f64.powf(v) } else { v };
        format!("{v:.3}")
    }
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, x: &Axis, y: &Axis, ticks_x: bool) {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = write!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let py = TOP + ph * (1.0 - f);
        let _ = write!(
            out,
            r#"<text x="{}" y="{py}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LEFT - 5.0,
            y.label(f)
        );
        if ticks_x {
            let px = LEFT + pw * f;
            let _ = write!(
                out,
                r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#,
                TOP + ph + 15.0,
                x.label(f)
            );
        }
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = write!(
        out,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, i: usize, name: &str) {
    let y = TOP + 10.0 + 16.0 * i as f64;
    let x = W - RIGHT + 10.0;
    let c = COLORS[i % COLORS.len()];
    let _ = write!(
        out,
        r#"<rect x="{x}" y="{}" width="10" height="10" fill="{c}"/><text x="{}" y="{}">{}</text>"#,
        y - 8.0,
        x + 14.0,
        y,
        escape(name)
    );
}

/// Polyline chart with markers, one series per name.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)], log: bool) -> String {
    let x = Axis::new(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)), log);
    let y = Axis::new(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)), log);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label, &x, &y, true);
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let coords: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite() && (!log || (p.0 > 0.0 && p.1 > 0.0)))
            .map(|&(a, b)| (LEFT + pw * x.frac(a), TOP + ph * (1.0 - y.frac(b))))
            .collect();
        if coords.len() > 1 {
            let path: Vec<String> = coords.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = write!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for (a, b) in coords {
            let _ = write!(out, r#"<circle cx="{a:.2}" cy="{b:.2}" r="3" fill="{c}"/>"#);
        }
        legend(&mut out, i, name);
    }
    out.push_str("</svg>\n");
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Box plot (quartiles, whiskers at min/max) per group; each group holds
/// one box per series.
pub fn box_chart(title: &str, y_label: &str, series: &[String], groups: &[(String, Vec<Vec<f64>>)]) -> String {
    let y = Axis::new(groups.iter().flat_map(|g| g.1.iter().flatten().copied()), false);
    let x = Axis::new([0.0, 1.0].into_iter(), false);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let mut out = String::new();
    frame(&mut out, title, "", y_label, &x, &y, false);
    let slot = pw / groups.len().max(1) as f64;
    let width = 0.8 * slot / series.len().max(1) as f64;
    let py = |v: f64| TOP + ph * (1.0 - y.frac(v));
    for (gi, (name, boxes)) in groups.iter().enumerate() {
        let x0 = LEFT + slot * gi as f64 + 0.1 * slot;
        for (si, values) in boxes.iter().enumerate() {
            let mut v: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            let (q1, q2, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
            let bx = x0 + width * si as f64;
            let mid = bx + width / 2.0;
            let c = COLORS[si % COLORS.len()];
            let _ = write!(
                out,
                r#"<line x1="{mid:.2}" x2="{mid:.2}" y1="{:.2}" y2="{:.2}" stroke="{c}"/>"#,
                py(v[0]),
                py(v[v.len() - 1])
            );
            let _ = write!(
                out,
                r#"<rect x="{bx:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="{c}"/>"#,
                py(q3),
                width * 0.9,
                (py(q1) - py(q3)).max(0.5)
            );
            let _ = write!(
                out,
                r#"<line x1="{bx:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="{c}" stroke-width="2"/>"#,
                bx + width * 0.9,
                py(q2),
                py(q2)
            );
        }
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="end" transform="rotate(-30 {:.2} {})">{}</text>"#,
            x0 + 0.4 * slot,
            TOP + ph + 14.0,
            x0 + 0.4 * slot,
            TOP + ph + 14.0,
            escape(name)
        );
    }
    for (i, s) in series.iter().enumerate() {
        legend(&mut out, i, s);
    }
    out.push_str("</svg>\n");
    out
}
