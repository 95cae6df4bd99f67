// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal self-contained SVG output. No timestamps or random ids, so the
//! same data always renders to the same bytes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

pub(crate) struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    pub(crate) fn new(width: f64, height: f64) -> Self {
        Self { body: String::new(), width, height }
    }

    pub(crate) fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    pub(crate) fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="1.5"/>"#
        );
    }

    pub(crate) fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let mut p = String::new();
        for (x, y) in pts {
            let _ = write!(p, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"/>"#,
            p.trim_end()
        );
    }

    pub(crate) fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{fill}" stroke="{stroke}"/>"#
        );
    }

    pub(crate) fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    pub(crate) fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Dark-to-bright ramp (blue -> teal -> yellow). `t` in [0, 1].
pub(crate) fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let stops = [(0.0, [30.0, 20.0, 90.0]), (0.5, [30.0, 150.0, 140.0]), (1.0, [250.0, 230.0, 40.0])];
    let (lo, hi) = if t <= 0.5 { (stops[0], stops[1]) } else { (stops[1], stops[2]) };
    let u = (t - lo.0) / (hi.0 - lo.0);
    let c: Vec<u8> = (0..3).map(|k| (lo.1[k] + u * (hi.1[k] - lo.1[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Light shade of a base color; `t = 1` is lightest.
pub(crate) fn shade(base: [u8; 3], t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let mix = |c: u8| (c as f64 + 0.8 * t * (255.0 - c as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(base[0]), mix(base[1]), mix(base[2]))
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = extent(xs);
        let (y0, y1) = extent(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }

    fn axes(&self, svg: &mut Svg, title: &str, xlabel: &str, ylabel: &str) {
        svg.line(MARGIN, H - MARGIN, W - MARGIN, H - MARGIN, "black");
        svg.line(MARGIN, MARGIN, MARGIN, H - MARGIN, "black");
        svg.text(W / 2.0, 30.0, 16.0, "middle", title);
        svg.text(W / 2.0, H - 15.0, 12.0, "middle", xlabel);
        svg.text(15.0, H / 2.0, 12.0, "start", ylabel);
        svg.text(MARGIN, H - MARGIN + 15.0, 10.0, "middle", &fmt_tick(self.x0));
        svg.text(W - MARGIN, H - MARGIN + 15.0, 10.0, "middle", &fmt_tick(self.x1));
        svg.text(MARGIN - 5.0, H - MARGIN, 10.0, "end", &fmt_tick(self.y0));
        svg.text(MARGIN - 5.0, MARGIN + 4.0, 10.0, "end", &fmt_tick(self.y1));
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Square heatmap. Matrices wider than 200 cells are block-averaged.
pub(crate) fn heatmap(values: &[f64], n: usize, title: &str, axis: &str) -> String {
    let cells = n.clamp(1, 200);
    let block = n.div_ceil(cells);
    let cells = n.div_ceil(block);
    let mut agg = vec![0.0; cells * cells];
    let mut cnt = vec![0usize; cells * cells];
    for i in 0..n {
        for j in 0..n {
            let k = (i / block) * cells + j / block;
            agg[k] += values[i * n + j];
            cnt[k] += 1;
        }
    }
    agg.iter_mut().zip(&cnt).for_each(|(a, &c)| *a /= c.max(1) as f64);
    let (lo, hi) = agg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let size = H - 2.0 * MARGIN;
    let cell = size / cells as f64;
    let mut svg = Svg::new(W, H);
    for a in 0..cells {
        for b in 0..cells {
            let t = (agg[a * cells + b] - lo) / span;
            svg.rect(MARGIN + b as f64 * cell, MARGIN + a as f64 * cell, cell + 0.05, cell + 0.05, &ramp(t));
        }
    }
    svg.text(W / 2.0 - 60.0, 30.0, 16.0, "middle", title);
    svg.text(MARGIN + size / 2.0, H - 15.0, 12.0, "middle", axis);
    let lx = MARGIN + size + 30.0;
    for k in 0..20 {
        let t = 1.0 - k as f64 / 19.0;
        svg.rect(lx, MARGIN + k as f64 * size / 20.0, 20.0, size / 20.0 + 0.05, &ramp(t));
    }
    svg.text(lx + 25.0, MARGIN + 10.0, 10.0, "start", &format!("{hi:.3}"));
    svg.text(lx + 25.0, MARGIN + size, 10.0, "start", &format!("{lo:.3}"));
    svg.finish()
}

/// Line plot with the minimum marked.
pub(crate) fn line_with_min(
    pts: &[(f64, f64)],
    min_at: Option<(f64, f64)>,
    title: &str,
    xlabel: &str,
    ylabel: &str,
) -> String {
    let frame = Frame::new(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
    let mut svg = Svg::new(W, H);
    frame.axes(&mut svg, title, xlabel, ylabel);
    let mapped: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (frame.px(x), frame.py(y))).collect();
    svg.polyline(&mapped, "#2a9d4a");
    if let Some((x, y)) = min_at {
        svg.circle(frame.px(x), frame.py(y), 5.0, "red", "black");
        svg.text(frame.px(x), frame.py(y) + 20.0, 11.0, "middle", &format!("min at {x:.0} ({y:.4})"));
    }
    svg.finish()
}

pub(crate) struct ScatterPoint<'a> {
    pub x: f64,
    pub y: f64,
    pub label: &'a str,
    /// Fill color.
    pub fill: String,
}

pub(crate) struct Hull<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub members: Vec<(f64, f64)>,
}

/// Scatter with per-point labels and one enclosing circle per group.
pub(crate) fn scatter(points: &[ScatterPoint<'_>], hulls: &[Hull<'_>], title: &str) -> String {
    let frame = Frame::new(points.iter().map(|p| p.x), points.iter().map(|p| p.y));
    let mut svg = Svg::new(W, H);
    frame.axes(&mut svg, title, "t-SNE 1", "t-SNE 2");
    for (k, h) in hulls.iter().enumerate() {
        if h.members.is_empty() {
            continue;
        }
        let m = h.members.len() as f64;
        let cx = h.members.iter().map(|p| frame.px(p.0)).sum::<f64>() / m;
        let cy = h.members.iter().map(|p| frame.py(p.1)).sum::<f64>() / m;
        let r = h
            .members
            .iter()
            .map(|p| ((frame.px(p.0) - cx).powi(2) + (frame.py(p.1) - cy).powi(2)).sqrt())
            .fold(0.0, f64::max)
            + 12.0;
        let _ = writeln!(
            svg.body,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="none" stroke="{}" stroke-width="3"/>"#,
            h.color
        );
        svg.text(W - MARGIN, MARGIN + 15.0 * k as f64, 12.0, "end", h.name);
    }
    for p in points {
        let (x, y) = (frame.px(p.x), frame.py(p.y));
        svg.circle(x, y, 6.0, &p.fill, "#333333");
        svg.text(x + 7.0, y - 7.0, 8.0, "start", p.label);
    }
    svg.finish()
}

pub(crate) struct Bar<'a> {
    pub group: &'a str,
    pub series: usize,
    pub value: f64,
    pub err: f64,
}

/// Grouped bars with symmetric error bars.
pub(crate) fn grouped_bars(bars: &[Bar<'_>], series_names: &[&str], title: &str, ylabel: &str) -> String {
    let mut groups: Vec<&str> = Vec::new();
    for b in bars {
        if !groups.contains(&b.group) {
            groups.push(b.group);
        }
    }
    let ys = bars
        .iter()
        .flat_map(|b| [b.value - b.err, b.value + b.err])
        .chain(std::iter::once(0.0));
    let frame = Frame { x0: 0.0, x1: groups.len().max(1) as f64, y0: 0.0, y1: 1.0 };
    let (y0, y1) = extent(ys);
    let frame = Frame { y0, y1, ..frame };
    let mut svg = Svg::new(W, H);
    frame.axes(&mut svg, title, "", ylabel);
    svg.line(MARGIN, frame.py(0.0), W - MARGIN, frame.py(0.0), "#888888");
    let palette = ["#3a7d44", "#7b4fa0", "#c06030", "#3060c0"];
    let ns = series_names.len().max(1) as f64;
    let slot = (W - 2.0 * MARGIN) / groups.len().max(1) as f64;
    let bw = 0.8 * slot / ns;
    for b in bars {
        let g = groups.iter().position(|g| *g == b.group).unwrap_or(0) as f64;
        let x = MARGIN + g * slot + 0.1 * slot + b.series as f64 * bw;
        let (top, bottom) = (frame.py(b.value.max(0.0)), frame.py(b.value.min(0.0)));
        svg.rect(x, top, bw * 0.9, (bottom - top).max(0.5), palette[b.series % palette.len()]);
        let cx = x + bw * 0.45;
        svg.line(cx, frame.py(b.value - b.err), cx, frame.py(b.value + b.err), "black");
    }
    for (k, g) in groups.iter().enumerate() {
        svg.text(MARGIN + (k as f64 + 0.5) * slot, H - MARGIN + 30.0, 10.0, "middle", g);
    }
    for (k, s) in series_names.iter().enumerate() {
        let y = MARGIN + 15.0 * k as f64;
        svg.rect(W - MARGIN - 120.0, y - 9.0, 10.0, 10.0, palette[k % palette.len()]);
        svg.text(W - MARGIN - 105.0, y, 11.0, "start", s);
    }
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#1e145a");
        assert_eq!(ramp(1.0), "#fae628");
    }

    #[test]
    fn heatmap_is_deterministic() {
        let v = vec![1.0, 0.2, 0.2, 1.0];
        assert_eq!(heatmap(&v, 2, "t", "a"), heatmap(&v, 2, "t", "a"));
        assert!(heatmap(&v, 2, "t", "a").starts_with("<svg"));
    }

    #[test]
    fn escapes_text() {
        let mut s = Svg::new(10.0, 10.0);
        s.text(0.0, 0.0, 1.0, "start", "a<b & c");
        assert!(s.finish().contains("a&lt;b &amp; c"));
    }
}
