//! Minimal deterministic SVG output: line plots with bands, point maps and
//! grid maps.

use std::fmt::Write as _;

use crate::geom::{GridSpec, PointPattern};

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 36.0;
const MB: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub color: &'static str,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct Band {
    pub x: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub color: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

impl LinePlot {
    pub fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        LinePlot {
            title: title.into(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            ..Default::default()
        }
    }

    pub fn line(mut self, name: &str, x: &[f64], y: &[f64], color: &'static str, dashed: bool) -> Self {
        self.series.push(Series {
            name: name.into(),
            x: x.to_vec(),
            y: y.to_vec(),
            color,
            dashed,
        });
        self
    }

    pub fn band(mut self, x: &[f64], lo: &[f64], hi: &[f64], color: &'static str) -> Self {
        self.bands.push(Band {
            x: x.to_vec(),
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            color,
        });
        self
    }

    /// Renders the plot body at `(ox, oy)`; used directly and by panels.
    fn body(&self, out: &mut String, ox: f64, oy: f64) {
        let xs = self.series.iter().flat_map(|s| s.x.iter().copied()).chain(self.bands.iter().flat_map(|b| b.x.iter().copied()));
        let (x0, x1) = range(xs);
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.y.iter().copied())
            .chain(self.bands.iter().flat_map(|b| b.lo.iter().chain(&b.hi).copied()));
        let (y0, y1) = range(ys);
        let pw = W - ML - MR;
        let ph = H - MT - MB;
        let sx = |x: f64| ox + ML + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| oy + MT + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="white" stroke="black"/>"#,
            fmt(ox + ML),
            fmt(oy + MT),
            fmt(pw),
            fmt(ph)
        );
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let xv = x0 + t * (x1 - x0);
            let yv = y0 + t * (y1 - y0);
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
                fmt(sx(xv)),
                fmt(oy + H - MB + 16.0),
                tick_label(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
                fmt(ox + ML - 6.0),
                fmt(sy(yv) + 4.0),
                tick_label(yv)
            );
        }
        for b in &self.bands {
            let mut pts: Vec<String> = b.x.iter().zip(&b.hi).map(|(x, y)| format!("{},{}", fmt(sx(*x)), fmt(sy(*y)))).collect();
            pts.extend(b.x.iter().zip(&b.lo).rev().map(|(x, y)| format!("{},{}", fmt(sx(*x)), fmt(sy(*y)))));
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.35" stroke="none"/>"#,
                pts.join(" "),
                b.color
            );
        }
        for s in &self.series {
            let pts: Vec<String> = s
                .x
                .iter()
                .zip(&s.y)
                .filter(|(_, y)| y.is_finite())
                .map(|(x, y)| format!("{},{}", fmt(sx(*x)), fmt(sy(*y))))
                .collect();
            let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.6"{dash}/>"#,
                pts.join(" "),
                s.color
            );
        }
        for (k, s) in self.series.iter().enumerate() {
            let y = oy + MT + 14.0 + 14.0 * k as f64;
            let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}"{dash}/><text x="{}" y="{}" font-size="11">{}</text>"#,
                fmt(ox + ML + 8.0),
                fmt(y - 4.0),
                fmt(ox + ML + 28.0),
                fmt(y - 4.0),
                s.color,
                fmt(ox + ML + 32.0),
                fmt(y),
                escape(&s.name)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
            fmt(ox + W / 2.0),
            fmt(oy + 22.0),
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            fmt(ox + ML + pw / 2.0),
            fmt(oy + H - 12.0),
            escape(&self.xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
            fmt(ox + 16.0),
            fmt(oy + MT + ph / 2.0),
            fmt(ox + 16.0),
            fmt(oy + MT + ph / 2.0),
            escape(&self.ylabel)
        );
    }

    pub fn render(&self) -> String {
        panel(std::slice::from_ref(self), 1)
    }
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(w),
        fmt(h),
        fmt(w),
        fmt(h)
    )
}

/// Several plots laid out on a grid with `cols` columns.
pub fn panel(plots: &[LinePlot], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = plots.len().div_ceil(cols).max(1);
    let mut out = header(W * cols as f64, H * rows as f64);
    for (k, p) in plots.iter().enumerate() {
        p.body(&mut out, W * (k % cols) as f64, H * (k / cols) as f64);
    }
    out.push_str("</svg>\n");
    out
}

/// Square scatter plots of point patterns with their window outlines, laid
/// out `cols` per row.
pub fn point_panel(patterns: &[(&str, &PointPattern)], cols: usize) -> String {
    let side = 320.0;
    let pad = 30.0;
    let cols = cols.max(1);
    let rows = patterns.len().div_ceil(cols).max(1);
    let cell = side + 2.0 * pad;
    let mut out = header(cell * cols as f64, cell * rows as f64);
    for (k, (title, pp)) in patterns.iter().enumerate() {
        let (ox, oy) = (cell * (k % cols) as f64 + pad, cell * (k / cols) as f64 + pad);
        let [x0, y0, x1, y1] = pp.window().bbox();
        let scale = side / (x1 - x0).max(y1 - y0);
        let sx = |x: f64| ox + (x - x0) * scale;
        let sy = |y: f64| oy + side - (y - y0) * scale;
        for ring in pp.window().rings() {
            let pts: Vec<String> = ring.iter().map(|p| format!("{},{}", fmt(sx(p.x)), fmt(sy(p.y)))).collect();
            let _ = writeln!(out, r#"<polygon points="{}" fill="none" stroke="black"/>"#, pts.join(" "));
        }
        for p in pp.points() {
            let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="1.5" fill="black"/>"#, fmt(sx(p.x)), fmt(sy(p.y)));
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
            fmt(ox + side / 2.0),
            fmt(oy - 10.0),
            escape(title)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Per-cell symbol overlay on a grid map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    None,
    Plus,
    Cross,
}

fn color_ramp(t: f64) -> String {
    // blue - white - red
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (40.0 + 215.0 * u, 90.0 + 165.0 * u, 200.0 + 55.0 * u)
    } else {
        let u = (t - 0.5) / 0.5;
        (255.0, 255.0 - 185.0 * u, 255.0 - 205.0 * u)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Diverging map of `values` (log scale when `log` is set, centred at 1),
/// with optional per-cell flags. Cells outside the mask are left blank.
pub fn grid_map(grid: &GridSpec, values: &[f64], flags: Option<&[Flag]>, title: &str, log: bool) -> String {
    let side = 560.0;
    let cw = side / grid.nx.max(grid.ny) as f64;
    let (w, h) = (grid.nx as f64 * cw + 40.0, grid.ny as f64 * cw + 60.0);
    let mut out = header(w, h);
    let tr = |v: f64| if log { v.ln() } else { v };
    let amp = values
        .iter()
        .enumerate()
        .filter(|(i, v)| grid.is_masked(*i) && v.is_finite() && (!log || **v > 0.0))
        .map(|(_, v)| tr(*v).abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    for idx in 0..grid.n_cells() {
        let v = values[idx];
        if !grid.is_masked(idx) || !v.is_finite() || (log && v <= 0.0) {
            continue;
        }
        let (ix, iy) = (idx % grid.nx, idx / grid.nx);
        let x = 20.0 + ix as f64 * cw;
        let y = 40.0 + (grid.ny - 1 - iy) as f64 * cw;
        let t = 0.5 + 0.5 * tr(v) / amp;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
            fmt(x),
            fmt(y),
            fmt(cw),
            fmt(cw),
            color_ramp(t)
        );
        if let Some(f) = flags {
            let sym = match f[idx] {
                Flag::None => continue,
                Flag::Plus => "+",
                Flag::Cross => "×",
            };
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="{}" text-anchor="middle">{sym}</text>"#,
                fmt(x + cw / 2.0),
                fmt(y + cw * 0.8),
                fmt(cw.max(4.0))
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#,
        fmt(w / 2.0),
        escape(title)
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;

    #[test]
    fn plot_is_deterministic_and_wellformed() {
        let x = [0.0, 1.0, 2.0];
        let p = LinePlot::new("K <test>", "r", "K")
            .band(&x, &[0.0, 0.5, 1.0], &[0.2, 1.5, 3.0], "#999999")
            .line("empirical", &x, &[0.1, 1.0, 2.0], "black", false)
            .line("mean", &x, &[0.1, 0.9, 2.1], "red", true);
        let a = p.render();
        assert_eq!(a, p.render());
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("&lt;test&gt;"));
        assert!(a.contains("stroke-dasharray"));
    }

    #[test]
    fn point_panel_draws_every_point() {
        let w = std::sync::Arc::new(crate::geom::Window::unit_square());
        let pp = PointPattern::new(vec![Point::new(0.2, 0.3), Point::new(0.7, 0.1)], w).unwrap();
        let s = point_panel(&[("a", &pp), ("b", &pp)], 2);
        assert_eq!(s.matches("<circle").count(), 4);
        assert_eq!(s.matches("<polygon").count(), 2);
    }

    #[test]
    fn map_marks_flags() {
        let g = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 2, 2).unwrap();
        let s = grid_map(&g, &[1.0, 2.0, 0.5, f64::NAN], Some(&[Flag::None, Flag::Plus, Flag::Cross, Flag::None]), "r", true);
        assert_eq!(s.matches("<rect").count(), 3);
        assert!(s.contains(">+<") && s.contains(">×<"));
    }
}
