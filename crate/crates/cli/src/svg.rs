//! Minimal SVG line and scatter plots.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 36.0;
const PAD_B: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Line,
    Dots,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub mark: Mark,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            mark: Mark::Line,
        }
    }

    pub fn dots(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            mark: Mark::Dots,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Horizontal reference lines `(label, y)`.
    pub rules: Vec<(String, f64)>,
}

fn tr(v: f64, log: bool) -> Option<f64> {
    let v = if log { v.log10() } else { v };
    v.is_finite().then_some(v)
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64, log: bool) -> String {
    let v = if log { 10f64.powf(v) } else { v };
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn render(&self) -> String {
        let pts = || {
            self.series
                .iter()
                .flat_map(|s| s.points.iter())
                .filter_map(|&(x, y)| Some((tr(x, self.log_x)?, tr(y, self.log_y)?)))
        };
        let (x0, x1) = range(pts().map(|p| p.0));
        let (y0, y1) = range(pts().map(|p| p.1).chain(self.rules.iter().filter_map(|r| tr(r.1, self.log_y))));
        let sx = |x: f64| PAD_L + (x - x0) / (x1 - x0) * (W - PAD_L - PAD_R);
        let sy = |y: f64| H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            W / 2.0,
            esc(&self.title)
        );
        let (bx, by) = (H - PAD_B, PAD_L);
        let _ = writeln!(
            s,
            r#"<path d="M{by},{PAD_T} V{bx} H{}" fill="none" stroke="black"/>"#,
            W - PAD_R
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(xv),
                bx + 16.0,
                tick(xv, self.log_x)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                by - 6.0,
                sy(yv) + 4.0,
                tick(yv, self.log_y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 10.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        for (label, y) in &self.rules {
            if let Some(y) = tr(*y, self.log_y) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{PAD_L}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="5,4"/>"#,
                    W - PAD_R,
                    sy(y),
                    sy(y)
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{:.2}" text-anchor="end" fill="gray">{}</text>"#,
                    W - PAD_R - 4.0,
                    sy(y) - 4.0,
                    esc(label)
                );
            }
        }
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let p: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter_map(|&(x, y)| Some((sx(tr(x, self.log_x)?), sy(tr(y, self.log_y)?))))
                .collect();
            match series.mark {
                Mark::Line if !p.is_empty() => {
                    let mut d = String::new();
                    for (x, y) in &p {
                        let _ = write!(d, "{x:.2},{y:.2} ");
                    }
                    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
                }
                Mark::Line => {}
                Mark::Dots => {
                    for (x, y) in &p {
                        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.8" fill="{color}" fill-opacity="0.6"/>"#);
                    }
                }
            }
            let ly = PAD_T + 6.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{}" y="{:.1}">{}</text>"#,
                PAD_L + 10.0,
                ly,
                PAD_L + 24.0,
                ly + 9.0,
                esc(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_rules() {
        let p = Plot {
            title: "a < b".into(),
            series: vec![Series::line("l", vec![(1.0, 1.0), (2.0, 4.0)]), Series::dots("d", vec![(1.5, 2.0)])],
            rules: vec![("bound".into(), 3.0)],
            ..Default::default()
        };
        let s = p.render();
        assert!(s.starts_with("<svg"));
        assert!(s.contains("<polyline"));
        assert!(s.contains("<circle"));
        assert!(s.contains("stroke-dasharray"));
        assert!(s.contains("a &lt; b"));
    }

    #[test]
    fn log_axes_drop_nonpositive_points() {
        let p = Plot {
            log_y: true,
            series: vec![Series::dots("d", vec![(1.0, 0.0), (2.0, 10.0)])],
            ..Default::default()
        };
        assert_eq!(p.render().matches("<circle").count(), 1);
    }
}
