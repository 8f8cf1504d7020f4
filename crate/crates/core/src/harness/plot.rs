//! Minimal static SVG line plots. The plotted data is embedded verbatim as
//! CSV inside `<metadata>` so a figure can be checked against its table.

use std::fmt::Write as _;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
    /// Horizontal reference lines.
    pub levels: Vec<(String, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn to_svg(&self, data_csv: &str) -> String {
        let tx = |x: f64| if self.log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
        let xs: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0))).collect();
        let ys: Vec<f64> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.levels.iter().map(|l| l.1))
            .collect();
        let span = |v: &[f64]| -> (f64, f64) {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&xs);
        let (y0, y1) = span(&ys);
        let pad = (y1 - y0) * 0.05;
        let (y0, y1) = (y0 - pad, y1 + pad);
        let px = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * (W - LEFT - RIGHT);
        let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, "<metadata>\n{}</metadata>", escape(data_csv));
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&self.title));
        let (bx, by) = (LEFT, H - BOTTOM);
        let _ = writeln!(s, r#"<path d="M{bx} {TOP} V{by} H{}" stroke="black" fill="none"/>"#, W - RIGHT);
        for i in 0..=4 {
            let y = y0 + (y1 - y0) * f64::from(i) / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.3}</text>"#, LEFT - 6.0, py(y) + 4.0);
        }
        let mut ticks: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        ticks.sort_by(f64::total_cmp);
        ticks.dedup();
        for x in ticks.iter().step_by(ticks.len().div_ceil(10).max(1)) {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(*x), by + 16.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (TOP + by) / 2.0,
            (TOP + by) / 2.0,
            escape(&self.y_label)
        );
        for (i, ser) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, pts.join(" "));
            let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, LEFT + 10.0, TOP + 14.0 * (i as f64 + 1.0), escape(&ser.name));
        }
        for (j, (name, level)) in self.levels.iter().enumerate() {
            let color = COLORS[(self.series.len() + j) % COLORS.len()];
            let y = py(*level);
            let _ = writeln!(s, r#"<path d="M{LEFT} {y:.1} H{}" stroke="{color}" stroke-dasharray="6 4"/>"#, W - RIGHT);
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" fill="{color}">{}</text>"#, W - RIGHT - 4.0, y - 4.0, escape(name));
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_carries_the_data_and_is_deterministic() {
        let p = Plot {
            title: "curve".into(),
            x_label: "k".into(),
            y_label: "score".into(),
            log_x: true,
            series: vec![Series {
                name: "a<b".into(),
                points: vec![(1.0, 1.0), (10.0, 2.0), (100.0, 2.5)],
            }],
            levels: vec![("level".into(), 2.2)],
        };
        let a = p.to_svg("k,v\n1,1\n");
        assert_eq!(a, p.to_svg("k,v\n1,1\n"));
        assert!(a.starts_with("<svg"));
        assert!(a.contains("k,v\n1,1\n"));
        assert!(a.contains("a&lt;b"));
        assert_eq!(a.matches("<polyline").count(), 1);
    }
}
