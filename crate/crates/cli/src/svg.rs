//! Minimal SVG emission: scatter plots and polyline charts with axes and
//! labels. No interactivity; the CSV next to each image is the contract,
//! the image is convenience.

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Optional half-width of an error band per point.
    pub band: Option<Vec<f64>>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw markers only (scatter) instead of connected lines.
    pub scatter: bool,
}

const W: f64 = 760.0;
const H: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

impl Chart {
    pub fn render(&self) -> String {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for (i, (x, y)) in s.points.iter().enumerate() {
                xs.push(*x);
                let b = s.band.as_ref().map(|b| b[i]).unwrap_or(0.0);
                ys.push(y - b);
                ys.push(y + b);
            }
        }
        let (x0, x1) = pad_range(min_max(&xs));
        let (y0, y1) = pad_range(min_max(&ys));
        let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (W - MARGIN_L - MARGIN_R);
        let py = |y: f64| H - MARGIN_B - (y - y0) / (y1 - y0) * (H - MARGIN_T - MARGIN_B);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            W / 2.0,
            escape(&self.title)
        ));
        // Axes.
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            MARGIN_L,
            H - MARGIN_B,
            W - MARGIN_R,
            H - MARGIN_B
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            MARGIN_L,
            MARGIN_T,
            MARGIN_L,
            H - MARGIN_B
        ));
        for i in 0..=4 {
            let xv = x0 + (x1 - x0) * i as f64 / 4.0;
            let yv = y0 + (y1 - y0) * i as f64 / 4.0;
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>\n",
                px(xv),
                H - MARGIN_B + 18.0,
                xv
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
                MARGIN_L - 6.0,
                py(yv) + 4.0,
                yv
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            (MARGIN_L + W - MARGIN_R) / 2.0,
            H - 16.0,
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
            (MARGIN_T + H - MARGIN_B) / 2.0,
            (MARGIN_T + H - MARGIN_B) / 2.0,
            escape(&self.y_label)
        ));

        for (si, s) in self.series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            if let Some(band) = &s.band {
                let mut upper: Vec<String> = Vec::new();
                let mut lower: Vec<String> = Vec::new();
                for (i, (x, y)) in s.points.iter().enumerate() {
                    upper.push(format!("{:.2},{:.2}", px(*x), py(y + band[i])));
                    lower.push(format!("{:.2},{:.2}", px(*x), py(y - band[i])));
                }
                lower.reverse();
                out.push_str(&format!(
                    "<polygon points=\"{} {}\" fill=\"{}\" opacity=\"0.15\"/>\n",
                    upper.join(" "),
                    lower.join(" "),
                    color
                ));
            }
            if !self.scatter && s.points.len() > 1 {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                    .collect();
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
                    pts.join(" "),
                    color
                ));
            }
            for (x, y) in &s.points {
                out.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.2\" fill=\"{}\"/>\n",
                    px(*x),
                    py(*y),
                    color
                ));
            }
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{}\">{}</text>\n",
                W - MARGIN_R + 12.0,
                MARGIN_T + 16.0 * si as f64 + 8.0,
                color,
                escape(&s.name)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn pad_range((lo, hi): (f64, f64)) -> (f64, f64) {
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.06;
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
