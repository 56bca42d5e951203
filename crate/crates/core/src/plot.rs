//! Self-contained SVG rendering of metric curves. No plotting dependency;
//! the CSV files are the canonical artifact and these plots are a quick look.

/// One named curve of (x, y) points.
pub struct Curve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn panel(curves: &[Curve], title: &str, x0: f64, y0: f64, w: f64, h: f64, out: &mut String) {
    let margin = 45.0;
    let px0 = x0 + margin;
    let py0 = y0 + 20.0;
    let pw = w - margin - 15.0;
    let ph = h - 55.0;
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for &(x, y) in &c.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() || xmax <= xmin {
        xmin = 0.0;
        xmax = 1.0;
    }
    if !ymin.is_finite() || ymax <= ymin {
        ymin = 0.0;
        ymax = ymin + 1.0;
    }
    let pad = 0.05 * (ymax - ymin);
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let sx = move |x: f64| px0 + (x - xmin) / (xmax - xmin) * pw;
    let sy = move |y: f64| py0 + ph - (y - ymin) / (ymax - ymin) * ph;
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" font-family=\"sans-serif\">{}</text>\n",
        x0 + margin,
        y0 + 14.0,
        title
    ));
    out.push_str(&format!(
        "<rect x=\"{px0}\" y=\"{py0}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#999\"/>\n"
    ));
    for (label, v) in [(ymin, ymin), (ymax, ymax)] {
        let _ = label;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"end\">{v:.3}</text>\n",
            px0 - 4.0,
            sy(v) + 3.0
        ));
    }
    for (label, v) in [(xmin, xmin), (xmax, xmax)] {
        let _ = label;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"middle\">{v:.0}</text>\n",
            sx(v),
            py0 + ph + 12.0
        ));
    }
    for (ci, c) in curves.iter().enumerate() {
        if c.points.is_empty() {
            continue;
        }
        let color = PALETTE[ci % PALETTE.len()];
        let mut d = String::new();
        for (pi, &(x, y)) in c.points.iter().enumerate() {
            d.push_str(if pi == 0 { "M" } else { "L" });
            d.push_str(&format!("{:.2},{:.2} ", sx(x), sy(y)));
        }
        out.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n",
            d.trim_end()
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" font-family=\"sans-serif\" fill=\"{color}\">{}</text>\n",
            px0 + pw - 150.0,
            py0 + 14.0 + 12.0 * ci as f64,
            c.name
        ));
    }
}

/// Two stacked panels: reward curves on top, violation curves below.
pub fn render_svg(reward_curves: &[Curve], violation_curves: &[Curve]) -> String {
    let (w, h) = (860.0, 620.0);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    panel(reward_curves, "cumulative mean reward", 0.0, 0.0, w, h / 2.0, &mut out);
    panel(
        violation_curves,
        "cumulative mean violation rate",
        0.0,
        h / 2.0,
        w,
        h / 2.0,
        &mut out,
    );
    out.push_str("</svg>\n");
    out
}
