//! Static SVG overlay of measured and predicted g².

use std::fmt::Write as _;

use crate::correlation::{CorrelationCurve, CurveKind};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 55.0;
const COLORS: [&str; 6] = ["#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e", "#8c564b"];

/// Tick spacing of 1, 2 or 5 times a power of ten, giving about six ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

/// Data points with error bars plus theory lines, for `|τ| ≤ window`.
pub fn g2_plot(data: &CorrelationCurve, theory: &[CorrelationCurve], window: f64) -> String {
    let keep: Vec<usize> = (0..data.tau.len()).filter(|&i| data.tau[i].abs() <= window * (1.0 + 1e-9)).collect();
    let x_lo = -window * 1e9;
    let x_hi = window * 1e9;
    let mut y_lo: f64 = 0.0;
    let mut y_hi: f64 = 1.0;
    let se = |i: usize| data.stderr.as_ref().map_or(0.0, |s| s[i]);
    for &i in &keep {
        y_lo = y_lo.min(data.values[i] - se(i));
        y_hi = y_hi.max(data.values[i] + se(i));
    }
    for c in theory {
        for &i in &keep {
            y_hi = y_hi.max(c.values[i]);
        }
    }
    let step = tick_step(y_hi - y_lo);
    y_lo = (y_lo / step).floor() * step;
    y_hi = (y_hi / step).ceil() * step;

    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| MARGIN_T + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    let xstep = tick_step(x_hi - x_lo);
    let mut x = (x_lo / xstep).ceil() * xstep;
    while x <= x_hi + 1e-9 {
        let cx = px(x);
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/><text x="{cx:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            MARGIN_T + ph,
            MARGIN_T + ph + 5.0,
            MARGIN_T + ph + 18.0
        );
        x += xstep;
    }
    let mut y = y_lo;
    while y <= y_hi + 1e-9 * step {
        let cy = py(y);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{cy:.1}" x2="{MARGIN_L}" y2="{cy:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_L - 5.0,
            MARGIN_L - 8.0,
            cy + 4.0,
            (y / step).round() * step
        );
        y += step;
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_L}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        py(1.0),
        MARGIN_L + pw
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">delay from trigger (ns)</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">g2</text>"#,
        MARGIN_T + ph / 2.0
    );

    for (k, c) in theory.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = keep
            .iter()
            .map(|&i| format!("{:.1},{:.1}", px(c.tau[i] * 1e9), py(c.values[i])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let label = match c.kind {
            CurveKind::G2Theory { xi } => format!("theory, xi = {xi:.3}"),
            other => other.to_string(),
        };
        let ly = MARGIN_T + 18.0 + 16.0 * k as f64;
        let lx = MARGIN_L + pw - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="1.5"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0
        );
    }

    for &i in &keep {
        let (cx, cy) = (px(data.tau[i] * 1e9), py(data.values[i]));
        let e = se(i);
        if e > 0.0 {
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="gray" stroke-width="0.6"/>"#,
                py(data.values[i] + e),
                py(data.values[i] - e)
            );
        }
        let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="1.6" fill="black"/>"#);
    }
    let ly = MARGIN_T + 18.0 + 16.0 * theory.len() as f64;
    let lx = MARGIN_L + pw - 150.0;
    let _ = writeln!(
        s,
        r#"<circle cx="{:.1}" cy="{ly:.1}" r="2.5" fill="black"/><text x="{:.1}" y="{:.1}">data</text>"#,
        lx + 10.0,
        lx + 25.0,
        ly + 4.0
    );
    s.push_str("</svg>\n");
    s
}
