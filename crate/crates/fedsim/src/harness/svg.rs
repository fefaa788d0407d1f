//! Minimal static SVG line charts with mean +/- deviation bands. Output is
//! plain text built with fixed formatting, so identical inputs give
//! identical bytes.

/// One plotted curve: points, and optionally a (x, lo, hi) band behind it.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<(f64, f64, f64)>>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() || s == "-" {
            "0".to_string()
        } else {
            s
        }
    } else {
        format!("{v:.2e}")
    }
}

struct Mapper {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    log_y: bool,
}

impl Mapper {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::MIN_POSITIVE);
        MARGIN_L + (v - self.x_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y_raw(&self, v: f64) -> f64 {
        if self.log_y {
            v.max(f64::MIN_POSITIVE).log10()
        } else {
            v
        }
    }

    fn y(&self, v: f64) -> f64 {
        let (lo, hi) = (self.y_raw(self.y_min), self.y_raw(self.y_max));
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        HEIGHT - MARGIN_B - (self.y_raw(v) - lo) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

/// Renders the series as a static chart. NaN points are skipped. `log_y`
/// plots the vertical axis in log scale (values are clamped to positive).
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_y: bool,
) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xs.push(x);
                ys.push(y);
            }
        }
        if let Some(band) = &s.band {
            for &(x, lo, hi) in band {
                if x.is_finite() && lo.is_finite() && hi.is_finite() {
                    xs.push(x);
                    ys.push(lo);
                    ys.push(hi);
                }
            }
        }
    }
    let (x_min, x_max) = bounds(&xs, 0.0, 1.0);
    let (y_min, y_max) = if log_y {
        let pos: Vec<f64> = ys.iter().copied().filter(|v| *v > 0.0).collect();
        bounds(&pos, 1e-12, 1.0)
    } else {
        bounds(&ys, 0.0, 1.0)
    };
    let m = Mapper {
        x_min,
        x_max,
        y_min,
        y_max,
        log_y,
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));

    // Ticks.
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_min + f * (x_max - x_min);
        let px = m.x(xv);
        svg.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            fmt_tick(xv)
        ));
        let yv = if log_y {
            let (lo, hi) = (y_min.max(f64::MIN_POSITIVE).log10(), y_max.log10());
            10f64.powf(lo + f * (hi - lo))
        } else {
            y_min + f * (y_max - y_min)
        };
        let py = m.y(yv);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{MARGIN_L}\" y2=\"{py:.1}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            py + 4.0,
            fmt_tick(yv)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        escape(y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            let clean: Vec<&(f64, f64, f64)> = band
                .iter()
                .filter(|(x, lo, hi)| x.is_finite() && lo.is_finite() && hi.is_finite())
                .collect();
            if clean.len() >= 2 {
                let mut d = String::new();
                for (j, (x, _, hi)) in clean.iter().enumerate() {
                    d.push_str(if j == 0 { "M" } else { "L" });
                    d.push_str(&format!("{:.2},{:.2} ", m.x(*x), m.y(*hi)));
                }
                for (x, lo, _) in clean.iter().rev() {
                    d.push_str(&format!("L{:.2},{:.2} ", m.x(*x), m.y(*lo)));
                }
                d.push('Z');
                svg.push_str(&format!(
                    "<path d=\"{d}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n"
                ));
            }
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", m.x(*x), m.y(*y)))
            .collect();
        if pts.len() >= 2 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        // Legend entry.
        let ly = MARGIN_T + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_R - 150.0,
            WIDTH - MARGIN_R - 125.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            WIDTH - MARGIN_R - 120.0,
            ly + 4.0,
            escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: &[f64], fallback_lo: f64, fallback_hi: f64) -> (f64, f64) {
    if values.is_empty() {
        return (fallback_lo, fallback_hi);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_well_formed() {
        let series = vec![Series {
            label: "loss".into(),
            points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)],
            band: Some(vec![(0.0, 0.9, 1.1), (1.0, 0.4, 0.6), (2.0, 0.2, 0.3)]),
        }];
        let a = line_chart("t", "round", "loss", &series, false);
        let b = line_chart("t", "round", "loss", &series, false);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("<polyline"));
        assert!(a.contains("fill-opacity"));
        assert!(a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn log_scale_handles_tiny_values() {
        let series = vec![Series {
            label: "g".into(),
            points: vec![(0.0, 1.0), (1.0, 1e-9), (2.0, f64::NAN)],
            band: None,
        }];
        let svg = line_chart("t", "x", "y", &series, true);
        assert!(svg.contains("<polyline"));
    }
}
