//! Minimal SVG line charts of closed-loop runs: state and control against
//! step, one polyline per run.

use std::fmt::Write;

use probdhp::{Method, Trajectory};

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN: f64 = 48.0;

fn color(method: Method) -> &'static str {
    match method {
        Method::Probabilistic => "#1f77b4",
        Method::Dhp => "#d62728",
    }
}

struct Panel<'a> {
    title: &'a str,
    top: f64,
    series: Vec<(Method, Vec<f64>)>,
}

impl Panel<'_> {
    fn render(&self, out: &mut String, steps: usize) {
        let (mut lo, mut hi) = self
            .series
            .iter()
            .flat_map(|(_, ys)| ys.iter().copied())
            .fold((0.0f64, 0.0f64), |(lo, hi), y| (lo.min(y), hi.max(y)));
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let left = MARGIN;
        let right = WIDTH - MARGIN / 2.0;
        let top = self.top + MARGIN / 2.0;
        let bottom = self.top + PANEL_HEIGHT - MARGIN / 2.0;
        let sx = |t: f64| left + (right - left) * t / steps.max(1) as f64;
        let sy = |y: f64| bottom - (bottom - top) * (y - lo) / (hi - lo);

        let _ = writeln!(
            out,
            r##"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
            right - left,
            bottom - top
        );
        let zero = sy(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{zero:.2}" x2="{right}" y2="{zero:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{left}" y="{:.2}" font-size="13">{}</text>"#,
            top - 6.0,
            self.title
        );
        let _ = writeln!(out, r#"<text x="4" y="{:.2}" font-size="11">{hi:.2}</text>"#, top + 10.0);
        let _ = writeln!(out, r#"<text x="4" y="{bottom:.2}" font-size="11">{lo:.2}</text>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{steps}</text>"#,
            right - 14.0,
            bottom + 14.0
        );
        for (method, ys) in &self.series {
            let points: Vec<String> = ys
                .iter()
                .enumerate()
                .map(|(t, &y)| format!("{:.2},{:.2}", sx(t as f64), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-opacity="0.6" stroke-width="1.2" points="{}"/>"#,
                color(*method),
                points.join(" ")
            );
        }
    }
}

/// First state and control component of every run.
pub fn render(runs: &[(Method, &Trajectory)]) -> String {
    let steps = runs.iter().map(|(_, t)| t.steps()).max().unwrap_or(0);
    let states = Panel {
        title: "state x",
        top: 0.0,
        series: runs
            .iter()
            .map(|(m, t)| (*m, t.states.iter().map(|x| x[0]).collect()))
            .collect(),
    };
    let controls = Panel {
        title: "control u",
        top: PANEL_HEIGHT,
        series: runs
            .iter()
            .map(|(m, t)| (*m, t.controls.iter().map(|u| u[0]).collect()))
            .collect(),
    };

    let height = 2.0 * PANEL_HEIGHT + 24.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif">"#
    );
    states.render(&mut out, steps);
    controls.render(&mut out, steps);
    let mut legend_x = MARGIN;
    for method in [Method::Probabilistic, Method::Dhp] {
        if runs.iter().any(|(m, _)| *m == method) {
            let _ = writeln!(
                out,
                r#"<text x="{legend_x}" y="{:.2}" font-size="12" fill="{}">{method}</text>"#,
                height - 6.0,
                color(method)
            );
            legend_x += 60.0;
        }
    }
    out.push_str("</svg>\n");
    out
}
