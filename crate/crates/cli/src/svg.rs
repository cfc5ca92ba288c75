//! Static SVG charts: mean cost with a confidence band, and parking counts.

use std::fmt::Write as _;

use predictive_rl::agents::AgentKind;
use predictive_rl::experiments::{SummaryRow, SweptVariable};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 120.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn color(agent: AgentKind) -> &'static str {
    match agent {
        AgentKind::Mpc => "#1f77b4",
        AgentKind::Rql => "#d62728",
        AgentKind::Sql => "#2ca02c",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Trims trailing zeros so tick labels stay short.
fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    log_y: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::EPSILON);
        LEFT + (x - self.x_min) / span * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi, v) = if self.log_y {
            (self.y_min.log10(), self.y_max.log10(), y.max(self.y_min).log10())
        } else {
            (self.y_min, self.y_max, y)
        };
        let span = (hi - lo).max(f64::EPSILON);
        HEIGHT - BOTTOM - (v - lo) / span * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_ticks: &[f64], x_label: &str, y_label: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<g stroke="black" fill="none"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    for &t in x_ticks {
        let x = frame.px(t);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            tick_label(t)
        );
    }
    let y_ticks: Vec<f64> = if frame.log_y {
        let (lo, hi) = (frame.y_min.log10().floor() as i32, frame.y_max.log10().ceil() as i32);
        (lo..=hi).map(|e| 10f64.powi(e)).filter(|v| *v >= frame.y_min && *v <= frame.y_max).collect()
    } else {
        (0..=4)
            .map(|i| frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0)
            .collect()
    };
    for t in y_ticks {
        let y = frame.py(t);
        let label = if frame.log_y { format!("{t:e}") } else { tick_label(t) };
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>
<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(x_label),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn no_data(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="gray">no data</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0
    );
}

fn legend(out: &mut String, agents: &[AgentKind]) {
    for (i, a) in agents.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.2}" width="12" height="12" fill="{}"/><text x="{:.2}" y="{:.2}">{a}</text>"#,
            y - 10.0,
            color(*a),
            x + 18.0,
            y
        );
    }
}

fn agents_in(rows: &[SummaryRow]) -> Vec<AgentKind> {
    let mut agents: Vec<AgentKind> = rows.iter().map(|r| r.agent).collect();
    agents.sort();
    agents.dedup();
    agents
}

fn x_values(rows: &[SummaryRow], swept: SweptVariable) -> Vec<f64> {
    let mut xs: Vec<f64> = rows.iter().map(|r| swept_value(r, swept)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

pub fn swept_value(r: &SummaryRow, swept: SweptVariable) -> f64 {
    match swept {
        SweptVariable::Delta => r.delta,
        SweptVariable::StepMultiplier => r.s as f64,
        SweptVariable::Horizon => r.horizon as f64,
    }
}

/// Mean accumulated cost per agent against the swept variable, with the 95%
/// interval as a translucent band. Switches to a log axis when the finite
/// values span more than three decades.
pub fn cost_chart(rows: &[SummaryRow], swept: SweptVariable) -> String {
    let finite: Vec<&SummaryRow> = rows
        .iter()
        .filter(|r| r.mean_cost.is_finite() && r.ci95.is_finite())
        .collect();
    let mut out = String::new();
    header(&mut out, &format!("Accumulated cost vs {}", swept.label()));
    if finite.is_empty() {
        let frame = Frame {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            log_y: false,
        };
        axes(&mut out, &frame, &[], swept.label(), "accumulated cost");
        no_data(&mut out);
        out.push_str("</svg>\n");
        return out;
    }
    let xs = x_values(rows, swept);
    let lo = finite.iter().map(|r| r.mean_cost - r.ci95).fold(f64::INFINITY, f64::min);
    let hi = finite.iter().map(|r| r.mean_cost + r.ci95).fold(f64::NEG_INFINITY, f64::max);
    let pos_min = finite
        .iter()
        .map(|r| r.mean_cost)
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let log_y = pos_min.is_finite() && hi / pos_min > 1e3;
    let (y_min, y_max) = if log_y {
        (10f64.powf(pos_min.log10().floor()), 10f64.powf(hi.log10().ceil()))
    } else {
        let pad = ((hi - lo) * 0.05).max(1e-9);
        (lo - pad, hi + pad)
    };
    let frame = Frame {
        x_min: xs[0],
        x_max: *xs.last().unwrap_or(&xs[0]),
        y_min,
        y_max,
        log_y,
    };
    let y_label = if log_y { "accumulated cost (log)" } else { "accumulated cost" };
    axes(&mut out, &frame, &xs, swept.label(), y_label);
    let agents = agents_in(rows);
    for a in &agents {
        let mut pts: Vec<&&SummaryRow> = finite.iter().filter(|r| r.agent == *a).collect();
        pts.sort_by(|p, q| swept_value(p, swept).total_cmp(&swept_value(q, swept)));
        if pts.is_empty() {
            continue;
        }
        let upper: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", frame.px(swept_value(r, swept)), frame.py(r.mean_cost + r.ci95)))
            .collect();
        let lower: Vec<String> = pts
            .iter()
            .rev()
            .map(|r| format!("{:.2},{:.2}", frame.px(swept_value(r, swept)), frame.py(r.mean_cost - r.ci95)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{} {}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" "),
            color(*a)
        );
        let line: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", frame.px(swept_value(r, swept)), frame.py(r.mean_cost)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            line.join(" "),
            color(*a)
        );
        for p in &line {
            let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{}"/>"#, color(*a));
        }
    }
    legend(&mut out, &agents);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars of parking counts per agent and swept value.
pub fn parking_chart(rows: &[SummaryRow], swept: SweptVariable) -> String {
    let mut out = String::new();
    header(&mut out, &format!("Parked runs vs {}", swept.label()));
    let xs = x_values(rows, swept);
    let agents = agents_in(rows);
    let max_runs = rows.iter().map(|r| r.runs).max().unwrap_or(0).max(1) as f64;
    let frame = Frame {
        x_min: 0.0,
        x_max: xs.len().max(1) as f64,
        y_min: 0.0,
        y_max: max_runs,
        log_y: false,
    };
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<g stroke="black" fill="none"><line x1="{LEFT}" y1="{y0}" x2="{}" y2="{y0}"/><line x1="{LEFT}" y1="{y0}" x2="{LEFT}" y2="{y1}"/></g>"#,
        WIDTH - RIGHT
    );
    for i in 0..=4 {
        let t = max_runs * i as f64 / 4.0;
        let y = frame.py(t);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>
<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">parked runs</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 15.0,
        escape(swept.label()),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    if rows.is_empty() {
        no_data(&mut out);
        out.push_str("</svg>\n");
        return out;
    }
    let slot = frame.px(1.0) - frame.px(0.0);
    let bar = slot * 0.8 / agents.len() as f64;
    for (i, x) in xs.iter().enumerate() {
        let left = frame.px(i as f64) + slot * 0.1;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            frame.px(i as f64 + 0.5),
            y0 + 18.0,
            tick_label(*x)
        );
        for (j, a) in agents.iter().enumerate() {
            if let Some(r) = rows.iter().find(|r| r.agent == *a && swept_value(r, swept) == *x) {
                let top = frame.py(r.park_count as f64);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    left + bar * j as f64,
                    bar,
                    y0 - top,
                    color(*a)
                );
            }
        }
    }
    legend(&mut out, &agents);
    out.push_str("</svg>\n");
    out
}
