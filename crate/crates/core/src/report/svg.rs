// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-written SVG figures.
//!
//! Numbers are printed with a fixed number of decimals so that output is a
//! function of the data alone.

use std::fmt::Write as _;
use std::path::Path;

use super::write_text;
use crate::error::Result;
use crate::localize::{AblationCurve, HeadScoreMatrix, LayerProfile};

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Largest grid whose cells still carry a printed value.
const ANNOTATE_MAX: usize = 16;
const CELL: f64 = 36.0;
const FONT: &str = "font-family=\"sans-serif\"";

/// Series colours, cycled in label order.
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Low and high ends of the sequential heatmap scale.
const LOW: [u8; 3] = [0xf7, 0xfb, 0xff];
const HIGH: [u8; 3] = [0x08, 0x30, 0x6b];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn num(v: f64) -> String {
    if v.is_finite() {
        // Avoid printing "-0.000".
        let s = format!("{v:.3}");
        if s.trim_start_matches('-')
            .chars()
            .all(|c| c == '0' || c == '.')
        {
            "0.000".into()
        } else {
            s
        }
    } else {
        "nan".into()
    }
}

fn coord(v: f64) -> String {
    format!("{v:.2}")
}

/// Colour at fraction `t` in [0, 1] between [`LOW`] and [`HIGH`].
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c: Vec<u8> = LOW
        .iter()
        .zip(HIGH)
        .map(|(&a, b)| (a as f64 + (b as f64 - a as f64) * t).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        coord(w),
        coord(h),
        coord(w),
        coord(h),
        coord(w),
        coord(h)
    )
}

// ---------------------------------------------------------------------------
// Heatmap
// ---------------------------------------------------------------------------

/// Layer by head score grid; layers run down the y axis.
pub fn render_heatmap(m: &HeadScoreMatrix) -> String {
    let (nl, nh) = (m.n_layers(), m.n_heads());
    let values: Vec<f64> = m.scores.data().to_vec();
    let (lo, hi) = finite_range(values.iter().copied()).unwrap_or((0.0, 0.0));
    let span = hi - lo;
    let annotate = nl <= ANNOTATE_MAX && nh <= ANNOTATE_MAX;

    let left = 60.0;
    let top = 40.0;
    let grid_w = CELL * nh as f64;
    let grid_h = CELL * nl as f64;
    let legend_x = left + grid_w + 20.0;
    let width = legend_x + 90.0;
    let height = top + grid_h + 50.0;

    let mut s = header(width, height);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" {FONT} font-size=\"13\">{} head scores (n={})</text>",
        coord(left),
        escape(m.metric.as_str()),
        m.sample_n
    );
    for l in 0..nl {
        for h in 0..nh {
            let v = values[l * nh + h];
            let fill = if !v.is_finite() {
                "#bbbbbb".to_string()
            } else if span > 0.0 {
                ramp((v - lo) / span)
            } else {
                ramp(0.0)
            };
            let x = left + CELL * h as f64;
            let y = top + CELL * l as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" stroke=\"#ffffff\"><title>L{l}H{h} {}</title></rect>",
                coord(x),
                coord(y),
                coord(CELL),
                coord(CELL),
                num(v)
            );
            if annotate {
                let dark = v.is_finite() && span > 0.0 && (v - lo) / span > 0.5;
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"9\" text-anchor=\"middle\" fill=\"{}\">{}</text>",
                    coord(x + CELL / 2.0),
                    coord(y + CELL / 2.0 + 3.0),
                    if dark { "#ffffff" } else { "#000000" },
                    num(v)
                );
            }
        }
    }
    for h in 0..nh {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"middle\">{h}</text>",
            coord(left + CELL * h as f64 + CELL / 2.0),
            coord(top + grid_h + 14.0)
        );
    }
    for l in 0..nl {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"end\">{l}</text>",
            coord(left - 6.0),
            coord(top + CELL * l as f64 + CELL / 2.0 + 3.0)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"11\" text-anchor=\"middle\">head</text>",
        coord(left + grid_w / 2.0),
        coord(top + grid_h + 32.0)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" {FONT} font-size=\"11\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">layer</text>",
        coord(top + grid_h / 2.0),
        coord(top + grid_h / 2.0)
    );

    // Legend: a two-stop gradient labelled with the data range.
    let _ = writeln!(
        s,
        "<defs><linearGradient id=\"scale\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">\
         <stop offset=\"0\" stop-color=\"{}\"/><stop offset=\"1\" stop-color=\"{}\"/></linearGradient></defs>",
        ramp(0.0),
        ramp(1.0)
    );
    let bar_h = grid_h.max(CELL);
    let _ = writeln!(
        s,
        "<rect x=\"{}\" y=\"{}\" width=\"14\" height=\"{}\" fill=\"url(#scale)\" stroke=\"#888888\"/>",
        coord(legend_x),
        coord(top),
        coord(bar_h)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\">max {}</text>",
        coord(legend_x + 18.0),
        coord(top + 8.0),
        num(hi)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\">min {}</text>",
        coord(legend_x + 18.0),
        coord(top + bar_h),
        num(lo)
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_heatmap(m: &HeadScoreMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &render_heatmap(m))
}

// ---------------------------------------------------------------------------
// Line and bar charts
// ---------------------------------------------------------------------------

struct Frame {
    left: f64,
    top: f64,
    w: f64,
    h: f64,
    x_max: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.left + self.w * v / self.x_max
    }

    fn y(&self, v: f64) -> f64 {
        self.top + self.h * (self.y_hi - v) / (self.y_hi - self.y_lo)
    }

    fn axes(&self, s: &mut String, x_label: &str, y_label: &str) {
        let (x0, x1) = (self.left, self.left + self.w);
        let (y0, y1) = (self.top + self.h, self.top);
        let _ = writeln!(
            s,
            "<path d=\"M {} {} L {} {} L {} {}\" fill=\"none\" stroke=\"#000000\"/>",
            coord(x0),
            coord(y1),
            coord(x0),
            coord(y0),
            coord(x1),
            coord(y0)
        );
        for (v, anchor) in [(self.y_lo, "end"), (self.y_hi, "end")] {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"{anchor}\">{}</text>",
                coord(x0 - 4.0),
                coord(self.y(v) + 3.0),
                num(v)
            );
        }
        if self.y_lo < 0.0 && self.y_hi > 0.0 {
            let _ = writeln!(
                s,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#cccccc\"/>",
                coord(x0),
                coord(self.y(0.0)),
                coord(x1),
                coord(self.y(0.0))
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"11\" text-anchor=\"middle\">{}</text>",
            coord((x0 + x1) / 2.0),
            coord(y0 + 32.0),
            escape(x_label)
        );
        let mid = (y0 + y1) / 2.0;
        let _ = writeln!(
            s,
            "<text x=\"14\" y=\"{}\" {FONT} font-size=\"11\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>",
            coord(mid),
            coord(mid),
            escape(y_label)
        );
    }
}

/// Damage against heads ablated, one series per curve, with a dashed line
/// at `theta`. Every series starts at (0, 0).
pub fn render_curve(curves: &[AblationCurve], theta: f64) -> String {
    let x_max = curves
        .iter()
        .map(|c| c.budget.max(c.steps.len()))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let all = curves.iter().flat_map(|c| c.damages()).chain([0.0, theta]);
    let (lo, hi) = finite_range(all).unwrap_or((0.0, 1.0));
    let frame = Frame {
        left: 60.0,
        top: 30.0,
        w: 420.0,
        h: 260.0,
        x_max,
        y_lo: lo.min(0.0),
        y_hi: if hi > lo.min(0.0) { hi.max(1.0) } else { 1.0 },
    };
    let mut s = header(frame.left + frame.w + 170.0, frame.top + frame.h + 50.0);
    let ratio = curves.iter().all(|c| !c.normalization.is_absolute());
    frame.axes(
        &mut s,
        "heads ablated",
        if ratio { "normalized damage" } else { "damage" },
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"middle\">{}</text>",
        coord(frame.x(x_max)),
        coord(frame.top + frame.h + 14.0),
        x_max as usize
    );
    if theta.is_finite() {
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#555555\" stroke-dasharray=\"5,4\"/>",
            coord(frame.x(0.0)),
            coord(frame.y(theta)),
            coord(frame.x(x_max)),
            coord(frame.y(theta))
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\">θ={}</text>",
            coord(frame.x(x_max) + 4.0),
            coord(frame.y(theta) + 3.0),
            num(theta)
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut d = format!("M {} {}", coord(frame.x(0.0)), coord(frame.y(0.0)));
        for (k, step) in c.steps.iter().enumerate() {
            let v = if step.damage.is_finite() {
                step.damage
            } else {
                0.0
            };
            let _ = write!(
                d,
                " L {} {}",
                coord(frame.x((k + 1) as f64)),
                coord(frame.y(v))
            );
        }
        let _ = writeln!(
            s,
            "<path d=\"{d}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>"
        );
        let ly = frame.top + 14.0 * i as f64;
        let lx = frame.left + frame.w + 40.0;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{colour}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\">{}</text>",
            coord(lx),
            coord(ly),
            coord(lx + 16.0),
            coord(ly),
            coord(lx + 20.0),
            coord(ly + 3.0),
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_curve(curves: &[AblationCurve], theta: f64, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &render_curve(curves, theta))
}

/// Damage from zeroing every head of one layer, one bar per layer.
pub fn render_layer_profile(p: &LayerProfile) -> String {
    let n = p.layers.len().max(1);
    let (lo, hi) =
        finite_range(p.layers.iter().map(|e| e.damage).chain([0.0])).unwrap_or((0.0, 1.0));
    let frame = Frame {
        left: 60.0,
        top: 30.0,
        w: (24.0 * n as f64).max(200.0),
        h: 220.0,
        x_max: n as f64,
        y_lo: lo.min(0.0),
        y_hi: if hi > 0.0 { hi } else { 1.0 },
    };
    let mut s = header(frame.left + frame.w + 30.0, frame.top + frame.h + 50.0);
    let label = if p.normalization.is_absolute() {
        "damage"
    } else {
        "normalized damage"
    };
    frame.axes(&mut s, "layer", label);
    let slot = frame.w / n as f64;
    for e in &p.layers {
        let v = if e.damage.is_finite() { e.damage } else { 0.0 };
        let (y_a, y_b) = (frame.y(v.max(0.0)), frame.y(v.min(0.0)));
        let x = frame.left + slot * e.layer as f64 + slot * 0.15;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"><title>layer {} {}</title></rect>",
            coord(x),
            coord(y_a),
            coord(slot * 0.7),
            coord(y_b - y_a),
            PALETTE[0],
            e.layer,
            num(e.damage)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"9\" text-anchor=\"middle\">{}</text>",
            coord(x + slot * 0.35),
            coord(frame.top + frame.h + 14.0),
            e.layer
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_layer_profile(p: &LayerProfile, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &render_layer_profile(p))
}
