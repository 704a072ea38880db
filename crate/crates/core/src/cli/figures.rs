//! Hand-rolled SVG charts and the PNG qualitative panel.

use std::fmt::Write as _;

use image::{GrayImage, Luma};

use crate::mask::Mask;
use crate::metrics::Stats;
use crate::tensor::Tensor;

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Plot frame with a `[0, 1]` y axis.
struct Frame {
    width: f64,
    height: f64,
    left: f64,
    top: f64,
    plot_h: f64,
}

impl Frame {
    fn new(slots: usize, title: &str, body: &mut String) -> Self {
        let f = Frame {
            width: 90.0 + 80.0 * slots as f64,
            height: 320.0,
            left: 60.0,
            top: 40.0,
            plot_h: 220.0,
        };
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#,
            w = f.width,
            h = f.height
        );
        let _ = writeln!(body, r#"<rect width="{}" height="{}" fill="white"/>"#, f.width, f.height);
        let _ = writeln!(
            body,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            f.width / 2.0,
            escape(title)
        );
        for i in 0..=5 {
            let v = i as f64 / 5.0;
            let y = f.y(v);
            let _ = writeln!(
                body,
                r##"<line x1="{l}" y1="{y}" x2="{r}" y2="{y}" stroke="#dddddd"/><text x="{tx}" y="{ty}" text-anchor="end">{v:.1}</text>"##,
                l = f.left,
                r = f.width - 20.0,
                tx = f.left - 6.0,
                ty = y + 4.0
            );
        }
        let _ = writeln!(
            body,
            r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
            l = f.left,
            t = f.top,
            b = f.top + f.plot_h
        );
        f
    }

    fn y(&self, v: f64) -> f64 {
        self.top + self.plot_h * (1.0 - v.clamp(0.0, 1.0))
    }

    fn slot_x(&self, i: usize) -> f64 {
        self.left + 40.0 + 80.0 * i as f64
    }

    fn label(&self, body: &mut String, x: f64, text: &str) {
        let _ = writeln!(
            body,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            self.top + self.plot_h + 18.0,
            escape(text)
        );
    }
}

/// Box from q1 to q3 with the median line; whiskers span min to max.
fn draw_box(body: &mut String, f: &Frame, x: f64, half: f64, s: &Stats, colour: &str) {
    let (ymin, yq1, ymed, yq3, ymax) = (f.y(s.min), f.y(s.q1), f.y(s.median), f.y(s.q3), f.y(s.max));
    let _ = writeln!(
        body,
        r#"<line x1="{x}" y1="{ymax}" x2="{x}" y2="{yq3}" stroke="black"/><line x1="{x}" y1="{yq1}" x2="{x}" y2="{ymin}" stroke="black"/>"#
    );
    for y in [ymin, ymax] {
        let _ = writeln!(
            body,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
            x - half / 2.0,
            x + half / 2.0
        );
    }
    let _ = writeln!(
        body,
        r#"<rect x="{}" y="{yq3}" width="{}" height="{}" fill="{colour}" fill-opacity="0.7" stroke="black"/>"#,
        x - half,
        2.0 * half,
        (yq1 - yq3).max(0.5)
    );
    let _ = writeln!(
        body,
        r#"<line x1="{}" y1="{ymed}" x2="{}" y2="{ymed}" stroke="black" stroke-width="2"/>"#,
        x - half,
        x + half
    );
    let _ = writeln!(
        body,
        r#"<circle cx="{x}" cy="{}" r="2.5" fill="white" stroke="black"/>"#,
        f.y(s.mean)
    );
}

/// One box per method.
pub fn boxplot_svg(title: &str, methods: &[(String, Option<Stats>)]) -> String {
    let mut body = String::new();
    let f = Frame::new(methods.len(), title, &mut body);
    for (i, (name, stats)) in methods.iter().enumerate() {
        let x = f.slot_x(i);
        if let Some(s) = stats {
            draw_box(&mut body, &f, x, 18.0, s, PALETTE[i % PALETTE.len()]);
        }
        f.label(&mut body, x, name);
    }
    body.push_str("</svg>\n");
    body
}

/// Side-by-side precision (left) and recall (right) boxes per method.
pub fn precision_recall_svg(title: &str, methods: &[(String, Option<Stats>, Option<Stats>)]) -> String {
    let mut body = String::new();
    let f = Frame::new(methods.len(), title, &mut body);
    for (i, (name, p, r)) in methods.iter().enumerate() {
        let x = f.slot_x(i);
        if let Some(s) = p {
            draw_box(&mut body, &f, x - 12.0, 9.0, s, PALETTE[0]);
        }
        if let Some(s) = r {
            draw_box(&mut body, &f, x + 12.0, 9.0, s, PALETTE[1]);
        }
        f.label(&mut body, x, name);
    }
    let lx = f.width - 110.0;
    for (j, name) in ["precision", "recall"].iter().enumerate() {
        let y = f.top + 2.0 + 16.0 * j as f64;
        let _ = writeln!(
            body,
            r#"<rect x="{lx}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{name}</text>"#,
            PALETTE[j],
            lx + 14.0,
            y + 9.0
        );
    }
    body.push_str("</svg>\n");
    body
}

/// One cell of the qualitative grid.
#[derive(Clone, Copy)]
pub enum Cell<'a> {
    Image(&'a Tensor<f32>),
    /// Scar white over myocardium grey.
    Truth { myo: &'a Mask, scar: &'a Mask },
    Mask(&'a Mask),
}

/// Grid of `rows × cols` cells, each `h×w`, upscaled by `zoom` and separated
/// by a 2-pixel gap.
pub fn panel_png(rows: &[Vec<Cell<'_>>], h: usize, w: usize, zoom: usize) -> GrayImage {
    let gap = 2;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (cw, ch) = (w * zoom, h * zoom);
    let mut img = GrayImage::from_pixel(
        (cols * (cw + gap) + gap) as u32,
        (rows.len() * (ch + gap) + gap) as u32,
        Luma([40]),
    );
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let value = |y: usize, x: usize| -> u8 {
                match cell {
                    Cell::Image(t) => (t.data()[y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8,
                    Cell::Truth { myo, scar } => {
                        if scar.get(y, x) {
                            255
                        } else if myo.get(y, x) {
                            110
                        } else {
                            0
                        }
                    }
                    Cell::Mask(m) => {
                        if m.get(y, x) {
                            255
                        } else {
                            0
                        }
                    }
                }
            };
            let (ox, oy) = (gap + c * (cw + gap), gap + r * (ch + gap));
            for py in 0..ch {
                for px in 0..cw {
                    img.put_pixel((ox + px) as u32, (oy + py) as u32, Luma([value(py / zoom, px / zoom)]));
                }
            }
        }
    }
    img
}
