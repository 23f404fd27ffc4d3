//! Static plot of the workspace, the region path and the tip trajectory.

use std::fmt::Write as _;

use modbot_core::{AbstractWorkspace, DesignResult, Proposition, Workspace};

const SIZE: f64 = 600.0;
const PAD: f64 = 20.0;

struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
}

impl Frame {
    fn new(bbox: [f64; 4]) -> Self {
        let span = (bbox[1] - bbox[0]).max(bbox[3] - bbox[2]);
        Frame { x0: bbox[0], y1: bbox[3], scale: (SIZE - 2.0 * PAD) / span }
    }

    fn x(&self, x: f64) -> f64 {
        PAD + (x - self.x0) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        PAD + (self.y1 - y) * self.scale
    }

    fn rect(&self, r: [f64; 4], style: &str) -> String {
        format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" {style}/>\n",
            self.x(r[0]),
            self.y(r[3]),
            (r[1] - r[0]) * self.scale,
            (r[3] - r[2]) * self.scale
        )
    }
}

fn fill(p: Proposition) -> &'static str {
    match p {
        Proposition::Obstacle => "fill=\"#d9534f\" fill-opacity=\"0.7\"",
        Proposition::Target => "fill=\"#5cb85c\" fill-opacity=\"0.7\"",
        Proposition::Free => "fill=\"none\"",
    }
}

pub fn render(ws: &Workspace, aw: &AbstractWorkspace, design: Option<&DesignResult>) -> String {
    let f = Frame::new(ws.bbox);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\">\n");
    s.push_str(&f.rect(ws.bbox, "fill=\"white\" stroke=\"black\""));
    for r in &ws.regions {
        if r.proposition == Proposition::Free {
            continue;
        }
        // non-box regions are drawn by their bounding box
        if let Ok(b) = r.polytope.bounds() {
            s.push_str(&f.rect(b, fill(r.proposition)));
        }
    }
    if let Some(d) = design {
        for &c in &d.path.cells {
            s.push_str(&f.rect(aw.cells[c].rect, "fill=\"#5bc0de\" fill-opacity=\"0.35\" stroke=\"none\""));
        }
        let pts: Vec<String> = d.trajectory.iter().map(|p| format!("{:.2},{:.2}", f.x(p.tip[0]), f.y(p.tip[1]))).collect();
        writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f3a93\" stroke-width=\"2\"/>", pts.join(" ")).unwrap();
        if let Some(last) = d.trajectory.last() {
            // final arm pose
            let mut p = (0.0, 0.0);
            let mut pts = vec![format!("{:.2},{:.2}", f.x(0.0), f.y(0.0))];
            for (l, q) in d.theta.lengths.iter().zip(&last.q) {
                p = (p.0 + l * q.cos(), p.1 + l * q.sin());
                pts.push(format!("{:.2},{:.2}", f.x(p.0), f.y(p.1)));
            }
            writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#555\" stroke-width=\"3\"/>", pts.join(" ")).unwrap();
        }
    }
    if let Some(st) = ws.start {
        writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"black\"/>", f.x(st.x), f.y(st.y)).unwrap();
    }
    writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"#555\"/>", f.x(0.0), f.y(0.0)).unwrap();
    s.push_str("</svg>\n");
    s
}
