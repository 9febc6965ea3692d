//! Static SVG figures: particle snapshots and track overviews.

use std::fmt::Write;

use admm_eki::benchmarks::racing::RaceEnvironment;
use admm_eki::benchmarks::rastrigin::{Snapshot, DISK_CENTERS, DISK_RADIUS};

const PANEL: f64 = 220.0;
const PAD: f64 = 24.0;

struct Frame {
    lo: [f64; 2],
    hi: [f64; 2],
    origin: [f64; 2],
    size: [f64; 2],
}

impl Frame {
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let sx = self.size[0] / (self.hi[0] - self.lo[0]);
        let sy = self.size[1] / (self.hi[1] - self.lo[1]);
        (
            self.origin[0] + (p[0] - self.lo[0]) * sx,
            self.origin[1] + (self.hi[1] - p[1]) * sy,
        )
    }

    fn scale(&self) -> f64 {
        self.size[0] / (self.hi[0] - self.lo[0])
    }
}

fn header(out: &mut String, w: f64, h: f64) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
}

/// One panel per outer iteration showing the last inner snapshot of that iteration.
pub fn particle_panels(snapshots: &[Snapshot]) -> String {
    let mut last: Vec<&Snapshot> = Vec::new();
    for s in snapshots {
        match last.last() {
            Some(prev) if prev.outer == s.outer => *last.last_mut().unwrap() = s,
            _ => last.push(s),
        }
    }
    let cols = last.len().clamp(1, 5);
    let rows = last.len().div_ceil(cols).max(1);
    let w = cols as f64 * (PANEL + PAD) + PAD;
    let h = rows as f64 * (PANEL + PAD + 14.0) + PAD;
    let mut out = String::new();
    header(&mut out, w, h);
    for (idx, snap) in last.iter().enumerate() {
        let (r, c) = (idx / cols, idx % cols);
        let frame = Frame {
            lo: [-3.0, -3.0],
            hi: [3.0, 3.0],
            origin: [PAD + c as f64 * (PANEL + PAD), PAD + 14.0 + r as f64 * (PANEL + PAD + 14.0)],
            size: [PANEL, PANEL],
        };
        let (x0, y0) = frame.map([-3.0, 3.0]);
        writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        writeln!(out, r#"<text x="{x0:.2}" y="{:.2}">iteration {}</text>"#, y0 - 4.0, snap.outer + 1).unwrap();
        for c in DISK_CENTERS {
            let (cx, cy) = frame.map(c);
            writeln!(
                out,
                r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="#7bc67b" fill-opacity="0.6"/>"##,
                DISK_RADIUS * frame.scale()
            )
            .unwrap();
        }
        for p in &snap.particles {
            if p.iter().all(|v| v.abs() <= 3.0) {
                let (px, py) = frame.map(*p);
                writeln!(out, r##"<circle cx="{px:.2}" cy="{py:.2}" r="2" fill="#1f5fbf"/>"##).unwrap();
            }
        }
        let (mx, my) = frame.map(snap.mean);
        writeln!(out, r##"<circle cx="{mx:.2}" cy="{my:.2}" r="4" fill="#d62728"/>"##).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn polyline(out: &mut String, frame: &Frame, pts: &[[f64; 2]], style: &str) {
    let mut d = String::new();
    for p in pts {
        let (x, y) = frame.map(*p);
        write!(d, "{x:.2},{y:.2} ").unwrap();
    }
    writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, d.trim_end()).unwrap();
}

/// Track edges, raceline, obstacles with their safety margin, and trajectories.
pub fn track_overview(env: &RaceEnvironment, trajectories: &[(&str, Vec<[f64; 2]>)]) -> String {
    const COLORS: [&str; 4] = ["#d62728", "#1f5fbf", "#2ca02c", "#9467bd"];
    let oval = env.oval();
    let half = env.track.half_width;
    let ext = oval.half_straight + oval.radius + half + 1.0;
    let ey = oval.radius + half + 1.0;
    let width = 900.0;
    let height = width * ey / ext + 40.0;
    let frame = Frame {
        lo: [-ext, -ey],
        hi: [ext, ey],
        origin: [10.0, 30.0],
        size: [width - 20.0, width * ey / ext - 20.0],
    };
    let mut out = String::new();
    header(&mut out, width, height);
    let n = 720;
    let len = oval.length();
    let edge = |offset: f64| -> Vec<[f64; 2]> {
        (0..=n)
            .map(|k| {
                let s = k as f64 * len / n as f64;
                let (p, _) = oval.pose(s);
                let nrm = oval.left_normal(s);
                [p[0] + offset * nrm[0], p[1] + offset * nrm[1]]
            })
            .collect()
    };
    polyline(&mut out, &frame, &edge(half), r#"stroke="black" stroke-width="1.5""#);
    polyline(&mut out, &frame, &edge(-half), r#"stroke="black" stroke-width="1.5""#);
    polyline(&mut out, &frame, &edge(0.0), r#"stroke="gray" stroke-dasharray="4 4""#);
    for o in &env.obstacles {
        let (cx, cy) = frame.map(o.center);
        writeln!(
            out,
            r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="#ff7f0e" stroke-dasharray="2 2"/>"##,
            (o.radius + env.track.safety_margin) * frame.scale()
        )
        .unwrap();
        writeln!(
            out,
            r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="#ff7f0e"/>"##,
            o.radius * frame.scale()
        )
        .unwrap();
    }
    for (i, (label, pts)) in trajectories.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        polyline(&mut out, &frame, pts, &format!(r#"stroke="{color}" stroke-width="1.5""#));
        writeln!(
            out,
            r#"<text x="{:.0}" y="18" fill="{color}">{label}</text>"#,
            14.0 + 140.0 * i as f64
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
