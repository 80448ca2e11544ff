//! Deterministic SVG frames of a construction trace, projected onto the
//! first two barycentric coordinates.

use std::fmt::Write;

use conenet::construct::TraceJson;
use conenet::dataset::{class_stats, BarycentricFrame, LabeledDataset};
use conenet::geom::cone_contains;
use conenet::numlin::Vector;
use conenet::{Error, Result};

const PANEL: f64 = 320.0;
const PAD: f64 = 24.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Frame {
    title: String,
    points: Vec<(usize, (f64, f64))>,
    cone: Option<ConeView>,
}

struct ConeView {
    apex: (f64, f64),
    dir: (f64, f64),
    half: f64,
}

fn project(frame: &BarycentricFrame, x: &Vector) -> (f64, f64) {
    let y = frame.forward(x);
    (y[0], y[1])
}

/// One panel for the raw data and one per trace step. Points in the
/// backward half of a step's cone move to its apex; everything else stays.
pub fn plot_trace(ds: &LabeledDataset, trace: &TraceJson) -> Result<String> {
    if ds.ambient_dim < 2 {
        return Err(Error::InvalidInput("plotting needs ambient dimension >= 2".into()));
    }
    let cones = trace.cones()?;
    if let Some(c) = cones.iter().find(|c| c.dim() != ds.ambient_dim) {
        return Err(Error::DimensionMismatch(format!(
            "trace cone has dimension {}, data {}",
            c.dim(),
            ds.ambient_dim
        )));
    }
    let stats = class_stats(ds)?;
    let bary = BarycentricFrame::new(&stats.means)?;
    let mut current: Vec<(usize, Vector)> = ds
        .classes
        .iter()
        .enumerate()
        .flat_map(|(j, c)| c.column_iter().map(move |x| (j, x.into_owned())))
        .collect();
    let snap = |pts: &[(usize, Vector)]| pts.iter().map(|(j, x)| (*j, project(&bary, x))).collect();
    let mut frames = vec![Frame { title: "initial".into(), points: snap(&current), cone: None }];
    for (k, (cone, step)) in cones.iter().zip(&trace.steps).enumerate() {
        let back = cone.backward();
        for (_, x) in current.iter_mut() {
            if cone_contains(&back, x) {
                *x = cone.apex.clone();
            }
        }
        let apex = project(&bary, &cone.apex);
        let tip = project(&bary, &(&cone.apex + &cone.axis));
        let (dx, dy) = (tip.0 - apex.0, tip.1 - apex.1);
        let n = (dx * dx + dy * dy).sqrt();
        let dir = if n > 0.0 { (dx / n, dy / n) } else { (0.0, 0.0) };
        frames.push(Frame {
            title: format!("step {}: class {}", k + 1, step.collapsed_class),
            points: snap(&current),
            cone: Some(ConeView { apex, dir, half: cone.aperture / 2.0 }),
        });
    }
    Ok(render(&frames))
}

fn render(frames: &[Frame]) -> String {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for f in frames {
        let extra = f.cone.as_ref().map(|c| c.apex);
        for p in f.points.iter().map(|(_, p)| *p).chain(extra) {
            lo = (lo.0.min(p.0), lo.1.min(p.1));
            hi = (hi.0.max(p.0), hi.1.max(p.1));
        }
    }
    let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-12);
    let scale = (PANEL - 2.0 * PAD) / span;
    let width = PANEL * frames.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{PANEL:.0}\" viewBox=\"0 0 {width:.0} {PANEL:.0}\">"
    );
    let _ = writeln!(s, "<rect width=\"{width:.0}\" height=\"{PANEL:.0}\" fill=\"white\"/>");
    for (i, f) in frames.iter().enumerate() {
        let ox = PANEL * i as f64;
        let to_px = |p: (f64, f64)| (ox + PAD + (p.0 - lo.0) * scale, PANEL - PAD - (p.1 - lo.1) * scale);
        let _ = writeln!(s, "<g id=\"frame-{i}\">");
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"0.5\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#cccccc\"/>",
            ox + 0.5,
            PANEL - 1.0,
            PANEL - 1.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"16\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            ox + 8.0,
            f.title
        );
        if let Some(c) = &f.cone {
            let a = to_px(c.apex);
            let len = PANEL;
            for sign in [-1.0, 1.0] {
                let (sn, cs) = (sign * c.half).sin_cos();
                let d = (c.dir.0 * cs - c.dir.1 * sn, c.dir.0 * sn + c.dir.1 * cs);
                let end = (a.0 + d.0 * len, a.1 - d.1 * len);
                let _ = writeln!(
                    s,
                    "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>",
                    a.0, a.1, end.0, end.1
                );
            }
        }
        for (j, p) in &f.points {
            let q = to_px(*p);
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\"/>",
                q.0,
                q.1,
                PALETTE[j % PALETTE.len()]
            );
        }
        if let Some(c) = &f.cone {
            let a = to_px(c.apex);
            let _ = writeln!(
                s,
                "<path d=\"M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}\" stroke=\"black\" stroke-width=\"1.5\"/>",
                a.0 - 5.0,
                a.1 - 5.0,
                a.0 + 5.0,
                a.1 + 5.0,
                a.0 - 5.0,
                a.1 + 5.0,
                a.0 + 5.0,
                a.1 - 5.0
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
