use std::fmt::Write;

use super::EvalReport;
use crate::geometry::Structure;

/// ASD table: one row per view, phase and structure, notes as `#` lines.
pub fn asd_table_csv(r: &EvalReport) -> String {
    let mut s = String::from("view,phase,structure,mean_mm,std_mm,n\n");
    for v in &r.views {
        for row in &v.rows {
            writeln!(s, "{},{},{},{:.4},{:.4},{}", v.view, row.phase.name(), row.structure, row.mean, row.std, row.n).unwrap();
        }
    }
    for n in &r.notes {
        writeln!(s, "# {n}").unwrap();
    }
    s
}

pub fn ef_scatter_csv(r: &EvalReport) -> String {
    let mut s = String::from("view,id,gt,predicted\n");
    for v in &r.views {
        for x in &v.samples {
            writeln!(s, "{},{},{:.6},{:.6}", v.view, x.id, x.gt_ef, x.pred_ef).unwrap();
        }
    }
    for v in &r.views {
        match v.pearson_r {
            Some(p) => writeln!(s, "# {}: pearson r = {p:.4} over {} subjects", v.view, v.samples.len()).unwrap(),
            None => writeln!(s, "# {}: no correlation ({})", v.view, v.pearson_note.as_deref().unwrap_or("")).unwrap(),
        }
    }
    s
}

/// Volume-time curves of every evaluated subject, ground truth and prediction.
pub fn volume_curves_csv(r: &EvalReport) -> String {
    let mut s = String::from("view,id,source,frame");
    for st in Structure::REPORT_ORDER {
        write!(s, ",{}_ml", st.name()).unwrap();
    }
    s.push('\n');
    for v in &r.views {
        for x in &v.samples {
            for (source, curves) in [("gt", &x.gt_volumes), ("predicted", &x.pred_volumes)] {
                let frames = curves.values().next().map_or(0, Vec::len);
                for t in 0..frames {
                    write!(s, "{},{},{source},{t}", v.view, x.id).unwrap();
                    for st in Structure::REPORT_ORDER {
                        write!(s, ",{:.4}", curves.get(&st).map_or(f64::NAN, |c| c[t])).unwrap();
                    }
                    s.push('\n');
                }
            }
        }
    }
    s
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0).max(1e-12) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0).max(1e-12) * (H - 2.0 * PAD)
    }

    fn frame(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#).unwrap();
        writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        )
        .unwrap();
        writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 10.0).unwrap();
        writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#, H / 2.0, H / 2.0)
            .unwrap();
        for (v, anchor) in [(self.x.0, "start"), (self.x.1, "end")] {
            writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{v:.2}</text>"#, self.px(v), H - PAD + 14.0).unwrap();
        }
        for v in [self.y.0, self.y.1] {
            writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, PAD - 4.0, self.py(v) + 4.0).unwrap();
        }
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let m = ((hi - lo) * 0.05).max(1e-3);
    (lo - m, hi + m)
}

/// Predicted against ground-truth EF, one colour per view, with the identity line.
pub fn ef_scatter_svg(r: &EvalReport) -> String {
    let all = || r.views.iter().flat_map(|v| v.ef_pairs.iter().flat_map(|p| [p.0, p.1]));
    let lim = range(all());
    let ax = Axes { x: lim, y: lim };
    let mut s = String::new();
    ax.frame(&mut s, "LV ejection fraction", "ground truth", "predicted");
    writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
        ax.px(lim.0),
        ax.py(lim.0),
        ax.px(lim.1),
        ax.py(lim.1)
    )
    .unwrap();
    for (k, v) in r.views.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        for (gt, pred) in &v.ef_pairs {
            writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}" fill-opacity="0.7"/>"#, ax.px(*gt), ax.py(*pred)).unwrap();
        }
        let label = match v.pearson_r {
            Some(p) => format!("{} (r = {p:.3})", v.view),
            None => v.view.clone(),
        };
        writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{label}</text>"#, PAD + 8.0, PAD + 16.0 + 14.0 * k as f64).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Chamber volume curves of the first evaluated subject of the first view:
/// solid prediction, dashed ground truth, frames mapped to cycle fraction.
pub fn volume_curves_svg(r: &EvalReport) -> String {
    let mut s = String::new();
    let Some(x) = r.views.first().and_then(|v| v.samples.first()) else {
        let ax = Axes { x: (0.0, 1.0), y: (0.0, 1.0) };
        ax.frame(&mut s, "volume curves (no evaluated subjects)", "cycle fraction", "volume (mL)");
        s.push_str("</svg>\n");
        return s;
    };
    let ax = Axes {
        x: (0.0, 1.0),
        y: range(x.gt_volumes.values().chain(x.pred_volumes.values()).flatten().copied()),
    };
    ax.frame(&mut s, &format!("subject {} ({})", x.id, r.views[0].view), "cycle fraction", "volume (mL)");
    for (k, st) in Structure::CHAMBERS.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        for (curves, dash) in [(&x.pred_volumes, ""), (&x.gt_volumes, r#" stroke-dasharray="5 3""#)] {
            let Some(v) = curves.get(st) else { continue };
            let pts: Vec<String> = v
                .iter()
                .enumerate()
                .map(|(t, y)| format!("{:.1},{:.1}", ax.px(t as f64 / v.len() as f64), ax.py(*y)))
                .collect();
            writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}"{dash}/>"#, pts.join(" ")).unwrap();
        }
        writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{}</text>"#, W - PAD - 30.0, PAD + 16.0 + 14.0 * k as f64, st.name()).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
