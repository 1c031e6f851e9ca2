//! Deterministic SVG figures for run and grid directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{load_report, RunReport};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn text(svg: &mut String, x: f64, y: f64, anchor: &str, s: &str) {
    let _ = writeln!(svg, "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{}</text>", esc(s));
}

/// Training loss per epoch, one polyline per seed.
pub fn loss_curves_svg(report: &RunReport) -> String {
    let (w, h, l, r, t, b) = (520.0, 320.0, 60.0, 20.0, 30.0, 40.0);
    let mut svg = open(w, h);
    text(&mut svg, w / 2.0, 18.0, "middle", &format!("{}: training loss", report.name));
    let curves: Vec<(u64, Vec<f64>)> = report
        .seeds
        .iter()
        .filter(|s| !s.losses.is_empty())
        .map(|s| (s.seed, s.losses.iter().map(|l| l.total).collect()))
        .collect();
    let n = curves.iter().map(|c| c.1.len()).max().unwrap_or(0).max(2);
    let all = curves.iter().flat_map(|c| c.1.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let x = |i: usize| l + (w - l - r) * i as f64 / (n - 1) as f64;
    let y = |v: f64| h - b - (h - t - b) * (v - lo) / (hi - lo);
    let _ = writeln!(
        svg,
        "<path d=\"M{l:.1} {t:.1}V{:.1}H{:.1}\" fill=\"none\" stroke=\"black\"/>",
        h - b,
        w - r
    );
    text(&mut svg, l - 4.0, y(hi) + 4.0, "end", &format!("{hi:.3}"));
    text(&mut svg, l - 4.0, y(lo) + 4.0, "end", &format!("{lo:.3}"));
    text(&mut svg, x(0), h - b + 14.0, "middle", "1");
    text(&mut svg, x(n - 1), h - b + 14.0, "middle", &n.to_string());
    text(&mut svg, (l + w - r) / 2.0, h - 8.0, "middle", "epoch");
    for (k, (seed, vals)) in curves.iter().enumerate() {
        let pts: Vec<String> = vals
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v)))
            .collect();
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
        text(&mut svg, w - r - 4.0, t + 14.0 * (k as f64 + 1.0), "end", &format!("seed {seed}"));
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"3\" fill=\"{color}\"/>",
            w - r - 70.0,
            t + 14.0 * (k as f64 + 1.0) - 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Recall confusion heatmap in percent, rows and columns in dataset scene order.
pub fn confusion_svg(title: &str, scene_names: &[String], confusion: &[Option<Vec<f64>>]) -> String {
    let n = scene_names.len();
    let cell = 56.0;
    let (l, t) = (100.0, 40.0);
    let (w, h) = (l + cell * n as f64 + 20.0, t + cell * n as f64 + 60.0);
    let mut svg = open(w, h);
    text(&mut svg, w / 2.0, 18.0, "middle", title);
    for (i, name) in scene_names.iter().enumerate() {
        let yc = t + cell * (i as f64 + 0.5);
        text(&mut svg, l - 6.0, yc + 4.0, "end", name);
        text(&mut svg, l + cell * (i as f64 + 0.5), t + cell * n as f64 + 16.0, "middle", name);
        for j in 0..n {
            let v = confusion.get(i).and_then(|r| r.as_ref()).map(|r| r[j]);
            let fill = match v {
                Some(v) => {
                    let g = (255.0 * (1.0 - v.clamp(0.0, 100.0) / 100.0)).round() as u8;
                    format!("rgb({g},{g},255)")
                }
                None => "#dddddd".into(),
            };
            let (x0, y0) = (l + cell * j as f64, t + cell * i as f64);
            let _ = writeln!(
                svg,
                "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"white\"/>"
            );
            let label = v.map_or("n/a".to_string(), |v| format!("{v:.1}"));
            text(&mut svg, x0 + cell / 2.0, y0 + cell / 2.0 + 4.0, "middle", &label);
        }
    }
    text(&mut svg, l + cell * n as f64 / 2.0, h - 12.0, "middle", "predicted");
    svg.push_str("</svg>\n");
    svg
}

/// One bar per event class with its mean F-score.
pub fn per_event_svg(title: &str, event_names: &[String], f: &[f64]) -> String {
    let bar = 28.0;
    let (l, t, b) = (40.0, 30.0, 90.0);
    let plot_h = 200.0;
    let (w, h) = (l + bar * f.len() as f64 + 20.0, t + plot_h + b);
    let mut svg = open(w.max(200.0), h);
    text(&mut svg, w.max(200.0) / 2.0, 18.0, "middle", title);
    let _ = writeln!(
        svg,
        "<path d=\"M{l:.1} {t:.1}V{:.1}H{:.1}\" fill=\"none\" stroke=\"black\"/>",
        t + plot_h,
        w - 20.0
    );
    text(&mut svg, l - 4.0, t + 4.0, "end", "1");
    text(&mut svg, l - 4.0, t + plot_h + 4.0, "end", "0");
    for (i, (name, &v)) in event_names.iter().zip(f).enumerate() {
        let bh = plot_h * v.clamp(0.0, 1.0);
        let x0 = l + bar * i as f64 + 4.0;
        let _ = writeln!(
            svg,
            "<rect class=\"bar\" x=\"{x0:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"{}\"/>",
            t + plot_h - bh,
            bar - 8.0,
            PALETTE[0]
        );
        let (lx, ly) = (x0 + (bar - 8.0) / 2.0, t + plot_h + 10.0);
        let _ = writeln!(
            svg,
            "<text x=\"{lx:.1}\" y=\"{ly:.1}\" text-anchor=\"end\" transform=\"rotate(-60 {lx:.1} {ly:.1})\">{}</text>",
            esc(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn write(path: PathBuf, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

fn plot_run(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let r = load_report(dir)?;
    write(dir.join("loss_curves.svg"), &loss_curves_svg(&r), out)?;
    if r.summary.confusion.iter().any(Option::is_some) {
        let title = format!("{}: scene confusion", r.name);
        write(
            dir.join("confusion.svg"),
            &confusion_svg(&title, &r.scene_names, &r.summary.confusion),
            out,
        )?;
    }
    if !r.summary.per_event_f.is_empty() {
        let f: Vec<f64> = r.summary.per_event_f.iter().map(|m| m.mean).collect();
        let title = format!("{}: per-event F", r.name);
        write(dir.join("per_event.svg"), &per_event_svg(&title, &r.event_names, &f), out)?;
    }
    Ok(())
}

/// Renders figures for a run directory, or for every run under a grid
/// directory. Returns the written paths.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if dir.join("report.json").exists() {
        plot_run(dir, &mut out)?;
        return Ok(out);
    }
    if !dir.join("grid.csv").exists() {
        return Err(Error::Input(format!(
            "{} holds neither report.json nor grid.csv",
            dir.display()
        )));
    }
    let mut members: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("report.json").exists())
        .collect();
    members.sort();
    for m in members {
        plot_run(&m, &mut out)?;
    }
    Ok(out)
}
