//! SVG plots and the markdown summary of a run.

use std::fmt::Write as _;
use std::path::Path;

use super::dataset::Split;
use super::evaluate::MetricTable;
use super::train::{smoothed_endpoints, StepRecord};
use crate::error::{Error, Result};

/// Reports show metrics multiplied by this; stored values stay unscaled.
pub const DISPLAY_SCALE: f64 = 100.0;

/// Piecewise-linear approximation of a perceptually ordered colormap.
fn color(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Heatmap panel of a row-major `rows × cols` grid.
pub struct Panel<'a> {
    pub title: String,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
    /// Draw row 0 at the bottom, as for frequency axes and world maps.
    pub flip: bool,
}

/// Panels side by side sharing one color scale. Each panel is a `<g>` with
/// `data-rows` and `data-cols` attributes and one `<rect>` per cell.
pub fn heatmap_svg(panels: &[Panel], cell: f64) -> Result<String> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in panels {
        if p.values.len() != p.rows * p.cols {
            return Err(Error::InvalidArgument(format!(
                "panel {} has {} values for {}x{}",
                p.title,
                p.values.len(),
                p.rows,
                p.cols
            )));
        }
        for &v in p.values.iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let gap = 20.0;
    let title_h = 18.0;
    let width: f64 = panels.iter().map(|p| p.cols as f64 * cell + gap).sum::<f64>() + gap;
    let height = panels.iter().map(|p| p.rows as f64 * cell).fold(0.0, f64::max) + title_h + 2.0 * gap;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" data-min="{lo:e}" data-max="{hi:e}">"#
    )
    .expect("string write");
    let mut x0 = gap;
    for p in panels {
        writeln!(
            s,
            r#"<g class="panel" data-rows="{}" data-cols="{}" transform="translate({x0},{})">"#,
            p.rows,
            p.cols,
            gap + title_h
        )
        .expect("string write");
        writeln!(s, r#"<text x="0" y="-6" font-size="12" font-family="sans-serif">{}</text>"#, p.title)
            .expect("string write");
        for r in 0..p.rows {
            let y = if p.flip { p.rows - 1 - r } else { r } as f64 * cell;
            for c in 0..p.cols {
                let v = p.values[r * p.cols + c];
                writeln!(
                    s,
                    r#"<rect x="{}" y="{y}" width="{cell}" height="{cell}" fill="{}"/>"#,
                    c as f64 * cell,
                    color((v - lo) / span)
                )
                .expect("string write");
            }
        }
        s.push_str("</g>\n");
        x0 += p.cols as f64 * cell + gap;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Training loss against step, with a moving average.
pub fn loss_trace_svg(trace: &[StepRecord]) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    s.push('\n');
    if trace.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let hi = trace.iter().map(|r| r.loss).fold(f64::NEG_INFINITY, f64::max);
    let lo = trace.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min).min(0.0);
    let n = trace.len().max(2) - 1;
    let px = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n as f64;
    let py = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo).max(1e-12);
    let window = (trace.len() / 50).max(1);
    let mut smooth = Vec::with_capacity(trace.len());
    let mut acc = 0.0;
    for (i, r) in trace.iter().enumerate() {
        acc += r.loss;
        if i >= window {
            acc -= trace[i - window].loss;
        }
        smooth.push(acc / (i + 1).min(window) as f64);
    }
    let line = |vals: &mut dyn Iterator<Item = f64>| {
        vals.enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", px(i), py(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(
        s,
        r##"<polyline fill="none" stroke="#9bb" stroke-width="0.5" points="{}"/>"##,
        line(&mut trace.iter().map(|r| r.loss))
    )
    .expect("string write");
    writeln!(
        s,
        r##"<polyline fill="none" stroke="#136" stroke-width="1.5" points="{}"/>"##,
        line(&mut smooth.into_iter())
    )
    .expect("string write");
    writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    )
    .expect("string write");
    writeln!(
        s,
        r#"<text x="{pad}" y="20" font-size="12" font-family="sans-serif">training loss, {} steps (max {hi:.3})</text>"#,
        trace.len()
    )
    .expect("string write");
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of mean STFT error (display-scaled) per method and split.
pub fn metric_bars_svg(tables: &[MetricTable]) -> String {
    let splits = [Split::Seen, Split::Unseen];
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let vals: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| {
            splits
                .iter()
                .map(|&s| t.summary(s).map_or(0.0, |m| m.stft_error * DISPLAY_SCALE))
                .collect()
        })
        .collect();
    let hi = vals.iter().flatten().copied().fold(0.0, f64::max).max(1e-12);
    let group = (w - 2.0 * pad) / splits.len() as f64;
    let bar = group / (tables.len() + 1).max(2) as f64;
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    s.push('\n');
    for (si, split) in splits.iter().enumerate() {
        let gx = pad + si as f64 * group;
        writeln!(
            s,
            r#"<text x="{gx}" y="{}" font-size="12" font-family="sans-serif">{}</text>"#,
            h - pad + 16.0,
            split.name()
        )
        .expect("string write");
        for (ti, t) in tables.iter().enumerate() {
            let v = vals[ti][si];
            let bh = (h - 2.0 * pad) * v / hi;
            let x = gx + ti as f64 * bar;
            writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{}" data-method="{}" data-split="{}" data-value="{v:e}"/>"#,
                h - pad - bh,
                bar * 0.9,
                color(ti as f64 / tables.len().max(2).saturating_sub(1) as f64),
                t.method,
                split.name()
            )
            .expect("string write");
        }
    }
    writeln!(
        s,
        r#"<text x="{pad}" y="20" font-size="12" font-family="sans-serif">mean STFT error (x1e-2)</text>"#
    )
    .expect("string write");
    s.push_str("</svg>\n");
    s
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or("n/a".into(), |x| format!("{:.2}", x * scale))
}

/// Markdown summary: training progress and per-split metric means.
pub fn report_markdown(run: &str, trace: &[StepRecord], tables: &[MetricTable]) -> String {
    let mut s = format!("# Run {run}\n\n");
    if let Some((first, last)) = smoothed_endpoints(&trace.iter().map(|r| r.loss).collect::<Vec<_>>()) {
        writeln!(
            s,
            "Training: {} steps, smoothed loss {first:.4} -> {last:.4} (ratio {:.3}).\n",
            trace.len(),
            last / first
        )
        .expect("string write");
    }
    s.push_str("Metrics are means over queries, scaled by 100 for display.\n\n");
    s.push_str("| method | split | queries | STFT error | RTE (s) | DRRE (dB) | unmeasured |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for t in tables {
        for split in [Split::Seen, Split::Unseen] {
            if let Some(m) = t.summary(split) {
                writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    t.method,
                    split.name(),
                    m.queries,
                    cell(Some(m.stft_error), DISPLAY_SCALE),
                    cell(m.rte_s, DISPLAY_SCALE),
                    cell(m.drre_db, DISPLAY_SCALE),
                    m.unmeasured
                )
                .expect("string write");
            }
        }
    }
    s
}

/// Writes `loss_trace.svg`, `metrics.svg` and `report.md` into `dir`.
pub fn write_report(dir: &Path, run: &str, trace: &[StepRecord], tables: &[MetricTable]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in [
        ("loss_trace.svg", loss_trace_svg(trace)),
        ("metrics.svg", metric_bars_svg(tables)),
        ("report.md", report_markdown(run, trace, tables)),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
