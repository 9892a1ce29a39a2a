//! SVG and CSV emission for trajectory logs.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use mesa_core::env::StepRecord;
use mesa_core::eval::path_deviation;
use mesa_core::{Error, Vec2};

use crate::context::{read_text, usage, CliResult};

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

pub struct Trace {
    pub episode: usize,
    /// `(t, position)` samples in log order.
    pub samples: Vec<(f64, Vec2)>,
    pub goal: Vec2,
}

pub struct Series {
    pub label: String,
    pub digests: Vec<String>,
    pub traces: Vec<Trace>,
}

pub fn load_series(label: String, path: &Path) -> CliResult<Series> {
    let text = read_text(path)?;
    let mut by_episode: BTreeMap<usize, Trace> = BTreeMap::new();
    let mut digests: Vec<String> = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: StepRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if let Some(d) = rec.config_digest {
            if !digests.contains(&d) {
                digests.push(d);
            }
        }
        let goal = Vec2::new(rec.robot.gx, rec.robot.gy);
        let episode = rec.episode.unwrap_or(0);
        by_episode
            .entry(episode)
            .or_insert_with(|| Trace {
                episode,
                samples: Vec::new(),
                goal,
            })
            .samples
            .push((rec.t, Vec2::new(rec.robot.x, rec.robot.y)));
    }
    if by_episode.is_empty() {
        return usage(format!("trajectory log {} is empty", path.display()));
    }
    Ok(Series {
        label,
        digests,
        traces: by_episode.into_values().collect(),
    })
}

pub struct DeviationRow {
    pub source: String,
    pub episode: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub deviation: f64,
    pub config_digest: String,
}

/// One row per trajectory sample: distance to the trace's start-goal segment.
pub fn deviation_rows(series: &[Series]) -> CliResult<Vec<DeviationRow>> {
    let mut rows = Vec::new();
    for s in series {
        let digest = s.digests.join(";");
        for tr in &s.traces {
            let points: Vec<Vec2> = tr.samples.iter().map(|&(_, p)| p).collect();
            let dev = path_deviation(&points, points[0], tr.goal)?;
            for (&(t, p), &d) in tr.samples.iter().zip(&dev.values) {
                rows.push(DeviationRow {
                    source: s.label.clone(),
                    episode: tr.episode,
                    t,
                    x: p.x,
                    y: p.y,
                    deviation: d,
                    config_digest: digest.clone(),
                });
            }
        }
    }
    Ok(rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn deviation_csv(rows: &[DeviationRow]) -> String {
    let mut out = String::from("source,episode,t,x,y,deviation,config_digest\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.source),
            r.episode,
            r.t,
            r.x,
            r.y,
            r.deviation,
            csv_field(&r.config_digest)
        );
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn digest_comment(series: &[Series]) -> String {
    let mut all: Vec<&str> = series
        .iter()
        .flat_map(|s| s.digests.iter().map(String::as_str))
        .collect();
    all.dedup();
    format!("<!-- config_digest: {} -->\n", all.join(" "))
}

/// Robot paths in world coordinates; the y axis is flipped by the group transform.
pub fn trajectories_svg(series: &[Series]) -> String {
    let (mut lo, mut hi) = (
        Vec2::new(f64::INFINITY, f64::INFINITY),
        Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
    );
    for p in series
        .iter()
        .flat_map(|s| &s.traces)
        .flat_map(|t| t.samples.iter().map(|&(_, p)| p).chain([t.goal]))
    {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let margin = 0.5;
    let (w, h) = ((hi.x - lo.x) + 2.0 * margin, (hi.y - lo.y) + 2.0 * margin);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="{}" height="{}">"#,
        lo.x - margin,
        -(hi.y + margin),
        w,
        h,
        (w * 60.0).round(),
        (h * 60.0).round()
    );
    svg.push_str(&digest_comment(series));
    svg.push_str("<g transform=\"scale(1,-1)\" fill=\"none\" stroke-width=\"0.04\">\n");
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            svg,
            "<g class=\"series\" stroke=\"{colour}\" data-label=\"{}\">",
            escape(&s.label)
        );
        for tr in &s.traces {
            let pts: Vec<String> = tr
                .samples
                .iter()
                .map(|&(_, p)| format!("{},{}", p.x, p.y))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline data-episode=\"{}\" points=\"{}\"/>",
                tr.episode,
                pts.join(" ")
            );
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</g>\n");
    for (k, s) in series.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"0.3\" fill=\"{}\">{}</text>",
            lo.x - margin + 0.1,
            -(hi.y + margin) + 0.4 + 0.35 * k as f64,
            PALETTE[k % PALETTE.len()],
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn quartiles(mut v: Vec<f64>) -> [f64; 5] {
    v.sort_by(f64::total_cmp);
    let q = |f: f64| {
        let pos = f * (v.len() - 1) as f64;
        let (a, b) = (pos.floor() as usize, pos.ceil() as usize);
        v[a] + (v[b] - v[a]) * (pos - a as f64)
    };
    [v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]]
}

/// Box plot with a deterministic jittered strip of every sample, one column per source.
pub fn deviation_svg(series: &[Series], rows: &[DeviationRow]) -> CliResult<String> {
    let (col_w, height, pad) = (120.0, 300.0, 40.0);
    let max_dev = rows
        .iter()
        .map(|r| r.deviation)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let y_of = |d: f64| pad + (1.0 - d / max_dev) * (height - 2.0 * pad);
    let width = pad * 2.0 + col_w * series.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" width="{width}" height="{height}">"#
    );
    svg.push_str(&digest_comment(series));
    let _ = writeln!(
        svg,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>",
        y_of(0.0),
        y_of(max_dev)
    );
    let _ = writeln!(
        svg,
        "<text x=\"4\" y=\"{}\" font-size=\"10\">{max_dev:.2} m</text>",
        y_of(max_dev) + 4.0
    );
    for (k, s) in series.iter().enumerate() {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.source == s.label)
            .map(|r| r.deviation)
            .collect();
        if vals.is_empty() {
            return usage(format!("no samples for {}", s.label));
        }
        let [lo, q1, med, q3, hi] = quartiles(vals.clone());
        let cx = pad + col_w * (k as f64 + 0.5);
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            svg,
            "<g class=\"box\" data-label=\"{}\" stroke=\"{colour}\">",
            escape(&s.label)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\"/>",
            y_of(lo),
            y_of(hi)
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"40\" height=\"{}\" fill=\"white\"/>",
            cx - 20.0,
            y_of(q3),
            (y_of(q1) - y_of(q3)).max(0.5)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke-width=\"2\"/>",
            cx - 20.0,
            y_of(med),
            cx + 20.0,
            y_of(med)
        );
        svg.push_str("</g>\n");
        let _ = writeln!(
            svg,
            "<g class=\"strip\" fill=\"{colour}\" fill-opacity=\"0.35\">"
        );
        for (i, v) in vals.iter().enumerate() {
            // golden-ratio jitter keeps the strip deterministic
            let jitter = ((i as f64 * 0.618_033_988_75).fract() - 0.5) * 30.0;
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\"/>",
                cx + 35.0 + jitter * 0.5,
                y_of(*v)
            );
        }
        svg.push_str("</g>\n");
        let _ = writeln!(
            svg,
            "<text x=\"{cx}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            height - 12.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
