//! Static SVG figures: share over time and per-phase box summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Renders every figure the directory has data for and returns warnings.
pub fn plot_dir(input: &Path, out: &Path) -> Result<Vec<String>> {
    let mut runs: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_") && n.ends_with(".csv"))
        })
        .collect();
    runs.sort();
    let aggregate = input.join("aggregate.csv");
    if runs.is_empty() && !aggregate.exists() {
        bail!("no run_*.csv or aggregate.csv in {}", input.display());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut warnings = Vec::new();
    if !runs.is_empty() {
        let series = mean_series(&runs)?;
        if series.values().all(|s| s.is_empty()) {
            warnings.push("no admitted traffic: share series are empty".to_string());
        }
        let title = if runs.len() == 1 {
            "Traffic share per instance".to_string()
        } else {
            format!("Traffic share per instance, mean of {} runs", runs.len())
        };
        let path = out.join("shares_over_time.svg");
        fs::write(&path, time_series_svg(&title, &series))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if aggregate.exists() {
        let boxes = read_aggregate(&aggregate)?;
        if boxes.is_empty() {
            warnings.push("aggregate has no defined phase shares".to_string());
        }
        let path = out.join("phase_boxplot.svg");
        fs::write(&path, boxplot_svg(&boxes))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(warnings)
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

/// Mean share per instance and sample time across runs, in percent.
fn mean_series(paths: &[PathBuf]) -> Result<Series> {
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, u32)>> = BTreeMap::new();
    for path in paths {
        let mut rdr =
            csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .with_context(|| format!("{}: missing column {name}", path.display()))
        };
        let (t_col, i_col, s_col) = (col("time")?, col("instance")?, col("share")?);
        for rec in rdr.records() {
            let rec = rec.with_context(|| format!("reading {}", path.display()))?;
            let instance = &rec[i_col];
            if instance.is_empty() {
                continue;
            }
            let entry = acc.entry(instance.to_string()).or_default();
            let Ok(share) = rec[s_col].parse::<f64>() else {
                continue;
            };
            let t: f64 = rec[t_col].parse().context("bad time value")?;
            let slot = entry.entry((t * 1000.0).round() as u64).or_default();
            slot.0 += share;
            slot.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(name, points)| {
            let v = points
                .into_iter()
                .map(|(t, (sum, n))| (t as f64 / 1000.0, 100.0 * sum / f64::from(n)))
                .collect();
            (name, v)
        })
        .collect())
}

struct BoxRow {
    phase: String,
    instance: String,
    q: [f64; 5],
}

fn read_aggregate(path: &Path) -> Result<Vec<BoxRow>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
        // min, q1, median, q3, max
        let (Some(min), Some(q1), Some(med), Some(q3), Some(max)) =
            (num(10), num(8), num(7), num(9), num(11))
        else {
            continue;
        };
        rows.push(BoxRow {
            phase: rec[0].to_string(),
            instance: rec[3].to_string(),
            q: [min, q1, med, q3, max].map(|x| 100.0 * x),
        });
    }
    Ok(rows)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Frame, share grid (0..100 %) and y label.
fn share_axis(out: &mut String) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    for pct in (0..=100).step_by(20) {
        let y = y_of(f64::from(pct));
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{pct}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        HEIGHT - TOP - BOTTOM
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(20,{}) rotate(-90)" text-anchor="middle">share (%)</text>"#,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0
    );
}

fn y_of(pct: f64) -> f64 {
    HEIGHT - BOTTOM - pct.clamp(0.0, 100.0) / 100.0 * (HEIGHT - TOP - BOTTOM)
}

fn legend(out: &mut String, names: &[&String]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="14" height="4" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 2.0,
            PALETTE[i % PALETTE.len()],
            x + 20.0,
            y + 4.0,
            escape(name)
        );
    }
}

fn time_series_svg(title: &str, series: &Series) -> String {
    let mut out = String::new();
    header(&mut out, title);
    share_axis(&mut out);
    let t_max = series
        .values()
        .flat_map(|s| s.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let step = nice_step(t_max);
    let x_of = |t: f64| LEFT + t / t_max * (WIDTH - LEFT - RIGHT);
    let mut t = 0.0;
    while t <= t_max + 1e-9 {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#,
            x_of(t),
            HEIGHT - BOTTOM + 18.0
        );
        t += step;
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 15.0
    );
    for (i, points) in series.values().enumerate() {
        if points.is_empty() {
            continue;
        }
        let pts: Vec<String> = points
            .iter()
            .map(|(t, s)| format!("{:.1},{:.1}", x_of(*t), y_of(*s)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
    let names: Vec<&String> = series.keys().collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

fn boxplot_svg(rows: &[BoxRow]) -> String {
    let mut out = String::new();
    header(&mut out, "Per-run mean share by phase");
    share_axis(&mut out);
    let mut instances: Vec<&String> = rows.iter().map(|r| &r.instance).collect();
    instances.sort();
    instances.dedup();
    let mut phases: Vec<&String> = rows.iter().map(|r| &r.phase).collect();
    phases.dedup();
    let slot = (WIDTH - LEFT - RIGHT) / phases.len().max(1) as f64;
    let bw = (slot / (instances.len() + 1) as f64).min(40.0);
    for (pi, phase) in phases.iter().enumerate() {
        let cx = LEFT + slot * (pi as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            escape(phase)
        );
        let in_phase: Vec<&BoxRow> = rows.iter().filter(|r| &&r.phase == phase).collect();
        let n = in_phase.len() as f64;
        for (k, r) in in_phase.iter().enumerate() {
            let color = PALETTE[instances
                .iter()
                .position(|i| *i == &r.instance)
                .unwrap_or(0)
                % PALETTE.len()];
            let x = cx + (k as f64 - (n - 1.0) / 2.0) * bw * 1.2;
            let [min, q1, med, q3, max] = r.q;
            let _ = writeln!(
                out,
                r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{color}"/>"#,
                y_of(min),
                y_of(max)
            );
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{bw}" height="{}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>"#,
                x - bw / 2.0,
                y_of(q3),
                (y_of(q1) - y_of(q3)).max(0.5)
            );
            for (v, w) in [(med, bw), (min, bw / 2.0), (max, bw / 2.0)] {
                let _ = writeln!(
                    out,
                    r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#,
                    x - w / 2.0,
                    x + w / 2.0,
                    y = y_of(v)
                );
            }
        }
    }
    legend(&mut out, &instances);
    out.push_str("</svg>\n");
    out
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
