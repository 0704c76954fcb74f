// SPDX-License-Identifier: MIT OR Apache-2.0

//! Summary tables and loss-curve plots assembled from earlier artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context as _};
use cause_core::training::AblationMode;
use serde::Deserialize;

use crate::artifacts::{write_file, Context};
use crate::commands::EvalSummary;

#[derive(Debug, Deserialize)]
struct CcmrScores {
    ccmr: f64,
    pct_gen: f64,
    composite: f64,
}

#[derive(Default)]
struct Row {
    eval: Option<EvalSummary>,
    ccmr: Option<CcmrScores>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v = serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(v))
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", x * scale))
}

pub fn report(ctx: &Context, svg: bool) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    let untrained: Option<EvalSummary> = read_json(&ctx.report("eval-untrained.json"))?;
    if let Some(e) = untrained {
        rows.push(("untrained".to_string(), Row { eval: Some(e), ccmr: None }));
    }
    for mode in AblationMode::ALL {
        let flag = mode.flag();
        let row = Row {
            eval: read_json(&ctx.report(&format!("eval-{flag}.json")))?,
            ccmr: read_json(&ctx.report(&format!("ccmr-{flag}.json")))?,
        };
        if row.eval.is_some() || row.ccmr.is_some() {
            rows.push((flag.to_string(), row));
        }
    }
    if rows.is_empty() {
        bail!(
            "missing prerequisite artifact: no eval-*.json or ccmr-*.json in {}; run `cause eval` or `cause ccmr` first",
            ctx.report_dir.display()
        );
    }

    let header = ["mode", "F1", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "overlap", "CCMR", "% gen.", "composite"];
    let mut md = String::new();
    writeln!(md, "# Summary\n")?;
    writeln!(
        md,
        "config hash `{}`, seed {}, format version {}\n",
        ctx.provenance.config_hash, ctx.provenance.seed, ctx.provenance.format_version
    )?;
    writeln!(md, "| {} |", header.join(" | "))?;
    writeln!(md, "|{}", "---|".repeat(header.len()))?;
    let mut csv = ctx.csv_preamble();
    writeln!(csv, "{}", header.join(","))?;
    for (name, row) in &rows {
        let e = row.eval.as_ref();
        let c = row.ccmr.as_ref();
        let cells = [
            cell(e.map(|e| e.simulation_macro_f1), 100.0),
            cell(e.map(|e| e.bleu[0]), 100.0),
            cell(e.map(|e| e.bleu[1]), 100.0),
            cell(e.map(|e| e.bleu[2]), 100.0),
            cell(e.map(|e| e.bleu[3]), 100.0),
            cell(e.map(|e| e.overlap_score), 100.0),
            cell(c.map(|c| c.ccmr), 1.0),
            cell(c.map(|c| c.pct_gen), 1.0),
            cell(c.map(|c| c.composite), 1.0),
        ];
        writeln!(md, "| {name} | {} |", cells.join(" | "))?;
        writeln!(csv, "{name},{}", cells.join(","))?;
    }
    writeln!(
        md,
        "\nAll scores in percent. F1 is the simulation macro-F1 against the classifier. \
         \"overlap\" is a token-bag F1 against the gold explanations (stands in for BERTScore)."
    )?;
    write_file(&ctx.report("summary.md"), md.as_bytes())?;
    write_file(&ctx.report("summary.csv"), csv.as_bytes())?;
    println!("{md}");

    if svg {
        for mode in AblationMode::ALL {
            let flag = mode.flag();
            let path = ctx.report(&format!("history-{flag}.csv"));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let (names, series) = parse_history(&text).with_context(|| format!("parsing {}", path.display()))?;
            let out = ctx.report(&format!("loss-{flag}.svg"));
            write_file(&out, loss_svg(&format!("explainer losses ({flag})"), &names, &series).as_bytes())?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

/// Column names (without `step`) and per-column values of a history CSV.
fn parse_history(text: &str) -> anyhow::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().context("empty history")?;
    let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let mut series = vec![Vec::new(); names.len()];
    for line in lines {
        for (col, v) in line.split(',').skip(1).enumerate() {
            if let Some(s) = series.get_mut(col) {
                s.push(v.trim().parse::<f64>().with_context(|| format!("bad value `{v}`"))?);
            }
        }
    }
    Ok((names, series))
}

const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Line plot of several series sharing a step axis, on a log10 y scale.
fn loss_svg(title: &str, names: &[String], series: &[Vec<f64>]) -> String {
    let (w, h, pad) = (720.0, 400.0, 50.0);
    let floor = 1e-8_f64;
    let logs: Vec<Vec<f64>> = series
        .iter()
        .map(|s| s.iter().map(|v| v.max(floor).log10()).collect())
        .collect();
    let all = logs.iter().flatten().copied();
    let lo = all.clone().fold(f64::INFINITY, f64::min).floor();
    let hi = all.fold(f64::NEG_INFINITY, f64::max).ceil().max(lo + 1.0);
    let steps = series.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (steps - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<polyline points="{pad},{pad} {pad},{} {},{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad
    );
    for e in lo as i64..=hi as i64 {
        let yy = y(e as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{pad}" y1="{yy:.1}" x2="{}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"##,
            w - pad,
            pad - 4.0,
            yy + 4.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, w / 2.0, h - 12.0);
    for (k, (name, vals)) in names.iter().zip(&logs).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let stride = vals.len().div_ceil(600).max(1);
        let pts: Vec<String> = vals
            .iter()
            .enumerate()
            .step_by(stride)
            .map(|(i, v)| format!("{:.1},{:.1}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            pts.join(" ")
        );
        let ly = pad + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}" fill="{color}">{name}</text>"#,
            w - pad - 60.0
        );
    }
    s.push_str("</svg>\n");
    s
}
