//! Static report emission from a sweep table: box-plot data per corruption
//! and per sharing set, a version-ordering summary, and the theta
//! sensitivity table, each as a CSV plus an SVG rendering. Every plotted
//! value is a Dice score from a sweep row, so reports are traceable to the
//! table by (version, shared, setting, seed).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::sweep::{table2_grid, SweepCell};

/// Default tolerance (in Dice points, on the 0-100 scale) for the version
/// ordering check.
pub const DEFAULT_ORDERING_EPSILON: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SweepTableRow {
    pub version: String,
    pub shared: String,
    pub setting: String,
    pub seed: u64,
    pub dice: f64,
    pub skipped: bool,
}

/// Minimal CSV splitter handling double-quoted fields.
fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    for ch in line.chars() {
        match ch {
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => out.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    out.push(cur);
    out
}

/// Reads the sweep CSV written by the sweep runner.
pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepTableRow>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() < 9 {
            return Err(Error::InvalidValue(format!(
                "sweep CSV line {} has {} fields, expected 9",
                i + 1,
                fields.len()
            )));
        }
        let skipped = !fields[8].trim().is_empty();
        rows.push(SweepTableRow {
            version: fields[0].clone(),
            shared: fields[1].clone(),
            setting: fields[2].clone(),
            seed: fields[3].parse().unwrap_or(0),
            dice: fields[4].parse().unwrap_or(f64::NAN),
            skipped,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct BoxStats {
    pub label: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn box_stats(label: &str, mut values: Vec<f64>) -> BoxStats {
    values.retain(|v| v.is_finite());
    values.sort_by(f64::total_cmp);
    BoxStats {
        label: label.to_string(),
        min: values.first().copied().unwrap_or(f64::NAN),
        q1: quantile(&values, 0.25),
        median: quantile(&values, 0.5),
        q3: quantile(&values, 0.75),
        max: values.last().copied().unwrap_or(f64::NAN),
        n: values.len(),
    }
}

fn write_box_csv(stats: &[BoxStats], group_name: &str, path: &Path) -> Result<()> {
    let mut text = format!("{group_name},n,min,q1,median,q3,max\n");
    for s in stats {
        text.push_str(&format!(
            "\"{}\",{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.label, s.n, s.min, s.q1, s.median, s.q3, s.max
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Hand-rolled SVG box plot; one box per group, Dice on the y-axis.
fn write_box_svg(stats: &[BoxStats], title: &str, path: &Path) -> Result<()> {
    let (w, h) = (80 + stats.len() * 90, 340);
    let (y0, y1) = (40.0, 280.0); // plot band in pixels
    let finite: Vec<&BoxStats> = stats.iter().filter(|s| s.n > 0).collect();
    let lo = finite.iter().map(|s| s.min).fold(f64::INFINITY, f64::min);
    let hi = finite.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (0.0, 1.0)
    };
    let span = (hi - lo).max(1e-9);
    let y = |v: f64| y1 - (v - lo) / span * (y1 - y0);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<text x=\"10\" y=\"20\" font-size=\"14\">{title}</text>\n"
    );
    svg.push_str(&format!(
        "<text x=\"6\" y=\"{:.1}\" font-size=\"10\">{:.3}</text><text x=\"6\" y=\"{:.1}\" font-size=\"10\">{:.3}</text>\n",
        y(hi) + 4.0,
        hi,
        y(lo) + 4.0,
        lo
    ));
    for (i, s) in stats.iter().enumerate() {
        let cx = 90.0 + i as f64 * 90.0;
        if s.n > 0 {
            let (bw, half) = (40.0, 20.0);
            svg.push_str(&format!(
                "<line x1=\"{cx}\" y1=\"{:.1}\" x2=\"{cx}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
                y(s.min),
                y(s.max)
            ));
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bw}\" height=\"{:.1}\" fill=\"#9ecae1\" stroke=\"black\"/>\n",
                cx - half,
                y(s.q3),
                (y(s.q1) - y(s.q3)).max(0.5)
            ));
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"2\"/>\n",
                cx - half,
                y(s.median),
                cx + half,
                y(s.median)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"300\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            cx, s.label
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub files: Vec<PathBuf>,
    /// Missing (version, shared, setting) cells relative to the full grid.
    pub missing: Vec<String>,
    /// Lines like "v1<=v2: 7/7 sharing sets (eps 0.5)".
    pub ordering_summary: Vec<String>,
}

fn cell_key(c: &SweepCell) -> (String, String, String) {
    (c.version.to_string(), c.shared.to_string(), c.setting())
}

/// Emits the report bundle next to the sweep table. Missing grid cells are
/// listed in a warning manifest while the remaining plots are still
/// produced.
pub fn emit_report(
    sweep_csv: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    epsilon_points: f64,
) -> Result<ReportBundle> {
    let rows = read_sweep_csv(&sweep_csv)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let live: Vec<&SweepTableRow> = rows.iter().filter(|r| !r.skipped).collect();
    let mut files = Vec::new();

    // Completeness against the canonical grid.
    let present: BTreeSet<(String, String, String)> = live
        .iter()
        .map(|r| (r.version.clone(), r.shared.clone(), r.setting.clone()))
        .collect();
    let missing: Vec<String> = table2_grid(0)
        .iter()
        .map(cell_key)
        .filter(|k| !present.contains(k))
        .map(|(v, l, s)| format!("{v} L={{{l}}} {s}"))
        .collect();
    if !missing.is_empty() {
        let path = out_dir.join("warnings.txt");
        std::fs::write(
            &path,
            missing
                .iter()
                .map(|m| format!("missing cell: {m}\n"))
                .collect::<String>(),
        )?;
        files.push(path);
    }

    // Box plots per corruption (multi-task versions only).
    let corruption_labels = ["none", "noise", "shuffle"];
    let corr_stats: Vec<BoxStats> = corruption_labels
        .iter()
        .map(|&c| {
            box_stats(
                c,
                live.iter()
                    .filter(|r| r.version != "v4" && r.setting == c)
                    .map(|r| r.dice)
                    .collect(),
            )
        })
        .collect();
    let p = out_dir.join("boxplot_corruption.csv");
    write_box_csv(&corr_stats, "corruption", &p)?;
    files.push(p);
    let p = out_dir.join("boxplot_corruption.svg");
    write_box_svg(&corr_stats, "Dice by reconstruction corruption", &p)?;
    files.push(p);

    // Box plots per sharing set.
    let shared_labels: Vec<String> = {
        let mut seen = BTreeSet::new();
        table2_grid(0)
            .iter()
            .filter_map(|c| {
                let l = c.shared.to_string();
                seen.insert(l.clone()).then_some(l)
            })
            .collect()
    };
    let shared_stats: Vec<BoxStats> = shared_labels
        .iter()
        .map(|l| {
            box_stats(
                l,
                live.iter()
                    .filter(|r| &r.shared == l && r.version != "v4")
                    .map(|r| r.dice)
                    .collect(),
            )
        })
        .collect();
    let p = out_dir.join("boxplot_shared.csv");
    write_box_csv(&shared_stats, "shared", &p)?;
    files.push(p);
    let p = out_dir.join("boxplot_shared.svg");
    write_box_svg(&shared_stats, "Dice by shared stages", &p)?;
    files.push(p);

    // Version-ordering summary: best setting per (version, L), compared
    // within epsilon (given in Dice points on the 0-100 scale).
    let best = |version: &str, shared: &str| -> Option<f64> {
        live.iter()
            .filter(|r| r.version == version && r.shared == shared)
            .map(|r| r.dice)
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            })
    };
    let eps = epsilon_points / 100.0;
    let mut ordering_summary = Vec::new();
    let mut ordering_csv = String::from("shared,v1,v2,v3,v4,v1_le_v2,v2_le_v3\n");
    let mut holds12 = 0usize;
    let mut holds23 = 0usize;
    let mut counted = 0usize;
    for l in &shared_labels {
        let (b1, b2, b3, b4) = (best("v1", l), best("v2", l), best("v3", l), best("v4", l));
        let le12 = match (b1, b2) {
            (Some(a), Some(b)) => {
                counted += 1;
                let ok = a <= b + eps;
                holds12 += ok as usize;
                ok.to_string()
            }
            _ => String::new(),
        };
        let le23 = match (b2, b3) {
            (Some(a), Some(b)) => {
                let ok = a <= b + eps;
                holds23 += ok as usize;
                ok.to_string()
            }
            _ => String::new(),
        };
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        ordering_csv.push_str(&format!(
            "\"{l}\",{},{},{},{},{le12},{le23}\n",
            f(b1),
            f(b2),
            f(b3),
            f(b4)
        ));
    }
    ordering_summary.push(format!(
        "v1<=v2: {holds12}/{counted} sharing sets (eps {epsilon_points} points)"
    ));
    ordering_summary.push(format!(
        "v2<=v3: {holds23}/{counted} sharing sets (eps {epsilon_points} points)"
    ));
    let p = out_dir.join("version_ordering.csv");
    std::fs::write(&p, ordering_csv)?;
    files.push(p);
    let p = out_dir.join("version_ordering.txt");
    std::fs::write(&p, ordering_summary.join("\n") + "\n")?;
    files.push(p);

    // Theta sensitivity: v4 Dice per (theta setting, L) plus a per-L box
    // over theta settings.
    let theta_settings = [
        "theta=0.1",
        "theta=0.2",
        "theta=0.3",
        "theta=0.4",
        "theta=0.5",
        "theta=learnable",
    ];
    let mut theta_csv = String::from("setting");
    for l in &shared_labels {
        theta_csv.push_str(&format!(",\"L={l}\""));
    }
    theta_csv.push('\n');
    for setting in theta_settings {
        theta_csv.push_str(setting);
        for l in &shared_labels {
            let v = live
                .iter()
                .find(|r| r.version == "v4" && &r.shared == l && r.setting == setting)
                .map(|r| format!("{:.6}", r.dice))
                .unwrap_or_default();
            theta_csv.push(',');
            theta_csv.push_str(&v);
        }
        theta_csv.push('\n');
    }
    let p = out_dir.join("theta_sensitivity.csv");
    std::fs::write(&p, theta_csv)?;
    files.push(p);
    let theta_stats: Vec<BoxStats> = shared_labels
        .iter()
        .map(|l| {
            box_stats(
                l,
                live.iter()
                    .filter(|r| r.version == "v4" && &r.shared == l)
                    .map(|r| r.dice)
                    .collect(),
            )
        })
        .collect();
    let p = out_dir.join("theta_sensitivity.svg");
    write_box_svg(&theta_stats, "v4 Dice by shared stages (over theta)", &p)?;
    files.push(p);

    Ok(ReportBundle {
        files,
        missing,
        ordering_summary,
    })
}
