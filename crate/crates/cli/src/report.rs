//! Report emission: leaderboards, verdict files and permutation
//! profiles.
//!
//! Output is byte-deterministic for identical inputs: no timestamps, no
//! randomness, fixed float formatting. Every aggregate report embeds the
//! run manifest hashes it was built from, since a leakage claim is only
//! as good as its reproduction recipe.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use benchleak_core::detect::{AuditSummary, Label, Scenario, Verdict};
use benchleak_core::leaderboard::{LeaderboardRow, PermProfile};

/// Write verdicts as one JSON object per line, in input order.
pub fn write_verdicts_jsonl(path: &Path, verdicts: &[Verdict]) -> io::Result<()> {
    let mut out = String::new();
    for v in verdicts {
        out.push_str(&serde_json::to_string(v).expect("verdict serializes"));
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn read_verdicts_jsonl(path: &Path) -> io::Result<Vec<Verdict>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Verdict = serde_json::from_str(line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), idx + 1),
            )
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_summary_json(path: &Path, summary: &AuditSummary) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    fs::write(path, text)
}

pub fn read_summary_json(path: &Path) -> io::Result<AuditSummary> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: {e}", path.display()),
        )
    })
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.3}"),
        None => String::from(""),
    }
}

/// CSV board: model,dataset,pct_a,pct_b,n_scored,n_skipped,delta plus a
/// trailing manifest column for reproducibility.
pub fn leaderboard_csv(rows: &[LeaderboardRow]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "model",
        "dataset",
        "pct_a",
        "pct_b",
        "n_scored",
        "n_skipped",
        "delta",
        "manifest",
    ])
    .expect("write header");
    for r in rows {
        wtr.write_record([
            r.model_id.as_str(),
            r.dataset.as_str(),
            &fmt_pct(r.pct_leaked_a),
            &fmt_pct(r.pct_leaked_b),
            &r.items_scored.to_string(),
            &r.items_skipped.to_string(),
            r.delta.as_str(),
            r.manifest_hash.as_deref().unwrap_or(""),
        ])
        .expect("write row");
    }
    String::from_utf8(wtr.into_inner().expect("flush csv")).expect("csv is utf-8")
}

pub fn leaderboard_json(rows: &[LeaderboardRow]) -> String {
    let mut text = serde_json::to_string_pretty(rows).expect("rows serialize");
    text.push('\n');
    text
}

fn md_escape(text: &str) -> String {
    text.replace('|', "\\|")
}

pub fn leaderboard_markdown(rows: &[LeaderboardRow]) -> String {
    let mut out = String::new();
    out.push_str("| model | dataset | pct_a | pct_b | scored | skipped | delta | manifest |\n");
    out.push_str("|---|---|---:|---:|---:|---:|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            md_escape(&r.model_id),
            md_escape(&r.dataset),
            fmt_pct(r.pct_leaked_a),
            fmt_pct(r.pct_leaked_b),
            r.items_scored,
            r.items_skipped,
            md_escape(&r.delta),
            r.manifest_hash.as_deref().unwrap_or("")
        );
    }
    out
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bar chart of scenario-B leakage with scenario-A markers.
pub fn leaderboard_svg(rows: &[LeaderboardRow]) -> String {
    const ROW_H: f64 = 26.0;
    const LEFT: f64 = 220.0;
    const BAR_W: f64 = 420.0;
    const TOP: f64 = 56.0;
    let height = TOP + rows.len() as f64 * ROW_H + 30.0;
    let width = LEFT + BAR_W + 120.0;
    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="monospace" font-size="12">"##
    );
    let _ = write!(
        svg,
        r##"<text x="16" y="24" font-size="15">benchmark leakage leaderboard (sorted by scenario b)</text>"##
    );
    let _ = write!(
        svg,
        r##"<text x="16" y="42" fill="#555">bar: pct leaked (scenario b) | diamond: pct leaked (scenario a)</text>"##
    );
    for (i, r) in rows.iter().enumerate() {
        let y = TOP + i as f64 * ROW_H;
        let pct_b = r.pct_leaked_b.unwrap_or(0.0).clamp(0.0, 1.0);
        let pct_a = r.pct_leaked_a.unwrap_or(0.0).clamp(0.0, 1.0);
        let bar = pct_b * BAR_W;
        let _ = write!(
            svg,
            r##"<text x="{x:.1}" y="{ty:.1}" text-anchor="end">{name}</text>"##,
            x = LEFT - 8.0,
            ty = y + 13.0,
            name = xml_escape(&r.model_id)
        );
        let _ = write!(
            svg,
            r##"<rect x="{LEFT:.1}" y="{y:.1}" width="{bar:.2}" height="16" fill="#4878a8" data-model="{name}" data-pct-b="{pct_b:.4}"/>"##,
            name = xml_escape(&r.model_id)
        );
        let ax = LEFT + pct_a * BAR_W;
        let ay = y + 8.0;
        let _ = write!(
            svg,
            r##"<path d="M {x0:.2} {ay:.1} l 5 -5 l 5 5 l -5 5 z" fill="#d08030" data-pct-a="{pct_a:.4}"/>"##,
            x0 = ax - 5.0
        );
        let _ = write!(
            svg,
            r##"<text x="{tx:.1}" y="{ty:.1}" fill="#333">{label}</text>"##,
            tx = LEFT + BAR_W + 8.0,
            ty = y + 13.0,
            label = format_args!("b={pct_b:.3} a={pct_a:.3}")
        );
    }
    let manifests: Vec<&str> = rows
        .iter()
        .filter_map(|r| r.manifest_hash.as_deref())
        .collect();
    if !manifests.is_empty() {
        let joined = manifests
            .iter()
            .map(|m| &m[..m.len().min(12)])
            .collect::<Vec<_>>()
            .join(",");
        let _ = write!(
            svg,
            r##"<text x="16" y="{y:.1}" fill="#888" font-size="10">manifests: {joined}</text>"##,
            y = height - 10.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Dot-line plot of log probability versus permutation id, identity and
/// maximum highlighted.
pub fn profile_svg(profile: &PermProfile, manifest_hash: Option<&str>) -> String {
    const W: f64 = 860.0;
    const H: f64 = 460.0;
    const L: f64 = 76.0;
    const R: f64 = 24.0;
    const T: f64 = 48.0;
    const B: f64 = 64.0;
    let plot_w = W - L - R;
    let plot_h = H - T - B;
    let n = profile.points.len().max(1);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in &profile.points {
        lo = lo.min(p.logprob);
        hi = hi.max(p.logprob);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = (hi - lo) * 0.08;
    lo -= pad;
    hi += pad;

    let x = |i: usize| -> f64 {
        if n == 1 {
            L + plot_w / 2.0
        } else {
            L + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y = |v: f64| -> f64 { T + plot_h * (1.0 - (v - lo) / (hi - lo)) };

    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0}" height="{H:.0}" viewBox="0 0 {W:.0} {H:.0}" font-family="monospace" font-size="12">"##
    );
    let scenario = match profile.scenario {
        Scenario::A => "a",
        Scenario::B => "b",
    };
    let label = match profile.label {
        Label::Leaked => "L",
        Label::NotLeaked => "NL",
    };
    let delta = profile
        .delta
        .map(|d| format!(" delta={d}"))
        .unwrap_or_default();
    let _ = write!(
        svg,
        r##"<text x="16" y="24" font-size="15">item {} | scenario {scenario} | verdict {label}{delta}</text>"##,
        xml_escape(&profile.item_id)
    );

    // Axes.
    let _ = write!(
        svg,
        r##"<line x1="{L:.1}" y1="{t:.1}" x2="{L:.1}" y2="{b:.1}" stroke="#333"/>"##,
        t = T,
        b = T + plot_h
    );
    let _ = write!(
        svg,
        r##"<line x1="{L:.1}" y1="{b:.1}" x2="{r:.1}" y2="{b:.1}" stroke="#333"/>"##,
        b = T + plot_h,
        r = L + plot_w
    );
    for tick in 0..=4 {
        let v = lo + (hi - lo) * f64::from(tick) / 4.0;
        let ty = y(v);
        let _ = write!(
            svg,
            r##"<line x1="{x0:.1}" y1="{ty:.2}" x2="{L:.1}" y2="{ty:.2}" stroke="#333"/><text x="{tx:.1}" y="{ly:.2}" text-anchor="end" font-size="10">{v:.2}</text>"##,
            x0 = L - 4.0,
            tx = L - 8.0,
            ly = ty + 3.0
        );
    }
    let step = (n / 8).max(1);
    for (i, p) in profile.points.iter().enumerate() {
        if i % step == 0 || i == n - 1 {
            let _ = write!(
                svg,
                r##"<text x="{tx:.2}" y="{ty:.1}" text-anchor="middle" font-size="10">{id}</text>"##,
                tx = x(i),
                ty = T + plot_h + 16.0,
                id = p.perm_id
            );
        }
    }
    let _ = write!(
        svg,
        r##"<text x="{tx:.1}" y="{ty:.1}" text-anchor="middle">permutation id</text>"##,
        tx = L + plot_w / 2.0,
        ty = H - 26.0
    );
    let _ = write!(
        svg,
        r##"<text x="18" y="{ty:.1}" transform="rotate(-90 18 {ty:.1})" text-anchor="middle">log probability</text>"##,
        ty = T + plot_h / 2.0
    );

    // Dot-line series.
    let mut path = String::new();
    for (i, p) in profile.points.iter().enumerate() {
        let _ = write!(
            path,
            "{}{:.2},{:.2}",
            if i == 0 { "M " } else { " L " },
            x(i),
            y(p.logprob)
        );
    }
    let _ = write!(svg, r##"<path d="{path}" fill="none" stroke="#4878a8"/>"##);
    for (i, p) in profile.points.iter().enumerate() {
        let is_max = p.perm_id == profile.max_perm_id;
        let is_identity = p.perm_id == 0;
        let class = if is_max {
            "max"
        } else if is_identity {
            "identity"
        } else {
            "point"
        };
        let fill = if is_max {
            "#c03428"
        } else if is_identity {
            "#2a7a2a"
        } else {
            "#4878a8"
        };
        let radius = if is_max { 5.0 } else { 3.0 };
        let ds = p
            .decision_score
            .map(|d| format!(r##" data-decision="{d:.6}""##))
            .unwrap_or_default();
        let _ = write!(
            svg,
            r##"<circle class="{class}" data-perm="{id}" cx="{cx:.2}" cy="{cy:.2}" r="{radius}" fill="{fill}"{ds}/>"##,
            id = p.perm_id,
            cx = x(i),
            cy = y(p.logprob)
        );
        if is_max {
            let _ = write!(
                svg,
                r##"<text x="{tx:.2}" y="{ty:.2}" font-size="10" fill="#c03428">max perm {id}</text>"##,
                tx = x(i) + 8.0,
                ty = y(p.logprob) - 8.0,
                id = p.perm_id
            );
        }
    }
    let _ = write!(
        svg,
        r##"<text x="16" y="40" fill="#555" font-size="10">green: identity (perm 0) | red: maximum</text>"##
    );
    if let Some(hash) = manifest_hash {
        let _ = write!(
            svg,
            r##"<text x="16" y="{ty:.1}" fill="#888" font-size="10">manifest {hash}</text>"##,
            ty = H - 8.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write the board in every format under `dir`.
pub fn emit_leaderboard(rows: &[LeaderboardRow], dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("leaderboard.csv"), leaderboard_csv(rows))?;
    fs::write(dir.join("leaderboard.json"), leaderboard_json(rows))?;
    fs::write(dir.join("leaderboard.md"), leaderboard_markdown(rows))?;
    fs::write(dir.join("leaderboard.svg"), leaderboard_svg(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use benchleak_core::detect::DiagRow;

    fn row(model: &str, a: f64, b: f64) -> LeaderboardRow {
        LeaderboardRow {
            model_id: model.into(),
            dataset: "bench".into(),
            pct_leaked_a: Some(a),
            pct_leaked_b: Some(b),
            items_scored: 100,
            items_skipped: 0,
            delta: "fixed(-0.2)".into(),
            manifest_hash: Some("abcdef0123456789".into()),
        }
    }

    #[test]
    fn csv_has_the_documented_columns() {
        let text = leaderboard_csv(&[row("m1", 0.042, 0.421)]);
        let mut lines = text.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("model,dataset,pct_a,pct_b,n_scored,n_skipped,delta"));
        assert!(lines
            .next()
            .unwrap()
            .starts_with("m1,bench,0.042,0.421,100,0,"));
    }

    #[test]
    fn markdown_round_trips_three_decimals() {
        let text = leaderboard_markdown(&[row("m1", 0.0421337, 0.25)]);
        let data_line = text.lines().nth(2).unwrap();
        let cells: Vec<&str> = data_line.split('|').map(str::trim).collect();
        assert_eq!(cells[3].parse::<f64>().unwrap(), 0.042);
        assert_eq!(cells[4].parse::<f64>().unwrap(), 0.250);
    }

    #[test]
    fn emission_is_deterministic() {
        let rows = vec![row("m1", 0.1, 0.4), row("m2", 0.0, 0.2)];
        assert_eq!(leaderboard_csv(&rows), leaderboard_csv(&rows));
        assert_eq!(leaderboard_svg(&rows), leaderboard_svg(&rows));
        assert_eq!(leaderboard_markdown(&rows), leaderboard_markdown(&rows));
        assert_eq!(leaderboard_json(&rows), leaderboard_json(&rows));
    }

    #[test]
    fn profile_svg_marks_the_outlier_max() {
        let points: Vec<DiagRow> = (0..24)
            .map(|i| DiagRow {
                perm_id: i,
                logprob: if i == 19 {
                    -45.9
                } else {
                    -54.0 - 0.05 * f64::from(i)
                },
                decision_score: Some(if i == 19 { -0.38 } else { 0.02 }),
            })
            .collect();
        let profile = PermProfile {
            item_id: "case".into(),
            scenario: Scenario::B,
            label: Label::Leaked,
            max_perm_id: 19,
            delta: Some(-0.2),
            points,
        };
        let svg = profile_svg(&profile, Some("deadbeef"));
        assert!(svg.contains(r##"class="max" data-perm="19""##));
        assert!(svg.contains(r##"class="identity" data-perm="0""##));
        assert!(svg.contains("manifest deadbeef"));
        assert!(svg.contains("verdict L"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
