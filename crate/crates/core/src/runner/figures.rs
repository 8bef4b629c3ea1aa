//! Self-contained SVG output: preference heatmaps (episodes × categories,
//! black-to-white by concentration), entropy line charts per volatility
//! level, and a min/quartile/max whisker chart of the exploration scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::metrics::pairwise_exploration_scores;
use crate::preferences::MechanismKind;
use crate::runner::{volatility_label, RunRecord, RunnerError};

fn mechanism_color(kind: MechanismKind) -> &'static str {
    match kind {
        MechanismKind::BaselineG => "#d62728", // red
        MechanismKind::Pepper => "#1f77b4",    // blue
        MechanismKind::Nore => "#2ca02c",      // green
    }
}

fn svg_document(width: usize, height: usize, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n{body}</svg>\n"
    )
}

/// Grayscale heatmap of per-episode concentrations: rows are episodes,
/// columns are state categories, max concentration maps to white and min
/// to black.
pub fn heatmap_svg(concentrations: &[Vec<f64>], title: &str) -> String {
    let episodes = concentrations.len();
    let categories = concentrations.first().map_or(0, |c| c.len());
    let cell = 8usize;
    let margin = 24usize;
    let width = margin * 2 + categories * cell;
    let height = margin * 2 + episodes * cell;

    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for row in concentrations {
        for v in row {
            min = min.min(*v);
            max = max.max(*v);
        }
    }
    let span = if max > min { max - min } else { 1.0 };

    let mut body = String::new();
    body.push_str(&format!(
        "<title>{title}</title>\n<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    for (e, row) in concentrations.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let level = (255.0 * (v - min) / span).round().clamp(0.0, 255.0) as u8;
            body.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"#{level:02x}{level:02x}{level:02x}\"/>\n",
                margin + c * cell,
                margin + e * cell,
            ));
        }
    }
    body.push_str(&format!(
        "<text x=\"{margin}\" y=\"14\" font-size=\"11\" font-family=\"sans-serif\">{title}</text>\n"
    ));
    svg_document(width, height, &body)
}

/// Entropy-over-episodes line chart; one polyline per record.
pub fn entropy_chart_svg(records: &[&RunRecord], title: &str) -> String {
    let width = 420usize;
    let height = 260usize;
    let margin = 36usize;
    let plot_w = (width - 2 * margin) as f64;
    let plot_h = (height - 2 * margin) as f64;

    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut x_max = 1usize;
    for r in records {
        for h in &r.entropies {
            y_min = y_min.min(*h);
            y_max = y_max.max(*h);
        }
        x_max = x_max.max(r.entropies.len().saturating_sub(1).max(1));
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }

    let mut body = String::new();
    body.push_str(&format!(
        "<title>{title}</title>\n<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    // Axes.
    body.push_str(&format!(
        "<line x1=\"{margin}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>\n",
        height - margin,
        width - margin,
        height - margin
    ));
    body.push_str(&format!(
        "<line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{}\" stroke=\"#000000\"/>\n",
        height - margin
    ));
    for r in records {
        let pts: Vec<String> = r
            .entropies
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let x = margin as f64 + plot_w * i as f64 / x_max as f64;
                let y = margin as f64 + plot_h * (1.0 - (h - y_min) / (y_max - y_min));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        body.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            mechanism_color(r.mechanism),
            pts.join(" ")
        ));
    }
    body.push_str(&format!(
        "<text x=\"{margin}\" y=\"14\" font-size=\"11\" font-family=\"sans-serif\">{title}</text>\n\
         <text x=\"4\" y=\"{margin}\" font-size=\"9\" font-family=\"sans-serif\">{y_max:.2}</text>\n\
         <text x=\"4\" y=\"{}\" font-size=\"9\" font-family=\"sans-serif\">{y_min:.2}</text>\n",
        height - margin
    ));
    svg_document(width, height, &body)
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    (q(0.25), q(0.5), q(0.75))
}

/// Min/quartile/max whisker chart of consecutive-episode Hausdorff scores,
/// grouped by volatility level with one whisker per mechanism.
pub fn exploration_whiskers_svg(records: &[&RunRecord], title: &str) -> String {
    let width = 560usize;
    let height = 300usize;
    let margin = 40usize;
    let plot_h = (height - 2 * margin) as f64;

    // Group by (volatility label, mechanism) preserving record order.
    let mut groups: Vec<(String, MechanismKind, Vec<f64>)> = Vec::new();
    let mut y_max = f64::NEG_INFINITY;
    for r in records {
        if r.trajectories.len() < 2 {
            continue;
        }
        let mut scores = pairwise_exploration_scores(&r.trajectories).unwrap_or_default();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if let Some(last) = scores.last() {
            y_max = y_max.max(*last);
        }
        groups.push((volatility_label(r.reset_period).to_string(), r.mechanism, scores));
    }
    if !y_max.is_finite() || y_max <= 0.0 {
        y_max = 1.0;
    }

    let slot_w = (width - 2 * margin) as f64 / groups.len().max(1) as f64;
    let mut body = String::new();
    body.push_str(&format!(
        "<title>{title}</title>\n<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    body.push_str(&format!(
        "<line x1=\"{margin}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>\n",
        height - margin,
        width - margin,
        height - margin
    ));
    let to_y = |v: f64| margin as f64 + plot_h * (1.0 - v / y_max);
    for (i, (label, mech, scores)) in groups.iter().enumerate() {
        if scores.is_empty() {
            continue;
        }
        let x = margin as f64 + slot_w * (i as f64 + 0.5);
        let (q1, med, q3) = quartiles(scores);
        let (lo, hi) = (scores[0], *scores.last().unwrap());
        let color = mechanism_color(*mech);
        body.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"{color}\"/>\n",
            to_y(lo),
            to_y(hi)
        ));
        body.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.4\" stroke=\"{color}\"/>\n",
            x - 5.0,
            to_y(q3),
            (to_y(q1) - to_y(q3)).max(0.5)
        ));
        body.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            x - 6.0,
            to_y(med),
            x + 6.0,
            to_y(med)
        ));
        body.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" font-size=\"8\" font-family=\"sans-serif\" text-anchor=\"middle\">{label}</text>\n",
            x,
            height - margin + 12
        ));
    }
    body.push_str(&format!(
        "<text x=\"{margin}\" y=\"14\" font-size=\"11\" font-family=\"sans-serif\">{title}</text>\n"
    ));
    svg_document(width, height, &body)
}

/// Writes the full figure set for a collection of run records.
pub fn emit_figures(out_dir: &Path, records: &[RunRecord]) -> Result<(), RunnerError> {
    if records.is_empty() {
        return Err(RunnerError::Metrics(
            crate::metrics::MetricsError::TooFewTrajectories(0),
        ));
    }
    let fig_dir = out_dir.join("figures");
    fs::create_dir_all(&fig_dir)?;

    for record in records {
        let title = format!(
            "preferences {} {}",
            record.mechanism.label(),
            volatility_label(record.reset_period)
        );
        let svg = heatmap_svg(&record.concentrations, &title);
        fs::write(fig_dir.join(format!("heatmap_{}.svg", record.label())), svg)?;
    }

    // One entropy chart per volatility level present.
    let mut by_volatility: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for record in records {
        by_volatility
            .entry(volatility_label(record.reset_period).to_string())
            .or_default()
            .push(record);
    }
    for (label, group) in &by_volatility {
        let svg = entropy_chart_svg(group, &format!("preference entropy, volatility {label}"));
        let safe = label.replace('%', "pct");
        fs::write(fig_dir.join(format!("entropy_{safe}.svg")), svg)?;
    }

    let all: Vec<&RunRecord> = records.iter().collect();
    let svg = exploration_whiskers_svg(&all, "consecutive-episode Hausdorff distance");
    fs::write(fig_dir.join("exploration_whiskers.svg"), svg)?;
    Ok(())
}
