use std::collections::BTreeMap;
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ReportError, Result};
use crate::lm::TrainHistory;

const GROUPS: [&str; 3] = ["all", "boilerplate", "reasoning"];
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// One point of a long-format loss table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub scheme: String,
    pub group: String,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCurves {
    pub rows: Vec<CurveRow>,
    pub warnings: Vec<String>,
}

type Series = BTreeMap<String, Vec<(usize, f64)>>;

fn series_of(h: &TrainHistory) -> Series {
    let mut s = Series::new();
    for r in h.rows.iter().filter(|r| r.split == "train") {
        s.entry(r.group.clone())
            .or_default()
            .push((r.step, r.mean_loss));
    }
    for points in s.values_mut() {
        points.sort_by_key(|p| p.0);
    }
    s
}

fn legend_labels(histories: &[&TrainHistory]) -> Vec<String> {
    let scheme = |h: &TrainHistory| {
        h.rows
            .first()
            .map(|r| r.scheme.to_uppercase())
            .unwrap_or_default()
    };
    let param = |h: &TrainHistory| {
        h.rows
            .first()
            .map(|r| r.tau_or_alpha.clone())
            .unwrap_or_default()
    };
    let mut labels: Vec<String> = histories.iter().map(|h| scheme(h)).collect();
    let dup = |labels: &[String], i: usize| labels.iter().filter(|l| **l == labels[i]).count() > 1;
    let detailed: Vec<String> = (0..labels.len())
        .map(|i| {
            if dup(&labels, i) && !param(histories[i]).is_empty() {
                format!("{} {}", labels[i], param(histories[i]))
            } else {
                labels[i].clone()
            }
        })
        .collect();
    labels = detailed;
    (0..labels.len())
        .map(|i| {
            if dup(&labels, i) {
                format!("{} #{}", labels[i], i + 1)
            } else {
                labels[i].clone()
            }
        })
        .collect()
}

/// Linear interpolation of `points` at `step`; `None` outside their range.
fn interpolate(points: &[(usize, f64)], step: usize) -> Option<f64> {
    let i = points.partition_point(|p| p.0 < step);
    let hi = points.get(i)?;
    if hi.0 == step {
        return Some(hi.1);
    }
    let lo = points.get(i.checked_sub(1)?)?;
    let t = (step - lo.0) as f64 / (hi.0 - lo.0) as f64;
    Some(lo.1 + t * (hi.1 - lo.1))
}

/// Long-format loss table over several runs, labelled by scheme. Runs logged
/// on different step grids are resampled onto the coarsest one, with a
/// warning.
pub fn loss_curves(histories: &[&TrainHistory]) -> Result<LossCurves> {
    let labels = legend_labels(histories);
    let named: Vec<(&str, &TrainHistory)> = labels
        .iter()
        .map(String::as_str)
        .zip(histories.iter().copied())
        .collect();
    loss_curves_named(&named)
}

/// [`loss_curves`] with caller-chosen series names, which must be distinct.
pub fn loss_curves_named(named: &[(&str, &TrainHistory)]) -> Result<LossCurves> {
    if named.is_empty() {
        return Err(ReportError::Input(
            "loss_curves needs at least one history".into(),
        ));
    }
    for (i, (name, _)) in named.iter().enumerate() {
        if named[..i].iter().any(|(n, _)| n == name) {
            return Err(ReportError::Input(format!(
                "series name `{name}` is used twice"
            )));
        }
    }
    let histories: Vec<&TrainHistory> = named.iter().map(|(_, h)| *h).collect();
    let series: Vec<Series> = histories.iter().map(|h| series_of(h)).collect();
    for (i, s) in series.iter().enumerate() {
        if s.is_empty() {
            return Err(ReportError::Input(format!(
                "history {} has no training rows",
                i + 1
            )));
        }
    }
    let grid = |s: &Series| -> Vec<usize> {
        s.values()
            .next()
            .expect("non-empty")
            .iter()
            .map(|p| p.0)
            .collect()
    };
    let grids: Vec<Vec<usize>> = series.iter().map(grid).collect();
    let coarsest = (0..grids.len())
        .min_by_key(|&i| grids[i].len())
        .expect("non-empty");
    let uniform = grids.iter().all(|g| *g == grids[0]);
    let mut warnings = Vec::new();
    if !uniform {
        let msg = format!(
            "histories use different logging grids; resampled onto the {}-point grid of history {}",
            grids[coarsest].len(),
            coarsest + 1
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut rows = Vec::new();
    for ((label, _), s) in named.iter().zip(&series) {
        for group in GROUPS {
            let Some(points) = s.get(group) else { continue };
            if uniform {
                rows.extend(points.iter().map(|&(step, loss)| CurveRow {
                    step,
                    scheme: label.to_string(),
                    group: group.into(),
                    loss,
                }));
            } else {
                rows.extend(grids[coarsest].iter().filter_map(|&step| {
                    interpolate(points, step).map(|loss| CurveRow {
                        step,
                        scheme: label.to_string(),
                        group: group.into(),
                        loss,
                    })
                }));
            }
        }
    }
    Ok(LossCurves { rows, warnings })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn unescape(s: &str) -> String {
    s.replace("&quot;", "\"")
        .replace("&gt;", ">")
        .replace("&lt;", "<")
        .replace("&amp;", "&")
}

impl LossCurves {
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(["step", "scheme", "group", "loss"])
                .expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Vec<CurveRow>> {
        Ok(csv::Reader::from_reader(bytes)
            .deserialize()
            .collect::<std::result::Result<_, _>>()?)
    }

    /// Line plot drawn from `rows` alone: one polyline per (scheme, group),
    /// colour by scheme, dash pattern by group. Every point is also a
    /// `circle` carrying its table row in `data-*` attributes.
    pub fn to_svg(&self) -> String {
        let mut schemes: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !schemes.contains(&r.scheme.as_str()) {
                schemes.push(&r.scheme);
            }
        }
        let (mut x0, mut x1) = (usize::MAX, 0usize);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in &self.rows {
            x0 = x0.min(r.step);
            x1 = x1.max(r.step);
            y0 = y0.min(r.loss);
            y1 = y1.max(r.loss);
        }
        if self.rows.is_empty() {
            (x0, x1, y0, y1) = (0, 1, 0.0, 1.0);
        }
        let y1 = if y1 > y0 { y1 } else { y0 + 1.0 };
        let x_span = (x1.max(x0 + 1) - x0) as f64;
        let px = |step: usize| MARGIN + (step - x0) as f64 / x_span * (WIDTH - 2.0 * MARGIN);
        let py = |loss: f64| HEIGHT - MARGIN - (loss - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r#"<path d="M{left} {top} V{bottom} H{right}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="{}" text-anchor="middle">{x0}</text>"#,
            bottom + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{right}" y="{}" text-anchor="middle">{x1}</text>"#,
            bottom + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{bottom}" text-anchor="end">{y0:.3}</text>"#,
            left - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#,
            left - 4.0,
            top + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">loss</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0
        );

        for (si, scheme) in schemes.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            for (gi, group) in GROUPS.iter().enumerate() {
                let pts: Vec<&CurveRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.scheme == *scheme && r.group == *group)
                    .collect();
                if pts.is_empty() {
                    continue;
                }
                let dash = ["none", "6 3", "2 2"][gi];
                let coords: Vec<String> = pts
                    .iter()
                    .map(|r| format!("{:.2},{:.2}", px(r.step), py(r.loss)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline data-scheme="{}" data-group="{group}" fill="none" stroke="{color}" stroke-dasharray="{dash}" points="{}"/>"#,
                    escape(scheme),
                    coords.join(" ")
                );
                for r in pts {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" data-step="{}" data-loss="{}" data-scheme="{}" data-group="{}"/>"#,
                        px(r.step),
                        py(r.loss),
                        r.step,
                        r.loss,
                        escape(&r.scheme),
                        r.group
                    );
                }
            }
        }

        for (si, scheme) in schemes.iter().enumerate() {
            let y = top + 14.0 * si as f64;
            let color = COLORS[si % COLORS.len()];
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}"/><text class="legend" x="{}" y="{}">{}</text>"#,
                right - 120.0,
                right - 100.0,
                right - 96.0,
                y + 4.0,
                escape(scheme)
            );
        }
        for (gi, group) in GROUPS.iter().enumerate() {
            let y = top + 14.0 * (schemes.len() + gi) as f64 + 6.0;
            let dash = ["none", "6 3", "2 2"][gi];
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="gray" stroke-dasharray="{dash}"/><text class="legend-group" x="{}" y="{}">{group}</text>"#,
                right - 120.0,
                right - 100.0,
                right - 96.0,
                y + 4.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Reads back the data points of an SVG written by [`LossCurves::to_svg`].
pub fn parse_svg_points(svg: &str) -> Result<Vec<CurveRow>> {
    let re = Regex::new(r#"<circle [^>]*data-step="(\d+)" data-loss="([^"]+)" data-scheme="([^"]*)" data-group="([^"]*)"/>"#)
        .expect("valid pattern");
    re.captures_iter(svg)
        .map(|c| {
            Ok(CurveRow {
                step: c[1]
                    .parse()
                    .map_err(|e| ReportError::Input(format!("svg step: {e}")))?,
                loss: c[2]
                    .parse()
                    .map_err(|e| ReportError::Input(format!("svg loss: {e}")))?,
                scheme: unescape(&c[3]),
                group: unescape(&c[4]),
            })
        })
        .collect()
}
