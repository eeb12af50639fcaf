use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::pipeline::ErrorReport;
use crate::error::{Error, Result};
use crate::training::History;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Files written by [`plot_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct PlotOutputs {
    pub csv: PathBuf,
    pub svgs: Vec<PathBuf>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One named polyline.
struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

/// Static line chart; non-finite points and, on a log axis, non-positive values are dropped.
fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let keep = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!log_y || y > 0.0);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied().filter(keep))
        .map(|(x, y)| (x, ty(y)))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = if y0 == 0.0 { 1.0 } else { 0.05 * y0.abs() };
        y0 -= pad;
        y1 += pad;
    }
    let (l, r, t, b) = MARGIN;
    let (pw, ph) = (WIDTH - l - r, HEIGHT - t - b);
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| t + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let ylab = if log_y {
            format!("1e{yv:.1}")
        } else {
            format!("{yv:.3e}")
        };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3e}</text>"#,
            sx(xv),
            t + ph + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#,
            l - 4.0,
            sy(yv) + 4.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{t}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            sx(xv),
            sx(xv),
            t + ph
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        l + pw / 2.0,
        HEIGHT - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        t + ph / 2.0,
        t + ph / 2.0,
        escape(&if log_y {
            format!("log10 {ylabel}")
        } else {
            ylabel.to_string()
        })
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .copied()
            .filter(keep)
            .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(ty(y))))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = t + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            l + pw - 150.0,
            l + pw - 130.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            l + pw - 125.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

/// Write `<prefix>.csv` with one row per time step (columns `step,time`, then `h_`, `h_ref_`
/// and `err_` per test parameter) and SVG figures of the Hamiltonian traces and per-step errors.
/// A report without entries yields a header-only CSV.
pub fn plot_report(report: &ErrorReport, prefix: &Path) -> Result<PlotOutputs> {
    let csv_path = prefix.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    let mut header = vec!["step".to_string(), "time".to_string()];
    for e in &report.entries {
        header.extend([
            format!("h_{}", e.name),
            format!("h_ref_{}", e.name),
            format!("err_{}", e.name),
        ]);
    }
    w.write_record(&header).map_err(csv_err)?;
    let rows = report
        .entries
        .iter()
        .map(|e| e.hamiltonian.len())
        .max()
        .unwrap_or(0);
    let cell = |v: Option<&f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for i in 0..rows {
        let mut rec = vec![i.to_string(), format!("{:e}", i as f64 * report.dt)];
        for e in &report.entries {
            rec.extend([
                cell(e.hamiltonian.get(i)),
                cell(e.hamiltonian_ref.get(i)),
                cell(e.error_trace.get(i)),
            ]);
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;

    let time = |v: &[f64]| -> Vec<(f64, f64)> {
        v.iter()
            .enumerate()
            .map(|(i, &y)| (i as f64 * report.dt, y))
            .collect()
    };
    let mut h_series = Vec::new();
    let mut e_series = Vec::new();
    for e in &report.entries {
        h_series.push(Series {
            name: format!("{} reduced", e.name),
            points: time(&e.hamiltonian),
        });
        h_series.push(Series {
            name: format!("{} reference", e.name),
            points: time(&e.hamiltonian_ref),
        });
        e_series.push(Series {
            name: e.name.clone(),
            points: time(&e.error_trace),
        });
    }
    let stem = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let h_path = prefix.with_file_name(format!("{stem}_hamiltonian.svg"));
    let e_path = prefix.with_file_name(format!("{stem}_error.svg"));
    std::fs::write(
        &h_path,
        line_chart("Hamiltonian", "t", "H_c", &h_series, false),
    )?;
    std::fs::write(
        &e_path,
        line_chart("Relative error of q", "t", "error", &e_series, true),
    )?;
    Ok(PlotOutputs {
        csv: csv_path,
        svgs: vec![h_path, e_path],
    })
}

/// Weighted training losses and validation objective against the step.
pub fn write_history_svg(history: &History, path: &Path) -> Result<()> {
    let pick = |f: fn(&crate::training::HistoryRow) -> Option<f64>| -> Vec<(f64, f64)> {
        history
            .rows
            .iter()
            .filter_map(|r| f(r).map(|v| (r.step as f64, v)))
            .collect()
    };
    let series = [
        Series {
            name: "L_AE".into(),
            points: pick(|r| Some(r.weighted.ae)),
        },
        Series {
            name: "L_pred-red".into(),
            points: pick(|r| Some(r.weighted.pred_reduced)),
        },
        Series {
            name: "L_stab".into(),
            points: pick(|r| Some(r.weighted.stab)),
        },
        Series {
            name: "L_pred".into(),
            points: pick(|r| Some(r.weighted.pred)),
        },
        Series {
            name: "validation".into(),
            points: pick(|r| r.val),
        },
    ];
    std::fs::write(
        path,
        line_chart("Training losses (weighted)", "step", "loss", &series, true),
    )?;
    Ok(())
}

fn profile_chart(title: &str, x: &[f64], profiles: &[(String, Vec<f64>)]) -> String {
    let series: Vec<Series> = profiles
        .iter()
        .map(|(name, q)| Series {
            name: name.clone(),
            points: x.iter().copied().zip(q.iter().copied()).collect(),
        })
        .collect();
    line_chart(title, "x", "q", &series, false)
}

/// Overlay of solution profiles `q(x)`, e.g. reference and reduced states at chosen times.
pub fn write_profiles_svg(
    path: &Path,
    title: &str,
    x: &[f64],
    profiles: &[(String, Vec<f64>)],
) -> Result<()> {
    std::fs::write(path, profile_chart(title, x, profiles))?;
    Ok(())
}
