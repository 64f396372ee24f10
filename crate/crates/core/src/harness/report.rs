//! CSV tables and an SVG scatter of the Pareto front(s) for a run or
//! scaling-experiment directory.

use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};

use super::analysis::{pareto_front, points_from_records, ParetoPoint};
use super::scaling::{load_scaling, ScalingRow};
use super::{load_run, write_file, HarnessError};

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn table_rows(rows: &[ScalingRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.mean_speedup.to_string(),
                r.min_speedup.to_string(),
                r.max_speedup.to_string(),
                r.gain_pct.map(|g| g.to_string()).unwrap_or_default(),
            ]
        })
        .collect()
}

/// Writes `pareto.csv`, `speedup_table.csv` and `pareto.svg` into `dir`,
/// which must hold either a `run.json` or a `scaling.json`. Output depends
/// only on the stored artifacts, so repeated calls produce identical files.
pub fn emit_report(dir: &FsPath) -> Result<Vec<PathBuf>, HarnessError> {
    if !dir.is_dir() {
        return Err(HarnessError::Input(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let (series, pareto_csv, table) = if dir.join("scaling.json").is_file() {
        let s = load_scaling(dir)?;
        let series: Vec<(String, Vec<ParetoPoint>)> = s
            .series
            .iter()
            .map(|x| {
                (
                    format!("N={}", x.n),
                    pareto_front(&points_from_records(&x.records, s.baseline_latency)),
                )
            })
            .collect();
        let mut rows = Vec::new();
        for (x, (_, front)) in s.series.iter().zip(&series) {
            for p in front {
                rows.push(vec![
                    x.n.to_string(),
                    p.speedup.to_string(),
                    p.area.to_string(),
                    p.provenance.clone(),
                ]);
            }
        }
        (
            series.clone(),
            csv_bytes(&["n", "speedup", "area", "provenance"], rows),
            table_rows(&s.rows),
        )
    } else if dir.join("run.json").is_file() {
        let r = load_run(dir)?;
        let front = pareto_front(&points_from_records(&r.records, r.baseline_metrics.latency));
        let rows = front
            .iter()
            .map(|p| {
                vec![
                    p.speedup.to_string(),
                    p.area.to_string(),
                    p.provenance.clone(),
                ]
            })
            .collect();
        let s = r.speedup();
        let row = ScalingRow {
            n: r.config.agents_n,
            mean_speedup: s,
            min_speedup: s,
            max_speedup: s,
            best_latencies: vec![r.final_record.latency],
            gain_pct: None,
        };
        (
            vec![(format!("N={}", r.config.agents_n), front)],
            csv_bytes(&["speedup", "area", "provenance"], rows),
            table_rows(&[row]),
        )
    } else {
        return Err(HarnessError::Input(format!(
            "{} holds neither run.json nor scaling.json",
            dir.display()
        )));
    };

    let paths = [
        dir.join("pareto.csv"),
        dir.join("speedup_table.csv"),
        dir.join("pareto.svg"),
    ];
    write_file(&paths[0], &pareto_csv)?;
    write_file(
        &paths[1],
        &csv_bytes(
            &[
                "n",
                "mean_speedup",
                "min_speedup",
                "max_speedup",
                "gain_pct",
            ],
            table,
        ),
    )?;
    write_file(&paths[2], render_svg(&series).as_bytes())?;
    Ok(paths.to_vec())
}

/// Speedup-versus-area scatter with one coloured step line per series.
pub fn render_svg(series: &[(String, Vec<ParetoPoint>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const L: f64 = 70.0;
    const R: f64 = 120.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;
    let all: Vec<&ParetoPoint> = series.iter().flat_map(|(_, s)| s).collect();
    let (mut a0, mut a1) = (0.0f64, 1.0f64);
    let (mut s0, mut s1) = (0.0f64, 1.0f64);
    if !all.is_empty() {
        a0 = all
            .iter()
            .map(|p| p.area as f64)
            .fold(f64::INFINITY, f64::min);
        a1 = all
            .iter()
            .map(|p| p.area as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        s0 = all
            .iter()
            .map(|p| p.speedup)
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        s1 = all
            .iter()
            .map(|p| p.speedup)
            .fold(f64::NEG_INFINITY, f64::max);
    }
    // Pad degenerate ranges so single points sit mid-plot.
    if a1 - a0 < 1.0 {
        a0 -= 1.0;
        a1 += 1.0;
    }
    if s1 - s0 < 1e-9 {
        s0 -= 0.5;
        s1 += 0.5;
    }
    let x = |a: f64| L + (a - a0) / (a1 - a0) * (W - L - R);
    let y = |s: f64| H - B - (s - s0) / (s1 - s0) * (H - T - B);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{L},{T} V{} H{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (av, sv) = (a0 + f * (a1 - a0), s0 + f * (s1 - s0));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#,
            x(av),
            H - B + 16.0,
            av
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            L - 6.0,
            y(sv) + 4.0,
            sv
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">area</text>"#,
        (L + W - R) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">speedup over baseline</text>"#,
        (T + H - B) / 2.0
    );
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if pts.len() > 1 {
            let mut d = String::new();
            for (i, p) in pts.iter().enumerate() {
                let (px, py) = (x(p.area as f64), y(p.speedup));
                if i == 0 {
                    let _ = write!(d, "M{px:.1},{py:.1}");
                } else {
                    let _ = write!(d, " H{px:.1} V{py:.1}");
                }
            }
            let _ = writeln!(
                out,
                r#"<path d="{d}" fill="none" stroke="{color}" stroke-opacity="0.6"/>"#
            );
        }
        for p in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"><title>{}</title></circle>"#,
                x(p.area as f64),
                y(p.speedup),
                p.provenance
            );
        }
        let ly = T + 10.0 + 18.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{ly}" r="4" fill="{color}"/>"#,
            W - R + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{label}</text>"#,
            W - R + 30.0,
            ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}
