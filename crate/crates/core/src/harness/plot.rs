//! PNG charts from `metrics.csv`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use plotters::prelude::*;
use thiserror::Error;

use super::metrics::{read_csv, MetricsRow};

const SIZE: (u32, u32) = (960, 540);
const FONT: &str = "sans-serif";
const FONT_CANDIDATES: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/System/Library/Fonts/Supplemental/Arial.ttf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Scheduled CPU per worker, percent.
    CpuPerWorker,
    /// Scheduled minus measured CPU per worker, percentage points.
    Error,
    /// Target and active workers with ideal bins.
    Workers,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::CpuPerWorker, PlotKind::Error, PlotKind::Workers];

    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::CpuPerWorker => "cpu_per_worker",
            PlotKind::Error => "error",
            PlotKind::Workers => "workers",
        }
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown plot kind {s:?}; expected cpu_per_worker, error or workers"))
    }
}

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot read metrics: {0}")]
    Csv(#[from] csv::Error),
    #[error("metrics file has no rows")]
    Empty,
    #[error("drawing failed: {0}")]
    Draw(String),
}

fn draw_err<E: std::fmt::Display>(e: E) -> PlotError {
    PlotError::Draw(e.to_string())
}

/// Registers a TrueType font once; without one, charts are drawn unlabeled.
fn font_ready() -> bool {
    static READY: OnceLock<bool> = OnceLock::new();
    *READY.get_or_init(|| {
        let env = std::env::var("STREAMBIN_FONT").ok();
        for path in env.iter().map(String::as_str).chain(FONT_CANDIDATES) {
            if let Ok(bytes) = std::fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font(FONT, FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        false
    })
}

/// One series per name, sorted by name.
fn series(rows: &[MetricsRow], value: impl Fn(&MetricsRow) -> f64) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.worker_id.is_empty()) {
        out.entry(r.worker_id.clone()).or_default().push((r.t, value(r)));
    }
    out
}

fn cluster_series(rows: &[MetricsRow]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut per_t: BTreeMap<u64, &MetricsRow> = BTreeMap::new();
    for r in rows {
        per_t.entry((r.t * 1000.0).round() as u64).or_insert(r);
    }
    let mut out = BTreeMap::new();
    let pick: [(&str, fn(&MetricsRow) -> usize); 3] = [
        ("target_workers", |r| r.target_workers),
        ("active_workers", |r| r.active_workers),
        ("ideal_bins", |r| r.ideal_bins),
    ];
    for (name, f) in pick {
        out.insert(
            name.to_string(),
            per_t.values().map(|r| (r.t, f(r) as f64)).collect::<Vec<_>>(),
        );
    }
    out
}

pub fn plot_file(metrics: impl AsRef<Path>, kind: PlotKind, out: impl AsRef<Path>) -> Result<(), PlotError> {
    let rows = read_csv(metrics)?;
    plot_rows(&rows, kind, out)
}

pub fn plot_rows(rows: &[MetricsRow], kind: PlotKind, out: impl AsRef<Path>) -> Result<(), PlotError> {
    if rows.is_empty() {
        return Err(PlotError::Empty);
    }
    let (title, y_label, data, y_range) = match kind {
        PlotKind::CpuPerWorker => (
            "Scheduled CPU per worker",
            "CPU %",
            series(rows, |r| 100.0 * r.scheduled_cpu),
            (0.0, 100.0),
        ),
        PlotKind::Error => {
            let data = series(rows, |r| r.error_pp);
            let peak = data
                .values()
                .flatten()
                .map(|(_, y)| y.abs())
                .fold(5.0_f64, f64::max);
            ("Scheduled minus measured CPU", "error (pp)", data, (-peak * 1.1, peak * 1.1))
        }
        PlotKind::Workers => {
            let data = cluster_series(rows);
            let top = data
                .values()
                .flatten()
                .map(|(_, y)| *y)
                .fold(1.0_f64, f64::max);
            ("Workers and bins", "count", data, (0.0, top + 1.0))
        }
    };
    let t_max = rows.iter().map(|r| r.t).fold(1.0_f64, f64::max);
    let text = font_ready();

    let root = BitMapBackend::new(out.as_ref(), SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(15).x_label_area_size(40).y_label_area_size(55);
    if text {
        builder.caption(title, (FONT, 22));
    }
    let mut chart = builder
        .build_cartesian_2d(0.0..t_max, y_range.0..y_range.1)
        .map_err(draw_err)?;
    let mut mesh = chart.configure_mesh();
    if text {
        mesh.x_desc("t (s)").y_desc(y_label).label_style((FONT, 14));
    } else {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(draw_err)?;

    for (i, (name, points)) in data.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let drawn = chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(draw_err)?;
        if text {
            drawn
                .label(name)
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
        }
    }
    if text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .label_font((FONT, 14))
            .draw()
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}
