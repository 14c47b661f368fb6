use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::protocol::MetricsFrame;

pub const CSV_HEADER: [&str; 9] = [
    "t",
    "worker_id",
    "scheduled_cpu",
    "measured_cpu",
    "error_pp",
    "queue_length",
    "active_workers",
    "target_workers",
    "ideal_bins",
];

/// One (t, worker) row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: f64,
    pub worker_id: String,
    pub scheduled_cpu: f64,
    pub measured_cpu: f64,
    pub error_pp: f64,
    pub queue_length: usize,
    pub active_workers: usize,
    pub target_workers: usize,
    pub ideal_bins: usize,
}

impl MetricsRow {
    pub fn is_busy(&self) -> bool {
        self.scheduled_cpu > 0.0 || self.measured_cpu > 0.0
    }
}

/// Flattens frames; a frame without workers still yields one row.
pub fn rows(frames: &[MetricsFrame]) -> Vec<MetricsRow> {
    let mut out = Vec::new();
    for f in frames {
        let row = |worker_id: &str, s: f64, m: f64, e: f64| MetricsRow {
            t: f.t,
            worker_id: worker_id.to_string(),
            scheduled_cpu: s,
            measured_cpu: m,
            error_pp: e,
            queue_length: f.queue_length,
            active_workers: f.active_workers,
            target_workers: f.target_workers,
            ideal_bins: f.ideal_bins,
        };
        if f.per_worker.is_empty() {
            out.push(row("", 0.0, 0.0, 0.0));
        }
        for w in &f.per_worker {
            out.push(row(&w.worker_id, w.scheduled_cpu, w.measured_cpu, w.error_pp));
        }
    }
    out
}

fn fixed(value: f64, places: usize) -> String {
    let s = format!("{value:.places$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn to_csv(frames: &[MetricsFrame]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows(frames) {
        writer
            .write_record([
                fixed(r.t, 1),
                r.worker_id,
                fixed(r.scheduled_cpu, 4),
                fixed(r.measured_cpu, 4),
                fixed(r.error_pp, 2),
                r.queue_length.to_string(),
                r.active_workers.to_string(),
                r.target_workers.to_string(),
                r.ideal_bins.to_string(),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

pub fn write_csv(path: impl AsRef<Path>, frames: &[MetricsFrame]) -> std::io::Result<()> {
    std::fs::write(path, to_csv(frames))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, csv::Error> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().collect()
}

/// Mean |error_pp| over rows where the worker had scheduled or measured load.
pub fn mean_abs_error(rows: &[MetricsRow]) -> f64 {
    let busy: Vec<f64> = rows
        .iter()
        .filter(|r| r.is_busy())
        .map(|r| r.error_pp.abs())
        .collect();
    if busy.is_empty() {
        0.0
    } else {
        busy.iter().sum::<f64>() / busy.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::WorkerMetrics;

    fn frame(t: f64, workers: Vec<WorkerMetrics>) -> MetricsFrame {
        MetricsFrame {
            t,
            per_worker: workers,
            queue_length: 3,
            active_workers: 1,
            target_workers: 2,
            ideal_bins: 1,
        }
    }

    #[test]
    fn exact_header_and_row_shape() {
        let csv = to_csv(&[
            frame(0.0, vec![]),
            frame(1.0, vec![WorkerMetrics::new("w0", 0.5, 0.25), WorkerMetrics::new("w1", 0.0, 0.0)]),
        ]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "t,worker_id,scheduled_cpu,measured_cpu,error_pp,queue_length,active_workers,target_workers,ideal_bins"
        );
        assert_eq!(lines[1], "0.0,,0.0000,0.0000,0.00,3,1,2,1");
        assert_eq!(lines[2], "1.0,w0,0.5000,0.2500,25.00,3,1,2,1");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn negative_zero_is_printed_as_zero() {
        assert_eq!(fixed(-0.0001, 2), "0.00");
        assert_eq!(fixed(-0.5, 2), "-0.50");
    }

    #[test]
    fn csv_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_csv(&path, &[frame(2.0, vec![WorkerMetrics::new("w0", 0.4, 0.4)])]).unwrap();
        let rows = read_csv(&path).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].worker_id, "w0");
        assert_eq!(rows[0].error_pp, 0.0);
        assert_eq!(mean_abs_error(&rows), 0.0);
    }
}
