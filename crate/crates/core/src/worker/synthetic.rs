//! Duty-cycle CPU load generator and the PE runner loop built on it.
//!
//! The runner reads one JSON job per stdin line, answers `ready` once at
//! startup and `done <id>` after each job, and exits when stdin closes.

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::protocol::SyntheticJob;

/// Length of one busy/sleep cycle.
pub const DUTY_PERIOD: Duration = Duration::from_millis(100);

/// A job as sent to the runner process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerJob {
    pub id: String,
    #[serde(flatten)]
    pub job: SyntheticJob,
}

/// Keeps the calling thread busy for `target_cpu` of each period until
/// `duration_s` of wall time has passed.
pub fn run_job(job: SyntheticJob) {
    let start = Instant::now();
    let end = start + Duration::from_secs_f64(job.duration_s);
    let busy = DUTY_PERIOD.mul_f64(job.target_cpu.clamp(0.0, 1.0));
    let mut period_start = start;
    while period_start < end {
        let busy_until = (period_start + busy).min(end);
        spin_until(busy_until);
        let period_end = (period_start + DUTY_PERIOD).min(end);
        let now = Instant::now();
        if period_end > now {
            std::thread::sleep(period_end - now);
        }
        period_start += DUTY_PERIOD;
    }
}

fn spin_until(deadline: Instant) {
    let mut x: u64 = 0;
    while Instant::now() < deadline {
        for _ in 0..1_000 {
            x = std::hint::black_box(x.wrapping_mul(6364136223846793005).wrapping_add(1));
        }
    }
}

/// Serves jobs from `input` until it closes. Malformed lines are reported
/// as `error <reason>` and skipped.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W) -> std::io::Result<()> {
    writeln!(output, "ready")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunnerJob>(&line) {
            Ok(job) => {
                run_job(job.job);
                writeln!(output, "done {}", job.id)?;
            }
            Err(e) => writeln!(output, "error {}", e.to_string().replace('\n', " "))?,
        }
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_duration_returns_at_once() {
        let t = Instant::now();
        run_job(SyntheticJob {
            target_cpu: 1.0,
            duration_s: 0.0,
        });
        assert!(t.elapsed() < Duration::from_millis(20));
    }

    #[test]
    fn wall_time_matches_duration() {
        let t = Instant::now();
        run_job(SyntheticJob {
            target_cpu: 0.3,
            duration_s: 0.35,
        });
        let elapsed = t.elapsed().as_secs_f64();
        assert!((0.35..0.5).contains(&elapsed), "{elapsed}");
    }

    #[test]
    fn runner_protocol() {
        let input = b"{\"id\":\"m1\",\"target_cpu\":0.5,\"duration_s\":0}\nnot json\n";
        let mut out = Vec::new();
        serve(&input[..], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ready");
        assert_eq!(lines[1], "done m1");
        assert!(lines[2].starts_with("error "));
    }
}
