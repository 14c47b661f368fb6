use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, Sender};

use super::synthetic::RunnerJob;
use super::{BackendError, BackendEvent, PeBackend, SYNTHETIC_IMAGE};
use crate::clock::{Clock, Millis, SystemClock};
use crate::protocol::{StreamMessage, SyntheticJob};

/// Clock ticks per second used by `/proc/<pid>/stat`.
pub fn ticks_per_second() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let ticks = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if ticks > 0 {
        ticks as u64
    } else {
        100
    }
}

/// User plus system CPU time of a process, in clock ticks.
pub fn cpu_ticks(pid: u32) -> Option<u64> {
    let stat = std::fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // The command name may contain spaces; fields resume after the last ')'.
    let rest = &stat[stat.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    Some(utime + stime)
}

struct RunnerProcess {
    child: Child,
    stdin: ChildStdin,
    last_sample: (u64, Millis),
}

/// Each PE is a child process running the synthetic job runner; CPU usage
/// comes from the kernel's per-process accounting.
pub struct ProcessBackend {
    program: PathBuf,
    args: Vec<String>,
    ticks_per_second: u64,
    children: BTreeMap<String, RunnerProcess>,
    events_tx: Sender<(Millis, BackendEvent)>,
    events_rx: Receiver<(Millis, BackendEvent)>,
}

impl ProcessBackend {
    /// `program args...` must start the runner loop (`streambin pe`).
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        let (events_tx, events_rx) = channel();
        Self {
            program: program.into(),
            args,
            ticks_per_second: ticks_per_second(),
            children: BTreeMap::new(),
            events_tx,
            events_rx,
        }
    }

    /// Runs PEs through the current executable's `pe` subcommand.
    pub fn current_exe() -> std::io::Result<Self> {
        Ok(Self::new(std::env::current_exe()?, vec!["pe".into()]))
    }

    pub fn pid(&self, pe_id: &str) -> Option<u32> {
        self.children.get(pe_id).map(|c| c.child.id())
    }
}

impl PeBackend for ProcessBackend {
    fn supports(&self, image: &str) -> bool {
        image == SYNTHETIC_IMAGE
    }

    fn spawn(&mut self, pe_id: &str, image: &str, _tag: &str, now: Millis) -> Result<bool, BackendError> {
        if !self.supports(image) {
            return Err(BackendError::UnknownImage(image.into()));
        }
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Failed(format!("spawn {}: {e}", self.program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let tx = self.events_tx.clone();
        let id = pe_id.to_string();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                let event = match line.split_once(' ') {
                    None if line == "ready" => BackendEvent::Ready { pe_id: id.clone() },
                    Some(("done", message_id)) => BackendEvent::Completed {
                        pe_id: id.clone(),
                        message_id: message_id.to_string(),
                    },
                    _ => {
                        tracing::warn!(pe = %id, %line, "runner says");
                        continue;
                    }
                };
                if tx.send((SystemClock.now_ms(), event)).is_err() {
                    break;
                }
            }
        });
        let ticks = cpu_ticks(child.id()).unwrap_or(0);
        self.children.insert(
            pe_id.into(),
            RunnerProcess {
                child,
                stdin,
                last_sample: (ticks, now),
            },
        );
        Ok(false)
    }

    fn submit(&mut self, pe_id: &str, message: &StreamMessage, _now: Millis) -> Result<(), BackendError> {
        let job = SyntheticJob::parse(&message.payload).map_err(|e| BackendError::BadPayload(e.to_string()))?;
        let runner = self
            .children
            .get_mut(pe_id)
            .ok_or_else(|| BackendError::UnknownPe(pe_id.into()))?;
        let mut line = serde_json::to_vec(&RunnerJob {
            id: message.message_id.clone(),
            job,
        })
        .expect("job serializes");
        line.push(b'\n');
        runner
            .stdin
            .write_all(&line)
            .and_then(|_| runner.stdin.flush())
            .map_err(|e| BackendError::Failed(format!("pe {pe_id} stdin: {e}")))
    }

    fn poll(&mut self, _now: Millis) -> Vec<(Millis, BackendEvent)> {
        self.events_rx.try_iter().collect()
    }

    fn cpu_sample(&mut self, pe_id: &str, now: Millis) -> f64 {
        let Some(runner) = self.children.get_mut(pe_id) else {
            return 0.0;
        };
        let Some(ticks) = cpu_ticks(runner.child.id()) else {
            return 0.0;
        };
        let (prev_ticks, prev_at) = runner.last_sample;
        runner.last_sample = (ticks, now);
        if now <= prev_at {
            return 0.0;
        }
        let cpu_s = ticks.saturating_sub(prev_ticks) as f64 / self.ticks_per_second as f64;
        let wall_s = (now - prev_at) as f64 / 1000.0;
        (cpu_s / wall_s).clamp(0.0, 1.0)
    }

    fn stop(&mut self, pe_id: &str) {
        if let Some(mut runner) = self.children.remove(pe_id) {
            let _ = runner.child.kill();
            let _ = runner.child.wait();
        }
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        let ids: Vec<String> = self.children.keys().cloned().collect();
        for id in ids {
            self.stop(&id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_cpu_ticks_grow_with_work() {
        let pid = std::process::id();
        let before = cpu_ticks(pid).unwrap();
        let t = std::time::Instant::now();
        let mut x = 0u64;
        while t.elapsed() < std::time::Duration::from_millis(100) {
            x = std::hint::black_box(x.wrapping_add(1));
        }
        assert!(cpu_ticks(pid).unwrap() > before);
    }

    #[test]
    fn clock_tick_rate_is_sane() {
        assert!((10..=10_000).contains(&ticks_per_second()));
    }

    #[test]
    fn missing_runner_binary_is_a_backend_failure() {
        let mut backend = ProcessBackend::new("/nonexistent/streambin", vec![]);
        assert!(matches!(
            backend.spawn("p", SYNTHETIC_IMAGE, "t", 0),
            Err(BackendError::Failed(_))
        ));
        assert!(matches!(
            backend.spawn("p", "other", "t", 0),
            Err(BackendError::UnknownImage(_))
        ));
    }
}
