//! Experiment runner: scenarios, the deterministic simulator, process-mode
//! runs on localhost, `metrics.csv`/`events.log` output, log audits and
//! charts.

pub mod audit;
pub mod metrics;
pub mod plot;
pub mod process_mode;
pub mod scenario;
pub mod sim;

use std::path::{Path, PathBuf};

pub use metrics::{mean_abs_error, read_csv, to_csv, write_csv, MetricsRow, CSV_HEADER};
pub use plot::{plot_file, PlotKind};
pub use process_mode::{run_process, stream_scenario, ProcessError, ProcessOptions};
pub use scenario::{ClusterSpec, Mode, RunSpec, Scenario, ScenarioError, ScheduleEntry, Workload, WorkloadRef};
pub use sim::{replay_runs, RunOutput, RunSummary, Simulation};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const SUMMARY_FILE: &str = "summary.json";

/// Writes `metrics.csv`, `events.log` and `summary.json` into `dir`.
pub fn write_run(dir: impl AsRef<Path>, output: &RunOutput) -> std::io::Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(METRICS_FILE), output.csv())?;
    std::fs::write(dir.join(EVENTS_FILE), output.event_log())?;
    let summary = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    std::fs::write(dir.join(SUMMARY_FILE), summary + "\n")?;
    Ok(dir.to_path_buf())
}

/// Runs a scenario in its own mode and writes the run directory.
pub fn run(scenario: &Scenario, out: impl AsRef<Path>, process: &ProcessOptions) -> Result<RunOutput, String> {
    scenario.validate().map_err(|e| e.to_string())?;
    let output = match scenario.mode {
        Mode::Simulated => Simulation::run(scenario.clone()),
        Mode::Process => run_process(scenario, process).map_err(|e| e.to_string())?,
    };
    write_run(out, &output).map_err(|e| e.to_string())?;
    Ok(output)
}

/// Replays in simulation, writing `run_01/`, `run_02/`, ... and
/// `replay.csv` with one summary row per run.
pub fn replay(scenario: &Scenario, runs: usize, out: impl AsRef<Path>) -> Result<Vec<RunSummary>, String> {
    if runs < 2 {
        return Err(format!("replay needs at least 2 runs, got {runs}"));
    }
    scenario.validate().map_err(|e| e.to_string())?;
    let out = out.as_ref();
    let outputs = replay_runs(scenario.clone(), runs);
    let mut writer = csv::Writer::from_writer(Vec::new());
    for o in &outputs {
        write_run(out.join(format!("run_{:02}", o.summary.run)), o).map_err(|e| e.to_string())?;
        writer.serialize(&o.summary).map_err(|e| e.to_string())?;
    }
    let table = writer.into_inner().map_err(|e| e.to_string())?;
    std::fs::write(out.join("replay.csv"), table).map_err(|e| e.to_string())?;
    Ok(outputs.into_iter().map(|o| o.summary).collect())
}
