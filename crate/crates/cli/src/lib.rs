//! Command-line driver: configuration, experiment dispatch and CSV output.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{parse_args, parse_config, ConfigError, Experiment, ModelSpec, RunConfig};
pub use experiments::{run_experiment, Outcome};
pub use report::CsvReport;

use std::io::Write;
use std::time::Instant;

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failed assertions and numerical errors.
pub const EXIT_FAILED: i32 = 1;

/// Worker count from `OUKL_THREADS`.
pub fn worker_cap() -> Option<usize> {
    let n: usize = std::env::var("OUKL_THREADS").ok()?.trim().parse().ok()?;
    Some(n.max(1))
}

/// Runs `f` on a dedicated pool of `workers` threads.
#[cfg(feature = "parallel")]
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<T: Send>(_workers: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}

/// Runs the experiment, writes the CSV and returns the exit code. Diagnostics
/// and runtime go to `diag`; the CSV goes to the configured path or `stdout`.
pub fn run(config: &RunConfig, stdout: &mut dyn Write, diag: &mut dyn Write) -> i32 {
    let start = Instant::now();
    let outcome = match worker_cap() {
        Some(w) => with_workers(w, || run_experiment(config)),
        None => run_experiment(config),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(diag, "error: {}: {}", e.kind(), truncate(&e.to_string(), 400));
            return EXIT_FAILED;
        }
    };
    let written = match &config.out {
        Some(path) => outcome.report.write_atomic(path),
        None => outcome.report.to_bytes().and_then(|b| stdout.write_all(&b).map_err(|e| e.to_string())),
    };
    if let Err(e) = written {
        let _ = writeln!(diag, "error: could not write report: {e}");
        return EXIT_FAILED;
    }
    let _ = writeln!(diag, "# runtime_seconds = {:.3}", start.elapsed().as_secs_f64());
    if let Some(first) = outcome.failures.first() {
        let _ = writeln!(diag, "assertion failed: {first}");
        for more in outcome.failures.iter().skip(1) {
            let _ = writeln!(diag, "also failed: {more}");
        }
        return EXIT_FAILED;
    }
    0
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}
