//! Run directories and report files.

use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::RunConfig;
use crate::CliError;

/// One thresholded check; the run exits with 2 if any check fails.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// "<=", ">=", "<", ">" or "in"
    pub relation: String,
    pub threshold: Vec<f64>,
    pub pass: bool,
}

impl Check {
    pub fn at_least(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), value, relation: ">=".into(), threshold: vec![threshold], pass: value >= threshold }
    }

    pub fn at_most(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), value, relation: "<=".into(), threshold: vec![threshold], pass: value <= threshold }
    }

    pub fn above(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), value, relation: ">".into(), threshold: vec![threshold], pass: value > threshold }
    }

    pub fn below(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), value, relation: "<".into(), threshold: vec![threshold], pass: value < threshold }
    }

    pub fn within(name: &str, value: f64, band: [f64; 2]) -> Check {
        Check { name: name.into(), value, relation: "in".into(), threshold: band.to_vec(), pass: value >= band[0] && value <= band[1] }
    }
}

/// Run metadata; the only field allowed to differ between reruns.
#[derive(Debug, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub timestamp_unix: u64,
}

#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub header: Header,
    pub config: &'a RunConfig,
    pub pass: bool,
    pub checks: &'a [Check],
    pub results: T,
}

/// A plot-ready table.
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&'static str]) -> Table {
        Table { name: name.into(), columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }
}

/// Shortest round-trip float formatting.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Creates `<out>/<command>-seed<seed>-<k>` for the first unused k, so a
/// rerun never touches an earlier run.
pub fn run_dir(out: &Path, command: &str, seed: u64) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    for k in 0.. {
        let dir = out.join(format!("{command}-seed{seed}-{k:03}"));
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::Io(format!("{}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

pub fn write_run<T: Serialize>(
    dir: &Path,
    command: &'static str,
    config: &RunConfig,
    checks: &[Check],
    results: T,
    tables: &[Table],
) -> Result<bool, CliError> {
    let pass = checks.iter().all(|c| c.pass);
    let header = Header {
        tool: "bihar",
        version: env!("CARGO_PKG_VERSION"),
        command,
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let report = Report { header, config, pass, checks, results };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    let io = |p: PathBuf, s: String| std::fs::write(&p, s).map_err(|e| CliError::Io(format!("{}: {e}", p.display())));
    io(dir.join("report.json"), json + "\n")?;
    for t in tables {
        io(dir.join(format!("{}.csv", t.name)), t.render())?;
    }
    Ok(pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_relations() {
        assert!(Check::at_least("a", 1.0, 1.0).pass);
        assert!(!Check::above("a", 1.0, 1.0).pass);
        assert!(Check::at_most("a", 1.0, 1.0).pass);
        assert!(!Check::below("a", 1.0, 1.0).pass);
        assert!(Check::within("a", 2.5, [1.7, 2.5]).pass);
        assert!(!Check::within("a", 4.4, [1.7, 2.5]).pass);
        assert!(!Check::at_least("a", f64::NAN, 1.0).pass);
    }

    #[test]
    fn run_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = run_dir(tmp.path(), "cgo", 3).unwrap();
        let b = run_dir(tmp.path(), "cgo", 3).unwrap();
        let c = run_dir(tmp.path(), "cgo", 4).unwrap();
        assert!(a.ends_with("cgo-seed3-000"));
        assert!(b.ends_with("cgo-seed3-001"));
        assert!(c.ends_with("cgo-seed4-000"));
    }

    #[test]
    fn csv_round_trips_floats() {
        let mut t = Table::new("t", &["h", "v"]);
        t.push(vec![num(0.35), num(1.0 / 3.0)]);
        let s = t.render();
        let v: f64 = s.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
        assert!(s.starts_with("h,v\n"));
    }
}
