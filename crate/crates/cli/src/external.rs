//! Any program as a simulator, over standard streams.
//!
//! Each call starts the configured command, writes the parameter vector as one
//! CSV row to its stdin, and reads one CSV row of summaries from its stdout.
//! The seed is passed both as `{seed}` substitutions in the arguments and in
//! the `CELLSBI_SEED` environment variable. The summary length is fixed by a
//! calibration call at the prior mean when the simulator is built.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use cellsbi_core::simulator::finite_summary;
use cellsbi_core::{Prior, SeedStream, SimError, Simulator, SummaryVector};
use cellsbi_inference::csv::fmt_f64;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

pub const SEED_ENV: &str = "CELLSBI_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalSpec {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub timeout_secs: f64,
    /// Uniform prior bounds, one `[lower, upper]` pair per parameter.
    pub bounds: Vec<[f64; 2]>,
    /// Expected summary length; learned from the calibration call if unset.
    pub summary_dim: Option<usize>,
    pub working_dir: Option<PathBuf>,
}

impl Default for ExternalSpec {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            timeout_secs: 60.0,
            bounds: Vec::new(),
            summary_dim: None,
            working_dir: None,
        }
    }
}

impl ExternalSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.command.first().is_none_or(|p| p.trim().is_empty()) {
            return Err("command must name a program".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if self.bounds.is_empty() {
            return Err("bounds must give at least one parameter range".into());
        }
        if let Some(k) = self
            .bounds
            .iter()
            .position(|b| !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]))
        {
            return Err(format!("bounds[{k}] must be finite with lower < upper"));
        }
        if self.summary_dim == Some(0) {
            return Err("summary_dim must be positive".into());
        }
        Ok(())
    }

    /// Makes a relative program path (one containing a separator) and the
    /// working directory relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = self.command.first_mut() {
            let path = Path::new(p.as_str());
            if path.is_relative() && path.components().count() > 1 {
                *p = base.join(path).to_string_lossy().into_owned();
            }
        }
        if let Some(w) = &mut self.working_dir {
            if w.is_relative() {
                *w = base.join(&*w);
            }
        }
    }

    pub fn check_program(&self) -> Result<(), String> {
        let Some(p) = self.command.first() else {
            return Ok(());
        };
        let path = Path::new(p);
        if path.components().count() > 1 && !path.is_file() {
            return Err(format!("program {} does not exist", path.display()));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<Prior, String> {
        let b: Vec<(f64, f64)> = self.bounds.iter().map(|b| (b[0], b[1])).collect();
        Prior::uniform_box(&b).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExternalError {
    #[error("invalid external simulator: {0}")]
    Spec(String),
    #[error("cannot start {program}: {message}")]
    Spawn { program: String, message: String },
    #[error("i/o with subprocess: {0}")]
    Io(String),
    #[error("subprocess exceeded {secs} s and was killed")]
    Timeout { secs: f64 },
    #[error("subprocess exited with {}: {stderr}", code.map_or("a signal".to_owned(), |c| format!("status {c}")))]
    Exit { code: Option<i32>, stderr: String },
    #[error("subprocess printed no summary row")]
    Empty,
    #[error("subprocess printed {0} rows, expected one")]
    MultipleRows(usize),
    #[error("field {field} of the summary row is not a finite number: {text:?}")]
    NonNumeric { field: usize, text: String },
    #[error("summary has {got} fields, calibration found {expected}")]
    Dimension { expected: usize, got: usize },
}

impl From<ExternalError> for SimError {
    fn from(e: ExternalError) -> Self {
        SimError::Failed(e.to_string())
    }
}

/// Parses the single CSV row a simulator prints.
pub fn parse_summary_row(text: &str) -> Result<Vec<f64>, ExternalError> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    match lines.len() {
        0 => Err(ExternalError::Empty),
        1 => lines[0]
            .split(',')
            .map(str::trim)
            .enumerate()
            .map(|(k, s)| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ExternalError::NonNumeric {
                        field: k + 1,
                        text: s.to_owned(),
                    })
            })
            .collect(),
        n => Err(ExternalError::MultipleRows(n)),
    }
}

fn drain<R: Read + Send + 'static>(mut r: R) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

/// One subprocess call without any dimension check.
pub fn invoke(spec: &ExternalSpec, theta: &[f64], seed: u64) -> Result<Vec<f64>, ExternalError> {
    let seed_s = seed.to_string();
    let program = spec.command.first().ok_or(ExternalError::Spec("empty command".into()))?;
    let mut cmd = Command::new(program);
    cmd.args(spec.command[1..].iter().map(|a| a.replace("{seed}", &seed_s)))
        .env(SEED_ENV, &seed_s)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(w) = &spec.working_dir {
        cmd.current_dir(w);
    }
    let mut child = cmd.spawn().map_err(|e| ExternalError::Spawn {
        program: program.clone(),
        message: e.to_string(),
    })?;
    let out = drain(child.stdout.take().expect("piped stdout"));
    let err = drain(child.stderr.take().expect("piped stderr"));
    let row: Vec<String> = theta.iter().map(|&v| fmt_f64(v)).collect();
    if let Some(mut stdin) = child.stdin.take() {
        // a program that ignores its input may already be gone
        match writeln!(stdin, "{}", row.join(",")) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(ExternalError::Io(e.to_string())),
            _ => {}
        }
    }
    let status = match child
        .wait_timeout(Duration::from_secs_f64(spec.timeout_secs))
        .map_err(|e| ExternalError::Io(e.to_string()))?
    {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            // readers are left to finish on their own: grandchildren may
            // still hold the pipes open
            return Err(ExternalError::Timeout { secs: spec.timeout_secs });
        }
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    if !status.success() {
        return Err(ExternalError::Exit {
            code: status.code(),
            stderr: String::from_utf8_lossy(&stderr).trim().to_owned(),
        });
    }
    parse_summary_row(&String::from_utf8_lossy(&stdout))
}

/// Calibrated subprocess simulator.
#[derive(Debug, Clone)]
pub struct ExternalSimulator {
    spec: ExternalSpec,
    prior: Prior,
    dim: usize,
}

impl ExternalSimulator {
    /// Validates the spec and runs the calibration call (seed 0, prior mean).
    pub fn new(spec: ExternalSpec) -> Result<Self, ExternalError> {
        spec.validate().map_err(ExternalError::Spec)?;
        let prior = spec.prior().map_err(ExternalError::Spec)?;
        let centre: Vec<f64> = spec.bounds.iter().map(|b| 0.5 * (b[0] + b[1])).collect();
        let got = invoke(&spec, &centre, 0)?.len();
        if let Some(expected) = spec.summary_dim {
            if expected != got {
                return Err(ExternalError::Dimension { expected, got });
            }
        }
        Ok(Self { spec, prior, dim: got })
    }

    pub fn spec(&self) -> &ExternalSpec {
        &self.spec
    }

    /// One call, checked against the calibrated length.
    pub fn call(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, ExternalError> {
        let s = invoke(&self.spec, theta, seed)?;
        if s.len() != self.dim {
            return Err(ExternalError::Dimension {
                expected: self.dim,
                got: s.len(),
            });
        }
        Ok(s)
    }
}

impl Simulator for ExternalSimulator {
    type Output = Vec<f64>;

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn summary_dim(&self) -> usize {
        self.dim
    }

    fn simulate(&self, theta: &[f64], seed: SeedStream) -> Result<Vec<f64>, SimError> {
        Ok(self.call(theta, seed.rng().next_u64())?)
    }

    fn summarize(&self, output: &Vec<f64>) -> Result<SummaryVector, SimError> {
        finite_summary(output.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_rows() {
        assert_eq!(parse_summary_row("1, 2.5,-3\n").unwrap(), vec![1.0, 2.5, -3.0]);
        assert_eq!(parse_summary_row("\n\n7\n\n").unwrap(), vec![7.0]);
        assert_eq!(parse_summary_row("  \n"), Err(ExternalError::Empty));
        assert_eq!(parse_summary_row("1\n2\n"), Err(ExternalError::MultipleRows(2)));
        assert_eq!(
            parse_summary_row("1,abc"),
            Err(ExternalError::NonNumeric {
                field: 2,
                text: "abc".into()
            })
        );
        assert!(matches!(parse_summary_row("nan"), Err(ExternalError::NonNumeric { field: 1, .. })));
    }

    #[test]
    fn spec_checks() {
        let mut s = ExternalSpec {
            command: vec!["sim".into()],
            bounds: vec![[0.0, 1.0]],
            ..Default::default()
        };
        assert!(s.validate().is_ok());
        s.bounds.push([2.0, 1.0]);
        assert!(s.validate().unwrap_err().contains("bounds[1]"));
        s.bounds.pop();
        s.timeout_secs = 0.0;
        assert!(s.validate().unwrap_err().contains("timeout_secs"));
    }

    #[test]
    fn relative_program_paths_follow_the_config() {
        let mut s = ExternalSpec {
            command: vec!["./sim.sh".into(), "x/y".into()],
            working_dir: Some("run".into()),
            ..Default::default()
        };
        s.resolve_paths(Path::new("/cfg"));
        assert_eq!(s.command, vec!["/cfg/./sim.sh".to_owned(), "x/y".into()]);
        assert_eq!(s.working_dir, Some(PathBuf::from("/cfg/run")));
        let mut bare = ExternalSpec {
            command: vec!["python3".into()],
            ..Default::default()
        };
        bare.resolve_paths(Path::new("/cfg"));
        assert_eq!(bare.command[0], "python3");
    }
}
