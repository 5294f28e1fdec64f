//! Running a model as an external process.
//!
//! The command template is run through `sh -c` after substituting
//! `{input_file}`, `{output_file}` and `{model_dir}` with single-quoted
//! paths. The input file is CSV with header `idx,value` and one row per input
//! slot; the output file must hold exactly one finite number.

use std::fs::{self, File};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pma::ExecutorKind;

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineRecord {
    pub eid: String,
    pub kind: ExecutorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

impl EngineRecord {
    pub fn external(eid: impl Into<String>, template: impl Into<String>) -> Self {
        Self {
            eid: eid.into(),
            kind: ExecutorKind::External,
            command_template: Some(template.into()),
            timeout_secs: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.eid.trim().is_empty() {
            return Err("empty engine id".into());
        }
        if self.timeout_secs == Some(0) {
            return Err("timeout must be positive".into());
        }
        match (self.kind, &self.command_template) {
            (ExecutorKind::External, Some(t)) => validate_template(t),
            (ExecutorKind::External, None) => Err("external engines need a command_template".into()),
            (ExecutorKind::NativeAnn, Some(_)) => Err("native engines take no command_template".into()),
            (ExecutorKind::NativeAnn, None) => Ok(()),
        }
    }
}

pub fn validate_template(t: &str) -> Result<(), String> {
    for ph in ["{input_file}", "{output_file}"] {
        if !t.contains(ph) {
            return Err(format!("command template lacks the {ph} placeholder"));
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("engine `{0}` is not an external engine")]
    NotExternal(String),
    #[error("could not launch `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("process exited with {status}: {stderr}")]
    NonZeroExit { status: String, stderr: String },
    #[error("process exceeded its {0:?} timeout and was killed")]
    Timeout(Duration),
    #[error("unparseable output: {0}")]
    BadOutput(String),
    #[error("output is not finite: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Runs one prediction through `engine` inside `workdir` (created if needed).
pub fn execute_external(
    engine: &EngineRecord,
    model_dir: &Path,
    inputs: &[f64],
    workdir: &Path,
) -> Result<f64, ExecutorError> {
    let template = match (engine.kind, &engine.command_template) {
        (ExecutorKind::External, Some(t)) => t,
        _ => return Err(ExecutorError::NotExternal(engine.eid.clone())),
    };
    fs::create_dir_all(workdir)?;
    let input_file = workdir.join("input.csv");
    let output_file = workdir.join("output.txt");
    let mut csv = String::from("idx,value\n");
    for (i, v) in inputs.iter().enumerate() {
        csv.push_str(&format!("{i},{v}\n"));
    }
    fs::write(&input_file, csv)?;
    let _ = fs::remove_file(&output_file);

    let command = template
        .replace("{input_file}", &shell_quote(&input_file))
        .replace("{output_file}", &shell_quote(&output_file))
        .replace("{model_dir}", &shell_quote(model_dir));
    let stderr_path = workdir.join("stderr.log");
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .current_dir(workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(File::create(&stderr_path)?)
        .spawn()
        .map_err(|source| ExecutorError::Spawn {
            command: command.clone(),
            source,
        })?;

    let timeout = engine.timeout();
    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ExecutorError::Timeout(timeout));
        }
        std::thread::sleep(Duration::from_millis(2));
    };
    if !status.success() {
        let stderr = fs::read_to_string(&stderr_path).unwrap_or_default();
        return Err(ExecutorError::NonZeroExit {
            status: status.to_string(),
            stderr: stderr.trim().chars().take(2000).collect(),
        });
    }
    let out = fs::read_to_string(&output_file)
        .map_err(|e| ExecutorError::BadOutput(format!("reading {}: {e}", output_file.display())))?;
    let lines: Vec<&str> = out.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let [line] = lines.as_slice() else {
        return Err(ExecutorError::BadOutput(format!("expected one line, got {}", lines.len())));
    };
    let v: f64 = line
        .parse()
        .map_err(|_| ExecutorError::BadOutput(format!("`{line}` is not a number")))?;
    if !v.is_finite() {
        return Err(ExecutorError::NonFinite(line.to_string()));
    }
    Ok(v)
}
