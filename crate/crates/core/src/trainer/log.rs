use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

pub const LOG_HEADER: &str = "step\tepoch\treconstruction\tadversarial_d\tadversarial_g\ttotal_g\twall_ms";

/// One line of the training log. `step` counts optimizer steps from 1;
/// `epoch` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: u64,
    pub losses: LossBreakdown,
    pub wall_ms: f64,
}

impl LogRecord {
    /// Tab-separated; losses use the shortest representation that parses
    /// back to the same value.
    pub fn to_line(&self) -> String {
        let l = &self.losses;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
            self.step, self.epoch, l.reconstruction, l.adversarial_d, l.adversarial_g, l.total_g, self.wall_ms
        )
    }

    /// Parses a log line. `lambda` is not logged and is returned as NaN.
    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return None;
        }
        let num = |i: usize| f[i].parse::<f64>().ok();
        Some(LogRecord {
            step: f[0].parse().ok()?,
            epoch: f[1].parse().ok()?,
            losses: LossBreakdown {
                reconstruction: num(2)?,
                adversarial_d: num(3)?,
                adversarial_g: num(4)?,
                total_g: num(5)?,
                lambda: f64::NAN,
            },
            wall_ms: num(6)?,
        })
    }
}

/// Reads every record of a training log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line == LOG_HEADER || line.trim().is_empty() {
            continue;
        }
        out.push(
            LogRecord::parse(&line)
                .ok_or_else(|| Error::Config(format!("{}: bad log line `{line}`", path.display())))?,
        );
    }
    Ok(out)
}

/// Append-only log writer.
pub(crate) struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    /// Opens the log for a run that has completed `completed_steps` steps:
    /// a fresh run starts a new file; a resumed run keeps the records up to
    /// that step and drops any written after the checkpoint.
    pub(crate) fn open(path: &Path, completed_steps: u64) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let kept: Vec<String> = if completed_steps > 0 && path.is_file() {
            read_log(path)?.into_iter().filter(|r| r.step <= completed_steps).map(|r| r.to_line()).collect()
        } else {
            Vec::new()
        };
        let mut file = File::create(path).map_err(io)?;
        writeln!(file, "{LOG_HEADER}").map_err(io)?;
        for line in kept {
            writeln!(file, "{line}").map_err(io)?;
        }
        file.flush().map_err(io)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io)?;
        Ok(LogWriter { path: path.to_path_buf(), file })
    }

    pub(crate) fn append(&mut self, record: &LogRecord) -> Result<()> {
        writeln!(self.file, "{}", record.to_line()).map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn path(&self) -> &Path {
        &self.path
    }
}
