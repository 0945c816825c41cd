//! Per-epoch JSONL run logs: one record of {stage, epoch, loss, metric}.

use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    pub metric: Option<f64>,
}

/// Collects records in memory and, when opened on a path, mirrors each one
/// as a JSONL line.
#[derive(Debug, Default)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
    sink: Option<std::fs::File>,
}

impl RunLog {
    pub fn in_memory() -> RunLog {
        RunLog::default()
    }

    pub fn to_file(path: &Path) -> Result<RunLog> {
        Ok(RunLog {
            records: Vec::new(),
            sink: Some(std::fs::File::create(path)?),
        })
    }

    pub fn push(&mut self, rec: LogRecord) {
        if let Some(f) = &mut self.sink {
            match serde_json::to_string(&rec) {
                Ok(line) => {
                    if let Err(e) = writeln!(f, "{line}") {
                        log::warn!("run log write failed: {e}");
                    }
                }
                Err(e) => log::warn!("run log serialization failed: {e}"),
            }
        }
        self.records.push(rec);
    }

    pub fn for_stage(&self, stage: &str) -> Vec<&LogRecord> {
        self.records.iter().filter(|r| r.stage == stage).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_sink_writes_jsonl() {
        let dir = std::env::temp_dir().join(format!("ehrtext_log_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.jsonl");
        let mut log = RunLog::to_file(&path).unwrap();
        log.push(LogRecord {
            stage: "masked".to_string(),
            epoch: 0,
            loss: 1.25,
            metric: None,
        });
        log.push(LogRecord {
            stage: "contrastive".to_string(),
            epoch: 1,
            loss: 0.5,
            metric: Some(0.07),
        });
        drop(log);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let back: LogRecord = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(back.metric, Some(0.07));
        std::fs::remove_dir_all(dir).unwrap();
    }
}
