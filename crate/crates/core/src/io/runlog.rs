//! JSON-lines training log and the `run.json` config dump.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// One JSON object per line: `{"event": kind, ...payload}`.
#[derive(Debug, Default)]
pub struct RunLog {
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sink: Some((path.to_path_buf(), BufWriter::new(file))),
        })
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn event(&mut self, kind: &str, payload: &impl Serialize) -> Result<()> {
        let Some((path, w)) = self.sink.as_mut() else {
            return Ok(());
        };
        let mut obj = Map::new();
        obj.insert("event".into(), Value::String(kind.to_string()));
        match serde_json::to_value(payload).map_err(|e| Error::Internal(e.to_string()))? {
            Value::Object(m) => obj.extend(m),
            Value::Null => {}
            other => {
                obj.insert("value".into(), other);
            }
        }
        let line = serde_json::to_string(&Value::Object(obj)).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.clone(), e))
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, w)) = self.sink.as_mut() {
            w.flush().map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }
}

impl Drop for RunLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Pretty-printed resolved configuration.
pub fn write_run_config(path: &Path, config: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(config).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
