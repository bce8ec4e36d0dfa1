//! Artifact writing. Every file except `timing.json` depends only on the
//! configuration, so repeated runs produce identical bytes.

use std::path::PathBuf;

use serde::Serialize;

use crate::config::OutputBlock;
use crate::error::CliError;

pub struct Artifacts {
    dir: PathBuf,
    formats: OutputBlock,
}

#[derive(Serialize)]
struct Timing {
    wall_time: f64,
}

impl Artifacts {
    pub fn new(dir: PathBuf, formats: OutputBlock) -> Self {
        Self { dir, formats }
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
    }

    pub fn csv(&self, name: &str, contents: &str) -> Result<(), CliError> {
        if self.formats.csv() {
            self.write(name, contents)?;
        }
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), CliError> {
        if self.formats.json() {
            let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize");
            text.push('\n');
            self.write(name, &text)?;
        }
        Ok(())
    }

    /// `stem.csv` and `stem.json` holding the same rows.
    pub fn table<T: Serialize>(&self, stem: &str, rows: &[T]) -> Result<(), CliError> {
        if self.formats.csv() {
            self.write(&format!("{stem}.csv"), &to_csv(rows))?;
        }
        self.json(&format!("{stem}.json"), rows)
    }

    pub fn timing(&self, seconds: f64) -> Result<(), CliError> {
        self.json("timing.json", &Timing { wall_time: seconds })
    }
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV is UTF-8")
}
