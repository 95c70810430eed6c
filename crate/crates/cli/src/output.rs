//! CSV and JSON writers shared by all commands.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Output directory plus the provenance line stamped on every CSV.
pub struct Sink {
    dir: PathBuf,
    header: String,
    config_hash: String,
    master_seed: u64,
    command: String,
    written: Vec<PathBuf>,
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl Sink {
    pub fn create(dir: &Path, config_hash: &str, master_seed: u64, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let probe = dir.join(".twist-write-probe");
        fs::write(&probe, b"").map_err(|e| CliError::io(dir, e))?;
        fs::remove_file(&probe).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header: format!("# config_hash={config_hash} master_seed={master_seed} command={command}"),
            config_hash: config_hash.to_string(),
            master_seed,
            command: command.to_string(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn csv<I>(&mut self, name: &str, columns: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let body = || -> std::io::Result<()> {
            writeln!(out, "{}", self.header)?;
            writeln!(out, "{}", columns.join(","))?;
            for row in rows {
                debug_assert_eq!(row.len(), columns.len());
                writeln!(out, "{}", row.join(","))?;
            }
            out.flush()
        };
        body().map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// Pretty JSON with `config_hash`, `master_seed` and `command` added at the top level.
    pub fn json(&mut self, name: &str, mut value: serde_json::Value) -> Result<(), CliError> {
        if let Some(map) = value.as_object_mut() {
            map.insert("config_hash".into(), self.config_hash.clone().into());
            map.insert("master_seed".into(), self.master_seed.into());
            map.insert("command".into(), self.command.clone().into());
        }
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&value).expect("JSON values serialize");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}
