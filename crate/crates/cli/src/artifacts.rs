use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub const VERSION_LINE: &str = concat!("# mvsde ", env!("CARGO_PKG_VERSION"));

/// Output directory `out/{report.json, paths/, tables/}`; every CSV starts with
/// the version, the config echo and the seed as comment lines.
pub struct Artifacts {
    root: PathBuf,
    header: Vec<String>,
}

impl Artifacts {
    pub fn create(root: &Path, config_echo: &str, seed: u64) -> Result<Self, CliError> {
        for dir in [root.to_path_buf(), root.join("paths"), root.join("tables")] {
            fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        }
        let header = vec![VERSION_LINE.to_string(), format!("# config: {config_echo}"), format!("# seed: {seed}")];
        Ok(Self { root: root.to_path_buf(), header })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// File under the output root with the comment header already written.
    pub fn file(&self, rel: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.root.join(rel);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?);
        for line in &self.header {
            writeln!(w, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
        }
        Ok(w)
    }

    /// Writes a table with the given columns.
    pub fn table<R, I>(&self, rel: &str, columns: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let mut w = csv::Writer::from_writer(self.file(rel)?);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(columns).map_err(io)?;
        for row in rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn report<T: Serialize>(&self, report: &T) -> Result<(), CliError> {
        let path = self.root.join("report.json");
        let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
