//! Atomic output files with a config echo next to each one.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Writes to a temporary file in the destination directory; the file only
/// appears at its final path after [`commit`](AtomicOutput::commit).
pub struct AtomicOutput {
    path: PathBuf,
    writer: BufWriter<NamedTempFile>,
}

impl AtomicOutput {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = NamedTempFile::new_in(dir)?;
        Ok(Self {
            path: path.to_owned(),
            writer: BufWriter::new(tmp),
        })
    }

    pub fn writer(&mut self) -> &mut impl Write {
        &mut self.writer
    }

    pub fn commit(self) -> Result<(), CliError> {
        let tmp = self.writer.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.path).map_err(|e| CliError::Data(e.to_string()))?;
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut out = AtomicOutput::create(path)?;
    out.writer().write_all(bytes)?;
    out.commit()
}

pub fn config_echo_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.toml");
    output.with_file_name(name)
}

/// Writes the resolved configuration beside `output`.
pub fn echo_config<C: Serialize>(output: &Path, config: &C) -> Result<(), CliError> {
    let text = toml::to_string(config).map_err(|e| CliError::Data(format!("config echo: {e}")))?;
    write_atomic(&config_echo_path(output), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_output_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        {
            let mut out = AtomicOutput::create(&path).unwrap();
            out.writer().write_all(b"partial").unwrap();
        }
        assert!(!path.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_and_echo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        write_atomic(&path, b"x\n").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"x\n");
        #[derive(Serialize)]
        struct C {
            seed: u64,
        }
        echo_config(&path, &C { seed: 7 }).unwrap();
        let echo = std::fs::read_to_string(dir.path().join("out.jsonl.config.toml")).unwrap();
        assert_eq!(echo.trim(), "seed = 7");
    }
}
