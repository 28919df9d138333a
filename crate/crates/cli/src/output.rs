use std::fs;
use std::path::{Path, PathBuf};

use conformer_nas::tensor::io::write_atomic;
use serde::Serialize;

use crate::error::CliError;

/// Output directory of a command. Every file is written whole through a
/// temporary sibling and a rename.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        write_atomic(&path, text.as_bytes()).map_err(|e| match e {
            conformer_nas::Error::Io(io) => CliError::io(&path, io),
            other => other.into(),
        })
    }

    pub fn subdir(&self, name: &str) -> Result<OutDir, CliError> {
        OutDir::create(&self.path(name))
    }
}

/// JSON-lines accumulator; the whole file is rewritten on every append so
/// a reader never sees a partial line.
pub struct JsonLines<'a> {
    dir: &'a OutDir,
    name: String,
    text: String,
}

impl<'a> JsonLines<'a> {
    pub fn new(dir: &'a OutDir, name: &str) -> Self {
        JsonLines {
            dir,
            name: name.to_string(),
            text: String::new(),
        }
    }

    pub fn push(&mut self, record: &impl Serialize) -> Result<(), CliError> {
        let line = serde_json::to_string(record)
            .map_err(|e| CliError::Config(format!("serialize: {e}")))?;
        self.text.push_str(&line);
        self.text.push('\n');
        self.dir.write(&self.name, &self.text)
    }
}
