use std::path::{Path, PathBuf};

/// Files of a run directory created by `ingest`.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.bin")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features.ntar")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain")
    }

    pub fn tts(&self) -> PathBuf {
        self.root.join("tts")
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}
