use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use steglab::fld::EnsembleModel;
use steglab::fusion::FusionModel;
use steglab::gfr::FeatureMatrix;
use steglab::jpeg::decode_coefficients;
use steglab::manifest::{RunManifest, MANIFEST_FILE};
use steglab::net::peek_checkpoint;

/// An output directory whose files are hashed into its manifest.
pub struct OutputDir {
    dir: PathBuf,
    pub manifest: RunManifest,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut manifest = RunManifest::new(command);
        manifest.timestamp("started")?;
        Ok(Self { dir: dir.to_path_buf(), manifest, files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Verifies every written file, records its hash and writes the manifest.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.files.sort();
        for name in &self.files {
            let path = self.dir.join(name);
            verify_container(&path).with_context(|| format!("verifying {}", path.display()))?;
            self.manifest.output(name, &path)?;
        }
        self.manifest.timestamp("finished")?;
        let path = self.dir.join(MANIFEST_FILE);
        self.manifest.write(&path).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.verify_outputs(&self.dir)?;
        Ok(self.manifest)
    }
}

/// Re-reads a binary container and checks its header and CRC.
fn verify_container(path: &Path) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let read = || std::fs::read(path).with_context(|| format!("reading {}", path.display()));
    match ext {
        "stgc" => drop(decode_coefficients(&read()?)?),
        "stgn" => drop(peek_checkpoint(&read()?)?),
        "stge" => drop(EnsembleModel::decode(&read()?)?),
        "stgu" => drop(FusionModel::decode(&read()?)?),
        "stgf" => drop(FeatureMatrix::decode(&read()?)?),
        _ => drop(read()?),
    }
    Ok(())
}
