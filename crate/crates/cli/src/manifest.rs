//! Workdir manifest: records, per artifact, the hash of the config slice and
//! of every input it was built from, so a rerun with matching hashes is a
//! no-op unless forced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Manifest {
    pub fn load(workdir: &Path) -> Self {
        let path = workdir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => Self::default(),
        }
    }

    pub fn save(&self, workdir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(workdir)?;
        fs::write(
            workdir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(self).expect("serializable"),
        )?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Other(format!("cannot hash {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn sha256_str(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Which subcommand produces a given workdir artifact; used to word the
/// missing-dependency error.
pub fn producer_of(artifact: &str) -> &'static str {
    if artifact.starts_with("dense_index_") {
        return "index-dense";
    }
    if artifact.starts_with("encoder_") || artifact.starts_with("train_log_") {
        return "train-retriever";
    }
    match artifact {
        "store.jsonl" => "ingest",
        "sparse_index.bin" => "index-sparse",
        "pool.jsonl" => "synth",
        "inverse_model.bin" | "inverse_log.jsonl" => "train-inverse",
        "selected.jsonl" | "reports.jsonl" => "select",
        "router.bin" | "router_labels.jsonl" => "train-router",
        _ => "pipeline",
    }
}

/// Step runner around the manifest. Inputs named here are workdir artifacts
/// (checked and hashed; missing ones raise the exit-3 error); external
/// inputs are absolute paths hashed under their file name.
pub struct StepRunner {
    pub workdir: PathBuf,
    pub force: bool,
    pub manifest: Manifest,
}

impl StepRunner {
    pub fn new(workdir: &Path, force: bool) -> Self {
        Self {
            workdir: workdir.to_path_buf(),
            force,
            manifest: Manifest::load(workdir),
        }
    }

    pub fn artifact_path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    /// Path of a required workdir artifact, or the exit-3 error naming the
    /// subcommand that makes it.
    pub fn require(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.artifact_path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact {
                artifact: name.to_string(),
                producer: producer_of(name).to_string(),
            })
        }
    }

    /// Runs `build` unless the manifest already records this artifact set
    /// with identical config and input hashes and the outputs still exist.
    /// Returns true when the step actually ran.
    pub fn ensure(
        &mut self,
        name: &str,
        config_hash: &str,
        inputs: &[(String, PathBuf)],
        outputs: &[&str],
        build: impl FnOnce(&Path) -> Result<(), CliError>,
    ) -> Result<bool, CliError> {
        let mut input_hashes = BTreeMap::new();
        for (label, path) in inputs {
            if !path.exists() {
                return Err(CliError::MissingArtifact {
                    artifact: label.clone(),
                    producer: producer_of(label).to_string(),
                });
            }
            input_hashes.insert(label.clone(), sha256_file(path)?);
        }
        if !self.force {
            if let Some(entry) = self.manifest.artifacts.get(name) {
                let outputs_present = outputs
                    .iter()
                    .all(|o| self.artifact_path(o).exists());
                if entry.config_hash == config_hash
                    && entry.inputs == input_hashes
                    && outputs_present
                {
                    println!("[skip] {name}: up to date");
                    return Ok(false);
                }
            }
        }
        std::fs::create_dir_all(&self.workdir)?;
        build(&self.workdir)?;
        let mut output_hashes = BTreeMap::new();
        for o in outputs {
            output_hashes.insert(o.to_string(), sha256_file(&self.artifact_path(o))?);
        }
        self.manifest.artifacts.insert(
            name.to_string(),
            ArtifactEntry {
                config_hash: config_hash.to_string(),
                inputs: input_hashes,
                outputs: output_hashes,
            },
        );
        self.manifest.save(&self.workdir)?;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensure_skips_when_hashes_match_and_rebuilds_on_force() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.txt");
        fs::write(&input, "data").unwrap();
        let mut runner = StepRunner::new(&dir.path().join("work"), false);
        let mut runs = 0;
        for _ in 0..2 {
            let ran = runner
                .ensure(
                    "thing",
                    "cfg1",
                    &[("input.ext".to_string(), input.clone())],
                    &["out.txt"],
                    |wd| {
                        fs::write(wd.join("out.txt"), "built").unwrap();
                        Ok(())
                    },
                )
                .unwrap();
            if ran {
                runs += 1;
            }
        }
        assert_eq!(runs, 1);

        let mut forced = StepRunner::new(&dir.path().join("work"), true);
        let ran = forced
            .ensure(
                "thing",
                "cfg1",
                &[("input.ext".to_string(), input.clone())],
                &["out.txt"],
                |wd| {
                    fs::write(wd.join("out.txt"), "rebuilt").unwrap();
                    Ok(())
                },
            )
            .unwrap();
        assert!(ran);
    }

    #[test]
    fn changed_config_hash_triggers_rebuild() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.txt");
        fs::write(&input, "data").unwrap();
        let mut runner = StepRunner::new(&dir.path().join("work"), false);
        for (cfg, expect_run) in [("a", true), ("a", false), ("b", true)] {
            let ran = runner
                .ensure(
                    "thing",
                    cfg,
                    &[("input.ext".to_string(), input.clone())],
                    &["out.txt"],
                    |wd| {
                        fs::write(wd.join("out.txt"), cfg).unwrap();
                        Ok(())
                    },
                )
                .unwrap();
            assert_eq!(ran, expect_run, "config {cfg}");
        }
    }

    #[test]
    fn missing_workdir_input_names_its_producer() {
        let dir = tempfile::tempdir().unwrap();
        let mut runner = StepRunner::new(&dir.path().join("work"), false);
        let missing = runner.artifact_path("sparse_index.bin");
        let err = runner
            .ensure(
                "eval",
                "cfg",
                &[("sparse_index.bin".to_string(), missing)],
                &[],
                |_| Ok(()),
            )
            .unwrap_err();
        assert!(err.to_string().contains("index-sparse"), "got {err}");
        assert_eq!(err.exit_code(), 3);
    }
}
