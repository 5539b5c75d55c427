use std::fs;
use std::path::{Path, PathBuf};

use super::Outcome;
use crate::error::CliError;
use crate::manifest::{file_digest, read_manifest, MANIFEST_NAME};

/// Checks the digests of `dir` against its manifest. With `rerun`, also
/// repeats the recorded run in a scratch directory and compares its outputs.
pub fn run(dir: &Path, rerun: bool, execute: impl FnOnce(&crate::config::RunConfig, &str, &Path) -> Result<(), CliError>) -> Result<Outcome, CliError> {
    let manifest = read_manifest(dir)?;
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, digest) in &manifest.outputs {
        let actual = file_digest(&dir.join(name))?;
        if &actual != digest {
            pass = false;
            lines.push(format!("{name}: digest mismatch"));
        }
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for e in entries {
        let name = e.map_err(|e| CliError::io(dir, e))?.file_name().to_string_lossy().into_owned();
        if name != MANIFEST_NAME && !manifest.outputs.contains_key(&name) {
            pass = false;
            lines.push(format!("{name}: not listed in the manifest"));
        }
    }
    lines.push(format!("{} files checked against the manifest", manifest.outputs.len()));
    if rerun {
        let scratch = scratch_dir();
        execute(&manifest.config, &manifest.subcommand, &scratch)?;
        let again = read_manifest(&scratch)?;
        let same = again.outputs == manifest.outputs;
        let _ = fs::remove_dir_all(&scratch);
        if !same {
            pass = false;
        }
        lines.push(format!("rerun {}", if same { "reproduced every output" } else { "produced different outputs" }));
    }
    Ok(Outcome { pass, lines })
}

fn scratch_dir() -> PathBuf {
    std::env::temp_dir().join(format!("barw-verify-{}-{}", std::process::id(), crate::manifest::now_ms()))
}
