//! Run manifests: the resolved configuration of a command, written to the
//! output directory before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fqln::config::{parse_key_values, render_key_values};
use fqln::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Writes `manifest.txt` holding the tool version, RNG algorithm, the
/// argument vector (JSON) and every resolved setting.
pub fn write_manifest(out_dir: &Path, argv: &[String], resolved: &BTreeMap<String, String>) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut kv = resolved.clone();
    kv.insert("tool".into(), "fqln".into());
    kv.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    kv.insert("rng".into(), fqln::rng::RNG_ALGORITHM.into());
    kv.insert("argv".into(), serde_json::to_string(argv).expect("strings serialize"));
    let path = out_dir.join(MANIFEST_FILE);
    let body = format!("# fqln run manifest\n{}", render_key_values(&kv));
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// The argument vector recorded in a manifest.
pub fn manifest_argv(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kv = parse_key_values(&text)?;
    let raw = kv
        .get("argv")
        .ok_or_else(|| Error::Config(format!("{} has no argv entry", path.display())))?;
    serde_json::from_str(raw).map_err(|e| Error::Config(format!("argv in {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argv_round_trips_through_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let argv: Vec<String> = ["train", "--set", "lr=0.5", "--set", "a b"].map(String::from).to_vec();
        let mut resolved = BTreeMap::new();
        resolved.insert("command".to_string(), "train".to_string());
        let path = write_manifest(dir.path(), &argv, &resolved).unwrap();
        assert_eq!(manifest_argv(&path).unwrap(), argv);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("command=train\n"));
        assert!(text.contains(&format!("version={}\n", env!("CARGO_PKG_VERSION"))));
    }
}
