use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = concat!("msm-mediate ", env!("CARGO_PKG_VERSION"));

pub fn is_false(b: &bool) -> bool {
    !*b
}

/// Overlays the flags given on the command line onto the values of a TOML
/// config file. Keys may use `-` or `_`.
pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, file: Option<&Path>) -> Result<T> {
    let mut base = serde_json::Map::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        for (k, v) in table {
            base.insert(k.replace('-', "_"), serde_json::to_value(v)?);
        }
    }
    let serde_json::Value::Object(flags) = serde_json::to_value(cli)? else {
        bail!("internal: arguments do not serialize to an object");
    };
    for (k, v) in flags {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(serde_json::Value::Object(base)).context("invalid configuration")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

/// Provenance lines written as `#` comments before every CSV header.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub lines: Vec<String>,
    pub config_hash: String,
}

impl Provenance {
    /// `config` is the effective configuration; keys in `volatile` (thread
    /// count, config path, resume flag) are echoed but not hashed.
    pub fn new<T: Serialize>(command: &str, config: &T, seed: Option<u64>, inputs: &[(&str, &Path)]) -> Result<Self> {
        let serde_json::Value::Object(map) = serde_json::to_value(config)? else {
            bail!("internal: configuration does not serialize to an object");
        };
        let volatile = ["threads", "config", "resume"];
        let hashed: serde_json::Map<_, _> =
            map.iter().filter(|(k, _)| !volatile.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut digest_input = format!("{command}\n{}", serde_json::to_string(&hashed)?);
        let mut lines = vec![format!("tool: {TOOL}"), format!("command: {command}")];
        for (name, path) in inputs {
            let h = file_sha256(path)?;
            digest_input.push_str(&format!("\n{name}={h}"));
            lines.push(format!("{name}_sha256: {h}"));
        }
        let config_hash = sha256_hex(digest_input.as_bytes());
        lines.push(format!("config_sha256: {config_hash}"));
        lines.push(format!("seed: {}", seed.map_or("none".to_string(), |s| s.to_string())));
        for (k, v) in &map {
            if !v.is_null() {
                lines.push(format!("config.{k} = {v}"));
            }
        }
        Ok(Provenance { lines, config_hash })
    }

    pub fn with_line(&self, line: impl Into<String>) -> Provenance {
        let mut p = self.clone();
        p.lines.push(line.into());
        p
    }

    pub fn write_header<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for l in &self.lines {
            writeln!(w, "# {l}")?;
        }
        Ok(())
    }
}

/// Writes `body` after the provenance header, through a temporary file so
/// that a partially written output never looks complete.
pub fn write_output(path: &Path, prov: &Provenance, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    prov.write_header(&mut buf)?;
    body(&mut buf)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn output_dir(dir: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn parse_list<T, F: Fn(&str) -> Option<T>>(text: &str, what: &str, f: F) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).with_context(|| format!("invalid {what} '{s}'")))
        .collect()
}

/// Reads `config_sha256` from the provenance header of an existing output.
pub fn recorded_hash(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# config_sha256: ").map(str::to_string))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Args {
        n: Option<usize>,
        name: Option<String>,
        #[serde(default, skip_serializing_if = "is_false")]
        flag: bool,
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "n = 5\nname = \"file\"\nflag = true\n").unwrap();
        let cli = Args { n: Some(7), name: None, flag: false };
        let m = merge(&cli, Some(&p)).unwrap();
        assert_eq!(m, Args { n: Some(7), name: Some("file".into()), flag: true });
        fs::write(&p, "bogus = 1\n").unwrap();
        assert!(merge(&cli, Some(&p)).is_err());
        assert_eq!(merge(&cli, None).unwrap(), cli);
    }

    #[test]
    fn provenance_is_deterministic_and_ignores_threads() {
        #[derive(Serialize)]
        struct C {
            n: usize,
            threads: Option<usize>,
        }
        let a = Provenance::new("x", &C { n: 1, threads: Some(1) }, Some(3), &[]).unwrap();
        let b = Provenance::new("x", &C { n: 1, threads: Some(8) }, Some(3), &[]).unwrap();
        let c = Provenance::new("x", &C { n: 2, threads: Some(1) }, Some(3), &[]).unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
        assert!(a.lines.iter().any(|l| l == "seed: 3"));
    }
}
