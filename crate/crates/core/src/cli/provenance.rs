use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::data::{mask_path, Domain};
use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style object hash: the digest covers a `blob <len>\0` header plus the content.
pub fn git_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub domain: Domain,
    pub subject: String,
    pub image_sha256: String,
    pub mask_sha256: Option<String>,
}

/// Checksums of every image and mask of a source/target corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn scan(source: &Path, target: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (dir, domain) in [(source, Domain::Source), (target, Domain::Target)] {
            if !dir.is_dir() {
                return Err(Error::NotFound(dir.to_path_buf()));
            }
            let mut images: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "nii"))
                .filter(|p| {
                    !p.file_stem()
                        .and_then(|s| s.to_str())
                        .is_some_and(|s| s.ends_with("_mask"))
                })
                .collect();
            images.sort();
            for image in images {
                let subject = image
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_owned();
                let mask = mask_path(&image);
                entries.push(ManifestEntry {
                    domain,
                    subject,
                    image_sha256: sha256_hex(&fs::read(&image)?),
                    mask_sha256: mask
                        .exists()
                        .then(|| fs::read(&mask).map(|b| sha256_hex(&b)))
                        .transpose()?,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn content_hash(&self) -> String {
        git_hash(&serde_json::to_vec(self).expect("manifest serializes"))
    }
}

/// Embedded in every artifact: the configuration that produced it and the corpus it saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: RunConfig,
    pub config_sha256: String,
    pub corpus_hash: String,
}

impl Provenance {
    pub fn new(config: &RunConfig, corpus: &CorpusManifest) -> Self {
        Self {
            config: config.clone(),
            config_sha256: config.sha256(),
            corpus_hash: corpus.content_hash(),
        }
    }
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON of `body` with a `provenance` field alongside its own fields.
pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, body: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(&Wrapped { provenance, body })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn json_line<T: Serialize>(provenance: &Provenance, body: &T) -> Result<String> {
    Ok(serde_json::to_string(&Wrapped { provenance, body })?)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    provenance: Provenance,
    files: BTreeMap<String, String>,
}

pub const SIDECAR: &str = "provenance.json";

/// Record `file`'s checksum in the `provenance.json` of its directory.
/// Binary and CSV artifacts carry their provenance this way.
pub fn register_file(file: &Path, provenance: &Provenance) -> Result<()> {
    let dir = file.parent().unwrap_or(Path::new("."));
    let sidecar = dir.join(SIDECAR);
    let mut files = match fs::read(&sidecar) {
        Ok(bytes) => {
            let old: Sidecar = serde_json::from_slice(&bytes)?;
            // A sidecar from another configuration or corpus is stale.
            if old.provenance == *provenance {
                old.files
            } else {
                BTreeMap::new()
            }
        }
        Err(_) => BTreeMap::new(),
    };
    let name = file
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_owned();
    files.insert(name, sha256_hex(&fs::read(file)?));
    write_json(&sidecar, provenance, &serde_json::json!({ "files": files }))
}
