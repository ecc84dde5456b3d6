//! Corpus directory layout:
//!
//! ```text
//! <dir>/manifest.jsonl        header record, then one entry record per video
//! <dir>/blobs/<video_id>.lvme per-video embedding blob
//! ```
//!
//! Blob layout (little-endian): 8-byte magic `LVMECORP`, `u32` version,
//! `u32` N, `u32` d, then `N·d` `f32` values row-major.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingSequence, DEFAULT_SEGMENT_LEN_S};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const BLOB_MAGIC: &[u8; 8] = b"LVMECORP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: u64 = 20;
const MANIFEST: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub version: u32,
    pub embedding_dim: usize,
    pub segment_len_s: f64,
    pub encoder_id: String,
    /// Rows were unit-normalized at ingestion; validated on read.
    #[serde(default)]
    pub normalized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub blob: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_ids: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header(CorpusHeader),
    Entry(ManifestEntry),
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub entries: Vec<ManifestEntry>,
    pub sequences: Vec<EmbeddingSequence>,
}

impl Corpus {
    pub fn dim(&self) -> usize {
        self.header.embedding_dim
    }
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "video id {id:?} is not a safe file name"
        )))
    }
}

pub fn write_blob(path: &Path, m: &Tensor<f32>) -> Result<()> {
    let (n, d) = (m.rows(), m.cols());
    let mut buf = Vec::with_capacity(HEADER_BYTES as usize + 4 * m.numel());
    buf.extend_from_slice(BLOB_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Decode one blob. `expected_dim`, when given, must equal the stored d.
pub fn read_blob(path: &Path, expected_dim: Option<usize>) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != BLOB_MAGIC {
        if bytes.len() < 8 && BLOB_MAGIC.starts_with(&bytes) {
            return Err(Error::Truncated {
                path: path.into(),
                expected: HEADER_BYTES,
                found: bytes.len() as u64,
            });
        }
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "LVMECORP",
        });
    }
    if (bytes.len() as u64) < HEADER_BYTES {
        return Err(Error::Truncated {
            path: path.into(),
            expected: HEADER_BYTES,
            found: bytes.len() as u64,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(8);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (n, d) = (word(12) as usize, word(16) as usize);
    if let Some(exp) = expected_dim {
        if exp != d {
            return Err(Error::DimMismatch {
                context: path.display().to_string(),
                expected: exp,
                found: d,
            });
        }
    }
    let expected = HEADER_BYTES + 4 * (n as u64) * (d as u64);
    if bytes.len() as u64 != expected {
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated {
                path: path.into(),
                expected,
                found: bytes.len() as u64,
            });
        }
        return Err(Error::Parse {
            path: path.into(),
            message: format!("{} trailing bytes", bytes.len() as u64 - expected),
        });
    }
    let data: Vec<f32> = bytes[HEADER_BYTES as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(vec![n, d], data).map_err(|e| match e {
        Error::NonFinite { .. } => Error::Parse {
            path: path.into(),
            message: "non-finite value in payload".into(),
        },
        other => other,
    })
}

/// Write `sequences` under `dir` and return the manifest path.
pub fn write_corpus(
    sequences: &[EmbeddingSequence],
    dir: &Path,
    normalized: bool,
) -> Result<PathBuf> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::contract("cannot write an empty corpus"))?;
    let d = first.dim();
    let blobs = dir.join("blobs");
    fs::create_dir_all(&blobs).map_err(|e| Error::io(&blobs, e))?;
    let header = CorpusHeader {
        version: FORMAT_VERSION,
        embedding_dim: d,
        segment_len_s: first.segment_len_s,
        encoder_id: first.encoder_id.clone(),
        normalized,
    };
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&Record::Header(header)).expect("header serializes"));
    out.push('\n');
    let mut seen = std::collections::HashSet::new();
    for seq in sequences {
        check_id(&seq.video_id)?;
        if !seen.insert(seq.video_id.as_str()) {
            return Err(Error::contract(format!("duplicate video id {}", seq.video_id)));
        }
        if seq.dim() != d {
            return Err(Error::DimMismatch {
                context: format!("sequence {}", seq.video_id),
                expected: d,
                found: seq.dim(),
            });
        }
        let rel = format!("blobs/{}.lvme", seq.video_id);
        write_blob(&dir.join(&rel), &seq.embeddings)?;
        let entry = ManifestEntry {
            video_id: seq.video_id.clone(),
            blob: rel,
            n: seq.len(),
            labels: seq.labels.clone(),
            caption_ids: seq.caption_ids.clone(),
        };
        out.push_str(&serde_json::to_string(&Record::Entry(entry)).expect("entry serializes"));
        out.push('\n');
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut header: Option<CorpusHeader> = None;
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.clone(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        match rec {
            Record::Header(h) if header.is_none() => header = Some(h),
            Record::Header(_) => {
                return Err(Error::Parse {
                    path: path.clone(),
                    message: format!("line {}: second header", lineno + 1),
                })
            }
            Record::Entry(e) => entries.push(e),
        }
    }
    let header = header.ok_or_else(|| Error::Parse {
        path: path.clone(),
        message: "missing header record".into(),
    })?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            path,
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    let mut sequences = Vec::with_capacity(entries.len());
    for e in &entries {
        check_id(&e.video_id)?;
        let blob_path = dir.join(&e.blob);
        let m = read_blob(&blob_path, Some(header.embedding_dim))?;
        if m.rows() != e.n {
            return Err(Error::Parse {
                path: blob_path,
                message: format!("manifest says N={} but blob holds {}", e.n, m.rows()),
            });
        }
        let mut seq = EmbeddingSequence::new(e.video_id.clone(), m)?;
        seq.segment_len_s = header.segment_len_s;
        seq.encoder_id = header.encoder_id.clone();
        seq.labels = e.labels.clone();
        if let Some(ids) = &e.caption_ids {
            seq = seq.with_caption_ids(ids.clone())?;
        }
        if header.normalized && !seq.has_unit_rows(1e-5) {
            return Err(Error::contract(format!(
                "sequence {} is not unit-normalized although the corpus says so",
                seq.video_id
            )));
        }
        sequences.push(seq);
    }
    Ok(Corpus {
        header,
        entries,
        sequences,
    })
}

/// SHA-256 over the manifest and every blob in manifest order.
pub fn corpus_digest(dir: &Path) -> Result<String> {
    let corpus = read_corpus(dir)?;
    let mut h = Sha256::new();
    let manifest = dir.join(MANIFEST);
    h.update(fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?);
    for e in &corpus.entries {
        let p = dir.join(&e.blob);
        h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Caption bank files: `<stem>.tsv` with `caption_id<TAB>text` lines and
/// `<stem>.lvme` holding the aligned text embeddings.
pub fn write_caption_files(
    tsv: &Path,
    captions: &[(String, String)],
    embeddings: &Tensor<f32>,
) -> Result<()> {
    if captions.len() != embeddings.rows() {
        return Err(Error::contract(format!(
            "{} captions for {} embedding rows",
            captions.len(),
            embeddings.rows()
        )));
    }
    if let Some(parent) = tsv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(tsv).map_err(|e| Error::io(tsv, e))?;
    for (id, text) in captions {
        if id.contains(['\t', '\n']) || text.contains(['\t', '\n']) {
            return Err(Error::contract(format!("caption {id:?} contains a tab or newline")));
        }
        writeln!(f, "{id}\t{text}").map_err(|e| Error::io(tsv, e))?;
    }
    write_blob(&tsv.with_extension("lvme"), embeddings)
}

pub fn read_caption_files(tsv: &Path) -> Result<(Vec<(String, String)>, Tensor<f32>)> {
    let text = fs::read_to_string(tsv).map_err(|e| Error::io(tsv, e))?;
    let mut captions = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: tsv.into(),
            message: format!("line {}: expected caption_id<TAB>text", i + 1),
        })?;
        captions.push((id.to_string(), body.to_string()));
    }
    let emb = read_blob(&tsv.with_extension("lvme"), None)?;
    Ok((captions, emb))
}

impl Default for CorpusHeader {
    fn default() -> Self {
        CorpusHeader {
            version: FORMAT_VERSION,
            embedding_dim: 0,
            segment_len_s: DEFAULT_SEGMENT_LEN_S,
            encoder_id: "unknown".into(),
            normalized: false,
        }
    }
}
