//! Model archive: one header line, a JSON manifest, then little-endian f64
//! blobs. The header carries the manifest length and SHA-256; every blob
//! entry in the manifest carries its own offset, length and SHA-256.
//!
//! ```text
//! ENFCASCADE <version> <manifest bytes> <manifest sha256>\n
//! <manifest json>
//! <blob data>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CascadeModel, KindModel, FORMAT_VERSION};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureMask, Standardizer};
use crate::grid::{DataKind, GridInfo, GridLabel};
use crate::polematch::PoleDatabase;
use crate::svm::{BinarySvm, MulticlassSvm};

const MAGIC: &str = "ENFCASCADE";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobRef {
    offset: usize,
    len: usize,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct MachineEntry {
    rows: usize,
    support_vectors: BlobRef,
    dual_coef: BlobRef,
    bias: f64,
    gamma: f64,
    c: f64,
    sigmoid_a: f64,
    sigmoid_b: f64,
    converged: bool,
    kkt_violation: f64,
}

#[derive(Serialize, Deserialize)]
struct KindEntry {
    kind: DataKind,
    labels: Vec<GridLabel>,
    mask: FeatureMask,
    standardizer_mean: BlobRef,
    standardizer_std: BlobRef,
    c: f64,
    gamma: f64,
    cv_accuracy: f64,
    machines: Vec<MachineEntry>,
    /// Interleaved re/im pairs per grid.
    poles: BTreeMap<GridLabel, BlobRef>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: PipelineConfig,
    grids: Vec<GridInfo>,
    kinds: Vec<KindEntry>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Default)]
struct BlobWriter {
    data: Vec<u8>,
}

impl BlobWriter {
    fn push(&mut self, values: impl IntoIterator<Item = f64>) -> BlobRef {
        let offset = self.data.len();
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
        let len = self.data.len() - offset;
        BlobRef {
            offset,
            len,
            sha256: sha_hex(&self.data[offset..]),
        }
    }
}

struct BlobReader<'a> {
    data: &'a [u8],
}

impl BlobReader<'_> {
    fn get(&self, r: &BlobRef) -> Result<Vec<f64>> {
        let end = r
            .offset
            .checked_add(r.len)
            .filter(|&e| e <= self.data.len() && r.len % 8 == 0)
            .ok_or_else(|| Error::CorruptModel(format!("blob at {} exceeds the archive", r.offset)))?;
        let bytes = &self.data[r.offset..end];
        if sha_hex(bytes) != r.sha256 {
            return Err(Error::CorruptModel(format!("checksum mismatch for blob at {}", r.offset)));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

/// Serialises a model to archive bytes.
pub fn write_model(model: &CascadeModel) -> Vec<u8> {
    let mut blobs = BlobWriter::default();
    let kinds = model
        .kinds
        .iter()
        .map(|(&kind, km)| {
            let svm = &km.svm;
            let machines = svm
                .machines
                .iter()
                .map(|m| MachineEntry {
                    rows: m.support_vectors.len(),
                    support_vectors: blobs.push(m.support_vectors.iter().flatten().copied()),
                    dual_coef: blobs.push(m.dual_coef.iter().copied()),
                    bias: m.bias,
                    gamma: m.gamma,
                    c: m.c,
                    sigmoid_a: m.sigmoid_a,
                    sigmoid_b: m.sigmoid_b,
                    converged: m.converged,
                    kkt_violation: m.kkt_violation,
                })
                .collect();
            let poles = km
                .poles
                .grids()
                .map(|g| {
                    let p = km.poles.poles(g).unwrap_or(&[]);
                    (g, blobs.push(p.iter().flat_map(|z| [z.re, z.im])))
                })
                .collect();
            KindEntry {
                kind,
                labels: svm.labels.clone(),
                mask: svm.mask.clone(),
                standardizer_mean: blobs.push(svm.standardizer.mean.iter().copied()),
                standardizer_std: blobs.push(svm.standardizer.std.iter().copied()),
                c: svm.c,
                gamma: svm.gamma,
                cv_accuracy: svm.cv_accuracy,
                machines,
                poles,
            }
        })
        .collect();
    let manifest = Manifest {
        format_version: model.format_version,
        config: model.config.clone(),
        grids: model.grids.clone(),
        kinds,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    let mut out = format!("{MAGIC} {} {} {}\n", model.format_version, json.len(), sha_hex(&json)).into_bytes();
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs.data);
    out
}

/// Parses archive bytes, verifying version and checksums.
pub fn read_model(bytes: &[u8]) -> Result<CascadeModel> {
    let corrupt = |m: &str| Error::CorruptModel(m.to_string());
    let nl = bytes
        .iter()
        .take(256)
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| corrupt("header is not text"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(corrupt("not a model archive"));
    }
    let version: u32 = fields[1].parse().map_err(|_| corrupt("bad version field"))?;
    if version > FORMAT_VERSION || version == 0 {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len: usize = fields[2].parse().map_err(|_| corrupt("bad manifest length"))?;
    let start = nl + 1;
    let json = bytes
        .get(start..start.saturating_add(len))
        .ok_or_else(|| corrupt("truncated manifest"))?;
    if sha_hex(json) != fields[3] {
        return Err(corrupt("manifest checksum mismatch"));
    }
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::CorruptModel(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(corrupt("header and manifest versions differ"));
    }
    manifest.config.validate()?;
    let blobs = BlobReader {
        data: &bytes[start + len..],
    };

    let mut kinds = BTreeMap::new();
    for k in manifest.kinds {
        let mut machines = Vec::with_capacity(k.machines.len());
        let dim = k.mask.len();
        for m in k.machines {
            let flat = blobs.get(&m.support_vectors)?;
            let dual_coef = blobs.get(&m.dual_coef)?;
            if flat.len() != m.rows * dim || dual_coef.len() != m.rows {
                return Err(corrupt("support vector shape"));
            }
            machines.push(BinarySvm {
                support_vectors: flat.chunks(dim.max(1)).map(<[f64]>::to_vec).collect(),
                dual_coef,
                bias: m.bias,
                gamma: m.gamma,
                c: m.c,
                sigmoid_a: m.sigmoid_a,
                sigmoid_b: m.sigmoid_b,
                converged: m.converged,
                kkt_violation: m.kkt_violation,
            });
        }
        let n = k.labels.len();
        if machines.len() != n * n.saturating_sub(1) / 2 {
            return Err(corrupt("machine count does not match label count"));
        }
        let standardizer = Standardizer {
            mean: blobs.get(&k.standardizer_mean)?,
            std: blobs.get(&k.standardizer_std)?,
        };
        if standardizer.mean.len() != dim || standardizer.std.len() != dim {
            return Err(corrupt("standardizer shape"));
        }
        let mut poles = PoleDatabase::new();
        for (g, r) in &k.poles {
            let flat = blobs.get(r)?;
            if flat.len() % 2 != 0 {
                return Err(corrupt("odd pole blob"));
            }
            poles.insert(*g, flat.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])));
        }
        let svm = MulticlassSvm {
            kind: k.kind,
            labels: k.labels,
            machines,
            mask: k.mask,
            standardizer,
            c: k.c,
            gamma: k.gamma,
            cv_accuracy: k.cv_accuracy,
        };
        kinds.insert(k.kind, KindModel { svm, poles });
    }
    Ok(CascadeModel {
        format_version: version,
        config: manifest.config,
        kinds,
        grids: manifest.grids,
    })
}

pub fn save_model(model: &CascadeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CascadeModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes).map_err(|e| Error::in_file(path, e))
}
