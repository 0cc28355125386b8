//! Binary checkpoints for adapter factors and attention weights.
//!
//! Layout: an 8-byte little-endian `u64` header length, a UTF-8 JSON header
//! of that length, then every matrix as row-major little-endian `f64` in the
//! order the header lists them. Loading checks the header against the
//! declared dims and schemes before any matrix is built, so a failed load
//! leaves nothing behind.

use std::collections::BTreeMap;
use std::path::Path;

use headwise::{AdapterScheme, AdapterState, AttentionWeights, Matrix, ModelDims, Target};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

const FORMAT: &str = "headwise-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Adapters,
    AttentionWeights,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    kind: Kind,
    dims: ModelDims,
    seeds: BTreeMap<String, u64>,
    records: Vec<Record>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    layer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scheme: Option<AdapterScheme>,
    matrices: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Trained adapters of every layer plus the seeds that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterCheckpoint {
    pub dims: ModelDims,
    pub seeds: BTreeMap<String, u64>,
    pub layers: Vec<BTreeMap<Target, AdapterState>>,
}

/// Attention weights of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsCheckpoint {
    pub dims: ModelDims,
    pub seeds: BTreeMap<String, u64>,
    pub layers: Vec<AttentionWeights>,
}

fn encode(header: &Header, matrices: &[&Matrix]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let payload: usize = matrices.iter().map(|m| m.len() * 8).sum();
    let mut out = Vec::with_capacity(8 + json.len() + payload);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for m in matrices {
        out.extend_from_slice(&m.to_le_bytes());
    }
    out
}

/// Splits `bytes` into the parsed header and a payload whose length matches it.
fn decode_header(bytes: &[u8], want: Kind) -> Result<(Header, &[u8]), String> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or("file shorter than the 8-byte header length")?;
    let header_len = u64::from_le_bytes(len_bytes);
    let body = &bytes[8..];
    if header_len > body.len() as u64 {
        return Err(format!("header truncated: declares {header_len} bytes, {} present", body.len()));
    }
    let (json, payload) = body.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(json).map_err(|e| format!("invalid header: {e}"))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(format!(
            "unsupported format {} version {} (expected {FORMAT} version {VERSION})",
            header.format, header.version
        ));
    }
    if header.kind != want {
        return Err(format!("holds {:?}, expected {want:?}", header.kind));
    }
    let mut declared: u64 = 0;
    for r in &header.records {
        for e in &r.matrices {
            declared += (e.rows as u64) * (e.cols as u64) * 8;
        }
    }
    match (payload.len() as u64).cmp(&declared) {
        std::cmp::Ordering::Less => Err(format!(
            "payload truncated: header declares {declared} bytes, {} present",
            payload.len()
        )),
        std::cmp::Ordering::Greater => Err(format!(
            "{} trailing bytes after the declared payload",
            payload.len() as u64 - declared
        )),
        std::cmp::Ordering::Equal => Ok((header, payload)),
    }
}

fn check_layer(layer: usize, dims: &ModelDims) -> Result<(), String> {
    if layer >= dims.n_layers {
        return Err(format!("record for layer {layer} but dims have {} layers", dims.n_layers));
    }
    Ok(())
}

/// Reads `entries` off the front of `payload`, checking each shape against
/// `expected` (name, shape) in order.
fn take_matrices(
    payload: &mut &[u8],
    entries: &[Entry],
    expected: &[(String, (usize, usize))],
    prefix: &str,
) -> Result<Vec<Matrix>, String> {
    if entries.len() != expected.len() {
        return Err(format!(
            "{prefix}: header lists {} matrices, expected {}",
            entries.len(),
            expected.len()
        ));
    }
    let mut out = Vec::with_capacity(entries.len());
    for (e, (name, shape)) in entries.iter().zip(expected) {
        if &e.name != name {
            return Err(format!("{prefix}: found matrix `{}` where `{name}` was expected", e.name));
        }
        if (e.rows, e.cols) != *shape {
            return Err(format!(
                "matrix {prefix}.{name}: header declares {}×{}, expected {}×{}",
                e.rows, e.cols, shape.0, shape.1
            ));
        }
        let n = e.rows * e.cols;
        let (chunk, rest) = payload.split_at(n * 8);
        *payload = rest;
        let data = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        out.push(Matrix::new(e.rows, e.cols, data).map_err(|err| format!("matrix {prefix}.{name}: {err}"))?);
    }
    Ok(out)
}

impl AdapterCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Vec::new();
        let mut matrices = Vec::new();
        for (layer, map) in self.layers.iter().enumerate() {
            for (&target, st) in map {
                let named = st.factors.named();
                records.push(Record {
                    layer,
                    target: Some(target),
                    scheme: Some(st.scheme),
                    matrices: named
                        .iter()
                        .map(|(name, m)| Entry {
                            name: name.clone(),
                            rows: m.rows(),
                            cols: m.cols(),
                        })
                        .collect(),
                });
                matrices.extend(named.into_iter().map(|(_, m)| m));
            }
        }
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            kind: Kind::Adapters,
            dims: self.dims,
            seeds: self.seeds.clone(),
            records,
        };
        encode(&header, &matrices)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let (header, mut payload) = decode_header(bytes, Kind::Adapters)?;
        let dims = header.dims;
        let mut layers = vec![BTreeMap::new(); dims.n_layers];
        for r in &header.records {
            check_layer(r.layer, &dims)?;
            let (target, scheme) = match (r.target, r.scheme) {
                (Some(t), Some(s)) => (t, s),
                _ => return Err(format!("adapter record for layer {} lacks target or scheme", r.layer)),
            };
            let prefix = format!("layer{}.{target}", r.layer);
            scheme.validate(&dims, &prefix).map_err(|e| e.to_string())?;
            let shapes = scheme.factor_shapes(&dims);
            let expected: Vec<(String, (usize, usize))> =
                shapes.named().into_iter().map(|(n, &s)| (n, s)).collect();
            let mats = take_matrices(&mut payload, &r.matrices, &expected, &prefix)?;
            let factors = shapes.refill(mats).map_err(|e| e.to_string())?;
            let state = AdapterState {
                scheme,
                target,
                factors,
            };
            if layers[r.layer].insert(target, state).is_some() {
                return Err(format!("duplicate record for {prefix}"));
            }
        }
        Ok(Self {
            dims,
            seeds: header.seeds,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| CliError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

fn weight_shapes(dims: &ModelDims) -> Vec<(String, (usize, usize))> {
    let d = dims.model_dim;
    ["w_q", "w_k", "w_v", "w_o", "b_q", "b_k", "b_v", "b_o"]
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), if i < 4 { (d, d) } else { (1, d) }))
        .collect()
}

impl WeightsCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Vec::new();
        let mut matrices = Vec::new();
        for (layer, w) in self.layers.iter().enumerate() {
            let named = w.matrices();
            records.push(Record {
                layer,
                target: None,
                scheme: None,
                matrices: named
                    .iter()
                    .map(|(name, m)| Entry {
                        name: name.to_string(),
                        rows: m.rows(),
                        cols: m.cols(),
                    })
                    .collect(),
            });
            matrices.extend(named.into_iter().map(|(_, m)| m));
        }
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            kind: Kind::AttentionWeights,
            dims: self.dims,
            seeds: self.seeds.clone(),
            records,
        };
        encode(&header, &matrices)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let (header, mut payload) = decode_header(bytes, Kind::AttentionWeights)?;
        let dims = header.dims;
        if header.records.len() != dims.n_layers {
            return Err(format!(
                "{} weight records for {} layers",
                header.records.len(),
                dims.n_layers
            ));
        }
        let expected = weight_shapes(&dims);
        let mut layers = Vec::with_capacity(dims.n_layers);
        for (i, r) in header.records.iter().enumerate() {
            if r.layer != i {
                return Err(format!("weight record {i} is labelled layer {}", r.layer));
            }
            let mut m = take_matrices(&mut payload, &r.matrices, &expected, &format!("layer{i}"))?.into_iter();
            let mut next = || m.next().expect("eight matrices");
            layers.push(AttentionWeights {
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_o: next(),
                b_q: next(),
                b_k: next(),
                b_v: next(),
                b_o: next(),
            });
        }
        Ok(Self {
            dims,
            seeds: header.seeds,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| CliError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}
