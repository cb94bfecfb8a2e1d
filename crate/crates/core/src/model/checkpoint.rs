//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic `PLSTCKPT`, `u32` format version, `u64` metadata
//! length, UTF-8 JSON metadata, then little-endian `f64` arrays in the order
//! listed by the metadata manifest: every layer's weight, bias and optional
//! norm gain/shift, the same again for the momentum buffers, then the tracker
//! utilities and references when present.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenseLayer, Network, NetworkSpec, NormParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::utilities::{LayerTracker, UnitTracker, UtilityKind};

pub const MAGIC: &[u8; 8] = b"PLSTCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub network: Network<S>,
    pub step: u64,
    /// Completed tasks when the checkpoint was taken.
    pub task: u64,
    /// Named generator positions (reset stream, shuffle stream, ...).
    pub rng: BTreeMap<String, RngState>,
    pub tracker: Option<UnitTracker<S>>,
    /// Free-form run metadata (configuration, permutation seed, ...).
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(network: Network<S>, step: u64) -> Self {
        Self {
            network,
            step,
            task: 0,
            rng: BTreeMap::new(),
            tracker: None,
            extra: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackerMeta {
    kind: UtilityKind,
    decay: f64,
    ages: Vec<Vec<u64>>,
    counters: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    spec: NetworkSpec,
    scalar: String,
    step: u64,
    task: u64,
    rng: BTreeMap<String, RngState>,
    tracker: Option<TrackerMeta>,
    extra: serde_json::Map<String, serde_json::Value>,
    arrays: Vec<ArrayEntry>,
}

fn layer_names(prefix: &str, l: usize, layer: &DenseLayer<impl Scalar>) -> Vec<String> {
    let mut names = vec![format!("{prefix}.{l}.weight"), format!("{prefix}.{l}.bias")];
    if layer.norm.is_some() {
        names.push(format!("{prefix}.{l}.gain"));
        names.push(format!("{prefix}.{l}.shift"));
    }
    names
}

/// Serializes a checkpoint to bytes.
pub fn encode<S: Scalar>(ckpt: &Checkpoint<S>) -> Result<Vec<u8>> {
    let net = &ckpt.network;
    let mut arrays: Vec<(String, &[S])> = Vec::new();
    for (prefix, group) in [("param", &net.layers), ("velocity", &net.velocity)] {
        for (l, layer) in group.iter().enumerate() {
            arrays.extend(
                layer_names(prefix, l, layer)
                    .into_iter()
                    .zip(layer.arrays()),
            );
        }
    }
    if let Some(t) = &ckpt.tracker {
        for (l, lt) in t.layers.iter().enumerate() {
            arrays.push((format!("tracker.{l}.utility"), &lt.utility));
            arrays.push((format!("tracker.{l}.reference"), &lt.reference));
        }
    }
    let meta = Metadata {
        spec: net.spec().clone(),
        scalar: S::NAME.to_string(),
        step: ckpt.step,
        task: ckpt.task,
        rng: ckpt.rng.clone(),
        tracker: ckpt.tracker.as_ref().map(|t| TrackerMeta {
            kind: t.kind,
            decay: t.decay.as_f64(),
            ages: t.layers.iter().map(|l| l.age.clone()).collect(),
            counters: t.layers.iter().map(|l| l.counter).collect(),
        }),
        extra: ckpt.extra.clone(),
        arrays: arrays
            .iter()
            .map(|(name, a)| ArrayEntry {
                name: name.clone(),
                len: a.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta)
        .map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
    let payload: usize = arrays.iter().map(|(_, a)| a.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, a) in &arrays {
        for v in a.iter() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                reason: format!(
                    "{what} needs {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats<S: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<S>> {
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| S::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode<S: Scalar>(bytes: &[u8], path: &Path) -> Result<Checkpoint<S>> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(corrupt(format!("bad magic bytes {magic:?}")));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let meta_len = u64::from_le_bytes(r.take(8, "metadata length")?.try_into().unwrap());
    let meta_len =
        usize::try_from(meta_len).map_err(|_| corrupt("metadata length overflows".into()))?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| corrupt(format!("metadata: {e}")))?;
    meta.spec.validate().map_err(|e| corrupt(e.to_string()))?;

    let mut manifest = meta.arrays.iter();
    let mut next = |name: String, len: usize, r: &mut Reader<'_>| -> Result<Vec<S>> {
        match manifest.next() {
            Some(e) if e.name == name && e.len == len => r.floats(len, &name),
            Some(e) => Err(corrupt(format!(
                "manifest lists {} ({} values) where {name} ({len} values) was expected",
                e.name, e.len
            ))),
            None => Err(corrupt(format!("manifest ends before {name}"))),
        }
    };

    let spec = &meta.spec;
    let depth = spec.widths.len() - 1;
    let mut groups: Vec<Vec<DenseLayer<S>>> = Vec::with_capacity(2);
    for prefix in ["param", "velocity"] {
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let weight = next(format!("{prefix}.{l}.weight"), fan_in * fan_out, &mut r)?;
            let bias = next(format!("{prefix}.{l}.bias"), fan_out, &mut r)?;
            let norm = if l + 1 < depth && spec.layer_norm.is_some() {
                Some(NormParams {
                    gain: next(format!("{prefix}.{l}.gain"), fan_out, &mut r)?,
                    shift: next(format!("{prefix}.{l}.shift"), fan_out, &mut r)?,
                })
            } else {
                None
            };
            layers.push(DenseLayer {
                weight: Tensor::from_vec(&[fan_in, fan_out], weight)?,
                bias,
                norm,
            });
        }
        groups.push(layers);
    }
    let velocity = groups.pop().unwrap();
    let layers = groups.pop().unwrap();
    let network = Network::from_parts(spec.clone(), layers, velocity)?;

    let tracker = match &meta.tracker {
        None => None,
        Some(t) => {
            let hidden = spec.hidden_widths();
            if t.ages.len() != hidden.len() || t.counters.len() != hidden.len() {
                return Err(corrupt("tracker depth does not match the network".into()));
            }
            let mut layers = Vec::with_capacity(hidden.len());
            for (l, &w) in hidden.iter().enumerate() {
                if t.ages[l].len() != w {
                    return Err(corrupt(format!(
                        "tracker layer {l} has {} ages for {w} units",
                        t.ages[l].len()
                    )));
                }
                layers.push(LayerTracker {
                    age: t.ages[l].clone(),
                    utility: next(format!("tracker.{l}.utility"), w, &mut r)?,
                    reference: next(format!("tracker.{l}.reference"), w, &mut r)?,
                    counter: t.counters[l],
                });
            }
            Some(UnitTracker {
                kind: t.kind,
                decay: S::of(t.decay),
                layers,
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        network,
        step: meta.step,
        task: meta.task,
        rng: meta.rng,
        tracker,
        extra: meta.extra,
    })
}

/// Writes `ckpt` to `path`, going through a temporary file so a crash never
/// leaves a half-written checkpoint under the final name.
pub fn save_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    let tmp = path.with_extension("bin.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
