//! Binary scene-graph files with a JSON sidecar for the generator settings.
//! The byte layout is specified in `docs/graph-file-format.md`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::graph::{NodeKind, SceneGraph};
use crate::model::{HeadSpec, NodeFilter, ReadoutActivation};
use crate::synth::{Dataset, SynthSpec, PRNG_NAME};
use crate::tensor::Tensor;

pub const GRAPH_MAGIC: &[u8; 8] = b"GPNNGRAF";
pub const GRAPH_VERSION: u32 = 1;

const HAS_ADJACENCY: u8 = 1;
const HAS_LABELS: u8 = 2;
const HAS_BOXES: u8 = 4;

/// Sidecar path: the data path with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn activation_code(a: ReadoutActivation) -> u8 {
    match a {
        ReadoutActivation::Sigmoid => 0,
        ReadoutActivation::Softmax => 1,
    }
}

fn activation_from(c: u8) -> Result<ReadoutActivation> {
    match c {
        0 => Ok(ReadoutActivation::Sigmoid),
        1 => Ok(ReadoutActivation::Softmax),
        _ => Err(Error::Malformed(format!(
            "unknown readout activation code {c}"
        ))),
    }
}

pub fn encode(data: &Dataset) -> Result<Vec<u8>> {
    data.validate()?;
    let mut w = Writer::new();
    w.bytes(GRAPH_MAGIC);
    w.u32(GRAPH_VERSION);
    w.str(PRNG_NAME);
    w.u64(data.node_dim as u64);
    w.u64(data.edge_dim as u64);
    w.u32(data.heads.len() as u32);
    for h in &data.heads {
        w.str(&h.name);
        w.u64(h.classes as u64);
        w.u8(activation_code(h.activation));
        w.u8(h.nodes.code());
    }
    w.u64(data.sequences.len() as u64);
    for seq in &data.sequences {
        w.u64(seq.len() as u64);
        for s in seq {
            w.u64(s.node_count() as u64);
            for k in &s.node_kinds {
                w.u8(k.code());
            }
            w.f64s(s.node_features.data());
            w.f64s(s.edge_features.data());
            let flags = s.gt_adjacency.as_ref().map_or(0, |_| HAS_ADJACENCY)
                | s.gt_labels.as_ref().map_or(0, |_| HAS_LABELS)
                | s.boxes.as_ref().map_or(0, |_| HAS_BOXES);
            w.u8(flags);
            if let Some(a) = &s.gt_adjacency {
                w.f64s(a.data());
            }
            if let Some(ls) = &s.gt_labels {
                for l in ls {
                    w.f64s(l.data());
                }
            }
            if let Some(bs) = &s.boxes {
                for b in bs {
                    w.f64s(&b.to_array());
                }
            }
        }
    }
    Ok(w.finish())
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(GRAPH_MAGIC)?;
    let version = r.u32()?;
    if version != GRAPH_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: GRAPH_VERSION,
        });
    }
    let prng = r.str()?;
    if prng != PRNG_NAME {
        return Err(Error::Malformed(format!("unknown generator {prng:?}")));
    }
    let dv = r.usize()?;
    let de = r.usize()?;
    let head_count = r.u32()? as usize;
    let mut heads = Vec::with_capacity(head_count.min(1024));
    for _ in 0..head_count {
        let name = r.str()?;
        let classes = r.usize()?;
        let activation = activation_from(r.u8()?)?;
        let nodes = NodeFilter::from_code(r.u8()?)?;
        heads.push(HeadSpec {
            name,
            classes,
            activation,
            nodes,
        });
    }
    let seq_count = r.usize()?;
    let mut sequences = Vec::new();
    for _ in 0..seq_count {
        let frames = r.usize()?;
        let mut seq = Vec::new();
        for _ in 0..frames {
            let n = r.usize()?;
            let kinds = r
                .take(n)?
                .iter()
                .map(|&c| NodeKind::from_code(c))
                .collect::<Result<Vec<_>>>()?;
            let tensor = |shape: Vec<usize>, r: &mut Reader| -> Result<Tensor> {
                let len = shape
                    .iter()
                    .try_fold(1usize, |a, &d| a.checked_mul(d))
                    .ok_or_else(|| Error::Malformed("tensor size overflows".into()))?;
                Ok(Tensor::from_parts(shape, r.f64s(len)?))
            };
            let node_features = tensor(vec![n, dv], &mut r)?;
            let edge_features = tensor(vec![n, n, de], &mut r)?;
            let flags = r.u8()?;
            if flags & !(HAS_ADJACENCY | HAS_LABELS | HAS_BOXES) != 0 {
                return Err(Error::Malformed(format!(
                    "unknown scene flags {flags:#04x}"
                )));
            }
            let gt_adjacency = if flags & HAS_ADJACENCY != 0 {
                Some(tensor(vec![n, n], &mut r)?)
            } else {
                None
            };
            let gt_labels = if flags & HAS_LABELS != 0 {
                Some(
                    heads
                        .iter()
                        .map(|h| tensor(vec![n, h.classes], &mut r))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            let boxes = if flags & HAS_BOXES != 0 {
                let flat = r.f64s(n.saturating_mul(4))?;
                Some(
                    flat.chunks(4)
                        .map(|c| BBox::new(c[0], c[1], c[2], c[3]))
                        .collect(),
                )
            } else {
                None
            };
            seq.push(SceneGraph {
                node_features,
                edge_features,
                node_kinds: kinds,
                gt_adjacency,
                gt_labels,
                boxes,
            });
        }
        sequences.push(seq);
    }
    if !r.finished() {
        return Err(Error::Malformed(
            "trailing bytes after the last sequence".into(),
        ));
    }
    let data = Dataset {
        node_dim: dv,
        edge_dim: de,
        heads,
        sequences,
        spec: None,
    };
    data.validate()?;
    Ok(data)
}

/// Writes the binary file and, when `data.spec` is set, its JSON sidecar.
pub fn write_graph_file(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(data)?)?;
    if let Some(spec) = &data.spec {
        let json =
            serde_json::to_string_pretty(spec).map_err(|e| Error::Malformed(e.to_string()))?;
        fs::write(sidecar_path(path), json + "\n")?;
    }
    Ok(())
}

/// Reads a graph file, attaching the sidecar spec when one exists.
pub fn read_graph_file(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut data = decode(&fs::read(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = fs::read_to_string(&side)?;
        let spec: SynthSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Malformed(format!("{}: {e}", side.display())))?;
        data.spec = Some(spec);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Structure};

    fn sample() -> Dataset {
        generate(&SynthSpec {
            scenes: 4,
            frames: 2,
            structure: Structure::MostSalient,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = sample();
        let mut back = decode(&encode(&d).unwrap()).unwrap();
        back.spec = d.spec.clone();
        assert_eq!(back, d);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&sample()).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic { .. })));
        let mut newer = bytes.clone();
        newer[8..12].copy_from_slice(&(GRAPH_VERSION + 1).to_le_bytes());
        let err = decode(&newer).unwrap_err();
        assert!(matches!(
            err,
            Error::VersionMismatch {
                found: 2,
                expected: 1
            }
        ));
        assert!(err.to_string().contains('2') && err.to_string().contains('1'));
    }
}
