//! Versioned binary checkpoints.
//!
//! Layout: magic "EHRT", u32 LE format version, u64 LE header length, a
//! JSON header (stage, config, schema, optional vocab and task, tensor
//! directory, optimizer step count), then each tensor's f32 little-endian
//! payload in directory order, and a trailing SHA-256 over everything
//! before it. Serialization is deterministic, so equal checkpoints have
//! equal digests. Frozen-ness is stage policy, not state: loaders get all
//! parameters thawed.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::tabular::schema::FeatureSchema;
use crate::text::Vocab;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

use super::config::{RunConfig, Stage};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EHRT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: Stage,
    pub config: RunConfig,
    pub schema: FeatureSchema,
    pub vocab: Option<Vocab>,
    /// fine-tuning task name, present on finetune checkpoints
    pub task: Option<String>,
    pub params: ParamStore<f32>,
    pub opt_t: u64,
    pub opt_m: BTreeMap<String, Tensor<f32>>,
    pub opt_v: BTreeMap<String, Tensor<f32>>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    kind: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    stage: Stage,
    config: RunConfig,
    schema: FeatureSchema,
    vocab: Option<String>,
    task: Option<String>,
    opt_t: u64,
    tensors: Vec<TensorEntry>,
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor<f32>) {
    for &v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        for (name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                kind: "param".to_string(),
                name: name.clone(),
                shape: t.shape.clone(),
            });
        }
        for (kind, map) in [("opt_m", &self.opt_m), ("opt_v", &self.opt_v)] {
            for (name, t) in map {
                tensors.push(TensorEntry {
                    kind: kind.to_string(),
                    name: name.clone(),
                    shape: t.shape.clone(),
                });
            }
        }
        let header = Header {
            stage: self.stage,
            config: self.config.clone(),
            schema: self.schema.clone(),
            vocab: self.vocab.as_ref().map(|v| v.to_json()),
            task: self.task.clone(),
            opt_t: self.opt_t,
            tensors,
        };
        let header_json = serde_json::to_vec(&header)?;

        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (_, t) in self.params.iter() {
            push_tensor(&mut out, t);
        }
        for map in [&self.opt_m, &self.opt_v] {
            for t in map.values() {
                push_tensor(&mut out, t);
            }
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 4 + 4 + 8 + 32 {
            return Err(Error::Integrity(format!(
                "checkpoint too short: {} bytes",
                bytes.len()
            )));
        }
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("bad magic bytes".to_string()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("sliced"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let hash = Sha256::digest(body);
        if hash.as_slice() != trailer {
            return Err(Error::Integrity("content hash mismatch".to_string()));
        }

        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("sliced")) as usize;
        let header_end = 16usize.checked_add(header_len).ok_or_else(|| {
            Error::Integrity("header length overflows".to_string())
        })?;
        if header_end > body.len() {
            return Err(Error::Integrity("header truncated".to_string()));
        }
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;

        let mut cursor = header_end;
        let mut params: ParamStore<f32> = ParamStore::new();
        let mut opt_m = BTreeMap::new();
        let mut opt_v = BTreeMap::new();
        for entry in &header.tensors {
            let len: usize = entry.shape.iter().product();
            let byte_len = len * 4;
            if cursor + byte_len > body.len() {
                return Err(Error::Integrity(format!(
                    "payload truncated at tensor {:?}",
                    entry.name
                )));
            }
            let data: Vec<f32> = bytes[cursor..cursor + byte_len]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("chunked")))
                .collect();
            cursor += byte_len;
            let t = Tensor::from_vec(&entry.shape, data);
            match entry.kind.as_str() {
                "param" => {
                    if params.contains(&entry.name) {
                        return Err(Error::Integrity(format!(
                            "duplicate parameter {:?}",
                            entry.name
                        )));
                    }
                    params.insert(&entry.name, t);
                }
                "opt_m" => {
                    if opt_m.insert(entry.name.clone(), t).is_some() {
                        return Err(Error::Integrity(format!(
                            "duplicate opt_m tensor {:?}",
                            entry.name
                        )));
                    }
                }
                "opt_v" => {
                    if opt_v.insert(entry.name.clone(), t).is_some() {
                        return Err(Error::Integrity(format!(
                            "duplicate opt_v tensor {:?}",
                            entry.name
                        )));
                    }
                }
                other => {
                    return Err(Error::Integrity(format!(
                        "unknown tensor kind {other:?}"
                    )))
                }
            }
        }
        if cursor != body.len() {
            return Err(Error::Integrity(format!(
                "{} unexpected trailing payload bytes",
                body.len() - cursor
            )));
        }

        Ok(Checkpoint {
            stage: header.stage,
            config: header.config,
            schema: header.schema,
            vocab: match header.vocab {
                Some(j) => Some(Vocab::from_json(&j)?),
                None => None,
            },
            task: header.task,
            params,
            opt_t: header.opt_t,
            opt_m,
            opt_v,
        })
    }

    /// Hex SHA-256 of the serialized form.
    pub fn digest(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        let hash = Sha256::digest(&bytes);
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Writes the checkpoint and returns its hex digest.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<String> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, &bytes)?;
    let hash = Sha256::digest(&bytes);
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::schema::{build_schema, Cell, RawTable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn sample() -> Checkpoint {
        let table = RawTable {
            columns: vec!["a".into(), "b".into()],
            rows: (0..8)
                .map(|i| {
                    vec![
                        Cell::Value(format!("{}.5", i)),
                        Cell::Value(if i % 2 == 0 { "x" } else { "y" }.to_string()),
                    ]
                })
                .collect(),
        };
        let schema = build_schema(&table, &[]).unwrap();
        let vocab = Vocab::build(
            ["alpha beta beta", "beta gamma"].iter().copied(),
            1,
        );
        let mut params: ParamStore<f32> = ParamStore::new();
        let mut r = ChaCha12Rng::seed_from_u64(3);
        params.insert("m.w", Tensor::randn(&[4, 3], 0.3f32, &mut r));
        params.insert("m.b", Tensor::zeros(&[3]));
        let mut opt_m = BTreeMap::new();
        let mut opt_v = BTreeMap::new();
        opt_m.insert("m.w".to_string(), Tensor::randn(&[4, 3], 0.1f32, &mut r));
        opt_v.insert("m.w".to_string(), Tensor::randn(&[4, 3], 0.01f32, &mut r));
        Checkpoint {
            stage: Stage::Masked,
            config: RunConfig::for_stage(Stage::Masked, 5),
            schema,
            vocab: Some(vocab),
            task: None,
            params,
            opt_t: 17,
            opt_m,
            opt_v,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ckpt = sample();
        let dir = std::env::temp_dir().join(format!("ehrtext_ckpt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        let digest = save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.stage, ckpt.stage);
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.schema, ckpt.schema);
        assert_eq!(back.task, None);
        assert_eq!(back.opt_t, 17);
        let names: Vec<_> = back.params.names().cloned().collect();
        assert_eq!(names, vec!["m.b".to_string(), "m.w".to_string()]);
        for (name, t) in ckpt.params.iter() {
            let u = back.params.get(name);
            assert_eq!(t.shape, u.shape);
            let a: Vec<u32> = t.data.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = u.data.iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
        assert_eq!(
            ckpt.opt_m["m.w"].data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.opt_m["m.w"].data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.digest().unwrap(), digest);
        assert_eq!(
            back.vocab.as_ref().unwrap().to_json(),
            ckpt.vocab.as_ref().unwrap().to_json()
        );
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn serialization_is_deterministic() {
        let ckpt = sample();
        assert_eq!(ckpt.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
        let mut other = sample();
        other.params.get_mut("m.w").data[0] += 1.0;
        assert_ne!(ckpt.digest().unwrap(), other.digest().unwrap());
    }

    #[test]
    fn truncation_is_an_integrity_error() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 40];
        match Checkpoint::from_bytes(cut) {
            Err(Error::Integrity(_)) => {}
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn corruption_is_an_integrity_error() {
        let mut bytes = sample().to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Integrity(_)) => {}
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn version_bump_is_rejected_before_hashing() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::UnsupportedVersion { found: 2, expected: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Integrity(_))
        ));
    }
}
