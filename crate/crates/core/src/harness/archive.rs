//! Weight archives: a directory holding `manifest.json` and one
//! little-endian, row-major payload file `tensors.bin`.
//!
//! Tensors are laid out back to back in name order, so the payload size is
//! the sum of the declared byte lengths and every offset is the running sum
//! of the lengths before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::DType;
use half::f16;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cis::{EmbeddingModel, EmbeddingNetConfig};
use crate::conditioning::ContextIndex;
use crate::error::{Error, Result};
use crate::nets::{DiscriminatorConfig, DiscriminatorModel, GeneratorConfig, GeneratorModel};
use crate::nn::{HostTensor, ParamKind, VarStore};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "tensors.bin";
pub const FORMAT_TAG: &str = "cookcast-weights/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Generator,
    Discriminator,
    Cis,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Generator => "generator",
            ModelKind::Discriminator => "discriminator",
            ModelKind::Cis => "cis",
        }
    }
}

/// On-disk element type of one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoredDtype {
    Float32,
    Float16,
    Int8,
}

impl StoredDtype {
    pub fn size(self) -> usize {
        match self {
            StoredDtype::Float32 => 4,
            StoredDtype::Float16 => 2,
            StoredDtype::Int8 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantKind {
    Int8SymmetricPerTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantInfo {
    pub scheme: QuantKind,
    /// `value = code · scale`.
    pub scale: f64,
}

/// `(shape, dtype, kind, quant, encoded bytes)` of one tensor before layout.
pub type RawTensor = (
    Vec<usize>,
    StoredDtype,
    ParamKind,
    Option<QuantInfo>,
    Vec<u8>,
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: StoredDtype,
    pub kind: ParamKind,
    pub file: String,
    pub byte_offset: u64,
    pub byte_length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantInfo>,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub model_kind: ModelKind,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_index: Option<ContextIndex>,
    pub tensors: BTreeMap<String, TensorEntry>,
}

/// A manifest plus the encoded bytes of every tensor, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    pub manifest: Manifest,
    payloads: BTreeMap<String, Vec<u8>>,
}

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

impl WeightArchive {
    /// Assemble an archive, recomputing offsets from the payload lengths.
    pub fn new(
        model_kind: ModelKind,
        config: serde_json::Value,
        context_index: Option<ContextIndex>,
        tensors: BTreeMap<String, RawTensor>,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut payloads = BTreeMap::new();
        let mut offset = 0u64;
        for (name, (shape, dtype, kind, quant, bytes)) in tensors {
            let numel: usize = shape.iter().product();
            if bytes.len() != numel * dtype.size() {
                return fmt_err(format!(
                    "tensor {name}: {} payload bytes for {numel} {dtype:?} elements",
                    bytes.len()
                ));
            }
            if (dtype == StoredDtype::Int8) != quant.is_some() {
                return fmt_err(format!(
                    "tensor {name}: int8 storage and a quantisation scale must come together"
                ));
            }
            let len = bytes.len() as u64;
            entries.insert(
                name.clone(),
                TensorEntry {
                    shape,
                    dtype,
                    kind,
                    file: PAYLOAD_FILE.into(),
                    byte_offset: offset,
                    byte_length: len,
                    quant,
                },
            );
            payloads.insert(name, bytes);
            offset += len;
        }
        let manifest = Manifest {
            format: FORMAT_TAG.into(),
            model_kind,
            config,
            context_index,
            tensors: entries,
        };
        Ok(Self { manifest, payloads })
    }

    /// Float32 archive of a parameter store.
    pub fn from_store(
        model_kind: ModelKind,
        config: serde_json::Value,
        context_index: Option<ContextIndex>,
        store: &VarStore,
    ) -> Result<Self> {
        let tensors = store
            .to_host()?
            .into_iter()
            .map(|(name, h)| {
                let bytes = h.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name, (h.shape, StoredDtype::Float32, h.kind, None, bytes))
            })
            .collect();
        Self::new(model_kind, config, context_index, tensors)
    }

    pub fn payload(&self, name: &str) -> Option<&[u8]> {
        self.payloads.get(name).map(Vec::as_slice)
    }

    pub fn total_bytes(&self) -> u64 {
        self.manifest.tensors.values().map(|e| e.byte_length).sum()
    }

    /// Decoded values of one tensor (int8 codes are multiplied by the scale).
    pub fn values(&self, name: &str) -> Result<Vec<f32>> {
        let entry = self
            .manifest
            .tensors
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("tensor {name} is not in the archive")))?;
        let bytes = &self.payloads[name];
        Ok(match entry.dtype {
            StoredDtype::Float32 => bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            StoredDtype::Float16 => bytes
                .chunks_exact(2)
                .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
            StoredDtype::Int8 => {
                let scale = entry.quant.map(|q| q.scale).unwrap_or(0.0);
                bytes
                    .iter()
                    .map(|&b| (b as i8 as f64 * scale) as f32)
                    .collect()
            }
        })
    }

    /// Every tensor decoded to float32.
    pub fn to_host(&self) -> Result<BTreeMap<String, HostTensor>> {
        self.manifest
            .tensors
            .iter()
            .map(|(name, e)| {
                Ok((
                    name.clone(),
                    HostTensor {
                        shape: e.shape.clone(),
                        data: self.values(name)?,
                        kind: e.kind,
                    },
                ))
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blob = Vec::with_capacity(self.total_bytes() as usize);
        for name in self.manifest.tensors.keys() {
            blob.extend_from_slice(&self.payloads[name]);
        }
        fs::write(dir.join(PAYLOAD_FILE), blob)?;
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self.manifest)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| {
            Error::Format(format!(
                "cannot read {}: {e}",
                dir.join(MANIFEST_FILE).display()
            ))
        })?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        if manifest.format != FORMAT_TAG {
            return fmt_err(format!(
                "unsupported archive format {:?}, expected {FORMAT_TAG:?}",
                manifest.format
            ));
        }
        let mut files: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        for (name, e) in &manifest.tensors {
            if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
                return fmt_err(format!(
                    "tensor {name}: payload file {:?} must be a plain name",
                    e.file
                ));
            }
            if !files.contains_key(e.file.as_str()) {
                let bytes = fs::read(dir.join(&e.file)).map_err(|err| {
                    Error::Format(format!("tensor {name}: cannot read {}: {err}", e.file))
                })?;
                files.insert(&e.file, bytes);
            }
        }
        let mut payloads = BTreeMap::new();
        let mut claimed: BTreeMap<&str, u64> = BTreeMap::new();
        for (name, e) in &manifest.tensors {
            let expect = (e.numel() * e.dtype.size()) as u64;
            if e.byte_length != expect {
                return fmt_err(format!(
                    "tensor {name}: byte_length {} does not match shape {:?} as {:?} ({expect} bytes)",
                    e.byte_length, e.shape, e.dtype
                ));
            }
            if (e.dtype == StoredDtype::Int8) != e.quant.is_some() {
                return fmt_err(format!(
                    "tensor {name}: int8 storage and a quantisation scale must come together"
                ));
            }
            if let Some(q) = e.quant {
                if !(q.scale >= 0.0 && q.scale.is_finite()) {
                    return fmt_err(format!(
                        "tensor {name}: quantisation scale {} is not a finite nonnegative number",
                        q.scale
                    ));
                }
            }
            let file = &files[e.file.as_str()];
            let end = e
                .byte_offset
                .checked_add(e.byte_length)
                .filter(|&end| end <= file.len() as u64);
            let Some(end) = end else {
                return fmt_err(format!(
                    "tensor {name}: bytes {}..{} run past the end of {} ({} bytes)",
                    e.byte_offset,
                    e.byte_offset.saturating_add(e.byte_length),
                    e.file,
                    file.len()
                ));
            };
            payloads.insert(
                name.clone(),
                file[e.byte_offset as usize..end as usize].to_vec(),
            );
            *claimed.entry(e.file.as_str()).or_default() += e.byte_length;
        }
        for (file, bytes) in &files {
            if claimed[file] != bytes.len() as u64 {
                return fmt_err(format!(
                    "{file} holds {} bytes but the manifest declares {}",
                    bytes.len(),
                    claimed[file]
                ));
            }
        }
        Ok(Self { manifest, payloads })
    }
}

/// A network that can be written to and rebuilt from an archive.
pub trait Archived: Sized {
    const KIND: ModelKind;
    type Config: Serialize + DeserializeOwned;

    fn config(&self) -> &Self::Config;
    fn store(&self) -> &VarStore;
    fn context_index(&self) -> Option<&ContextIndex> {
        None
    }
    fn rebuild(config: Self::Config, index: Option<ContextIndex>, store: VarStore) -> Result<Self>;
}

impl Archived for GeneratorModel {
    const KIND: ModelKind = ModelKind::Generator;
    type Config = GeneratorConfig;

    fn config(&self) -> &GeneratorConfig {
        &self.config
    }
    fn store(&self) -> &VarStore {
        &self.store
    }
    fn context_index(&self) -> Option<&ContextIndex> {
        Some(&self.index)
    }
    fn rebuild(
        config: GeneratorConfig,
        index: Option<ContextIndex>,
        store: VarStore,
    ) -> Result<Self> {
        let index =
            index.ok_or_else(|| Error::Format("generator archive has no context_index".into()))?;
        GeneratorModel::from_store(config, index, store)
    }
}

impl Archived for DiscriminatorModel {
    const KIND: ModelKind = ModelKind::Discriminator;
    type Config = DiscriminatorConfig;

    fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }
    fn store(&self) -> &VarStore {
        &self.store
    }
    fn rebuild(
        config: DiscriminatorConfig,
        _index: Option<ContextIndex>,
        store: VarStore,
    ) -> Result<Self> {
        DiscriminatorModel::from_store(config, store)
    }
}

impl Archived for EmbeddingModel {
    const KIND: ModelKind = ModelKind::Cis;
    type Config = EmbeddingNetConfig;

    fn config(&self) -> &EmbeddingNetConfig {
        &self.config
    }
    fn store(&self) -> &VarStore {
        &self.store
    }
    fn rebuild(
        config: EmbeddingNetConfig,
        _index: Option<ContextIndex>,
        store: VarStore,
    ) -> Result<Self> {
        EmbeddingModel::from_store(config, store)
    }
}

pub fn archive_model<M: Archived>(model: &M) -> Result<WeightArchive> {
    WeightArchive::from_store(
        M::KIND,
        serde_json::to_value(model.config())?,
        model.context_index().cloned(),
        model.store(),
    )
}

/// Rebuild a network from an archive; every archived tensor must be used.
pub fn model_from_archive<M: Archived>(archive: &WeightArchive, dtype: DType) -> Result<M> {
    let m = &archive.manifest;
    if m.model_kind != M::KIND {
        return fmt_err(format!(
            "archive holds a {} model, expected {}",
            m.model_kind.as_str(),
            M::KIND.as_str()
        ));
    }
    let config: M::Config = serde_json::from_value(m.config.clone())
        .map_err(|e| Error::Format(format!("{} config in manifest: {e}", M::KIND.as_str())))?;
    let store = VarStore::from_host(&archive.to_host()?, dtype)?;
    let model = M::rebuild(config, m.context_index.clone(), store)?;
    if let Some(stray) = model.store().unused_names().first() {
        return fmt_err(format!(
            "tensor {stray} is not a parameter of the {} network",
            M::KIND.as_str()
        ));
    }
    Ok(model)
}

pub fn save_weights<M: Archived>(model: &M, dir: &Path) -> Result<WeightArchive> {
    let archive = archive_model(model)?;
    archive.save(dir)?;
    Ok(archive)
}

/// Float32 model from an archive on disk (quantised tensors are decoded).
pub fn load_weights<M: Archived>(dir: &Path) -> Result<M> {
    model_from_archive(&WeightArchive::load(dir)?, DType::F32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_generator() -> GeneratorModel {
        let cfg = GeneratorConfig {
            img_size: 16,
            base_dim: 8,
            dim_mults: vec![1, 2],
            resnet_groups: 4,
            n_mid: 1,
            ..Default::default()
        };
        let mut idx = ContextIndex::new();
        idx.register("cookie", "basic").unwrap();
        idx.register("cookie", "standard").unwrap();
        GeneratorModel::new(cfg, idx, DType::F32, 3).unwrap()
    }

    fn bits(store: &VarStore) -> BTreeMap<String, Vec<u32>> {
        store
            .to_host()
            .unwrap()
            .into_iter()
            .map(|(k, h)| (k, h.data.iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn generator_round_trip_is_bit_exact_and_echoes_context() {
        let dir = tempfile::tempdir().unwrap();
        let g = tiny_generator();
        save_weights(&g, dir.path()).unwrap();
        let back: GeneratorModel = load_weights(dir.path()).unwrap();
        assert_eq!(bits(&g.store), bits(&back.store));
        assert_eq!(back.index, g.index);
        assert_eq!(back.config, g.config);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("\"cookie|standard\": 1"));
    }

    #[test]
    fn offsets_tile_the_payload() {
        let a = archive_model(&tiny_generator()).unwrap();
        let mut next = 0;
        for e in a.manifest.tensors.values() {
            assert_eq!(e.byte_offset, next);
            next += e.byte_length;
        }
        assert_eq!(next, a.total_bytes());
    }

    #[test]
    fn tampered_byte_length_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let a = save_weights(&tiny_generator(), dir.path()).unwrap();
        let mut m = a.manifest.clone();
        let victim = m.tensors.keys().nth(3).unwrap().clone();
        m.tensors.get_mut(&victim).unwrap().byte_length += 4;
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_string(&m).unwrap(),
        )
        .unwrap();
        match WeightArchive::load(dir.path()) {
            Err(Error::Format(msg)) => assert!(msg.contains(&victim), "{msg}"),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        save_weights(&tiny_generator(), dir.path()).unwrap();
        let p = dir.path().join(PAYLOAD_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            WeightArchive::load(dir.path()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn wrong_model_kind_and_stray_tensors_are_rejected() {
        let g = tiny_generator();
        let a = archive_model(&g).unwrap();
        assert!(matches!(
            model_from_archive::<DiscriminatorModel>(&a, DType::F32),
            Err(Error::Format(_))
        ));

        let mut tensors: BTreeMap<_, _> = BTreeMap::new();
        for (name, e) in &a.manifest.tensors {
            tensors.insert(
                name.clone(),
                (
                    e.shape.clone(),
                    e.dtype,
                    e.kind,
                    e.quant,
                    a.payload(name).unwrap().to_vec(),
                ),
            );
        }
        tensors.insert(
            "extra.weight".into(),
            (
                vec![1],
                StoredDtype::Float32,
                ParamKind::Bias,
                None,
                vec![0; 4],
            ),
        );
        let b = WeightArchive::new(
            ModelKind::Generator,
            a.manifest.config.clone(),
            a.manifest.context_index.clone(),
            tensors,
        )
        .unwrap();
        match model_from_archive::<GeneratorModel>(&b, DType::F32) {
            Err(Error::Format(msg)) => assert!(msg.contains("extra.weight")),
            other => panic!("expected a format error, got {:?}", other.map(|_| ())),
        }
    }
}
