//! Post-training hybrid quantisation of weight archives.

use std::collections::BTreeMap;
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use super::archive::{QuantInfo, QuantKind, StoredDtype, WeightArchive};
use crate::error::{invalid, Error, Result};
use crate::nn::ParamKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    Float32,
    Float16,
    Int8SymmetricPerTensor,
}

impl Precision {
    fn stored(self) -> StoredDtype {
        match self {
            Precision::Float32 => StoredDtype::Float32,
            Precision::Float16 => StoredDtype::Float16,
            Precision::Int8SymmetricPerTensor => StoredDtype::Int8,
        }
    }
}

/// Storage precision per parameter role; roles not listed stay float32.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub policy: BTreeMap<ParamKind, Precision>,
}

impl Default for QuantScheme {
    /// Heavy conv/linear weights to int8, everything else to float16.
    fn default() -> Self {
        use ParamKind::*;
        use Precision::*;
        let policy = [
            (ConvWeight, Int8SymmetricPerTensor),
            (LinearWeight, Int8SymmetricPerTensor),
            (Bias, Float16),
            (Norm, Float16),
            (Film, Float16),
        ];
        Self {
            policy: policy.into_iter().collect(),
        }
    }
}

impl QuantScheme {
    pub fn precision(&self, kind: ParamKind) -> Precision {
        self.policy
            .get(&kind)
            .copied()
            .unwrap_or(Precision::Float32)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Symmetric per-tensor int8: `scale = max|x| / 127`, `code = round(x / scale)`.
/// An all-zero tensor gets scale 0 and zero codes.
pub fn quantize_int8(values: &[f32]) -> (f64, Vec<i8>) {
    let max_abs = values.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    if max_abs == 0.0 {
        return (0.0, vec![0; values.len()]);
    }
    // x·127/max keeps exact halves exact, unlike dividing by a rounded scale
    let codes = values
        .iter()
        .map(|&v| ((v as f64) * 127.0 / max_abs).round().clamp(-127.0, 127.0) as i8)
        .collect();
    (max_abs / 127.0, codes)
}

pub fn dequantize_int8(codes: &[i8], scale: f64) -> Vec<f64> {
    codes.iter().map(|&c| c as f64 * scale).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorQuantReport {
    pub name: String,
    pub kind: ParamKind,
    pub precision: Precision,
    pub shape: Vec<usize>,
    pub bytes_before: u64,
    pub bytes_after: u64,
    pub scale: Option<f64>,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub bytes_before: u64,
    pub bytes_after: u64,
    pub tensors: Vec<TensorQuantReport>,
}

impl QuantReport {
    pub fn reduction_factor(&self) -> f64 {
        self.bytes_before as f64 / self.bytes_after.max(1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "name",
            "kind",
            "precision",
            "bytes_before",
            "bytes_after",
            "scale",
            "max_abs_error",
        ])?;
        for t in &self.tensors {
            let kind = serde_json::to_value(t.kind)?;
            let precision = serde_json::to_value(t.precision)?;
            w.write_record([
                t.name.clone(),
                kind.as_str().unwrap_or_default().to_string(),
                precision.as_str().unwrap_or_default().to_string(),
                t.bytes_before.to_string(),
                t.bytes_after.to_string(),
                t.scale.map(|s| s.to_string()).unwrap_or_default(),
                t.max_abs_error.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Re-encode a float32 archive under `scheme`. Names, shapes and roles are
/// unchanged; only storage types, scales and offsets differ.
pub fn quantize_archive(
    archive: &WeightArchive,
    scheme: &QuantScheme,
) -> Result<(WeightArchive, QuantReport)> {
    let m = &archive.manifest;
    let mut tensors = BTreeMap::new();
    let mut report = Vec::with_capacity(m.tensors.len());
    for (name, e) in &m.tensors {
        if e.dtype != StoredDtype::Float32 {
            return invalid(format!(
                "tensor {name} is stored as {:?}; quantisation needs a float32 archive",
                e.dtype
            ));
        }
        let x = archive.values(name)?;
        let precision = scheme.precision(e.kind);
        let (bytes, quant, max_err): (Vec<u8>, _, f64) = match precision {
            Precision::Float32 => (
                archive.payload(name).unwrap_or_default().to_vec(),
                None,
                0.0,
            ),
            Precision::Float16 => {
                let h: Vec<f16> = x.iter().map(|&v| f16::from_f32(v)).collect();
                let err = x
                    .iter()
                    .zip(&h)
                    .fold(0.0f64, |m, (&a, b)| m.max((a as f64 - b.to_f64()).abs()));
                (h.iter().flat_map(|v| v.to_le_bytes()).collect(), None, err)
            }
            Precision::Int8SymmetricPerTensor => {
                let (scale, codes) = quantize_int8(&x);
                let deq = dequantize_int8(&codes, scale);
                let err = x
                    .iter()
                    .zip(&deq)
                    .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b).abs()));
                let q = QuantInfo {
                    scheme: QuantKind::Int8SymmetricPerTensor,
                    scale,
                };
                (codes.iter().map(|&c| c as u8).collect(), Some(q), err)
            }
        };
        report.push(TensorQuantReport {
            name: name.clone(),
            kind: e.kind,
            precision,
            shape: e.shape.clone(),
            bytes_before: e.byte_length,
            bytes_after: bytes.len() as u64,
            scale: quant.map(|q| q.scale),
            max_abs_error: max_err,
        });
        tensors.insert(
            name.clone(),
            (e.shape.clone(), precision.stored(), e.kind, quant, bytes),
        );
    }
    let out = WeightArchive::new(
        m.model_kind,
        m.config.clone(),
        m.context_index.clone(),
        tensors,
    )?;
    let report = QuantReport {
        bytes_before: archive.total_bytes(),
        bytes_after: out.total_bytes(),
        tensors: report,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_worked_int8_example() {
        let (scale, codes) = quantize_int8(&[0.5, -1.0, 0.25]);
        assert_eq!(scale, 1.0 / 127.0);
        assert_eq!(codes, vec![64, -127, 32]);
        let d = dequantize_int8(&codes, scale);
        assert!(
            (d[0] - 64.0 / 127.0).abs() < 1e-15
                && d[1] == -1.0
                && (d[2] - 32.0 / 127.0).abs() < 1e-15
        );
        assert!((d[0] - 0.50394).abs() < 1e-5 && (d[2] - 0.25197).abs() < 1e-5);
    }

    #[test]
    fn zero_tensor_is_exact() {
        let (scale, codes) = quantize_int8(&[0.0, -0.0, 0.0]);
        assert_eq!(scale, 0.0);
        assert_eq!(codes, vec![0, 0, 0]);
    }

    #[test]
    fn scheme_file_round_trips() {
        let s = QuantScheme::default();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"conv_weight\":\"int8-symmetric-per-tensor\""));
        assert_eq!(serde_json::from_str::<QuantScheme>(&text).unwrap(), s);
        let partial: QuantScheme =
            serde_json::from_str(r#"{"policy":{"bias":"float16"}}"#).unwrap();
        assert_eq!(partial.precision(ParamKind::ConvWeight), Precision::Float32);
    }

    proptest! {
        #[test]
        fn int8_error_is_at_most_half_a_step(v in prop::collection::vec(-1e3f32..1e3, 1..200)) {
            let (scale, codes) = quantize_int8(&v);
            let max_abs = v.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()));
            prop_assert!(scale >= 0.0);
            prop_assert_eq!(scale == 0.0, max_abs == 0.0);
            for (x, d) in v.iter().zip(dequantize_int8(&codes, scale)) {
                // the only slack is f64 rounding of x·127/max and code·scale
                prop_assert!((*x as f64 - d).abs() <= scale / 2.0 * (1.0 + 1e-12));
            }
        }
    }
}
