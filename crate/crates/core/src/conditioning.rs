//! Recipe/state conditioning: context indexing, sinusoidal embedding, the
//! context MLP, per-layer scale/shift heads and feature-wise modulation.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{Init, Linear, ParamKind, Path};

pub const SPE_DIM: usize = 32;
pub const SPE_THETA: f64 = 10_000.0;
pub const CONTEXT_DIM: usize = 4 * SPE_DIM;

/// Bijection between `(recipe, state)` pairs and contiguous indices,
/// assigned in registration order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextIndex {
    pairs: Vec<(String, String)>,
    lookup: HashMap<(String, String), usize>,
}

impl ContextIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the pair, registering it if new.
    pub fn register(&mut self, recipe: &str, state: &str) -> Result<usize> {
        if recipe.contains('|') || state.contains('|') {
            return invalid(format!(
                "context names may not contain '|': {recipe:?}, {state:?}"
            ));
        }
        let key = (recipe.to_string(), state.to_string());
        if let Some(&p) = self.lookup.get(&key) {
            return Ok(p);
        }
        let p = self.pairs.len();
        self.pairs.push(key.clone());
        self.lookup.insert(key, p);
        Ok(p)
    }

    pub fn index_of(&self, recipe: &str, state: &str) -> Result<usize> {
        self.lookup
            .get(&(recipe.to_string(), state.to_string()))
            .copied()
            .ok_or_else(|| {
                let known: Vec<String> =
                    self.pairs.iter().map(|(r, s)| format!("{r}|{s}")).collect();
                Error::Lookup(format!(
                    "unknown context {recipe}|{state}; known pairs: [{}]",
                    known.join(", ")
                ))
            })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// States registered for a recipe, in registration order.
    pub fn states_for(&self, recipe: &str) -> Vec<&str> {
        self.pairs
            .iter()
            .filter(|(r, _)| r == recipe)
            .map(|(_, s)| s.as_str())
            .collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, (r, s))| (format!("{r}|{s}"), i))
            .collect()
    }

    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self> {
        let mut slots: Vec<Option<(String, String)>> = vec![None; map.len()];
        for (key, &p) in map {
            let Some((r, s)) = key.split_once('|') else {
                return Err(Error::Format(format!(
                    "context key {key:?} is not of the form recipe|state"
                )));
            };
            let slot = slots.get_mut(p).ok_or_else(|| {
                Error::Format(format!("context indices are not contiguous (found {p})"))
            })?;
            if slot.is_some() {
                return Err(Error::Format(format!("context index {p} assigned twice")));
            }
            *slot = Some((r.to_string(), s.to_string()));
        }
        let mut idx = Self::new();
        for (r, s) in slots.into_iter().flatten() {
            idx.register(&r, &s)?;
        }
        Ok(idx)
    }
}

impl Serialize for ContextIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ContextIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, usize>::deserialize(d)?;
        Self::from_map(&map).map_err(serde::de::Error::custom)
    }
}

/// Sinusoidal embedding of an integer index: sines in the first half,
/// cosines in the second, frequencies `theta^(-2k/dim)`.
pub fn spe(p: usize, dim: usize, theta: f64) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return invalid(format!(
            "embedding dimension must be even and positive, got {dim}"
        ));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let arg = p as f64 / theta.powf(2.0 * k as f64 / dim as f64);
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ContextEmbedding {
    /// `N × CONTEXT_DIM`
    pub vector: Tensor,
}

impl ContextEmbedding {
    pub fn to_vec(&self) -> Result<Vec<f32>> {
        Ok(self
            .vector
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?)
    }
}

/// `linear(32→128) → SiLU → linear(128→128)` over the sinusoidal code.
#[derive(Debug, Clone)]
pub struct ContextNet {
    lin1: Linear,
    lin2: Linear,
}

impl ContextNet {
    pub fn new(p: &mut Path) -> Result<Self> {
        Ok(Self {
            lin1: Linear::new(
                &mut p.pp("lin1"),
                SPE_DIM,
                CONTEXT_DIM,
                ParamKind::LinearWeight,
            )?,
            lin2: Linear::new(
                &mut p.pp("lin2"),
                CONTEXT_DIM,
                CONTEXT_DIM,
                ParamKind::LinearWeight,
            )?,
        })
    }

    /// Zero weights and biases; used to exercise the degenerate case.
    pub fn zeroed(p: &mut Path) -> Result<Self> {
        let z = |n| Init::Values(vec![0.0; n]);
        Ok(Self {
            lin1: Linear::with_init(
                &mut p.pp("lin1"),
                SPE_DIM,
                CONTEXT_DIM,
                z(SPE_DIM * CONTEXT_DIM),
                z(CONTEXT_DIM),
                ParamKind::LinearWeight,
            )?,
            lin2: Linear::with_init(
                &mut p.pp("lin2"),
                CONTEXT_DIM,
                CONTEXT_DIM,
                z(CONTEXT_DIM * CONTEXT_DIM),
                z(CONTEXT_DIM),
                ParamKind::LinearWeight,
            )?,
        })
    }

    pub fn forward(&self, indices: &[usize]) -> Result<ContextEmbedding> {
        let dtype = self.lin1.dtype();
        let mut codes = Vec::with_capacity(indices.len() * SPE_DIM);
        for &p in indices {
            codes.extend(spe(p, SPE_DIM, SPE_THETA)?);
        }
        let x = Tensor::from_vec(codes, (indices.len(), SPE_DIM), &candle_core::Device::Cpu)?
            .to_dtype(dtype)?;
        let h = self.lin1.forward(&x)?.silu()?;
        Ok(ContextEmbedding {
            vector: self.lin2.forward(&h)?,
        })
    }
}

pub fn embed_context(
    idx: &ContextIndex,
    recipe: &str,
    state: &str,
    net: &ContextNet,
) -> Result<ContextEmbedding> {
    net.forward(&[idx.index_of(recipe, state)?])
}

#[derive(Debug, Clone)]
pub struct FilmParams {
    /// `N × C`
    pub gamma: Tensor,
    /// `N × C`
    pub beta: Tensor,
}

impl FilmParams {
    pub fn channels(&self) -> usize {
        self.gamma.dims().last().copied().unwrap_or(0)
    }
}

/// Affine head producing `[gamma, beta]` for one layer. Starts at the
/// identity modulation: zero weight, bias `[1…1, 0…0]`.
#[derive(Debug, Clone)]
pub struct FilmHead {
    linear: Linear,
    channels: usize,
}

impl FilmHead {
    pub fn new(p: &mut Path, channels: usize) -> Result<Self> {
        let bias: Vec<f64> = (0..2 * channels)
            .map(|i| if i < channels { 1.0 } else { 0.0 })
            .collect();
        let linear = Linear::with_init(
            p,
            CONTEXT_DIM,
            2 * channels,
            Init::Values(vec![0.0; 2 * channels * CONTEXT_DIM]),
            Init::Values(bias),
            ParamKind::Film,
        )?;
        Ok(Self { linear, channels })
    }

    pub fn forward(&self, e: &ContextEmbedding) -> Result<FilmParams> {
        let out = self.linear.forward(&e.vector)?;
        Ok(FilmParams {
            gamma: out.narrow(1, 0, self.channels)?,
            beta: out.narrow(1, self.channels, self.channels)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// Registry of per-layer heads, keyed by layer id.
#[derive(Debug, Clone, Default)]
pub struct FilmHeads {
    heads: BTreeMap<String, FilmHead>,
}

impl FilmHeads {
    pub fn register(&mut self, p: &mut Path, layer_id: &str, channels: usize) -> Result<()> {
        let head = FilmHead::new(&mut p.pp(layer_id), channels)?;
        self.heads.insert(layer_id.to_string(), head);
        Ok(())
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = &str> {
        self.heads.keys().map(String::as_str)
    }

    pub fn film_params(&self, e: &ContextEmbedding, layer_id: &str) -> Result<FilmParams> {
        self.heads
            .get(layer_id)
            .ok_or_else(|| Error::Lookup(format!("no FiLM head registered for layer {layer_id}")))?
            .forward(e)
    }
}

/// `gamma ⊙ z + beta`, broadcast over spatial positions. Accepts `C × H × W`
/// (with a single set of parameters) or `N × C × H × W`.
pub fn film(z: &Tensor, fp: &FilmParams) -> Result<Tensor> {
    let squeeze = z.rank() == 3;
    let z4 = if squeeze { z.unsqueeze(0)? } else { z.clone() };
    let (n, c, _, _) = z4.dims4()?;
    let gamma = if fp.gamma.rank() == 1 {
        fp.gamma.unsqueeze(0)?
    } else {
        fp.gamma.clone()
    };
    let beta = if fp.beta.rank() == 1 {
        fp.beta.unsqueeze(0)?
    } else {
        fp.beta.clone()
    };
    if gamma.dims() != beta.dims() {
        return shape_err(format!(
            "gamma {:?} and beta {:?} differ in shape",
            gamma.dims(),
            beta.dims()
        ));
    }
    let (gn, gc) = gamma.dims2()?;
    if gc != c || (gn != n && gn != 1) {
        return shape_err(format!(
            "FiLM parameters for {gn}x{gc} do not match features {n}x{c}"
        ));
    }
    let out = z4
        .broadcast_mul(&gamma.reshape((gn, c, 1, 1))?)?
        .broadcast_add(&beta.reshape((gn, c, 1, 1))?)?;
    Ok(if squeeze { out.squeeze(0)? } else { out })
}
