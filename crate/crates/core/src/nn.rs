//! Minimal layer toolkit over `candle-core`: a named parameter store with
//! seeded initialisation, the handful of layers the networks need, and Adam.

use std::collections::{BTreeMap, BTreeSet};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var, WithDType, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::im2col;

/// Role of a parameter tensor; drives the quantisation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    Norm,
    Film,
}

#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    Ones,
    Values(Vec<f64>),
    Uniform(f64),
    Normal(f64),
}

/// Parameter values held on the host, independent of any device/dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct HostTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub kind: ParamKind,
}

impl HostTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
struct Entry {
    var: Var,
    kind: ParamKind,
}

/// Named trainable parameters of one network.
///
/// Networks are built by asking a [`Path`] for each tensor; a fresh store
/// initialises it from the seeded generator, a store restored from an
/// archive hands back the stored value and refuses unknown names.
#[derive(Debug, Clone)]
pub struct VarStore {
    entries: BTreeMap<String, Entry>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    restored: bool,
    frozen: bool,
    /// Names a network has asked for; restored stores use it to spot strays.
    used: BTreeSet<String>,
}

impl VarStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            restored: false,
            frozen: false,
            used: BTreeSet::new(),
        }
    }

    pub fn from_host(tensors: &BTreeMap<String, HostTensor>, dtype: DType) -> Result<Self> {
        let device = Device::Cpu;
        let mut entries = BTreeMap::new();
        for (name, h) in tensors {
            let t = Tensor::from_slice(&h.data, h.shape.as_slice(), &device)?.to_dtype(dtype)?;
            entries.insert(
                name.clone(),
                Entry {
                    var: Var::from_tensor(&t)?,
                    kind: h.kind,
                },
            );
        }
        Ok(Self {
            entries,
            dtype,
            device,
            rng: ChaCha8Rng::seed_from_u64(0),
            restored: true,
            frozen: false,
            used: BTreeSet::new(),
        })
    }

    pub fn to_host(&self) -> Result<BTreeMap<String, HostTensor>> {
        self.entries
            .iter()
            .map(|(name, e)| {
                let t = e.var.as_tensor();
                let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                Ok((
                    name.clone(),
                    HostTensor {
                        shape: t.dims().to_vec(),
                        data,
                        kind: e.kind,
                    },
                ))
            })
            .collect()
    }

    /// Copy of this store whose tensors are cut off from autograd.
    pub fn frozen(&self) -> Self {
        Self {
            frozen: true,
            restored: true,
            ..self.clone()
        }
    }

    /// Same parameters converted to another dtype (fresh variables).
    pub fn with_dtype(&self, dtype: DType) -> Result<Self> {
        let host = self.to_host()?;
        let mut s = Self::from_host(&host, dtype)?;
        s.frozen = self.frozen;
        Ok(s)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> Path<'_> {
        Path {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.values().map(|e| e.var.clone()).collect()
    }

    pub fn named_vars(&self) -> impl Iterator<Item = (&str, &Var, ParamKind)> {
        self.entries
            .iter()
            .map(|(k, e)| (k.as_str(), &e.var, e.kind))
    }

    pub fn get_var(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|e| &e.var)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored names no network layer has requested.
    pub fn unused_names(&self) -> Vec<&str> {
        self.entries
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.entries
            .values()
            .map(|e| e.var.as_tensor().elem_count())
            .sum()
    }

    /// FNV-1a over every parameter's bytes, in name order.
    pub fn fingerprint(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf29ce484222325;
        for (name, e) in &self.entries {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
            let vals = e
                .var
                .as_tensor()
                .to_dtype(DType::F64)?
                .flatten_all()?
                .to_vec1::<f64>()?;
            for v in vals {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100000001b3);
                }
            }
        }
        Ok(h)
    }

    fn fetch(
        &mut self,
        name: String,
        shape: &[usize],
        init: Init,
        kind: ParamKind,
    ) -> Result<Tensor> {
        self.used.insert(name.clone());
        if let Some(e) = self.entries.get(&name) {
            if e.var.as_tensor().dims() != shape {
                return shape_err(format!(
                    "parameter {name} has shape {:?}, network expects {shape:?}",
                    e.var.as_tensor().dims()
                ));
            }
            let t = e.var.as_tensor().clone();
            return Ok(if self.frozen { t.detach() } else { t });
        }
        if self.restored {
            return Err(Error::Format(format!(
                "parameter {name} missing from stored weights"
            )));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Values(v) => {
                if v.len() != n {
                    return shape_err(format!(
                        "initial values for {name}: {} given, {n} needed",
                        v.len()
                    ));
                }
                v
            }
            Init::Uniform(bound) => (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect(),
            Init::Normal(std) => {
                let dist =
                    Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.entries.insert(name, Entry { var, kind });
        Ok(out)
    }
}

pub struct Path<'a> {
    store: &'a mut VarStore,
    prefix: String,
}

impl Path<'_> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> Path<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Path {
            store: &mut *self.store,
            prefix,
        }
    }

    pub fn get(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        kind: ParamKind,
    ) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.fetch(full, shape, init, kind)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }
}

#[derive(Debug, Clone, Copy)]
pub enum WeightInit {
    /// PyTorch default: uniform in `±1/sqrt(fan_in)` for weight and bias.
    FanIn,
    /// `N(0, std)` weights, zero bias.
    Normal(f64),
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut Path,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: WeightInit,
    ) -> Result<Self> {
        let fan_in = (in_c * kernel * kernel) as f64;
        let (w_init, b_init) = match init {
            WeightInit::FanIn => (
                Init::Uniform(fan_in.sqrt().recip()),
                Init::Uniform(fan_in.sqrt().recip()),
            ),
            WeightInit::Normal(std) => (Init::Normal(std), Init::Zeros),
        };
        let weight = p.get(
            "weight",
            &[out_c, in_c, kernel, kernel],
            w_init,
            ParamKind::ConvWeight,
        )?;
        let bias = if bias {
            Some(p.get("bias", &[out_c], b_init, ParamKind::Bias)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, k, _) = self.weight.dims4()?;
        let y = if k == 1 && self.stride == 1 && self.padding == 0 {
            x.conv2d(&self.weight, 0, 1, 1, 1)?
        } else {
            im2col::conv2d(x, &self.weight, self.stride, self.padding)?
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(p: &mut Path, in_f: usize, out_f: usize, kind: ParamKind) -> Result<Self> {
        let bound = (in_f as f64).sqrt().recip();
        let weight = p.get("weight", &[out_f, in_f], Init::Uniform(bound), kind)?;
        let bias_kind = if kind == ParamKind::Film {
            ParamKind::Film
        } else {
            ParamKind::Bias
        };
        let bias = p.get("bias", &[out_f], Init::Uniform(bound), bias_kind)?;
        Ok(Self { weight, bias })
    }

    pub fn with_init(
        p: &mut Path,
        in_f: usize,
        out_f: usize,
        weight: Init,
        bias: Init,
        kind: ParamKind,
    ) -> Result<Self> {
        let weight = p.get("weight", &[out_f, in_f], weight, kind)?;
        let bias_kind = if kind == ParamKind::Film {
            ParamKind::Film
        } else {
            ParamKind::Bias
        };
        let bias = p.get("bias", &[out_f], bias, bias_kind)?;
        Ok(Self { weight, bias })
    }

    pub fn dtype(&self) -> DType {
        self.weight.dtype()
    }

    /// `x: N × in` → `N × out`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    groups: usize,
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl GroupNorm {
    pub fn new(p: &mut Path, groups: usize, channels: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return shape_err(format!(
                "{channels} channels cannot be split into {groups} groups"
            ));
        }
        let weight = p.get("weight", &[channels], Init::Ones, ParamKind::Norm)?;
        let bias = p.get("bias", &[channels], Init::Zeros, ParamKind::Norm)?;
        Ok(Self {
            groups,
            weight,
            bias,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = x.reshape((n, self.groups, (c / self.groups) * h * w))?;
        let mean = g.mean_keepdim(D::Minus1)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .reshape((n, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Batch normalisation that always normalises with the statistics of the
/// batch it is given.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(p: &mut Path, channels: usize) -> Result<Self> {
        let weight = p.get("weight", &[channels], Init::Ones, ParamKind::Norm)?;
        let bias = p.get("bias", &[channels], Init::Zeros, ParamKind::Norm)?;
        Ok(Self {
            weight,
            bias,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        let channel_mean = |t: &Tensor| -> Result<Tensor> {
            Ok(t.mean_keepdim(3)?.mean_keepdim(2)?.mean_keepdim(0)?)
        };
        let mean = channel_mean(x)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = channel_mean(&centered.sqr()?)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Row-wise L2 normalisation of an `N × D` matrix; fails on a zero row.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(1)?.sqrt()?;
    let min = norm
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if !(min > 1e-12) {
        return Err(Error::Numeric(format!(
            "degenerate embedding: vector norm {min:e} before normalisation"
        )));
    }
    Ok(x.broadcast_div(&norm)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Adam with coupled (L2) weight decay. Moments live on the host in f64
/// and each step is one fused pass per parameter.
pub struct Adam {
    params: Vec<(Var, Vec<f64>, Vec<f64>)>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Result<Self> {
        let params = vars
            .into_iter()
            .map(|v| {
                let n = v.as_tensor().elem_count();
                (v, vec![0.0; n], vec![0.0; n])
            })
            .collect();
        Ok(Self {
            params,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
        })
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let h = AdamStep {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            bc1: 1.0 - self.beta1.powi(self.step),
            bc2: 1.0 - self.beta2.powi(self.step),
        };
        for (var, m, v) in &mut self.params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            match var.dtype() {
                DType::F32 => h.apply::<f32>(var, g, m, v)?,
                DType::F64 => h.apply::<f64>(var, g, m, v)?,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "Adam does not support {other:?} parameters"
                    )))
                }
            }
        }
        Ok(())
    }
}

struct AdamStep {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    bc1: f64,
    bc2: f64,
}

impl AdamStep {
    fn apply<T: WithDType>(
        &self,
        var: &Var,
        g: &Tensor,
        m: &mut [f64],
        v: &mut [f64],
    ) -> Result<()> {
        let theta = var.as_tensor().flatten_all()?.to_vec1::<T>()?;
        let g = g.flatten_all()?.to_vec1::<T>()?;
        let next: Vec<T> = theta
            .iter()
            .zip(&g)
            .zip(m.iter_mut().zip(v.iter_mut()))
            .map(|((&th, &gr), (mi, vi))| {
                let th = th.to_f64();
                let gr = gr.to_f64() + self.weight_decay * th;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gr;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gr * gr;
                let update = (*mi / self.bc1) / ((*vi / self.bc2).sqrt() + self.eps);
                T::from_f64(th - self.lr * update)
            })
            .collect();
        var.set(&Tensor::from_vec(next, var.shape(), var.device())?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    /// Central differences on a scalar function of one tensor.
    fn fd_check(f: impl Fn(&Tensor) -> Result<Tensor>, x: &Tensor) {
        let var = Var::from_tensor(x).unwrap();
        let y = f(var.as_tensor()).unwrap();
        let g = y.backward().unwrap();
        let analytic = g
            .get(var.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let base = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let mut m = base.clone();
            m[i] -= h;
            let fp =
                scalar(&f(&Tensor::from_vec(p, x.dims(), &Device::Cpu).unwrap()).unwrap()).unwrap();
            let fm =
                scalar(&f(&Tensor::from_vec(m, x.dims(), &Device::Cpu).unwrap()).unwrap()).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "entry {i}: fd {fd} vs {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn group_norm_gradient_matches_finite_differences() {
        let mut store = VarStore::new(DType::F64, 1);
        let gn = GroupNorm::new(&mut store.root().pp("gn"), 2, 4).unwrap();
        let w = rand_tensor(&[1, 4, 3, 3], 9);
        fd_check(
            |x| Ok(gn.forward(x)?.mul(&w)?.sum_all()?),
            &rand_tensor(&[1, 4, 3, 3], 2),
        );
    }

    #[test]
    fn batch_norm_gradient_matches_finite_differences() {
        let mut store = VarStore::new(DType::F64, 1);
        let bn = BatchNorm2d::new(&mut store.root().pp("bn"), 3).unwrap();
        let w = rand_tensor(&[2, 3, 2, 2], 4);
        fd_check(
            |x| Ok(bn.forward(x)?.mul(&w)?.sum_all()?),
            &rand_tensor(&[2, 3, 2, 2], 5),
        );
    }

    #[test]
    fn strided_conv_gradients_match_finite_differences() {
        for (k, stride, pad, size) in [(4, 2, 1, 7), (3, 2, 1, 6), (4, 1, 1, 5)] {
            let w = rand_tensor(&[3, 2, k, k], 11);
            let x = rand_tensor(&[2, 2, size, size], 12);
            let out = x.conv2d(&w, pad, stride, 1, 1).unwrap();
            let r = rand_tensor(out.dims(), 13);
            fd_check(
                |x| Ok(x.conv2d(&w, pad, stride, 1, 1)?.mul(&r)?.sum_all()?),
                &x,
            );
            fd_check(
                |w| Ok(x.conv2d(w, pad, stride, 1, 1)?.mul(&r)?.sum_all()?),
                &w,
            );
        }
    }

    #[test]
    fn softplus_is_stable_and_differentiable() {
        let x = Tensor::new(&[-800.0f64, -3.0, 0.0, 2.5, 800.0], &Device::Cpu).unwrap();
        let y = softplus(&x).unwrap().to_vec1::<f64>().unwrap();
        assert!(
            y[0].abs() < 1e-300
                && (y[2] - std::f64::consts::LN_2).abs() < 1e-15
                && (y[4] - 800.0).abs() < 1e-12
        );
        fd_check(|x| Ok(softplus(x)?.sum_all()?), &rand_tensor(&[6], 3));
        fd_check(
            |x| Ok(leaky_relu(x, 0.2)?.sqr()?.sum_all()?),
            &rand_tensor(&[6], 8),
        );
    }

    #[test]
    fn normalisation_rejects_zero_rows() {
        let x = Tensor::zeros((2, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(l2_normalize_rows(&x), Err(Error::Numeric(_))));
    }

    #[test]
    fn store_reuses_restored_values_and_rejects_unknown_names() {
        let mut store = VarStore::new(DType::F32, 3);
        let a = store
            .root()
            .pp("lin")
            .get(
                "weight",
                &[2, 3],
                Init::Uniform(1.0),
                ParamKind::LinearWeight,
            )
            .unwrap();
        let host = store.to_host().unwrap();
        let mut restored = VarStore::from_host(&host, DType::F32).unwrap();
        let b = restored
            .root()
            .pp("lin")
            .get("weight", &[2, 3], Init::Zeros, ParamKind::LinearWeight)
            .unwrap();
        assert_eq!(a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());
        assert!(restored
            .root()
            .get("other", &[1], Init::Zeros, ParamKind::Bias)
            .is_err());
        assert!(restored
            .root()
            .pp("lin")
            .get("weight", &[3, 2], Init::Zeros, ParamKind::LinearWeight)
            .is_err());
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = VarStore::new(DType::F64, 3);
        let x = store
            .root()
            .get(
                "x",
                &[3],
                Init::Values(vec![3.0, -2.0, 1.0]),
                ParamKind::Bias,
            )
            .unwrap();
        let mut opt = Adam::new(store.vars(), 0.1, 0.9, 0.999, 0.0).unwrap();
        for _ in 0..300 {
            let loss = x.sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        let v = store.vars()[0].as_tensor().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|a| a.abs() < 0.05), "{v:?}");
    }
}
