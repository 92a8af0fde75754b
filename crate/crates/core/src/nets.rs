//! The conditioned U-Net generator and the PatchGAN discriminator.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::conditioning::{film, ContextIndex, ContextNet, FilmHeads, CONTEXT_DIM, SPE_DIM};
use crate::error::{invalid, shape_err, Result};
use crate::img::Image;
use crate::nn::{leaky_relu, BatchNorm2d, Conv2d, GroupNorm, Path, VarStore, WeightInit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub img_size: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub base_dim: usize,
    pub dim_mults: Vec<usize>,
    pub resnet_groups: usize,
    pub n_mid: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            img_size: 224,
            in_ch: 3,
            out_ch: 3,
            base_dim: 32,
            dim_mults: vec![1, 2, 4, 8],
            resnet_groups: 8,
            n_mid: 2,
        }
    }
}

impl GeneratorConfig {
    /// Half-width network at 64×64, sized for single-core CPU training.
    pub fn desk() -> Self {
        Self {
            img_size: 64,
            base_dim: 16,
            ..Self::default()
        }
    }

    pub fn n_down(&self) -> usize {
        self.dim_mults.len()
    }

    /// `[base, base·m₀, base·m₁, …]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.base_dim)
            .chain(self.dim_mults.iter().map(|m| m * self.base_dim))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_mults.is_empty() || self.base_dim == 0 || self.in_ch == 0 || self.out_ch == 0 {
            return invalid("generator needs at least one stage and positive channel counts");
        }
        let factor = 1usize << self.n_down();
        if self.img_size == 0 || !self.img_size.is_multiple_of(factor) {
            return invalid(format!(
                "img_size {} is not divisible by 2^{}",
                self.img_size,
                self.n_down()
            ));
        }
        if self.dims().iter().any(|d| d % self.resnet_groups != 0) {
            return invalid(format!(
                "channel ladder {:?} is not divisible by {} groups",
                self.dims(),
                self.resnet_groups
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub stage: String,
    pub channels: usize,
    pub spatial: usize,
}

impl FeatureShape {
    fn new(stage: impl Into<String>, channels: usize, spatial: usize) -> Self {
        Self {
            stage: stage.into(),
            channels,
            spatial,
        }
    }
}

/// Feature-map shapes along the U-Net, from configuration alone.
pub fn generator_feature_shapes(cfg: &GeneratorConfig) -> Vec<FeatureShape> {
    let dims = cfg.dims();
    let s = cfg.img_size;
    let n = cfg.n_down();
    let mut out = vec![FeatureShape::new("stem", cfg.base_dim, s)];
    for k in 0..n {
        out.push(FeatureShape::new(
            format!("down{k}"),
            dims[k + 1],
            s >> (k + 1),
        ));
    }
    out.push(FeatureShape::new("bottleneck", dims[n], s >> n));
    for k in (0..n).rev() {
        out.push(FeatureShape::new(format!("up{k}"), dims[k], s >> k));
    }
    out.push(FeatureShape::new("output", cfg.out_ch, s));
    out
}

/// Parameter count implied by the configuration.
pub fn generator_param_count(cfg: &GeneratorConfig) -> usize {
    let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
    let res = |a: usize, b: usize| {
        conv(a, b, 3) + conv(b, b, 3) + 4 * b + if a != b { conv(a, b, 1) } else { 0 }
    };
    let head = |c: usize| CONTEXT_DIM * 2 * c + 2 * c;
    let dims = cfg.dims();
    let mut total = SPE_DIM * CONTEXT_DIM + CONTEXT_DIM + CONTEXT_DIM * CONTEXT_DIM + CONTEXT_DIM;
    total += conv(cfg.in_ch, cfg.base_dim, 3);
    for k in 0..cfg.n_down() {
        let (a, b) = (dims[k], dims[k + 1]);
        total += 2 * (res(a, a) + head(a)) + conv(a, b, 3);
        total += conv(b, a, 3) + 2 * (res(2 * a, a) + head(a));
    }
    let bottom = dims[cfg.n_down()];
    total += cfg.n_mid * (res(bottom, bottom) + head(bottom));
    total += res(2 * cfg.base_dim, cfg.base_dim) + conv(cfg.base_dim, cfg.out_ch, 1);
    total
}

/// Two conv → group-norm → SiLU layers plus a (projected) identity path.
#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
    shortcut: Option<Conv2d>,
}

impl ResBlock {
    fn new(p: &mut Path, in_c: usize, out_c: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(
                &mut p.pp("conv1"),
                in_c,
                out_c,
                3,
                1,
                1,
                true,
                WeightInit::FanIn,
            )?,
            norm1: GroupNorm::new(&mut p.pp("norm1"), groups, out_c)?,
            conv2: Conv2d::new(
                &mut p.pp("conv2"),
                out_c,
                out_c,
                3,
                1,
                1,
                true,
                WeightInit::FanIn,
            )?,
            norm2: GroupNorm::new(&mut p.pp("norm2"), groups, out_c)?,
            shortcut: if in_c != out_c {
                Some(Conv2d::new(
                    &mut p.pp("shortcut"),
                    in_c,
                    out_c,
                    1,
                    1,
                    0,
                    true,
                    WeightInit::FanIn,
                )?)
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.silu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?.silu()?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        Ok((h + skip)?)
    }
}

#[derive(Debug, Clone)]
struct DownStage {
    res: [ResBlock; 2],
    down: Conv2d,
}

#[derive(Debug, Clone)]
struct UpStage {
    up: Conv2d,
    res: [ResBlock; 2],
}

/// U-Net whose every encoder, bottleneck and decoder block output is
/// modulated by context-driven scale/shift.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    context: ContextNet,
    heads: FilmHeads,
    stem: Conv2d,
    downs: Vec<DownStage>,
    mids: Vec<ResBlock>,
    ups: Vec<UpStage>,
    final_res: ResBlock,
    out: Conv2d,
}

fn down_id(k: usize, j: usize) -> String {
    format!("down{k}.res{j}")
}

fn up_id(k: usize, j: usize) -> String {
    format!("up{k}.res{j}")
}

fn mid_id(j: usize) -> String {
    format!("mid{j}")
}

impl Generator {
    pub fn new(p: &mut Path, cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.dims();
        let g = cfg.resnet_groups;
        let context = ContextNet::new(&mut p.pp("context"))?;
        let mut heads = FilmHeads::default();
        let stem = Conv2d::new(
            &mut p.pp("stem"),
            cfg.in_ch,
            cfg.base_dim,
            3,
            1,
            1,
            true,
            WeightInit::FanIn,
        )?;

        let mut downs = Vec::new();
        for k in 0..cfg.n_down() {
            let (a, b) = (dims[k], dims[k + 1]);
            let mut sp = p.pp(format!("down{k}"));
            let res = [
                ResBlock::new(&mut sp.pp("res0"), a, a, g)?,
                ResBlock::new(&mut sp.pp("res1"), a, a, g)?,
            ];
            let down = Conv2d::new(
                &mut sp.pp("downsample"),
                a,
                b,
                3,
                2,
                1,
                true,
                WeightInit::FanIn,
            )?;
            for j in 0..2 {
                heads.register(&mut p.pp("film"), &down_id(k, j), a)?;
            }
            downs.push(DownStage { res, down });
        }

        let bottom = dims[cfg.n_down()];
        let mut mids = Vec::new();
        for j in 0..cfg.n_mid {
            mids.push(ResBlock::new(&mut p.pp(mid_id(j)), bottom, bottom, g)?);
            heads.register(&mut p.pp("film"), &mid_id(j), bottom)?;
        }

        let mut ups = Vec::new();
        for k in (0..cfg.n_down()).rev() {
            let (a, b) = (dims[k], dims[k + 1]);
            let mut sp = p.pp(format!("up{k}"));
            let up = Conv2d::new(
                &mut sp.pp("upsample"),
                b,
                a,
                3,
                1,
                1,
                true,
                WeightInit::FanIn,
            )?;
            let res = [
                ResBlock::new(&mut sp.pp("res0"), 2 * a, a, g)?,
                ResBlock::new(&mut sp.pp("res1"), 2 * a, a, g)?,
            ];
            for j in 0..2 {
                heads.register(&mut p.pp("film"), &up_id(k, j), a)?;
            }
            ups.push(UpStage { up, res });
        }

        let final_res = ResBlock::new(&mut p.pp("final_res"), 2 * cfg.base_dim, cfg.base_dim, g)?;
        let out = Conv2d::new(
            &mut p.pp("out"),
            cfg.base_dim,
            cfg.out_ch,
            1,
            1,
            0,
            true,
            WeightInit::FanIn,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            context,
            heads,
            stem,
            downs,
            mids,
            ups,
            final_res,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// `x: N × 3 × S × S` in `[-1, 1]`, one context index per batch element.
    pub fn forward(&self, x: &Tensor, contexts: &[usize]) -> Result<Tensor> {
        self.forward_traced(x, contexts, None)
    }

    pub fn forward_traced(
        &self,
        x: &Tensor,
        contexts: &[usize],
        mut trace: Option<&mut Vec<FeatureShape>>,
    ) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let s = self.cfg.img_size;
        if c != self.cfg.in_ch || h != s || w != s {
            return shape_err(format!(
                "generator expects N x {} x {s} x {s}, got {:?}",
                self.cfg.in_ch,
                x.dims()
            ));
        }
        if contexts.len() != n {
            return shape_err(format!(
                "{} context indices for a batch of {n}",
                contexts.len()
            ));
        }
        let mut record = |stage: &str, t: &Tensor| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(FeatureShape::new(
                    stage,
                    t.dim(1).unwrap_or(0),
                    t.dim(2).unwrap_or(0),
                ));
            }
        };
        let e = self.context.forward(contexts)?;
        let modulate =
            |t: Tensor, id: &str| -> Result<Tensor> { film(&t, &self.heads.film_params(&e, id)?) };

        let stem = self.stem.forward(x)?;
        record("stem", &stem);
        let mut skips = Vec::with_capacity(2 * self.downs.len());
        let mut hcur = stem.clone();
        for (k, stage) in self.downs.iter().enumerate() {
            for j in 0..2 {
                hcur = modulate(stage.res[j].forward(&hcur)?, &down_id(k, j))?;
                skips.push(hcur.clone());
            }
            hcur = stage.down.forward(&hcur)?;
            record(&format!("down{k}"), &hcur);
        }
        for (j, block) in self.mids.iter().enumerate() {
            hcur = modulate(block.forward(&hcur)?, &mid_id(j))?;
        }
        record("bottleneck", &hcur);
        let n_down = self.downs.len();
        for (i, stage) in self.ups.iter().enumerate() {
            let k = n_down - 1 - i;
            let (_, _, hh, ww) = hcur.dims4()?;
            hcur = stage
                .up
                .forward(&hcur.upsample_nearest2d(2 * hh, 2 * ww)?)?;
            for j in 0..2 {
                let skip = skips.pop().expect("one skip per encoder block");
                hcur = modulate(
                    stage.res[j].forward(&Tensor::cat(&[&hcur, &skip], 1)?)?,
                    &up_id(k, j),
                )?;
            }
            record(&format!("up{k}"), &hcur);
        }
        let hcur = self.final_res.forward(&Tensor::cat(&[&hcur, &stem], 1)?)?;
        let y = self.out.forward(&hcur)?.tanh()?;
        record("output", &y);
        Ok(y)
    }
}

/// Generator weights plus the context vocabulary they were trained with.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub index: ContextIndex,
    pub store: VarStore,
    pub net: Generator,
}

impl GeneratorModel {
    pub fn new(
        config: GeneratorConfig,
        index: ContextIndex,
        dtype: DType,
        seed: u64,
    ) -> Result<Self> {
        Self::from_store(config, index, VarStore::new(dtype, seed))
    }

    pub fn from_store(
        config: GeneratorConfig,
        index: ContextIndex,
        mut store: VarStore,
    ) -> Result<Self> {
        let net = Generator::new(&mut store.root(), &config)?;
        Ok(Self {
            config,
            index,
            store,
            net,
        })
    }

    pub fn context_of(&self, recipe: &str, state: &str) -> Result<usize> {
        self.index.index_of(recipe, state)
    }

    /// Cooked-state image for one raw image and context.
    pub fn generate(&self, raw: &Image, recipe: &str, state: &str) -> Result<Image> {
        raw.ensure_size(self.config.img_size)?;
        let p = self.context_of(recipe, state)?;
        let x = raw.to_tensor(self.store.dtype(), self.store.device())?;
        Image::from_tensor(&self.net.forward(&x, &[p])?, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub in_ch: usize,
    pub ndf: usize,
    pub kernel: usize,
    pub stride2_layers: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_ch: 6,
            ndf: 64,
            kernel: 4,
            stride2_layers: 3,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    /// Half-width discriminator paired with [`GeneratorConfig::desk`].
    pub fn desk() -> Self {
        Self {
            ndf: 32,
            ..Self::default()
        }
    }

    /// `(kernel, stride)` of every conv layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut v = vec![(self.kernel, 2); self.stride2_layers];
        v.push((self.kernel, 1));
        v.push((self.kernel, 1));
        v
    }

    fn channels(&self) -> Vec<usize> {
        let cap = 8 * self.ndf;
        let mut ch = vec![self.in_ch];
        for i in 0..=self.stride2_layers {
            ch.push((self.ndf << i).min(cap));
        }
        ch.push(1);
        ch
    }
}

/// Side length of the logit map for a square input of side `n` (padding 1).
pub fn patch_map_size(cfg: &DiscriminatorConfig, n: usize) -> usize {
    cfg.layers()
        .iter()
        .fold(n, |size, &(k, s)| (size + 2 - k) / s + 1)
}

/// Input pixels seen by one output unit.
pub fn receptive_field(cfg: &DiscriminatorConfig) -> usize {
    cfg.layers()
        .iter()
        .rev()
        .fold(1, |r, &(k, s)| (r - 1) * s + k)
}

/// Fully convolutional patch classifier over `(condition, judged)` pairs.
#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    first: Conv2d,
    hidden: Vec<(Conv2d, BatchNorm2d)>,
    out: Conv2d,
}

impl Discriminator {
    pub fn new(p: &mut Path, cfg: &DiscriminatorConfig) -> Result<Self> {
        if cfg.stride2_layers == 0 || cfg.ndf == 0 || cfg.kernel < 2 {
            return invalid(
                "discriminator needs at least one stride-2 layer, ndf > 0 and kernel >= 2",
            );
        }
        let ch = cfg.channels();
        let layers = cfg.layers();
        let init = WeightInit::Normal(0.02);
        let first = Conv2d::new(
            &mut p.pp("conv0"),
            ch[0],
            ch[1],
            cfg.kernel,
            layers[0].1,
            1,
            true,
            init,
        )?;
        let mut hidden = Vec::new();
        for i in 1..layers.len() - 1 {
            let conv = Conv2d::new(
                &mut p.pp(format!("conv{i}")),
                ch[i],
                ch[i + 1],
                cfg.kernel,
                layers[i].1,
                1,
                false,
                init,
            )?;
            let bn = BatchNorm2d::new(&mut p.pp(format!("bn{i}")), ch[i + 1])?;
            hidden.push((conv, bn));
        }
        let last = layers.len() - 1;
        let out = Conv2d::new(
            &mut p.pp(format!("conv{last}")),
            ch[last],
            1,
            cfg.kernel,
            1,
            1,
            true,
            init,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            first,
            hidden,
            out,
        })
    }

    /// Logit map `N × 1 × h' × w'` for the channel-concatenated pair.
    pub fn forward(&self, cond: &Tensor, judged: &Tensor) -> Result<Tensor> {
        if cond.dims() != judged.dims() {
            return shape_err(format!(
                "condition {:?} and judged {:?} images differ in shape",
                cond.dims(),
                judged.dims()
            ));
        }
        let x = Tensor::cat(&[cond, judged], 1)?;
        if x.dim(1)? != self.cfg.in_ch {
            return shape_err(format!(
                "discriminator expects {} input channels, got {}",
                self.cfg.in_ch,
                x.dim(1)?
            ));
        }
        let slope = self.cfg.leaky_slope;
        let mut h = leaky_relu(&self.first.forward(&x)?, slope)?;
        for (conv, bn) in &self.hidden {
            h = leaky_relu(&bn.forward(&conv.forward(&h)?)?, slope)?;
        }
        self.out.forward(&h)
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    pub config: DiscriminatorConfig,
    pub store: VarStore,
    pub net: Discriminator,
}

impl DiscriminatorModel {
    pub fn new(config: DiscriminatorConfig, dtype: DType, seed: u64) -> Result<Self> {
        Self::from_store(config, VarStore::new(dtype, seed))
    }

    pub fn from_store(config: DiscriminatorConfig, mut store: VarStore) -> Result<Self> {
        let net = Discriminator::new(&mut store.root(), &config)?;
        Ok(Self { config, store, net })
    }
}

/// Patch logits for a (condition, judged) image pair.
pub fn discriminate(d: &DiscriminatorModel, cond: &Image, judged: &Image) -> Result<Tensor> {
    if !cond.same_shape(judged) {
        return shape_err(format!(
            "condition {}x{} and judged {}x{} images differ in shape",
            cond.height(),
            cond.width(),
            judged.height(),
            judged.width()
        ));
    }
    let dt = d.store.dtype();
    let dev = d.store.device();
    d.net
        .forward(&cond.to_tensor(dt, dev)?, &judged.to_tensor(dt, dev)?)
}
