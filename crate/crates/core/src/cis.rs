//! Culinary image similarity: a Siamese embedding network trained so that
//! cosine similarity between frames tracks their temporal proximity.

use std::path::Path as FsPath;

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::img::Image;
use crate::nn::{
    l2_normalize_rows, scalar, Adam, Conv2d, GroupNorm, Linear, ParamKind, Path, VarStore,
    WeightInit,
};
use crate::sessions::{
    temporal_matrix, AugmentParams, CookingSession, MatrixKind, SimilarityMatrix,
};

pub const SMALL_CONV: &str = "small-conv";
pub const PROJ_OUT_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingNetConfig {
    pub backbone: String,
    pub embed_dim: usize,
    pub proj_dims: (usize, usize),
    pub img_size: usize,
    /// Output channels of the stride-2 conv blocks of the small backbone.
    pub conv_channels: Vec<usize>,
    pub groups: usize,
}

impl Default for EmbeddingNetConfig {
    fn default() -> Self {
        Self {
            backbone: SMALL_CONV.into(),
            embed_dim: 2048,
            proj_dims: (2048, PROJ_OUT_DIM),
            img_size: 224,
            conv_channels: vec![16, 32, 64, 128],
            groups: 4,
        }
    }
}

impl EmbeddingNetConfig {
    pub fn desk() -> Self {
        Self {
            img_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone != SMALL_CONV {
            return Err(Error::Config(format!(
                "unknown CIS backbone {:?}; available: {SMALL_CONV}",
                self.backbone
            )));
        }
        if self.proj_dims.1 != PROJ_OUT_DIM {
            return invalid(format!(
                "projection must end at {PROJ_OUT_DIM} dimensions, got {}",
                self.proj_dims.1
            ));
        }
        if self.embed_dim == 0 || self.proj_dims.0 == 0 || self.conv_channels.is_empty() {
            return invalid("embedding widths must be positive and the backbone nonempty");
        }
        if self.conv_channels.iter().any(|c| c % self.groups != 0) {
            return invalid(format!(
                "conv channels {:?} not divisible by {} groups",
                self.conv_channels, self.groups
            ));
        }
        let factor = 1usize << self.conv_channels.len();
        if self.img_size < factor {
            return invalid(format!(
                "img_size {} is too small for {} stride-2 blocks",
                self.img_size,
                self.conv_channels.len()
            ));
        }
        Ok(())
    }
}

/// Backbone (stride-2 conv blocks, global pooling, linear to `embed_dim`)
/// followed by the two-layer projection head.
#[derive(Debug, Clone)]
pub struct EmbeddingNet {
    blocks: Vec<(Conv2d, GroupNorm)>,
    to_embed: Linear,
    proj1: Linear,
    proj2: Linear,
}

impl EmbeddingNet {
    pub fn new(p: &mut Path, cfg: &EmbeddingNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::new();
        let mut in_c = 3;
        for (i, &c) in cfg.conv_channels.iter().enumerate() {
            let mut bp = p.pp(format!("backbone.block{i}"));
            let conv = Conv2d::new(
                &mut bp.pp("conv"),
                in_c,
                c,
                3,
                2,
                1,
                true,
                WeightInit::FanIn,
            )?;
            let norm = GroupNorm::new(&mut bp.pp("norm"), cfg.groups, c)?;
            blocks.push((conv, norm));
            in_c = c;
        }
        let to_embed = Linear::new(
            &mut p.pp("backbone.embed"),
            in_c,
            cfg.embed_dim,
            ParamKind::LinearWeight,
        )?;
        let proj1 = Linear::new(
            &mut p.pp("proj.0"),
            cfg.embed_dim,
            cfg.proj_dims.0,
            ParamKind::LinearWeight,
        )?;
        let proj2 = Linear::new(
            &mut p.pp("proj.1"),
            cfg.proj_dims.0,
            cfg.proj_dims.1,
            ParamKind::LinearWeight,
        )?;
        Ok(Self {
            blocks,
            to_embed,
            proj1,
            proj2,
        })
    }

    /// Unit-norm backbone features, `N × embed_dim`.
    pub fn backbone(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, norm) in &self.blocks {
            h = norm.forward(&conv.forward(&h)?)?.relu()?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        l2_normalize_rows(&self.to_embed.forward(&pooled)?)
    }

    /// Unit-norm embeddings, `N × 128`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.backbone(x)?;
        l2_normalize_rows(&self.proj2.forward(&self.proj1.forward(&b)?.relu()?)?)
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub config: EmbeddingNetConfig,
    pub store: VarStore,
    pub net: EmbeddingNet,
}

impl EmbeddingModel {
    pub fn new(config: EmbeddingNetConfig, dtype: DType, seed: u64) -> Result<Self> {
        Self::from_store(config, VarStore::new(dtype, seed))
    }

    pub fn from_store(config: EmbeddingNetConfig, mut store: VarStore) -> Result<Self> {
        let net = EmbeddingNet::new(&mut store.root(), &config)?;
        Ok(Self { config, store, net })
    }

    /// Same weights, detached from autograd, in `dtype`.
    pub fn frozen(&self, dtype: DType) -> Result<Self> {
        let store = if dtype == self.store.dtype() {
            self.store.frozen()
        } else {
            self.store.with_dtype(dtype)?.frozen()
        };
        Self::from_store(self.config.clone(), store)
    }

    fn to_input(&self, images: &[&Image]) -> Result<Tensor> {
        for im in images {
            im.ensure_size(self.config.img_size)?;
        }
        Image::batch_to_tensor(images, self.store.dtype(), self.store.device())
    }

    /// Embeddings of a batch as an `N × 128` tensor.
    pub fn embed_batch(&self, images: &[&Image]) -> Result<Tensor> {
        self.net.forward(&self.to_input(images)?)
    }

    /// Embeddings of any number of images, evaluated in chunks.
    pub fn embed_all(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let e = self
                .embed_batch(chunk)?
                .to_dtype(DType::F64)?
                .to_vec2::<f64>()?;
            out.extend(e);
        }
        Ok(out)
    }
}

/// 128-dimensional unit embedding of one image.
pub fn embed(model: &EmbeddingModel, image: &Image) -> Result<Vec<f64>> {
    Ok(model.embed_all(&[image])?.remove(0))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reported similarity of two unit embeddings, clamped to `[0, 1]`.
pub fn f_cul_from_embeddings(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).clamp(0.0, 1.0)
}

pub fn f_cul(model: &EmbeddingModel, a: &Image, b: &Image) -> Result<f64> {
    if a == b {
        let e = embed(model, a)?;
        return Ok(f_cul_from_embeddings(&e, &e));
    }
    let e = model.embed_all(&[a, b])?;
    Ok(f_cul_from_embeddings(&e[0], &e[1]))
}

/// Unclamped pairwise cosines of precomputed embeddings; exact unit diagonal.
pub fn matrix_from_embeddings(emb: &[Vec<f64>]) -> SimilarityMatrix {
    let n = emb.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = cosine(&emb[i], &emb[j]);
            values[i * n + j] = c;
            values[j * n + i] = c;
        }
    }
    SimilarityMatrix::from_flat(n, values, MatrixKind::Predicted)
}

pub fn predicted_matrix(model: &EmbeddingModel, frames: &[&Image]) -> Result<SimilarityMatrix> {
    if frames.len() < 2 {
        return invalid(format!(
            "predicted matrix needs at least 2 frames, got {}",
            frames.len()
        ));
    }
    Ok(matrix_from_embeddings(&model.embed_all(frames)?))
}

/// Mean squared entry difference over all `n²` entries.
pub fn cis_batch_loss(predicted: &SimilarityMatrix, truth: &SimilarityMatrix) -> Result<f64> {
    if predicted.n() != truth.n() {
        return shape_err(format!(
            "predicted matrix is {0}x{0}, truth is {1}x{1}",
            predicted.n(),
            truth.n()
        ));
    }
    let n2 = predicted.values().len() as f64;
    Ok(predicted
        .values()
        .iter()
        .zip(truth.values())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n2)
}

/// Differentiable form of [`cis_batch_loss`] on a batch of unit embeddings.
pub fn cis_batch_loss_tensor(embeddings: &Tensor, truth: &SimilarityMatrix) -> Result<Tensor> {
    let n = embeddings.dim(0)?;
    if n != truth.n() {
        return shape_err(format!(
            "{n} embeddings against a {0}x{0} truth matrix",
            truth.n()
        ));
    }
    let pred = embeddings.matmul(&embeddings.t()?)?;
    let t = Tensor::from_slice(truth.values(), (n, n), embeddings.device())?
        .to_dtype(embeddings.dtype())?;
    Ok((pred - t)?.sqr()?.mean_all()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CisTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for CisTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-4,
            lr_decay: 0.6,
            lr_step_epochs: 10,
            weight_decay: 1e-5,
            augment: true,
            seed: 0,
        }
    }
}

impl CisTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.lr_step_epochs == 0 {
            return invalid(
                "CIS training needs epochs > 0, batch_size >= 2 and lr_step_epochs > 0",
            );
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) || !(self.weight_decay >= 0.0) {
            return invalid(
                "CIS learning rate and decay must be positive, weight decay nonnegative",
            );
        }
        Ok(())
    }
}

/// Step decay: `lr · decay^⌊epoch / step⌋`.
pub fn cis_lr(cfg: &CisTrainConfig, epoch: usize) -> f64 {
    cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_step_epochs) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CisEpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub fn write_cis_curve(path: &FsPath, history: &[CisEpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mean_loss", "lr"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.mean_loss.to_string(),
            h.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Frame-index chunks of at most `batch_size` consecutive frames.
pub fn session_batches(n_frames: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n_frames)
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect()
}

/// Trains `model` in place; returns per-epoch mean batch loss.
pub fn fit_cis(
    model: &mut EmbeddingModel,
    sessions: &[&CookingSession],
    cfg: &CisTrainConfig,
    mut progress: impl FnMut(&EmbeddingModel, &CisEpochLog),
) -> Result<Vec<CisEpochLog>> {
    cfg.validate()?;
    struct Batch {
        session: usize,
        frames: Vec<usize>,
        truth: SimilarityMatrix,
    }
    let mut batches = Vec::new();
    for (si, s) in sessions.iter().enumerate() {
        if s.len() < 2 {
            continue;
        }
        let full = temporal_matrix(s)?;
        for frames in session_batches(s.len(), cfg.batch_size) {
            // a lone trailing frame carries no pairwise signal
            if frames.len() >= 2 {
                batches.push(Batch {
                    session: si,
                    truth: full.sub(&frames),
                    frames,
                });
            }
        }
    }
    if batches.is_empty() {
        return invalid("CIS training needs at least one session with two or more frames");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut opt = Adam::new(model.store.vars(), cfg.lr, 0.9, 0.999, cfg.weight_decay)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = cis_lr(cfg, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &bi in &order {
            let b = &batches[bi];
            let s = sessions[b.session];
            let images: Vec<Image> = b
                .frames
                .iter()
                .map(|&i| {
                    let im = &s.frames[i].image;
                    if cfg.augment {
                        AugmentParams::sample(&mut rng).apply(im)
                    } else {
                        im.clone()
                    }
                })
                .collect();
            let refs: Vec<&Image> = images.iter().collect();
            let emb = model.embed_batch(&refs)?;
            let loss = cis_batch_loss_tensor(&emb, &b.truth)?;
            let lv = scalar(&loss)?;
            if !lv.is_finite() {
                return Err(Error::Numeric(format!(
                    "CIS loss is {lv} at epoch {epoch}, session {}",
                    s.id
                )));
            }
            total += lv;
            opt.step(&loss.backward()?)?;
        }
        let log = CisEpochLog {
            epoch,
            mean_loss: total / batches.len() as f64,
            lr: opt.lr,
        };
        progress(model, &log);
        history.push(log);
    }
    Ok(history)
}

/// Fresh network trained on `sessions`.
pub fn train_cis(
    sessions: &[&CookingSession],
    net_cfg: &EmbeddingNetConfig,
    cfg: &CisTrainConfig,
) -> Result<(EmbeddingModel, Vec<CisEpochLog>)> {
    let mut model = EmbeddingModel::new(net_cfg.clone(), DType::F32, cfg.seed)?;
    let history = fit_cis(&mut model, sessions, cfg, |_, _| {})?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessions::{synth_session, tests::spec, SyntheticRecipeSpec};

    fn tiny_cfg() -> EmbeddingNetConfig {
        EmbeddingNetConfig {
            img_size: 16,
            embed_dim: 32,
            proj_dims: (32, 128),
            conv_channels: vec![8, 8],
            ..Default::default()
        }
    }

    fn noise_image(size: usize, seed: u64) -> Image {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(
            size,
            size,
            (0..size * size * 3)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let m = EmbeddingModel::new(tiny_cfg(), DType::F32, 1).unwrap();
        let x = noise_image(16, 3);
        let a = embed(&m, &x).unwrap();
        assert_eq!(a.len(), 128);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(a, embed(&m, &x).unwrap());
        assert_eq!(a, embed(&m, &x.clone()).unwrap());
        assert!(matches!(
            embed(&m, &noise_image(8, 1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn f_cul_range_and_hooks() {
        let m = EmbeddingModel::new(tiny_cfg(), DType::F32, 1).unwrap();
        let (a, b) = (noise_image(16, 1), noise_image(16, 2));
        assert_eq!(f_cul(&m, &a, &b).unwrap(), f_cul(&m, &b, &a).unwrap());
        assert!((f_cul(&m, &a, &a).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(f_cul_from_embeddings(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(f_cul_from_embeddings(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
    }

    #[test]
    fn predicted_matrix_matches_pairwise_loop() {
        let m = EmbeddingModel::new(tiny_cfg(), DType::F64, 5).unwrap();
        let imgs: Vec<Image> = (0..3).map(|s| noise_image(16, 10 + s)).collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let pm = predicted_matrix(&m, &refs).unwrap();
        assert!(pm.is_symmetric());
        for i in 0..3 {
            assert_eq!(pm.get(i, i), 1.0);
            for j in 0..3 {
                if i != j {
                    let ei = embed(&m, &imgs[i]).unwrap();
                    let ej = embed(&m, &imgs[j]).unwrap();
                    let brute: f64 = ei.iter().zip(&ej).map(|(x, y)| x * y).sum();
                    assert!((pm.get(i, j) - brute).abs() < 1e-12);
                }
            }
        }
        let same = vec![&imgs[0]; 3];
        assert!(predicted_matrix(&m, &same)
            .unwrap()
            .values()
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-12));
        assert!(predicted_matrix(&m, &refs[..1]).is_err());
    }

    #[test]
    fn batch_loss_examples() {
        let p = SimilarityMatrix::from_rows(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            MatrixKind::Predicted,
        )
        .unwrap();
        let t = SimilarityMatrix::from_rows(
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            MatrixKind::GroundTruthTemporal,
        )
        .unwrap();
        assert_eq!(cis_batch_loss(&p, &t).unwrap(), 0.5);
        assert_eq!(cis_batch_loss(&t, &p).unwrap(), 0.5);
        assert_eq!(cis_batch_loss(&p, &p).unwrap(), 0.0);
        let t3 =
            SimilarityMatrix::from_rows(vec![vec![1.0; 3]; 3], MatrixKind::GroundTruthTemporal)
                .unwrap();
        assert!(matches!(cis_batch_loss(&p, &t3), Err(Error::Shape(_))));

        let e = Tensor::new(&[[1.0f64, 0.0], [0.0, 1.0]], &candle_core::Device::Cpu).unwrap();
        assert_eq!(
            scalar(&cis_batch_loss_tensor(&e, &t).unwrap()).unwrap(),
            0.5
        );
    }

    #[test]
    fn step_decay_values() {
        let cfg = CisTrainConfig::default();
        for e in 0..10 {
            assert_eq!(cis_lr(&cfg, e), 1e-4);
        }
        assert_eq!(cis_lr(&cfg, 10), 6e-5);
        assert_eq!(cis_lr(&cfg, 19), 6e-5);
        assert_eq!(cis_lr(&cfg, 25), 3.6e-5);
    }

    #[test]
    fn batching_arithmetic() {
        let sizes: Vec<usize> = session_batches(40, 32).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 8]);
        assert_eq!(session_batches(40, 32)[1][0], 32);
    }

    #[test]
    fn toy_training_reduces_loss() {
        let s: SyntheticRecipeSpec = SyntheticRecipeSpec {
            img_size: 16,
            ..spec()
        };
        let sessions: Vec<CookingSession> = (0..2)
            .map(|k| synth_session(&s.with_seed(k), 8, 30.0).unwrap())
            .collect();
        let refs: Vec<&CookingSession> = sessions.iter().collect();
        let cfg = CisTrainConfig {
            epochs: 5,
            lr: 1e-3,
            augment: false,
            seed: 3,
            ..Default::default()
        };
        let (_, hist) = train_cis(&refs, &tiny_cfg(), &cfg).unwrap();
        assert_eq!(hist.len(), 5);
        assert!(hist[4].mean_loss < hist[0].mean_loss, "{hist:?}");
        assert!(train_cis(&[], &tiny_cfg(), &cfg).is_err());
    }

    #[test]
    fn unknown_backbone_is_a_config_error() {
        let cfg = EmbeddingNetConfig {
            backbone: "efficientnet-b1".into(),
            ..tiny_cfg()
        };
        assert!(matches!(
            EmbeddingModel::new(cfg, DType::F32, 0),
            Err(Error::Config(_))
        ));
    }
}
