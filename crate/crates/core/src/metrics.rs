//! Baseline image metrics and the state-table / trajectory reports.

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::cis::{f_cul_from_embeddings, EmbeddingModel};
use crate::error::{invalid, shape_err, Result};
use crate::img::Image;
use crate::sessions::{CookState, CookingSession};
use crate::training::{perceptual_loss, Perceptual};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..n).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..n).map(|i| k[i] * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Single-scale SSIM on channel-mean grayscale in `[0, 1]`, Gaussian window
/// 11 (σ 1.5), dynamic range 1, averaged over the valid SSIM map.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return shape_err(format!(
            "ssim on {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        ));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return invalid(format!("ssim window {SSIM_WINDOW} exceeds {h}x{w} image"));
    }
    let k = gaussian_window();
    let ga = a.gray_unit();
    let gb = b.gray_unit();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&ga, h, w, &k);
    let mu_b = filter_valid(&gb, h, w, &k);
    let saa = filter_valid(&prod(&ga, &ga), h, w, &k);
    let sbb = filter_valid(&prod(&gb, &gb), h, w, &k);
    let sab = filter_valid(&prod(&ga, &gb), h, w, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Spearman rank correlation; ties get their mean rank.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid(format!(
            "spearman needs two equal-length sequences of >= 2 values, got {} and {}",
            x.len(),
            y.len()
        ));
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mean = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = mean;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub ssim: f64,
    /// `1 − perceptual distance`.
    pub perc_sim: f64,
    pub cis: f64,
}

/// Scores of the raw frame against itself and each annotated cooked state.
pub fn session_state_scores(
    cis: &EmbeddingModel,
    perceptual: &Perceptual,
    session: &CookingSession,
) -> Result<Vec<(CookState, PairScores)>> {
    let Some(raw) = session.frame_for(CookState::Raw) else {
        return invalid(format!("session {} has no raw annotation", session.id));
    };
    let mut images = vec![(CookState::Raw, &raw.image)];
    for st in CookState::COOKED {
        if let Some(f) = session.frame_for(st) {
            images.push((st, &f.image));
        }
    }
    let refs: Vec<&Image> = images.iter().map(|(_, im)| *im).collect();
    let emb = cis.embed_all(&refs)?;
    images
        .iter()
        .zip(&emb)
        .map(|((st, im), e)| {
            if *st == CookState::Raw {
                return Ok((
                    *st,
                    PairScores {
                        ssim: 1.0,
                        perc_sim: 1.0,
                        cis: 1.0,
                    },
                ));
            }
            Ok((
                *st,
                PairScores {
                    ssim: ssim(&raw.image, im)?,
                    perc_sim: 1.0 - perceptual_loss(&raw.image, im, perceptual)?,
                    cis: f_cul_from_embeddings(&emb[0], e),
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub pair_kind: String,
    pub ssim: f64,
    pub perc_sim: f64,
    pub cis: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTable {
    pub perc_label: String,
    pub rows: Vec<StateRow>,
}

impl StateTable {
    pub fn row(&self, kind: &str) -> Option<&StateRow> {
        self.rows.iter().find(|r| r.pair_kind == kind)
    }

    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pair_kind", "ssim", &self.perc_label, "cis", "count"])?;
        for r in &self.rows {
            w.write_record([
                r.pair_kind.clone(),
                r.ssim.to_string(),
                r.perc_sim.to_string(),
                r.cis.to_string(),
                r.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn pair_kind(state: CookState) -> String {
    format!("raw-{}", state.as_str())
}

/// Per-kind means over the raw/state pairs of `sessions`.
pub fn eval_state_table(
    cis: &EmbeddingModel,
    perceptual: &Perceptual,
    sessions: &[&CookingSession],
) -> Result<StateTable> {
    if sessions.is_empty() {
        return invalid("state table needs at least one test session");
    }
    let mut ordered: Vec<&CookingSession> = sessions.to_vec();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mut acc: BTreeMap<CookState, (PairScores, usize)> = BTreeMap::new();
    for s in ordered {
        for (st, sc) in session_state_scores(cis, perceptual, s)? {
            let e = acc.entry(st).or_insert((
                PairScores {
                    ssim: 0.0,
                    perc_sim: 0.0,
                    cis: 0.0,
                },
                0,
            ));
            e.0.ssim += sc.ssim;
            e.0.perc_sim += sc.perc_sim;
            e.0.cis += sc.cis;
            e.1 += 1;
        }
    }
    let rows = CookState::ALL
        .iter()
        .map(|st| {
            let (sum, n) = acc.get(st).copied().unwrap_or((
                PairScores {
                    ssim: 0.0,
                    perc_sim: 0.0,
                    cis: 0.0,
                },
                0,
            ));
            let mean = |v: f64| if n == 0 { f64::NAN } else { v / n as f64 };
            StateRow {
                pair_kind: pair_kind(*st),
                ssim: mean(sum.ssim),
                perc_sim: mean(sum.perc_sim),
                cis: mean(sum.cis),
                count: n,
            }
        })
        .collect();
    Ok(StateTable {
        perc_label: perceptual.similarity_label().into(),
        rows,
    })
}

#[derive(Debug, Clone)]
pub enum Anchor {
    Frame(usize),
    Image(Image),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t_seconds: f64,
    pub cis: f64,
    pub ssim: f64,
    pub perc_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub session_id: String,
    pub perc_label: String,
    pub rows: Vec<TrajectoryRow>,
}

fn range(v: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    hi - lo
}

impl Trajectory {
    pub fn cis_range(&self) -> f64 {
        range(self.rows.iter().map(|r| r.cis))
    }

    pub fn ssim_range(&self) -> f64 {
        range(self.rows.iter().map(|r| r.ssim))
    }

    /// CIS range over SSIM range; infinite when SSIM is flat.
    pub fn range_ratio(&self) -> f64 {
        self.cis_range() / self.ssim_range()
    }

    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t_seconds", "cis", "ssim", &self.perc_label])?;
        for r in &self.rows {
            w.write_record([
                r.t_seconds.to_string(),
                r.cis.to_string(),
                r.ssim.to_string(),
                r.perc_sim.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares the anchor against every frame of the session.
pub fn trajectory_report(
    cis: &EmbeddingModel,
    perceptual: &Perceptual,
    session: &CookingSession,
    anchor: &Anchor,
) -> Result<Trajectory> {
    if session.is_empty() {
        return invalid(format!("session {} has no frames", session.id));
    }
    let anchor_img = match anchor {
        Anchor::Frame(i) => match session.frames.get(*i) {
            Some(f) => &f.image,
            None => {
                return invalid(format!(
                    "anchor frame {i} outside a {}-frame session",
                    session.len()
                ))
            }
        },
        Anchor::Image(im) => im,
    };
    let mut images: Vec<&Image> = vec![anchor_img];
    images.extend(session.frames.iter().map(|f| &f.image));
    let emb = cis.embed_all(&images)?;
    let rows = session
        .frames
        .iter()
        .zip(&emb[1..])
        .map(|(f, e)| {
            Ok(TrajectoryRow {
                t_seconds: f.t_seconds,
                cis: f_cul_from_embeddings(&emb[0], e),
                ssim: ssim(anchor_img, &f.image)?,
                perc_sim: 1.0 - perceptual_loss(anchor_img, &f.image, perceptual)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        session_id: session.id.clone(),
        perc_label: perceptual.similarity_label().into(),
        rows,
    })
}

/// Line chart of one trajectory: CIS red, SSIM green, perceptual blue,
/// y axis spanning `[0, 1]`.
pub fn plot_trajectory(traj: &Trajectory, path: &FsPath) -> Result<()> {
    const W: u32 = 480;
    const H: u32 = 240;
    const M: u32 = 20;
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    for x in M..W - M {
        img.put_pixel(x, H - M, image::Rgb([0, 0, 0]));
    }
    for y in M..=H - M {
        img.put_pixel(M, y, image::Rgb([0, 0, 0]));
    }
    let n = traj.rows.len();
    let to_px = |i: usize, v: f64| {
        let fx = if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.0
        };
        let x = M as f64 + fx * (W - 2 * M) as f64;
        let y = (H - M) as f64 - v.clamp(0.0, 1.0) * (H - 2 * M) as f64;
        (x, y)
    };
    type Series = (fn(&TrajectoryRow) -> f64, [u8; 3]);
    let series: [Series; 3] = [
        (|r| r.cis, [200, 30, 30]),
        (|r| r.ssim, [30, 150, 30]),
        (|r| r.perc_sim, [30, 60, 200]),
    ];
    for (get, color) in series {
        for i in 1..n {
            let (x0, y0) = to_px(i - 1, get(&traj.rows[i - 1]));
            let (x1, y1) = to_px(i, get(&traj.rows[i]));
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let f = s as f64 / steps as f64;
                let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
                img.put_pixel(
                    (x.round() as u32).min(W - 1),
                    (y.round() as u32).min(H - 1),
                    image::Rgb(color),
                );
            }
        }
    }
    img.save(path)?;
    Ok(())
}
