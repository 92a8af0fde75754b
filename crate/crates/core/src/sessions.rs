//! Cooking sessions: data model, procedural synthetic sessions, on-disk
//! ingestion, dataset splits, geometric augmentation and temporal labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::img::{Image, CHANNELS};

pub const DEFAULT_INTERVAL_S: f64 = 30.0;
pub const SESSION_META_FILE: &str = "session.json";

/// Background (empty oven tray) colour of synthetic frames, in `[0, 1]`.
const TRAY_RGB: [f32; 3] = [0.12, 0.12, 0.14];

/// Canonical annotation labels, ordered by degree of cooking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CookState {
    Raw,
    Basic,
    Standard,
    Extended,
}

impl CookState {
    pub const ALL: [CookState; 4] = [Self::Raw, Self::Basic, Self::Standard, Self::Extended];
    pub const COOKED: [CookState; 3] = [Self::Basic, Self::Standard, Self::Extended];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Basic => "basic",
            Self::Standard => "standard",
            Self::Extended => "extended",
        }
    }
}

impl fmt::Display for CookState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CookState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cooking state {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub t_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CookingSession {
    pub id: String,
    pub recipe_id: String,
    pub interval_s: f64,
    pub frames: Vec<Frame>,
    pub annotations: BTreeMap<CookState, usize>,
}

impl CookingSession {
    /// Capture time of the last frame.
    pub fn duration(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.t_seconds)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_for(&self, state: CookState) -> Option<&Frame> {
        self.annotations
            .get(&state)
            .and_then(|&i| self.frames.get(i))
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t_seconds).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Format(format!("session {}: {msg}", self.id)));
        if self.frames.is_empty() {
            return fail("no frames".into());
        }
        let (h, w) = (self.frames[0].image.height(), self.frames[0].image.width());
        for (i, f) in self.frames.iter().enumerate() {
            if f.image.height() != h || f.image.width() != w {
                return fail(format!("frame {i} has a different size"));
            }
            if !(f.t_seconds >= 0.0) {
                return fail(format!("frame {i} has a negative timestamp"));
            }
            if i > 0 && f.t_seconds < self.frames[i - 1].t_seconds {
                return fail(format!("timestamps decrease at frame {i}"));
            }
        }
        if let Some(&raw) = self.annotations.get(&CookState::Raw) {
            if raw != 0 {
                return fail(format!("raw annotation must be frame 0, got {raw}"));
            }
        }
        let mut last: Option<usize> = None;
        for (state, &idx) in &self.annotations {
            if idx >= self.frames.len() {
                return fail(format!(
                    "annotation {state} points past the last frame ({idx})"
                ));
            }
            if let Some(prev) = last {
                if idx <= prev {
                    return fail(format!(
                        "annotation {state} ({idx}) does not follow the previous state"
                    ));
                }
            }
            last = Some(idx);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Disc,
    Rectangle,
    BlobCluster,
}

fn default_img_size() -> usize {
    64
}

/// Parameters of one procedurally rendered recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecipeSpec {
    pub name: String,
    pub shape_kind: ShapeKind,
    pub raw_color: [f32; 3],
    pub extended_color: [f32; 3],
    /// Logistic steepness of the browning curve.
    pub browning_rate: f64,
    /// Fraction of the session at which browning is fastest.
    pub browning_midpoint: f64,
    /// Final / initial footprint ratio.
    pub size_factor: f64,
    pub texture_noise_gain: f64,
    pub state_fractions: [f64; 3],
    pub seed: u64,
    #[serde(default = "default_img_size")]
    pub img_size: usize,
}

impl SyntheticRecipeSpec {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |c: &[f32; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(&self.raw_color) || !in_unit(&self.extended_color) {
            return invalid(format!("{}: colours must lie in [0,1]", self.name));
        }
        if !(self.browning_rate > 0.0) {
            return invalid(format!("{}: browning_rate must be positive", self.name));
        }
        if !(self.browning_midpoint > 0.0 && self.browning_midpoint < 1.0) {
            return invalid(format!(
                "{}: browning_midpoint must lie in (0,1)",
                self.name
            ));
        }
        if !(self.size_factor > 0.0) {
            return invalid(format!("{}: size_factor must be positive", self.name));
        }
        if !(self.texture_noise_gain >= 0.0) {
            return invalid(format!(
                "{}: texture_noise_gain must be nonnegative",
                self.name
            ));
        }
        let [b, s, e] = self.state_fractions;
        if !(0.0 < b && b < s && s < e && e <= 1.0) {
            return invalid(format!(
                "{}: state fractions must satisfy 0 < basic < standard < extended <= 1",
                self.name
            ));
        }
        if self.img_size < 8 {
            return invalid(format!("{}: img_size must be at least 8", self.name));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Browning progress in `[0, 1]` at session fraction `u`: a logistic
    /// curve rescaled so that it starts at exactly 0 and ends at exactly 1.
    pub fn browning(&self, u: f64) -> f64 {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let lo = sig(-self.browning_rate * self.browning_midpoint);
        let hi = sig(self.browning_rate * (1.0 - self.browning_midpoint));
        ((sig(self.browning_rate * (u - self.browning_midpoint)) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Noise-free dish colour in `[0, 1]` at session fraction `u`.
    pub fn color_at(&self, u: f64) -> [f32; 3] {
        let s = self.browning(u) as f32;
        std::array::from_fn(|c| {
            self.raw_color[c] + s * (self.extended_color[c] - self.raw_color[c])
        })
    }

    pub fn footprint_scale(&self, u: f64) -> f64 {
        1.0 + (self.size_factor - 1.0) * u
    }

    /// Frame indices of the three cooked states for a session of `n_frames`.
    pub fn state_indices(&self, n_frames: usize) -> Result<[usize; 3]> {
        let last = (n_frames - 1) as f64;
        let idx = self.state_fractions.map(|f| (f * last).round() as usize);
        if idx[0] == 0 || idx[0] >= idx[1] || idx[1] >= idx[2] {
            return invalid(format!(
                "{}: state fractions {:?} collide on frame indices {idx:?} with {n_frames} frames",
                self.name, self.state_fractions
            ));
        }
        Ok(idx)
    }

    /// Ground-truth colour of a cooked state.
    pub fn state_color(&self, state: CookState, n_frames: usize) -> Result<[f32; 3]> {
        let idx = match state {
            CookState::Raw => 0,
            other => self.state_indices(n_frames)?[other as usize - 1],
        };
        Ok(self.color_at(idx as f64 / (n_frames - 1) as f64))
    }

    pub fn geometry(&self) -> SessionGeometry {
        SessionGeometry::new(self)
    }
}

/// Per-session placement drawn from `SyntheticRecipeSpec::seed`.
#[derive(Debug, Clone)]
pub struct SessionGeometry {
    pub center: (f32, f32),
    base_scale: f32,
    angle: f32,
    blob_phase: f32,
    noise_grid: usize,
    noise: Vec<f32>,
    size: usize,
    kind: ShapeKind,
    size_factor: f32,
}

impl SessionGeometry {
    fn new(spec: &SyntheticRecipeSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let s = spec.img_size as f32;
        let mid = (s - 1.0) / 2.0;
        let jitter = 0.04 * s;
        let center = (
            mid + rng.gen_range(-jitter..=jitter),
            mid + rng.gen_range(-jitter..=jitter),
        );
        let base_scale = rng.gen_range(0.92f32..=1.08);
        let angle = rng.gen_range(0.0..std::f32::consts::PI);
        let blob_phase = rng.gen_range(0.0..std::f32::consts::TAU);
        let noise_grid = 17;
        let mut noise: Vec<f32> = (0..noise_grid * noise_grid)
            .map(|_| rng.gen_range(-1.0f32..=1.0))
            .collect();
        let mean = noise.iter().sum::<f32>() / noise.len() as f32;
        noise.iter_mut().for_each(|v| *v -= mean);
        Self {
            center,
            base_scale,
            angle,
            blob_phase,
            noise_grid,
            noise,
            size: spec.img_size,
            kind: spec.shape_kind,
            size_factor: spec.size_factor as f32,
        }
    }

    /// Radius of a disc around the centre that stays inside the dish for the whole session.
    pub fn interior_radius(&self) -> f32 {
        0.07 * self.size as f32 * self.size_factor.min(1.0)
    }

    fn texture(&self, y: usize, x: usize) -> f32 {
        let g = (self.noise_grid - 1) as f32;
        let fy = y as f32 / (self.size - 1).max(1) as f32 * g;
        let fx = x as f32 / (self.size - 1).max(1) as f32 * g;
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = (
            (y0 + 1).min(self.noise_grid - 1),
            (x0 + 1).min(self.noise_grid - 1),
        );
        let (wy, wx) = (fy - y0 as f32, fx - x0 as f32);
        let at = |yy: usize, xx: usize| self.noise[yy * self.noise_grid + xx];
        (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x1))
            + wy * ((1.0 - wx) * at(y1, x0) + wx * at(y1, x1))
    }

    /// Anti-aliased dish coverage of pixel `(y, x)` at footprint scale `scale`.
    fn coverage(&self, y: usize, x: usize, scale: f32) -> f32 {
        let s = self.size as f32 * self.base_scale * scale;
        let dy = y as f32 - self.center.0;
        let dx = x as f32 - self.center.1;
        let disc =
            |dy: f32, dx: f32, r: f32| (r - (dy * dy + dx * dx).sqrt() + 0.5).clamp(0.0, 1.0);
        match self.kind {
            ShapeKind::Disc => disc(dy, dx, 0.3 * s),
            ShapeKind::Rectangle => {
                let (sn, cs) = self.angle.sin_cos();
                let u = cs * dx + sn * dy;
                let v = -sn * dx + cs * dy;
                let sd = (u.abs() - 0.32 * s).max(v.abs() - 0.22 * s);
                (0.5 - sd).clamp(0.0, 1.0)
            }
            ShapeKind::BlobCluster => {
                let ring = 0.19 * s;
                let r = 0.11 * s;
                let mut a = disc(dy, dx, r);
                for k in 0..5 {
                    let phi = self.blob_phase + k as f32 * std::f32::consts::TAU / 5.0;
                    a = a.max(disc(dy - ring * phi.sin(), dx - ring * phi.cos(), r));
                }
                a
            }
        }
    }
}

/// Three contrasting recipes used for desk-scale runs.
pub fn desk_recipes(img_size: usize) -> Vec<SyntheticRecipeSpec> {
    let recipe =
        |name: &str, shape_kind, raw_color, extended_color, rate, midpoint, size_factor, noise| {
            SyntheticRecipeSpec {
                name: name.into(),
                shape_kind,
                raw_color,
                extended_color,
                browning_rate: rate,
                browning_midpoint: midpoint,
                size_factor,
                texture_noise_gain: noise,
                state_fractions: [0.35, 0.6, 0.85],
                seed: 0,
                img_size,
            }
        };
    vec![
        recipe(
            "cookie",
            ShapeKind::Disc,
            [0.93, 0.85, 0.62],
            [0.55, 0.33, 0.12],
            8.0,
            0.5,
            1.25,
            0.15,
        ),
        recipe(
            "salmon",
            ShapeKind::Rectangle,
            [0.93, 0.52, 0.42],
            [0.62, 0.40, 0.28],
            6.0,
            0.45,
            0.8,
            0.1,
        ),
        recipe(
            "tots",
            ShapeKind::BlobCluster,
            [0.9, 0.85, 0.6],
            [0.5, 0.3, 0.1],
            10.0,
            0.55,
            0.95,
            0.2,
        ),
    ]
}

/// Render one synthetic session.
pub fn synth_session(
    spec: &SyntheticRecipeSpec,
    n_frames: usize,
    interval_s: f64,
) -> Result<CookingSession> {
    if n_frames < 4 {
        return invalid(format!(
            "synthetic sessions need at least 4 frames, got {n_frames}"
        ));
    }
    if !(interval_s > 0.0) {
        return invalid("interval_s must be positive");
    }
    spec.validate()?;
    let state_idx = spec.state_indices(n_frames)?;
    let geom = spec.geometry();
    let size = spec.img_size;
    let texture: Vec<f32> = (0..size * size)
        .map(|i| geom.texture(i / size, i % size))
        .collect();

    let frames = (0..n_frames)
        .map(|k| {
            let u = k as f64 / (n_frames - 1) as f64;
            let color = spec.color_at(u);
            let scale = spec.footprint_scale(u) as f32;
            let amp = (spec.texture_noise_gain * u) as f32;
            let mut data = Vec::with_capacity(size * size * CHANNELS);
            for y in 0..size {
                for x in 0..size {
                    let a = geom.coverage(y, x, scale);
                    let n = amp * texture[y * size + x];
                    for c in 0..CHANNELS {
                        let dish = (color[c] + n).clamp(0.0, 1.0);
                        let v = TRAY_RGB[c] * (1.0 - a) + dish * a;
                        data.push(v * 2.0 - 1.0);
                    }
                }
            }
            Ok(Frame {
                image: Image::new(size, size, data)?,
                t_seconds: k as f64 * interval_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut annotations = BTreeMap::new();
    annotations.insert(CookState::Raw, 0);
    for (state, idx) in CookState::COOKED.into_iter().zip(state_idx) {
        annotations.insert(state, idx);
    }
    Ok(CookingSession {
        id: format!("{}-{:06}", spec.name, spec.seed),
        recipe_id: spec.name.clone(),
        interval_s,
        frames,
        annotations,
    })
}

/// Read a JSON list of synthetic recipe specs.
pub fn load_recipe_specs(path: &Path) -> Result<Vec<SyntheticRecipeSpec>> {
    let specs: Vec<SyntheticRecipeSpec> = serde_json::from_str(&fs::read_to_string(path)?)?;
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionMeta {
    recipe_id: String,
    interval_s: f64,
    annotations: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamps_s: Option<Vec<f64>>,
}

fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    name.strip_prefix("frame_")?
        .strip_suffix(".png")?
        .parse()
        .ok()
}

/// Load every session directory under `root`, sorted by directory name.
pub fn load_sessions(root: &Path) -> Result<Vec<CookingSession>> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_session(d)).collect()
}

pub fn load_session(dir: &Path) -> Result<CookingSession> {
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let fmt_err = |msg: String| Error::Format(format!("session {id}: {msg}"));
    let meta_path = dir.join(SESSION_META_FILE);
    if !meta_path.is_file() {
        return Err(fmt_err(format!("missing {SESSION_META_FILE}")));
    }
    let meta: SessionMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| fmt_err(format!("bad {SESSION_META_FILE}: {e}")))?;
    if !(meta.interval_s > 0.0) {
        return Err(fmt_err("interval_s must be positive".into()));
    }

    let mut indices: Vec<usize> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| parse_frame_index(&e.file_name().to_string_lossy()))
        .collect();
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(fmt_err("no frame images".into()));
    }
    for (expected, &found) in indices.iter().enumerate() {
        if expected != found {
            return Err(fmt_err(format!(
                "{} is missing from the frame sequence",
                frame_file_name(expected)
            )));
        }
    }
    let n = indices.len();
    let times = match &meta.timestamps_s {
        Some(ts) if ts.len() != n => {
            return Err(fmt_err(format!("{} timestamps for {n} frames", ts.len())));
        }
        Some(ts) => {
            if ts.windows(2).any(|w| !(w[1] > w[0])) || ts.first().is_some_and(|&t| t < 0.0) {
                return Err(fmt_err("timestamps are not strictly increasing".into()));
            }
            ts.clone()
        }
        None => (0..n).map(|k| k as f64 * meta.interval_s).collect(),
    };

    let frames = indices
        .iter()
        .zip(times)
        .map(|(&i, t)| {
            Ok(Frame {
                image: Image::load_png(&dir.join(frame_file_name(i)))?,
                t_seconds: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut annotations = BTreeMap::new();
    for (name, idx) in meta.annotations {
        let state = name
            .parse::<CookState>()
            .map_err(|_| fmt_err(format!("unknown state {name:?}")))?;
        annotations.insert(state, idx);
    }
    let session = CookingSession {
        id,
        recipe_id: meta.recipe_id,
        interval_s: meta.interval_s,
        frames,
        annotations,
    };
    session.validate()?;
    Ok(session)
}

/// Write a session in the directory layout read by [`load_sessions`].
pub fn save_session(session: &CookingSession, root: &Path) -> Result<()> {
    let dir = root.join(&session.id);
    fs::create_dir_all(&dir)?;
    for (i, f) in session.frames.iter().enumerate() {
        f.image.save_png(&dir.join(frame_file_name(i)))?;
    }
    let uniform = session
        .frames
        .iter()
        .enumerate()
        .all(|(i, f)| (f.t_seconds - i as f64 * session.interval_s).abs() < 1e-9);
    let meta = SessionMeta {
        recipe_id: session.recipe_id.clone(),
        interval_s: session.interval_s,
        annotations: session
            .annotations
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), *v))
            .collect(),
        timestamps_s: (!uniform).then(|| session.times()),
    };
    fs::write(
        dir.join(SESSION_META_FILE),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// Sessions whose ids are listed in `ids`, in input order.
    pub fn select<'a>(sessions: &'a [CookingSession], ids: &[String]) -> Vec<&'a CookingSession> {
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        sessions
            .iter()
            .filter(|s| wanted.contains(s.id.as_str()))
            .collect()
    }
}

/// 70:10:20 split, shuffled by `seed` and stratified by recipe.
///
/// Each recipe first receives `floor` shares of validation and test
/// sessions; the global validation/test totals are then topped up to
/// `round(0.1 n)` / `round(0.2 n)` from the recipes with the largest
/// fractional remainders, so the overall sizes stay within one session of
/// the target ratio.
pub fn split_dataset(sessions: &[CookingSession], seed: u64) -> Result<DatasetSplit> {
    if sessions.len() < 10 {
        return invalid(format!(
            "need at least 10 sessions to split, got {}",
            sessions.len()
        ));
    }
    let mut ids = BTreeSet::new();
    let mut by_recipe: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in sessions {
        if !ids.insert(s.id.as_str()) {
            return invalid(format!("duplicate session id {}", s.id));
        }
        by_recipe
            .entry(s.recipe_id.as_str())
            .or_default()
            .push(s.id.as_str());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Alloc<'a> {
        ids: Vec<&'a str>,
        val: usize,
        test: usize,
        rem_val: f64,
        rem_test: f64,
    }
    let mut allocs: Vec<Alloc> = by_recipe
        .into_values()
        .map(|mut v| {
            v.sort_unstable();
            v.shuffle(&mut rng);
            let n = v.len() as f64;
            let (val, test) = ((n * 0.1).floor(), (n * 0.2).floor());
            Alloc {
                val: val as usize,
                test: test as usize,
                rem_val: n * 0.1 - val,
                rem_test: n * 0.2 - test,
                ids: v,
            }
        })
        .collect();

    let total = sessions.len() as f64;
    let target_val = (total * 0.1).round() as usize;
    let target_test = (total * 0.2).round() as usize;
    top_up(
        &mut allocs,
        target_val,
        |a| &mut a.val,
        |a| a.rem_val,
        |a| a.ids.len() - a.val - a.test,
    );
    top_up(
        &mut allocs,
        target_test,
        |a| &mut a.test,
        |a| a.rem_test,
        |a| a.ids.len() - a.val - a.test,
    );

    fn top_up<A>(
        allocs: &mut [A],
        target: usize,
        count: impl Fn(&mut A) -> &mut usize,
        remainder: impl Fn(&A) -> f64,
        spare: impl Fn(&A) -> usize,
    ) {
        let mut have: usize = allocs.iter_mut().map(|a| *count(a)).sum();
        let mut order: Vec<usize> = (0..allocs.len()).collect();
        order.sort_by(|&i, &j| {
            remainder(&allocs[j])
                .total_cmp(&remainder(&allocs[i]))
                .then(i.cmp(&j))
        });
        let mut cursor = 0;
        while have < target && cursor < order.len() * 2 {
            let a = &mut allocs[order[cursor % order.len()]];
            if spare(a) > 0 {
                *count(a) += 1;
                have += 1;
            }
            cursor += 1;
        }
    }

    let mut split = DatasetSplit {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for a in allocs {
        let (val, rest) = a.ids.split_at(a.val);
        let (test, train) = rest.split_at(a.test);
        split.val.extend(val.iter().map(|s| s.to_string()));
        split.test.extend(test.iter().map(|s| s.to_string()));
        split.train.extend(train.iter().map(|s| s.to_string()));
    }
    Ok(split)
}

/// Parameters of one geometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub angle_deg: f32,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        flip: false,
        angle_deg: 0.0,
    };
    pub const MAX_ANGLE_DEG: f32 = 60.0;

    /// Horizontal flip with probability 0.5, rotation uniform in ±60°.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip: rng.gen_bool(0.5),
            angle_deg: rng.gen_range(-Self::MAX_ANGLE_DEG..=Self::MAX_ANGLE_DEG),
        }
    }

    /// Flip (if set), then rotate about the image centre with bilinear
    /// resampling. Samples falling outside the source read as `-1`.
    pub fn apply(&self, image: &Image) -> Image {
        let src = if self.flip {
            image.flip_horizontal()
        } else {
            image.clone()
        };
        if self.angle_deg == 0.0 {
            return src;
        }
        let (h, w) = (src.height(), src.width());
        let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
        let (sn, cs) = self.angle_deg.to_radians().sin_cos();
        let fetch = |y: isize, x: isize, c: usize| {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                -1.0
            } else {
                src.get(y as usize, x as usize, c)
            }
        };
        let mut out = Image::filled(h, w, -1.0);
        for y in 0..h {
            for x in 0..w {
                let dy = y as f32 - cy;
                let dx = x as f32 - cx;
                // inverse rotation: where does this output pixel come from
                let sx = cs * dx + sn * dy + cx;
                let sy = -sn * dx + cs * dy + cy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                for c in 0..CHANNELS {
                    let v = (1.0 - fy)
                        * ((1.0 - fx) * fetch(y0, x0, c) + fx * fetch(y0, x0 + 1, c))
                        + fy * ((1.0 - fx) * fetch(y0 + 1, x0, c) + fx * fetch(y0 + 1, x0 + 1, c));
                    out.set(y, x, c, v.clamp(-1.0, 1.0));
                }
            }
        }
        out
    }
}

pub fn augment<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    AugmentParams::sample(rng).apply(image)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    GroundTruthTemporal,
    Predicted,
}

/// Dense symmetric `n × n` similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    pub kind: MatrixKind,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, kind: MatrixKind) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(
                "similarity matrix rows must all have length n".into(),
            ));
        }
        Ok(Self {
            n,
            values: rows.into_iter().flatten().collect(),
            kind,
        })
    }

    pub(crate) fn from_flat(n: usize, values: Vec<f64>, kind: MatrixKind) -> Self {
        debug_assert_eq!(values.len(), n * n);
        Self { n, values, kind }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Principal sub-matrix on `indices`.
    pub fn sub(&self, indices: &[usize]) -> Self {
        let values = indices
            .iter()
            .flat_map(|&i| indices.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self {
            n: indices.len(),
            values,
            kind: self.kind,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// `ts(i, j) = 1 - |t_i - t_j| / T` from frame timestamps.
pub fn temporal_matrix(session: &CookingSession) -> Result<SimilarityMatrix> {
    temporal_matrix_from_times(&session.times())
}

pub fn temporal_matrix_from_times(times: &[f64]) -> Result<SimilarityMatrix> {
    let n = times.len();
    if n < 2 {
        return invalid(format!("temporal matrix needs at least 2 frames, got {n}"));
    }
    let first = times[0];
    let duration = times[n - 1];
    if !(duration > 0.0) || first < 0.0 {
        return invalid(format!("session duration must be positive, got {duration}"));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in 0..i {
            let v = 1.0 - (times[i] - times[j]).abs() / duration;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix::from_flat(
        n,
        values,
        MatrixKind::GroundTruthTemporal,
    ))
}

/// One supervised (raw, cooked-state) training pair.
#[derive(Debug, Clone)]
pub struct StatePair {
    pub session_id: String,
    pub recipe_id: String,
    pub state: CookState,
    pub raw: Image,
    pub cooked: Image,
}

pub fn pair_raw_state(session: &CookingSession) -> Result<Vec<StatePair>> {
    if session.annotations.get(&CookState::Raw) != Some(&0) {
        return invalid(format!("session {} has no raw annotation", session.id));
    }
    let pairs: Vec<StatePair> = CookState::COOKED
        .into_iter()
        .filter_map(|state| {
            session.frame_for(state).map(|f| StatePair {
                session_id: session.id.clone(),
                recipe_id: session.recipe_id.clone(),
                state,
                raw: session.frames[0].image.clone(),
                cooked: f.image.clone(),
            })
        })
        .collect();
    if pairs.is_empty() {
        return invalid(format!(
            "session {} has no cooked-state annotation",
            session.id
        ));
    }
    Ok(pairs)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn spec() -> SyntheticRecipeSpec {
        SyntheticRecipeSpec {
            name: "cookie".into(),
            shape_kind: ShapeKind::Disc,
            raw_color: [0.9, 0.8, 0.6],
            extended_color: [0.5, 0.3, 0.1],
            browning_rate: 8.0,
            browning_midpoint: 0.5,
            size_factor: 1.0,
            texture_noise_gain: 0.1,
            state_fractions: [0.35, 0.6, 0.85],
            seed: 7,
            img_size: 32,
        }
    }

    fn session_with_times(times: &[f64]) -> CookingSession {
        CookingSession {
            id: "s".into(),
            recipe_id: "r".into(),
            interval_s: 30.0,
            frames: times
                .iter()
                .map(|&t| Frame {
                    image: Image::filled(4, 4, 0.0),
                    t_seconds: t,
                })
                .collect(),
            annotations: BTreeMap::new(),
        }
    }

    #[test]
    fn frame_zero_interior_is_raw_colour() {
        let s = spec();
        let sess = synth_session(&s, 8, 30.0).unwrap();
        let g = s.geometry();
        let mean = sess.frames[0]
            .image
            .mean_rgb_in_disc(g.center.0, g.center.1, g.interior_radius())
            .unwrap();
        for c in 0..3 {
            assert!((mean[c] - s.raw_color[c]).abs() < 0.005, "{mean:?}");
        }
    }

    #[test]
    fn darker_target_gives_nonincreasing_luminance() {
        for kind in [
            ShapeKind::Disc,
            ShapeKind::Rectangle,
            ShapeKind::BlobCluster,
        ] {
            for size_factor in [0.7, 1.0, 1.3] {
                let s = SyntheticRecipeSpec {
                    shape_kind: kind,
                    size_factor,
                    ..spec()
                };
                let sess = synth_session(&s, 12, 30.0).unwrap();
                let g = s.geometry();
                let lum = |im: &Image| {
                    let m = im
                        .mean_rgb_in_disc(g.center.0, g.center.1, g.interior_radius())
                        .unwrap();
                    m.iter().sum::<f32>() / 3.0
                };
                // closed form of the noise-free interior luminance
                let oracle: Vec<f32> = (0..12)
                    .map(|k| s.color_at(k as f64 / 11.0).iter().sum::<f32>() / 3.0)
                    .collect();
                for (k, want) in oracle.iter().enumerate() {
                    assert!((lum(&sess.frames[k].image) - want).abs() < 0.02);
                    if k > 0 {
                        assert!(
                            lum(&sess.frames[k].image) <= lum(&sess.frames[k - 1].image) + 0.02
                        );
                    }
                }
                if size_factor <= 1.0 {
                    let whole = |im: &Image| im.gray_unit().iter().sum::<f64>() / (32.0 * 32.0);
                    for k in 1..12 {
                        assert!(
                            whole(&sess.frames[k].image) <= whole(&sess.frames[k - 1].image) + 0.02
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_seed_sensitive() {
        let a = synth_session(&spec(), 6, 30.0).unwrap();
        let b = synth_session(&spec(), 6, 30.0).unwrap();
        assert_eq!(a, b);
        let c = synth_session(&spec().with_seed(8), 6, 30.0).unwrap();
        assert_ne!(a.frames[5].image, c.frames[5].image);
    }

    #[test]
    fn synthesis_annotations_and_errors() {
        let sess = synth_session(&spec(), 16, 30.0).unwrap();
        assert_eq!(sess.annotations[&CookState::Basic], 5);
        assert_eq!(sess.annotations[&CookState::Standard], 9);
        assert_eq!(sess.annotations[&CookState::Extended], 13);
        assert_eq!(sess.duration(), 450.0);
        sess.validate().unwrap();
        assert!(matches!(
            synth_session(&spec(), 3, 30.0),
            Err(Error::InvalidArgument(_))
        ));
        let crowded = SyntheticRecipeSpec {
            state_fractions: [0.4, 0.45, 0.5],
            ..spec()
        };
        assert!(matches!(
            synth_session(&crowded, 5, 30.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn size_factor_changes_footprint() {
        let count = |s: &SyntheticRecipeSpec| {
            let sess = synth_session(s, 5, 30.0).unwrap();
            let tray = TRAY_RGB[0] * 2.0 - 1.0;
            let n = |im: &Image| {
                (0..32 * 32)
                    .filter(|i| (im.data()[i * 3] - tray).abs() > 0.05)
                    .count()
            };
            (n(&sess.frames[0].image), n(&sess.frames[4].image))
        };
        let (a, b) = count(&SyntheticRecipeSpec {
            size_factor: 1.3,
            ..spec()
        });
        assert!(b > a);
        let (a, b) = count(&SyntheticRecipeSpec {
            size_factor: 0.7,
            ..spec()
        });
        assert!(b < a);
    }

    #[test]
    fn temporal_matrix_four_frames() {
        let m = temporal_matrix(&session_with_times(&[0.0, 30.0, 60.0, 90.0])).unwrap();
        let row = m.row(0);
        let expected = [1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (a, b) in row.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(m.get(0, 3), 0.0);
        assert!(m.is_symmetric());
        assert!(matches!(
            temporal_matrix(&session_with_times(&[0.0, 0.0])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn split_sizes() {
        let mk = |n: usize| {
            (0..n)
                .map(|i| CookingSession {
                    id: format!("s{i:03}"),
                    ..session_with_times(&[0.0, 30.0])
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(split_dataset(&mk(100), 1).unwrap().sizes(), (70, 10, 20));
        assert_eq!(split_dataset(&mk(10), 1).unwrap().sizes(), (7, 1, 2));
        assert_eq!(
            split_dataset(&mk(40), 3).unwrap(),
            split_dataset(&mk(40), 3).unwrap()
        );
        assert!(matches!(
            split_dataset(&mk(9), 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn split_is_stratified_by_recipe() {
        let sessions: Vec<_> = (0..60)
            .map(|i| CookingSession {
                id: format!("s{i:03}"),
                recipe_id: format!("r{}", i % 3),
                ..session_with_times(&[0.0, 30.0])
            })
            .collect();
        let split = split_dataset(&sessions, 11).unwrap();
        assert_eq!(split.sizes(), (42, 6, 12));
        for r in 0..3 {
            let n = DatasetSplit::select(&sessions, &split.test)
                .iter()
                .filter(|s| s.recipe_id == format!("r{r}"))
                .count();
            assert_eq!(n, 4);
        }
    }

    #[test]
    fn augment_identity_flip_and_range() {
        let data: Vec<f32> = (0..5 * 6 * 3)
            .map(|i| ((i * 37) % 100) as f32 / 50.0 - 1.0)
            .collect();
        let im = Image::new(5, 6, data).unwrap();
        assert_eq!(AugmentParams::IDENTITY.apply(&im), im);
        let flip = AugmentParams {
            flip: true,
            angle_deg: 0.0,
        };
        let once = flip.apply(&im);
        assert_eq!(flip.apply(&once), im);
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(once.get(y, x, 1), im.get(y, 5 - x, 1));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let out = augment(&im, &mut rng);
            assert!(out.same_shape(&im) && out.in_range());
        }
    }

    #[test]
    fn rotation_by_right_angle_moves_pixels() {
        let mut im = Image::filled(5, 5, -1.0);
        im.set(0, 2, 0, 1.0);
        let out = AugmentParams {
            flip: false,
            angle_deg: 60.0,
        }
        .apply(&im);
        assert!(out.get(0, 2, 0) < 1.0);
        // the centre pixel is a fixed point of any rotation
        let mut c = Image::filled(5, 5, -1.0);
        c.set(2, 2, 1, 0.5);
        let out = AugmentParams {
            flip: true,
            angle_deg: 37.0,
        }
        .apply(&c);
        assert!((out.get(2, 2, 1) - 0.5).abs() < 1e-5);
    }

    #[test]
    fn raw_state_pairs() {
        let mut sess = session_with_times(&(0..15).map(|k| k as f64 * 30.0).collect::<Vec<_>>());
        sess.annotations = [
            (CookState::Raw, 0),
            (CookState::Basic, 5),
            (CookState::Standard, 9),
            (CookState::Extended, 14),
        ]
        .into();
        assert_eq!(pair_raw_state(&sess).unwrap().len(), 3);
        sess.annotations = [(CookState::Raw, 0), (CookState::Basic, 5)].into();
        assert_eq!(pair_raw_state(&sess).unwrap().len(), 1);
        sess.annotations = [(CookState::Raw, 0)].into();
        assert!(pair_raw_state(&sess).is_err());
        sess.annotations = [(CookState::Basic, 3)].into();
        assert!(pair_raw_state(&sess).is_err());
    }

    #[test]
    fn disk_round_trip_and_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let sess = synth_session(
            &SyntheticRecipeSpec {
                img_size: 16,
                ..spec()
            },
            16,
            30.0,
        )
        .unwrap();
        save_session(&sess, dir.path()).unwrap();
        let loaded = load_sessions(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].len(), 16);
        assert_eq!(loaded[0].duration(), 450.0);
        assert_eq!(loaded[0].annotations, sess.annotations);

        let empty = tempfile::tempdir().unwrap();
        assert!(load_sessions(empty.path()).unwrap().is_empty());

        let sdir = dir.path().join(&sess.id);
        fs::remove_file(sdir.join("frame_0003.png")).unwrap();
        let err = load_sessions(dir.path()).unwrap_err();
        assert!(
            matches!(&err, Error::Format(m) if m.contains("frame_0003.png")),
            "{err}"
        );

        fs::remove_file(sdir.join(SESSION_META_FILE)).unwrap();
        let err = load_sessions(dir.path()).unwrap_err();
        assert!(
            matches!(&err, Error::Format(m) if m.contains(&sess.id)),
            "{err}"
        );
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut sess = synth_session(
            &SyntheticRecipeSpec {
                img_size: 8,
                ..spec()
            },
            4,
            30.0,
        )
        .unwrap();
        sess.frames[2].t_seconds = 75.0;
        save_session(&sess, dir.path()).unwrap();
        load_sessions(dir.path()).unwrap();
        let meta_path = dir.path().join(&sess.id).join(SESSION_META_FILE);
        let text = fs::read_to_string(&meta_path)
            .unwrap()
            .replace("75.0", "10.0");
        fs::write(&meta_path, text).unwrap();
        assert!(matches!(load_sessions(dir.path()), Err(Error::Format(_))));
    }
}
