//! Streaming progress monitoring: similarity of each new frame to a target
//! image, centered smoothing, and a confirmed-peak stop rule.

use std::path::Path as FsPath;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cis::{embed, f_cul_from_embeddings, EmbeddingModel};
use crate::error::{invalid, Error, Result};
use crate::img::Image;
use crate::sessions::{CookingSession, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub interval_s: f64,
    pub smooth_window: usize,
    pub peak_confirm: usize,
    pub min_peak_sim: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            interval_s: 30.0,
            smooth_window: 3,
            peak_confirm: 2,
            min_peak_sim: 0.5,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return invalid(format!(
                "smooth_window must be odd and >= 1, got {}",
                self.smooth_window
            ));
        }
        if self.peak_confirm == 0 {
            return invalid("peak_confirm must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.min_peak_sim) {
            return invalid(format!(
                "min_peak_sim must lie in [0, 1], got {}",
                self.min_peak_sim
            ));
        }
        if !(self.interval_s > 0.0) {
            return invalid("interval_s must be positive");
        }
        Ok(())
    }
}

/// Smoothing and peak confirmation over a raw similarity sequence.
///
/// `smoothed[i]` is the mean of `raw` over the window centred on `i`,
/// truncated at both ends. Only the trailing half-window changes when a
/// value arrives, so a push costs O(window).
#[derive(Debug, Clone)]
pub struct PeakTracker {
    half: usize,
    confirm: usize,
    min_peak: f64,
    raw: Vec<f64>,
    smoothed: Vec<f64>,
}

impl PeakTracker {
    pub fn new(cfg: &MonitorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            half: cfg.smooth_window / 2,
            confirm: cfg.peak_confirm,
            min_peak: cfg.min_peak_sim,
            raw: Vec::new(),
            smoothed: Vec::new(),
        })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn smoothed(&self) -> &[f64] {
        &self.smoothed
    }

    /// Appends one raw value; returns the peak index once it is confirmed.
    pub fn push(&mut self, value: f64) -> Option<usize> {
        self.raw.push(value);
        self.smoothed.push(0.0);
        let n = self.raw.len();
        for i in n.saturating_sub(self.half + 1)..n {
            let lo = i.saturating_sub(self.half);
            let hi = (i + self.half).min(n - 1);
            self.smoothed[i] = self.raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        }
        self.confirmed_peak()
    }

    fn confirmed_peak(&self) -> Option<usize> {
        let s = &self.smoothed;
        let (peak, &best) = s
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| {
                if *v > *acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        if best < self.min_peak || peak + self.confirm >= s.len() {
            return None;
        }
        s[peak + 1..=peak + self.confirm]
            .iter()
            .all(|&v| v < best)
            .then_some(peak)
    }
}

/// Stop decisions depend only on the raw sequence and configuration.
pub fn peak_decision(raw: &[f64], cfg: &MonitorConfig) -> Result<Option<(usize, usize)>> {
    let mut tracker = PeakTracker::new(cfg)?;
    for (k, &v) in raw.iter().enumerate() {
        if let Some(i) = tracker.push(v) {
            return Ok(Some((i, k)));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum MonitorStatus {
    Running,
    Stopped { index: usize, t_seconds: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision")]
pub enum Decision {
    Continue,
    Stop { index: usize, t_seconds: f64 },
}

#[derive(Debug, Clone)]
pub struct MonitorState {
    pub target_embedding: Vec<f64>,
    history: Vec<(f64, f64)>,
    tracker: PeakTracker,
    status: MonitorStatus,
    step_times: Vec<Duration>,
}

impl MonitorState {
    /// `(t_seconds, raw_similarity)` per frame seen.
    pub fn history(&self) -> &[(f64, f64)] {
        &self.history
    }

    pub fn smoothed(&self) -> &[f64] {
        self.tracker.smoothed()
    }

    pub fn status(&self) -> MonitorStatus {
        self.status
    }

    /// Wall time spent in each [`step`].
    pub fn step_times(&self) -> &[Duration] {
        &self.step_times
    }

    /// Feeds a precomputed clamped similarity.
    pub fn observe(&mut self, t_seconds: f64, similarity: f64) -> Result<Decision> {
        if let MonitorStatus::Stopped { index, .. } = self.status {
            return Err(Error::State(format!(
                "monitor already stopped at frame {index}"
            )));
        }
        if let Some(&(last, _)) = self.history.last() {
            if !(t_seconds > last) {
                return invalid(format!("frame time {t_seconds}s does not follow {last}s"));
            }
        }
        self.history.push((t_seconds, similarity));
        Ok(match self.tracker.push(similarity) {
            Some(index) => {
                let t = self.history[index].0;
                self.status = MonitorStatus::Stopped {
                    index,
                    t_seconds: t,
                };
                Decision::Stop {
                    index,
                    t_seconds: t,
                }
            }
            None => Decision::Continue,
        })
    }
}

pub fn start_monitor(
    cis: &EmbeddingModel,
    target: &Image,
    cfg: &MonitorConfig,
) -> Result<MonitorState> {
    let tracker = PeakTracker::new(cfg)?;
    Ok(MonitorState {
        target_embedding: embed(cis, target)?,
        history: Vec::new(),
        tracker,
        status: MonitorStatus::Running,
        step_times: Vec::new(),
    })
}

pub fn step(state: &mut MonitorState, cis: &EmbeddingModel, frame: &Frame) -> Result<Decision> {
    let started = Instant::now();
    if let MonitorStatus::Stopped { index, .. } = state.status {
        return Err(Error::State(format!(
            "monitor already stopped at frame {index}"
        )));
    }
    let sim = f_cul_from_embeddings(&embed(cis, &frame.image)?, &state.target_embedding);
    let d = state.observe(frame.t_seconds, sim)?;
    state.step_times.push(started.elapsed());
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub frame_index: usize,
    pub t_seconds: f64,
    pub raw_similarity: f64,
    pub smoothed: f64,
    pub decision: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub session_id: String,
    /// `(frame index, t_seconds)` of the detected peak.
    pub stop: Option<(usize, f64)>,
    /// Frame at which the stop was declared.
    pub decided_at: Option<usize>,
    pub trace: Vec<TraceRow>,
}

/// Replays a recorded session through [`step`] until it stops or ends.
pub fn run_session_offline(
    cis: &EmbeddingModel,
    session: &CookingSession,
    target: &Image,
    cfg: &MonitorConfig,
) -> Result<MonitorReport> {
    if session.is_empty() {
        return invalid(format!("session {} has no frames", session.id));
    }
    let mut state = start_monitor(cis, target, cfg)?;
    let mut decisions = Vec::new();
    let mut stop = None;
    let mut decided_at = None;
    for (k, frame) in session.frames.iter().enumerate() {
        match step(&mut state, cis, frame)? {
            Decision::Continue => decisions.push("continue"),
            Decision::Stop { index, t_seconds } => {
                decisions.push("stop");
                stop = Some((index, t_seconds));
                decided_at = Some(k);
                break;
            }
        }
    }
    let trace = state
        .history()
        .iter()
        .zip(state.smoothed())
        .zip(decisions)
        .enumerate()
        .map(|(i, ((&(t, raw), &sm), d))| TraceRow {
            frame_index: i,
            t_seconds: t,
            raw_similarity: raw,
            smoothed: sm,
            decision: d.to_string(),
        })
        .collect();
    Ok(MonitorReport {
        session_id: session.id.clone(),
        stop,
        decided_at,
        trace,
    })
}

pub fn write_trace_csv(path: &FsPath, report: &MonitorReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &report.trace {
        w.serialize(row)?;
    }
    if report.trace.is_empty() {
        w.write_record([
            "frame_index",
            "t_seconds",
            "raw_similarity",
            "smoothed",
            "decision",
        ])?;
    }
    w.flush()?;
    Ok(())
}
