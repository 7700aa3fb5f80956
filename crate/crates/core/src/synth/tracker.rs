//! Online toy tracker: frame memory, instance prototypes, mask fusion and
//! IoU association, fed with corrupted ground-truth masks as detections.
//!
//! Per frame `t`:
//!
//! 1. encode the frame, project to keys/values, fit frame prototypes and push
//!    them into the memory bank;
//! 2. read the bank with the current keys and aggregate into `ȳ`;
//! 3. corrupt each visible ground-truth mask into an initial detection and
//!    shuffle the detection order;
//! 4. associate detections to tracks by mask IoU, plus the track's
//!    foreground attention over the detection when instance prototypes are on;
//! 5. fit fg/bg prototypes on `ȳ` (warm-started for matched tracks), apply
//!    the momentum update, compute attention maps and fuse them with the
//!    initial mask inside the enlarged box.
//!
//! Every random draw for frame `t` comes from a stream keyed by `(seed, t)`,
//! so outputs up to `t` never depend on later frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{encode_keys_values, FeatureMap, ProjectionParams};
use crate::gmm::{build_prototypes, EmConfig, EmInit, ValueMode};
use crate::instance::{
    self, extract_fg_bg, fit_instance_protos, instance_attention_maps_with, AttentionMode, Grid, InstanceTrack,
    MaskMap,
};
use crate::numeric::RngStream;
use crate::pcam::{aggregate, reconstruct_all, MemoryBank};

use super::encode::{encode_frame, ENCODED_CHANNELS};
use super::metrics::{evaluate, greedy_match, Metrics, Prediction};
use super::scene::{generate_sequence, SceneConfig, Sequence};

const TAG_FRAME_EM: u64 = 1;
const TAG_DETECT: u64 = 2;
const TAG_INSTANCE_EM: u64 = 3;

/// How initial masks are derived from ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    /// Grow the mask by this many 4-neighbour layers first.
    pub dilation: usize,
    /// Fraction of the (dilated) area peeled off the boundary, in random
    /// order within each layer.
    pub erosion: f64,
    /// Independent per-pixel removal probability, applied last.
    pub dropout: f64,
}

impl Corruption {
    pub const NONE: Corruption = Corruption { dilation: 0, erosion: 0.0, dropout: 0.0 };

    pub fn erosion(fraction: f64) -> Self {
        Corruption { erosion: fraction, ..Corruption::NONE }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.erosion) || !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("corruption fractions must lie in [0, 1]: {self:?}")));
        }
        Ok(())
    }
}

fn neighbours(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = Option<(usize, usize)>> {
    [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)].into_iter().map(move |(dy, dx)| {
        let (ny, nx) = (y as isize + dy, x as isize + dx);
        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w).then_some((ny as usize, nx as usize))
    })
}

/// Applies `c` to `mask` using draws from `rng`.
pub fn corrupt_mask(mask: &MaskMap, c: &Corruption, rng: &mut RngStream) -> Result<MaskMap> {
    c.validate()?;
    let (h, w) = (mask.height(), mask.width());
    let mut v = mask.values().to_vec();
    for _ in 0..c.dilation {
        let prev = v.clone();
        for y in 0..h {
            for x in 0..w {
                if !prev[y * w + x] && neighbours(y, x, h, w).flatten().any(|(ny, nx)| prev[ny * w + nx]) {
                    v[y * w + x] = true;
                }
            }
        }
    }
    let area = v.iter().filter(|&&b| b).count();
    let target = (c.erosion * area as f64).round() as usize;
    let mut removed = 0;
    while removed < target {
        let mut boundary: Vec<usize> = (0..h * w)
            .filter(|&i| v[i] && neighbours(i / w, i % w, h, w).any(|n| n.is_none_or(|(ny, nx)| !v[ny * w + nx])))
            .collect();
        rng.shuffle(&mut boundary);
        for i in boundary {
            if removed == target {
                break;
            }
            v[i] = false;
            removed += 1;
        }
    }
    if c.dropout > 0.0 {
        for b in v.iter_mut() {
            if *b && rng.uniform() < c.dropout {
                *b = false;
            }
        }
    }
    MaskMap::new(h, w, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Association {
    /// Highest score first.
    #[default]
    Greedy,
    /// Maximum total score over all one-to-one assignments.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    pub key_dim: usize,
    pub value_dim: usize,
    pub projection_seed: u64,
    pub frame_protos: usize,
    pub em_iters: usize,
    pub sigma2: f64,
    pub capacity: usize,
    pub use_instance_protos: bool,
    pub instance_protos_pos: usize,
    pub instance_protos_neg: usize,
    pub instance_em_iters: usize,
    pub instance_sigma2: f64,
    pub momentum: f64,
    pub bg_factor: f64,
    pub attention_mode: AttentionMode,
    pub fuse_a: f64,
    pub fuse_b: f64,
    /// Magnitude of the initial mask logits.
    pub initial_logit: f64,
    pub assoc_iou: f64,
    /// Minimum mean foreground attention for an appearance-only match.
    pub assoc_appearance: f64,
    pub appearance_weight: f64,
    pub association: Association,
    pub corruption: Corruption,
    pub seed: u64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            key_dim: 16,
            value_dim: 16,
            projection_seed: 0,
            frame_protos: crate::gmm::DEFAULT_FRAME_PROTOS,
            em_iters: crate::gmm::DEFAULT_EM_ITERS,
            sigma2: crate::gmm::DEFAULT_SIGMA2,
            capacity: crate::pcam::DEFAULT_CAPACITY,
            use_instance_protos: true,
            instance_protos_pos: instance::DEFAULT_INSTANCE_PROTOS,
            instance_protos_neg: instance::DEFAULT_INSTANCE_PROTOS,
            instance_em_iters: crate::gmm::DEFAULT_EM_ITERS,
            instance_sigma2: crate::gmm::DEFAULT_SIGMA2,
            momentum: instance::DEFAULT_MOMENTUM,
            bg_factor: instance::DEFAULT_BG_FACTOR,
            attention_mode: AttentionMode::Joint,
            fuse_a: instance::DEFAULT_FUSE_A,
            fuse_b: instance::DEFAULT_FUSE_B,
            initial_logit: 1.0,
            assoc_iou: 0.3,
            assoc_appearance: 0.5,
            appearance_weight: 1.0,
            association: Association::Greedy,
            corruption: Corruption::erosion(0.2),
            seed: 0,
        }
    }
}

impl TrackerParams {
    /// Defaults with variances scaled for the synthetic scenes, whose encoded
    /// channels live in `[0, 1]`: nearest-prototype distances there are far
    /// below the generic `σ² = 0.5`, which would blur every posterior.
    pub fn synthetic() -> Self {
        TrackerParams { sigma2: 0.02, instance_sigma2: 0.05, ..TrackerParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_dim == 0 || self.value_dim == 0 || self.frame_protos == 0 {
            return Err(Error::invalid("key_dim, value_dim and frame_protos must be positive"));
        }
        if self.instance_protos_pos == 0 || self.instance_protos_neg == 0 {
            return Err(Error::invalid("instance prototype counts must be positive"));
        }
        for (name, v) in [("sigma2", self.sigma2), ("instance_sigma2", self.instance_sigma2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1], got {}", self.momentum)));
        }
        if !(self.bg_factor >= 1.0 && self.bg_factor.is_finite()) {
            return Err(Error::invalid(format!("bg_factor must be >= 1, got {}", self.bg_factor)));
        }
        self.corruption.validate()?;
        MemoryBank::new(self.capacity).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedMask {
    pub track_id: u64,
    pub mask: MaskMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTracks {
    pub frame: u64,
    /// Refined masks, sorted by track id.
    pub tracks: Vec<TrackedMask>,
    /// The initial (corrupted) masks under the same track ids.
    pub initial: Vec<TrackedMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub frames: Vec<FrameTracks>,
    pub metrics: Metrics,
    /// Metrics of the initial masks under the same identities.
    pub initial_metrics: Metrics,
}

impl TrackOutput {
    pub fn predictions(&self) -> Vec<Vec<Prediction<'_>>> {
        self.frames
            .iter()
            .map(|f| f.tracks.iter().map(|t| Prediction { track_id: t.track_id, mask: &t.mask }).collect())
            .collect()
    }

    pub fn initial_predictions(&self) -> Vec<Vec<Prediction<'_>>> {
        self.frames
            .iter()
            .map(|f| f.initial.iter().map(|t| Prediction { track_id: t.track_id, mask: &t.mask }).collect())
            .collect()
    }
}

struct Track {
    id: u64,
    last_mask: MaskMap,
    protos: Option<InstanceTrack>,
}

/// Score and eligibility of every (track, detection) pair.
fn pair_scores(
    tracks: &[Track],
    dets: &[MaskMap],
    feats: &FeatureMap,
    params: &TrackerParams,
) -> Result<Vec<(f64, usize, usize)>> {
    let mut out = Vec::new();
    for (ti, track) in tracks.iter().enumerate() {
        let fg_map = match (&track.protos, params.use_instance_protos) {
            (Some(p), true) => Some(instance_attention_maps_with(feats, &p.fg_protos, &p.bg_protos, params.attention_mode)?.fg_map),
            _ => None,
        };
        for (di, det) in dets.iter().enumerate() {
            let iou = track.last_mask.iou(det);
            let appearance = fg_map.as_ref().map(|g| mean_over(g, det)).unwrap_or(0.0);
            let eligible = iou >= params.assoc_iou || (fg_map.is_some() && appearance >= params.assoc_appearance);
            if eligible {
                out.push((iou + params.appearance_weight * appearance, ti, di));
            }
        }
    }
    Ok(out)
}

fn mean_over(g: &Grid, mask: &MaskMap) -> f64 {
    let (sum, n) = g
        .data
        .iter()
        .zip(mask.values())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Maximum-total-score one-to-one assignment; ties keep the
/// lexicographically first choice per detection.
pub fn exhaustive_match(candidates: &[(f64, usize, usize)]) -> Vec<(usize, usize, f64)> {
    let mut dets: Vec<usize> = candidates.iter().map(|c| c.2).collect();
    dets.sort_unstable();
    dets.dedup();
    fn search(
        k: usize,
        dets: &[usize],
        cands: &[(f64, usize, usize)],
        used: &mut Vec<usize>,
        cur: &mut Vec<(usize, usize, f64)>,
        best: &mut (f64, Vec<(usize, usize, f64)>),
    ) {
        if k == dets.len() {
            let total: f64 = cur.iter().map(|c| c.2).sum();
            if total > best.0 {
                *best = (total, cur.clone());
            }
            return;
        }
        search(k + 1, dets, cands, used, cur, best);
        for &(s, t, d) in cands.iter().filter(|c| c.2 == dets[k]) {
            if !used.contains(&t) {
                used.push(t);
                cur.push((t, d, s));
                search(k + 1, dets, cands, used, cur, best);
                cur.pop();
                used.pop();
            }
        }
    }
    let mut best = (0.0, Vec::new());
    search(0, &dets, candidates, &mut Vec::new(), &mut Vec::new(), &mut best);
    best.1
}

fn em_seed(seed: u64, tag: u64, t: u64, k: u64) -> u64 {
    RngStream::derive(seed ^ tag.rotate_left(40), t.wrapping_mul(1 << 20).wrapping_add(k)).seed()
}

/// Fits current instance prototypes for `mask` on `feats`, propagates them
/// into `prev` if present, and returns the updated track state together
/// with the refined mask.
fn refine(
    feats: &FeatureMap,
    mask: &MaskMap,
    prev: Option<&InstanceTrack>,
    track_id: u64,
    t: u64,
    params: &TrackerParams,
) -> Result<(InstanceTrack, MaskMap)> {
    let (fg_keys, bg_keys) = extract_fg_bg(feats, mask, params.bg_factor)?;
    let seed = em_seed(params.seed, TAG_INSTANCE_EM, t, track_id);
    let cfg = |n: usize, samples: usize| EmConfig {
        n_protos: n.min(samples),
        sigma2: params.instance_sigma2,
        n_iters: params.instance_em_iters,
        init: EmInit::SeededSubsample,
        seed,
    };
    let (fg, bg) = fit_instance_protos(
        &fg_keys,
        &bg_keys,
        &cfg(params.instance_protos_pos, fg_keys.rows()),
        &cfg(params.instance_protos_neg, bg_keys.rows()),
        prev,
    )?;
    let track = match prev {
        Some(p) => instance::propagate(p, &fg, &bg, t)?,
        None => InstanceTrack::new(track_id, fg, bg, params.momentum, t)?,
    };
    let attn = instance_attention_maps_with(feats, &track.fg_protos, &track.bg_protos, params.attention_mode)?;
    let fused = instance::fuse_mask(&Grid::from_mask(mask, params.initial_logit), &attn, params.fuse_a, params.fuse_b)?;
    let region = mask.bbox().ok_or(Error::EmptyInstance)?.scaled(params.bg_factor, mask.height(), mask.width());
    let w = mask.width();
    let values: Vec<bool> = fused.values().iter().enumerate().map(|(i, &v)| v && region.contains(i / w, i % w)).collect();
    let refined = MaskMap::new(mask.height(), w, values)?;
    let refined = if refined.is_empty() { mask.clone() } else { refined };
    Ok((track, refined))
}

/// Runs the tracker over a rendered sequence.
pub fn run_tracker_on(seq: &Sequence, params: &TrackerParams) -> Result<TrackOutput> {
    params.validate()?;
    let proj = ProjectionParams::seeded(ENCODED_CHANNELS, params.key_dim, params.value_dim, params.projection_seed);
    let mut bank = MemoryBank::new(params.capacity)?;
    let mut tracks: Vec<Track> = Vec::new();
    let mut next_id = 1u64;
    let mut frames = Vec::with_capacity(seq.n_frames());
    for (t, (frame, gts)) in seq.frames.iter().zip(&seq.gt_masks).enumerate() {
        let t64 = t as u64;
        let (keys, values) = encode_keys_values(&encode_frame(frame)?, &proj)?;
        let (km, vm) = (keys.to_matrix(), values.to_matrix());
        let em = EmConfig {
            n_protos: params.frame_protos.min(km.rows()),
            sigma2: params.sigma2,
            n_iters: params.em_iters,
            init: EmInit::SeededSubsample,
            seed: em_seed(params.seed, TAG_FRAME_EM, t64, 0),
        };
        let (protos, _) = build_prototypes(&km, &vm, &em, ValueMode::Normalized)?;
        bank.push_frame(protos, t64)?;
        let feats = aggregate(&reconstruct_all(&bank, &keys)?, &values)?.y_bar;

        let mut rng = RngStream::derive(params.seed ^ TAG_DETECT.rotate_left(40), t64);
        let mut dets = Vec::new();
        for gt in gts.iter().filter(|g| !g.is_empty()) {
            let m = corrupt_mask(gt, &params.corruption, &mut rng)?;
            if !m.is_empty() {
                dets.push(m);
            }
        }
        rng.shuffle(&mut dets);

        let cands = pair_scores(&tracks, &dets, &feats, params)?;
        let matches = match params.association {
            Association::Greedy => greedy_match(cands),
            Association::Exhaustive => exhaustive_match(&cands),
        };
        let mut owner: Vec<Option<usize>> = vec![None; dets.len()];
        for (ti, di, _) in matches {
            owner[di] = Some(ti);
        }
        let mut out = FrameTracks { frame: t64, tracks: Vec::new(), initial: Vec::new() };
        for (di, det) in dets.iter().enumerate() {
            let ti = match owner[di] {
                Some(ti) => ti,
                None => {
                    tracks.push(Track { id: next_id, last_mask: det.clone(), protos: None });
                    next_id += 1;
                    tracks.len() - 1
                }
            };
            let track = &mut tracks[ti];
            let refined = if params.use_instance_protos {
                let (state, refined) = refine(&feats, det, track.protos.as_ref(), track.id, t64, params)?;
                track.protos = Some(state);
                refined
            } else {
                det.clone()
            };
            track.last_mask = refined.clone();
            out.tracks.push(TrackedMask { track_id: track.id, mask: refined });
            out.initial.push(TrackedMask { track_id: track.id, mask: det.clone() });
        }
        out.tracks.sort_by_key(|m| m.track_id);
        out.initial.sort_by_key(|m| m.track_id);
        frames.push(out);
    }
    let mut output = TrackOutput { frames, metrics: zero_metrics(), initial_metrics: zero_metrics() };
    output.metrics = evaluate(&output.predictions(), &seq.gt_masks, &seq.gt_ids)?;
    output.initial_metrics = evaluate(&output.initial_predictions(), &seq.gt_masks, &seq.gt_ids)?;
    Ok(output)
}

fn zero_metrics() -> Metrics {
    Metrics { mean_iou: 0.0, id_switches: 0, smotsa: 0.0, matched: 0, false_positives: 0, gt_masks: 0 }
}

/// Renders `config` and tracks it.
pub fn run_tracker(config: &SceneConfig, params: &TrackerParams) -> Result<TrackOutput> {
    run_tracker_on(&generate_sequence(config)?, params)
}
