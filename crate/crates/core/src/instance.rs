//! Instance-level prototypes: contrastive foreground/background mixtures per
//! tracked object, their attention maps, momentum propagation across frames
//! and a fixed two-parameter mask fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, Matrix};
use crate::gmm::{self, EmConfig, EmInit, PrototypeSet};
use crate::kernels;

pub const DEFAULT_INSTANCE_PROTOS: usize = 30;
pub const DEFAULT_MOMENTUM: f64 = 0.2;
pub const DEFAULT_BG_FACTOR: f64 = 2.0;
pub const DEFAULT_FUSE_A: f64 = 1.0;
pub const DEFAULT_FUSE_B: f64 = 2.0;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Box scaled by `factor` about its centre, clamped to a `height × width`
    /// image.
    pub fn scaled(&self, factor: f64, height: usize, width: usize) -> BoundingBox {
        let axis = |lo: usize, hi: usize, limit: usize| {
            let centre = (lo + hi) as f64 / 2.0;
            let half = (hi - lo) as f64 / 2.0 * factor;
            let a = (centre - half).floor().max(0.0) as usize;
            let b = ((centre + half).ceil() as usize).min(limit);
            (a, b)
        };
        let (x0, x1) = axis(self.x0, self.x1, width);
        let (y0, y1) = axis(self.y0, self.y1, height);
        BoundingBox { x0, y0, x1, y1 }
    }
}

/// Binary object mask with its tight bounding box.
///
/// Serializes as `{height, width, runs}` where `runs` alternates background
/// and foreground run lengths in row-major order, starting with background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "MaskRuns", try_from = "MaskRuns")]
pub struct MaskMap {
    height: usize,
    width: usize,
    values: Vec<bool>,
    bbox: Option<BoundingBox>,
}

impl MaskMap {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        Error::check_dim("mask size", height * width, values.len())?;
        let mut bbox: Option<BoundingBox> = None;
        for y in 0..height {
            for x in 0..width {
                if values[y * width + x] {
                    bbox = Some(match bbox {
                        None => BoundingBox { x0: x, y0: y, x1: x + 1, y1: y + 1 },
                        Some(b) => BoundingBox {
                            x0: b.x0.min(x),
                            y0: b.y0.min(y),
                            x1: b.x1.max(x + 1),
                            y1: b.y1.max(y + 1),
                        },
                    });
                }
            }
        }
        Ok(MaskMap { height, width, values, bbox })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        MaskMap { height, width, values: vec![false; height * width], bbox: None }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        MaskMap::new(height, width, values).expect("sized by construction")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        self.bbox
    }

    pub fn area(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bbox.is_none()
    }

    pub fn intersection(&self, other: &MaskMap) -> usize {
        self.values.iter().zip(&other.values).filter(|(a, b)| **a && **b).count()
    }

    /// Intersection over union; two empty masks score 0.
    pub fn iou(&self, other: &MaskMap) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn and_not(&self, other: &MaskMap) -> MaskMap {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a && !*b).collect();
        MaskMap::new(self.height, self.width, values).expect("same size")
    }
}

#[derive(Serialize, Deserialize)]
struct MaskRuns {
    height: usize,
    width: usize,
    runs: Vec<usize>,
}

impl From<MaskMap> for MaskRuns {
    fn from(m: MaskMap) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &v in &m.values {
            if v != current {
                runs.push(len);
                current = v;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        MaskRuns { height: m.height, width: m.width, runs }
    }
}

impl TryFrom<MaskRuns> for MaskMap {
    type Error = Error;
    fn try_from(r: MaskRuns) -> Result<Self> {
        let mut values = Vec::with_capacity(r.height * r.width);
        for (i, &len) in r.runs.iter().enumerate() {
            values.extend(std::iter::repeat_n(i % 2 == 1, len));
        }
        MaskMap::new(r.height, r.width, values)
    }
}

/// Real-valued `height × width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_dim("grid size", height * width, data.len())?;
        Ok(Grid { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Grid { height, width, data: vec![v; height * width] }
    }

    /// `+logit` on the mask, `-logit` elsewhere.
    pub fn from_mask(mask: &MaskMap, logit: f64) -> Self {
        Grid {
            height: mask.height(),
            width: mask.width(),
            data: mask.values().iter().map(|&v| if v { logit } else { -logit }).collect(),
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel foreground/background attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPair {
    pub fg_map: Grid,
    pub bg_map: Grid,
}

/// How foreground and background responses are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// One softmax over the concatenated fg+bg prototypes; maps partition 1.
    #[default]
    Joint,
    /// Each map is the strongest unnormalized kernel response within its own
    /// set, `max_j exp(-‖k - μ_j‖² / 2σ²)`.
    Separate,
}

/// Accumulated appearance prototypes of one tracked object.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTrack {
    pub track_id: u64,
    pub fg_protos: PrototypeSet,
    pub bg_protos: PrototypeSet,
    momentum: f64,
    pub last_seen: u64,
}

fn check_momentum(momentum: f64) -> Result<()> {
    if (0.0..=1.0).contains(&momentum) {
        Ok(())
    } else {
        Err(Error::invalid(format!("momentum must lie in [0, 1], got {momentum}")))
    }
}

impl InstanceTrack {
    pub fn new(
        track_id: u64,
        fg_protos: PrototypeSet,
        bg_protos: PrototypeSet,
        momentum: f64,
        last_seen: u64,
    ) -> Result<Self> {
        check_momentum(momentum)?;
        Error::check_dim("fg/bg key dimension", fg_protos.key_dim(), bg_protos.key_dim())?;
        Ok(InstanceTrack { track_id, fg_protos, bg_protos, momentum, last_seen })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn set_momentum(&mut self, momentum: f64) -> Result<()> {
        check_momentum(momentum)?;
        self.momentum = momentum;
        Ok(())
    }
}

/// Foreground keys under the mask and background keys from the mask's box
/// scaled by `bg_factor`, minus the mask. Falls back to the whole frame minus
/// the mask when the scaled box has no background pixels.
pub fn extract_fg_bg(keys: &FeatureMap, mask: &MaskMap, bg_factor: f64) -> Result<(Matrix, Matrix)> {
    Error::check_dim("mask height", keys.height(), mask.height())?;
    Error::check_dim("mask width", keys.width(), mask.width())?;
    if !(bg_factor >= 1.0 && bg_factor.is_finite()) {
        return Err(Error::invalid(format!("bg_factor must be >= 1, got {bg_factor}")));
    }
    let bbox = mask.bbox().ok_or(Error::EmptyInstance)?;
    let region = bbox.scaled(bg_factor, mask.height(), mask.width());
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut outside = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let i = y * mask.width() + x;
            if mask.get(y, x) {
                fg.push(i);
            } else if region.contains(y, x) {
                bg.push(i);
            } else {
                outside.push(i);
            }
        }
    }
    if bg.is_empty() {
        bg = outside;
    }
    if bg.is_empty() {
        return Err(Error::EmptyBackground);
    }
    let all = keys.to_matrix();
    Ok((all.select_rows(&fg), all.select_rows(&bg)))
}

fn fit_side(keys: &Matrix, config: &EmConfig, warm: Option<&PrototypeSet>) -> Result<PrototypeSet> {
    let mut cfg = config.clone();
    if let Some(w) = warm {
        cfg.n_protos = w.n_protos();
        cfg.init = EmInit::WarmStart(w.key_means().clone());
    } else if cfg.n_protos > keys.rows() {
        return Err(Error::invalid(format!(
            "{} instance prototypes requested from {} samples",
            cfg.n_protos,
            keys.rows()
        )));
    }
    let fit = gmm::fit_gmm(keys, &cfg)?;
    let values = fit.key_means.clone();
    PrototypeSet::new(fit.key_means, values, cfg.sigma2)
}

/// Fits foreground and background mixtures independently. With a warm-start
/// track, EM starts from the track's accumulated means so component `j` keeps
/// its identity across frames.
///
/// Instance prototypes carry their key means as value prototypes.
pub fn fit_instance_protos(
    fg_keys: &Matrix,
    bg_keys: &Matrix,
    config_pos: &EmConfig,
    config_neg: &EmConfig,
    warm_start: Option<&InstanceTrack>,
) -> Result<(PrototypeSet, PrototypeSet)> {
    let fg = fit_side(fg_keys, config_pos, warm_start.map(|t| &t.fg_protos))?;
    let bg = fit_side(bg_keys, config_neg, warm_start.map(|t| &t.bg_protos))?;
    Ok((fg, bg))
}

pub fn instance_attention_maps(keys: &FeatureMap, fg: &PrototypeSet, bg: &PrototypeSet) -> Result<AttentionPair> {
    instance_attention_maps_with(keys, fg, bg, AttentionMode::Joint)
}

pub fn instance_attention_maps_with(
    keys: &FeatureMap,
    fg: &PrototypeSet,
    bg: &PrototypeSet,
    mode: AttentionMode,
) -> Result<AttentionPair> {
    let d = keys.channels();
    Error::check_dim("foreground key dimension", d, fg.key_dim())?;
    Error::check_dim("background key dimension", d, bg.key_dim())?;
    let (h, w) = (keys.height(), keys.width());
    let pixels = keys.n_pixels();
    match mode {
        AttentionMode::Joint => {
            if fg.sigma2() != bg.sigma2() {
                return Err(Error::invalid(format!(
                    "joint attention needs a shared sigma2, got {} and {}",
                    fg.sigma2(),
                    bg.sigma2()
                )));
            }
            let (np, nn) = (fg.n_protos(), bg.n_protos());
            let mut means = fg.key_means().as_slice().to_vec();
            means.extend_from_slice(bg.key_means().as_slice());
            let mut post = vec![0.0; pixels * (np + nn)];
            kernels::posterior_rows(keys.data(), d, &means, np + nn, fg.sigma2(), &mut post);
            let mut fg_map = Vec::with_capacity(pixels);
            let mut bg_map = Vec::with_capacity(pixels);
            for row in post.chunks_exact(np + nn) {
                let f = crate::scalar::compensated_sum(row[..np].iter().copied());
                let b = crate::scalar::compensated_sum(row[np..].iter().copied());
                fg_map.push(f.clamp(0.0, 1.0));
                bg_map.push(b.clamp(0.0, 1.0));
            }
            Ok(AttentionPair { fg_map: Grid::new(h, w, fg_map)?, bg_map: Grid::new(h, w, bg_map)? })
        }
        AttentionMode::Separate => {
            let response = |set: &PrototypeSet| -> Vec<f64> {
                (0..pixels)
                    .map(|i| {
                        let k = keys.pixel_at(i);
                        (0..set.n_protos())
                            .map(|j| kernels::sq_dist(k, set.key_means().row(j)))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .map(|dmin| (-dmin / (2.0 * set.sigma2())).exp())
                    .collect()
            };
            Ok(AttentionPair {
                fg_map: Grid::new(h, w, response(fg))?,
                bg_map: Grid::new(h, w, response(bg))?,
            })
        }
    }
}

fn blend(prev: &Matrix, cur: &Matrix, lambda: f64) -> Result<Matrix> {
    Error::check_dim("propagated prototype count", prev.rows(), cur.rows())?;
    Error::check_dim("propagated prototype width", prev.cols(), cur.cols())?;
    let data = prev
        .as_slice()
        .iter()
        .zip(cur.as_slice())
        .map(|(p, c)| (1.0 - lambda) * p + lambda * c)
        .collect();
    Matrix::new(prev.rows(), prev.cols(), data)
}

fn blend_set(prev: &PrototypeSet, cur: &PrototypeSet, lambda: f64) -> Result<PrototypeSet> {
    PrototypeSet::new(
        blend(prev.key_means(), cur.key_means(), lambda)?,
        blend(prev.value_protos(), cur.value_protos(), lambda)?,
        prev.sigma2(),
    )
}

/// Momentum update `k̄ ← (1 - λ)·k̄ + λ·k` of both prototype sets (keys and
/// values), marking the track as seen at `frame`.
pub fn propagate(
    track: &InstanceTrack,
    current_fg: &PrototypeSet,
    current_bg: &PrototypeSet,
    frame: u64,
) -> Result<InstanceTrack> {
    let lambda = track.momentum;
    check_momentum(lambda)?;
    Ok(InstanceTrack {
        track_id: track.track_id,
        fg_protos: blend_set(&track.fg_protos, current_fg, lambda)?,
        bg_protos: blend_set(&track.bg_protos, current_bg, lambda)?,
        momentum: lambda,
        last_seen: frame.max(track.last_seen),
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Refined mask `sigmoid(a·initial + b·(fg - bg)) ≥ 0.5`.
pub fn fuse_mask(initial_logits: &Grid, attn: &AttentionPair, a: f64, b: f64) -> Result<MaskMap> {
    for g in [&attn.fg_map, &attn.bg_map] {
        Error::check_dim("attention height", initial_logits.height, g.height)?;
        Error::check_dim("attention width", initial_logits.width, g.width)?;
    }
    let values = initial_logits
        .data
        .iter()
        .zip(attn.fg_map.data.iter().zip(&attn.bg_map.data))
        .map(|(&l, (&f, &g))| sigmoid(a * l + b * (f - g)) >= 0.5)
        .collect();
    MaskMap::new(initial_logits.height, initial_logits.width, values)
}
