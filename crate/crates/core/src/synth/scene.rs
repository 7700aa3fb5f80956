//! Moving coloured shapes on a flat background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::instance::MaskMap;
use crate::numeric::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Disk { radius: f64 },
    Rectangle { half_height: f64, half_width: f64 },
}

impl Shape {
    /// Half extents `(y, x)` of the shape's bounding box.
    fn half_extent(&self) -> (f64, f64) {
        match *self {
            Shape::Disk { radius } => (radius, radius),
            Shape::Rectangle { half_height, half_width } => (half_height, half_width),
        }
    }

    fn covers(&self, dy: f64, dx: f64) -> bool {
        match *self {
            Shape::Disk { radius } => dy * dy + dx * dx <= radius * radius,
            Shape::Rectangle { half_height, half_width } => dy.abs() <= half_height && dx.abs() <= half_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: [f64; 3],
    /// Centre `(y, x)` at frame 0, in pixel units.
    pub start: [f64; 2],
    /// Pixels per frame, `(dy, dx)`.
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub background: [f64; 3],
    /// Objects in painting order; later objects occlude earlier ones.
    pub objects: Vec<ObjectSpec>,
    pub noise_sigma: f64,
    /// When false, any frame in which two footprints overlap is an error.
    pub occlusion: bool,
    pub seed: u64,
}

/// A rendered sequence with exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// RGB frames.
    pub frames: Vec<FeatureMap>,
    /// Visible mask of every object in every frame, `[frame][object]`.
    pub gt_masks: Vec<Vec<MaskMap>>,
    /// Unoccluded footprint of every object, `[frame][object]`.
    pub footprints: Vec<Vec<MaskMap>>,
    pub gt_ids: Vec<u64>,
}

impl Sequence {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Folds `x` into `[lo, hi]` as if bouncing between the two walls.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let period = 2.0 * span;
    let r = (x - lo).rem_euclid(period);
    if r <= span {
        lo + r
    } else {
        lo + period - r
    }
}

fn centre_at(obj: &ObjectSpec, height: usize, width: usize, t: usize) -> [f64; 2] {
    let (hy, hx) = obj.shape.half_extent();
    let t = t as f64;
    [
        reflect(obj.start[0] + obj.velocity[0] * t, hy, height as f64 - 1.0 - hy),
        reflect(obj.start[1] + obj.velocity[1] * t, hx, width as f64 - 1.0 - hx),
    ]
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("scene dimensions must be positive"));
        }
        if self.n_frames == 0 {
            return Err(Error::invalid("n_frames must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let (hy, hx) = obj.shape.half_extent();
            if !(hy >= 0.0 && hx >= 0.0) || 2.0 * hy > self.height as f64 - 1.0 || 2.0 * hx > self.width as f64 - 1.0 {
                return Err(Error::invalid(format!("object {i} is larger than the frame")));
            }
            let [cy, cx] = obj.start;
            if cy - hy < 0.0 || cy + hy > self.height as f64 - 1.0 || cx - hx < 0.0 || cx + hx > self.width as f64 - 1.0 {
                return Err(Error::invalid(format!("object {i} does not fit in the frame at t=0")));
            }
            let finite = obj.color.iter().chain(&obj.start).chain(&obj.velocity).all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite("object parameters"));
            }
        }
        Ok(())
    }

    /// Two disks entering from opposite sides whose paths cross mid-sequence.
    /// Colours, radii and the exact paths are drawn from `seed`.
    pub fn crossing_pair(seed: u64, size: usize, n_frames: usize, noise_sigma: f64) -> SceneConfig {
        let mut rng = RngStream::derive(seed, 0x0005_CE9E);
        let s = size as f64;
        let radius = rng.uniform_range(0.14, 0.2) * s;
        let background = [rng.uniform_range(0.0, 0.2), rng.uniform_range(0.0, 0.2), rng.uniform_range(0.0, 0.2)];
        // two saturated hues a fixed distance apart on the colour wheel
        let hue = rng.uniform();
        let colors = [hue_to_rgb(hue), hue_to_rgb(hue + rng.uniform_range(0.3, 0.7))];
        let margin = radius + 1.0;
        let travel = s - 1.0 - 2.0 * margin;
        let speed = travel / (n_frames.max(2) - 1) as f64;
        let mid = (s - 1.0) / 2.0;
        let mut objects = Vec::with_capacity(2);
        for (k, color) in colors.into_iter().enumerate() {
            let dir = if k == 0 { 1.0 } else { -1.0 };
            let y0 = mid + rng.uniform_range(-0.08, 0.08) * s;
            let y0 = y0.clamp(radius, s - 1.0 - radius);
            let x0 = if k == 0 { margin } else { s - 1.0 - margin };
            let dy = rng.uniform_range(-0.05, 0.05) * speed;
            objects.push(ObjectSpec {
                shape: Shape::Disk { radius },
                color,
                start: [y0, x0],
                velocity: [dy, dir * speed],
            });
        }
        SceneConfig {
            height: size,
            width: size,
            n_frames,
            background,
            objects,
            noise_sigma,
            occlusion: true,
            seed,
        }
    }
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.1 + 0.8 * r, 0.1 + 0.8 * g, 0.1 + 0.8 * b]
}

/// Renders frame `t` of `config`: `(rgb, visible masks, footprints)`.
pub fn render_frame(config: &SceneConfig, t: usize) -> Result<(FeatureMap, Vec<MaskMap>, Vec<MaskMap>)> {
    let (h, w) = (config.height, config.width);
    let footprints: Vec<MaskMap> = config
        .objects
        .iter()
        .map(|obj| {
            let [cy, cx] = centre_at(obj, h, w, t);
            MaskMap::from_fn(h, w, |y, x| obj.shape.covers(y as f64 - cy, x as f64 - cx))
        })
        .collect();
    if !config.occlusion {
        for a in 0..footprints.len() {
            for b in a + 1..footprints.len() {
                if footprints[a].intersection(&footprints[b]) > 0 {
                    return Err(Error::invalid(format!(
                        "objects {a} and {b} overlap at frame {t} with occlusion disabled"
                    )));
                }
            }
        }
    }
    // owner[i] = index of the topmost object covering pixel i
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (k, fp) in footprints.iter().enumerate() {
        for (i, &v) in fp.values().iter().enumerate() {
            if v {
                owner[i] = Some(k);
            }
        }
    }
    let visible: Vec<MaskMap> = (0..footprints.len())
        .map(|k| MaskMap::new(h, w, owner.iter().map(|&o| o == Some(k)).collect()))
        .collect::<Result<_>>()?;
    let mut rng = RngStream::derive(config.seed, t as u64);
    let mut data = Vec::with_capacity(h * w * 3);
    for o in &owner {
        let color = match o {
            Some(k) => config.objects[*k].color,
            None => config.background,
        };
        for c in color {
            let noise = if config.noise_sigma > 0.0 { config.noise_sigma * rng.normal() } else { 0.0 };
            data.push(c + noise);
        }
    }
    Ok((FeatureMap::new(h, w, 3, data)?, visible, footprints))
}

/// Renders every frame. Frame `t` depends only on `config` and `t`, so a
/// shorter sequence is a prefix of a longer one.
pub fn generate_sequence(config: &SceneConfig) -> Result<Sequence> {
    config.validate()?;
    let mut seq = Sequence {
        frames: Vec::with_capacity(config.n_frames),
        gt_masks: Vec::with_capacity(config.n_frames),
        footprints: Vec::with_capacity(config.n_frames),
        gt_ids: (0..config.objects.len() as u64).collect(),
    };
    for t in 0..config.n_frames {
        let (frame, visible, footprints) = render_frame(config, t)?;
        seq.frames.push(frame);
        seq.gt_masks.push(visible);
        seq.footprints.push(footprints);
    }
    Ok(seq)
}
