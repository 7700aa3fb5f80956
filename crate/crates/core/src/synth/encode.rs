//! Handcrafted per-pixel features standing in for a learned backbone.

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

pub const ENCODED_CHANNELS: usize = 8;

/// `[r, g, b, x / (W-1), y / (H-1), 3×3 mean of r, g, b]`. The local mean
/// averages over the in-bounds part of the window.
pub fn encode_frame(frame: &FeatureMap) -> Result<FeatureMap> {
    Error::check_dim("frame channels", 3, frame.channels())?;
    let (h, w) = (frame.height(), frame.width());
    let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
    let mut data = Vec::with_capacity(h * w * ENCODED_CHANNELS);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(frame.pixel(y, x));
            data.push(norm(x, w));
            data.push(norm(y, h));
            let mut sum = [0.0; 3];
            let mut count = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    for (s, v) in sum.iter_mut().zip(frame.pixel(yy, xx)) {
                        *s += v;
                    }
                    count += 1.0;
                }
            }
            data.extend(sum.iter().map(|s| s / count));
        }
    }
    FeatureMap::new(h, w, ENCODED_CHANNELS, data)
}
