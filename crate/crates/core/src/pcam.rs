//! Frame-level prototypical cross-attention.
//!
//! Each past frame is condensed to a [`PrototypeSet`] and stored in a
//! [`MemoryBank`]. The current frame's keys read every stored frame through
//! its prototypes ([`reconstruct_all`]), and the per-frame reconstructions are
//! fused with the current value map by similarity-weighted averaging
//! ([`aggregate`]).

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, Matrix};
use crate::gmm::PrototypeSet;
use crate::kernels;

pub const DEFAULT_CAPACITY: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryFrame {
    pub index: u64,
    pub protos: PrototypeSet,
}

/// FIFO store of per-frame prototype sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    frames: VecDeque<MemoryFrame>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("memory capacity must be at least 1"));
        }
        Ok(MemoryBank {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = &MemoryFrame> {
        self.frames.iter()
    }

    pub fn indices(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.index).collect()
    }

    pub fn key_dim(&self) -> Option<usize> {
        self.frames.front().map(|f| f.protos.key_dim())
    }

    pub fn value_dim(&self) -> Option<usize> {
        self.frames.front().map(|f| f.protos.value_dim())
    }

    /// Appends a frame, evicting the oldest one when full.
    pub fn push_frame(&mut self, protos: PrototypeSet, index: u64) -> Result<()> {
        if let Some(last) = self.frames.back() {
            if index <= last.index {
                return Err(Error::NonMonotonicIndex {
                    index,
                    last: last.index,
                });
            }
            Error::check_dim("bank key dimension", last.protos.key_dim(), protos.key_dim())?;
            Error::check_dim("bank value dimension", last.protos.value_dim(), protos.value_dim())?;
        }
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(MemoryFrame { index, protos });
        Ok(())
    }
}

/// Projection of one memory frame onto the current frame's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedFrame {
    pub y: FeatureMap,
    pub source_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationResult {
    pub y_bar: FeatureMap,
    /// `pixels × (frames + 1)`: one column per reconstruction in input order,
    /// last column for the current frame.
    pub weights: Matrix,
}

impl AggregationResult {
    pub fn current_weight(&self, pixel: usize) -> f64 {
        self.weights.get(pixel, self.weights.cols() - 1)
    }
}

/// Reads `protos` at every pixel of `query_keys`.
pub fn attend(query_keys: &FeatureMap, protos: &PrototypeSet) -> Result<FeatureMap> {
    Error::check_dim("query key channels", protos.key_dim(), query_keys.channels())?;
    let y = kernels::attend(
        query_keys.data(),
        protos.key_dim(),
        protos.key_means().as_slice(),
        protos.n_protos(),
        protos.value_protos().as_slice(),
        protos.value_dim(),
        protos.sigma2(),
    );
    FeatureMap::new(query_keys.height(), query_keys.width(), protos.value_dim(), y)
}

/// One [`attend`] per stored frame, oldest first. An empty bank yields an
/// empty list.
pub fn reconstruct_all(bank: &MemoryBank, query_keys: &FeatureMap) -> Result<Vec<ReconstructedFrame>> {
    bank.frames()
        .map(|f| {
            Ok(ReconstructedFrame {
                y: attend(query_keys, &f.protos)?,
                source_index: f.index,
            })
        })
        .collect()
}

/// Fuses reconstructions with the current value map. Weights are a softmax
/// over the dot products of the current value pixel with each reconstruction
/// pixel and with itself.
pub fn aggregate(reconstructions: &[ReconstructedFrame], current_values: &FeatureMap) -> Result<AggregationResult> {
    for r in reconstructions {
        if !r.y.same_grid(current_values) {
            return Err(Error::invalid(format!(
                "reconstruction of frame {} is {}x{}, current frame is {}x{}",
                r.source_index,
                r.y.height(),
                r.y.width(),
                current_values.height(),
                current_values.width()
            )));
        }
        Error::check_dim("reconstruction channels", current_values.channels(), r.y.channels())?;
    }
    let recons: Vec<&[f64]> = reconstructions.iter().map(|r| r.y.data()).collect();
    let cv = current_values.channels();
    let (ybar, w) = kernels::aggregate(&recons, current_values.data(), cv);
    Ok(AggregationResult {
        y_bar: FeatureMap::new(current_values.height(), current_values.width(), cv, ybar)?,
        weights: Matrix::new(current_values.n_pixels(), recons.len() + 1, w)?,
    })
}

/// Inputs for one pyramid level.
#[derive(Debug, Clone, Copy)]
pub struct LevelInput<'a> {
    pub query_keys: &'a FeatureMap,
    pub current_values: &'a FeatureMap,
    pub bank: &'a MemoryBank,
}

/// Runs read + aggregation independently on every level; levels never mix.
pub fn multi_level_aggregate<K: Ord + Clone + std::fmt::Debug>(
    levels: &BTreeMap<K, LevelInput<'_>>,
) -> Result<BTreeMap<K, AggregationResult>> {
    if levels.is_empty() {
        return Err(Error::EmptyInput("pyramid levels"));
    }
    let mut out = BTreeMap::new();
    for (level, input) in levels {
        if !input.query_keys.same_grid(input.current_values) {
            return Err(Error::invalid(format!(
                "level {level:?}: key and value maps have different grids"
            )));
        }
        if let Some(d) = input.bank.key_dim() {
            if d != input.query_keys.channels() {
                return Err(Error::invalid(format!(
                    "level {level:?}: bank key dim {d} != query key channels {}",
                    input.query_keys.channels()
                )));
            }
        }
        if let Some(cv) = input.bank.value_dim() {
            if cv != input.current_values.channels() {
                return Err(Error::invalid(format!(
                    "level {level:?}: bank value dim {cv} != value channels {}",
                    input.current_values.channels()
                )));
            }
        }
        let recons = reconstruct_all(input.bank, input.query_keys)?;
        out.insert(level.clone(), aggregate(&recons, input.current_values)?);
    }
    Ok(out)
}
