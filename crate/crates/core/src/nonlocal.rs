//! Dense space-time attention: every query pixel attends to every memory
//! position. Quadratic in pixel count; kept as the reference the prototype
//! read is checked against.

use serde::{Deserialize, Serialize};

use crate::cost::{self, CostDims, CostReport};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::kernels::{self, Similarity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// Logit `q · k`.
    Dot,
    /// Logit `-‖q - k‖² / 2σ²`.
    Gaussian { sigma2: f64 },
}

impl KernelSpec {
    fn similarity(self) -> Result<Similarity> {
        match self {
            KernelSpec::Dot => Ok(Similarity::Dot),
            KernelSpec::Gaussian { sigma2 } if sigma2 > 0.0 && sigma2.is_finite() => {
                Ok(Similarity::Gaussian { sigma2 })
            }
            KernelSpec::Gaussian { sigma2 } => {
                Err(Error::invalid(format!("gaussian kernel needs sigma2 > 0, got {sigma2}")))
            }
        }
    }
}

/// Softmax-weighted sum of all memory values for every query pixel.
pub fn nonlocal_attend(
    query_keys: &FeatureMap,
    memory_keys: &[FeatureMap],
    memory_values: &[FeatureMap],
    kernel: KernelSpec,
) -> Result<FeatureMap> {
    let similarity = kernel.similarity()?;
    if memory_keys.is_empty() {
        return Err(Error::EmptyInput("memory frames"));
    }
    Error::check_dim("memory value frames", memory_keys.len(), memory_values.len())?;
    let d = query_keys.channels();
    let cv = memory_values[0].channels();
    for (k, v) in memory_keys.iter().zip(memory_values) {
        if !k.same_grid(&memory_keys[0]) || !v.same_grid(k) {
            return Err(Error::invalid("memory frames must share one grid"));
        }
        Error::check_dim("memory key channels", d, k.channels())?;
        Error::check_dim("memory value channels", cv, v.channels())?;
    }
    let keys: Vec<f64> = memory_keys.iter().flat_map(|k| k.data().iter().copied()).collect();
    let values: Vec<f64> = memory_values.iter().flat_map(|v| v.data().iter().copied()).collect();
    let y = kernels::nonlocal(query_keys.data(), d, &keys, &values, cv, similarity);
    FeatureMap::new(query_keys.height(), query_keys.width(), cv, y)
}

/// Analytic cost of [`nonlocal_attend`] for an `H×W` query over `T` memory
/// frames of the same size.
pub fn nonlocal_cost(h: u64, w: u64, t: u64, d: u64, c_v: u64) -> Result<CostReport> {
    cost::nonlocal_cost(CostDims {
        h,
        w,
        t,
        d,
        c_v,
        n: 0,
        em_iters: 0,
        heads: 0,
    })
}
