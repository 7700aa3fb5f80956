//! Analytic operation counts for the three attention mechanisms.
//!
//! FLOP convention: a multiply-accumulate is one multiply plus one add,
//! reported separately; each `exp` is one unit. Divisions (softmax
//! normalization, mean updates, logit temperature) are not part of the
//! multiply count. Memory is the number of simultaneously live elements,
//! not bytes.
//!
//! Per-mechanism formulas, with `P = H·W` pixels per frame:
//!
//! * non-local: `P·(P·T)·(D + C_v)` multiplies, `P·(P·T)` exps; peak is the
//!   `P × P·T` attention matrix plus the raw memory `P·T·(D + C_v)`.
//! * prototypical, per memory frame: EM `2·iters·P·N·D`, value pooling
//!   `P·N·(D + C_v)` (final E-step plus weighted sum), read `P·N·(D + C_v)`;
//!   aggregation `2·P·(T + 1)·C_v` (dot products plus weighted sum). Peak is
//!   the `P × N` assignment plus the bank `T·N·(D + C_v)`.
//! * multi-head self-attention over the whole tube (`L = P·T` tokens):
//!   `3·L·D²` for the Q/K/V projections plus `2·L²·D` for scores and
//!   weighted values (summed over heads); peak `heads·L² + 3·L·D`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Pca,
    Nonlocal,
    Mhsa,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Pca => "pca",
            Mechanism::Nonlocal => "nonlocal",
            Mechanism::Mhsa => "mhsa",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pca" => Ok(Mechanism::Pca),
            "nonlocal" => Ok(Mechanism::Nonlocal),
            "mhsa" => Ok(Mechanism::Mhsa),
            other => Err(Error::invalid(format!("unknown mechanism '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostDims {
    pub h: u64,
    pub w: u64,
    pub t: u64,
    pub d: u64,
    pub c_v: u64,
    pub n: u64,
    pub em_iters: u64,
    pub heads: u64,
}

impl CostDims {
    /// The feature-map configuration used for the mechanism comparison:
    /// 45×80 maps, 64-dim keys and values, 64 prototypes, 6 EM rounds.
    pub fn reference(t: u64) -> Self {
        CostDims {
            h: 45,
            w: 80,
            t,
            d: 64,
            c_v: 64,
            n: 64,
            em_iters: 6,
            heads: 8,
        }
    }

    pub fn pixels(&self) -> u64 {
        self.h * self.w
    }

    fn validate(&self, mech: Mechanism) -> Result<()> {
        let core = [self.h, self.w, self.t, self.d, self.c_v];
        if core.contains(&0) {
            return Err(Error::invalid(format!("{}: dimensions must be positive: {self:?}", mech.name())));
        }
        match mech {
            Mechanism::Pca if self.n == 0 => Err(Error::invalid("pca: n must be positive")),
            Mechanism::Pca if self.n > self.h.saturating_mul(self.w) => Err(Error::invalid(format!(
                "pca: {} prototypes exceed {} pixels per frame",
                self.n,
                self.h.saturating_mul(self.w)
            ))),
            Mechanism::Mhsa if self.heads == 0 => Err(Error::invalid("mhsa: heads must be positive")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub mechanism: Mechanism,
    pub dims: CostDims,
    pub analytic_multiplies: u64,
    pub analytic_adds: u64,
    pub analytic_exps: u64,
    pub measured_multiplies: Option<u64>,
    pub peak_elements: u64,
}

/// Overflow-checked product.
fn prod(context: &'static str, xs: &[u64]) -> Result<u64> {
    xs.iter()
        .try_fold(1u64, |acc, &x| acc.checked_mul(x))
        .ok_or(Error::CountOverflow(context))
}

fn sum(context: &'static str, xs: &[u64]) -> Result<u64> {
    xs.iter()
        .try_fold(0u64, |acc, &x| acc.checked_add(x))
        .ok_or(Error::CountOverflow(context))
}

fn report(mechanism: Mechanism, dims: CostDims, multiplies: u64, exps: u64, peak: u64) -> CostReport {
    CostReport {
        mechanism,
        dims,
        analytic_multiplies: multiplies,
        analytic_adds: multiplies,
        analytic_exps: exps,
        measured_multiplies: None,
        peak_elements: peak,
    }
}

/// Dense attention over every memory position.
pub fn nonlocal_cost(dims: CostDims) -> Result<CostReport> {
    dims.validate(Mechanism::Nonlocal)?;
    let ctx = "nonlocal cost";
    let p = prod(ctx, &[dims.h, dims.w])?;
    let mem = prod(ctx, &[p, dims.t])?;
    let pairs = prod(ctx, &[p, mem])?;
    let width = sum(ctx, &[dims.d, dims.c_v])?;
    let multiplies = prod(ctx, &[pairs, width])?;
    let peak = sum(ctx, &[pairs, prod(ctx, &[mem, width])?])?;
    Ok(report(Mechanism::Nonlocal, dims, multiplies, pairs, peak))
}

/// Matmul part of [`nonlocal_cost`]: `P·(P·T)·(D + C_v)`.
pub fn nonlocal_matmul_multiplies(dims: CostDims) -> Result<u64> {
    Ok(nonlocal_cost(dims)?.analytic_multiplies)
}

/// Prototypical attention: per-frame EM, value pooling and read over `T`
/// memory frames, plus temporal aggregation.
pub fn pca_cost(dims: CostDims) -> Result<CostReport> {
    dims.validate(Mechanism::Pca)?;
    let ctx = "pca cost";
    let p = prod(ctx, &[dims.h, dims.w])?;
    let pn = prod(ctx, &[p, dims.n])?;
    let width = sum(ctx, &[dims.d, dims.c_v])?;
    let em = prod(ctx, &[2, dims.em_iters, pn, dims.d])?;
    let pool = prod(ctx, &[pn, width])?;
    let read = pool;
    let per_frame = sum(ctx, &[em, pool, read])?;
    let slots = dims.t.checked_add(1).ok_or(Error::CountOverflow(ctx))?;
    let agg = prod(ctx, &[2, p, slots, dims.c_v])?;
    let multiplies = sum(ctx, &[prod(ctx, &[dims.t, per_frame])?, agg])?;

    let exps_per_frame = prod(ctx, &[pn, sum(ctx, &[dims.em_iters, 2])?])?;
    let exps = sum(ctx, &[prod(ctx, &[dims.t, exps_per_frame])?, prod(ctx, &[p, slots])?])?;

    let bank = prod(ctx, &[dims.t, dims.n, width])?;
    let peak = sum(ctx, &[pn, bank])?;
    Ok(report(Mechanism::Pca, dims, multiplies, exps, peak))
}

/// Multi-head self-attention over all `H·W·T` tokens of the tube.
pub fn mhsa_cost(dims: CostDims) -> Result<CostReport> {
    dims.validate(Mechanism::Mhsa)?;
    let ctx = "mhsa cost";
    let l = prod(ctx, &[dims.h, dims.w, dims.t])?;
    let proj = prod(ctx, &[3, l, dims.d, dims.d])?;
    let ll = prod(ctx, &[l, l])?;
    let attn = prod(ctx, &[2, ll, dims.d])?;
    let multiplies = sum(ctx, &[proj, attn])?;
    let exps = prod(ctx, &[dims.heads, ll])?;
    let peak = sum(ctx, &[exps, prod(ctx, &[3, l, dims.d])?])?;
    Ok(report(Mechanism::Mhsa, dims, multiplies, exps, peak))
}

pub fn cost(mechanism: Mechanism, dims: CostDims) -> Result<CostReport> {
    match mechanism {
        Mechanism::Pca => pca_cost(dims),
        Mechanism::Nonlocal => nonlocal_cost(dims),
        Mechanism::Mhsa => mhsa_cost(dims),
    }
}
