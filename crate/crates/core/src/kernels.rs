//! Scalar-generic attention and EM kernels on flat row-major buffers.
//!
//! These are the only places where the arithmetic of the library happens; the
//! typed APIs in [`crate::gmm`], [`crate::pcam`] and [`crate::nonlocal`]
//! validate shapes and then call in here. Running them on
//! [`crate::scalar::Counted`] gives the measured operation counts used by the
//! cost benchmark.
//!
//! Short inner sums (dimension-length dot products, per-pixel reads) are
//! plain; long reductions over keys or memory positions are compensated.
//!
//! No bounds or shape checks beyond debug assertions.

use crate::scalar::{CompensatedSum, Scalar};

/// Column mass below which a prototype counts as empty in the M-step.
pub const MIN_MASS: f64 = 1e-12;

#[inline]
pub fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        let diff = x - y;
        acc = acc + diff * diff;
    }
    acc
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Softmax in place. Returns `(max, Σ exp(x - max))` so callers can recover
/// the log normalizer.
pub fn softmax_in_place<S: Scalar>(xs: &mut [S]) -> (S, S) {
    let mut max = xs[0];
    for &x in xs.iter().skip(1) {
        if x > max {
            max = x;
        }
    }
    let mut total = CompensatedSum::new();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total.add(*x);
    }
    let total = total.value();
    for x in xs.iter_mut() {
        *x = *x / total;
    }
    (max, total)
}

/// Gaussian-kernel logits `-‖k - μ_j‖² / 2σ²` of one key against all means.
#[inline]
fn distance_logits<S: Scalar>(key: &[S], means: &[S], d: usize, two_sigma2: S, out: &mut [S]) {
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = -(sq_dist(key, &means[j * d..(j + 1) * d]) / two_sigma2);
    }
}

/// E-step. Writes the `m × n` posterior matrix into `out` and returns the
/// per-row log normalizers `log Σ_j exp(logit_ij)`.
pub fn posterior_rows<S: Scalar>(
    keys: &[S],
    d: usize,
    means: &[S],
    n: usize,
    sigma2: f64,
    out: &mut [S],
) -> Vec<f64> {
    let m = keys.len() / d;
    debug_assert_eq!(out.len(), m * n);
    let two_sigma2 = S::from_f64(2.0 * sigma2);
    let mut log_norm = Vec::with_capacity(m);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        distance_logits(&keys[i * d..(i + 1) * d], means, d, two_sigma2, row);
        let (max, total) = softmax_in_place(row);
        log_norm.push(max.to_f64() + total.to_f64().ln());
    }
    log_norm
}

/// M-step: posterior-weighted key means. Prototypes whose mass falls below
/// [`MIN_MASS`] are re-seeded at the key farthest from its nearest live mean.
///
/// Returns the means and the indices that were re-seeded.
pub fn m_step<S: Scalar>(keys: &[S], d: usize, post: &[S], n: usize) -> (Vec<S>, Vec<usize>) {
    let m = keys.len() / d;
    let mut mass: Vec<CompensatedSum<S>> = vec![CompensatedSum::new(); n];
    let mut acc = vec![S::zero(); n * d];
    for i in 0..m {
        let key = &keys[i * d..(i + 1) * d];
        for j in 0..n {
            let p = post[i * n + j];
            mass[j].add(p);
            let row = &mut acc[j * d..(j + 1) * d];
            for (a, &k) in row.iter_mut().zip(key) {
                *a = *a + p * k;
            }
        }
    }
    let mut means = vec![S::zero(); n * d];
    let mut empty = Vec::new();
    for j in 0..n {
        let mj = mass[j].value();
        if mj.to_f64() < MIN_MASS {
            empty.push(j);
            continue;
        }
        for c in 0..d {
            means[j * d + c] = acc[j * d + c] / mj;
        }
    }
    if !empty.is_empty() {
        reseed_empty(keys, d, &mut means, n, &empty);
    }
    (means, empty)
}

/// Farthest-key recovery for empty prototypes. Runs in plain `f64`: it is a
/// selection step, not part of the counted arithmetic.
fn reseed_empty<S: Scalar>(keys: &[S], d: usize, means: &mut [S], n: usize, empty: &[usize]) {
    let m = keys.len() / d;
    let keys64: Vec<f64> = keys.iter().map(|k| k.to_f64()).collect();
    let mut live: Vec<bool> = (0..n).map(|j| !empty.contains(&j)).collect();
    for &j in empty {
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..m {
            let key = &keys64[i * d..(i + 1) * d];
            let nearest = (0..n)
                .filter(|&l| live[l])
                .map(|l| {
                    let mu: Vec<f64> = means[l * d..(l + 1) * d].iter().map(|v| v.to_f64()).collect();
                    sq_dist(key, &mu)
                })
                .fold(f64::INFINITY, f64::min);
            if nearest > best.1 {
                best = (i, nearest);
            }
        }
        for c in 0..d {
            means[j * d + c] = keys[best.0 * d + c];
        }
        live[j] = true;
    }
}

/// Runs `iters` EM rounds from `means`. `on_iter` sees the initial means and
/// the means after every round.
pub fn em_loop<S: Scalar>(
    keys: &[S],
    d: usize,
    mut means: Vec<S>,
    n: usize,
    sigma2: f64,
    iters: usize,
    mut on_iter: impl FnMut(&[S]),
) -> Vec<S> {
    let m = keys.len() / d;
    let mut post = vec![S::zero(); m * n];
    on_iter(&means);
    for _ in 0..iters {
        posterior_rows(keys, d, &means, n, sigma2, &mut post);
        means = m_step(keys, d, &post, n).0;
        on_iter(&means);
    }
    means
}

/// `out_j = Σ_i p_ij v_i` (unnormalized value prototypes).
pub fn weighted_value_sums<S: Scalar>(post: &[S], n: usize, values: &[S], cv: usize) -> Vec<S> {
    let m = values.len() / cv;
    let mut acc = vec![S::zero(); n * cv];
    for i in 0..m {
        let v = &values[i * cv..(i + 1) * cv];
        for j in 0..n {
            let p = post[i * n + j];
            let row = &mut acc[j * cv..(j + 1) * cv];
            for (a, &x) in row.iter_mut().zip(v) {
                *a = *a + p * x;
            }
        }
    }
    acc
}

/// Prototype read: `y_i = Σ_j softmax_j(-‖q_i - μ_j‖²/2σ²) v_j`.
#[allow(clippy::too_many_arguments)]
pub fn attend<S: Scalar>(
    query: &[S],
    d: usize,
    means: &[S],
    n: usize,
    values: &[S],
    cv: usize,
    sigma2: f64,
) -> Vec<S> {
    let rows = query.len() / d;
    let two_sigma2 = S::from_f64(2.0 * sigma2);
    let mut out = Vec::with_capacity(rows * cv);
    let mut w = vec![S::zero(); n];
    let mut acc = vec![S::zero(); cv];
    for i in 0..rows {
        distance_logits(&query[i * d..(i + 1) * d], means, d, two_sigma2, &mut w);
        softmax_in_place(&mut w);
        acc.iter_mut().for_each(|a| *a = S::zero());
        for (j, &wj) in w.iter().enumerate() {
            for (a, &v) in acc.iter_mut().zip(&values[j * cv..(j + 1) * cv]) {
                *a = *a + wj * v;
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Temporal aggregation. Frame logits are dot products with the current value
/// pixel; the current frame itself takes the last weight slot.
///
/// Returns `(ȳ, weights)` with weights laid out `pixels × (frames + 1)`.
pub fn aggregate<S: Scalar>(recons: &[&[S]], current: &[S], cv: usize) -> (Vec<S>, Vec<S>) {
    let pixels = current.len() / cv;
    let slots = recons.len() + 1;
    let mut ybar = Vec::with_capacity(pixels * cv);
    let mut weights = Vec::with_capacity(pixels * slots);
    let mut w = vec![S::zero(); slots];
    let mut acc = vec![S::zero(); cv];
    for i in 0..pixels {
        let cur = &current[i * cv..(i + 1) * cv];
        for (t, r) in recons.iter().enumerate() {
            w[t] = dot(cur, &r[i * cv..(i + 1) * cv]);
        }
        w[slots - 1] = dot(cur, cur);
        softmax_in_place(&mut w);
        acc.iter_mut().for_each(|a| *a = S::zero());
        for (t, r) in recons.iter().enumerate() {
            for (a, &y) in acc.iter_mut().zip(&r[i * cv..(i + 1) * cv]) {
                *a = *a + w[t] * y;
            }
        }
        for (a, &y) in acc.iter_mut().zip(cur) {
            *a = *a + w[slots - 1] * y;
        }
        ybar.extend_from_slice(&acc);
        weights.extend_from_slice(&w);
    }
    (ybar, weights)
}

#[derive(Debug, Clone, Copy)]
pub enum Similarity {
    Dot,
    Gaussian { sigma2: f64 },
}

/// Dense attention of every query row over every memory row.
pub fn nonlocal<S: Scalar>(
    query: &[S],
    d: usize,
    mem_keys: &[S],
    mem_values: &[S],
    cv: usize,
    similarity: Similarity,
) -> Vec<S> {
    let rows = query.len() / d;
    let slots = mem_keys.len() / d;
    let mut out = Vec::with_capacity(rows * cv);
    let mut w = vec![S::zero(); slots];
    let mut acc: Vec<CompensatedSum<S>> = vec![CompensatedSum::new(); cv];
    for i in 0..rows {
        let q = &query[i * d..(i + 1) * d];
        match similarity {
            Similarity::Dot => {
                for (j, slot) in w.iter_mut().enumerate() {
                    *slot = dot(q, &mem_keys[j * d..(j + 1) * d]);
                }
            }
            Similarity::Gaussian { sigma2 } => {
                distance_logits(q, mem_keys, d, S::from_f64(2.0 * sigma2), &mut w);
            }
        }
        softmax_in_place(&mut w);
        acc.iter_mut().for_each(|a| *a = CompensatedSum::new());
        for (j, &wj) in w.iter().enumerate() {
            for (a, &v) in acc.iter_mut().zip(&mem_values[j * cv..(j + 1) * cv]) {
                a.add(wj * v);
            }
        }
        out.extend(acc.iter().map(|a| a.value()));
    }
    out
}
