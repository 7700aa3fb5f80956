//! Cost comparison suite: analytic counts for every mechanism, optionally
//! cross-checked by running the real kernels on [`Counted`] scalars.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{self, CostDims, CostReport, Mechanism};
use crate::error::{Error, Result};
use crate::kernels::{self, Similarity};
use crate::numeric::RngStream;
use crate::scalar::{count_ops, Counted, OpCounts};

pub const CSV_HEADER: &str =
    "mechanism,H,W,T,D,C_v,N,em_iters,heads,analytic_multiplies,analytic_adds,analytic_exps,measured_multiplies,peak_elements";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub mechanisms: Vec<Mechanism>,
    pub dims: Vec<CostDims>,
    pub instrumented: bool,
    pub seed: u64,
}

impl BenchConfig {
    /// Reference-shaped sweep over tube lengths 2, 4 and 8.
    pub fn reference() -> Self {
        BenchConfig {
            mechanisms: vec![Mechanism::Pca, Mechanism::Nonlocal, Mechanism::Mhsa],
            dims: [2, 4, 8].into_iter().map(CostDims::reference).collect(),
            instrumented: false,
            seed: 0,
        }
    }
}

fn random_counted(rng: &mut RngStream, len: usize) -> Vec<Counted> {
    rng.normal_vec(len).into_iter().map(Counted).collect()
}

fn usize_dims(dims: &CostDims) -> Result<[usize; 6]> {
    let conv = |v: u64| usize::try_from(v).map_err(|_| Error::DimensionOverflow("bench dims"));
    Ok([conv(dims.h * dims.w)?, conv(dims.t)?, conv(dims.d)?, conv(dims.c_v)?, conv(dims.n)?, conv(dims.em_iters)?])
}

/// Runs the prototype pipeline on random data: per memory frame an EM fit,
/// a final E-step, value pooling and a read with the query keys, then the
/// temporal aggregation.
pub fn measure_pca(dims: CostDims, seed: u64) -> Result<OpCounts> {
    cost::pca_cost(dims)?;
    let [p, t, d, cv, n, iters] = usize_dims(&dims)?;
    let sigma2 = crate::gmm::DEFAULT_SIGMA2;
    let mut rng = RngStream::new(seed);
    let query = random_counted(&mut rng, p * d);
    let current = random_counted(&mut rng, p * cv);
    let frames: Vec<(Vec<Counted>, Vec<Counted>)> =
        (0..t).map(|_| (random_counted(&mut rng, p * d), random_counted(&mut rng, p * cv))).collect();
    let (_, counts) = count_ops(|| {
        let mut recons = Vec::with_capacity(t);
        for (keys, values) in &frames {
            let init = keys[..n * d].to_vec();
            let means = kernels::em_loop(keys, d, init, n, sigma2, iters, |_| {});
            let mut post = vec![Counted(0.0); p * n];
            kernels::posterior_rows(keys, d, &means, n, sigma2, &mut post);
            let protos = kernels::weighted_value_sums(&post, n, values, cv);
            recons.push(kernels::attend(&query, d, &means, n, &protos, cv, sigma2));
        }
        let refs: Vec<&[Counted]> = recons.iter().map(|r| r.as_slice()).collect();
        kernels::aggregate(&refs, &current, cv)
    });
    Ok(counts)
}

/// Runs dense attention of one query frame over `T` memory frames.
pub fn measure_nonlocal(dims: CostDims, seed: u64) -> Result<OpCounts> {
    cost::nonlocal_cost(dims)?;
    let [p, t, d, cv, _, _] = usize_dims(&dims)?;
    let mut rng = RngStream::new(seed);
    let query = random_counted(&mut rng, p * d);
    let keys = random_counted(&mut rng, p * t * d);
    let values = random_counted(&mut rng, p * t * cv);
    let (_, counts) = count_ops(|| kernels::nonlocal(&query, d, &keys, &values, cv, Similarity::Gaussian { sigma2: 0.5 }));
    Ok(counts)
}

pub fn measure(mechanism: Mechanism, dims: CostDims, seed: u64) -> Result<OpCounts> {
    match mechanism {
        Mechanism::Pca => measure_pca(dims, seed),
        Mechanism::Nonlocal => measure_nonlocal(dims, seed),
        Mechanism::Mhsa => Err(Error::Unsupported("mhsa is modelled analytically only".into())),
    }
}

/// Counted multiplies of the read and aggregation stage for one pyramid
/// level of `h × w` pixels against `t` stored prototype sets.
pub fn measure_level(h: usize, w: usize, t: usize, d: usize, cv: usize, n: usize, seed: u64) -> u64 {
    let p = h * w;
    let mut rng = RngStream::new(seed);
    let query = random_counted(&mut rng, p * d);
    let current = random_counted(&mut rng, p * cv);
    let bank: Vec<(Vec<Counted>, Vec<Counted>)> =
        (0..t).map(|_| (random_counted(&mut rng, n * d), random_counted(&mut rng, n * cv))).collect();
    let (_, counts) = count_ops(|| {
        let recons: Vec<Vec<Counted>> = bank
            .iter()
            .map(|(means, values)| kernels::attend(&query, d, means, n, values, cv, 0.5))
            .collect();
        let refs: Vec<&[Counted]> = recons.iter().map(|r| r.as_slice()).collect();
        kernels::aggregate(&refs, &current, cv)
    });
    counts.multiplies
}

fn row(mechanism: Mechanism, dims: CostDims, instrumented: bool, seed: u64) -> Result<CostReport> {
    let mut report = cost::cost(mechanism, dims)?;
    if instrumented {
        let measured = measure(mechanism, dims, seed)?.multiplies;
        if measured != report.analytic_multiplies {
            return Err(Error::Malformed(format!(
                "{}: measured {measured} multiplies, formula gives {} for {dims:?}",
                mechanism.name(),
                report.analytic_multiplies
            )));
        }
        report.measured_multiplies = Some(measured);
    }
    Ok(report)
}

/// One report per `(mechanism, dims)`, mechanisms outermost, in config order.
pub fn run_suite(config: &BenchConfig) -> Result<Vec<CostReport>> {
    let jobs: Vec<(Mechanism, CostDims)> = config
        .mechanisms
        .iter()
        .flat_map(|&m| config.dims.iter().map(move |&d| (m, d)))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(m, d))| row(m, d, config.instrumented, config.seed.wrapping_add(i as u64)))
        .collect()
}

pub fn to_csv(rows: &[CostReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let d = &r.dims;
        let measured = r.measured_multiplies.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.mechanism.name(),
            d.h,
            d.w,
            d.t,
            d.d,
            d.c_v,
            d.n,
            d.em_iters,
            d.heads,
            r.analytic_multiplies,
            r.analytic_adds,
            r.analytic_exps,
            measured,
            r.peak_elements
        );
    }
    out
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLOURS: [(Mechanism, &str); 3] =
    [(Mechanism::Pca, "#1b9e77"), (Mechanism::Nonlocal, "#d95f02"), (Mechanism::Mhsa, "#7570b3")];

/// Line chart of analytic multiplies against `T` per mechanism, log-scaled
/// y axis. Identical rows give identical bytes.
pub fn to_svg(rows: &[CostReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let pts: Vec<(f64, f64)> =
        rows.iter().map(|r| (r.dims.t as f64, (r.analytic_multiplies.max(1) as f64).log10())).collect();
    if !pts.is_empty() {
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
        let sx = |x: f64| if x1 > x0 { MARGIN + (x - x0) / (x1 - x0) * (SVG_W - 2.0 * MARGIN) } else { SVG_W / 2.0 };
        let sy = |y: f64| SVG_H - MARGIN - (y - y0) / (y1 - y0) * (SVG_H - 2.0 * MARGIN);

        let _ = writeln!(
            out,
            r##"<path d="M{m:.1} {top:.1} V{b:.1} H{r:.1}" stroke="#333333" fill="none"/>"##,
            m = MARGIN,
            top = MARGIN,
            b = SVG_H - MARGIN,
            r = SVG_W - MARGIN
        );
        let mut e = y0;
        while e <= y1 {
            let _ = writeln!(
                out,
                r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">1e{}</text>"##,
                MARGIN - 6.0,
                sy(e) + 4.0,
                e as i64
            );
            e += 1.0;
        }
        let mut ts: Vec<u64> = rows.iter().map(|r| r.dims.t).collect();
        ts.sort_unstable();
        ts.dedup();
        for t in ts {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{t}</text>"#,
                sx(t as f64),
                SVG_H - MARGIN + 16.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">T (frames)</text>"#,
            SVG_W / 2.0,
            SVG_H - 16.0
        );
        for (li, (mech, colour)) in COLOURS.iter().enumerate() {
            let mut series: Vec<(f64, f64)> =
                rows.iter().zip(&pts).filter(|(r, _)| r.mechanism == *mech).map(|(_, &p)| p).collect();
            if series.is_empty() {
                continue;
            }
            series.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let path: Vec<String> = series.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" stroke="{colour}" stroke-width="2" fill="none"/>"#,
                path.join(" ")
            );
            let ly = MARGIN + 16.0 * li as f64;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{colour}">{}</text>"#,
                SVG_W - MARGIN + 6.0,
                mech.name()
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
